"""RDP accounting for the Poisson-subsampled Gaussian mechanism used by MaskDP-SGD.

The per-step bound is a binomial expansion over the Renyi order ``alpha``. Every
term is accumulated in log space, so orders up to 256 and noise multipliers
well below 1 never overflow.

Masked adjacency only changes *which* adjacent datasets the guarantee ranges
over. The arithmetic is the same as for ordinary DP-SGD with per-sample
sensitivity ``C`` (the add/remove-style Gaussian RDP ``alpha * C**2 / (2 sigma**2)``),
even though masked adjacency replaces tokens rather than adding or removing a
record. Replacement-style analyses usually charge sensitivity ``2C``; this module
does not, and results should be read with that in mind.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln

DEFAULT_ALPHAS: tuple[int, ...] = tuple(range(2, 257))

CALIBRATION_RTOL = 1e-3
CALIBRATION_MAX_ITER = 200
Z_FLOOR = 1e-3
Z_START_CEILING = 1e6
Z_MAX_CEILING = 1e12


class CalibrationInfeasible(ValueError):
    """No noise multiplier inside the search bracket reaches the target budget."""


class CalibrationFloorWarning(UserWarning):
    """The target budget is met even at the smallest noise multiplier searched."""


@dataclass(frozen=True)
class SubsampledGaussianParams:
    sampling_rate: float
    noise_multiplier: float
    steps: int
    clip_threshold: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.sampling_rate <= 1.0:
            raise ValueError(f"sampling_rate must lie in [0, 1], got {self.sampling_rate}")
        if not self.noise_multiplier > 0:
            raise ValueError(f"noise_multiplier must be > 0, got {self.noise_multiplier}")
        if not self.clip_threshold > 0:
            raise ValueError(f"clip_threshold must be > 0, got {self.clip_threshold}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be an integer >= 1, got {self.steps}")


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        _check_delta(self.delta)


@dataclass(frozen=True)
class AccountingReport:
    """Result of minimizing the converted (epsilon, delta) bound over Renyi orders."""

    epsilon: float
    best_alpha: int
    per_step_rdp: float
    composed_rdp: float
    delta: float
    steps: int

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "best_alpha": self.best_alpha,
            "per_step_rdp": self.per_step_rdp,
            "composed_rdp": self.composed_rdp,
            "delta": self.delta,
            "steps": self.steps,
        }


def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def _check_alphas(alphas) -> np.ndarray:
    arr = np.asarray(alphas)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("alpha grid must be a non-empty 1-d sequence")
    if not np.all(np.equal(np.mod(arr, 1), 0)):
        raise ValueError("Renyi orders must be integers")
    arr = arr.astype(np.int64)
    if np.any(arr < 2):
        raise ValueError(f"Renyi orders must be >= 2, got min {arr.min()}")
    return arr


def _check_q_z(q, z):
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"sampling rate q must lie in [0, 1], got {q}")
    if not z > 0:
        raise ValueError(f"noise multiplier z must be > 0, got {z}")


def _log_terms(alphas: np.ndarray, q: float, z: float) -> np.ndarray:
    """Log of every summand of the bracketed binomial sum, one row per order.

    Column 0 holds the merged l=0,1 term ``(1-q)^(a-1) (a q - q + 1)``; column
    ``l >= 2`` holds ``C(a, l) q^l (1-q)^(a-l) exp((l-1) l / (2 z^2))``. Entries
    with ``l > a`` are -inf.
    """
    a_max = int(alphas.max())
    a = alphas[:, None].astype(float)
    l = np.arange(a_max + 1, dtype=float)[None, :]
    present = l <= a

    log_1mq = math.log1p(-q) if q < 1.0 else -math.inf
    log_q = math.log(q) if q > 0.0 else -math.inf
    inv_2z2 = 0.5 / (z * z)

    with np.errstate(invalid="ignore", divide="ignore"):
        # x * log(0) with x == 0 is a factor of 1, not NaN
        pow_1mq = np.where(a - l == 0, 0.0, (a - l) * log_1mq)
        log_binom = gammaln(a + 1) - gammaln(l + 1) - gammaln(np.maximum(a - l, 0) + 1)
        terms = log_binom + l * log_q + pow_1mq + (l - 1) * l * inv_2z2

        # the printed l=2 factor is exp(C^2 / sigma^2) = exp(1 / z^2)
        terms[:, 2] = log_binom[:, 2] + 2 * log_q + pow_1mq[:, 2] + 1.0 / (z * z)

        first = (a[:, 0] - 1) * log_1mq + np.log1p((a[:, 0] - 1) * q)
        if q == 1.0:
            first = np.full_like(first, -math.inf)
        terms[:, 0] = first
    terms[:, 1] = -math.inf
    terms[~present] = -math.inf
    return terms


def _logsumexp_rows(terms: np.ndarray) -> np.ndarray:
    peak = terms.max(axis=1)
    safe = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(under="ignore"):
        total = np.exp(terms - safe[:, None]).sum(axis=1)
    return safe + np.log(total)


def rdp_curve(q: float, z: float, alphas: Iterable[int] = DEFAULT_ALPHAS) -> np.ndarray:
    """Per-step RDP of the subsampled Gaussian at each order in ``alphas``."""
    _check_q_z(q, z)
    arr = _check_alphas(list(alphas))
    if q == 0.0:
        return np.zeros(arr.shape)
    log_sum = _logsumexp_rows(_log_terms(arr, q, z))
    # the bracketed sum is >= 1; tiny negatives are rounding
    return np.maximum(log_sum, 0.0) / (arr - 1)


def per_step_rdp(alpha: int, q: float, z: float) -> float:
    """Order-``alpha`` RDP of one MaskDP-SGD step at sampling rate ``q``, noise multiplier ``z``."""
    return float(rdp_curve(q, z, [alpha])[0])


def compose_rdp(per_step: float, steps: int) -> float:
    """Linear composition of ``steps`` identical RDP mechanisms at a fixed order."""
    if per_step < 0:
        raise ValueError(f"per-step RDP must be >= 0, got {per_step}")
    if int(steps) != steps or steps < 1:
        raise ValueError(f"steps must be an integer >= 1, got {steps}")
    return steps * per_step


def rdp_to_dp(alpha, rdp_eps, delta):
    """Convert order-``alpha`` RDP to an (epsilon, delta)-DP epsilon.

    Uses ``eps + log((a-1)/a) - (log(delta) + log(a)) / (a-1)``. The result is
    not clamped and can be negative when ``rdp_eps`` is tiny. Accepts scalars or
    equal-length arrays for ``alpha`` and ``rdp_eps``.
    """
    _check_delta(delta)
    a = np.asarray(alpha, dtype=float)
    if np.any(a < 2):
        raise ValueError("Renyi orders must be >= 2")
    eps = np.asarray(rdp_eps, dtype=float)
    out = eps + np.log((a - 1) / a) - (math.log(delta) + np.log(a)) / (a - 1)
    return float(out) if out.ndim == 0 else out


def total_epsilon(
    params: SubsampledGaussianParams,
    delta: float,
    alphas: Sequence[int] = DEFAULT_ALPHAS,
) -> AccountingReport:
    """Best (epsilon, delta) guarantee of a full training run over the order grid.

    Ties between orders resolve to the smallest order.
    """
    _check_delta(delta)
    arr = _check_alphas(list(alphas))
    per_step = rdp_curve(params.sampling_rate, params.noise_multiplier, arr)
    composed = params.steps * per_step
    eps = rdp_to_dp(arr, composed, delta)
    if not np.any(np.isfinite(eps)):
        raise ArithmeticError("every Renyi order produced a non-finite epsilon")
    eps = np.where(np.isnan(eps), np.inf, eps)
    i = int(np.argmin(eps))
    return AccountingReport(
        epsilon=float(eps[i]),
        best_alpha=int(arr[i]),
        per_step_rdp=float(per_step[i]),
        composed_rdp=float(composed[i]),
        delta=delta,
        steps=int(params.steps),
    )


def epsilon_for(q: float, z: float, steps: int, delta: float, alphas=DEFAULT_ALPHAS) -> float:
    return total_epsilon(SubsampledGaussianParams(q, z, steps), delta, alphas).epsilon


def calibrate_noise(
    target: PrivacyBudget,
    q: float,
    steps: int,
    alphas: Sequence[int] = DEFAULT_ALPHAS,
    rtol: float = CALIBRATION_RTOL,
    max_iter: int = CALIBRATION_MAX_ITER,
) -> float:
    """Smallest-found noise multiplier whose epsilon lies in ``[(1 - rtol) eps*, eps*]``.

    Bisects on the arithmetic midpoint of a bracket that starts at
    ``[1e-3, 1e6]``; the upper end grows tenfold (up to ``1e12``) while it still
    overshoots the budget. If even ``z = 1e-3`` meets the budget, that floor is
    returned and a :class:`CalibrationFloorWarning` is emitted.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError(f"sampling rate q must lie in (0, 1], got {q}")
    if int(steps) != steps or steps < 1:
        raise ValueError(f"steps must be an integer >= 1, got {steps}")
    alphas = tuple(_check_alphas(list(alphas)))
    goal = target.epsilon
    floor = (1.0 - rtol) * goal

    def eps(z):
        return epsilon_for(q, z, steps, target.delta, alphas)

    lo, hi = Z_FLOOR, Z_START_CEILING
    eps_lo = eps(lo)
    if eps_lo <= goal:
        warnings.warn(
            f"epsilon={eps_lo:.6g} at the noise floor z={lo:g} already meets the target "
            f"{goal:g}; returning the floor",
            CalibrationFloorWarning,
            stacklevel=2,
        )
        return lo

    eps_hi = eps(hi)
    while eps_hi > goal:
        if hi >= Z_MAX_CEILING:
            raise CalibrationInfeasible(
                f"epsilon={eps_hi:.6g} at z={hi:g} still exceeds the target {goal:g} "
                f"(q={q}, steps={steps}, delta={target.delta})"
            )
        hi *= 10.0
        eps_hi = eps(hi)

    for _ in range(max_iter):
        if eps_hi >= floor:
            return hi
        mid = 0.5 * (lo + hi)
        eps_mid = eps(mid)
        if eps_mid > goal:
            lo = mid
        else:
            hi, eps_hi = mid, eps_mid
    raise CalibrationInfeasible(
        f"bisection did not reach rtol={rtol} within {max_iter} iterations (z={hi:g}, "
        f"epsilon={eps_hi:.6g}, target={goal:g})"
    )
