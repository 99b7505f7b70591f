"""Randomized primitives of MaskDP-SGD: clipping, Gaussian noise, Poisson batches.

Randomness comes from NumPy's PCG64 bit generator. A run seed is expanded with
``numpy.random.SeedSequence`` into independent child streams (sampling, noise,
init), so a change in batch composition never shifts the noise draws. Gaussian
variates use NumPy's ziggurat ``standard_normal``; uniforms for Poisson
sampling use ``Generator.random`` (53-bit doubles in ``[0, 1)``).

This is a research artifact. PCG64 is not a cryptographically secure source and
floating-point Gaussian sampling is known to leak through its low-order bits;
do not deploy this as a production DP mechanism.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STREAM_NAMES = ("sampling", "noise", "init")


@dataclass
class RandomStreams:
    """Independent per-purpose generators derived from one 64-bit seed."""

    seed: int
    sampling: np.random.Generator = field(init=False, repr=False)
    noise: np.random.Generator = field(init=False, repr=False)
    init: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        children = np.random.SeedSequence(int(self.seed)).spawn(len(STREAM_NAMES))
        for name, child in zip(STREAM_NAMES, children):
            setattr(self, name, np.random.Generator(np.random.PCG64(child)))


def clip_to_norm(g: np.ndarray, clip: float) -> np.ndarray:
    """Scale ``g`` by ``min(1, clip / ||g||_2)``.

    Vectors already inside the ball are returned untouched (no multiplication
    by 1.0), which also covers the zero vector and ``clip = inf``.
    """
    if not clip > 0:
        raise ValueError(f"clip threshold must be > 0, got {clip}")
    norm = float(np.linalg.norm(g))
    if norm <= clip:
        return g
    return g * (clip / norm)


def clip_rows(grads: np.ndarray, clip: float) -> np.ndarray:
    """Row-wise :func:`clip_to_norm` for a stack of per-sample gradients.

    Each row goes through :func:`clip_to_norm` itself so the two agree bit for bit.
    """
    if not clip > 0:
        raise ValueError(f"clip threshold must be > 0, got {clip}")
    if len(grads) == 0:
        return grads
    return np.stack([clip_to_norm(g, clip) for g in grads])


def gaussian_noise(dim: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """``dim`` i.i.d. N(0, sigma^2) draws; exactly zero when ``sigma == 0``.

    A zero sigma consumes no randomness from ``rng``.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.zeros(dim)
    return sigma * rng.standard_normal(dim)


def poisson_sample(n: int, q: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted indices of ``range(n)``, each kept independently with probability ``q``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    return np.flatnonzero(rng.random(n) < q)
