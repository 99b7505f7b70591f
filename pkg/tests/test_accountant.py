import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskdp import accountant
from maskdp.accountant import (
    CalibrationFloorWarning,
    CalibrationInfeasible,
    PrivacyBudget,
    SubsampledGaussianParams,
    calibrate_noise,
    compose_rdp,
    per_step_rdp,
    rdp_curve,
    rdp_to_dp,
    total_epsilon,
)
from oracles import full_batch_scan, per_step_rdp_mp, rdp_to_dp_mp

# per_step_rdp(16, 0.01, 1.0) from the 60-digit direct-summation oracle
ORACLE_16_001_1 = 3.0878507836962448


def test_frozen_oracle_value_matches_oracle():
    assert float(per_step_rdp_mp(16, 0.01, 1.0)) == pytest.approx(ORACLE_16_001_1, rel=1e-15)


def test_large_noise_gives_zero():
    assert abs(per_step_rdp(8, 0.05, 1e6)) < 1e-12


@pytest.mark.parametrize("alpha", [2, 3, 7, 64, 256])
@pytest.mark.parametrize("z", [0.5, 1.0, 2.0, 8.0])
def test_full_batch_is_plain_gaussian(alpha, z):
    assert per_step_rdp(alpha, 1.0, z) == pytest.approx(alpha / (2 * z * z), rel=1e-12)


def test_no_sampling_gives_exact_zero():
    assert per_step_rdp(2, 0.0, 1.0) == 0.0


def test_against_high_precision_oracle():
    assert per_step_rdp(16, 0.01, 1.0) == pytest.approx(ORACLE_16_001_1, rel=1e-6)


def test_printed_l2_term_matches_general_pattern():
    # exp(1/z^2) is the l=2 instance of exp((l-1) l / (2 z^2)); check the
    # special-cased column against the general formula
    alphas = np.arange(2, 40)
    terms = accountant._log_terms(alphas, 0.1, 1.3)
    log_binom = np.log([math.comb(int(a), 2) for a in alphas])
    general = log_binom + 2 * math.log(0.1) + (alphas - 2) * math.log(0.9) + 1 * 2 / (2 * 1.3**2)
    np.testing.assert_allclose(terms[:, 2], general, rtol=1e-13)


def test_no_overflow_at_extreme_orders():
    vals = rdp_curve(0.5, 0.05, range(2, 257))
    assert np.all(np.isfinite(vals))
    assert vals[-1] > 1e4


@pytest.mark.parametrize("alpha,q,z", [(1, 0.1, 1.0), (0, 0.1, 1.0), (2, -0.1, 1.0), (2, 1.1, 1.0), (2, 0.1, 0.0), (2, 0.1, -1.0)])
def test_per_step_rdp_domain_errors(alpha, q, z):
    with pytest.raises(ValueError):
        per_step_rdp(alpha, q, z)


def test_non_integer_order_rejected():
    with pytest.raises(ValueError):
        per_step_rdp(2.5, 0.1, 1.0)


def test_compose():
    assert compose_rdp(0.01, 100) == pytest.approx(1.0)
    assert compose_rdp(0.0, 12345) == 0.0
    assert compose_rdp(per_step_rdp(16, 0.01, 1.0), 1000) == pytest.approx(1000 * ORACLE_16_001_1, rel=1e-6)
    with pytest.raises(ValueError):
        compose_rdp(0.1, 0)
    with pytest.raises(ValueError):
        compose_rdp(-0.1, 3)


def test_rdp_to_dp_examples():
    assert rdp_to_dp(2, 0.0, 0.5) == pytest.approx(-math.log(2), abs=1e-15)
    a, e = 7, 0.3
    assert rdp_to_dp(a, e, 1 / math.e) == pytest.approx(e + math.log((a - 1) / a) + (1 - math.log(a)) / (a - 1))
    assert rdp_to_dp(32, 0.8, 1e-5) == pytest.approx(float(rdp_to_dp_mp(32, 0.8, 1e-5)), rel=1e-13)


@pytest.mark.parametrize("delta", [0.0, 1.0, -0.1, 2.0])
def test_rdp_to_dp_rejects_bad_delta(delta):
    with pytest.raises(ValueError):
        rdp_to_dp(2, 0.1, delta)


def test_total_epsilon_full_batch_scan():
    report = total_epsilon(SubsampledGaussianParams(1.0, 2.0, 1), 1e-5)
    eps, best = full_batch_scan(2.0, 1, 1e-5)
    assert report.epsilon == pytest.approx(eps, rel=1e-12)
    assert report.best_alpha == best


def test_total_epsilon_report_consistent():
    params = SubsampledGaussianParams(0.01, 1.1, 5000)
    report = total_epsilon(params, 1e-5)
    assert report.best_alpha in accountant.DEFAULT_ALPHAS
    assert report.composed_rdp == pytest.approx(params.steps * report.per_step_rdp, rel=1e-15)
    assert report.epsilon == pytest.approx(rdp_to_dp(report.best_alpha, report.composed_rdp, 1e-5), rel=1e-15)
    assert report.per_step_rdp == pytest.approx(per_step_rdp(report.best_alpha, 0.01, 1.1), rel=1e-15)


@pytest.mark.parametrize("delta", [1e-5, 0.1])
def test_total_epsilon_without_noise_effect_is_pure_penalty(delta):
    report = total_epsilon(SubsampledGaussianParams(0.05, 1e9, 1), delta)
    a = np.arange(2, 257)
    penalty = np.log((a - 1) / a) - (math.log(delta) + np.log(a)) / (a - 1)
    assert report.epsilon == pytest.approx(penalty.min(), abs=1e-12)


def test_pure_penalty_goes_negative_for_loose_delta():
    assert total_epsilon(SubsampledGaussianParams(0.05, 1e9, 1), 0.1).epsilon < 0


def test_ties_resolve_to_smallest_order():
    # q = 0: every order has zero RDP; penalty still differs by order so use a
    # single repeated order to force an exact tie
    report = total_epsilon(SubsampledGaussianParams(0.0, 1.0, 1), 0.5, [5, 5, 3, 3])
    assert report.best_alpha == 3


def test_steps_zero_rejected():
    with pytest.raises(ValueError):
        SubsampledGaussianParams(0.1, 1.0, 0)


def test_budget_validation():
    with pytest.raises(ValueError):
        PrivacyBudget(0.0, 1e-5)
    with pytest.raises(ValueError):
        PrivacyBudget(1.0, 1.0)


def test_calibration_round_trip_spec_example():
    q, steps, delta = 128 / 50000, 150 * 50000 // 128, 1e-6
    z = calibrate_noise(PrivacyBudget(1.0, delta), q, steps)
    eps = total_epsilon(SubsampledGaussianParams(q, z, steps), delta).epsilon
    assert 0.999 <= eps <= 1.0


def test_calibration_recovers_known_noise():
    target = total_epsilon(SubsampledGaussianParams(1.0, 1.0, 1), 1e-5).epsilon
    z = calibrate_noise(PrivacyBudget(target, 1e-5), 1.0, 1)
    assert z == pytest.approx(1.0, rel=1e-3)


def test_calibration_monotone_in_target():
    q, steps = 128 / 40000, 150 * 40000 // 128
    zs = [calibrate_noise(PrivacyBudget(e, 1e-6), q, steps) for e in (0.1, 0.25, 0.5, 0.75, 1, 5)]
    assert all(a > b for a, b in zip(zs, zs[1:]))


def test_calibration_infeasible():
    with pytest.raises(CalibrationInfeasible):
        calibrate_noise(PrivacyBudget(1e-9, 1e-6), 1.0, 100000)


def test_calibration_floor_flagged():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        z = calibrate_noise(PrivacyBudget(1e6, 1e-5), 1e-4, 1)
    assert z == accountant.Z_FLOOR
    assert any(issubclass(w.category, CalibrationFloorWarning) for w in caught)


@settings(max_examples=60, deadline=None)
@given(
    alpha=st.integers(2, 256),
    q=st.floats(0.0, 1.0),
    z=st.floats(0.05, 1e3),
)
def test_non_negative_and_finite(alpha, q, z):
    v = per_step_rdp(alpha, q, z)
    assert np.isfinite(v) and v >= 0


@settings(max_examples=40, deadline=None)
@given(
    q=st.floats(1e-4, 1.0),
    z1=st.floats(0.3, 50.0),
    z2=st.floats(0.3, 50.0),
)
def test_curve_non_increasing_in_noise(q, z1, z2):
    lo, hi = sorted((z1, z2))
    assert np.all(rdp_curve(q, hi, range(2, 65)) <= rdp_curve(q, lo, range(2, 65)) * (1 + 1e-12))
