"""Loss-scaling math: profile averaging, the log-frequency weight vector,
the alignment diagnostic, and the masked weighted MAE."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbsfm.errors import ValidationError
from dbsfm.scaling import (
    AperiodicModel,
    MeanLogProfile,
    ScalingVector,
    alignment_residual,
    mean_log_profile,
    scaled_masked_mae,
    scaling_vector,
    synth_log_psd,
)

BINS = np.arange(1.0, 125.0)
# independent oracle: population std of log10 over the 1..124 Hz bins
STD_LOG10_BINS = float(np.std(np.log10(BINS)))


def test_mean_log_profile_single_row():
    row = np.array([[1.0, -2.0, 3.5]])
    np.testing.assert_array_equal(mean_log_profile(row).p, row[0])


def test_mean_log_profile_two_rows():
    np.testing.assert_array_equal(
        mean_log_profile(np.array([[0.0, 0.0], [2.0, 4.0]])).p, [1.0, 2.0]
    )


def test_mean_log_profile_monte_carlo():
    rng = np.random.default_rng(21)
    c = 2.5
    clean = c - np.log10(BINS)
    rows = clean + rng.normal(0.0, 0.01, size=(1000, BINS.size))
    p = mean_log_profile(rows).p
    assert np.abs(p - clean).max() < 0.01


def test_mean_log_profile_rejects_empty_and_nonfinite():
    with pytest.raises(ValidationError):
        mean_log_profile(np.empty((0, 4)))
    with pytest.raises(ValidationError):
        mean_log_profile(np.array([[np.inf, 0.0]]))


def test_scaling_vector_pure_log_term():
    p = MeanLogProfile(p=np.zeros(3))
    k = scaling_vector(p, np.array([1.0, 10.0, 100.0]))
    np.testing.assert_allclose(k.k, [0.0, 1.0, 2.0], atol=1e-15)
    assert k.hour_weight == 0.0


def test_scaling_vector_exact_one_over_f():
    # p = 3 - log10(f) on f = [1, 10, 100]: mean(p) = 2, so k = log10(f) + 2
    p = MeanLogProfile(p=np.array([3.0, 2.0, 1.0]))
    k = scaling_vector(p, np.array([1.0, 10.0, 100.0]))
    np.testing.assert_allclose(k.k, [2.0, 3.0, 4.0], atol=1e-15)


def test_scaling_vector_strictly_increasing():
    p = MeanLogProfile(p=np.full(BINS.size, -np.mean(np.log10(BINS))))
    k = scaling_vector(p, BINS)
    assert np.all(np.diff(k.k) > 0)
    np.testing.assert_allclose(k.k, np.log10(BINS) - np.mean(np.log10(BINS)), atol=1e-12)


def test_scaling_vector_rejects_sub_unity_bins():
    with pytest.raises(ValidationError):
        scaling_vector(MeanLogProfile(p=np.zeros(2)), np.array([0.5, 2.0]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3.0, 3.0), min_size=2, max_size=32))
def test_scaling_vector_monotone_property(p_values):
    freqs = np.linspace(1.0, 124.0, len(p_values))
    k = scaling_vector(MeanLogProfile(p=np.array(p_values)), freqs)
    assert np.all(np.diff(k.k) > 0)


def test_alignment_residual_exact_cancellation():
    p = MeanLogProfile(p=5.0 - np.log10(BINS))
    assert alignment_residual(p, BINS) < 1e-12


def test_alignment_residual_beta_two():
    p = MeanLogProfile(p=5.0 - 2.0 * np.log10(BINS))
    assert alignment_residual(p, BINS) == pytest.approx(STD_LOG10_BINS, rel=1e-12)


def test_alignment_residual_constant_profile():
    p = MeanLogProfile(p=np.full(BINS.size, 1.7))
    assert alignment_residual(p, BINS) == pytest.approx(STD_LOG10_BINS, rel=1e-12)


def _sv(k, hour_weight=0.0):
    k = np.asarray(k, dtype=np.float64)
    return ScalingVector(freqs=np.arange(1.0, 1.0 + k.size), k=k, hour_weight=hour_weight)


def test_scaled_masked_mae_zero_residual():
    t = np.random.default_rng(0).normal(size=(4, 5))
    assert scaled_masked_mae(t, t.copy(), _sv(np.ones(4)), {0, 2}) == 0.0


def test_scaled_masked_mae_hand_example():
    # one masked token of 125 features, residuals 1 and 2 at weights 1 and 2
    t = np.zeros((3, 125))
    p = np.zeros((3, 125))
    p[1, 0] = -1.0
    p[1, 1] = -2.0
    p[2, :] = 99.0  # unmasked, must not contribute
    k = np.zeros(124)
    k[0] = 1.0
    k[1] = 2.0
    loss = scaled_masked_mae(t, p, _sv(k), {1})
    assert loss == pytest.approx((1.0 * 1.0 + 2.0 * 2.0) / 125.0)
    assert loss == pytest.approx(0.04)


def test_scaled_masked_mae_unit_weights_is_plain_mae():
    rng = np.random.default_rng(8)
    t = rng.normal(size=(15, 125))
    p = rng.normal(size=(15, 125))
    mask = {1, 4, 7}
    loss = scaled_masked_mae(t, p, _sv(np.ones(124), hour_weight=1.0), mask)
    idx = sorted(mask)
    plain = np.abs(t[idx] - p[idx]).mean()
    assert loss == pytest.approx(plain, abs=1e-12)


def test_scaled_masked_mae_unit_error_at_single_bin():
    k = np.linspace(0.5, 3.0, 124)
    t = np.zeros((15, 125))
    for bin_idx in (0, 50, 123):
        p = np.zeros((15, 125))
        p[3, bin_idx] = 1.0
        loss = scaled_masked_mae(t, p, _sv(k), {3, 8})
        assert loss == pytest.approx(k[bin_idx] / (2 * 125), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-8.0, 8.0))
def test_scaled_masked_mae_absolutely_homogeneous(c):
    rng = np.random.default_rng(4)
    t = rng.normal(size=(6, 5))
    p = rng.normal(size=(6, 5))
    sv = _sv(rng.uniform(0.1, 2.0, size=4), hour_weight=0.5)
    base = scaled_masked_mae(t, p, sv, {0, 3})
    scaled = scaled_masked_mae(t, t - c * (t - p), sv, {0, 3})
    assert scaled == pytest.approx(abs(c) * base, rel=1e-9, abs=1e-15)


def test_scaled_masked_mae_validation():
    t = np.zeros((4, 5))
    with pytest.raises(ValidationError):
        scaled_masked_mae(t, t, _sv(np.ones(4)), set())
    with pytest.raises(ValidationError):
        scaled_masked_mae(t, np.zeros((4, 6)), _sv(np.ones(4)), {0})
    with pytest.raises(ValidationError):
        scaled_masked_mae(t, t, _sv(np.ones(4)), {9})
    with pytest.raises(ValidationError):
        scaled_masked_mae(t, t, _sv(np.ones(3)), {0})


def test_synth_log_psd_flat():
    m = AperiodicModel(beta=0.0, offset=1.5)
    np.testing.assert_allclose(synth_log_psd(m, BINS), 1.5)


def test_synth_log_psd_power_law():
    m = AperiodicModel(beta=1.0, offset=0.0)
    np.testing.assert_allclose(
        synth_log_psd(m, np.array([1.0, 10.0, 100.0])), [0.0, -1.0, -2.0], atol=1e-15
    )


def test_synth_log_psd_peak_value():
    m = AperiodicModel(beta=1.0, offset=0.0, peaks=((20.0, 0.5, 2.0),))
    at_20 = synth_log_psd(m, np.array([20.0]))[0]
    assert at_20 == pytest.approx(-np.log10(20.0) + 0.5)
    assert at_20 == pytest.approx(-0.80103, abs=1e-5)


def test_aperiodic_model_validation():
    with pytest.raises(ValidationError):
        AperiodicModel(beta=-0.1, offset=0.0)
    with pytest.raises(ValidationError):
        AperiodicModel(beta=1.0, offset=0.0, peaks=((10.0, 1.0, 0.0),))


def test_beta_one_profile_has_zero_residual():
    profile = MeanLogProfile(p=synth_log_psd(AperiodicModel(beta=1.0, offset=2.0), BINS))
    assert alignment_residual(profile, BINS) < 1e-9
