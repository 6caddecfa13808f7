"""Classic and dynamic time-difference quantizers and the amplitude quantizer."""

import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from aiftem.decoder import plan_segments, reconstruct, reconstruct_from_quantized
from aiftem.encoder import (
    AIFTEM,
    IFTEM,
    BiasGrid,
    EncoderConfig,
    EncodingTruncatedWarning,
    SpikeTrain,
    encode,
    true_window_amplitudes,
)
from aiftem.harness.experiments import calibrate_beta
from aiftem.quantizer import (
    DequantizeError,
    QuantizedTrain,
    QuantizerSpec,
    QuantMode,
    classic_spec,
    dequantize,
    dynamic_spec,
    if_step,
    fixed_step,
    periodic_quantize,
    quantize,
)
from aiftem.signal_model import synthesize_random

OMEGA = 2 * np.pi * 20


def _enc(sig, cfg):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EncodingTruncatedWarning)
        return encode(sig, cfg)


@pytest.fixture(scope="module")
def quant_run():
    """Adaptive train at kappa 0.24, delta 0.01, r 0.39, w 8 with a calibrated margin."""
    sig = synthesize_random(OMEGA, 2, seed=21)
    beta, train = calibrate_beta(sig, 0.24, 0.01, OMEGA, 0.39, window=8)
    return sig, beta, train


def _synthetic(biases_idx, grid, kd, c_max, T, estimates, beta):
    times = np.concatenate(([0.0], np.cumsum(T)))
    return SpikeTrain(times, np.asarray(biases_idx, dtype=np.int64), grid, kd, 1.0, "AIFTEM", c_max,
                      amplitude_estimates=np.asarray(estimates, dtype=float), beta=beta)


# step formulas ------------------------------------------------------------

def test_fixed_step_example():
    assert fixed_step(0.01, 0.1, 1.1, 1.0, 4096) == pytest.approx(
        0.01 * (2.1 - 0.1) / (0.1 * 2.1 * 4096), rel=1e-15)
    assert fixed_step(0.01, 0.1, 1.1, 1.0, 4096) == pytest.approx(2.3251e-5, rel=1e-4)
    with pytest.raises(ValueError):
        fixed_step(0.01, 0.0, 1.1, 1.0, 4096)


def test_if_step_example():
    assert if_step(0.01, 2.0, 1.0, 4096) == pytest.approx(0.01 / 3 * 2 / 4096, rel=1e-15)
    assert if_step(0.01, 2.0, 1.0, 4096) == pytest.approx(1.6276e-6, rel=1e-4)


def test_step_grows_with_cmax_under_fixed_beta():
    beta, kd, K = 0.1, 0.01, 4096
    c = np.linspace(0.5, 1.0, 51)
    steps = [fixed_step(kd, beta, beta + ci, ci, K) for ci in c]
    assert all(a < b for a, b in zip(steps, steps[1:]))


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0.05, 5.0), st.floats(0.05, 5.0), st.floats(1e-4, 0.1))
def test_step_monotonicity_sweeps(beta, c1, c2, kd):
    assume(abs(c1 - c2) > 1e-6)
    lo, hi = sorted((c1, c2))
    K = 4096
    # (a) b_max = beta + c_max: step increases with c_max.
    assert fixed_step(kd, beta, beta + lo, lo, K) < fixed_step(kd, beta, beta + hi, hi, K)
    # (b) b_max = gamma c_max: the IF step is proportional to 1 / c_max.
    gamma = 1.0 + beta
    s_lo, s_hi = if_step(kd, gamma * lo, lo, K), if_step(kd, gamma * hi, hi, K)
    assert s_lo > s_hi
    assert s_lo * lo == pytest.approx(s_hi * hi, rel=1e-12)


# specs --------------------------------------------------------------------

def test_classic_spec_adaptive_and_fixed(quant_run):
    sig, beta, train = quant_run
    kd = train.kappa * train.delta
    spec = classic_spec(train, 4096, beta)
    g = train.bias_grid
    assert spec.ranges[0] == (kd / (g.b_max + sig.c_max), kd / beta)
    assert spec.step == pytest.approx(fixed_step(kd, beta, g.b_max, sig.c_max, 4096), rel=1e-12)
    assert spec.steps[0] * spec.levels == spec.ranges[0][1] - spec.ranges[0][0]
    b = sig.c_max + 0.3
    if_train = _enc(sig, EncoderConfig(0.24, 0.01, IFTEM(b)))
    spec = classic_spec(if_train, 4096)
    assert spec.step == pytest.approx(if_step(kd, b, sig.c_max, 4096), rel=1e-12)
    with pytest.raises(ValueError):
        classic_spec(train, 4096, beta=-1.0)


def test_dynamic_equals_classic_for_identical_segments():
    beta, c_max, kd = 0.1, 1.0, 0.01
    grid = BiasGrid.default(c_max, beta)
    n = 30
    top = grid.levels - 1
    idx = np.full(n, top // 2)
    idx[[0, 10, 20]] = top
    est = np.full(n, 0.3)
    est[[5, 15, 25]] = c_max
    train = _synthetic(idx, grid, kd, c_max, np.full(n, 0.01), est, beta)
    plan = plan_segments(train, OMEGA, "fixed-count", 10)
    dyn = dynamic_spec(train, plan, 4096)
    cls = classic_spec(train, 4096)
    np.testing.assert_allclose(dyn.steps, cls.step, rtol=1e-12)
    assert all(r == pytest.approx(cls.ranges[0], rel=1e-12) for r in dyn.ranges)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_dynamic_step_never_exceeds_classic(seed, n_seg):
    rng = np.random.default_rng(seed)
    beta, c_max, kd = 0.1, 1.0, 0.01
    grid = BiasGrid.default(c_max, beta)
    n = 10 * n_seg
    idx = rng.integers(0, grid.levels, n)
    amps = rng.uniform(0, c_max, n)
    train = _synthetic(idx, grid, kd, c_max, rng.uniform(0.005, 0.02, n), amps, beta)
    plan = plan_segments(train, OMEGA, "fixed-count", 10)
    dyn = dynamic_spec(train, plan, 4096, amplitude_source=amps)
    cls = classic_spec(train, 4096)
    assert np.all(dyn.steps <= cls.step * (1 + 1e-12))
    for (a, b), s in zip(dyn.segments, dyn.steps):
        attains = idx[a:b].max() == grid.levels - 1 and amps[a:b].max() == c_max
        assert (s == pytest.approx(cls.step, rel=1e-12)) == attains


def test_dynamic_step_follows_segment_range(quant_run):
    _, beta, train = quant_run
    plan = plan_segments(train, OMEGA, "fixed-count", 40)
    spec = dynamic_spec(train, plan, 4096)
    kd = train.kappa * train.delta
    for (a, b), s in zip(spec.segments, spec.steps):
        b_top = train.biases[a:b].max()
        c_top = train.amplitude_estimates[a:b].max()
        assert s == pytest.approx(fixed_step(kd, beta, b_top, c_top, 4096), rel=1e-12)


def test_estimated_and_true_sources_within_error_envelope(quant_run):
    sig, beta, train = quant_run
    plan = plan_segments(train, OMEGA, "fixed-count", 40)
    true = true_window_amplitudes(sig, train.times, 8)
    est = train.amplitude_estimates
    kd = train.kappa * train.delta
    d_est = dynamic_spec(train, plan, 4096).steps
    d_true = dynamic_spec(train, plan, 4096, amplitude_source=true).steps
    for (a, b), se, st_ in zip(plan.boundaries, d_est, d_true):
        envelope = np.max(np.abs(est[a:b] - true[a:b]))
        low = train.biases[a:b].max() + min(est[a:b].max(), true[a:b].max())
        assert abs(se - st_) <= kd * envelope / (low ** 2 * 4096) * (1 + 1e-9)


def test_dynamic_spec_errors(quant_run):
    _, _, train = quant_run
    plan = plan_segments(train, OMEGA)
    with pytest.raises(ValueError):
        dynamic_spec(train, plan, 16, amplitude_source=np.zeros(3))
    with pytest.raises(ValueError):
        dynamic_spec(train, plan, 16, t_max_rule="other")
    with pytest.raises(ValueError):
        dynamic_spec(train, plan, 16, beta=0.0)


# quantize / dequantize ----------------------------------------------------

def _one_interval_spec(lo, hi, K):
    return QuantizerSpec(K, QuantMode.CLASSIC_TIME, ((lo, hi),), ((0, 1),))


def _one_interval_train(T):
    return SpikeTrain(np.array([0.0, T]), np.zeros(1, dtype=np.int64), BiasGrid.constant(1.0),
                      0.01, 1.0, "IFTEM", 0.5)


def test_quantize_arithmetic_example():
    q = quantize(_one_interval_train(0.0153), _one_interval_spec(0.01, 0.02, 16))
    assert q.indices[0] == 8
    assert dequantize(q).intervals[0] == pytest.approx(0.0153125, abs=1e-15)


def test_quantize_bin_edge_floor():
    # Dyadic numbers make the edge exact.
    q = quantize(_one_interval_train(0.34375), _one_interval_spec(0.25, 0.75, 16))
    assert q.indices[0] == 3
    assert dequantize(q).intervals[0] == 0.34375 + 0.03125 / 2


def test_quantize_saturates():
    q = quantize(_one_interval_train(0.9), _one_interval_spec(0.25, 0.75, 16))
    assert q.indices[0] == 15 and q.saturated == 1
    q = quantize(_one_interval_train(0.1), _one_interval_spec(0.25, 0.75, 16))
    assert q.indices[0] == 0 and q.saturated == 1


def test_round_trip_error_and_saturation(quant_run):
    sig, beta, train = quant_run
    true = true_window_amplitudes(sig, train.times)
    plan = plan_segments(train, OMEGA, "fixed-count", 40)
    true_spec = dynamic_spec(train, plan, 4096, beta, amplitude_source=true, t_max_rule="estimated")
    for spec in (classic_spec(train, 4096, beta), true_spec):
        q = quantize(train, spec)
        lo, hi = np.repeat(np.asarray(spec.ranges), np.diff(spec.segments).ravel(), axis=0).T
        step = np.repeat(spec.steps, np.diff(spec.segments).ravel())
        T = train.intervals
        inside = (T >= lo) & (T < hi)
        T_hat = lo + (q.indices + 0.5) * step
        assert np.all(np.abs(T_hat - T)[inside] <= step[inside] / 2 * (1 + 1e-9))
        assert q.saturated == np.count_nonzero(~inside)
    assert quantize(train, true_spec).saturated < 0.01 * train.n_intervals


def test_dequantize_rebuilds_times_by_cumulative_sum(quant_run):
    _, beta, train = quant_run
    q = quantize(train, classic_spec(train, 1 << 12, beta))
    rebuilt = dequantize(q)
    lo, _ = q.spec.ranges[0]
    T = lo + (q.indices + 0.5) * q.spec.step
    np.testing.assert_array_equal(rebuilt.times, q.t0 + np.concatenate(([0.0], np.cumsum(T))))
    np.testing.assert_array_equal(rebuilt.bias_indices, train.bias_indices)
    assert rebuilt.times[0] == train.times[0]


def test_dequantize_reports_corrupt_index(quant_run):
    _, beta, train = quant_run
    q = quantize(train, classic_spec(train, 16, beta))
    bad = q.indices.copy()
    bad[7] = 16
    corrupt = QuantizedTrain(q.t0, bad, q.spec, q.bias_indices, q.bias_grid, q.kappa, q.delta,
                             q.train_mode, q.c_max, q.beta)
    with pytest.raises(DequantizeError, match="position 7"):
        dequantize(corrupt)


def test_fine_quantizer_replays_train(quant_run):
    sig, beta, train = quant_run
    plan = plan_segments(train, OMEGA)
    true = true_window_amplitudes(sig, train.times)
    q = quantize(train, dynamic_spec(train, plan, 1 << 30, beta, amplitude_source=true,
                                     t_max_rule="estimated"))
    assert q.saturated == 0
    rq = reconstruct_from_quantized(q, plan, OMEGA, method="matrix")
    ref = reconstruct(train, plan, OMEGA, rq.grid, method="matrix")
    assert np.max(np.abs(dequantize(q).times - train.times)) < 1e-9
    assert np.sqrt(np.mean((rq.values - ref.values) ** 2)) < 1e-7


def test_quantize_rejects_bad_specs(quant_run):
    _, beta, train = quant_run
    with pytest.raises(ValueError):
        quantize(train, QuantizerSpec(16, QuantMode.CLASSIC_TIME, ((0.0, 1.0),), ((0, 3),)))
    with pytest.raises(ValueError):
        quantize(train, QuantizerSpec(16, QuantMode.PERIODIC_AMPLITUDE, ((-1.0, 1.0),),
                                      ((0, train.n_intervals),)))


# periodic amplitude quantizer ---------------------------------------------

def test_periodic_quantize_examples():
    c, K = 1.0, 16
    step = 2 * c / K
    assert periodic_quantize(0.0, c, K) == pytest.approx(step / 2, abs=1e-15)
    assert periodic_quantize(c, c, K) == pytest.approx(c - step / 2, abs=1e-15)
    assert periodic_quantize(-c, c, K) == pytest.approx(-c + step / 2, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 16), st.floats(0.1, 10))
def test_periodic_quantize_error_bound(seed, bits, c):
    x = np.random.default_rng(seed).uniform(-c, c, 500)
    K = 1 << bits
    err = np.abs(periodic_quantize(x, c, K) - x)
    assert np.all(err <= c / K * (1 + 1e-9))
