"""
Acceptance suite: one test per criterion, each printing one verdict line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; the
terminal summary lists them in any case.
"""

import time
import warnings
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from aiftem.bounds import if_quant_mse_bound, quant_mse_bound_segment
from aiftem.decoder import (
    contraction_check,
    default_grid,
    plan_segments,
    reconstruct,
    reconstruct_iterative,
    reconstruct_matrix,
)
from aiftem.encoder import (
    AIFTEM,
    IFTEM,
    BiasGrid,
    EncoderConfig,
    EncodingTruncatedWarning,
    SpikeTrain,
    dense_abs,
    encode,
    true_window_amplitudes,
)
from aiftem.harness.config import preset
from aiftem.harness.experiments import (
    _betas,
    nominal_beta,
    run_experiment,
    run_segmented_sine,
    trial_rng,
)
from aiftem.quantizer import classic_spec, dynamic_spec, if_step, fixed_step, quantize
from aiftem.signal_model import constant, eval_signal, nmse_db, synthesize_random
from aiftem.streams import (
    spikes_from_bytes,
    spikes_from_json,
    spikes_to_bytes,
    spikes_to_json,
    temq_from_bytes,
    temq_from_json,
    temq_to_bytes,
    temq_to_json,
)

pytestmark = pytest.mark.filterwarnings("ignore::aiftem.encoder.EncodingTruncatedWarning")


def _enc(sig, cfg):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EncodingTruncatedWarning)
        return encode(sig, cfg)


@pytest.fixture(scope="module")
def freq_sweep():
    start = time.perf_counter()
    res = run_experiment(preset("mse_vs_frequency"), write=False)
    return res, time.perf_counter() - start


def _aif_rows(res):
    return [r for r in res.trials if r["sampler"] == "AIFTEM"]


def _by(summary, key="sampler"):
    out = {}
    for s in summary:
        out.setdefault(s["freq_hz"], {})[s[key]] = s
    return out


@pytest.mark.criterion(1, "analytic firing oracle")
def test_criterion_01_firing_oracle(verdict):
    start = time.perf_counter()
    train = encode(constant(0.0, 2 * np.pi, (0.0, 1.0)), EncoderConfig(0.5, 0.02, IFTEM(1.0)))
    elapsed = time.perf_counter() - start
    err = float(np.max(np.abs(train.intervals / 0.01 - 1)))
    verdict(train.n_intervals == 100 and err <= 1e-9 and elapsed < 1.0,
            f"{train.n_intervals} intervals, max rel err {err:.1e}, {elapsed:.3f} s")


@pytest.mark.criterion(2, "firing-bound sandwich")
def test_criterion_02_firing_bounds(verdict, freq_sweep):
    rows = _aif_rows(freq_sweep[0])
    viol = sum(r["firing_violations"] for r in rows)
    fails = sum(r["map_failures"] for r in rows)
    verdict(len(rows) >= 100 and viol == 0,
            f"{len(rows)} runs, {viol} violations, {fails} predictor-failure intervals excluded")


@pytest.mark.criterion(3, "perfect-recovery trend")
def test_criterion_03_recovery_trend(verdict):
    omega, ratio = 2 * np.pi * 10, 0.45
    sig = synthesize_random(omega, 2, seed=0, span=60)
    kd = 0.5 * 0.02
    train = _enc(sig, EncoderConfig(0.5, 0.02, IFTEM(sig.c_max + kd * omega / np.pi / ratio)))
    centre = int(np.searchsorted(train.times, 0.0))
    nmse, bound = [], []
    for L in (20, 40, 80):
        a = centre - L // 2
        sub = replace(train, times=train.times[a:a + L + 1], bias_indices=train.bias_indices[a:a + L])
        plan = plan_segments(sub, omega)
        w = plan.windows[0]
        grid = default_grid(sub, omega)
        m = (grid >= w.t_start) & (grid <= w.t_end)
        rec = reconstruct(sub, plan, omega, grid, method="matrix")
        nmse.append(nmse_db(eval_signal(sig, grid[m]), rec.values[m], grid[m]))
        bound.append(20 * (L + 1) * np.log10(w.ratio))
    decreasing = nmse[0] > nmse[1] > nmse[2]
    below = all(n <= b for n, b in zip(nmse, bound))
    verdict(decreasing and below,
            "NMSE dB " + "/".join(f"{v:.1f}" for v in nmse) + " vs bound "
            + "/".join(f"{v:.1f}" for v in bound)
            + f"; decreasing={decreasing}, below bound={below}")


@pytest.mark.criterion(4, "contraction on contractive windows")
def test_criterion_04_contraction(verdict, trace_fixture):
    cfg = preset("mse_vs_frequency")
    worst, checked, violated = 0.0, 0, 0
    cases = []
    for fi, f in enumerate(cfg.freqs_hz):
        omega = 2 * np.pi * f
        for trial in range(20):
            sig = synthesize_random(omega, cfg.order, seed=trial_rng(cfg.seed, fi, trial),
                                    span=cfg.span)
            _, train = _betas(sig, cfg, omega, dense_abs(sig))
            cases.append((sig, train, omega))
    _, sig, train = trace_fixture
    cases.append((sig, train, sig.omega))
    for sig, train, omega in cases:
        amps = true_window_amplitudes(sig, train.times)
        plan = plan_segments(train, omega, amplitudes=amps)
        for res in contraction_check(sig, train, plan, omega):
            if res.status in ("ok", "violated"):
                checked += 1
                violated += res.status == "violated"
                worst = max(worst, res.ratio / res.bound)
    verdict(checked > 0 and violated == 0,
            f"{checked} windows, {violated} violations, worst measured/r = {worst:.3f}")


@pytest.mark.criterion(5, "MSE versus bandwidth margin")
def test_criterion_05_mse_vs_frequency(verdict, freq_sweep):
    res, elapsed = freq_sweep
    by = _by(res.summary)
    margins, ok = [], True
    for f in sorted(by):
        a = by[f]["AIFTEM"]["mse_db"]
        m_if = by[f]["IFTEM-matched"]["mse_db"] - a
        m_p = by[f]["Periodic"]["mse_db"] - a
        margins.append(f"{f:g}Hz IF {m_if:+.1f} P {m_p:+.1f}")
        ok &= m_if >= 9 and m_p >= 9
    verdict(ok, "margins dB: " + "; ".join(margins) + f"; runtime {elapsed:.0f} s")


@pytest.mark.criterion(6, "oversampling dominance")
def test_criterion_06_oversampling(verdict, freq_sweep):
    rows = _aif_rows(freq_sweep[0])
    ok_rows = [r for r in rows if r["map_failures"] == 0]
    upper_bad = sum(r["os"] > r["os_upper"] for r in ok_rows)
    rate_bad = sum(r["os_clamped"] > r["os_if"] for r in rows)
    verdict(upper_bad == 0 and rate_bad == 0 and ok_rows,
            f"{len(ok_rows)} successful runs, {upper_bad} above upper bound; "
            f"{len(rows)} clamped runs, {rate_bad} faster than fixed bias")


@pytest.mark.criterion(7, "classic 12-bit quantization margin and bound")
def test_criterion_07_quantized(verdict):
    res = run_experiment(preset("quantized_mse"), write=False)
    by = _by(res.summary)
    margins = {f: by[f]["IFTEM-matched"]["mse_db"] - by[f]["AIFTEM"]["mse_db"] for f in by}
    checked = [r for r in res.trials if r.get("within_bound") is not None]
    over = sum(not r["within_bound"] for r in checked)
    ok = all(m >= 10 for m in margins.values()) and over == 0
    verdict(ok, "margins dB " + ", ".join(f"{f:g}Hz {m:+.1f}" for f, m in sorted(margins.items()))
            + f"; {over}/{len(checked)} non-saturated runs above the segment bound")


@pytest.mark.criterion(8, "dynamic quantization margin and step ordering")
def test_criterion_08_dynamic(verdict):
    res = run_experiment(preset("dynamic_quant"), write=False)
    by = _by(res.summary, "scheme")
    ok, parts = True, []
    for f in sorted(by):
        d = by[f]["AIF-dynamic"]["mse_db"]
        m_a = by[f]["AIF-classic"]["mse_db"] - d
        m_i = by[f]["IF-classic"]["mse_db"] - d
        ok &= m_a >= 4 and m_i >= 7
        parts.append(f"{f:g}Hz {m_a:+.1f}/{m_i:+.1f}")
    seg = run_segmented_sine(preset("segmented_sine"), write=False)
    steps = [r["delta_T"] for r in seg.trials if r["scheme"] == "AIF-dynamic"]
    ordered = all(a > b for a, b in zip(steps, steps[1:]))
    verdict(ok and ordered, "margins vs AIF/IF classic dB " + ", ".join(parts)
            + "; dynamic steps " + "/".join(f"{s:.4g}" for s in steps)
            + f" strictly decreasing={ordered}")


@pytest.mark.criterion(9, "iterative and matrix agreement")
def test_criterion_09_method_equivalence(verdict):
    omega = 2 * np.pi * 20
    worst = 0.0
    for seed in range(1000, 1050):
        sig = synthesize_random(omega, 2, seed=seed)
        beta = nominal_beta(0.5, 0.02, omega, 0.45)
        train = _enc(sig, EncoderConfig(0.5, 0.02, AIFTEM(beta)))
        plan = plan_segments(train, omega)
        grid = default_grid(train, omega)
        w = plan.windows[0]
        pad = 3 * np.pi / omega
        m = (grid > w.t_start + pad) & (grid < w.t_end - pad)
        it = reconstruct_iterative(train, plan, omega, grid, max_iters=30000, tol=1e-13)
        mx = reconstruct_matrix(train, plan, omega, grid)
        worst = max(worst, float(np.sqrt(np.mean((it.values[m] - mx.values[m]) ** 2))))
    verdict(worst <= 1e-6, f"50 windows, worst RMS difference {worst:.2e}")


@pytest.mark.criterion(10, "stream round trips")
def test_criterion_10_serialization(verdict, trace_fixture):
    _, sig, train = trace_fixture
    plan = plan_segments(train, sig.omega, "fixed-count", 25)
    q = quantize(train, dynamic_spec(train, plan, 1 << 12))
    problems = []
    for name, enc, dec in (("spikes-bin", spikes_to_bytes, spikes_from_bytes),
                           ("spikes-json", spikes_to_json, spikes_from_json)):
        back = dec(enc(train))
        same = (back.times.tobytes() == train.times.tobytes()
                and np.array_equal(back.bias_indices, train.bias_indices)
                and back.bias_grid == train.bias_grid
                and back.amplitude_estimates.tobytes() == train.amplitude_estimates.tobytes()
                and enc(back) == enc(train))
        if not same:
            problems.append(name)
    for name, enc, dec in (("temq-bin", temq_to_bytes, temq_from_bytes),
                           ("temq-json", temq_to_json, temq_from_json)):
        back = dec(enc(q))
        same = (np.array_equal(back.indices, q.indices)
                and np.array_equal(back.bias_indices, q.bias_indices)
                and back.bias_grid == q.bias_grid
                and tuple(map(tuple, back.spec.segments)) == tuple(map(tuple, q.spec.segments))
                and tuple(map(tuple, back.spec.ranges)) == tuple(map(tuple, q.spec.ranges))
                and back.t0 == q.t0 and enc(back) == enc(q))
        if not same:
            problems.append(name)
    verdict(not problems, f"{len(q.spec.segments)} segments, {train.n_intervals} intervals; "
            + ("all four formats bit-exact" if not problems else "mismatch: " + ", ".join(problems)))


def _rel(a, b):
    return abs(Fraction(a) - b) / abs(b)


@pytest.mark.criterion(11, "step-size algebra")
def test_criterion_11_step_algebra(verdict, rng):
    worst = Fraction(0)
    for _ in range(1000):
        kd = float(rng.uniform(1e-4, 0.1))
        beta = float(rng.uniform(0.01, 2.0))
        c_max = float(rng.uniform(0.01, 5.0))
        step = float(rng.uniform(1e-3, 0.1)) * c_max
        levels = int(rng.integers(3, 300))
        K = int(2 ** rng.integers(1, 25))
        b_if = c_max + float(rng.uniform(0.01, 3.0))
        F = Fraction
        grid = BiasGrid(beta, step, levels)
        b_max = F(beta) + (levels - 1) * F(step)
        # Fixed step via the range endpoints of a one-segment train.
        n = 8
        idx = rng.integers(0, levels, n)
        idx[0] = levels - 1
        amps = rng.uniform(0, c_max, n)
        train = SpikeTrain(np.arange(n + 1) * 0.01, idx, grid, kd, 1.0, "AIFTEM", c_max,
                           amplitude_estimates=amps, beta=beta)
        lo, hi = classic_spec(train, K).ranges[0]
        worst = max(worst, _rel(lo, F(kd) / (F(grid.b_max) + F(c_max))), _rel(hi, F(kd) / F(beta)))
        ref = F(kd) * (F(grid.b_max) + F(c_max) - F(beta)) / (F(beta) * (F(grid.b_max) + F(c_max)) * K)
        worst = max(worst, _rel(classic_spec(train, K).step, ref),
                    _rel(fixed_step(kd, beta, grid.b_max, c_max, K), ref),
                    _rel(float(b_max), F(grid.b_max)))
        # Dynamic step on two segments.
        plan = plan_segments(train, 2 * np.pi * 10, "fixed-count", 4)
        spec = dynamic_spec(train, plan, K, amplitude_source=amps)
        for (a, b), s in zip(spec.segments, spec.steps):
            top = F(float(grid.value(idx[a:b].max()))) + F(float(amps[a:b].max()))
            worst = max(worst, _rel(s, F(kd) * (top - F(beta)) / (F(beta) * top * K)))
        # Fixed-bias step: 2 c kd / ((b^2 - c^2) K).
        ref_if = 2 * F(c_max) * F(kd) / ((F(b_if) ** 2 - F(c_max) ** 2) * K)
        worst = max(worst, _rel(if_step(kd, b_if, c_max, K), ref_if))
    worst_c = 0.0
    for _ in range(100):
        b, c = float(rng.uniform(0.05, 5)), float(rng.uniform(0.01, 5))
        r, kd = float(rng.uniform(0.05, 0.95)), float(rng.uniform(1e-4, 0.1))
        d, omega = float(rng.uniform(1e-7, 1e-3)), float(2 * np.pi * rng.uniform(5, 300))
        simplified = quant_mse_bound_segment(kd / (b + c), d, 1e9, r, omega, kd, b, c).bias_form
        closed = if_quant_mse_bound(b, c, r, d, omega, kd)
        worst_c = max(worst_c, abs(simplified / closed - 1))
    verdict(worst <= Fraction(1, 10 ** 12) and worst_c <= 1e-12,
            f"1000 points worst rel {float(worst):.1e}; 100 substitution points worst rel "
            f"{worst_c:.1e}")
