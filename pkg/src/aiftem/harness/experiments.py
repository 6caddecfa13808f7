"""
Experiment runners.

Every runner takes an :class:`ExperimentConfig`, draws one random signal per
``(frequency, trial)`` from ``SeedSequence([seed, frequency_index, trial])``,
runs the selected samplers and returns long-format rows. Trials are
independent and may run on a process pool; rows are sorted before output so
results do not depend on scheduling.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy import signal as sp_signal

from ..bounds import (
    if_quant_mse_bound,
    quant_mse_bound_segment,
    sampling_distortion_bound,
    segment_stats,
    to_db,
)
from ..decoder import PAD_NYQUIST, plan_segments, reconstruct, reconstruct_from_quantized
from ..encoder import (
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
from ..quantizer import classic_spec, dynamic_spec, quantize
from ..signal_model import (
    BandlimitedSignal,
    eval_signal,
    from_samples,
    load_wav,
    mse_db,
    nmse_db,
    segmented_sine,
    synthesize_random,
    write_wav,
)
from .baselines import periodic_reconstruct
from .config import ExperimentConfig
from .csvout import output_dir, write_csv

__all__ = [
    "ExperimentResult",
    "MatchResult",
    "trial_rng",
    "mean_os",
    "nominal_beta",
    "threshold_for_ratio",
    "max_true_ratio",
    "firing_bound_violations",
    "calibrate_beta",
    "match_threshold",
    "surrogate_audio",
    "run_mse_vs_frequency",
    "run_quantization_sweep",
    "run_dynamic_quant",
    "run_segmented_sine",
    "run_time_trace",
    "run_audio_segments",
    "run_experiment",
]

#: Grid resolution for reconstruction and error metrics, points per Nyquist interval.
EVAL_POINTS_PER_NYQUIST = 20
#: Relative tolerance of the matched-oversampling search.
MATCH_TOLERANCE = 0.02


@dataclass
class ExperimentResult:
    """Summary rows, per-trial rows and the files written."""

    summary: list
    trials: list
    files: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class MatchResult:
    """Outcome of the matched-threshold search for a fixed-bias sampler."""

    delta: float
    train: SpikeTrain
    os: float
    ok: bool


# ---------------------------------------------------------------------------
# Protocol helpers


def trial_rng(seed: int, freq_index: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(freq_index), int(trial)]))


def mean_os(train: SpikeTrain, omega: float) -> float:
    """Average oversampling ``(pi / Omega) / E[T_n]``."""
    return float(np.pi / omega / np.mean(train.intervals))


def nominal_beta(kappa: float, delta: float, omega: float, ratio: float) -> float:
    """Margin giving ``r = kappa delta / beta * Omega / pi = ratio``."""
    return kappa * delta * omega / (ratio * np.pi)


def threshold_for_ratio(kappa: float, beta: float, omega: float, ratio: float) -> float:
    """Threshold giving ``r = kappa delta / beta * Omega / pi = ratio``."""
    return ratio * beta * np.pi / (kappa * omega)


def _encode(signal, kappa, delta, mode) -> SpikeTrain:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EncodingTruncatedWarning)
        return encode(signal, EncoderConfig(kappa, delta, mode))


def max_true_ratio(signal: BandlimitedSignal, train: SpikeTrain, omega: float,
                   dense=None) -> float:
    """
    Largest ``kappa delta / (b_n - c_n) * Omega / pi`` with ``c_n`` the true
    maximum of ``|x|`` over each interval; ``inf`` if some margin is not
    positive.
    """
    c = true_window_amplitudes(signal, train.times, 1, dense=dense)
    margin = train.biases - c
    if np.any(margin <= 0):
        return float("inf")
    return float(train.kappa * train.delta / np.min(margin) * omega / np.pi)


def firing_bound_violations(signal: BandlimitedSignal, train: SpikeTrain,
                            dense=None, rel: float = 1e-9) -> tuple[int, int]:
    """
    Count intervals breaking ``kd / (b_n + c_n) <= T_n <= kd / (b_n - c_n)``.

    Only intervals with ``b_n > c_n`` (predictor success) are checked.

    Returns
    -------
    violations, failures : int
    """
    c = true_window_amplitudes(signal, train.times, 1, dense=dense)
    b, T = train.biases, train.intervals
    kd = train.kappa * train.delta
    ok = b > c
    lo = kd / (b + c)
    hi = np.where(ok, kd / np.where(ok, b - c, 1.0), np.inf)
    bad = ok & ((T < lo * (1 - rel)) | (T > hi * (1 + rel)))
    return int(np.count_nonzero(bad)), int(np.count_nonzero(~ok))


def _aif_mode(cfg: ExperimentConfig, beta: float, **kw) -> AIFTEM:
    return AIFTEM(beta, window=cfg.window, **kw)


def calibrate_beta(signal: BandlimitedSignal, kappa: float, delta: float, omega: float,
                   target: float, window: int = 1, dense=None, grow: float = 1.25,
                   bisect_steps: int = 6, max_grow: int = 40):
    """
    Smallest margin ``beta`` whose adaptive train keeps every true interval
    ratio at or below ``target``.

    Starts from :func:`nominal_beta`, grows by ``grow`` until the target
    holds, then bisects between the last failing and first passing value.

    Returns
    -------
    beta : float
    train : SpikeTrain
        Train encoded with the returned ``beta``.
    """
    dense = dense_abs(signal) if dense is None else dense

    def run(beta):
        tr = _encode(signal, kappa, delta, AIFTEM(beta, window=window))
        return tr, max_true_ratio(signal, tr, omega, dense) <= target

    beta = nominal_beta(kappa, delta, omega, target)
    lo = None
    for _ in range(max_grow):
        train, ok = run(beta)
        if ok:
            break
        lo = beta
        beta *= grow
    else:
        return beta, train
    if lo is None:
        return beta, train
    hi = beta
    for _ in range(bisect_steps):
        mid = 0.5 * (lo + hi)
        tr, ok = run(mid)
        if ok:
            hi, train = mid, tr
        else:
            lo = mid
    return hi, train


def match_threshold(signal: BandlimitedSignal, kappa: float, delta: float, bias: float,
                    omega: float, target_os: float, tol: float = MATCH_TOLERANCE) -> MatchResult:
    """
    Threshold ``delta_c`` in ``[delta, 10 delta]`` at which a fixed-bias
    train's mean oversampling equals ``target_os`` within ``tol``.

    The first guess rescales ``delta`` by the oversampling ratio (mean rate
    is close to proportional to ``1 / delta``); a bracketed root search on
    ``OS(delta_c) - target_os`` follows if that guess misses.
    ``ok`` is ``False`` when no root lies in the bracket; the closest end is
    returned then.
    """
    cache = {}

    def train_at(d):
        if d not in cache:
            cache[d] = _encode(signal, kappa, d, IFTEM(bias))
        return cache[d]

    def f(d):
        return mean_os(train_at(d), omega) - target_os

    def close(d):
        return abs(f(d)) <= tol * target_os

    lo_d, hi_d = delta, 10.0 * delta
    f_lo = f(lo_d)
    if close(lo_d):
        return MatchResult(lo_d, train_at(lo_d), mean_os(train_at(lo_d), omega), True)
    if f_lo < 0:
        return MatchResult(lo_d, train_at(lo_d), mean_os(train_at(lo_d), omega), False)
    guess = min(max(delta * (f_lo + target_os) / target_os, lo_d), hi_d)
    if close(guess):
        return MatchResult(guess, train_at(guess), mean_os(train_at(guess), omega), True)
    if f(hi_d) > 0:
        return MatchResult(hi_d, train_at(hi_d), mean_os(train_at(hi_d), omega), False)
    a, b = (lo_d, guess) if f(guess) < 0 else (guess, hi_d)
    d = brentq(f, a, b, rtol=1e-6, maxiter=60)
    best = min(cache, key=lambda k: abs(f(k)))
    if close(d):
        best = d
    tr = train_at(best)
    os_ = mean_os(tr, omega)
    return MatchResult(best, tr, os_, abs(os_ - target_os) <= tol * target_os)


def _eval_grid(signal: BandlimitedSignal, t_a: float, t_b: float):
    step = signal.nyquist_interval / EVAL_POINTS_PER_NYQUIST
    n = max(int(math.ceil((t_b - t_a) / step)), 2)
    return np.linspace(t_a, t_b, n + 1)


def _decode(train, omega, grid, cfg, plan=None):
    plan = plan_segments(train, omega) if plan is None else plan
    return reconstruct(train, plan, omega, grid, cfg.method).values


def _decode_quantized(train, spec, plan, omega, grid, cfg):
    q = quantize(train, spec)
    rec = reconstruct_from_quantized(q, plan, omega, grid, cfg.method)
    return rec.values, q.saturated


def _ms(values, t) -> float:
    return float(np.trapezoid(values, t) / (t[-1] - t[0]))


def _betas(signal, cfg, omega, dense):
    """Margin for the adaptive sampler according to ``cfg.beta_rule``."""
    if cfg.beta_rule == "calibrate":
        return calibrate_beta(signal, cfg.kappa, _delta(cfg, omega), omega, cfg.ratio,
                              cfg.window, dense)
    if cfg.beta_rule == "nominal":
        beta = nominal_beta(cfg.kappa, _delta(cfg, omega), omega, cfg.ratio)
    else:
        beta = cfg.beta
    return beta, _encode(signal, cfg.kappa, _delta(cfg, omega), _aif_mode(cfg, beta))


def _delta(cfg, omega) -> float:
    if cfg.delta_rule == "ratio":
        return threshold_for_ratio(cfg.kappa, cfg.beta, omega, cfg.ratio)
    return cfg.delta


def _if_bias(signal, cfg, omega, beta) -> float:
    if cfg.if_margin == "beta":
        return signal.c_max + beta
    return signal.c_max + nominal_beta(cfg.kappa, _delta(cfg, omega), omega, cfg.ratio)


def _map(fn, tasks, workers):
    if workers and workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def _sorted(rows, keys):
    return sorted(rows, key=lambda r: tuple(r.get(k) for k in keys))


def _summarize(rows, keys, metrics):
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key in sorted(groups):
        grp = groups[key]
        row = dict(zip(keys, key))
        row["trials"] = len(grp)
        for m in metrics:
            vals = np.array([g[m] for g in grp if g.get(m) is not None], dtype=float)
            vals = vals[np.isfinite(vals)]
            row[m] = float(np.mean(vals)) if vals.size else float("nan")
        out.append(row)
    return out


def _tasks(cfg):
    return [(fi, t) for fi in range(len(cfg.freqs_hz)) for t in range(cfg.trials)]


# ---------------------------------------------------------------------------
# MSE versus bandwidth (unquantized and 12-bit classic)


_FREQ_COLUMNS = ["freq_hz", "sampler", "trial", "mse_db", "mse_sampling_db", "os",
                 "beta", "delta", "bias", "match_ok", "max_true_ratio", "n_intervals",
                 "quant_mse_db", "quant_bound_db", "within_bound", "saturated",
                 "firing_violations", "map_failures", "os_upper", "os_clamped", "os_if"]


def _trial_frequency(cfg: ExperimentConfig, task) -> list:
    fi, trial = task
    f = cfg.freqs_hz[fi]
    omega = 2 * np.pi * f
    sig = synthesize_random(omega, cfg.order, seed=trial_rng(cfg.seed, fi, trial), span=cfg.span)
    dense = dense_abs(sig)
    grid = _eval_grid(sig, *sig.horizon)
    half = (cfg.order + cfg.eval_span) * sig.nyquist_interval
    inner = (grid >= -half) & (grid <= half)
    x = eval_signal(sig, grid)
    delta = _delta(cfg, omega)
    beta, aif = _betas(sig, cfg, omega, dense)
    os_a = mean_os(aif, omega)
    b_if = _if_bias(sig, cfg, omega, beta)
    levels = 1 << cfg.bits if cfg.bits else 0
    base = dict(freq_hz=f, trial=trial, beta=beta)

    def guaranteed_margin(train):
        # Calibration only guarantees b_n - c_n >= the nominal margin, so the
        # quantizer's upper end must use that margin rather than beta.
        if train.mode != "AIFTEM" or cfg.beta_rule != "calibrate":
            return None
        return min(train.beta, nominal_beta(cfg.kappa, delta, omega, cfg.ratio))
    rows = []

    def finish(name, train, values, delta_used, bias=None, match_ok=None, quant=None):
        row = dict(base, sampler=name, delta=delta_used, bias=bias, match_ok=match_ok)
        row["mse_sampling_db"] = mse_db(x[inner], values[inner], grid[inner])
        row["mse_db"] = row["mse_sampling_db"]
        if train is not None:
            row["os"] = mean_os(train, omega)
            row["n_intervals"] = train.n_intervals
            row["max_true_ratio"] = max_true_ratio(sig, train, omega, dense)
        if quant is not None:
            qvals, sat, bound = quant
            row["mse_db"] = mse_db(x[inner], qvals[inner], grid[inner])
            qms = _ms((qvals[inner] - values[inner]) ** 2, grid[inner])
            row["quant_mse_db"] = to_db(qms)
            row["saturated"] = sat
            row["quant_bound_db"] = to_db(bound) if bound is not None else float("nan")
            row["within_bound"] = None if (sat or bound is None) else bool(qms <= bound)
        rows.append(row)
        return row

    def quantized(train, values, true_amps=True):
        if not levels:
            return None
        amps = true_window_amplitudes(sig, train.times, 1, dense=dense) if true_amps else None
        plan = plan_segments(train, omega, amplitudes=amps)
        spec = classic_spec(train, levels, guaranteed_margin(train))
        qvals, sat = _decode_quantized(train, spec, plan, omega, grid, cfg)
        st = segment_stats(train, plan, amps)[0]
        bound = quant_mse_bound_segment(st.mean_T, spec.step, st.n_samples, st.ratio, omega,
                                        train.kappa * train.delta)
        return qvals, sat, None if bound is None else bound.time_average

    if "AIFTEM" in cfg.samplers:
        vals = _decode(aif, omega, grid, cfg)
        row = finish("AIFTEM", aif, vals, delta, quant=quantized(aif, vals))
        row["firing_violations"], row["map_failures"] = firing_bound_violations(sig, aif, dense)
        kd = aif.kappa * aif.delta
        row["os_upper"] = (float(np.mean(aif.biases)) + sig.c_max) / kd * sig.nyquist_interval
        if "IFTEM" in cfg.samplers:
            clamped = _encode(sig, cfg.kappa, delta, _aif_mode(
                cfg, beta, bias_grid=BiasGrid.default(sig.c_max, beta).clamped(b_if)))
            row["os_clamped"] = mean_os(clamped, omega)
            row["os_if"] = mean_os(_encode(sig, cfg.kappa, delta, IFTEM(b_if)), omega)
    if "Genie" in cfg.samplers:
        g = _encode(sig, cfg.kappa, delta, _aif_mode(cfg, beta, bias_source="genie"))
        vals = _decode(g, omega, grid, cfg)
        finish("Genie", g, vals, delta, quant=quantized(g, vals))
    if "IFTEM" in cfg.samplers:
        tr = _encode(sig, cfg.kappa, delta, IFTEM(b_if))
        vals = _decode(tr, omega, grid, cfg)
        finish("IFTEM", tr, vals, delta, b_if, quant=quantized(tr, vals, False))
    if "IFTEM-matched" in cfg.samplers:
        m = match_threshold(sig, cfg.kappa, delta, b_if, omega, os_a)
        vals = _decode(m.train, omega, grid, cfg)
        finish("IFTEM-matched", m.train, vals, m.delta, b_if, m.ok,
               quant=quantized(m.train, vals, False))
    if "Periodic" in cfg.samplers:
        rate = os_a * omega / np.pi
        vals = periodic_reconstruct(sig, rate, grid)
        row = finish("Periodic", None, vals, None)
        row["os"] = os_a
        if levels:
            qvals = periodic_reconstruct(sig, rate, grid, bits=cfg.bits)
            row["mse_db"] = mse_db(x[inner], qvals[inner], grid[inner])
            row["quant_mse_db"] = to_db(_ms((qvals[inner] - vals[inner]) ** 2, grid[inner]))
    return rows


def run_mse_vs_frequency(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """
    MSE and oversampling versus bandwidth for every selected sampler.

    Writes ``<experiment>.csv`` (per frequency and sampler means) and
    ``<experiment>_trials.csv`` (one row per trial).
    """
    rows = [r for rs in _map(partial(_trial_frequency, cfg), _tasks(cfg), cfg.workers) for r in rs]
    rows = _sorted(rows, ("freq_hz", "sampler", "trial"))
    metrics = ["mse_db", "mse_sampling_db", "os", "beta", "delta", "quant_mse_db",
               "quant_bound_db", "os_upper", "os_clamped", "os_if"]
    summary = _summarize(rows, ("freq_hz", "sampler"), metrics)
    for s in summary:
        grp = [r for r in rows if r["freq_hz"] == s["freq_hz"] and r["sampler"] == s["sampler"]]
        s["match_failures"] = sum(1 for r in grp if r.get("match_ok") is False)
        s["saturated_trials"] = sum(1 for r in grp if r.get("saturated"))
        s["bits"] = cfg.bits
    res = ExperimentResult(summary, rows)
    if write:
        out = output_dir(cfg)
        cols = ["freq_hz", "sampler", "trials", "bits"] + metrics + ["match_failures",
                                                                    "saturated_trials"]
        res.files["summary"] = write_csv(out / f"{cfg.experiment}.csv", summary, cols, cfg)
        res.files["trials"] = write_csv(out / f"{cfg.experiment}_trials.csv", rows,
                                        _FREQ_COLUMNS, cfg)
    return res


def run_quantization_sweep(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """12-bit classic quantization of every sampler versus bandwidth."""
    if not cfg.bits:
        raise ValueError("quantization sweep needs bits > 0")
    return run_mse_vs_frequency(cfg, write)


# ---------------------------------------------------------------------------
# Three-segment sine: classic versus dynamic quantization


def _segment_signal(amplitudes, omega, seg_nyquist):
    # Edges sit on zero crossings of the tone.
    edges = np.arange(len(amplitudes) + 1) * seg_nyquist * np.pi / omega
    return segmented_sine(amplitudes, omega, edges), edges


def _segment_masks(grid, edges, pad):
    return [(grid >= a + pad) & (grid <= b - pad) for a, b in zip(edges[:-1], edges[1:])]


def _segment_run(cfg: ExperimentConfig, sig, edges, omega):
    """Encode, decode and quantize one segmented signal; return per-scheme records."""
    beta = cfg.beta
    delta = _delta(cfg, omega)
    kd = cfg.kappa * delta
    pad = PAD_NYQUIST * sig.nyquist_interval
    grid = _eval_grid(sig, *sig.horizon)
    x = eval_signal(sig, grid)
    masks = _segment_masks(grid, edges, pad)
    levels = 1 << cfg.bits if cfg.bits else 0
    aif = _encode(sig, cfg.kappa, delta, _aif_mode(cfg, beta))
    b_if = _if_bias(sig, cfg, omega, beta)
    iff = _encode(sig, cfg.kappa, delta, IFTEM(b_if))
    out = {}

    def plan_for(train, amps=None):
        return plan_segments(train, omega, "breakpoints", edges[1:-1], amplitudes=amps)

    def seg_metrics(values):
        return ([mse_db(x[m], values[m], grid[m]) for m in masks],
                [nmse_db(x[m], values[m], grid[m]) for m in masks])

    def seg_os(train):
        return [mean_os(train, omega) if w.n_samples == 0 else
                float(np.pi / omega / np.mean(train.intervals[w.start:w.stop]))
                for w in plan_for(train).windows]

    for name, train in (("IFTEM", iff), ("AIFTEM", aif)):
        if name not in cfg.samplers:
            continue
        plan = plan_for(train)
        vals = reconstruct(train, plan, omega, grid, cfg.method).values
        mse_s, nmse_s = seg_metrics(vals)
        sb = sampling_distortion_bound(plan)
        out[name] = dict(train=train, plan=plan, values=vals, seg_mse=mse_s, seg_nmse=nmse_s,
                         seg_nmse_bound=[to_db(v) for v in sb.per_window], seg_os=seg_os(train),
                         os=mean_os(train, omega), delta=delta, bias=b_if if name == "IFTEM"
                         else None)
    if not levels:
        return out, grid, x, masks
    schemes = []
    if "IFTEM" in out:
        schemes.append(("IF-classic", "IFTEM", classic_spec(iff, levels)))
    if "AIFTEM" in out:
        schemes.append(("AIF-classic", "AIFTEM", classic_spec(aif, levels)))
        amp_src = ("estimated" if cfg.amplitude_source == "estimated" else
                   true_window_amplitudes(sig, aif.times, 1))
        schemes.append(("AIF-dynamic", "AIFTEM",
                        dynamic_spec(aif, out["AIFTEM"]["plan"], levels,
                                     amplitude_source=amp_src, t_max_rule=cfg.t_max_rule)))
    for scheme, base, spec in schemes:
        rec = out[base]
        train, plan = rec["train"], rec["plan"]
        qvals, sat = _decode_quantized(train, spec, plan, omega, grid, cfg)
        seg_q, seg_qn = seg_metrics(qvals)
        dT = [float(hi - lo) for lo, hi in spec.ranges]
        dT = dT * len(plan.windows) if len(dT) == 1 else dT
        steps = list(spec.steps) * (len(plan.windows) if len(spec.steps) == 1 else 1)
        bounds = []
        for st, step in zip(segment_stats(train, plan), steps):
            if base == "IFTEM":
                r = kd / (b_if - sig.c_max) * omega / np.pi
                bounds.append(if_quant_mse_bound(b_if, sig.c_max, r, step, omega, kd))
            else:
                qb = quant_mse_bound_segment(st.mean_T, step, st.n_samples, st.ratio, omega, kd,
                                             st.mean_b, st.mean_c)
                bounds.append(None if qb is None else qb.bias_form)
        out[scheme] = dict(train=train, plan=plan, values=qvals, seg_mse=seg_q, seg_nmse=seg_qn,
                           seg_bound=[to_db(b) if b is not None else float("nan")
                                      for b in bounds],
                           seg_dT=dT, saturated=sat, os=rec["os"], seg_os=rec["seg_os"],
                           sampling_mse=rec["seg_mse"])
    return out, grid, x, masks


_DYN_COLUMNS = ["freq_hz", "scheme", "trial", "segment", "amplitude", "mse_db",
                "mse_sampling_db", "bound_db", "delta_T", "os", "saturated"]


def _total_db(x, values, grid, masks):
    m = np.zeros_like(grid, dtype=bool)
    for mk in masks:
        m |= mk
    return mse_db(x[m], values[m], grid[m])


def _trial_dynamic(cfg: ExperimentConfig, task) -> list:
    fi, trial = task
    f = cfg.freqs_hz[fi]
    rng = trial_rng(cfg.seed, fi, trial)
    amps = rng.uniform(0.0, 1.0, 3)
    sig, edges = _segment_signal(amps, 2 * np.pi * f, cfg.segment_nyquist)
    out, grid, x, masks = _segment_run(cfg, sig, edges, sig.omega)
    rows = []
    for scheme in ("IF-classic", "AIF-classic", "AIF-dynamic"):
        if scheme not in out:
            continue
        rec = out[scheme]
        for i, a in enumerate(amps):
            rows.append(dict(freq_hz=f, scheme=scheme, trial=trial, segment=i, amplitude=a,
                             mse_db=rec["seg_mse"][i], mse_sampling_db=rec["sampling_mse"][i],
                             bound_db=rec["seg_bound"][i], delta_T=rec["seg_dT"][i],
                             os=rec["seg_os"][i], saturated=rec["saturated"]))
        rows.append(dict(freq_hz=f, scheme=scheme, trial=trial, segment=-1,
                         amplitude=float(np.max(amps)),
                         mse_db=float(np.mean(rec["seg_mse"])),
                         mse_sampling_db=float(np.mean(rec["sampling_mse"])),
                         bound_db=float(np.nanmean(rec["seg_bound"])),
                         delta_T=float(np.mean(rec["seg_dT"])), os=rec["os"],
                         saturated=rec["saturated"],
                         mse_total_db=_total_db(x, rec["values"], grid, masks)))
    return rows


def run_dynamic_quant(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """
    Classic quantization of IF-TEM and AIF-TEM against per-segment dynamic
    quantization of AIF-TEM, on three-segment sines with random amplitudes.

    Segment rows carry ``segment >= 0``; the row with ``segment = -1`` holds
    the trial's mean over segments of the per-segment dB values and, in
    ``mse_total_db``, the MSE over the union of the segment interiors.
    """
    if not cfg.bits:
        raise ValueError("dynamic quantization needs bits > 0")
    rows = [r for rs in _map(partial(_trial_dynamic, cfg), _tasks(cfg), cfg.workers) for r in rs]
    rows = _sorted(rows, ("freq_hz", "scheme", "trial", "segment"))
    totals = [r for r in rows if r["segment"] == -1]
    summary = _summarize(totals, ("freq_hz", "scheme"),
                         ["mse_db", "mse_total_db", "mse_sampling_db", "bound_db", "delta_T",
                          "os", "saturated"])
    for s in summary:
        s["bits"] = cfg.bits
    res = ExperimentResult(summary, rows)
    if write:
        out = output_dir(cfg)
        res.files["summary"] = write_csv(
            out / f"{cfg.experiment}.csv", summary,
            ["freq_hz", "scheme", "trials", "bits", "mse_db", "mse_total_db", "mse_sampling_db",
             "bound_db", "delta_T", "os", "saturated"], cfg)
        res.files["trials"] = write_csv(out / f"{cfg.experiment}_trials.csv", rows,
                                        _DYN_COLUMNS + ["mse_total_db"], cfg)
    return res


def run_segmented_sine(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """
    Fixed three-segment sine: per-segment NMSE, NMSE bound and oversampling
    of IF-TEM and AIF-TEM, plus per-segment quantized MSE, bound and
    time-difference range of the three quantization schemes.
    """
    f = cfg.freqs_hz[0]
    amps = tuple(cfg.amplitudes) or (0.8, 0.4, 0.05)
    sig, edges = _segment_signal(amps, 2 * np.pi * f, cfg.segment_nyquist)
    out, grid, x, masks = _segment_run(cfg, sig, edges, sig.omega)
    rows, qrows = [], []
    for name in ("IFTEM", "AIFTEM"):
        if name not in out:
            continue
        rec = out[name]
        for i, a in enumerate(amps):
            rows.append(dict(sampler=name, segment=i, amplitude=a, nmse_db=rec["seg_nmse"][i],
                             nmse_bound_db=rec["seg_nmse_bound"][i], mse_db=rec["seg_mse"][i],
                             os=rec["seg_os"][i], ratio=rec["plan"].windows[i].ratio,
                             n_samples=rec["plan"].windows[i].n_samples))
    for scheme in ("IF-classic", "AIF-classic", "AIF-dynamic"):
        if scheme not in out:
            continue
        rec = out[scheme]
        for i, a in enumerate(amps):
            qrows.append(dict(scheme=scheme, segment=i, amplitude=a, mse_db=rec["seg_mse"][i],
                              bound_db=rec["seg_bound"][i], delta_T=rec["seg_dT"][i],
                              saturated=rec["saturated"]))
    rows = _sorted(rows, ("sampler", "segment"))
    qrows = _sorted(qrows, ("scheme", "segment"))
    res = ExperimentResult(rows, qrows)
    if write:
        out_dir = output_dir(cfg)
        res.files["summary"] = write_csv(
            out_dir / f"{cfg.experiment}.csv", rows,
            ["sampler", "segment", "amplitude", "nmse_db", "nmse_bound_db", "mse_db", "os",
             "ratio", "n_samples"], cfg)
        if qrows:
            res.files["quantized"] = write_csv(
                out_dir / f"{cfg.experiment}_quantized.csv", qrows,
                ["scheme", "segment", "amplitude", "mse_db", "bound_db", "delta_T", "saturated"],
                cfg)
    return res


# ---------------------------------------------------------------------------
# Time traces


def _trial_trace(cfg: ExperimentConfig, task):
    fi, trial = task
    f = cfg.freqs_hz[fi]
    omega = 2 * np.pi * f
    sig = synthesize_random(omega, cfg.order, seed=trial_rng(cfg.seed, fi, trial), span=cfg.span)
    return _trace(cfg, sig, omega, f, trial)


def _trace(cfg, sig, omega, f, trial):
    dense = dense_abs(sig)
    grid = _eval_grid(sig, *sig.horizon)
    half = (sig.order + cfg.eval_span) * sig.nyquist_interval
    inner = (grid >= -half) & (grid <= half)
    x = eval_signal(sig, grid)
    delta = _delta(cfg, omega)
    beta, aif = _betas(sig, cfg, omega, dense)
    os_a = mean_os(aif, omega)
    b_if = _if_bias(sig, cfg, omega, beta)
    spikes, summary = [], []
    errors = {"t": grid[inner], "x": x[inner]}
    kd = cfg.kappa * delta
    trains = {}
    if "AIFTEM" in cfg.samplers:
        trains["AIFTEM"] = (aif, delta, kd / beta * omega / np.pi)
    if "IFTEM" in cfg.samplers:
        trains["IFTEM"] = (_encode(sig, cfg.kappa, delta, IFTEM(b_if)), delta,
                           kd / (b_if - sig.c_max) * omega / np.pi)
    if "IFTEM-matched" in cfg.samplers:
        m = match_threshold(sig, cfg.kappa, delta, b_if, omega, os_a)
        trains["IFTEM-matched"] = (m.train, m.delta,
                                   cfg.kappa * m.delta / (b_if - sig.c_max) * omega / np.pi)
    for name, (train, d, r_nominal) in trains.items():
        c = true_window_amplitudes(sig, train.times, 1, dense=dense)
        margin = train.biases - c
        r_n = np.where(margin > 0, train.kappa * d / np.where(margin > 0, margin, 1) * omega
                       / np.pi, np.inf)
        # Estimates above the known bound c_max are capped at it.
        est = (np.minimum(train.amplitude_estimates, sig.c_max)
               if len(train.amplitude_estimates) == len(c) else np.full(len(c), sig.c_max))
        m_est = train.biases - est
        r_est = np.where(m_est > 0, train.kappa * d / np.where(m_est > 0, m_est, 1) * omega
                         / np.pi, np.inf)
        os_n = np.pi / omega / train.intervals
        for n in range(train.n_intervals):
            spikes.append(dict(freq_hz=f, trial=trial, sampler=name, n=n + 1,
                               t=float(train.times[n + 1]), T=float(train.intervals[n]),
                               os_n=float(os_n[n]), r_n=float(r_n[n]), r_est=float(r_est[n]),
                               bias=float(train.biases[n]), c_true=float(c[n])))
        vals = _decode(train, omega, grid, cfg)
        errors[name] = np.abs(x - vals)[inner]
        summary.append(dict(freq_hz=f, trial=trial, sampler=name,
                            mse_db=mse_db(x[inner], vals[inner], grid[inner]),
                            os=mean_os(train, omega), os_var=float(np.var(os_n)),
                            delta=d, r_nominal=r_nominal, beta=beta,
                            max_true_ratio=float(np.max(r_n)),
                            max_est_ratio=float(np.max(r_est))))
    if "Periodic" in cfg.samplers:
        vals = periodic_reconstruct(sig, os_a * omega / np.pi, grid)
        errors["Periodic"] = np.abs(x - vals)[inner]
        summary.append(dict(freq_hz=f, trial=trial, sampler="Periodic",
                            mse_db=mse_db(x[inner], vals[inner], grid[inner]), os=os_a,
                            os_var=0.0, beta=beta))
    err_rows = []
    names = [k for k in errors if k not in ("t", "x")]
    for i in range(len(errors["t"])):
        row = dict(freq_hz=f, trial=trial, t=float(errors["t"][i]), x=float(errors["x"][i]))
        for k in names:
            row[f"err_{k}"] = float(errors[k][i])
        err_rows.append(row)
    return summary, spikes, err_rows


def run_time_trace(cfg: ExperimentConfig, write: bool = True, signal=None) -> ExperimentResult:
    """
    Per-spike oversampling ``OS_n = (pi / Omega) / T_n``, Nyquist ratio
    ``r_n`` from the true amplitudes and ``r_est`` from the predictor's
    estimates, and pointwise reconstruction error for each sampler.

    ``signal`` replaces the random draw (used for fixtures such as the zero
    signal); it is encoded at its own bandwidth.
    """
    if signal is not None:
        f = signal.omega / (2 * np.pi)
        parts = [_trace(cfg, signal, signal.omega, f, 0)]
    else:
        parts = _map(partial(_trial_trace, cfg), _tasks(cfg), cfg.workers)
    summary = _sorted([r for p in parts for r in p[0]], ("freq_hz", "sampler", "trial"))
    spikes = _sorted([r for p in parts for r in p[1]], ("freq_hz", "sampler", "trial", "n"))
    errs = _sorted([r for p in parts for r in p[2]], ("freq_hz", "trial", "t"))
    res = ExperimentResult(summary, spikes, extra={"errors": errs})
    if write:
        out = output_dir(cfg)
        res.files["summary"] = write_csv(
            out / f"{cfg.experiment}.csv", summary,
            ["freq_hz", "trial", "sampler", "mse_db", "os", "os_var", "delta", "beta",
             "r_nominal", "max_true_ratio", "max_est_ratio"], cfg)
        res.files["spikes"] = write_csv(
            out / f"{cfg.experiment}_spikes.csv", spikes,
            ["freq_hz", "trial", "sampler", "n", "t", "T", "os_n", "r_n", "r_est", "bias",
             "c_true"], cfg)
        err_cols = ["freq_hz", "trial", "t", "x"] + sorted(
            {k for r in errs for k in r if k.startswith("err_")})
        res.files["errors"] = write_csv(out / f"{cfg.experiment}_errors.csv", errs, err_cols, cfg)
    return res


# ---------------------------------------------------------------------------
# Audio segments


def surrogate_audio(seed: int = 0, sample_rate: float = 8000.0, band_edge_hz: float = 1000.0,
                    duration: float = 0.3, amplitudes=(0.8, 0.3, 0.05)) -> np.ndarray:
    """
    Band-limited noise whose envelope steps through ``amplitudes`` in equal
    thirds, with short raised-cosine transitions.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xA0D10]))
    n = int(round(duration * sample_rate))
    taps = sp_signal.firwin(255, 0.9 * band_edge_hz / (sample_rate / 2), window=("kaiser", 10.0))
    noise = sp_signal.filtfilt(taps, [1.0], rng.standard_normal(n + 1024))[512:512 + n]
    noise /= np.max(np.abs(noise))
    k = len(amplitudes)
    t = np.arange(n) / sample_rate
    seg = duration / k
    ramp = 0.01 * duration
    env = np.full(n, float(amplitudes[0]))
    for i in range(1, k):
        u = np.clip((t - (i * seg - ramp / 2)) / ramp, 0.0, 1.0)
        w = 0.5 - 0.5 * np.cos(np.pi * u)
        env = env * (1 - w) + float(amplitudes[i]) * w
    return noise * env


def _audio_signal(cfg: ExperimentConfig):
    if cfg.audio_path:
        return load_wav(cfg.audio_path, cfg.band_edge_hz)
    x = surrogate_audio(cfg.seed, cfg.sample_rate, cfg.band_edge_hz, cfg.duration,
                        tuple(cfg.amplitudes) or (0.8, 0.3, 0.05))
    return from_samples(x, cfg.sample_rate, 2 * np.pi * cfg.band_edge_hz)


def write_surrogate_wav(path, cfg: ExperimentConfig | None = None) -> Path:
    """Write the generated audio fixture as 16-bit PCM."""
    from .config import preset

    cfg = preset("audio_segments") if cfg is None else cfg
    x = surrogate_audio(cfg.seed, cfg.sample_rate, cfg.band_edge_hz, cfg.duration,
                        tuple(cfg.amplitudes) or (0.8, 0.3, 0.05))
    write_wav(path, x, int(cfg.sample_rate), 16)
    return Path(path)


def run_audio_segments(cfg: ExperimentConfig, write: bool = True, signal=None) -> ExperimentResult:
    """
    Per-segment MSE and oversampling of each sampler on an audio signal cut
    into three equal segments, each decoded independently.
    """
    sig = _audio_signal(cfg) if signal is None else signal
    omega = sig.omega
    lo, hi = sig.horizon
    guard = 2 * PAD_NYQUIST * sig.nyquist_interval
    edges = np.linspace(lo, hi, 4)
    grid = _eval_grid(sig, lo, hi)
    x = eval_signal(sig, grid)
    pad = PAD_NYQUIST * sig.nyquist_interval
    masks = _segment_masks(grid, edges, pad)
    masks[0] &= grid >= lo + guard
    masks[-1] &= grid <= hi - guard
    delta = _delta(cfg, omega)
    beta, aif = _betas(sig, cfg, omega, None)
    os_a = mean_os(aif, omega)
    b_if = _if_bias(sig, cfg, omega, beta)
    trains = {}
    if "AIFTEM" in cfg.samplers:
        trains["AIFTEM"] = (aif, delta)
    if "IFTEM" in cfg.samplers:
        trains["IFTEM"] = (_encode(sig, cfg.kappa, delta, IFTEM(b_if)), delta)
    if "IFTEM-matched" in cfg.samplers:
        m = match_threshold(sig, cfg.kappa, delta, b_if, omega, os_a)
        trains["IFTEM-matched"] = (m.train, m.delta)
    rows = []
    for name, (train, d) in trains.items():
        plan = plan_segments(train, omega, "breakpoints", edges[1:-1])
        vals = reconstruct(train, plan, omega, grid, cfg.method).values
        for i, (w, mk) in enumerate(zip(plan.windows, masks)):
            rows.append(dict(sampler=name, segment=i, mse_db=mse_db(x[mk], vals[mk], grid[mk]),
                             os=float(np.pi / omega / np.mean(train.intervals[w.start:w.stop])),
                             delta=d))
    if "Periodic" in cfg.samplers:
        vals = periodic_reconstruct(sig, os_a * omega / np.pi, grid)
        for i, mk in enumerate(masks):
            rows.append(dict(sampler="Periodic", segment=i,
                             mse_db=mse_db(x[mk], vals[mk], grid[mk]), os=os_a))
    rows = _sorted(rows, ("sampler", "segment"))
    res = ExperimentResult(rows, rows)
    if write:
        res.files["summary"] = write_csv(output_dir(cfg) / f"{cfg.experiment}.csv", rows,
                                         ["sampler", "segment", "mse_db", "os", "delta"], cfg)
    return res


_RUNNERS = {
    "mse_vs_frequency": run_mse_vs_frequency,
    "quantized_mse": run_quantization_sweep,
    "dynamic_quant": run_dynamic_quant,
    "segmented_sine": run_segmented_sine,
    "time_trace": run_time_trace,
    "audio_segments": run_audio_segments,
}


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run the experiment named by ``cfg.experiment``."""
    return _RUNNERS[cfg.experiment](cfg, write)
