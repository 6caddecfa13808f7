"""
Closed-form oversampling and distortion bounds.

All bounds are computed in linear units. Conversion to dB happens only in
:meth:`BoundsReport.to_row`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .encoder import SpikeTrain

__all__ = [
    "OversamplingReport",
    "SamplingBound",
    "QuantBound",
    "TotalBound",
    "BoundsReport",
    "oversampling",
    "sampling_distortion_bound",
    "geometric_gain",
    "quant_mse_bound_segment",
    "if_quant_mse_bound",
    "segment_stats",
    "quant_bounds",
    "total_distortion_bound",
    "min_sampling_rate",
    "bounds_report",
    "to_db",
]


def to_db(value: float) -> float:
    """``10 log10(value)``, with ``-inf`` for zero and ``nan`` passthrough."""
    if value is None or np.isnan(value):
        return float("nan")
    if value <= 0:
        return float("-inf")
    return float(10.0 * np.log10(value))


@dataclass(frozen=True)
class OversamplingReport:
    """
    Measured oversampling and its upper bounds.

    ``os_upper_aif`` uses ``E[b_n] + c_max``; ``os_upper_aif_mean_c`` uses
    ``E[b_n] + E[c_n]`` when amplitudes are known; ``os_upper_if`` is only
    defined for fixed-bias trains.
    """

    os_empirical: float
    os_upper_aif: float
    os_upper_aif_mean_c: float | None
    os_upper_if: float | None


def oversampling(train: SpikeTrain, omega: float, amplitudes=None) -> OversamplingReport:
    """
    Average oversampling ``(1 / E[T_n]) * pi / Omega`` and its bounds.

    Parameters
    ----------
    train : SpikeTrain
    omega : float
    amplitudes : array_like, optional
        Per-interval amplitudes for the ``E[c_n]`` form. Defaults to the
        predictor's estimates of an adaptive train.
    """
    if train.n_intervals < 1:
        raise ValueError("need at least two firing times")
    nyq = np.pi / omega
    kd = train.kappa * train.delta
    b = train.biases
    os_emp = nyq / float(np.mean(train.intervals))
    upper = (float(np.mean(b)) + train.c_max) / kd * nyq
    if amplitudes is None and len(train.amplitude_estimates) == train.n_intervals:
        amplitudes = train.amplitude_estimates
    mean_c = None
    if amplitudes is not None:
        mean_c = (float(np.mean(b)) + float(np.mean(amplitudes))) / kd * nyq
    os_if = (float(b[0]) + train.c_max) / kd * nyq if train.mode == "IFTEM" else None
    return OversamplingReport(os_emp, upper, mean_c, os_if)


@dataclass(frozen=True)
class SamplingBound:
    """
    Per-window sampling-distortion bounds.

    ``per_window`` uses the actual sample counts ``L_i``; ``per_window_simplified``
    uses ``L_i >= |W_i| Omega / (pi r_i)``. Non-contractive windows get 1.
    """

    per_window: list
    mean: float
    per_window_simplified: list
    mean_simplified: float
    fs_min: float | None
    note: str = ""


def sampling_distortion_bound(plan) -> SamplingBound:
    """Bounds ``r_i^(2 (L_i + 1))`` on each window's normalized error."""
    per, cor = [], []
    omega = plan.omega
    for w in plan.windows:
        r = w.ratio
        if r < 1:
            per.append(float(r ** (2 * (w.n_samples + 1))))
            l_min = (w.t_end - w.t_start) / r * omega / np.pi
            cor.append(float(r ** (2 * (l_min + 1))))
        else:
            per.append(1.0)
            cor.append(1.0)
    fs_min = min_sampling_rate(plan)
    note = "" if fs_min is not None else "f_s_min undefined: plan has non-contractive windows"
    return SamplingBound(per, float(np.mean(per)), cor, float(np.mean(cor)), fs_min, note)


def min_sampling_rate(plan) -> float | None:
    """``Omega / (pi max_i r_i)`` when every window is contractive."""
    r_max = max(w.ratio for w in plan.windows)
    if not r_max < 1:
        return None
    return plan.omega / (np.pi * r_max)


def geometric_gain(r: float, n_samples: float) -> float:
    """``((1 - r^(L+1)) / (1 - r))^2``."""
    return float(((1.0 - r ** (n_samples + 1)) / (1.0 - r)) ** 2)


@dataclass(frozen=True)
class QuantBound:
    """Quantization-MSE bounds for one segment."""

    time_average: float
    bias_form: float | None


def quant_mse_bound_segment(mean_T: float, step: float, n_samples: float, r: float,
                            omega: float, kappa_delta: float, mean_b: float | None = None,
                            mean_c: float | None = None) -> QuantBound | None:
    """
    Upper bounds on ``(1/|W|) ||x_q - x_s||^2`` for one segment.

    The time-average form is
    ``G (step^2 / 12) (Omega / pi) (kappa delta)^2 / E[T]^3`` and the bias
    form replaces ``(kappa delta)^3 / E[T]^3`` by ``(E[b] + E[c])^3``, where
    ``G = ((1 - r^(L+1)) / (1 - r))^2``.

    Returns
    -------
    QuantBound or None
        ``None`` when ``r >= 1`` (no bound).
    """
    if not r < 1:
        return None
    base = geometric_gain(r, n_samples) * step ** 2 / 12.0 * omega / np.pi
    time_avg = base * kappa_delta ** 2 / mean_T ** 3
    bias_form = None
    if mean_b is not None and mean_c is not None:
        bias_form = base * (mean_b + mean_c) ** 3 / kappa_delta
    return QuantBound(float(time_avg), None if bias_form is None else float(bias_form))


def if_quant_mse_bound(bias: float, c_max: float, r: float, step: float, omega: float,
                       kappa_delta: float) -> float | None:
    """Fixed-bias closed form ``Omega (b+c) / (pi kappa delta) ((b+c)/(1-r))^2 step^2 / 12``."""
    if not r < 1:
        return None
    s = bias + c_max
    return float(omega * s / (np.pi * kappa_delta) * (s / (1.0 - r)) ** 2 * step ** 2 / 12.0)


@dataclass(frozen=True)
class SegmentStats:
    start: int
    stop: int
    n_samples: int
    mean_T: float
    mean_b: float
    mean_c: float | None
    ratio: float


def segment_stats(train: SpikeTrain, plan, amplitudes=None) -> list[SegmentStats]:
    """Per-window means of ``T_n``, ``b_n`` and ``c_n``."""
    if amplitudes is None and len(train.amplitude_estimates) == train.n_intervals:
        amplitudes = train.amplitude_estimates
    if amplitudes is None and train.mode == "IFTEM":
        amplitudes = np.full(train.n_intervals, train.c_max)
    T, b = train.intervals, train.biases
    out = []
    for w in plan.windows:
        s = slice(w.start, w.stop)
        mc = None if amplitudes is None else float(np.mean(np.asarray(amplitudes)[s]))
        out.append(SegmentStats(w.start, w.stop, w.n_samples, float(np.mean(T[s])),
                                float(np.mean(b[s])), mc, w.ratio))
    return out


def _step_for(spec, start: int) -> float:
    for (a, b), s in zip(spec.segments, spec.steps):
        if a <= start < b:
            return float(s)
    raise ValueError("window not covered by quantizer segments")


def quant_bounds(train: SpikeTrain, plan, spec, omega: float, amplitudes=None) -> list:
    """Per-window :class:`QuantBound` (``None`` for non-contractive windows)."""
    kd = train.kappa * train.delta
    return [quant_mse_bound_segment(st.mean_T, _step_for(spec, st.start), st.n_samples,
                                    st.ratio, omega, kd, st.mean_b, st.mean_c)
            for st in segment_stats(train, plan, amplitudes)]


@dataclass(frozen=True)
class TotalBound:
    """Sampling plus quantization distortion bounds."""

    d_s: float
    d_q: float
    total: float
    d_s_fs_min: float | None
    d_q_fs_min: float | None
    fs_min: float | None


def total_distortion_bound(plan, spec, train: SpikeTrain, omega: float,
                           amplitudes=None) -> TotalBound:
    """
    Sum of the mean sampling bound and the mean quantization bound.

    The ``*_fs_min`` fields evaluate both terms with the lowest admissible
    rate ``f_s_min = Omega / (pi max r_i)`` in place of the measured one;
    they are ``None`` when some window is non-contractive.
    """
    sb = sampling_distortion_bound(plan)
    qb = quant_bounds(train, plan, spec, omega, amplitudes)
    dq_terms = [np.inf if q is None else q.time_average for q in qb]
    d_q = float(np.mean(dq_terms))
    fs = sb.fs_min
    d_s_fs = d_q_fs = None
    if fs is not None:
        r_max = max(w.ratio for w in plan.windows)
        kd = train.kappa * train.delta
        d_s_fs = float(np.mean([r_max ** (2 * (w.n_samples + 1)) for w in plan.windows]))
        d_q_fs = float(np.mean([
            geometric_gain(w.ratio, w.n_samples) * _step_for(spec, w.start) ** 2 / 12.0
            * omega / np.pi * kd ** 2 * fs ** 3 for w in plan.windows]))
    return TotalBound(sb.mean, d_q, sb.mean + d_q, d_s_fs, d_q_fs, fs)


@dataclass
class BoundsReport:
    """All bounds for one train, with optional measured rate/MSE point."""

    os_empirical: float
    os_upper: float
    os_upper_mean_c: float | None
    os_upper_if: float | None
    sampling_per_window: list
    sampling_mean: float
    sampling_simplified_mean: float
    quant_time_average: list = field(default_factory=list)
    quant_bias_form: list = field(default_factory=list)
    quant_if_closed_form: float | None = None
    total: dict | None = None
    rate_point: tuple | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), default=float)

    def to_row(self) -> dict:
        """Flat summary suited to one CSV row."""
        row = {
            "os_empirical": self.os_empirical,
            "os_upper": self.os_upper,
            "os_upper_mean_c": self.os_upper_mean_c,
            "os_upper_if": self.os_upper_if,
            "sampling_bound_db": to_db(self.sampling_mean),
            "sampling_simplified_db": to_db(self.sampling_simplified_mean),
        }
        finite = [v for v in self.quant_time_average if v is not None]
        row["quant_bound_db"] = to_db(float(np.mean(finite))) if finite else float("nan")
        if self.total is not None:
            row["total_bound_db"] = to_db(self.total["total"])
        if self.rate_point is not None:
            row["bits"], row["mse_db"] = self.rate_point
        return row


def bounds_report(train: SpikeTrain, omega: float, plan=None, spec=None, amplitudes=None,
                  rate_point=None) -> BoundsReport:
    """Collect every available bound for ``train``."""
    from .decoder import plan_segments

    plan = plan_segments(train, omega) if plan is None else plan
    osr = oversampling(train, omega, amplitudes)
    sb = sampling_distortion_bound(plan)
    rep = BoundsReport(osr.os_empirical, osr.os_upper_aif, osr.os_upper_aif_mean_c,
                       osr.os_upper_if, sb.per_window, sb.mean, sb.mean_simplified,
                       rate_point=rate_point)
    if spec is not None:
        qb = quant_bounds(train, plan, spec, omega, amplitudes)
        rep.quant_time_average = [None if q is None else q.time_average for q in qb]
        rep.quant_bias_form = [None if q is None else q.bias_form for q in qb]
        if train.mode == "IFTEM":
            r_c = train.kappa * train.delta / (train.biases[0] - train.c_max) * omega / np.pi
            rep.quant_if_closed_form = if_quant_mse_bound(
                float(train.biases[0]), train.c_max, r_c, spec.step, omega,
                train.kappa * train.delta)
        rep.total = asdict(total_distortion_bound(plan, spec, train, omega, amplitudes))
    return rep
