"""
Uniform quantization of spike-time differences and of periodic samples.

Time differences ``T_n`` are quantized with ``K`` uniform bins over a range
``[T_min, T_max]``. The classic scheme uses one range for the whole train,
derived from the global bias and amplitude maxima; the dynamic scheme uses
one range per decoding window, derived from that window's maxima, which
shrinks the step where the signal is quiet.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .encoder import BiasGrid, SpikeTrain

__all__ = [
    "QuantMode",
    "QuantizerSpec",
    "QuantizedTrain",
    "DequantizeError",
    "fixed_step",
    "if_step",
    "classic_spec",
    "dynamic_spec",
    "quantize",
    "dequantize",
    "periodic_quantize",
]


class QuantMode(enum.IntEnum):
    CLASSIC_TIME = 0
    DYNAMIC_TIME = 1
    PERIODIC_AMPLITUDE = 2


class DequantizeError(ValueError):
    """Raised when a code lies outside the quantizer's level range."""


def fixed_step(kappa_delta: float, beta: float, b_max: float, c_max: float, levels: int) -> float:
    """
    Step for adaptive trains:
    ``kappa delta (b_max + c_max - beta) / (beta (b_max + c_max) K)``.

    This is the span of ``[kappa delta / (b_max + c_max), kappa delta / beta]``
    divided by ``K``.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    return kappa_delta * (b_max + c_max - beta) / (beta * (b_max + c_max) * levels)


def if_step(kappa_delta: float, bias: float, c_max: float, levels: int) -> float:
    """Step for fixed-bias trains: ``kappa delta / ((b+c)(b-c)) * 2 c / K``."""
    return kappa_delta / ((bias + c_max) * (bias - c_max)) * 2 * c_max / levels


@dataclass(frozen=True)
class QuantizerSpec:
    """
    Uniform quantizer description.

    Attributes
    ----------
    levels : int
        Number of bins ``K``.
    mode : QuantMode
    ranges : tuple of (float, float)
        ``(lo, hi)`` per segment; a single entry for classic and amplitude
        modes.
    segments : tuple of (int, int)
        Interval index ranges ``[start, stop)`` matching ``ranges``.
    """

    levels: int
    mode: QuantMode
    ranges: tuple
    segments: tuple

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if len(self.ranges) != len(self.segments):
            raise ValueError("one range per segment")

    @property
    def steps(self) -> np.ndarray:
        """Per-segment step ``(hi - lo) / K``."""
        r = np.asarray(self.ranges, dtype=float).reshape(-1, 2)
        return (r[:, 1] - r[:, 0]) / self.levels

    @property
    def step(self) -> float:
        """The (first) segment's step; the only one for classic modes."""
        return float(self.steps[0])

    @property
    def bits(self) -> int:
        return max(int(np.ceil(np.log2(self.levels))), 1) if self.levels > 1 else 1


@dataclass(frozen=True, eq=False)
class QuantizedTrain:
    """Integer-coded time differences and everything needed to rebuild the train."""

    t0: float
    indices: np.ndarray
    spec: QuantizerSpec
    bias_indices: np.ndarray
    bias_grid: BiasGrid
    kappa: float
    delta: float
    train_mode: str
    c_max: float
    beta: float | None = None
    amplitude_estimates: np.ndarray = field(default_factory=lambda: np.zeros(0))
    saturated: int = 0

    @property
    def segment_boundaries(self):
        return self.spec.segments


def classic_spec(train: SpikeTrain, levels: int, beta: float | None = None) -> QuantizerSpec:
    """
    Single-range quantizer for a whole train.

    Adaptive trains use ``[kappa delta/(b_max + c_max), kappa delta/beta]``
    with ``b_max`` the top of the bias grid. Fixed-bias trains use
    ``[kappa delta/(b + c_max), kappa delta/(b - c_max)]``.
    """
    kd = train.kappa * train.delta
    n = train.n_intervals
    if train.mode == "AIFTEM":
        beta = train.beta if beta is None else beta
        if beta is None or beta <= 0:
            raise ValueError("beta must be positive")
        lo, hi = kd / (train.bias_grid.b_max + train.c_max), kd / beta
    else:
        b = float(train.bias_grid.b_min)
        lo, hi = kd / (b + train.c_max), kd / (b - train.c_max)
    return QuantizerSpec(int(levels), QuantMode.CLASSIC_TIME, ((lo, hi),), ((0, n),))


def dynamic_spec(train: SpikeTrain, plan, levels: int, beta: float | None = None,
                 amplitude_source="estimated", t_max_rule: str = "beta") -> QuantizerSpec:
    """
    One quantizer range per decoding window.

    Parameters
    ----------
    train : SpikeTrain
        Adaptive train.
    plan : SegmentPlan
        Windows defining the segments.
    levels : int
    beta : float, optional
        Defaults to the train's ``beta``.
    amplitude_source : "estimated" or array_like
        ``"estimated"`` uses the predictor's amplitude estimates; an array
        gives per-interval amplitudes (e.g. the true window maxima).
    t_max_rule : {"beta", "estimated"}
        Upper end of each range. ``"beta"`` uses ``kappa delta / beta``;
        ``"estimated"`` uses ``kappa delta / min_n (b_n - c_n)`` over the
        segment, with ``c_n`` from ``amplitude_source``.
    """
    beta = train.beta if beta is None else beta
    if beta is None or beta <= 0:
        raise ValueError("beta must be positive")
    if isinstance(amplitude_source, str):
        if amplitude_source != "estimated":
            raise ValueError("amplitude_source must be 'estimated' or an array")
        amps = np.asarray(train.amplitude_estimates, dtype=float)
    else:
        amps = np.asarray(amplitude_source, dtype=float)
    if amps.shape != (train.n_intervals,):
        raise ValueError("one amplitude per interval required")
    kd = train.kappa * train.delta
    b = train.biases
    ranges, segments = [], []
    for start, stop in plan.boundaries:
        if stop <= start:
            raise ValueError("segment with zero intervals")
        b_top = float(np.max(b[start:stop]))
        c_top = float(np.max(amps[start:stop]))
        lo = kd / (b_top + c_top)
        if t_max_rule == "beta":
            hi = kd / beta
        elif t_max_rule == "estimated":
            margin = float(np.min(b[start:stop] - amps[start:stop]))
            hi = kd / margin if margin > 0 else kd / beta
        else:
            raise ValueError(f"unknown t_max_rule {t_max_rule!r}")
        ranges.append((lo, hi))
        segments.append((int(start), int(stop)))
    return QuantizerSpec(int(levels), QuantMode.DYNAMIC_TIME, tuple(ranges), tuple(segments))


def _segment_arrays(spec: QuantizerSpec, n: int):
    lo = np.empty(n)
    step = np.empty(n)
    for (a, b), (r_lo, _), s in zip(spec.segments, spec.ranges, spec.steps):
        lo[a:b] = r_lo
        step[a:b] = s
    return lo, step


def quantize(train: SpikeTrain, spec: QuantizerSpec) -> QuantizedTrain:
    """
    Code every ``T_n`` as ``clamp(floor((T_n - T_min) / step), 0, K - 1)``.

    Values outside the range saturate to the end bins and are counted in
    ``saturated``.
    """
    if spec.mode is QuantMode.PERIODIC_AMPLITUDE:
        raise ValueError("amplitude specs quantize samples, see periodic_quantize")
    n = train.n_intervals
    if spec.segments[0][0] != 0 or spec.segments[-1][1] != n:
        raise ValueError("quantizer segments do not cover the train")
    T = train.intervals
    lo, step = _segment_arrays(spec, n)
    raw = np.floor((T - lo) / step)
    idx = np.clip(raw, 0, spec.levels - 1).astype(np.int64)
    saturated = int(np.count_nonzero(raw != idx))
    return QuantizedTrain(train.t0, idx, spec, train.bias_indices.copy(), train.bias_grid,
                          train.kappa, train.delta, train.mode, train.c_max, train.beta,
                          np.asarray(train.amplitude_estimates, dtype=float).copy(), saturated)


def dequantize(qtrain: QuantizedTrain) -> SpikeTrain:
    """
    Rebuild a train from bin midpoints ``T_min + (index + 1/2) step``.

    Times are the cumulative sum of the dequantized differences from ``t_0``.
    """
    idx = np.asarray(qtrain.indices)
    bad = np.flatnonzero((idx < 0) | (idx >= qtrain.spec.levels))
    if bad.size:
        raise DequantizeError(f"index {int(idx[bad[0]])} at position {int(bad[0])} "
                              f"outside [0, {qtrain.spec.levels - 1}]")
    bad = np.flatnonzero((qtrain.bias_indices < 0) | (qtrain.bias_indices >= qtrain.bias_grid.levels))
    if bad.size:
        raise DequantizeError(f"bias index out of range at position {int(bad[0])}")
    lo, step = _segment_arrays(qtrain.spec, len(idx))
    T = lo + (idx + 0.5) * step
    times = qtrain.t0 + np.concatenate(([0.0], np.cumsum(T)))
    times[0] = qtrain.t0
    return SpikeTrain(times, np.asarray(qtrain.bias_indices, dtype=np.int64), qtrain.bias_grid,
                      qtrain.kappa, qtrain.delta, qtrain.train_mode, qtrain.c_max,
                      qtrain.amplitude_estimates, qtrain.beta)


def periodic_quantize(samples, c_max: float, levels: int) -> np.ndarray:
    """
    Midrise uniform quantization over ``[-c_max, c_max]`` with ``2 c_max / K`` steps.

    Samples outside the range saturate to the end bins.
    """
    x = np.asarray(samples, dtype=float)
    step = 2.0 * c_max / levels
    idx = np.clip(np.floor((x + c_max) / step), 0, levels - 1)
    return -c_max + (idx + 0.5) * step
