"""
Integrate-and-fire time encoding with fixed (IF-TEM) or adaptive (AIF-TEM) bias.

The encoder integrates ``(x(t) + b_n) / kappa`` from the previous firing
time and fires when the integral reaches ``delta``. In adaptive mode the
bias of the next interval is chosen by a max-amplitude predictor (MAP)
that estimates the local signal amplitude from the interval lengths
already observed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .signal_model import (
    DENSE_POINTS_PER_NYQUIST,
    BandlimitedSignal,
    SignalKind,
    SignalRangeError,
    antiderivative,
    dense_max,
    eval_signal,
    integrate,
)

__all__ = [
    "ConfigurationError",
    "EncodingTruncatedWarning",
    "BiasGrid",
    "IFTEM",
    "AIFTEM",
    "EncoderConfig",
    "SpikeTrain",
    "MapState",
    "initial_map_state",
    "map_update",
    "genie_bias",
    "encode",
    "encode_iftem",
    "encode_aiftem",
    "default_sim_step",
    "dense_abs",
    "true_window_amplitudes",
]

DEFAULT_BIAS_LEVELS = 256


class ConfigurationError(ValueError):
    """Raised for encoder settings that cannot produce a valid train."""


class EncodingTruncatedWarning(RuntimeWarning):
    """The integrator stalled before the end of the requested duration."""


@dataclass(frozen=True)
class BiasGrid:
    """
    Uniform grid of admissible bias values ``b_min + k * step``.

    Attributes
    ----------
    b_min : float
        Lowest bias.
    step : float
        Grid spacing (0 for a single-level grid).
    levels : int
        Number of grid points.
    """

    b_min: float
    step: float
    levels: int

    def __post_init__(self):
        if self.levels < 1 or self.step < 0 or (self.levels > 1 and self.step == 0):
            raise ConfigurationError("invalid bias grid")

    @property
    def b_max(self) -> float:
        return self.b_min + (self.levels - 1) * self.step

    @classmethod
    def default(cls, c_max: float, beta: float, levels: int = DEFAULT_BIAS_LEVELS) -> "BiasGrid":
        """Grid from ``beta`` to one step above ``c_max + beta``; a single level when ``c_max`` is 0."""
        if levels < 3:
            raise ConfigurationError("a default bias grid needs at least 3 levels")
        if c_max == 0:
            return cls.constant(beta)
        return cls(float(beta), float(c_max) / (levels - 2), int(levels))

    @classmethod
    def constant(cls, bias: float) -> "BiasGrid":
        return cls(float(bias), 0.0, 1)

    def clamped(self, b_max: float) -> "BiasGrid":
        """Same grid with every level above ``b_max`` removed."""
        if self.step == 0:
            return self
        top = int(math.floor((b_max - self.b_min) / self.step + 1e-9))
        if top < 0:
            raise ConfigurationError("b_max below the lowest grid level")
        return replace(self, levels=min(self.levels, top + 1))

    def value(self, index):
        """Bias value(s) for grid index/indices."""
        return self.b_min + np.asarray(index) * self.step if np.ndim(index) else \
            self.b_min + int(index) * self.step

    def snap_up(self, bias: float) -> int:
        """Index of the smallest grid value ``>= bias``, clamped to the grid."""
        if self.step == 0:
            return 0
        k = math.ceil((bias - self.b_min) / self.step - 1e-9)
        return int(min(max(k, 0), self.levels - 1))

    def to_dict(self) -> dict:
        return {"min": self.b_min, "max": self.b_max, "step": self.step, "levels": self.levels}

    @classmethod
    def from_dict(cls, d: dict) -> "BiasGrid":
        return cls(float(d["min"]), float(d["step"]), int(d["levels"]))


@dataclass(frozen=True)
class IFTEM:
    """Fixed-bias mode."""

    bias: float


@dataclass(frozen=True)
class AIFTEM:
    """
    Adaptive-bias mode.

    Attributes
    ----------
    beta : float
        Margin added to the predicted amplitude.
    window : int
        Number of past intervals whose largest amplitude observation feeds
        the predictor.
    alpha1, alpha2 : float
        EWMA weight and standard-deviation gain of the predictor.
    bias_grid : BiasGrid, optional
        Admissible biases. Defaults to :meth:`BiasGrid.default`.
    b_max : float, optional
        Drop grid levels above this value.
    bias_source : {"map", "genie"}
        ``"genie"`` replaces the predictor by the true local maximum.
    genie_lookahead : float, optional
        Look-ahead of the genie in seconds (default ``kappa delta / beta``).
    """

    beta: float
    window: int = 1
    alpha1: float = 0.98
    alpha2: float = 0.17
    bias_grid: BiasGrid | None = None
    b_max: float | None = None
    bias_source: str = "map"
    genie_lookahead: float | None = None


@dataclass(frozen=True)
class EncoderConfig:
    """
    Encoder parameters.

    Attributes
    ----------
    kappa, delta : float
        Integrator scale and firing threshold.
    mode : IFTEM or AIFTEM
    sim_step : float, optional
        Integration grid step. Defaults to :func:`default_sim_step`.
    t_start : float, optional
        Reference time ``t_0``. Defaults to the start of the signal horizon.
    refine : bool
        Polish each grid-detected firing time with the exact integral.
    """

    kappa: float
    delta: float
    mode: IFTEM | AIFTEM
    sim_step: float | None = None
    t_start: float | None = None
    refine: bool = True


@dataclass(frozen=True, eq=False)
class SpikeTrain:
    """
    Firing times and the per-interval biases that produced them.

    Interval ``n`` (1-based in the maths, 0-based here) spans
    ``(times[n], times[n + 1]]`` and uses bias ``biases[n]``.
    """

    times: np.ndarray
    bias_indices: np.ndarray
    bias_grid: BiasGrid
    kappa: float
    delta: float
    mode: str
    c_max: float
    amplitude_estimates: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta: float | None = None
    map_params: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def n_intervals(self) -> int:
        return len(self.times) - 1

    @property
    def biases(self) -> np.ndarray:
        return self.bias_grid.b_min + self.bias_indices * self.bias_grid.step

    @property
    def intervals(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.times[1:] + self.times[:-1])

    @property
    def integrals(self) -> np.ndarray:
        """Signal integrals ``P_n = kappa delta - b_n T_n`` over each interval."""
        return self.kappa * self.delta - self.biases * self.intervals

    def with_times(self, times) -> "SpikeTrain":
        return replace(self, times=np.asarray(times, dtype=float), diagnostics={})


def default_sim_step(kappa: float, delta: float, b_ref: float, c_max: float) -> float:
    """At least 50 grid points inside the shortest possible interval."""
    return kappa * delta / (50.0 * (b_ref + c_max))


# ---------------------------------------------------------------------------
# Max-amplitude predictor


@dataclass(frozen=True)
class MapState:
    """
    State of the max-amplitude predictor.

    ``c_hat`` is the EWMA of the amplitude observations, ``running_mean``,
    ``running_m2`` and ``count`` are Welford accumulators over the history
    of ``c_hat``, and ``recent`` keeps the last ``window`` observations.
    """

    alpha1: float
    alpha2: float
    beta: float
    window: int
    bias_grid: BiasGrid
    c_hat: float
    running_mean: float = 0.0
    running_m2: float = 0.0
    count: int = 0
    recent: tuple = ()
    prediction: float = 0.0
    bias_index: int = 0
    last_z: float = float("nan")

    @property
    def std(self) -> float:
        return math.sqrt(self.running_m2 / self.count) if self.count else 0.0

    @property
    def bias(self) -> float:
        return self.bias_grid.value(self.bias_index)


def initial_map_state(c_max: float, beta: float, grid: BiasGrid, window: int = 1,
                      alpha1: float = 0.98, alpha2: float = 0.17) -> MapState:
    """Predictor state before the first firing: ``c_hat = c_max``, bias above ``c_max + beta``."""
    if beta <= 0:
        raise ConfigurationError("beta must be positive")
    if int(window) != window or window < 1:
        raise ConfigurationError("window must be an integer >= 1")
    if not (0 < alpha1 <= 1) or alpha2 < 0:
        raise ConfigurationError("need 0 < alpha1 <= 1 and alpha2 >= 0")
    return MapState(alpha1, alpha2, beta, int(window), grid, float(c_max),
                    prediction=float(c_max), bias_index=grid.snap_up(c_max + beta))


def map_update(state: MapState, T_n: float, b_n: float, kappa: float,
               delta: float) -> tuple[MapState, float]:
    """
    Feed one interval to the predictor.

    Parameters
    ----------
    state : MapState
    T_n : float
        Length of the interval that just ended.
    b_n : float
        Bias used on that interval.
    kappa, delta : float

    Returns
    -------
    new_state : MapState
    next_bias : float
        Grid bias for the next interval.
    """
    if T_n <= 0:
        raise ValueError("interval length must be positive")
    z = -b_n + kappa * delta / T_n
    recent = (state.recent + (abs(z),))[-state.window:]
    obs = max(recent)
    c_hat = state.alpha1 * obs + (1.0 - state.alpha1) * state.c_hat
    count = state.count + 1
    d = c_hat - state.running_mean
    mean = state.running_mean + d / count
    m2 = state.running_m2 + d * (c_hat - mean)
    s = math.sqrt(m2 / count)
    prediction = c_hat + state.alpha2 * s
    idx = state.bias_grid.snap_up(prediction + state.beta)
    new = replace(state, c_hat=c_hat, running_mean=mean, running_m2=m2, count=count,
                  recent=recent, prediction=prediction, bias_index=idx, last_z=z)
    return new, new.bias


def genie_bias(signal: BandlimitedSignal, t_prev: float, lookahead: float, beta: float,
               grid: BiasGrid | None = None) -> float:
    """
    Bias from the true maximum of ``|x|`` over ``[t_prev, t_prev + lookahead]``.

    The result is ``max |x| + beta``, snapped up to ``grid`` when given.
    """
    _, bias, _ = _genie(signal, t_prev, lookahead, beta, grid)
    return bias


def _genie(signal, t_prev, lookahead, beta, grid):
    lo, hi = signal.horizon
    if t_prev < lo or t_prev + lookahead > hi * (1 + 1e-12) + 1e-12:
        raise SignalRangeError("genie window outside horizon")
    amp = dense_max(signal, t_prev, min(t_prev + lookahead, hi))
    if grid is None:
        return 0, amp + beta, amp
    idx = grid.snap_up(amp + beta)
    return idx, grid.value(idx), amp


# ---------------------------------------------------------------------------
# Integrator


def _quadratic_crossing(f0: float, f1: float, h: float, need: float) -> float:
    """Sub-step offset where the linearly interpolated integrand accumulates ``need``."""
    s = (f1 - f0) / h
    disc = max(f0 * f0 + 2.0 * s * need, 0.0)
    den = f0 + math.sqrt(disc)
    if den <= 0:
        return h
    return min(max(2.0 * need / den, 0.0), h)


class _Integrator:
    """Firing-time search for one signal and threshold."""

    def __init__(self, signal: BandlimitedSignal, kd: float, dt: float, t_end: float, refine: bool):
        self.signal = signal
        self.kd = kd
        self.dt = dt
        self.t_end = t_end
        self.refine = refine
        self.closed = signal.kind is not SignalKind.SAMPLED_AUDIO

    def _area(self, t_prev: float, a_prev: float, t: float) -> float:
        if self.closed:
            return float(antiderivative(self.signal, t)) - a_prev
        return integrate(self.signal, t_prev, t)

    def next_firing(self, t_prev: float, b: float):
        """Return ``(t_fire or None, integrand_went_negative)``."""
        sig, dt, kd = self.signal, self.dt, self.kd
        acc = 0.0
        t_left = t_prev
        f_left = float(eval_signal(sig, t_prev)) + b
        negative = f_left < 0
        m = int(1.25 * kd / (max(b, 1e-300) * dt)) + 8
        while t_left < self.t_end:
            n = max(min(m, int(math.ceil((self.t_end - t_left) / dt))), 1)
            tg = t_left + dt * np.arange(1, n + 1)
            tg[-1] = min(tg[-1], self.t_end)
            f = eval_signal(sig, tg) + b
            fl = np.concatenate(([f_left], f))
            h = np.diff(np.concatenate(([t_left], tg)))
            cum = acc + np.cumsum(0.5 * (fl[:-1] + fl[1:]) * h)
            hits = np.flatnonzero(cum >= kd)
            if not hits.size and tg[-1] >= self.t_end and cum[-1] >= kd * (1 - 1e-9):
                # Threshold reached at the window end up to rounding.
                return float(self.t_end), negative or bool(np.any(f < 0))
            if hits.size:
                k = int(hits[0])
                negative = negative or bool(np.any(f[:k + 1] < 0))
                before = acc if k == 0 else cum[k - 1]
                cell = t_left if k == 0 else tg[k - 1]
                tau = _quadratic_crossing(fl[k], fl[k + 1], h[k], kd - before)
                t_fire = cell + tau
                if self.refine:
                    t_fire = self._polish(t_prev, b, t_fire, max(cell - dt, t_prev),
                                          min(cell + h[k] + dt, self.t_end))
                if t_fire <= t_prev:
                    t_fire = np.nextafter(t_prev, np.inf)
                return float(t_fire), negative
            negative = negative or bool(np.any(f < 0))
            acc = cum[-1]
            t_left = tg[-1]
            f_left = f[-1]
            m *= 2
        return None, negative

    def _polish(self, t_prev, b, t_guess, lo, hi):
        """Newton iterations on the exact integral, bracketed fallback."""
        a_prev = float(antiderivative(self.signal, t_prev)) if self.closed else 0.0

        def F(t):
            return self._area(t_prev, a_prev, t) + b * (t - t_prev) - self.kd

        t = t_guess
        for _ in range(6):
            fp = float(eval_signal(self.signal, t)) + b
            if fp <= 0:
                break
            step = F(t) / fp
            t_new = t - step
            if not lo <= t_new <= hi:
                break
            t = t_new
            if abs(step) <= 4 * np.finfo(float).eps * max(1.0, abs(t)):
                return t
        f_lo, f_hi = F(lo), F(hi)
        if f_lo < 0 <= f_hi:
            return brentq(F, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        return t_guess


def _resolve_window(signal, config, duration):
    lo, hi = signal.horizon
    t_start = lo if config.t_start is None else float(config.t_start)
    if duration is None:
        t_end = hi
    else:
        t_end = t_start + float(duration)
    slack = 1e-12 * max(1.0, abs(lo), abs(hi))
    if t_start < lo - slack or t_end > hi + slack or t_end <= t_start:
        raise SignalRangeError("encoding window outside signal horizon")
    return t_start, min(t_end, hi)


def _check_step(kd, dt, b_ref, c_max):
    if dt <= 0:
        raise ConfigurationError("sim_step must be positive")
    if dt > kd / (10.0 * (b_ref + c_max)) * (1 + 1e-12):
        raise ConfigurationError(
            f"sim_step {dt:g} too coarse; must be <= kappa*delta/(10*(b+c_max)) = "
            f"{kd / (10.0 * (b_ref + c_max)):g}")


def _run(signal, config, t_start, t_end, dt, first, step_bias, t_upper):
    kd = config.kappa * config.delta
    integ = _Integrator(signal, kd, dt, t_end, config.refine)
    times = [t_start]
    idxs, ests, negative = [], [], []
    idx, b, est = first
    t_prev = t_start
    while True:
        t_fire, neg = integ.next_firing(t_prev, b)
        if t_fire is None:
            break
        if neg:
            negative.append(len(idxs))
        times.append(t_fire)
        idxs.append(idx)
        ests.append(est)
        idx, b, est = step_bias(t_prev, t_fire, b)
        t_prev = t_fire
    partial = t_end - t_prev
    if partial > t_upper(b) * (1 + 1e-9):
        warnings.warn(f"integrator did not fire during the final {partial:g} s",
                      EncodingTruncatedWarning, stacklevel=3)
    return np.array(times), np.array(idxs, dtype=np.int64), np.array(ests, dtype=float), negative


def encode_iftem(signal: BandlimitedSignal, config: EncoderConfig,
                 duration: float | None = None) -> SpikeTrain:
    """
    Fixed-bias integrate-and-fire encoding.

    Parameters
    ----------
    signal : BandlimitedSignal
    config : EncoderConfig
        ``config.mode`` must be :class:`IFTEM` with ``bias > signal.c_max``.
    duration : float, optional
        Length of the encoded window starting at ``t_0``. Defaults to the
        rest of the horizon.

    Returns
    -------
    SpikeTrain
    """
    mode = config.mode
    if not isinstance(mode, IFTEM):
        raise ConfigurationError("encode_iftem needs an IFTEM mode")
    b, c = float(mode.bias), float(signal.c_max)
    if b <= c:
        raise ConfigurationError(f"bias {b} must exceed c_max {c}")
    kd = config.kappa * config.delta
    dt = config.sim_step if config.sim_step is not None else default_sim_step(
        config.kappa, config.delta, b, c)
    _check_step(kd, dt, b, c)
    t_start, t_end = _resolve_window(signal, config, duration)
    grid = BiasGrid.constant(b)
    times, idxs, _, neg = _run(
        signal, config, t_start, t_end, dt, (0, b, c),
        lambda t_prev, t_fire, b_n: (0, b, c), lambda b_n: kd / (b_n - c))
    return SpikeTrain(times, idxs, grid, config.kappa, config.delta, "IFTEM", c,
                      diagnostics={"negative_integrand": neg, "sim_step": dt})


def encode_aiftem(signal: BandlimitedSignal, config: EncoderConfig,
                  duration: float | None = None) -> SpikeTrain:
    """
    Adaptive-bias integrate-and-fire encoding.

    The first interval uses the grid bias just above ``c_max + beta``. Each
    later bias comes from :func:`map_update` (or :func:`genie_bias` when
    ``bias_source == "genie"``).

    Intervals on which ``x + b_n`` dipped below zero are listed in
    ``train.diagnostics["negative_integrand"]``.
    """
    mode = config.mode
    if not isinstance(mode, AIFTEM):
        raise ConfigurationError("encode_aiftem needs an AIFTEM mode")
    c = float(signal.c_max)
    beta = float(mode.beta)
    if beta <= 0:
        raise ConfigurationError("beta must be positive")
    grid = mode.bias_grid or BiasGrid.default(c, beta)
    if mode.b_max is not None:
        grid = grid.clamped(mode.b_max)
    kd = config.kappa * config.delta
    dt = config.sim_step if config.sim_step is not None else default_sim_step(
        config.kappa, config.delta, grid.b_max, c)
    _check_step(kd, dt, grid.b_max, c)
    t_start, t_end = _resolve_window(signal, config, duration)
    state = initial_map_state(c, beta, grid, mode.window, mode.alpha1, mode.alpha2)
    if state.bias <= c and mode.bias_source == "map":
        raise ConfigurationError("bias grid cannot place the first bias above c_max")
    params = {"alpha1": mode.alpha1, "alpha2": mode.alpha2, "beta": beta, "w": mode.window,
              "bias_source": mode.bias_source}

    if mode.bias_source == "genie":
        look = kd / beta if mode.genie_lookahead is None else float(mode.genie_lookahead)
        hi = signal.horizon[1]

        def genie_at(t):
            return _genie(signal, t, min(look, hi - t), beta, grid)

        first = genie_at(t_start)

        def step_bias(t_prev, t_fire, b_n):
            return genie_at(t_fire)
    elif mode.bias_source == "map":
        first = (state.bias_index, state.bias, state.prediction)
        holder = [state]

        def step_bias(t_prev, t_fire, b_n):
            new, _ = map_update(holder[0], t_fire - t_prev, b_n, config.kappa, config.delta)
            holder[0] = new
            return new.bias_index, new.bias, new.prediction
    else:
        raise ConfigurationError(f"unknown bias source {mode.bias_source!r}")

    times, idxs, ests, neg = _run(signal, config, t_start, t_end, dt, first, step_bias,
                                  lambda b_n: kd / beta)
    return SpikeTrain(times, idxs, grid, config.kappa, config.delta, "AIFTEM", c,
                      amplitude_estimates=ests, beta=beta, map_params=params,
                      diagnostics={"negative_integrand": neg, "sim_step": dt})


def encode(signal: BandlimitedSignal, config: EncoderConfig,
           duration: float | None = None) -> SpikeTrain:
    """Dispatch on ``config.mode``."""
    if isinstance(config.mode, IFTEM):
        return encode_iftem(signal, config, duration)
    return encode_aiftem(signal, config, duration)


def dense_abs(signal: BandlimitedSignal,
              points_per_nyquist: int = 4 * DENSE_POINTS_PER_NYQUIST) -> tuple:
    """Dense grid over the horizon and ``|x|`` on it, for reuse across trains."""
    grid = signal.dense_grid(points_per_nyquist=points_per_nyquist)
    return grid, np.abs(eval_signal(signal, grid))


def true_window_amplitudes(signal: BandlimitedSignal, times, window: int = 1,
                           points_per_nyquist: int = 4 * DENSE_POINTS_PER_NYQUIST,
                           dense: tuple | None = None) -> np.ndarray:
    """
    Dense-grid maximum of ``|x|`` over ``[t_{n-w}, t_n]`` for every interval ``n``.

    Windows reaching before ``t_0`` are truncated at ``t_0``. ``dense`` may
    carry a precomputed ``(grid, |x|)`` pair from :func:`dense_abs`.
    """
    times = np.asarray(times, dtype=float)
    if dense is None:
        grid = signal.dense_grid(times[0], times[-1], points_per_nyquist)
        ax = np.abs(eval_signal(signal, grid))
    else:
        grid, ax = dense
    at_t = np.abs(eval_signal(signal, times))
    pos = np.searchsorted(grid, times)
    per = np.maximum(at_t[:-1], at_t[1:])
    starts, stops = pos[:-1], pos[1:]
    nonempty = stops > starts
    if np.any(nonempty):
        span = ax[: stops[-1]] if stops[-1] > 0 else ax[:1]
        red = np.maximum.reduceat(span, np.minimum(starts, len(span) - 1))
        per = np.where(nonempty, np.maximum(per, red[: len(per)]), per)
    if window == 1:
        return per
    padded = np.concatenate((np.full(window - 1, -np.inf), per))
    return np.lib.stride_tricks.sliding_window_view(padded, window).max(axis=1)
