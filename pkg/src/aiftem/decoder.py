"""
Frame-based reconstruction of band-limited signals from spike trains.

The train is split into windows. Within a window the operator

    A x = sum_n (integral of x over [t_{n-1}, t_n]) g(t - theta_n),
    g(t) = sin(Omega t) / (pi t),

is inverted either by the fixed-point recursion ``x_{l+1} = x_l + A(x - x_l)``
or by a least-squares solve for the pulse weights. Since every iterate is a
finite combination of shifted kernels, the recursion runs entirely on the
weight vector, with interval integrals of ``g`` given by the sine integral.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import sici

from .encoder import SpikeTrain
from .signal_model import BandlimitedSignal, eval_signal, integrate

__all__ = [
    "DecodeError",
    "Window",
    "SegmentPlan",
    "WindowDiagnostics",
    "Reconstruction",
    "ContractionResult",
    "interval_ratios",
    "plan_segments",
    "default_grid",
    "reconstruct",
    "reconstruct_iterative",
    "reconstruct_matrix",
    "reconstruct_from_quantized",
    "contraction_check",
    "kernel",
    "kernel_gram",
]

#: Largest window accepted by the dense least-squares solver.
MAX_MATRIX_SIZE = 4096
#: Window padding in Nyquist intervals.
PAD_NYQUIST = 3.0
#: Residual growth streak that aborts the recursion.
DIVERGENCE_STREAK = 5


class DecodeError(ValueError):
    """Raised for malformed decoder inputs."""


@dataclass(frozen=True)
class Window:
    """
    Contiguous block of intervals ``start .. stop - 1`` (0-based).

    The window covers ``[t_start, t_end] = [times[start], times[stop]]``.
    """

    start: int
    stop: int
    t_start: float
    t_end: float
    ratio: float

    @property
    def n_samples(self) -> int:
        return self.stop - self.start

    @property
    def contractive(self) -> bool:
        return bool(self.ratio < 1.0)


@dataclass(frozen=True, eq=False)
class SegmentPlan:
    """Partition of a train into decoding windows."""

    windows: tuple[Window, ...]
    omega: float
    ratios: np.ndarray

    @property
    def samples_per_window(self) -> list[int]:
        return [w.n_samples for w in self.windows]

    @property
    def nyquist_ratios(self) -> list[float]:
        return [w.ratio for w in self.windows]

    @property
    def boundaries(self) -> list[tuple[int, int]]:
        return [(w.start, w.stop) for w in self.windows]

    def rebind(self, train: SpikeTrain) -> "SegmentPlan":
        """Same index partition with extents taken from another train's times."""
        times = train.times
        wins = tuple(replace(w, t_start=float(times[w.start]), t_end=float(times[w.stop]))
                     for w in self.windows)
        return replace(self, windows=wins)


def interval_ratios(train: SpikeTrain, omega: float, amplitudes=None) -> np.ndarray:
    """
    Per-interval Nyquist ratio ``kappa delta / (b_n - c_n) * Omega / pi``.

    ``c_n`` is taken from ``amplitudes`` when given, else ``b_n - beta`` for
    adaptive trains, else the train's ``c_max``. Non-positive margins give
    ``inf``.
    """
    b = train.biases
    if amplitudes is not None:
        c = np.asarray(amplitudes, dtype=float)
        if c.shape != b.shape:
            raise DecodeError("one amplitude per interval required")
    elif train.mode == "AIFTEM" and train.beta is not None:
        c = b - train.beta
    else:
        c = np.full_like(b, train.c_max)
    margin = b - c
    kd = train.kappa * train.delta
    with np.errstate(divide="ignore"):
        r = np.where(margin > 0, kd / np.where(margin > 0, margin, 1.0) * omega / np.pi, np.inf)
    return r


def _window_starts(train: SpikeTrain, policy: str, size) -> list[int]:
    n = train.n_intervals
    if policy == "single":
        return [0]
    if policy == "fixed-count":
        size = int(size)
        if size < 1:
            raise DecodeError("window size must be >= 1")
        return list(range(0, n, size))
    ends = train.times[1:]
    if policy == "fixed-duration":
        if not size or size <= 0:
            raise DecodeError("window duration must be positive")
        k = np.floor((ends - train.t0) / float(size)).astype(int)
    elif policy == "breakpoints":
        k = np.searchsorted(np.sort(np.asarray(size, dtype=float)), ends, side="left")
    else:
        raise DecodeError(f"unknown segmentation policy {policy!r}")
    starts = [0] + [i for i in range(1, n) if k[i] != k[i - 1]]
    return starts


def plan_segments(train: SpikeTrain, omega: float, policy: str = "single", size=None,
                  amplitudes=None) -> SegmentPlan:
    """
    Split a train into decoding windows.

    Parameters
    ----------
    train : SpikeTrain
    omega : float
        Signal bandwidth in rad/s.
    policy : {"single", "fixed-count", "fixed-duration", "breakpoints"}
        ``"fixed-count"`` uses ``size`` intervals per window,
        ``"fixed-duration"`` uses ``size`` seconds per window and
        ``"breakpoints"`` splits at the times listed in ``size``. An interval
        belongs to the window containing its end time.
    size : int, float or sequence, optional
    amplitudes : array_like, optional
        Per-interval amplitudes for the Nyquist ratios (see
        :func:`interval_ratios`).

    Returns
    -------
    SegmentPlan
    """
    if train.n_intervals < 1:
        raise DecodeError("empty spike train")
    r = interval_ratios(train, omega, amplitudes)
    starts = _window_starts(train, policy, size)
    stops = starts[1:] + [train.n_intervals]
    wins = tuple(Window(a, b, float(train.times[a]), float(train.times[b]), float(np.max(r[a:b])))
                 for a, b in zip(starts, stops))
    return SegmentPlan(wins, float(omega), r)


@dataclass
class WindowDiagnostics:
    """Per-window solver record."""

    start: int
    stop: int
    ratio: float
    contractive: bool
    method: str
    iterations: int = 0
    residuals: list = field(default_factory=list)
    converged: bool = True
    diverged: bool = False

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["ratio"] = float(self.ratio) if np.isfinite(self.ratio) else None
        d["residuals"] = [float(v) for v in self.residuals]
        return d


@dataclass(frozen=True, eq=False)
class Reconstruction:
    """Reconstructed signal on a uniform grid with solver diagnostics."""

    grid: np.ndarray
    values: np.ndarray
    per_window_diagnostics: list
    weights: list = field(default_factory=list)

    def diagnostics_json(self) -> str:
        return json.dumps([d.to_dict() for d in self.per_window_diagnostics], indent=1)

    def export_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x_hat"])
            for t, v in zip(self.grid, self.values):
                w.writerow([repr(float(t)), repr(float(v))])
        return path


def kernel(t, theta, omega: float):
    """Sampling kernel ``g(t - theta) = sin(Omega (t - theta)) / (pi (t - theta))``."""
    return (omega / np.pi) * np.sinc(omega * (np.asarray(t) - theta) / np.pi)


def kernel_gram(times, theta, omega: float) -> np.ndarray:
    """
    Interval integrals of shifted kernels.

    ``G[n, m]`` is the integral of ``g(u - theta[m])`` over
    ``[times[n], times[n + 1]]``.
    """
    times = np.asarray(times, dtype=float)
    theta = np.asarray(theta, dtype=float)
    si = sici(omega * (times[:, None] - theta[None, :]))[0]
    return np.diff(si, axis=0) / np.pi


def default_grid(train: SpikeTrain, omega: float, points_per_nyquist: int = 20) -> np.ndarray:
    """Uniform grid over ``[t_0, t_N]``."""
    step = np.pi / omega / points_per_nyquist
    n = max(int(np.ceil((train.times[-1] - train.t0) / step)), 1)
    return np.linspace(train.t0, train.times[-1], n + 1)


def _residual_grid(t_a: float, t_b: float, omega: float) -> np.ndarray:
    step = np.pi / omega / 8
    n = max(int(np.ceil((t_b - t_a) / step)), 2)
    return np.linspace(t_a, t_b, n + 1)


def _solve_iterative(G, P, basis, max_iters, tol, diag):
    c = P.copy()
    best, best_res = c, np.inf
    prev = np.inf
    streak = 0
    diag.converged = False
    for it in range(1, max_iters + 1):
        d = P - G @ c
        c = c + d
        res = float(np.sqrt(np.mean((basis @ d) ** 2)))
        diag.residuals.append(res)
        diag.iterations = it
        if not np.isfinite(res):
            diag.diverged = True
            return best
        if res <= best_res:
            best, best_res = c, res
        if res < tol:
            diag.converged = True
            return c
        streak = streak + 1 if res > prev else 0
        prev = res
        if streak >= DIVERGENCE_STREAK:
            diag.diverged = True
            return best
    return c


def _solve_window(train, win, omega, method, max_iters, tol):
    a, b = win.start, win.stop
    times = train.times[a:b + 1]
    theta = 0.5 * (times[1:] + times[:-1])
    P = train.integrals[a:b]
    G = kernel_gram(times, theta, omega)
    diag = WindowDiagnostics(a, b, win.ratio, win.contractive, method)
    if method == "matrix":
        if b - a > MAX_MATRIX_SIZE:
            raise DecodeError(f"window of {b - a} samples exceeds matrix cap {MAX_MATRIX_SIZE}")
        coef = np.linalg.lstsq(G, P, rcond=1e-10)[0]
        diag.iterations = 1
    elif method == "iterative":
        n_it = max(b - a, 50) if max_iters is None else int(max_iters)
        basis = kernel(_residual_grid(win.t_start, win.t_end, omega)[:, None], theta, omega)
        coef = _solve_iterative(G, P, basis, n_it, tol, diag)
    else:
        raise DecodeError(f"unknown method {method!r}")
    return theta, coef, diag


def _ramp(u):
    u = np.clip(u, 0.0, 1.0)
    return 0.5 - 0.5 * np.cos(np.pi * u)


def _crossfade(grid, windows, pad):
    weights = []
    last = len(windows) - 1
    for i, w in enumerate(windows):
        rise = np.ones_like(grid) if i == 0 else _ramp((grid - (w.t_start - pad)) / (2 * pad))
        fall = np.ones_like(grid) if i == last else 1.0 - _ramp((grid - (w.t_end - pad)) / (2 * pad))
        weights.append(rise * fall)
    return weights


def reconstruct(train: SpikeTrain, plan: SegmentPlan, omega: float, grid=None,
                method: str = "iterative", max_iters: int | None = None, tol: float = 1e-10,
                workers: int | None = None) -> Reconstruction:
    """
    Reconstruct ``x`` on ``grid`` window by window.

    Parameters
    ----------
    train : SpikeTrain
    plan : SegmentPlan
    omega : float
    grid : array_like, optional
        Output times. Defaults to :func:`default_grid`.
    method : {"iterative", "matrix"}
    max_iters : int, optional
        Recursion cap per window, default ``max(L_i, 50)``.
    tol : float
        Stop when the RMS update over the window falls below ``tol``.
    workers : int, optional
        Solve windows on a thread pool.

    Returns
    -------
    Reconstruction
    """
    if plan.windows[-1].stop != train.n_intervals:
        raise DecodeError("plan does not cover the train")
    grid = default_grid(train, omega) if grid is None else np.asarray(grid, dtype=float)
    pad = PAD_NYQUIST * np.pi / omega

    def work(win):
        return _solve_window(train, win, omega, method, max_iters, tol)

    if workers and workers > 1 and len(plan.windows) > 1:
        with ThreadPoolExecutor(workers) as pool:
            solved = list(pool.map(work, plan.windows))
    else:
        solved = [work(w) for w in plan.windows]
    weights = _crossfade(grid, plan.windows, pad)
    total = np.zeros_like(grid)
    norm = np.zeros_like(grid)
    for (theta, coef, _), wgt in zip(solved, weights):
        m = wgt > 0
        if np.any(m):
            vals = kernel(grid[m][:, None], theta, omega) @ coef
            total[m] += wgt[m] * vals
            norm[m] += wgt[m]
    values = np.where(norm > 0, total / np.where(norm > 0, norm, 1.0), 0.0)
    return Reconstruction(grid, values, [d for _, _, d in solved],
                          [(th, co) for th, co, _ in solved])


def reconstruct_iterative(train, plan, omega, grid=None, max_iters=None, tol=1e-10,
                          workers=None) -> Reconstruction:
    """Fixed-point recursion ``x_{l+1} = x_l + A(x - x_l)`` per window."""
    return reconstruct(train, plan, omega, grid, "iterative", max_iters, tol, workers)


def reconstruct_matrix(train, plan, omega, grid=None, workers=None) -> Reconstruction:
    """Truncated-SVD least-squares solve ``G c = P`` per window."""
    return reconstruct(train, plan, omega, grid, "matrix", workers=workers)


def reconstruct_from_quantized(qtrain, plan: SegmentPlan, omega: float, grid=None,
                               method: str = "iterative", **kwargs) -> Reconstruction:
    """
    Reconstruct from quantized time differences.

    Times are rebuilt from ``t_0`` by cumulative summation of the
    dequantized differences; the plan's index partition is kept.
    """
    from .quantizer import dequantize

    train = dequantize(qtrain)
    return reconstruct(train, plan.rebind(train), omega, grid, method, **kwargs)


@dataclass(frozen=True)
class ContractionResult:
    """Measured ``||x - A x|| / ||x||`` for one window."""

    window: int
    ratio: float
    bound: float
    status: str  # "ok", "violated", "skipped", "not-applicable"


def contraction_check(signal: BandlimitedSignal, train: SpikeTrain, plan: SegmentPlan,
                      omega: float, points_per_nyquist: int = 40) -> list[ContractionResult]:
    """
    Compare the window-restricted residual ``||x - A x||`` with ``r_w ||x||``.

    Norms are taken over each window's extent; ``A x`` uses exact interval
    integrals of the true signal.
    """
    out = []
    for i, w in enumerate(plan.windows):
        if not w.contractive:
            out.append(ContractionResult(i, float("nan"), w.ratio, "skipped"))
            continue
        times = train.times[w.start:w.stop + 1]
        theta = 0.5 * (times[1:] + times[:-1])
        P = integrate(signal, times[:-1], times[1:])
        step = np.pi / omega / points_per_nyquist
        n = max(int(np.ceil((w.t_end - w.t_start) / step)), 2)
        t = np.linspace(w.t_start, w.t_end, n + 1)
        x = eval_signal(signal, t)
        ax = kernel(t[:, None], theta, omega) @ np.atleast_1d(P)
        den = np.trapezoid(x ** 2, t)
        if den <= 0:
            out.append(ContractionResult(i, float("nan"), w.ratio, "not-applicable"))
            continue
        ratio = float(np.sqrt(np.trapezoid((x - ax) ** 2, t) / den))
        out.append(ContractionResult(i, ratio, w.ratio, "ok" if ratio <= w.ratio else "violated"))
    return out
