"""Uniform-sampling baseline: periodic samples and sinc interpolation."""

from __future__ import annotations

import numpy as np

from ..quantizer import periodic_quantize
from ..signal_model import BandlimitedSignal, eval_signal

__all__ = ["periodic_samples", "periodic_reconstruct"]


def periodic_samples(signal: BandlimitedSignal, rate: float, t_a: float | None = None,
                     t_b: float | None = None):
    """Samples at integer multiples of ``1 / rate`` inside ``[t_a, t_b]``."""
    lo = signal.horizon[0] if t_a is None else t_a
    hi = signal.horizon[1] if t_b is None else t_b
    step = 1.0 / rate
    k = np.arange(np.ceil(lo / step), np.floor(hi / step) + 1)
    t = k * step
    return t, eval_signal(signal, t)


def periodic_reconstruct(signal: BandlimitedSignal, rate: float, grid, bits: int = 0,
                         t_a: float | None = None, t_b: float | None = None) -> np.ndarray:
    """
    Sample at ``rate`` and rebuild on ``grid`` by sinc interpolation.

    With ``bits > 0`` the samples are quantized over ``[-c_max, c_max]``
    before interpolation.
    """
    t, x = periodic_samples(signal, rate, t_a, t_b)
    if bits:
        x = periodic_quantize(x, signal.c_max, 1 << bits)
    grid = np.asarray(grid, dtype=float)
    return np.sinc((grid[:, None] - t[None, :]) * rate) @ x
