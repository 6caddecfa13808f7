"""
Adaptive integrate-and-fire time encoding.

Modules
-------
signal_model
    Band-limited test signals, integration and error metrics.
encoder
    Fixed-bias and adaptive-bias integrate-and-fire encoders.
decoder
    Windowed frame reconstruction from spike trains.
quantizer
    Classic and dynamic quantization of time differences.
bounds
    Oversampling and distortion bounds.
streams
    JSON and binary spike/quantized stream formats.
harness
    Experiment runners and CLI support.
"""

from .decoder import plan_segments, reconstruct
from .encoder import AIFTEM, IFTEM, BiasGrid, EncoderConfig, SpikeTrain, encode
from .quantizer import classic_spec, dequantize, dynamic_spec, quantize
from .signal_model import BandlimitedSignal, mse_db, sinc_series, synthesize_random

__version__ = "0.1.0"

__all__ = [
    "AIFTEM",
    "IFTEM",
    "BandlimitedSignal",
    "BiasGrid",
    "EncoderConfig",
    "SpikeTrain",
    "classic_spec",
    "dequantize",
    "dynamic_spec",
    "encode",
    "mse_db",
    "plan_segments",
    "quantize",
    "reconstruct",
    "sinc_series",
    "synthesize_random",
]
