"""
Experiment configuration: presets, TOML loading and validation.

A config file is TOML with a top-level ``experiment`` key and optional
``[run]``, ``[signal]``, ``[encoder]``, ``[quantizer]`` and ``[decoder]``
sections. Keys not given fall back to the preset of the chosen experiment.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "EXPERIMENTS",
    "SAMPLERS",
    "ConfigError",
    "ExperimentConfig",
    "preset",
    "load_config",
    "config_from_dict",
    "config_hash",
]

EXPERIMENTS = ("mse_vs_frequency", "quantized_mse", "audio_segments", "segmented_sine",
               "time_trace", "dynamic_quant")
SAMPLERS = ("Periodic", "IFTEM", "AIFTEM", "Genie", "IFTEM-matched")


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending field."""


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Fully resolved experiment parameters.

    Field groups mirror the TOML sections: run (experiment, seed, trials,
    output, workers, samplers), signal (order, freqs_hz, span, eval_span,
    amplitudes, segment_nyquist, audio_path, band_edge_hz, sample_rate,
    duration), encoder (kappa, delta, beta, ratio, window, beta_rule,
    delta_rule, if_margin, bias_levels), quantizer (bits, t_max_rule, amplitude_source) and
    decoder (method, policy, window_size).
    """

    experiment: str = "mse_vs_frequency"
    seed: int = 0
    trials: int = 100
    output: str = "results"
    workers: int = 1
    samplers: tuple = SAMPLERS

    order: int = 2
    freqs_hz: tuple = (10.0, 20.0, 30.0, 40.0, 50.0)
    span: float = 20.0
    eval_span: float = 10.0
    amplitudes: tuple = ()
    segment_nyquist: float = 20.0
    audio_path: str = ""
    band_edge_hz: float = 1000.0
    sample_rate: float = 8000.0
    duration: float = 0.3

    kappa: float = 0.5
    delta: float = 0.02
    beta: float = 0.0
    ratio: float = 0.45
    window: int = 1
    beta_rule: str = "calibrate"
    delta_rule: str = "fixed"
    if_margin: str = "ratio"
    bias_levels: int = 256

    bits: int = 0
    t_max_rule: str = "estimated"
    amplitude_source: str = "estimated"

    method: str = "iterative"
    policy: str = "single"
    window_size: float = 0.0


_SECTIONS = {
    "run": ("seed", "trials", "output", "workers", "samplers"),
    "signal": ("order", "freqs_hz", "span", "eval_span", "amplitudes", "segment_nyquist",
               "audio_path", "band_edge_hz", "sample_rate", "duration"),
    "encoder": ("kappa", "delta", "beta", "ratio", "window", "beta_rule", "delta_rule",
                "if_margin", "bias_levels"),
    "quantizer": ("bits", "t_max_rule", "amplitude_source"),
    "decoder": ("method", "policy", "window_size"),
}

_CHOICES = {
    "beta_rule": ("calibrate", "nominal", "fixed"),
    "delta_rule": ("fixed", "ratio"),
    "if_margin": ("ratio", "beta"),
    "t_max_rule": ("beta", "estimated"),
    "amplitude_source": ("estimated", "true"),
    "method": ("iterative", "matrix"),
    "policy": ("single", "fixed-count", "fixed-duration", "segments"),
}

_PRESETS = {
    "mse_vs_frequency": {},
    "quantized_mse": dict(kappa=0.24, delta=0.01, ratio=0.39, window=8, bits=12,
                          if_margin="beta", samplers=("IFTEM-matched", "AIFTEM")),
    "audio_segments": dict(trials=1, kappa=0.5, beta=0.1, ratio=0.45, window=10, duration=0.15,
                           beta_rule="fixed", delta_rule="ratio", if_margin="beta",
                           amplitudes=(0.8, 0.3, 0.05), policy="segments",
                           samplers=("Periodic", "IFTEM", "AIFTEM", "IFTEM-matched")),
    "segmented_sine": dict(trials=1, freqs_hz=(10.0,), kappa=0.18, beta=0.1, ratio=0.67,
                           window=15, beta_rule="fixed", delta_rule="ratio", if_margin="beta",
                           bits=12, amplitudes=(0.8, 0.4, 0.05), policy="segments", method="matrix",
                           t_max_rule="beta",
                           samplers=("IFTEM", "AIFTEM")),
    "time_trace": dict(seed=13, trials=1, order=5, freqs_hz=(20.0,), kappa=0.24, delta=0.01, beta=0.1,
                       window=5, beta_rule="fixed", if_margin="beta",
                       samplers=("Periodic", "IFTEM-matched", "AIFTEM")),
    "dynamic_quant": dict(trials=50, kappa=0.18, beta=0.1, ratio=0.67, window=15,
                          beta_rule="fixed", delta_rule="ratio", if_margin="beta", bits=12,
                          policy="segments", method="matrix", t_max_rule="beta",
                          samplers=("IFTEM", "AIFTEM")),
}


def preset(experiment: str, **overrides) -> ExperimentConfig:
    """Default configuration of ``experiment`` with keyword overrides."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown value {experiment!r}; expected one of {EXPERIMENTS}")
    cfg = replace(ExperimentConfig(experiment=experiment), **_PRESETS[experiment])
    return _validate(replace(cfg, **overrides)) if overrides else _validate(cfg)


def _coerce(name: str, value, default, path: str):
    if isinstance(default, bool):
        raise ConfigError(f"{path}: unsupported")
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        kind = str if name == "samplers" else float
        try:
            return tuple(kind(v) for v in value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    return value


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    for key, allowed in _CHOICES.items():
        if getattr(cfg, key) not in allowed:
            raise ConfigError(f"{key}: {getattr(cfg, key)!r} not in {allowed}")
    for s in cfg.samplers:
        if s not in SAMPLERS:
            raise ConfigError(f"run.samplers: unknown sampler {s!r}")
    if cfg.trials < 1:
        raise ConfigError("run.trials: must be >= 1")
    if cfg.kappa <= 0:
        raise ConfigError("encoder.kappa: must be positive")
    if cfg.window < 1:
        raise ConfigError("encoder.window: must be >= 1")
    if not 0 < cfg.ratio:
        raise ConfigError("encoder.ratio: must be positive")
    if cfg.bits < 0 or cfg.bits > 30:
        raise ConfigError("quantizer.bits: must be within 0..30 (0 disables quantization)")
    if not cfg.freqs_hz or any(f <= 0 for f in cfg.freqs_hz):
        raise ConfigError("signal.freqs_hz: need positive frequencies")
    return cfg


def config_from_dict(data: dict) -> ExperimentConfig:
    """Resolve a parsed TOML document into an :class:`ExperimentConfig`."""
    if "experiment" not in data:
        raise ConfigError("experiment: missing")
    exp = data["experiment"]
    if not isinstance(exp, str) or exp not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown value {exp!r}; expected one of {EXPERIMENTS}")
    base = preset(exp)
    defaults = {f.name: getattr(base, f.name) for f in fields(base)}
    updates = {}
    for key, value in data.items():
        if key == "experiment":
            continue
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected a table")
            for sub, v in value.items():
                if sub not in _SECTIONS[key]:
                    raise ConfigError(f"{key}.{sub}: unknown field")
                updates[sub] = _coerce(sub, v, defaults[sub], f"{key}.{sub}")
        elif key in _SECTIONS["run"]:
            updates[key] = _coerce(key, value, defaults[key], key)
        else:
            raise ConfigError(f"{key}: unknown field")
    return _validate(replace(base, **updates))


def load_config(path) -> ExperimentConfig:
    """Parse a TOML config file."""
    try:
        with Path(path).open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"<file>: {exc}") from exc
    return config_from_dict(data)


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form, excluding output location and worker count."""
    d = asdict(cfg)
    d.pop("output")
    d.pop("workers")
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
