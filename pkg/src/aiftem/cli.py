"""
Command-line interface: ``aiftem encode | decode | quantize | bounds | experiment``.

Results go to stdout as JSON. Failures print one JSON object
``{"error": <kind>, "message": <text>}`` (plus ``"field"`` for config
errors) on stderr and exit nonzero: 2 for usage and config errors, 1 for
everything else.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import bounds_report
from .decoder import plan_segments, reconstruct, reconstruct_from_quantized
from .encoder import AIFTEM, IFTEM, EncoderConfig, EncodingTruncatedWarning, SpikeTrain, encode
from .harness.config import ConfigError, load_config
from .harness.csvout import OUTPUT_ENV, file_sha256
from .harness.experiments import _audio_signal, _betas, run_experiment, trial_rng
from .quantizer import QuantizedTrain, classic_spec, dequantize, dynamic_spec, quantize
from .signal_model import (constant, eval_signal, load_wav, mse_db, synthesize_random,
                           write_wav)
from .streams import load, save, temq_rate

__all__ = ["main", "build_parser"]


class UsageError(Exception):
    """Bad command-line usage."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=1, default=float))


def _signal_from_args(args):
    if args.zero or args.constant is not None:
        value = 0.0 if args.zero else args.constant
        omega = 2 * np.pi * (args.band_hz or 1.0)
        return constant(value, omega, (0.0, args.duration or 1.0))
    if args.wav:
        return load_wav(args.wav, args.band_hz)
    if args.order is not None:
        if not args.band_hz:
            raise UsageError("--order needs --band-hz")
        return synthesize_random(2 * np.pi * args.band_hz, args.order, seed=args.seed)
    raise UsageError("choose a signal: --zero, --constant, --wav or --order")


def _plan(train, omega, args):
    policy = args.policy
    if policy == "single":
        return plan_segments(train, omega)
    if args.size is None:
        raise UsageError(f"--policy {policy} needs --size")
    size = int(args.size) if policy == "fixed-count" else float(args.size)
    return plan_segments(train, omega, policy, size)


def cmd_encode(args) -> dict:
    sig = _signal_from_args(args)
    if (args.bias is None) == (args.beta is None):
        raise UsageError("give exactly one of --bias (IF-TEM) or --beta (AIF-TEM)")
    if args.bias is not None:
        mode = IFTEM(args.bias)
    else:
        mode = AIFTEM(args.beta, window=args.window,
                      bias_source="genie" if args.genie else "map")
    cfg = EncoderConfig(args.kappa, args.delta, mode, sim_step=args.sim_step)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EncodingTruncatedWarning)
        duration = args.duration if args.wav or args.order is not None else None
        train = encode(sig, cfg, duration)
    out = {"spikes": train.n_intervals, "mode": train.mode, "t0": train.t0,
           "omega": sig.omega, "c_max": sig.c_max,
           "mean_interval": float(np.mean(train.intervals)) if train.n_intervals else None,
           "interval_spread": float(np.ptp(train.intervals)) if train.n_intervals else None}
    if args.out:
        out["path"] = str(save(train, args.out))
    return out


def cmd_decode(args) -> dict:
    obj = load(args.stream)
    omega = 2 * np.pi * args.band_hz
    if isinstance(obj, QuantizedTrain):
        plan = _plan(dequantize(obj), omega, args)
        rec = reconstruct_from_quantized(obj, plan, omega, method=args.method)
    else:
        plan = _plan(obj, omega, args)
        rec = reconstruct(obj, plan, omega, method=args.method)
    out = {"points": len(rec.grid), "windows": len(plan.windows), "method": args.method}
    if args.wav:
        ref = load_wav(args.wav, args.band_hz)
        lo, hi = ref.horizon
        m = (rec.grid >= lo) & (rec.grid <= hi)
        out["mse_db"] = mse_db(eval_signal(ref, rec.grid[m]), rec.values[m], rec.grid[m])
    if args.out:
        path = Path(args.out)
        if path.suffix.lower() == ".wav":
            if not args.sample_rate:
                raise UsageError("WAV output needs --sample-rate")
            t = np.arange(rec.grid[0], rec.grid[-1], 1.0 / args.sample_rate)
            write_wav(path, np.interp(t, rec.grid, rec.values), int(args.sample_rate))
        else:
            rec.export_csv(path)
        out["path"] = str(path)
    return out


def cmd_quantize(args) -> dict:
    train = load(args.stream)
    if not isinstance(train, SpikeTrain):
        raise UsageError("quantize expects a spike stream")
    levels = 1 << args.bits
    if args.scheme == "classic":
        spec = classic_spec(train, levels, args.beta)
    else:
        if not args.band_hz:
            raise UsageError("dynamic quantization needs --band-hz for the segment plan")
        plan = _plan(train, 2 * np.pi * args.band_hz, args)
        spec = dynamic_spec(train, plan, levels, args.beta, t_max_rule=args.t_max_rule)
    q = quantize(train, spec)
    out = {"scheme": args.scheme, "levels": levels, "saturated": q.saturated,
           "ranges": [list(r) for r in spec.ranges], "steps": [float(s) for s in spec.steps],
           "bits": temq_rate(q)}
    if args.out:
        out["path"] = str(save(q, args.out))
    return out


def cmd_bounds(args) -> dict:
    if args.config:
        cfg = load_config(args.config)
        if cfg.experiment == "audio_segments":
            sig = _audio_signal(cfg)
        else:
            omega = 2 * np.pi * cfg.freqs_hz[0]
            sig = synthesize_random(omega, cfg.order, seed=trial_rng(cfg.seed, 0, 0),
                                    span=cfg.span)
        omega = sig.omega
        _, train = _betas(sig, cfg, omega, None)
        levels = 1 << cfg.bits if cfg.bits else 0
    elif args.stream:
        if not args.band_hz:
            raise UsageError("bounds on a stream needs --band-hz")
        train = load(args.stream)
        if not isinstance(train, SpikeTrain):
            raise UsageError("bounds expects a spike stream")
        omega = 2 * np.pi * args.band_hz
        levels = 1 << args.bits if args.bits else 0
    else:
        raise UsageError("give a spike stream or --config")
    plan = plan_segments(train, omega)
    spec = classic_spec(train, levels) if levels else None
    return json.loads(bounds_report(train, omega, plan, spec).to_json())


def cmd_experiment(args) -> dict:
    cfg = load_config(args.config)
    if args.output:
        cfg = replace(cfg, output=args.output)
    if args.workers:
        cfg = replace(cfg, workers=args.workers)
    res = run_experiment(cfg, write=True)
    return {"experiment": cfg.experiment, "seed": cfg.seed,
            "files": {k: {"path": str(p), "sha256": file_sha256(p)}
                      for k, p in res.files.items()}}


def _add_signal_args(p):
    g = p.add_argument_group("signal")
    g.add_argument("--zero", action="store_true", help="zero signal")
    g.add_argument("--constant", type=float, help="constant signal value")
    g.add_argument("--wav", help="PCM WAV input")
    g.add_argument("--order", type=int, help="random sinc series with 2*order+1 terms")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--band-hz", type=float, help="band edge in Hz")
    g.add_argument("--duration", type=float, help="seconds to encode")


def _add_plan_args(p):
    p.add_argument("--policy", default="single",
                   choices=("single", "fixed-count", "fixed-duration"))
    p.add_argument("--size", type=float, help="window size for the chosen policy")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aiftem", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("encode", help="encode a signal into a spike stream")
    _add_signal_args(p)
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--bias", type=float, help="fixed bias (IF-TEM)")
    p.add_argument("--beta", type=float, help="margin of the adaptive bias (AIF-TEM)")
    p.add_argument("--window", type=int, default=1)
    p.add_argument("--genie", action="store_true", help="true local maximum instead of the predictor")
    p.add_argument("--sim-step", type=float)
    p.add_argument("--out", help="output stream (.json for JSON, binary otherwise)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="reconstruct from a spike or TEMQ stream")
    p.add_argument("stream")
    p.add_argument("--band-hz", type=float, required=True)
    p.add_argument("--method", default="iterative", choices=("iterative", "matrix"))
    _add_plan_args(p)
    p.add_argument("--wav", help="reference WAV; reports mse_db")
    p.add_argument("--sample-rate", type=float, help="rate of WAV output")
    p.add_argument("--out", help="CSV (t, x_hat) or .wav output")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("quantize", help="quantize time differences into a TEMQ stream")
    p.add_argument("stream")
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--scheme", default="classic", choices=("classic", "dynamic"))
    p.add_argument("--beta", type=float)
    p.add_argument("--t-max-rule", default="beta", choices=("beta", "estimated"))
    p.add_argument("--band-hz", type=float)
    _add_plan_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("bounds", help="oversampling and distortion bounds as JSON")
    p.add_argument("stream", nargs="?")
    p.add_argument("--config")
    p.add_argument("--band-hz", type=float)
    p.add_argument("--bits", type=int, default=0)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("experiment", help="run an experiment config and write CSVs")
    p.add_argument("config")
    p.add_argument("--output", help=f"output directory (overrides config; {OUTPUT_ENV} wins)")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_experiment)
    return parser


def _fail(kind: str, message: str, code: int, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _emit(args.func(args))
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    except ConfigError as exc:
        field = str(exc).split(":", 1)[0]
        return _fail("config", str(exc), 2, field=field)
    except (OSError, ValueError, RuntimeError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
