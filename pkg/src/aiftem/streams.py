"""
Serialization of spike trains and quantized trains.

Spike trains have a JSON form and a compact little-endian binary form
(magic ``TEMS``). Quantized trains use the ``TEMQ`` binary stream with
bit-packed codes, plus a JSON mirror for inspection. All forms round-trip
exactly.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .encoder import BiasGrid, SpikeTrain
from .quantizer import QuantizedTrain, QuantizerSpec, QuantMode

__all__ = [
    "StreamError",
    "spikes_to_json",
    "spikes_from_json",
    "spikes_to_bytes",
    "spikes_from_bytes",
    "temq_to_bytes",
    "temq_from_bytes",
    "temq_to_json",
    "temq_from_json",
    "temq_rate",
    "save",
    "load",
]

SPIKE_MAGIC = b"TEMS"
TEMQ_MAGIC = b"TEMQ"
VERSION = 1
_MODES = {"IFTEM": 0, "AIFTEM": 1}
_MODE_NAMES = {v: k for k, v in _MODES.items()}
_SOURCES = {"map": 0, "genie": 1}
_SOURCE_NAMES = {v: k for k, v in _SOURCES.items()}


class StreamError(ValueError):
    """Raised for malformed or truncated streams."""


# ---------------------------------------------------------------------------
# Spike trains


def _spike_dict(train: SpikeTrain) -> dict:
    d = {
        "format": "spikes",
        "version": VERSION,
        "mode": train.mode,
        "kappa": float(train.kappa),
        "delta": float(train.delta),
        "c_max": float(train.c_max),
        "t0": float(train.t0),
        "times": [float(t) for t in train.times[1:]],
        "bias_indices": [int(i) for i in train.bias_indices],
        "bias_grid": train.bias_grid.to_dict(),
        "map_params": None,
        "amplitude_estimates": [float(c) for c in train.amplitude_estimates],
    }
    if train.mode == "AIFTEM":
        mp = dict(train.map_params)
        mp.setdefault("beta", train.beta)
        d["map_params"] = mp
    return d


def spikes_to_json(train: SpikeTrain) -> str:
    return json.dumps(_spike_dict(train))


def spikes_from_json(text: str) -> SpikeTrain:
    try:
        d = json.loads(text)
        times = np.array([d["t0"]] + list(d["times"]), dtype=float)
        mp = d.get("map_params") or {}
        return SpikeTrain(times, np.array(d["bias_indices"], dtype=np.int64),
                          BiasGrid.from_dict(d["bias_grid"]), float(d["kappa"]),
                          float(d["delta"]), d["mode"], float(d["c_max"]),
                          np.array(d.get("amplitude_estimates", []), dtype=float),
                          mp.get("beta"), mp)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise StreamError(f"malformed spike JSON: {exc}") from exc


def spikes_to_bytes(train: SpikeTrain) -> bytes:
    grid = train.bias_grid
    if grid.levels > 1 << 16:
        raise StreamError("bias grid too large for u16 indices")
    n = train.n_intervals
    out = [struct.pack("<4sBB", SPIKE_MAGIC, VERSION, _MODES[train.mode]),
           struct.pack("<4d", train.kappa, train.delta, train.t0, train.c_max),
           struct.pack("<ddI", grid.b_min, grid.step, grid.levels)]
    if train.mode == "AIFTEM":
        mp = train.map_params
        out.append(struct.pack("<dddIB", train.beta, mp.get("alpha1", math.nan),
                               mp.get("alpha2", math.nan), int(mp.get("w", 1)),
                               _SOURCES[mp.get("bias_source", "map")]))
    est = np.asarray(train.amplitude_estimates, dtype="<f8")
    out.append(struct.pack("<IB", n, 1 if est.size == n and n else 0))
    out.append(np.asarray(train.times[1:], dtype="<f8").tobytes())
    out.append(np.asarray(train.bias_indices, dtype="<u2").tobytes())
    if est.size == n and n:
        out.append(est.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise StreamError("truncated stream")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def array(self, dtype: str, count: int) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        if self.pos + size > len(self.buf):
            raise StreamError("truncated stream")
        arr = np.frombuffer(self.buf, dtype=dtype, count=count, offset=self.pos)
        self.pos += size
        return arr

    def raw(self, size: int) -> np.ndarray:
        return self.array("u1", size)


def spikes_from_bytes(buf: bytes) -> SpikeTrain:
    r = _Reader(buf)
    magic, version, mode = r.take("<4sBB")
    if magic != SPIKE_MAGIC or version != VERSION or mode not in _MODE_NAMES:
        raise StreamError("not a spike stream")
    kappa, delta, t0, c_max = r.take("<4d")
    b_min, step, levels = r.take("<ddI")
    beta, mp = None, {}
    if _MODE_NAMES[mode] == "AIFTEM":
        beta, a1, a2, w, src = r.take("<dddIB")
        mp = {"alpha1": a1, "alpha2": a2, "beta": beta, "w": w, "bias_source": _SOURCE_NAMES[src]}
    n, has_est = r.take("<IB")
    times = np.concatenate(([t0], r.array("<f8", n).astype(float)))
    idx = r.array("<u2", n).astype(np.int64)
    est = r.array("<f8", n).astype(float) if has_est else np.zeros(0)
    return SpikeTrain(times, idx, BiasGrid(b_min, step, levels), kappa, delta,
                      _MODE_NAMES[mode], c_max, est, beta, mp)


# ---------------------------------------------------------------------------
# Quantized trains


def _bits_for(levels: int) -> int:
    return int(math.ceil(math.log2(levels))) if levels > 1 else 0


def _pack(values: np.ndarray, bits: int) -> bytes:
    if bits == 0 or values.size == 0:
        return b""
    shifts = np.arange(bits - 1, -1, -1, dtype=np.uint64)
    b = ((values.astype(np.uint64)[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    return np.packbits(b.ravel()).tobytes()


def _unpack(raw: np.ndarray, count: int, bits: int) -> np.ndarray:
    if bits == 0:
        return np.zeros(count, dtype=np.int64)
    b = np.unpackbits(raw)[: count * bits].reshape(count, bits).astype(np.int64)
    return b @ (1 << np.arange(bits - 1, -1, -1, dtype=np.int64))


def _header(q: QuantizedTrain) -> bytes:
    spec, grid = q.spec, q.bias_grid
    parts = [struct.pack("<4sBBI", TEMQ_MAGIC, VERSION, int(spec.mode), spec.levels),
             struct.pack("<B4d", _MODES[q.train_mode], q.kappa, q.delta, q.t0, q.c_max),
             struct.pack("<dddI", math.nan if q.beta is None else q.beta, grid.b_min,
                         grid.step, grid.levels),
             struct.pack("<I", len(spec.segments))]
    for (a, b), (lo, hi) in zip(spec.segments, spec.ranges):
        parts.append(struct.pack("<IIdd", a, b, lo, hi))
    parts.append(struct.pack("<I", len(q.indices)))
    return b"".join(parts)


def temq_to_bytes(q: QuantizedTrain) -> bytes:
    """Header, bit-packed time codes, then bit-packed bias codes."""
    return (_header(q) + _pack(np.asarray(q.indices), _bits_for(q.spec.levels))
            + _pack(np.asarray(q.bias_indices), _bits_for(q.bias_grid.levels)))


def temq_from_bytes(buf: bytes) -> QuantizedTrain:
    r = _Reader(buf)
    magic, version, mode, levels = r.take("<4sBBI")
    if magic != TEMQ_MAGIC or version != VERSION:
        raise StreamError("not a TEMQ stream")
    tmode, kappa, delta, t0, c_max = r.take("<B4d")
    beta, b_min, step, b_levels = r.take("<dddI")
    (n_seg,) = r.take("<I")
    segs, ranges = [], []
    for _ in range(n_seg):
        a, b, lo, hi = r.take("<IIdd")
        segs.append((a, b))
        ranges.append((lo, hi))
    (n,) = r.take("<I")
    bits = _bits_for(levels)
    idx = _unpack(r.raw((n * bits + 7) // 8), n, bits)
    b_bits = _bits_for(b_levels)
    bidx = _unpack(r.raw((n * b_bits + 7) // 8), n, b_bits)
    if r.pos != len(r.buf):
        raise StreamError("trailing bytes after TEMQ payload")
    spec = QuantizerSpec(levels, QuantMode(mode), tuple(ranges), tuple(segs))
    return QuantizedTrain(t0, idx, spec, bidx, BiasGrid(b_min, step, b_levels), kappa, delta,
                          _MODE_NAMES[tmode], c_max, None if math.isnan(beta) else beta)


def temq_to_json(q: QuantizedTrain) -> str:
    return json.dumps({
        "format": "TEMQ",
        "version": VERSION,
        "mode": q.spec.mode.name,
        "levels": q.spec.levels,
        "segments": [list(s) for s in q.spec.segments],
        "ranges": [list(r) for r in q.spec.ranges],
        "train_mode": q.train_mode,
        "kappa": q.kappa, "delta": q.delta, "t0": q.t0, "c_max": q.c_max, "beta": q.beta,
        "bias_grid": q.bias_grid.to_dict(),
        "indices": [int(i) for i in q.indices],
        "bias_indices": [int(i) for i in q.bias_indices],
        "saturated": q.saturated,
    })


def temq_from_json(text: str) -> QuantizedTrain:
    try:
        d = json.loads(text)
        spec = QuantizerSpec(int(d["levels"]), QuantMode[d["mode"]],
                             tuple(tuple(r) for r in d["ranges"]),
                             tuple(tuple(s) for s in d["segments"]))
        return QuantizedTrain(d["t0"], np.array(d["indices"], dtype=np.int64), spec,
                              np.array(d["bias_indices"], dtype=np.int64),
                              BiasGrid.from_dict(d["bias_grid"]), d["kappa"], d["delta"],
                              d["train_mode"], d["c_max"], d["beta"],
                              saturated=int(d.get("saturated", 0)))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise StreamError(f"malformed TEMQ JSON: {exc}") from exc


def temq_rate(q: QuantizedTrain) -> dict:
    """Bit budget of the TEMQ stream: header, time codes, bias codes, total."""
    n = len(q.indices)
    header = 8 * len(_header(q))
    t_bits = n * _bits_for(q.spec.levels)
    b_bits = n * _bits_for(q.bias_grid.levels)
    total = header + 8 * ((t_bits + 7) // 8) + 8 * ((b_bits + 7) // 8)
    return {"header": header, "time_codes": t_bits, "bias_codes": b_bits, "total": total}


# ---------------------------------------------------------------------------
# Files


def save(obj, path) -> Path:
    """Write a train or quantized train; ``.json`` suffix selects JSON."""
    path = Path(path)
    as_json = path.suffix.lower() == ".json"
    if isinstance(obj, SpikeTrain):
        data = spikes_to_json(obj) if as_json else spikes_to_bytes(obj)
    elif isinstance(obj, QuantizedTrain):
        data = temq_to_json(obj) if as_json else temq_to_bytes(obj)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    if isinstance(data, str):
        path.write_text(data)
    else:
        path.write_bytes(data)
    return path


def load(path):
    """Read a file written by :func:`save`, detecting the format."""
    raw = Path(path).read_bytes()
    if raw[:4] == SPIKE_MAGIC:
        return spikes_from_bytes(raw)
    if raw[:4] == TEMQ_MAGIC:
        return temq_from_bytes(raw)
    try:
        d = json.loads(raw)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StreamError(f"unrecognized stream {path}") from exc
    if d.get("format") == "spikes":
        return spikes_from_json(raw.decode())
    if d.get("format") == "TEMQ":
        return temq_from_json(raw.decode())
    raise StreamError(f"unrecognized stream {path}")
