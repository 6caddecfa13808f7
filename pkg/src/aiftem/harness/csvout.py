"""Deterministic CSV output with a provenance comment line."""

from __future__ import annotations

import csv
import hashlib
import math
import os
from pathlib import Path

from .config import ExperimentConfig, config_hash

__all__ = ["OUTPUT_ENV", "output_dir", "format_value", "write_csv", "file_sha256"]

#: Environment variable overriding the configured output directory.
OUTPUT_ENV = "AIFTEM_OUTPUT_DIR"


def output_dir(cfg: ExperimentConfig) -> Path:
    path = Path(os.environ.get(OUTPUT_ENV) or cfg.output)
    path.mkdir(parents=True, exist_ok=True)
    return path


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float) or hasattr(v, "dtype"):
        f = float(v)
        if math.isnan(f):
            return "nan"
        return repr(f)
    return str(v)


def write_csv(path, rows: list[dict], columns: list[str], cfg: ExperimentConfig) -> Path:
    """
    Write ``rows`` in ``columns`` order.

    The first line is ``# config_sha256=<hash> seed=<seed> experiment=<name>``.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# config_sha256={config_hash(cfg)} seed={cfg.seed} "
                 f"experiment={cfg.experiment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_value(row.get(c)) for c in columns])
    return path


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
