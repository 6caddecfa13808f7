"""Shared fixtures and the acceptance-criteria summary printer."""

from __future__ import annotations

import numpy as np
import pytest

_VERDICTS: list[str] = []


class Verdict:
    """Records one pass/fail line per acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title

    def __call__(self, ok: bool, detail: str) -> None:
        line = f"CRITERION {self.number:>2} {'PASS' if ok else 'FAIL'}: {self.title} | {detail}"
        _VERDICTS.append(line)
        print(line)
        assert ok, line


@pytest.fixture
def verdict(request):
    marker = request.node.get_closest_marker("criterion")
    number, title = marker.args
    return Verdict(number, title)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config.addinivalue_line("markers", "slow: long-running experiment test")


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def trace_fixture():
    """Seed-fixed time-trace signal and its adaptive encoding (preset parameters)."""
    from aiftem.encoder import AIFTEM, EncoderConfig, encode
    from aiftem.harness.config import preset
    from aiftem.harness.experiments import trial_rng
    from aiftem.signal_model import synthesize_random

    cfg = preset("time_trace")
    omega = 2 * np.pi * cfg.freqs_hz[0]
    sig = synthesize_random(omega, cfg.order, seed=trial_rng(cfg.seed, 0, 0), span=cfg.span)
    train = encode(sig, EncoderConfig(cfg.kappa, cfg.delta, AIFTEM(cfg.beta, window=cfg.window)))
    return cfg, sig, train
