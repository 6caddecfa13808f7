"""Experiment runner: determinism, provenance, configs and protocol fixtures."""

import warnings

import numpy as np
import pytest

from aiftem.encoder import EncodingTruncatedWarning
from aiftem.harness.config import (
    EXPERIMENTS,
    ConfigError,
    config_from_dict,
    config_hash,
    load_config,
    preset,
)
from aiftem.harness.csvout import OUTPUT_ENV, file_sha256
from aiftem.harness.experiments import (
    match_threshold,
    mean_os,
    run_experiment,
    run_quantization_sweep,
    run_time_trace,
)
from aiftem.signal_model import sinc_series, synthesize_random

CONFIGS = __import__("pathlib").Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EncodingTruncatedWarning)
        yield


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    return tmp_path


@pytest.fixture(scope="module")
def trace_run():
    return run_time_trace(preset("time_trace"), write=False)


def _by_sampler(rows):
    return {r["sampler"]: r for r in rows}


# configuration ------------------------------------------------------------

@pytest.mark.parametrize("exp", EXPERIMENTS)
def test_shipped_configs_equal_presets(exp):
    cfg = load_config(CONFIGS / f"{exp}.toml")
    assert cfg == preset(exp)
    assert config_hash(cfg) == config_hash(preset(exp))


@pytest.mark.parametrize("doc, field", [
    ({}, "experiment"),
    ({"experiment": "bogus"}, "experiment"),
    ({"experiment": "time_trace", "encoder": {"kappa": "big"}}, "encoder.kappa"),
    ({"experiment": "time_trace", "encoder": {"colour": 1}}, "encoder.colour"),
    ({"experiment": "time_trace", "decoder": {"method": "magic"}}, "method"),
    ({"experiment": "time_trace", "run": {"samplers": ["Oracle"]}}, "run.samplers"),
    ({"experiment": "time_trace", "quantizer": {"bits": 31}}, "quantizer.bits"),
    ({"experiment": "time_trace", "signal": 3}, "signal"),
])
def test_config_errors_name_field(doc, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        config_from_dict(doc)


def test_config_hash_ignores_output_location():
    a = preset("time_trace")
    assert config_hash(a) == config_hash(preset("time_trace", output="elsewhere", workers=4))
    assert config_hash(a) != config_hash(preset("time_trace", seed=14))


def test_quantization_sweep_needs_bits():
    with pytest.raises(ValueError):
        run_quantization_sweep(preset("mse_vs_frequency"), write=False)


# determinism and provenance -----------------------------------------------

def test_rerun_gives_identical_csv(out_dir, tmp_path_factory, monkeypatch):
    cfg = preset("mse_vs_frequency", trials=2, freqs_hz=(20.0, 30.0))
    first = {k: file_sha256(p) for k, p in run_experiment(cfg).files.items()}
    other = tmp_path_factory.mktemp("again")
    monkeypatch.setenv(OUTPUT_ENV, str(other))
    second = {k: file_sha256(p) for k, p in run_experiment(cfg).files.items()}
    assert first == second


def test_worker_count_does_not_change_output(out_dir, tmp_path_factory, monkeypatch):
    cfg = preset("mse_vs_frequency", trials=2, freqs_hz=(20.0, 30.0),
                 samplers=("AIFTEM", "IFTEM"))
    serial = {k: file_sha256(p) for k, p in run_experiment(cfg).files.items()}
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path_factory.mktemp("pool")))
    pooled = {k: file_sha256(p) for k, p in
              run_experiment(preset("mse_vs_frequency", trials=2, freqs_hz=(20.0, 30.0),
                                    samplers=("AIFTEM", "IFTEM"), workers=2)).files.items()}
    assert serial == pooled


def test_csv_header_carries_hash_and_seed(out_dir):
    cfg = preset("time_trace")
    res = run_experiment(cfg)
    for path in res.files.values():
        first, columns = path.read_text().splitlines()[:2]
        assert first == f"# config_sha256={config_hash(cfg)} seed=13 experiment=time_trace"
        assert "," in columns and not columns.startswith("#")


# time-trace fixture -------------------------------------------------------

def test_zero_signal_gives_flat_trace():
    zero = sinc_series(np.zeros(5), 2 * np.pi * 20)
    res = run_time_trace(preset("time_trace"), write=False, signal=zero)
    for name in ("AIFTEM", "IFTEM-matched"):
        os_n = np.array([r["os_n"] for r in res.trials if r["sampler"] == name])
        assert os_n.size > 10
        np.testing.assert_allclose(os_n, os_n[0], rtol=1e-9)


def test_trace_fixture_adaptive_mse(trace_run):
    assert _by_sampler(trace_run.summary)["AIFTEM"]["mse_db"] <= -90.0


def test_trace_fixture_os_tracks_amplitude(trace_run):
    s = _by_sampler(trace_run.summary)
    assert s["AIFTEM"]["os_var"] >= 2 * s["IFTEM-matched"]["os_var"]


def test_trace_fixture_estimated_ratio_below_one(trace_run):
    r_est = [r["r_est"] for r in trace_run.trials if r["sampler"] == "AIFTEM"]
    assert max(r_est) < 1


def test_trace_fixture_matched_oversampling(trace_run):
    s = _by_sampler(trace_run.summary)
    assert abs(s["IFTEM-matched"]["os"] - s["AIFTEM"]["os"]) <= 0.02 * s["AIFTEM"]["os"]


@pytest.mark.xfail(strict=True, reason="Periodic baseline at matched rate outperforms both "
                                       "event samplers on this fixture; see ledger")
def test_trace_fixture_ordering(trace_run):
    s = _by_sampler(trace_run.summary)
    assert s["AIFTEM"]["mse_db"] < s["IFTEM-matched"]["mse_db"] < s["Periodic"]["mse_db"]


# Monte-Carlo protocol -----------------------------------------------------

@pytest.fixture(scope="module")
def small_sweep():
    cfg = preset("mse_vs_frequency", trials=4, freqs_hz=(10.0, 30.0),
                 samplers=("AIFTEM", "Genie", "IFTEM", "IFTEM-matched"))
    return run_experiment(cfg, write=False)


def test_genie_close_to_predictor(small_sweep):
    by = {(s["freq_hz"], s["sampler"]): s for s in small_sweep.summary}
    for f in (10.0, 30.0):
        assert abs(by[f, "Genie"]["mse_db"] - by[f, "AIFTEM"]["mse_db"]) <= 3.0
        assert abs(by[f, "Genie"]["os"] - by[f, "AIFTEM"]["os"]) <= 0.1 * by[f, "AIFTEM"]["os"]


def test_matched_rows_within_tolerance(small_sweep):
    aif = {(r["freq_hz"], r["trial"]): r["os"] for r in small_sweep.trials
           if r["sampler"] == "AIFTEM"}
    for r in small_sweep.trials:
        if r["sampler"] == "IFTEM-matched" and r["match_ok"]:
            target = aif[r["freq_hz"], r["trial"]]
            assert abs(r["os"] - target) <= 0.02 * target


def test_infeasible_match_is_flagged():
    omega = 2 * np.pi * 20
    sig = synthesize_random(omega, 2, seed=3)
    m = match_threshold(sig, 0.5, 0.02, sig.c_max + 1.0, omega, target_os=1e-3)
    assert not m.ok
    assert m.os == pytest.approx(mean_os(m.train, omega))


def test_fine_quantizer_converges_to_sampling_mse():
    cfg = preset("quantized_mse", trials=2, freqs_hz=(20.0, 40.0), bits=30)
    for s in run_experiment(cfg, write=False).summary:
        assert abs(s["mse_db"] - s["mse_sampling_db"]) <= 0.5


def test_segmented_sine_rows(out_dir):
    res = run_experiment(preset("segmented_sine"))
    assert {r["sampler"] for r in res.summary} == {"IFTEM", "AIFTEM"}
    assert {r["scheme"] for r in res.trials} == {"IF-classic", "AIF-classic", "AIF-dynamic"}
    dyn = [r["delta_T"] for r in res.trials if r["scheme"] == "AIF-dynamic"]
    assert dyn[0] > dyn[1] > dyn[2]
    assert set(res.files) == {"summary", "quantized"}
