"""Configuration loading, overrides, duration parsing, CLI contract."""

import json
import os

import pytest

from logshield.cli import main
from logshield.config import (Config, ConfigError, apply_overrides,
                              config_from_dict, load_config, parse_duration)


def test_duration_literals():
    assert parse_duration("100us", 1_200_000_000) == 120_000
    assert parse_duration("1ms", 1_200_000_000) == 1_200_000
    assert parse_duration("15ms", 1_200_000_000) == 18_000_000
    assert parse_duration("10s", 1_200_000_000) == 12_000_000_000
    assert parse_duration(5000, 1_200_000_000) == 5000
    with pytest.raises(ConfigError):
        parse_duration("abc", 1_200_000_000)
    with pytest.raises(ConfigError):
        parse_duration(0, 1_200_000_000)


def test_empty_config_gives_full_defaults(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("")
    cfg = load_config(str(path))
    assert cfg.experiment.workload == "getpid-flood"
    assert cfg.experiment.tp == "1ms"
    assert cfg.freq_hz == 1_200_000_000
    assert cfg.pool.cores * cfg.pool.buffers_per_core == 16
    assert cfg.pool.cores * cfg.pool.buffers_per_core * cfg.pool.buffer_bytes \
        == 1 << 20


def test_unknown_keys_rejected_with_path(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"pool": {"coers": 4}}))
    with pytest.raises(ConfigError, match="pool.coers"):
        load_config(str(path))
    path.write_text(json.dumps({"mystery": 1}))
    with pytest.raises(ConfigError, match="mystery"):
        load_config(str(path))


def test_zero_timer_period_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"experiment": {"tp": 0}})


def test_cost_point_override_is_exact():
    cfg = config_from_dict({"cost_points": {"gpt": [[4096, 9999]]}})
    model = cfg.cost_model()
    assert model.switch_cost("gpt", 4096) == 9999
    assert model.switch_cost("gpt", 65536) == 4490   # untouched points stay


def test_flag_style_overrides_win():
    cfg = Config()
    cfg2 = apply_overrides(cfg, ["experiment.tp=500us", "seed=99",
                                 "pool.buffer_bytes=32768"])
    assert cfg2.experiment.tp == "500us" and cfg2.seed == 99
    assert cfg2.pool.buffer_bytes == 32768
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["nonsense.path=1"])
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["justakey"])


def test_custom_workload_rates():
    cfg = config_from_dict({"workload": {"rates": {"audit": 1000.0,
                                                   "net": 500.0}}})
    w = cfg.workload_spec()
    assert w.total_rate == 1500.0
    with pytest.raises(ConfigError):
        config_from_dict({"workload": {"rates": {"bogus": 1.0}}}).workload_spec()


def test_cli_scenarios_lists_presets(capsys):
    assert main(["scenarios"]) == 0
    out = capsys.readouterr().out
    assert "cve-2022-0847" in out and "getpid-flood" in out


def test_cli_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{\"experiment\": {\"tp\": \"0ms\"}}")
    assert main(["run", "tamper_study", "--config", str(bad)]) == 2
    assert main(["run", "tamper_study", "--set", "experiment.trials=0",
                 "--out", str(tmp_path)]) == 2


def test_cli_tamper_run_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "out"
    rc = main(["run", "tamper_study", "--tp", "1ms", "--trials", "3",
               "--seed", "7", "--out", str(out)])
    assert rc == 0
    names = sorted(os.listdir(out))
    assert names == ["manifest.json", "summary.json", "tamper_trials.csv"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7
    assert {a["name"] for a in manifest["artifacts"]} == \
        {"summary.json", "tamper_trials.csv"}
    # config echo carries the effective (overridden) values
    assert manifest["config"]["experiment"]["trials"] == 3


def test_cli_rerun_reproduces_identical_digests(tmp_path):
    args = ["run", "tamper_study", "--tp", "1ms", "--trials", "3",
            "--seed", "7"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma == mb
    assert (a / "tamper_trials.csv").read_bytes() == \
        (b / "tamper_trials.csv").read_bytes()


def test_cli_trace_flag_dumps_event_log(tmp_path):
    out = tmp_path / "out"
    rc = main(["run", "tamper_study", "--tp", "1ms", "--trials", "1",
               "--seed", "7", "--out", str(out), "--trace"])
    assert rc == 0
    trace = (out / "trace_trial0.ndjson").read_text().splitlines()
    assert trace
    rec = json.loads(trace[0])
    assert {"time_cycles", "actor", "kind", "detail", "order"} <= set(rec)


def test_config_echo_round_trips():
    cfg = Config()
    cfg2 = config_from_dict(cfg.echo())
    assert cfg2.echo() == cfg.echo()
