"""Experiment drivers: CDF oracles, throughput accounting, sweep composition."""

import json
import math
import os

import numpy as np
import pytest

from logshield.config import Config, parse_duration
from logshield.experiments import (run_deadline_cdf, run_tamper_study,
                                   run_throughput, run_tradeoff_sweep,
                                   throughput_point)
from logshield.pipeline import SRC_AUDIT
from logshield.system import (MODE_GPT, MODE_IN_MEMORY, MODE_MEMCPY,
                              MODE_NATIVE, MODE_S2PT, MODE_SYNC, RunOptions,
                              System)


def _cdf_cfg(tp="1ms", duration="200ms"):
    cfg = Config()
    cfg.experiment.tp = tp
    cfg.experiment.duration = duration
    return cfg


def test_cdf_degenerate_all_overheads_zero():
    cfg = _cdf_cfg()
    for name in ("interrupt_latency", "lock_wait_max", "sched_latency"):
        setattr(cfg.overhead, name, 0)
    cfg.overhead.jitter.kind = "none"
    r = run_deadline_cdf(cfg)
    # every protection takes exactly the 64KB switch cost
    assert set(r.epsilon_cycles.tolist()) == {4490}
    assert r.fraction_within_tp == 1.0


def test_cdf_sample_count_equals_protect_events():
    r = run_deadline_cdf(_cdf_cfg())
    assert len(r.protect_samples) == r.epsilon_cycles.size > 0


def test_cdf_fraction_matches_trace_recount():
    """Recompute the within-deadline fraction from per-entry append and
    protect records, independently of the delay array."""
    cfg = _cdf_cfg(duration="100ms")
    tp = cfg.tp_cycles()
    opts = RunOptions(mode=MODE_GPT, tp_cycles=tp,
                      duration_cycles=cfg.duration_cycles(),
                      workload_mode="open", collect_delays=True,
                      record_appends=True)
    system = System(opts, seed=cfg.seed, cores=cfg.pool.cores,
                    buffers_per_core=cfg.pool.buffers_per_core,
                    buffer_bytes=cfg.pool.buffer_bytes,
                    workload=cfg.workload_spec(),
                    cost_model=cfg.cost_model())
    system.run()
    system.drain()
    done_at = {}
    for (_core, buf, inc, _req, done, _n, _by) in system.protect_log:
        done_at[(buf, inc)] = done
    emit_time = {}
    for b in system.pool.buffers:
        pass
    # entries' emit times live in the delay computation; rebuild from the
    # disk: every persisted record carries seq and emit_time
    entries = system.store.read_entries(1, system.store.next_free_lba - 1)
    by_seq = {e["seq"]: e["emit_time"] for e in entries}
    within = total = 0
    for seq, _core, buf, inc in system.append_log:
        if seq not in by_seq or (buf, inc) not in done_at:
            continue
        total += 1
        if done_at[(buf, inc)] - by_seq[seq] <= tp:
            within += 1
    frac_oracle = within / total
    delays = np.array(system.delay_samples, dtype=np.int64)
    frac = float(np.count_nonzero(delays <= tp) / delays.size)
    assert total == delays.size
    assert abs(frac - frac_oracle) < 1e-12


def test_cdf_max_delay_bounded_by_tp_plus_eps_max():
    cfg = _cdf_cfg(duration="200ms")
    r = run_deadline_cdf(cfg)
    eps_max = cfg.cost_model().epsilon_max("gpt", cfg.pool.buffer_bytes)
    assert int(r.log_delays.max()) <= cfg.tp_cycles() + eps_max
    assert r.max_epsilon <= eps_max


def test_cdf_rejects_copy_mechanisms():
    cfg = _cdf_cfg()
    cfg.experiment.mechanism = "memcpy"
    with pytest.raises(ValueError):
        run_deadline_cdf(cfg)


def test_cdf_artifacts_and_manifest(tmp_path):
    cfg = _cdf_cfg(duration="50ms")
    out = tmp_path / "cdf"
    run_deadline_cdf(cfg, out_dir=str(out))
    names = sorted(os.listdir(out))
    assert names == ["cdf_log_delays.csv", "cdf_protect.csv", "manifest.json",
                     "summary.json"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["schema"] == "logshield.deadline_cdf.v1"
    assert summary["audit"]["conserved"] is True


def _tput_cfg():
    cfg = Config()
    cfg.experiment.throughput_duration = "200ms"
    return cfg


def test_native_throughput_matches_generation_ceiling():
    cfg = Config()
    cfg.experiment.throughput_duration = "1s"
    rate = throughput_point(cfg, MODE_NATIVE, parse_duration("1ms", cfg.freq_hz))
    assert rate == 201_038.0          # floor(1.2e9 / 5,969) per second


def test_throughput_full_mode_conserves_and_persists_everything():
    cfg = _tput_cfg()
    tp = parse_duration("1ms", cfg.freq_hz)
    rate = throughput_point(cfg, MODE_GPT, tp)
    assert rate > 0


def test_throughput_ordering_and_monotonicity_small():
    cfg = _tput_cfg()
    tps = tuple(parse_duration(t, cfg.freq_hz) for t in ("1ms", "100us"))
    rows = run_throughput(cfg, tps=tps)
    by = {(r.mode, r.tp_cycles): r.relative_percent for r in rows}
    native = by[(MODE_NATIVE, None)]
    sync = by[(MODE_SYNC, None)]
    for tp in tps:
        assert native > by[(MODE_IN_MEMORY, tp)]
        assert by[(MODE_IN_MEMORY, tp)] >= by[(MODE_GPT, tp)]
        assert by[(MODE_IN_MEMORY, tp)] >= by[(MODE_S2PT, tp)]
        assert by[(MODE_GPT, tp)] > by[(MODE_MEMCPY, tp)]
        assert by[(MODE_S2PT, tp)] > by[(MODE_MEMCPY, tp)]
        assert by[(MODE_MEMCPY, tp)] > sync
    for mode in (MODE_IN_MEMORY, MODE_GPT, MODE_S2PT, MODE_MEMCPY):
        assert by[(mode, tps[0])] >= by[(mode, tps[1])]


def test_tamper_study_csv_matches_trials(tmp_path):
    cfg = Config()
    cfg.experiment.trials = 4
    out = tmp_path / "tamper"
    study = run_tamper_study(cfg, out_dir=str(out))
    lines = (out / "tamper_trials.csv").read_text().splitlines()
    assert len(lines) == 1 + 4
    summary = json.loads((out / "summary.json").read_text())
    assert summary["oracle_matches"] is True
    assert summary["lost_max"] == max(study.lost)


def test_tradeoff_single_point_equals_components(tmp_path):
    cfg = Config()
    cfg.experiment.trials = 3
    cfg.experiment.tp_list = ("1ms",)
    cfg.experiment.throughput_duration = "200ms"
    rows = run_tradeoff_sweep(cfg, out_dir=str(tmp_path / "sweep"))
    assert len(rows) == 1
    tp = parse_duration("1ms", cfg.freq_hz)
    rate = throughput_point(cfg, MODE_GPT, tp)
    study = run_tamper_study(cfg, tp_cycles=tp)
    agg = study.aggregate()
    assert rows[0]["logs_per_second"] == rate
    assert rows[0]["lost_max"] == agg["max"]
    assert rows[0]["lost_min"] == agg["min"]
