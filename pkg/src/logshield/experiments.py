"""Experiment drivers and machine-readable result emission.

Four experiments:

* ``deadline_cdf``    - per-protection latency and per-log protection-delay
                        distribution under a timed workload;
* ``tamper_study``    - randomized-start attack trials, lost-log statistics
                        plus an independent recount oracle per trial;
* ``throughput``      - closed-loop generator ceiling per protection mode,
                        relative to the unprotected baseline;
* ``tradeoff_sweep``  - throughput and worst-case loss joined per timer
                        period.

Every experiment writes CSV artifacts plus a ``summary.json`` and a
``manifest.json`` listing each artifact with its SHA-256. Outputs contain
nothing from the host environment (no clocks, paths, hostnames), so a
rerun with the same config and seed is byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .attacker import (ATTACK_PRESETS, Attacker, TamperResult, recount_lost,
                       scenario_by_name)
from .config import Config, parse_duration
from .engine import Rng
from .system import (ALL_MODES, DEFAULT_TRACE_KINDS, FULL_PIPELINE_MODES,
                     MODE_GPT, MODE_IN_MEMORY, MODE_NATIVE, MODE_S2PT,
                     MODE_SYNC, RunOptions, System)

QUANTILE_GRID = tuple(i / 1000 for i in range(1001))


# -- shared plumbing -----------------------------------------------------------

def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: str, cfg: Config, artifacts: list[str]) -> str:
    entries = []
    for name in sorted(artifacts):
        path = os.path.join(out_dir, name)
        entries.append({"name": name, "sha256": _sha256(path),
                        "bytes": os.path.getsize(path)})
    manifest = {
        "schema": "logshield.manifest.v1",
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.echo(),
        "artifacts": entries,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def _write_summary(out_dir: str, payload: dict) -> str:
    path = os.path.join(out_dir, "summary.json")
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def _new_system(cfg: Config, opts: RunOptions, *, cores: Optional[int] = None,
                buffers_per_core: Optional[int] = None,
                seed: Optional[int] = None, workload=None) -> System:
    return System(
        opts,
        seed=cfg.seed if seed is None else seed,
        freq_hz=cfg.freq_hz,
        cores=cfg.pool.cores if cores is None else cores,
        buffers_per_core=(cfg.pool.buffers_per_core if buffers_per_core is None
                          else buffers_per_core),
        buffer_bytes=cfg.pool.buffer_bytes,
        workload=workload,
        cost_model=cfg.cost_model(),
        disk_sectors=cfg.disk.sectors,
    )


def _mode_of(mechanism: str) -> str:
    return mechanism  # config mechanism names equal system mode names


# -- deadline CDF ---------------------------------------------------------------

@dataclass
class CdfResult:
    tp_cycles: int
    mechanism: str
    protect_samples: list            # (core, buf, inc, request, done, n, bytes)
    epsilon_cycles: np.ndarray
    log_delays: np.ndarray
    fraction_within_tp: float
    max_epsilon: int
    quantiles_epsilon_us: dict = field(default_factory=dict)
    quantiles_delay_us: dict = field(default_factory=dict)
    audit: dict = field(default_factory=dict)


def run_deadline_cdf(cfg: Config, out_dir: Optional[str] = None,
                     full_trace: bool = False) -> CdfResult:
    tp = cfg.tp_cycles()
    mode = _mode_of(cfg.experiment.mechanism)
    if mode not in (MODE_GPT, MODE_S2PT):
        raise ValueError("deadline_cdf needs a permission-switch mechanism")
    opts = RunOptions(mode=mode, tp_cycles=tp,
                      duration_cycles=cfg.duration_cycles(),
                      workload_mode="open", collect_delays=True,
                      store_bytes=False,
                      trace_kinds=None if full_trace else DEFAULT_TRACE_KINDS)
    system = _new_system(cfg, opts, workload=cfg.workload_spec())
    system.run()
    system.drain()

    eps = np.array([done - req for (_c, _b, _i, req, done, _n, _by)
                    in system.protect_log], dtype=np.int64)
    delays = np.array(system.delay_samples, dtype=np.int64)
    to_us = 1_000_000 / cfg.freq_hz
    frac = float(np.count_nonzero(delays <= tp) / delays.size) if delays.size else 1.0
    qs = (0.5, 0.9, 0.99, 0.999, 1.0)
    result = CdfResult(
        tp_cycles=tp, mechanism=mode, protect_samples=system.protect_log,
        epsilon_cycles=eps, log_delays=delays,
        fraction_within_tp=frac,
        max_epsilon=int(eps.max()) if eps.size else 0,
        quantiles_epsilon_us={str(q): float(np.quantile(eps, q) * to_us)
                              for q in qs} if eps.size else {},
        quantiles_delay_us={str(q): float(np.quantile(delays, q) * to_us)
                            for q in qs} if delays.size else {},
        audit=system.audit(),
    )
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        artifacts = []
        path = os.path.join(out_dir, "cdf_protect.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "core", "buffer", "incarnation",
                        "request_cycles", "complete_cycles", "epsilon_cycles",
                        "epsilon_us", "entries", "bytes"])
            for i, (core, b, inc, req, done, n, used) in enumerate(system.protect_log):
                w.writerow([i, core, b, inc, req, done, done - req,
                            f"{(done - req) * to_us:.4f}", n, used])
        artifacts.append("cdf_protect.csv")

        path = os.path.join(out_dir, "cdf_log_delays.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["quantile", "delay_cycles", "delay_us"])
            if delays.size:
                grid = np.quantile(delays, QUANTILE_GRID, method="nearest")
                for q, d in zip(QUANTILE_GRID, grid):
                    w.writerow([f"{q:.3f}", int(d), f"{int(d) * to_us:.4f}"])
        artifacts.append("cdf_log_delays.csv")

        summary = {
            "schema": "logshield.deadline_cdf.v1",
            "mechanism": mode,
            "tp_cycles": tp,
            "tp_us": tp * to_us,
            "protect_events": int(eps.size),
            "log_count": int(delays.size),
            "fraction_within_tp": result.fraction_within_tp,
            "max_epsilon_cycles": result.max_epsilon,
            "max_epsilon_us": result.max_epsilon * to_us,
            "quantiles_epsilon_us": result.quantiles_epsilon_us,
            "quantiles_delay_us": result.quantiles_delay_us,
            "audit": result.audit,
        }
        _write_summary(out_dir, summary)
        artifacts.append("summary.json")
        if full_trace:
            system.trace.to_ndjson(os.path.join(out_dir, "trace.ndjson"))
            artifacts.append("trace.ndjson")
        write_manifest(out_dir, cfg, artifacts)
    return result


# -- tamper study ------------------------------------------------------------------

@dataclass
class TamperTrial:
    index: int
    seed: int
    result: TamperResult
    oracle_lost: int
    conserved: bool


@dataclass
class TamperStudy:
    scenario: str
    tp_cycles: int
    trials: list[TamperTrial]

    @property
    def lost(self) -> list[int]:
        return [t.result.lost_logs for t in self.trials]

    def aggregate(self) -> dict:
        lost = self.lost
        return {"min": min(lost), "avg": sum(lost) / len(lost), "max": max(lost)}


def run_tamper_trial(cfg: Config, tp_cycles: int, scenario_name: str,
                     trial_index: int,
                     trace_path: Optional[str] = None) -> TamperTrial:
    scenario = scenario_by_name(scenario_name)
    trial_rng = Rng(cfg.seed).child(f"tamper-trial{trial_index}")
    seed = trial_rng.seed
    # attack starts at a random phase of the timer period
    start = cfg.start_offset_cycles() + trial_rng.uniform_int(0, tp_cycles - 1)
    total_cycles = int(round(scenario.total_ms * cfg.freq_hz / 1000))
    duration = start + total_cycles + 4 * tp_cycles + 1_000_000
    opts = RunOptions(mode=_mode_of(cfg.experiment.mechanism),
                      tp_cycles=tp_cycles, duration_cycles=duration,
                      workload_mode="none", record_appends=True,
                      gic_mitigation=cfg.scenario.gic.mitigation,
                      trace_kinds=None if trace_path else DEFAULT_TRACE_KINDS)
    system = _new_system(cfg, opts, cores=cfg.scenario.cores,
                         buffers_per_core=cfg.scenario.buffers_per_core,
                         seed=seed)
    scenario2 = scenario
    if cfg.scenario.gic.attack:
        from dataclasses import replace
        scenario2 = replace(scenario, gic_attack=True)
    attacker = Attacker(system, scenario2, start,
                        gic_contention_cycles=cfg.gic_contention_cycles())
    attacker.install()
    system.run()
    system.drain()
    oracle = recount_lost(system, attacker.result)
    if trace_path:
        system.trace.to_ndjson(trace_path)
    return TamperTrial(trial_index, seed, attacker.result, oracle,
                       system.conservation_ok())


def run_tamper_study(cfg: Config, out_dir: Optional[str] = None,
                     tp_cycles: Optional[int] = None,
                     full_trace: bool = False) -> TamperStudy:
    tp = cfg.tp_cycles() if tp_cycles is None else tp_cycles
    name = cfg.scenario.preset
    trace_paths = {}
    if full_trace and out_dir:
        os.makedirs(out_dir, exist_ok=True)
        trace_paths = {i: os.path.join(out_dir, f"trace_trial{i}.ndjson")
                       for i in range(cfg.experiment.trials)}
    trials = [run_tamper_trial(cfg, tp, name, i, trace_paths.get(i))
              for i in range(cfg.experiment.trials)]
    study = TamperStudy(name, tp, trials)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        to_us = 1_000_000 / cfg.freq_hz
        path = os.path.join(out_dir, "tamper_trials.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "seed", "start_us", "clear_us", "total_logs",
                        "lost", "lost_exploit", "lost_escalate", "lost_load",
                        "oracle_lost", "protected_at_clear", "conserved"])
            for t in trials:
                r = t.result
                w.writerow([t.index, t.seed, f"{r.start_cycles * to_us:.3f}",
                            f"{r.clear_cycles * to_us:.3f}", r.total_logs,
                            r.lost_logs,
                            r.lost_by_phase.get("exploit", 0),
                            r.lost_by_phase.get("escalate", 0),
                            r.lost_by_phase.get("load", 0),
                            t.oracle_lost, r.protected_at_clear,
                            int(t.conserved)])
        agg = study.aggregate()
        summary = {
            "schema": "logshield.tamper_study.v1",
            "scenario": name,
            "tp_cycles": tp,
            "trials": len(trials),
            "total_logs": trials[0].result.total_logs,
            "lost_min": agg["min"],
            "lost_avg": agg["avg"],
            "lost_max": agg["max"],
            "oracle_matches": all(t.oracle_lost == t.result.lost_logs
                                  for t in trials),
            "all_conserved": all(t.conserved for t in trials),
        }
        _write_summary(out_dir, summary)
        artifacts = ["tamper_trials.csv", "summary.json"]
        artifacts.extend(os.path.basename(p) for p in trace_paths.values())
        write_manifest(out_dir, cfg, artifacts)
    return study


# -- throughput ------------------------------------------------------------------

@dataclass
class ThroughputResult:
    mode: str
    tp_cycles: Optional[int]
    logs_per_second: float
    relative_percent: float


def throughput_point(cfg: Config, mode: str, tp_cycles: int) -> float:
    """Sustained logs/second for one mode at one timer period."""
    duration = cfg.throughput_duration_cycles()
    opts = RunOptions(mode=mode, tp_cycles=tp_cycles, duration_cycles=duration,
                      workload_mode="closed", daemon_core=0,
                      active_cores=(0,), store_bytes=False,
                      trace_kinds=("power",))
    system = _new_system(cfg, opts)
    system._closed_entry_size = cfg.workload.entry_size
    system.run()
    if mode in FULL_PIPELINE_MODES:
        drained = system.drain()
        if not drained:
            raise RuntimeError(f"{mode}: pipeline failed to drain")
        if not system.conservation_ok():
            raise RuntimeError(f"{mode}: conservation audit failed")
        metric = (system.stats.ever_protected if mode == MODE_IN_MEMORY
                  else system.stats.persisted)
    elif mode == MODE_SYNC:
        metric = system.stats.sync_protected
    else:
        metric = system.stats.emitted
    return metric * cfg.freq_hz / duration


def run_throughput(cfg: Config, out_dir: Optional[str] = None,
                   modes: Optional[tuple[str, ...]] = None,
                   tps: Optional[tuple[int, ...]] = None) -> list[ThroughputResult]:
    if modes is None:
        modes = ALL_MODES
    if tps is None:
        tps = tuple(parse_duration(t, cfg.freq_hz)
                    for t in cfg.experiment.tp_list)
    native = throughput_point(cfg, MODE_NATIVE, tps[0])
    results: list[ThroughputResult] = [
        ThroughputResult(MODE_NATIVE, None, native, 100.0)]
    for mode in modes:
        if mode == MODE_NATIVE:
            continue
        if mode == MODE_SYNC:
            rate = throughput_point(cfg, mode, tps[0])
            results.append(ThroughputResult(mode, None, rate,
                                            100.0 * rate / native))
            continue
        for tp in tps:
            rate = throughput_point(cfg, mode, tp)
            results.append(ThroughputResult(mode, tp, rate,
                                            100.0 * rate / native))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        to_us = 1_000_000 / cfg.freq_hz
        path = os.path.join(out_dir, "throughput.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mode", "tp_us", "logs_per_second", "relative_percent"])
            for r in results:
                w.writerow([r.mode,
                            f"{r.tp_cycles * to_us:.1f}" if r.tp_cycles else "",
                            f"{r.logs_per_second:.3f}",
                            f"{r.relative_percent:.4f}"])
        summary = {
            "schema": "logshield.throughput.v1",
            "baseline_logs_per_second": native,
            "rows": [{"mode": r.mode, "tp_cycles": r.tp_cycles,
                      "logs_per_second": r.logs_per_second,
                      "relative_percent": r.relative_percent}
                     for r in results],
        }
        _write_summary(out_dir, summary)
        write_manifest(out_dir, cfg, ["throughput.csv", "summary.json"])
    return results


# -- deadline / performance trade-off -----------------------------------------------

def run_tradeoff_sweep(cfg: Config, out_dir: Optional[str] = None) -> list[dict]:
    mech = cfg.experiment.mechanism
    rows = []
    native = throughput_point(cfg, MODE_NATIVE, cfg.tp_cycles())
    for tp_text in cfg.experiment.tp_list:
        tp = parse_duration(tp_text, cfg.freq_hz)
        rate = throughput_point(cfg, _mode_of(mech), tp)
        study = run_tamper_study(cfg, out_dir=None, tp_cycles=tp)
        agg = study.aggregate()
        rows.append({"tp": tp_text, "tp_cycles": tp,
                     "logs_per_second": rate,
                     "relative_percent": 100.0 * rate / native,
                     "lost_min": agg["min"], "lost_avg": agg["avg"],
                     "lost_max": agg["max"]})
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "tradeoff.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tp", "tp_cycles", "logs_per_second",
                        "relative_percent", "lost_min", "lost_avg",
                        "lost_max"])
            for r in rows:
                w.writerow([r["tp"], r["tp_cycles"],
                            f"{r['logs_per_second']:.3f}",
                            f"{r['relative_percent']:.4f}",
                            r["lost_min"], f"{r['lost_avg']:.3f}",
                            r["lost_max"]])
        summary = {"schema": "logshield.tradeoff_sweep.v1",
                   "mechanism": mech, "rows": rows}
        _write_summary(out_dir, summary)
        write_manifest(out_dir, cfg, ["tradeoff.csv", "summary.json"])
    return rows


EXPERIMENT_RUNNERS = {
    "deadline_cdf": run_deadline_cdf,
    "tamper_study": run_tamper_study,
    "throughput": run_throughput,
    "tradeoff_sweep": run_tradeoff_sweep,
}
