"""Run configuration: JSON file + command-line overrides.

A config file is a nested JSON object mirroring the dataclasses below.
Unknown keys are rejected with their full path so typos fail loudly.
Durations are strings with a unit suffix (``100us``, ``1ms``, ``15ms``,
``10s``) or plain integers meaning CPU cycles; everything is converted to
cycles at load time against the configured clock. An empty file (or no
file) yields the full defaults: measured cost table, 1.2 GHz clock, 16
buffers of 64 KB, the syscall-flood workload at a 1 ms timer.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any, Optional

from .costs import (CostModel, CostTable, DEFAULT_POINTS, JitterSpec,
                    OverheadParams, TABLE_SIZES)

EXPERIMENTS = ("deadline_cdf", "tamper_study", "throughput", "tradeoff_sweep")
MECHANISMS = ("native-obs", "in-memory", "gpt", "s2pt", "memcpy", "sync")

_DUR_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(us|ms|s|cyc|cycles)?\s*$")


class ConfigError(ValueError):
    """Bad or inconsistent configuration; message carries the key path."""


def parse_duration(value, freq_hz: int) -> int:
    """Duration literal -> integer cycles."""
    if isinstance(value, int):
        if value <= 0:
            raise ConfigError(f"duration must be positive, got {value}")
        return value
    m = _DUR_RE.match(str(value))
    if not m:
        raise ConfigError(f"cannot parse duration {value!r}")
    num = float(m.group(1))
    unit = m.group(2) or "cycles"
    scale = {"us": freq_hz / 1_000_000, "ms": freq_hz / 1000, "s": freq_hz,
             "cyc": 1, "cycles": 1}[unit]
    cycles = int(round(num * scale))
    if cycles <= 0:
        raise ConfigError(f"duration {value!r} is below one cycle")
    return cycles


@dataclass
class PoolConfig:
    cores: int = 4
    buffers_per_core: int = 4
    buffer_bytes: int = 65536


@dataclass
class DiskConfig:
    sectors: int = 1 << 20      # 512 MB log disk
    store_bytes: bool = True


@dataclass
class WorkloadConfig:
    name: str = "getpid-flood"
    entry_size: int = 256
    rates: Optional[dict] = None      # {"audit": n, "app": n, "net": n}


@dataclass
class GicConfig:
    attack: bool = False
    mitigation: bool = False
    contention_extra: str | int = "200us"


@dataclass
class ScenarioConfig:
    preset: str = "cve-2022-0847"
    cores: int = 6                    # attack logs spread over these cores
    buffers_per_core: int = 2
    start_offset: str | int = "2ms"   # base before the randomized phase
    gic: GicConfig = field(default_factory=GicConfig)


@dataclass
class JitterConfig:
    kind: str = "trunc_exp"
    mean: float = 6850.0
    cap: float = 11000.0
    lo: float = 0.0
    hi: float = 0.0


@dataclass
class OverheadConfig:
    c_gen: int = 5969
    lock_hold: int = 60
    interrupt_latency: int = 1200
    lock_wait_max: int = 120
    sync_extra: int = 3307
    smc_cost: int = 1500
    rotate_cost: int = 500
    consume_fixed: int = 2000
    consume_per_byte: float = 2.6
    persist_fixed: int = 3000
    persist_per_byte: float = 0.05
    sched_latency: int = 12000
    jitter: JitterConfig = field(default_factory=JitterConfig)


@dataclass
class ExperimentConfig:
    experiment: str = "deadline_cdf"
    mechanism: str = "gpt"
    tp: str | int = "1ms"
    tp_list: tuple = ("15ms", "1ms", "500us", "100us")
    workload: str = "getpid-flood"
    trials: int = 50
    duration: str | int = "10s"            # deadline_cdf run length
    throughput_duration: str | int = "1s"  # per-mode throughput run length


@dataclass
class Config:
    seed: int = 1
    freq_hz: int = 1_200_000_000
    cost_points: Optional[dict] = None     # {"gpt": [[bytes, cycles], ...]}
    overhead: OverheadConfig = field(default_factory=OverheadConfig)
    pool: PoolConfig = field(default_factory=PoolConfig)
    disk: DiskConfig = field(default_factory=DiskConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    # -- derived objects ----------------------------------------------------

    def tp_cycles(self) -> int:
        return parse_duration(self.experiment.tp, self.freq_hz)

    def duration_cycles(self) -> int:
        return parse_duration(self.experiment.duration, self.freq_hz)

    def throughput_duration_cycles(self) -> int:
        return parse_duration(self.experiment.throughput_duration, self.freq_hz)

    def gic_contention_cycles(self) -> int:
        return parse_duration(self.scenario.gic.contention_extra, self.freq_hz)

    def start_offset_cycles(self) -> int:
        return parse_duration(self.scenario.start_offset, self.freq_hz)

    def cost_model(self) -> CostModel:
        tables = {}
        for mech, row in DEFAULT_POINTS.items():
            pts = list(zip(TABLE_SIZES, row))
            if self.cost_points and mech in self.cost_points:
                override = {int(b): int(c) for b, c in self.cost_points[mech]}
                pts = sorted({**dict(pts), **override}.items())
            tables[mech] = CostTable(mech, tuple(pts))
        oc = self.overhead
        jit = JitterSpec(oc.jitter.kind, oc.jitter.mean, oc.jitter.cap,
                         oc.jitter.lo, oc.jitter.hi)
        ov = OverheadParams(
            c_gen=oc.c_gen, lock_hold=oc.lock_hold,
            interrupt_latency=oc.interrupt_latency,
            lock_wait_max=oc.lock_wait_max, epsilon_jitter=jit,
            sync_extra=oc.sync_extra, smc_cost=oc.smc_cost,
            rotate_cost=oc.rotate_cost, consume_fixed=oc.consume_fixed,
            consume_per_byte=oc.consume_per_byte,
            persist_fixed=oc.persist_fixed,
            persist_per_byte=oc.persist_per_byte,
            sched_latency=oc.sched_latency)
        return CostModel(tables, ov)

    def workload_spec(self):
        from .pipeline import (SRC_APP, SRC_AUDIT, SRC_NET, WorkloadSpec,
                               workload_by_name)
        w = workload_by_name(self.workload.name) \
            if self.workload.rates is None else None
        if w is None:
            name_to_src = {"audit": SRC_AUDIT, "app": SRC_APP, "net": SRC_NET}
            rates = {}
            for k, v in self.workload.rates.items():
                if k not in name_to_src:
                    raise ConfigError(f"workload.rates.{k}: unknown source")
                rates[name_to_src[k]] = float(v)
            w = WorkloadSpec("custom", rates)
        w.entry_size = self.workload.entry_size
        return w

    def validate(self) -> None:
        if self.experiment.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment.experiment: {self.experiment.experiment!r} "
                              f"not one of {EXPERIMENTS}")
        if self.experiment.mechanism not in MECHANISMS:
            raise ConfigError(f"experiment.mechanism: {self.experiment.mechanism!r} "
                              f"not one of {MECHANISMS}")
        if self.experiment.trials < 1:
            raise ConfigError("experiment.trials: must be >= 1")
        if self.pool.buffers_per_core < 2:
            raise ConfigError("pool.buffers_per_core: need at least two")
        for name in ("tp", "duration", "throughput_duration"):
            parse_duration(getattr(self.experiment, name), self.freq_hz)
        for t in self.experiment.tp_list:
            parse_duration(t, self.freq_hz)
        self.cost_model()       # raises on malformed overrides
        self.workload_spec()

    def echo(self) -> dict:
        return asdict(self)


def _fill(dc_type, data: dict, path: str):
    """Recursive dict -> dataclass with unknown-key rejection."""
    base = dc_type()            # every config dataclass is fully defaulted
    known = {f.name for f in fields(dc_type)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown key {path + key!r}")
        current = getattr(base, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{path + key}: expected an object")
            kwargs[key] = _fill(type(current), value, path + key + ".")
        else:
            if isinstance(value, list) and isinstance(current, tuple):
                value = tuple(value)
            kwargs[key] = value
    return dc_type(**kwargs)


def config_from_dict(data: dict) -> Config:
    cfg = _fill(Config, data, "")
    cfg.validate()
    return cfg


def load_config(path: Optional[str]) -> Config:
    if path is None:
        cfg = Config()
        cfg.validate()
        return cfg
    try:
        with open(path) as fh:
            text = fh.read().strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    if not text:
        data = {}
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(data)


def apply_overrides(cfg: Config, pairs: list[str]) -> Config:
    """Apply ``section.key=value`` overrides (flags win over the file)."""
    data = asdict(cfg)
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} must look like key.path=value")
        key, raw = pair.split("=", 1)
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"unknown key {key!r}")
            node = node[p]
        leaf = parts[-1]
        if leaf not in node:
            raise ConfigError(f"unknown key {key!r}")
        try:
            node[leaf] = json.loads(raw)
        except json.JSONDecodeError:
            node[leaf] = raw
    return config_from_dict(data)
