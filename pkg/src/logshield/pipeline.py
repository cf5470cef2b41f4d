"""Unified per-core log buffering.

Every captured event, whatever its layer (syscall audit, application log
write, network record), lands in the owning core's *current* buffer. When a
current buffer fills it is sealed and a fresh buffer is fetched from the
core's free list; sealed buffers stay in place until protected. When the
free list is empty the emitter blocks - entries queue in arrival order and
are never dropped, which is what defeats flooding: an attacker can stall
the generator but cannot evict anything already written.

Buffer life cycle: free -> current -> (sealed ->) protected -> consumed -> free.
State changes other than append/seal are driven by the monitor.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .memdomain import PhysRange

SRC_AUDIT = 0
SRC_APP = 1
SRC_NET = 2
SOURCE_NAMES = {SRC_AUDIT: "audit", SRC_APP: "app", SRC_NET: "net"}

PHASE_NONE = 0
PHASE_EXPLOIT = 1
PHASE_ESCALATE = 2
PHASE_LOAD = 3
PHASE_SPURIOUS = 4
PHASE_NAMES = {PHASE_NONE: "background", PHASE_EXPLOIT: "exploit",
               PHASE_ESCALATE: "escalate", PHASE_LOAD: "load",
               PHASE_SPURIOUS: "spurious"}

BUF_FREE = "free"
BUF_CURRENT = "current"
BUF_SEALED = "sealed"
BUF_PROTECTED = "protected"
BUF_CONSUMED = "consumed"


class LogEntry:
    __slots__ = ("seq", "source", "core", "emit_time", "size", "digest", "phase")

    def __init__(self, seq: int, source: int, core: int, emit_time: int,
                 size: int, digest: int, phase: int = PHASE_NONE):
        self.seq = seq
        self.source = source
        self.core = core
        self.emit_time = emit_time
        self.size = size
        self.digest = digest
        self.phase = phase

    def __repr__(self):  # pragma: no cover
        return f"LogEntry(seq={self.seq}, core={self.core}, t={self.emit_time})"


class Buffer:
    __slots__ = ("id", "core", "capacity", "range", "state", "used", "entries",
                 "incarnation", "protected_at")

    def __init__(self, buf_id: int, core: int, rng: PhysRange):
        self.id = buf_id
        self.core = core
        self.capacity = rng.length
        self.range = rng
        self.state = BUF_FREE
        self.used = 0
        self.entries: list[LogEntry] = []
        self.incarnation = 0
        self.protected_at: Optional[int] = None

    def fits(self, size: int) -> bool:
        return self.used + size <= self.capacity

    def append(self, entry: LogEntry) -> None:
        self.entries.append(entry)
        self.used += entry.size

    def reset(self) -> None:
        self.entries.clear()
        self.used = 0
        self.state = BUF_FREE
        self.protected_at = None
        self.incarnation += 1


class BufferPool:
    """Per-core free lists over one contiguous pre-allocated region."""

    def __init__(self, region: PhysRange, cores: int, per_core: int,
                 buffer_bytes: int):
        if per_core < 2:
            raise ValueError("need at least two buffers per core")
        if cores * per_core * buffer_bytes > region.length:
            raise ValueError("pool region too small for requested buffers")
        self.cores = cores
        self.per_core = per_core
        self.buffer_bytes = buffer_bytes
        self.buffers: list[Buffer] = []
        self.free_lists: list[deque[Buffer]] = [deque() for _ in range(cores)]
        i = 0
        for core in range(cores):
            for _ in range(per_core):
                rng = region.subrange(i * buffer_bytes, buffer_bytes)
                buf = Buffer(i, core, rng)
                self.buffers.append(buf)
                self.free_lists[core].append(buf)
                i += 1

    def pop_free(self, core: int) -> Optional[Buffer]:
        if self.free_lists[core]:
            buf = self.free_lists[core].popleft()
            return buf
        return None

    def push_free(self, buf: Buffer) -> None:
        self.free_lists[buf.core].append(buf)

    def of_core(self, core: int) -> list[Buffer]:
        return [b for b in self.buffers if b.core == core]

    def in_state(self, state: str) -> list[Buffer]:
        return [b for b in self.buffers if b.state == state]

    def entries_in_states(self, states: tuple[str, ...]) -> int:
        return sum(len(b.entries) for b in self.buffers if b.state in states)


@dataclass
class WorkloadSpec:
    """Arrival-rate description of one workload."""

    name: str
    rates: dict[int, float]            # source -> logs/second, whole machine
    entry_size: int = 256
    duration_s: float = 1.0

    @property
    def total_rate(self) -> float:
        return sum(self.rates.values())


WORKLOAD_PRESETS = {
    # stress benchmark: a syscall flood from one process
    "getpid-flood": WorkloadSpec("getpid-flood", {SRC_AUDIT: 201_038.0}),
    # real-program mixes, whole-machine rates
    "nginx": WorkloadSpec("nginx", {SRC_AUDIT: 53_038.0, SRC_APP: 25_144.0,
                                    SRC_NET: 594.0}),
    "redis": WorkloadSpec("redis", {SRC_AUDIT: 40_857.0, SRC_APP: 152.0,
                                    SRC_NET: 37_528.0}),
    "mysql": WorkloadSpec("mysql", {SRC_AUDIT: 76_228.0, SRC_APP: 5_151.0,
                                    SRC_NET: 20_583.0}),
}


def workload_by_name(name: str) -> WorkloadSpec:
    if name not in WORKLOAD_PRESETS:
        raise KeyError(f"unknown workload {name!r}; have {sorted(WORKLOAD_PRESETS)}")
    w = WORKLOAD_PRESETS[name]
    return WorkloadSpec(w.name, dict(w.rates), w.entry_size, w.duration_s)
