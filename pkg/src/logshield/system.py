"""Full-system assembly and run orchestration.

Wires the event engine, memory views, cost model, buffer pool, monitor,
storage driver, daemon and (optionally) an attacker into one deterministic
run. The moving parts:

* a periodic timer requests protection of every core's dirty buffers;
* a protection chain per core revokes OS access inside a per-core atomic
  window whose length is the modeled protection latency (interrupt
  dispatch + writer lock wait + permission switch + jitter);
* workload pumps emit log entries either open loop (timed arrivals, used
  by the deadline experiments) or closed loop (saturating generator, used
  by the throughput experiments);
* the daemon's consumer/manager events drain protected buffers to staging
  and staging to the log disk;
* a shutdown path persists whatever the protected domain still holds.

Entry timestamps are always the *intended* emission instant, so an entry
delayed behind a protection window keeps its causal time; that is what the
per-log protection-delay distribution measures. A full current buffer is
sealed in place and a fresh buffer taken from the core's free list; sealed
buffers are protected by the next chain, and an empty free list blocks the
emitter rather than dropping anything.
"""

from __future__ import annotations

import hashlib
import math
from array import array
from collections import deque
from dataclasses import dataclass
from typing import Optional

from .costs import CostModel, MECH_GPT, MECH_MEMCPY, MECH_S2PT
from .daemon import AdminClient, DaemonProtocol, establish_channel, provision_keys
from .driver import (DeviceModel, DiskFullError, DmaArena, LogStore, SampleJob,
                     encode_record, record)
from .engine import Engine, PRIORITY_MONITOR, PRIORITY_TIMER
from .memdomain import MemoryLayout, MemorySystem
from .monitor import Monitor, PowerEvent, SMC_INIT_SECURE_IO, SmcRequest
from .pipeline import (BUF_CONSUMED, BUF_CURRENT, BUF_PROTECTED, BUF_SEALED,
                       Buffer, BufferPool, LogEntry, PHASE_NONE,
                       PHASE_SPURIOUS, SRC_AUDIT, WorkloadSpec)
from .trace import Trace

MODE_NATIVE = "native-obs"
MODE_IN_MEMORY = "in-memory"
MODE_GPT = "gpt"
MODE_S2PT = "s2pt"
MODE_MEMCPY = "memcpy"
MODE_SYNC = "sync"
ALL_MODES = (MODE_NATIVE, MODE_IN_MEMORY, MODE_GPT, MODE_S2PT, MODE_MEMCPY,
             MODE_SYNC)
FULL_PIPELINE_MODES = (MODE_IN_MEMORY, MODE_GPT, MODE_S2PT, MODE_MEMCPY)

DEFAULT_TRACE_KINDS = ("fault", "iago", "power", "attest", "admin", "attack",
                       "clear", "block")

_DIGEST_MIX = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1
_CLOSED_BATCH = 20_000  # max entries modeled per closed-loop pump event


@dataclass
class RunOptions:
    mode: str = MODE_GPT
    tp_cycles: int = 1_200_000            # 1 ms at 1.2 GHz
    duration_cycles: int = 1_200_000_000  # 1 s
    workload_mode: str = "open"           # open | closed | none
    track_identity: bool = False
    collect_delays: bool = False
    record_appends: bool = False
    daemon_core: Optional[int] = None     # daemon shares this generator core
    store_bytes: bool = True
    trace_kinds: Optional[tuple] = DEFAULT_TRACE_KINDS
    gic_mitigation: bool = False
    active_cores: Optional[tuple[int, ...]] = None

    @property
    def switch_mechanism(self) -> str:
        # permission tables need a concrete primitive even when protection
        # time is charged as a copy
        return MECH_S2PT if self.mode == MODE_S2PT else MECH_GPT

    @property
    def protect_mechanism(self) -> str:
        return MECH_MEMCPY if self.mode == MODE_MEMCPY else self.switch_mechanism


class RunStats:
    __slots__ = ("emitted", "emitted_by_phase", "sync_protected", "cleared",
                 "cleared_by_phase", "persisted", "ever_protected", "consumed",
                 "blocked_waits", "track_identity", "emitted_seqs",
                 "ever_protected_seqs", "persisted_seqs")

    def __init__(self, track_identity: bool = False):
        self.emitted = 0
        self.emitted_by_phase: dict[int, int] = {}
        self.sync_protected = 0
        self.cleared = 0
        self.cleared_by_phase: dict[int, int] = {}
        self.persisted = 0
        self.ever_protected = 0
        self.consumed = 0
        self.blocked_waits = 0
        self.track_identity = track_identity
        self.emitted_seqs: set[int] = set()
        self.ever_protected_seqs: set[int] = set()
        self.persisted_seqs: set[int] = set()


class System:
    """One assembled machine; build fresh per run or per trial."""

    def __init__(self, opts: RunOptions, *, seed: int = 1,
                 freq_hz: int = 1_200_000_000,
                 cores: int = 4, buffers_per_core: int = 4,
                 buffer_bytes: int = 65536,
                 workload: Optional[WorkloadSpec] = None,
                 cost_model: Optional[CostModel] = None,
                 layout: Optional[MemoryLayout] = None,
                 disk_sectors: int = 1 << 20):
        self.opts = opts
        self.cores = cores
        self.engine = Engine(freq_hz=freq_hz, seed=seed)
        self.rng = self.engine.rng
        self.trace = Trace(opts.trace_kinds)
        self.costs = cost_model if cost_model is not None else CostModel()
        self.layout = layout if layout is not None else MemoryLayout()
        self.workload = workload
        self.stats = RunStats(opts.track_identity)

        self.memsys = MemorySystem(self.layout, opts.switch_mechanism,
                                   self.costs, self.trace,
                                   gic_mitigation=opts.gic_mitigation)
        self.memsys.smmu.register("log_disk", [self.layout["dma"]])

        # record the driver template offline against a scratch device, then
        # install it for the live log disk
        scratch = DeviceModel(1024, self.layout["dma"])
        scratch_arena = DmaArena(self.layout["dma"])
        jobs = [SampleJob(8, b"\xaa" * 512), SampleJob(40, b"\xbb" * 1024),
                SampleJob(96, b"\xcc" * 512), SampleJob(12, read_sectors=2)]
        self.template = record(jobs, scratch, scratch_arena)
        self.device = DeviceModel(disk_sectors, self.layout["dma"],
                                  store_bytes=opts.store_bytes)
        self.arena = DmaArena(self.layout["dma"])
        self.store = LogStore(self.template, self.device, self.arena,
                              self.layout["dma"])

        self.pool = BufferPool(self.layout["buffer_pool"], cores,
                               buffers_per_core, buffer_bytes)
        self.monitor = Monitor(self.engine, self.memsys, self.costs, self.pool,
                               self.store, self.trace)
        self.monitor.on_persist = self._note_persisted

        # daemon provisioning, attestation, secure I/O init, channel, first
        # schedule-in (which closes the initialization phase)
        self.keys, self.admin_creds = provision_keys(self.rng.child("keys"))
        self.daemon_image = self.rng.child("daemon-image").bytes(4096)
        self.monitor.init_daemon(self.daemon_image,
                                 hashlib.sha256(self.daemon_image).digest(),
                                 self.keys, self.rng.child("daemon-ctx").bytes(64))
        self.monitor.handle_smc(SmcRequest(SMC_INIT_SECURE_IO, "os", "os"))
        self.protocol = DaemonProtocol(self.keys, self.monitor, self.trace)
        self.admin = AdminClient(self.admin_creds, self.rng.child("admin"))
        establish_channel(self.admin, self.protocol, self.rng.child("channel"))
        self.monitor.sched_in_daemon()

        # mutable pipeline state
        self.current: list[Optional[Buffer]] = []
        self.sealed_count = [0] * cores
        self.blocked: list[deque] = [deque() for _ in range(cores)]
        self.chain_busy = [False] * cores
        self.chain_pending: list[set] = [set() for _ in range(cores)]
        self.pending_chain_start: list[Optional[int]] = [None] * cores
        self.staging: list[LogEntry] = []
        self.consume_scheduled = False
        self.manager_scheduled = False
        self.consume_busy = False
        self.manager_busy = False
        self.os_honest = True
        self.halted = False
        self.disk_full = False
        self.emit_until = opts.duration_cycles
        self.degraded_timer_extra = 0
        self._seq = 0
        self._next_arrival = [0] * cores
        self._arrival_rng = [self.rng.child(f"workload{c}") for c in range(cores)]
        self._rate_per_core = [0.0] * cores
        self._eps_rng = self.rng.child("epsilon")
        self._closed_entry_size = 256
        self._pump_live = [False] * cores
        self._consume_begin_at: Optional[int] = None
        self._manager_begin_at: Optional[int] = None

        # oracle feeds and experiment outputs
        self.protect_log: list[tuple] = []   # (core, buf, inc, request_t, done_t, entries, bytes)
        self.delay_samples = array("q")      # per-entry emission -> protected
        self.append_log: list[tuple] = []    # (seq, core, buf, inc)

        for core in range(cores):
            buf = self.pool.pop_free(core)
            buf.state = BUF_CURRENT
            self.current.append(buf)

        self.active_cores = tuple(opts.active_cores) if opts.active_cores \
            else tuple(range(cores))

    # -- small helpers -----------------------------------------------------

    def _note_persisted(self, entries: list[LogEntry]) -> None:
        self.stats.persisted += len(entries)
        if self.stats.track_identity:
            self.stats.persisted_seqs.update(e.seq for e in entries)

    def gen_actor(self, core: int) -> str:
        return f"gen{core}"

    def _chain_scope(self, core: int) -> set[str]:
        scope = {self.gen_actor(core)}
        if self.opts.daemon_core == core:
            scope.update(("daemon.consumer", "daemon.manager"))
        return scope

    def _daemon_scope(self, me: str) -> set[str]:
        dc = self.opts.daemon_core
        if dc is None:
            return set()
        peer = "daemon.manager" if me == "daemon.consumer" else "daemon.consumer"
        return {self.gen_actor(dc), f"prot{dc}", peer}

    def _timer_enabled(self) -> bool:
        return self.opts.mode in FULL_PIPELINE_MODES

    def next_boundary(self, t: int) -> int:
        tp = self.opts.tp_cycles
        return ((t // tp) + 1) * tp

    # -- emission ------------------------------------------------------------

    def emit(self, core: int, source: int, size: int, phase: int = PHASE_NONE,
             emit_time: Optional[int] = None) -> LogEntry:
        """Append one entry to the core's current buffer, sealing and
        blocking as the pool dictates. Never drops."""
        t = self.engine.now if emit_time is None else emit_time
        seq = self._seq
        self._seq += 1
        entry = LogEntry(seq, source, core, t, size,
                         (seq * _DIGEST_MIX) & _MASK64, phase)
        self.stats.emitted += 1
        if phase:
            self.stats.emitted_by_phase[phase] = \
                self.stats.emitted_by_phase.get(phase, 0) + 1
        if self.stats.track_identity:
            self.stats.emitted_seqs.add(seq)
        self._place(entry)
        return entry

    def _place(self, entry: LogEntry) -> None:
        core = entry.core
        buf = self.current[core]
        if buf is not None and not buf.fits(entry.size):
            self._seal(core)
            buf = self.current[core]
        if buf is None:
            self.blocked[core].append(entry)
            self.stats.blocked_waits += 1
            self.trace.record(self.engine.now, self.gen_actor(core), "block",
                              seq=entry.seq)
            return
        buf.append(entry)
        if self.opts.record_appends:
            self.append_log.append((entry.seq, core, buf.id, buf.incarnation))

    def _seal(self, core: int) -> None:
        buf = self.current[core]
        buf.state = BUF_SEALED
        self.sealed_count[core] += 1
        self.request_protect(core, "seal")
        nxt = self.pool.pop_free(core)
        if nxt is not None:
            nxt.state = BUF_CURRENT
        self.current[core] = nxt

    def _wake(self, core: int) -> None:
        if self.current[core] is None:
            nxt = self.pool.pop_free(core)
            if nxt is None:
                return
            nxt.state = BUF_CURRENT
            self.current[core] = nxt
            self.trace.record(self.engine.now, self.gen_actor(core), "wake")
        q = self.blocked[core]
        while q and self.current[core] is not None:
            entry = q[0]
            buf = self.current[core]
            if buf.fits(entry.size):
                q.popleft()
                buf.append(entry)
                if self.opts.record_appends:
                    self.append_log.append((entry.seq, core, buf.id,
                                            buf.incarnation))
            else:
                self._seal(core)
        if self.opts.workload_mode == "closed" and self.current[core] is not None:
            self._schedule_pump(core, self.engine.now)

    def flood(self, core: int, count: int, size: int = 256) -> int:
        """Spurious unprivileged emissions; same no-drop blocking rules."""
        for _ in range(count):
            self.emit(core, SRC_AUDIT, size, phase=PHASE_SPURIOUS)
        return count

    # -- protection chains ------------------------------------------------------

    def request_protect(self, core: int, cause: str) -> None:
        self.chain_pending[core].add(cause)
        if self.chain_busy[core]:
            return
        self.chain_busy[core] = True
        start_at = (self.engine.now + self.costs.overhead.interrupt_latency
                    + self.degraded_timer_extra)
        self.pending_chain_start[core] = start_at
        request_t = self.engine.now
        self.engine.schedule(start_at, lambda: self._chain_start(core, request_t),
                             actor=f"prot{core}", priority=PRIORITY_MONITOR)

    def _chain_start(self, core: int, request_t: int) -> None:
        self.pending_chain_start[core] = None
        causes = self.chain_pending[core]
        self.chain_pending[core] = set()
        targets = [b for b in self.pool.of_core(core) if b.state == BUF_SEALED]
        cur = self.current[core]
        rotate = False
        if causes - {"seal"}:
            if cur is not None and cur.used > 0:
                targets.append(cur)
                rotate = True
        if not targets:
            self.chain_busy[core] = False
            return
        ov = self.costs.overhead
        section = self.engine.enter_atomic(f"prot{core}", self._chain_scope(core))
        dur = self._eps_rng.uniform_int(0, ov.lock_wait_max)
        mech = self.opts.protect_mechanism
        for b in targets:
            # a permission switch always covers the buffer's pages; a copy
            # moves only the bytes accumulated so far
            basis = max(b.used, 1) if mech == MECH_MEMCPY else b.capacity
            dur += self.costs.protect_cost(mech, basis)
            dur += ov.epsilon_jitter.sample(self._eps_rng)
        self.engine.schedule_after(
            dur,
            lambda: self._chain_done(core, request_t, targets, rotate, section),
            actor=f"prot{core}", priority=PRIORITY_MONITOR)

    def _chain_done(self, core: int, request_t: int, targets: list[Buffer],
                    rotate: bool, section) -> None:
        now = self.engine.now
        if self.halted:
            self.engine.exit_atomic(section)
            self.chain_busy[core] = False
            return
        for b in targets:
            self.monitor.protect_buffer(b)
            self.protect_log.append((core, b.id, b.incarnation, request_t, now,
                                     len(b.entries), b.used))
            self.stats.ever_protected += len(b.entries)
            if self.stats.track_identity:
                self.stats.ever_protected_seqs.update(e.seq for e in b.entries)
            if self.opts.collect_delays:
                d = self.delay_samples
                for e in b.entries:
                    d.append(now - e.emit_time)
            if self.trace.wants("protect"):
                self.trace.record(now, "monitor", "protect", core=core,
                                  buffer=b.id, incarnation=b.incarnation,
                                  entries=len(b.entries))
        self.sealed_count[core] = sum(
            1 for b in self.pool.of_core(core) if b.state == BUF_SEALED)
        if rotate:
            nxt = self.pool.pop_free(core)
            if nxt is not None:
                nxt.state = BUF_CURRENT
            self.current[core] = nxt
        self.engine.exit_atomic(section)
        self.chain_busy[core] = False
        self._wake(core)
        pend = self.chain_pending[core]
        if pend:
            self.chain_pending[core] = set()
            cause = "timer" if pend - {"seal"} else "seal"
            self.request_protect(core, cause)
        self._schedule_consume()

    # -- timer ---------------------------------------------------------------

    def start_timer(self) -> None:
        self._arm_timer(self.opts.tp_cycles)

    def _arm_timer(self, at: int) -> None:
        def fire():
            if self.halted:
                return
            for core in self.active_cores:
                cur = self.current[core]
                if self.sealed_count[core] or (cur is not None and cur.used > 0):
                    self.request_protect(core, "timer")
            self._arm_timer(self.engine.now + self.opts.tp_cycles)
        self.engine.schedule(at, fire, actor="timer", priority=PRIORITY_TIMER)

    # -- daemon steps ------------------------------------------------------------

    def _schedule_consume(self) -> None:
        if (self.consume_scheduled or not self.os_honest or self.halted
                or self.monitor.daemon is None):
            return
        if not any(b.state == BUF_PROTECTED for b in self.pool.buffers):
            return
        self.consume_scheduled = True
        self.monitor.sched_in_daemon()
        self._consume_begin_at = self.engine.now + self.costs.overhead.sched_latency
        self.engine.schedule_after(self.costs.overhead.sched_latency,
                                   self._consume_begin, actor="daemon.consumer")

    def _consume_begin(self) -> None:
        self.consume_scheduled = False
        self._consume_begin_at = None
        if not self.os_honest or self.halted or self.consume_busy:
            return
        bufs = [b for b in self.pool.buffers if b.state == BUF_PROTECTED]
        if not bufs:
            self.trace.record(self.engine.now, "daemon.consumer", "sleep")
            return
        self.consume_busy = True
        bufs.sort(key=lambda b: (b.protected_at, b.id))
        ov = self.costs.overhead
        dur = sum(ov.consume_fixed + int(round(ov.consume_per_byte * b.used))
                  + ov.smc_cost for b in bufs)
        section = self.engine.enter_atomic("daemon.consumer", self._daemon_scope("daemon.consumer"))
        self.engine.schedule_after(dur,
                                   lambda: self._consume_done(bufs, section),
                                   actor="daemon.consumer")

    def _consume_done(self, bufs: list[Buffer], section) -> None:
        self.consume_busy = False
        if self.halted:
            self.engine.exit_atomic(section)
            return
        woken = set()
        for b in bufs:
            if b.state != BUF_PROTECTED:
                continue
            self.staging.extend(b.entries)
            self.stats.consumed += len(b.entries)
            b.state = BUF_CONSUMED
            res = self.monitor.return_buffer(b, "daemon.consumer")
            if res.accepted:
                woken.add(b.core)
            if self.trace.wants("consume"):
                self.trace.record(self.engine.now, "daemon.consumer", "consume",
                                  buffer=b.id, entries=len(b.entries))
        self.engine.exit_atomic(section)
        for core in sorted(woken):
            self._wake(core)
        if self.staging and not self.disk_full and self.opts.mode != MODE_IN_MEMORY:
            self._schedule_manager()
        self._schedule_consume()

    def _schedule_manager(self) -> None:
        if self.manager_scheduled or not self.os_honest or self.halted:
            return
        self.manager_scheduled = True
        self._manager_begin_at = self.engine.now + 1000
        self.engine.schedule_after(1000, self._manager_begin,
                                   actor="daemon.manager")

    def _manager_begin(self) -> None:
        self.manager_scheduled = False
        self._manager_begin_at = None
        if (not self.os_honest or self.halted or self.disk_full
                or not self.staging or self.manager_busy):
            return
        self.manager_busy = True
        batch = list(self.staging)
        ov = self.costs.overhead
        nbytes = sum(e.size for e in batch)
        dur = (ov.smc_cost + ov.persist_fixed
               + int(round(ov.persist_per_byte * nbytes)))
        section = self.engine.enter_atomic("daemon.manager", self._daemon_scope("daemon.manager"))
        self.engine.schedule_after(dur,
                                   lambda: self._manager_done(batch, section),
                                   actor="daemon.manager")

    def _manager_done(self, batch: list[LogEntry], section) -> None:
        self.manager_busy = False
        self.engine.exit_atomic(section)
        if self.halted:
            return
        records = [encode_record(e.seq, e.emit_time, e.size, e.core, e.source,
                                 e.phase, e.digest) for e in batch]
        try:
            res = self.monitor.issue_secure_io("daemon.manager", "write", 0, 0,
                                               records)
        except DiskFullError:
            self.disk_full = True
            self.monitor.alerts.append("disk_full")
            self.trace.record(self.engine.now, "monitor", "persist",
                              alert="disk_full")
            return
        if res.accepted:
            self._note_persisted(batch)
            del self.staging[:len(batch)]
            if self.trace.wants("persist"):
                self.trace.record(self.engine.now, "daemon.manager", "persist",
                                  entries=len(batch))
        if self.staging:
            self._schedule_manager()

    # -- workload pumps -------------------------------------------------------------

    def start_open_workload(self) -> None:
        """Timed arrival streams split evenly over the active cores."""
        per_core = self.workload.total_rate / len(self.active_cores)
        for core in self.active_cores:
            self._rate_per_core[core] = per_core
            self._next_arrival[core] = self._draw_gap(core)
            self._schedule_pump(core, 0)

    def _draw_gap(self, core: int) -> int:
        u = self._arrival_rng[core].random()
        gap_s = -math.log(1.0 - u) / self._rate_per_core[core]
        return max(1, int(round(gap_s * self.engine.freq_hz)))

    def _pick_source(self, core: int) -> int:
        w = self.workload
        sources = tuple(sorted(w.rates))
        if len(sources) == 1:
            return sources[0]
        u = self._arrival_rng[core].random()
        acc = 0.0
        for s in sources:
            acc += w.rates[s] / w.total_rate
            if u <= acc:
                return s
        return sources[-1]

    def _schedule_pump(self, core: int, at: int) -> None:
        # at most one live pump event per core, or wakes would fork the
        # generator into parallel emission chains
        if self._pump_live[core]:
            return
        self._pump_live[core] = True
        self.engine.schedule(max(at, self.engine.now), lambda: self._pump(core),
                             actor=self.gen_actor(core))

    def _pump(self, core: int) -> None:
        self._pump_live[core] = False
        if self.halted:
            return
        if self.opts.workload_mode == "open":
            self._pump_open(core)
        elif self.opts.workload_mode == "closed":
            self._pump_closed(core)

    def _segment_limit(self, core: int, s: int, until: int) -> int:
        """Clip a pump segment at the next instant the core stops being the
        generator's alone: a pending protection chain, or (when the daemon
        shares this core) an upcoming consumer/manager window."""
        pend = self.pending_chain_start[core]
        if pend is not None and s < pend:
            until = min(until, pend)
        if self.opts.daemon_core == core:
            for t in (self._consume_begin_at, self._manager_begin_at):
                if t is not None and s < t:
                    until = min(until, t)
        return until

    def _pump_open(self, core: int) -> None:
        if self._next_arrival[core] >= self.emit_until:
            return
        s = self.engine.now
        until = self.emit_until
        if self._timer_enabled():
            until = min(until, self.next_boundary(s))
        until = self._segment_limit(core, s, until)
        size = self.workload.entry_size
        while self._next_arrival[core] < until:
            t = self._next_arrival[core]
            self.emit(core, self._pick_source(core), size, emit_time=t)
            self._next_arrival[core] = t + self._draw_gap(core)
        if until < self.emit_until:
            self._schedule_pump(core, until)

    # closed loop: saturating generator on each active core

    def start_closed_workload(self, entry_size: int = 256) -> None:
        self._closed_entry_size = entry_size
        for core in self.active_cores:
            self._schedule_pump(core, 0)

    def _per_log_cycles(self) -> int:
        ov = self.costs.overhead
        if self.opts.mode == MODE_NATIVE:
            return ov.c_gen
        if self.opts.mode == MODE_SYNC:
            return (ov.c_gen + self.costs.memcpy_cost(self._closed_entry_size)
                    + ov.sync_extra)
        return ov.c_gen + ov.lock_hold

    def _pump_closed(self, core: int) -> None:
        s = self.engine.now
        if s >= self.emit_until:
            return
        per_log = self._per_log_cycles()
        until = min(self.emit_until, s + _CLOSED_BATCH * per_log)
        if self._timer_enabled():
            until = min(until, self.next_boundary(s))
        until = self._segment_limit(core, s, until)
        size = self._closed_entry_size
        bare = self.opts.mode in (MODE_NATIVE, MODE_SYNC)
        t = s
        while t + per_log <= until:
            t += per_log
            if bare:
                # no pool interaction: captured (and for the synchronous
                # baseline, copied out) then discarded
                self.stats.emitted += 1
                if self.opts.mode == MODE_SYNC:
                    self.stats.sync_protected += 1
                continue
            buf = self.current[core]
            if buf is None:
                return  # blocked; _wake restarts this pump
            if not buf.fits(size):
                self._pump_live[core] = True
                self.engine.schedule(t, lambda tt=t: self._seal_and_emit(core, tt),
                                     actor=self.gen_actor(core))
                return
            self.emit(core, SRC_AUDIT, size, emit_time=t)
        if t + per_log <= self.emit_until:
            self._schedule_pump(core, max(until, t))

    def _seal_and_emit(self, core: int, t: int) -> None:
        # runs as its own event so the seal happens at the modeled emission
        # instant; emit() seals (or blocks) as the pool dictates
        self._pump_live[core] = False
        if self.halted:
            return
        self.emit(core, SRC_AUDIT, self._closed_entry_size, emit_time=t)
        if self.current[core] is not None:
            self._schedule_pump(core, t)

    # -- run helpers -------------------------------------------------------------

    def run(self) -> None:
        """Start the configured workload and run to the configured duration."""
        if self._timer_enabled():
            self.start_timer()
        if self.opts.workload_mode == "open":
            self.start_open_workload()
        elif self.opts.workload_mode == "closed":
            self.start_closed_workload(self._closed_entry_size)
        self.engine.run_until(self.opts.duration_cycles)

    def drain(self, max_extra_cycles: Optional[int] = None) -> bool:
        """After emission ends, keep the machinery running until nothing is
        left in flight (for the in-memory mode: until buffers are empty)."""
        cap = self.engine.now + (max_extra_cycles if max_extra_cycles is not None
                                 else 40 * self.opts.tp_cycles + 200_000_000)
        step = max(self.opts.tp_cycles, 10_000)
        while self.engine.now < cap:
            if not any(b.entries for b in self.pool.buffers) \
                    and not any(self.blocked) \
                    and (self.opts.mode == MODE_IN_MEMORY or not self.staging):
                return True
            self.engine.run_until(min(cap, self.engine.now + step))
        return False

    # -- power / shutdown ----------------------------------------------------------

    def shutdown(self, kind: str = "shutdown", by: str = "os") -> int:
        ev = PowerEvent(kind, self.engine.now, by)
        persisted = self.monitor.intercept_power(ev, self.staging)
        self.halted = True
        return persisted

    # -- audit -------------------------------------------------------------------

    def in_flight(self) -> int:
        buffered = sum(len(b.entries) for b in self.pool.buffers)
        queued = sum(len(q) for q in self.blocked)
        return buffered + queued + len(self.staging)

    def conservation_ok(self) -> bool:
        if self.opts.mode in (MODE_NATIVE, MODE_SYNC):
            return True
        return self.stats.emitted == (self.stats.cleared + self.stats.persisted
                                      + self.in_flight())

    def audit(self) -> dict:
        return {
            "emitted": self.stats.emitted,
            "cleared": self.stats.cleared,
            "persisted": self.stats.persisted,
            "in_flight": self.in_flight(),
            "conserved": self.conservation_ok(),
        }
