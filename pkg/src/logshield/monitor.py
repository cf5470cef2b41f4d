"""Security monitor: call validation, daemon custody, power interception.

The monitor owns both permission views and is the only actor that may edit
them. Everything the untrusted side wants from the protected side arrives
as one of eight monitor calls; each is validated before any state changes
(the table below is the contract, one Rejected reason per failed check).
Rejected calls still pay the call round-trip but have no effect.

    secure_buffer     buffer address inside the pre-allocated pool
    return_buffer     daemon-only; comm pointer inside daemon memory; pool address
    init_daemon       boot-time only; image verified after the region is protected
    request_os        daemon-only (trampoline exit)
    sched_in_daemon   no parameters; daemon must be attested
    init_secure_io    initialization phase only (ends at first sched_in_daemon)
    issue_secure_io   daemon-only; comm pointer valid; DMA inside the window
    destroy_daemon    daemon-only; persists whatever protection still holds
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

from .engine import Engine
from .costs import CostModel
from .driver import CMD_READ, CMD_WRITE, LogStore, encode_record
from .memdomain import (ACCESS_OK, DMA_OK, DOMAIN_OS, DOMAIN_PROTECTED,
                        MemorySystem, MONITOR_ACTOR, PhysRange)
from .pipeline import BUF_CONSUMED, BUF_FREE, BUF_PROTECTED, Buffer, BufferPool
from .trace import Trace

# monitor call variants
SMC_SECURE_BUFFER = "secure_buffer"
SMC_RETURN_BUFFER = "return_buffer"
SMC_INIT_DAEMON = "init_daemon"
SMC_REQUEST_OS = "request_os"
SMC_SCHED_IN_DAEMON = "sched_in_daemon"
SMC_INIT_SECURE_IO = "init_secure_io"
SMC_ISSUE_SECURE_IO = "issue_secure_io"
SMC_DESTROY_DAEMON = "destroy_daemon"
SMC_VARIANTS = (SMC_SECURE_BUFFER, SMC_RETURN_BUFFER, SMC_INIT_DAEMON,
                SMC_REQUEST_OS, SMC_SCHED_IN_DAEMON, SMC_INIT_SECURE_IO,
                SMC_ISSUE_SECURE_IO, SMC_DESTROY_DAEMON)

# rejection reasons
REJ_INVALID_BUFFER = "invalid_buffer_address"
REJ_WRONG_CALLER = "wrong_caller"
REJ_BAD_COMM = "bad_comm_buffer"
REJ_DMA_RANGE = "dma_out_of_range"
REJ_NOT_INIT = "not_init_phase"
REJ_BAD_STATE = "bad_state"

DAEMON_ACTORS = ("daemon.consumer", "daemon.manager")

D_UNLOADED = "unloaded"
D_LOADED = "loaded"
D_ATTESTED = "attested"
D_RUNNING = "running"
D_DESTROYED = "destroyed"


class AttestationFailure(RuntimeError):
    pass


@dataclass
class SmcRequest:
    variant: str
    caller: str
    domain: str
    args: dict = field(default_factory=dict)


@dataclass
class SmcResult:
    accepted: bool
    reason: str = ""
    result: object = None


@dataclass
class DaemonDescriptor:
    expected_hash: bytes
    measured_hash: bytes = b""
    state: str = D_UNLOADED
    pinned_pages: frozenset = frozenset()
    page_table_copy: bool = False
    vector_table: bool = False
    saved_context: Optional[bytes] = None
    live_context: Optional[bytes] = None
    comm_buffer: Optional[PhysRange] = None
    keys: object = None


@dataclass
class PowerEvent:
    kind: str              # shutdown | reboot
    raised_at: int
    raised_by: str


@dataclass
class SyscallRequest:
    """Daemon exit descriptor: name plus pointer arguments into daemon memory."""
    name: str
    ptr_args: dict = field(default_factory=dict)   # arg name -> payload bytes


@dataclass
class SyscallResult:
    status: int
    pointer: Optional[int] = None    # OS-provided address, sanitized on resume
    data: bytes = b""


class Monitor:
    """The high-privilege actor; serialized on the event loop."""

    def __init__(self, engine: Engine, memsys: MemorySystem, costs: CostModel,
                 pool: BufferPool, store: LogStore, trace: Trace):
        self.engine = engine
        self.memsys = memsys
        self.costs = costs
        self.pool = pool
        self.store = store
        self.trace = trace
        self.init_phase = True
        self.secure_io_ready = False
        self.daemon: Optional[DaemonDescriptor] = None
        self.smc_count = 0
        self.rejected_count = 0
        self._pool_range = memsys.layout["buffer_pool"]
        self._dma_range = memsys.layout["dma"]
        self._shared_range = memsys.layout["shared"]
        self._shared_data: dict[str, bytes] = {}
        self.persisted_records = 0
        self.on_persist = None         # hook(entries) set by the system
        self.alerts: list[str] = []

    # -- call gate -----------------------------------------------------------

    def handle_smc(self, req: SmcRequest) -> SmcResult:
        res = self._validate(req)
        self.smc_count += 1
        if not res.accepted:
            self.rejected_count += 1
        self.trace.record(self.engine.now, req.caller, "smc",
                          variant=req.variant, accepted=res.accepted,
                          reason=res.reason, cost=self.costs.overhead.smc_cost)
        return res

    def _validate(self, req: SmcRequest) -> SmcResult:
        v = req.variant
        if v not in SMC_VARIANTS:
            return SmcResult(False, REJ_BAD_STATE)
        if v == SMC_SECURE_BUFFER:
            if not self._in_pool(req.args.get("buffer_base", -1)):
                return SmcResult(False, REJ_INVALID_BUFFER)
            return SmcResult(True)
        if v in (SMC_RETURN_BUFFER, SMC_ISSUE_SECURE_IO, SMC_DESTROY_DAEMON):
            if req.caller not in DAEMON_ACTORS or req.domain != DOMAIN_PROTECTED:
                return SmcResult(False, REJ_WRONG_CALLER)
            if not self._valid_comm(req.args.get("comm_ptr", -1)):
                return SmcResult(False, REJ_BAD_COMM)
            if v == SMC_RETURN_BUFFER:
                if not self._in_pool(req.args.get("buffer_base", -1)):
                    return SmcResult(False, REJ_INVALID_BUFFER)
            if v == SMC_ISSUE_SECURE_IO:
                dma = req.args.get("dma", None)
                if dma is None or not self._dma_range.contains(dma):
                    return SmcResult(False, REJ_DMA_RANGE)
            return SmcResult(True)
        if v == SMC_INIT_DAEMON:
            if not self.init_phase:
                return SmcResult(False, REJ_NOT_INIT)
            return SmcResult(True)
        if v == SMC_REQUEST_OS:
            if req.caller not in DAEMON_ACTORS or req.domain != DOMAIN_PROTECTED:
                return SmcResult(False, REJ_WRONG_CALLER)
            return SmcResult(True)
        if v == SMC_SCHED_IN_DAEMON:
            if req.args:
                return SmcResult(False, REJ_BAD_STATE)
            if self.daemon is None or self.daemon.state not in (D_ATTESTED, D_RUNNING):
                return SmcResult(False, REJ_BAD_STATE)
            self.init_phase = False
            self.daemon.state = D_RUNNING
            return SmcResult(True)
        if v == SMC_INIT_SECURE_IO:
            if not self.init_phase:
                return SmcResult(False, REJ_NOT_INIT)
            self.secure_io_ready = True
            return SmcResult(True)
        raise AssertionError(v)

    def _in_pool(self, base) -> bool:
        return isinstance(base, int) and \
            self._pool_range.base <= base < self._pool_range.end

    def _valid_comm(self, ptr) -> bool:
        d = self.daemon
        return (d is not None and d.comm_buffer is not None
                and isinstance(ptr, int)
                and d.comm_buffer.base <= ptr < d.comm_buffer.end)

    # -- buffer protection -----------------------------------------------------

    def protect_buffer(self, buf: Buffer, caller: str = "os") -> int:
        """Revoke OS access to one buffer. Returns cycles charged
        (call round trip is inside the switch cost)."""
        res = self.handle_smc(SmcRequest(SMC_SECURE_BUFFER, caller, DOMAIN_OS,
                                         {"buffer_base": buf.range.base}))
        if not res.accepted:
            raise PermissionError(res.reason)
        cost = self.memsys.revoke_os(buf.range)
        buf.state = BUF_PROTECTED
        buf.protected_at = self.engine.now
        return cost

    def return_buffer(self, buf: Buffer, caller: str) -> SmcResult:
        comm = self.daemon.comm_buffer.base if self.daemon and self.daemon.comm_buffer else -1
        res = self.handle_smc(SmcRequest(SMC_RETURN_BUFFER, caller, DOMAIN_PROTECTED,
                                         {"comm_ptr": comm,
                                          "buffer_base": buf.range.base}))
        if not res.accepted:
            return res
        if buf.state != BUF_CONSUMED:
            # protected-but-unconsumed buffers may not re-enter the pool
            self.rejected_count += 1
            return SmcResult(False, REJ_BAD_STATE)
        self.memsys.restore_os(buf.range)
        buf.reset()
        self.pool.push_free(buf)
        return SmcResult(True)

    # -- daemon lifecycle ---------------------------------------------------------

    def init_daemon(self, image: bytes, expected_hash: bytes, keys,
                    context: bytes) -> DaemonDescriptor:
        res = self.handle_smc(SmcRequest(SMC_INIT_DAEMON, "os", DOMAIN_OS,
                                         {"image_len": len(image)}))
        if not res.accepted:
            raise PermissionError(res.reason)
        desc = DaemonDescriptor(expected_hash=expected_hash)
        region = self.memsys.layout["daemon"]
        # protect first, then measure: the window for swapping the image closes
        # before the hash is taken
        self.memsys.revoke_os(region)
        self.trace.record(self.engine.now, MONITOR_ACTOR, "attest", step="protect")
        desc.measured_hash = hashlib.sha256(image).digest()
        self.trace.record(self.engine.now, MONITOR_ACTOR, "attest", step="measure")
        if desc.measured_hash != expected_hash:
            self.memsys.restore_os(region)
            desc.state = D_UNLOADED
            self.trace.record(self.engine.now, MONITOR_ACTOR, "attest",
                              step="fail")
            self.daemon = None
            raise AttestationFailure("daemon image hash mismatch")
        desc.state = D_ATTESTED
        desc.pinned_pages = frozenset(range(region.first_page,
                                            region.first_page + region.page_count))
        desc.page_table_copy = True
        desc.vector_table = True
        desc.comm_buffer = region.subrange(0, 0x1000)
        desc.keys = keys
        desc.live_context = context
        self.trace.record(self.engine.now, MONITOR_ACTOR, "attest", step="ok")
        self.daemon = desc
        return desc

    def sched_in_daemon(self, caller: str = "os") -> SmcResult:
        return self.handle_smc(SmcRequest(SMC_SCHED_IN_DAEMON, caller, DOMAIN_OS))

    def daemon_exit(self, syscall: SyscallRequest, caller: str) -> dict:
        """Trampoline exit: save context, redirect pointers to shared memory."""
        d = self.daemon
        if d is None or d.state != D_RUNNING:
            raise PermissionError("daemon not running")
        res = self.handle_smc(SmcRequest(SMC_REQUEST_OS, caller, DOMAIN_PROTECTED))
        if not res.accepted:
            raise PermissionError(res.reason)
        d.saved_context = d.live_context
        redirected = {}
        offset = 0
        for name, payload in syscall.ptr_args.items():
            self._shared_data[name] = bytes(payload)
            redirected[name] = self._shared_range.base + offset
            offset += max(len(payload), 1)
        return {"name": syscall.name, "shared_args": redirected}

    def os_visible_arg(self, name: str) -> bytes:
        """What the OS can actually read for a redirected pointer argument."""
        return self._shared_data.get(name, b"")

    def daemon_resume(self, result: SyscallResult) -> SyscallResult:
        """Sanitize the OS-provided result and restore the daemon context."""
        d = self.daemon
        if d is None or d.saved_context is None:
            raise PermissionError("no saved daemon context")
        out = result
        if result.pointer is not None and self._points_protected(result.pointer):
            self.trace.record(self.engine.now, MONITOR_ACTOR, "iago",
                              pointer=result.pointer)
            out = SyscallResult(status=-1, pointer=None, data=b"")
        elif result.data:
            # packet data crosses from the shared buffer into daemon memory
            out = SyscallResult(result.status, result.pointer, bytes(result.data))
        d.live_context = d.saved_context
        d.saved_context = None
        # page and vector tables re-asserted from monitor custody on every entry
        d.page_table_copy = True
        d.vector_table = True
        return out

    def _points_protected(self, addr: int) -> bool:
        region = self.memsys.layout.region_of(addr)
        return region in ("daemon", "daemon_pt", "monitor", "mmio", "dma",
                          "smmu_config")

    # -- secure I/O -------------------------------------------------------------

    def issue_secure_io(self, caller: str, op: str, lba: int, count: int,
                        records: Optional[list[bytes]] = None) -> SmcResult:
        comm = self.daemon.comm_buffer.base if self.daemon and self.daemon.comm_buffer else -1
        if op == "write":
            needed = sum(len(r) for r in records or []) or 1
        else:
            needed = count * 512
        pages = max(1, -(-needed // 4096))
        dma_len = min(pages * 4096, self._dma_range.length)
        dma = PhysRange(self._dma_range.base, dma_len)
        res = self.handle_smc(SmcRequest(SMC_ISSUE_SECURE_IO, caller,
                                         DOMAIN_PROTECTED,
                                         {"comm_ptr": comm, "dma": dma}))
        if not res.accepted:
            return res
        if self.memsys.check_dma("log_disk", dma) != DMA_OK:
            return SmcResult(False, REJ_DMA_RANGE)
        if op == "write":
            first, nsec = self.store.persist_records(records or [])
            self.persisted_records += len(records or [])
            return SmcResult(True, result=(first, nsec))
        data = self.store.read_sectors(lba, count)
        return SmcResult(True, result=data)

    def secure_read(self, lba: int, count: int) -> bytes:
        return self.store.read_sectors(lba, count)

    def secure_delete(self, lba: int, count: int) -> None:
        """Admin-authorized deletion relayed by the daemon; the only path
        that rewrites persisted log sectors."""
        self.store.zero_sectors(lba, count)
        self.trace.record(self.engine.now, MONITOR_ACTOR, "admin",
                          action="delete", lba=lba, count=count)

    # -- power interception ---------------------------------------------------------

    def intercept_power(self, event: PowerEvent, staging: list) -> int:
        """Persist everything the protected domain still holds, then allow
        the power event. Returns the number of entries persisted."""
        persisted = 0
        batches: list[list] = []
        if staging:
            batches.append(list(staging))
        for buf in self.pool.buffers:
            if buf.state == BUF_PROTECTED and buf.entries:
                batches.append(list(buf.entries))
        for batch in batches:
            records = [encode_record(e.seq, e.emit_time, e.size, e.core,
                                     e.source, e.phase, e.digest)
                       for e in batch]
            self.store.persist_records(records)
            self.persisted_records += len(records)
            if self.on_persist is not None:
                self.on_persist(batch)
            persisted += len(batch)
        staging.clear()
        # the protected-domain copies are now on disk; consumed buffers'
        # entries were already staged (hence persisted above or earlier)
        for buf in self.pool.buffers:
            if buf.state in (BUF_PROTECTED, BUF_CONSUMED):
                buf.entries.clear()
                buf.used = 0
        self.trace.record(event.raised_at, MONITOR_ACTOR, "power",
                          event_kind=event.kind, raised_by=event.raised_by,
                          persisted=persisted)
        return persisted
