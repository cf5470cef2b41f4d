"""Record-and-replay block storage driver.

The log disk is a finite-state machine: a command is programmed by writing
the LBA, sector count and DMA address registers in order, then a command
register write executes it and queues one completion interrupt. A recorder
runs a reference driver routine against the device for a handful of sample
jobs, captures the register/DMA/IRQ interaction, and distills it into a
template in which only the fields that varied across samples remain
dynamic. Replaying the template with fresh parameters is all the monitor
ever needs to read or write log sectors, so no general-purpose driver code
exists inside the trusted side.

On-disk layout (sector = 512 bytes):
  sector 0            superblock: magic, version, next_free_lba, entry_count
  sectors 1..N        length-prefixed log records, packed; a zero length
                      prefix means "skip to the next sector boundary"
Records are appended only; sectors are rewritten only by the admin-driven
delete path.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

from .memdomain import PhysRange

SECTOR = 512

# register block offsets
REG_LBA = 0x00
REG_LEN = 0x08
REG_DMA = 0x10
REG_CMD = 0x18
REG_STATUS = 0x20

CMD_WRITE = 1
CMD_READ = 2

STATUS_IDLE = 0
STATUS_DONE = 1
STATUS_ERROR = 2

REPLAY_DONE = "done"
REPLAY_IOERROR = "ioerror"

# template placeholder tokens
PH_LBA = "LBA"
PH_LEN = "LEN"
PH_DMA = "DMA_ADDR"
PH_DIR = "DIR"


class DeviceProtocolError(RuntimeError):
    """Illegal register sequence for the device FSM."""


class NonDeterministicDevice(RuntimeError):
    """Identical sample jobs produced different interaction traces."""


class NonTemplatableTrace(RuntimeError):
    """A varying trace field could not be matched to any job parameter."""


class DiskFullError(RuntimeError):
    pass


@dataclass(frozen=True)
class SampleJob:
    lba: int
    payload: bytes = b""
    read_sectors: int = 0

    @property
    def direction(self) -> int:
        return CMD_READ if self.read_sectors else CMD_WRITE

    @property
    def sector_count(self) -> int:
        if self.read_sectors:
            return self.read_sectors
        return (len(self.payload) + SECTOR - 1) // SECTOR


# -- trace records ----------------------------------------------------------

@dataclass(frozen=True)
class MmioWrite:
    offset: int
    value: int


@dataclass(frozen=True)
class DmaAlloc:
    length: int


@dataclass(frozen=True)
class IrqWait:
    status: int


class DmaArena:
    """Bump allocator over the pre-allocated DMA window.

    The driver allocates one buffer per command and releases it once the
    completion interrupt is consumed, so back-to-back jobs reuse the same
    address; only concurrently held buffers advance the pointer.
    """

    def __init__(self, window: PhysRange):
        self.window = window
        self._next = 0

    def alloc(self, length: int) -> int:
        if length > self.window.length:
            raise ValueError("allocation larger than DMA window")
        if self._next + length > self.window.length:
            self._next = 0
        addr = self.window.base + self._next
        self._next += length
        return addr

    def release(self, addr: int, length: int) -> None:
        if addr - self.window.base + length == self._next:
            self._next = addr - self.window.base


class DeviceModel:
    """Block device FSM with MMIO registers, DMA window and an IRQ queue."""

    def __init__(self, sectors: int, dma_window: PhysRange,
                 store_bytes: bool = True):
        self.capacity = sectors
        self.dma_window = dma_window
        self.store_bytes = store_bytes
        self.sectors: dict[int, bytes] = {}
        self.written_sectors = 0
        self.regs = {REG_LBA: 0, REG_LEN: 0, REG_DMA: 0, REG_CMD: 0,
                     REG_STATUS: STATUS_IDLE}
        self.irq_pending: list[int] = []
        self.fsm_state = "idle"
        # DMA-visible staging: the payload the next command consumes/produces
        self._dma_data: dict[int, bytes] = {}

    # -- DMA side ----------------------------------------------------------

    def dma_stage(self, addr: int, data: bytes) -> None:
        """Place payload bytes into the DMA window before a write command."""
        if addr < self.dma_window.base or addr + len(data) > self.dma_window.end:
            raise ValueError("DMA staging outside window")
        self._dma_data[addr] = data

    def dma_fetch(self, addr: int, length: int) -> bytes:
        data = self._dma_data.get(addr, b"")
        return data[:length].ljust(length, b"\x00")

    # -- MMIO side -----------------------------------------------------------

    _LEGAL_ORDER = {
        "idle": REG_LBA,
        "lba": REG_LEN,
        "len": REG_DMA,
        "dma": REG_CMD,
    }
    _NEXT_STATE = {REG_LBA: "lba", REG_LEN: "len", REG_DMA: "dma"}

    def mmio_write(self, offset: int, value: int) -> None:
        expected = self._LEGAL_ORDER.get(self.fsm_state)
        if offset != expected:
            state = self.fsm_state
            self.regs[REG_STATUS] = STATUS_ERROR
            self.fsm_state = "idle"
            raise DeviceProtocolError(f"register {offset:#x} written in state {state!r}")
        self.regs[offset] = value
        if offset == REG_CMD:
            self._execute(value)
            self.fsm_state = "idle"
        else:
            self.fsm_state = self._NEXT_STATE[offset]

    def mmio_read(self, offset: int) -> int:
        return self.regs[offset]

    def _execute(self, cmd: int) -> None:
        lba, count, dma = self.regs[REG_LBA], self.regs[REG_LEN], self.regs[REG_DMA]
        if cmd not in (CMD_WRITE, CMD_READ) or lba + count > self.capacity:
            self.regs[REG_STATUS] = STATUS_ERROR
            self.irq_pending.append(STATUS_ERROR)
            return
        if cmd == CMD_WRITE:
            data = self.dma_fetch(dma, count * SECTOR)
            for i in range(count):
                if self.store_bytes:
                    self.sectors[lba + i] = data[i * SECTOR:(i + 1) * SECTOR]
                else:
                    self.sectors[lba + i] = b""
            self.written_sectors += count
        else:
            chunks = [self.sectors.get(lba + i, b"\x00" * SECTOR).ljust(SECTOR, b"\x00")
                      for i in range(count)]
            self._dma_data[dma] = b"".join(chunks)
        self.regs[REG_STATUS] = STATUS_DONE
        self.irq_pending.append(STATUS_DONE)

    def irq_wait(self) -> int:
        """Pop the completion status. Interrupts route to the monitor only;
        callers other than the monitor's replay path never reach this."""
        if not self.irq_pending:
            raise DeviceProtocolError("no pending interrupt")
        return self.irq_pending.pop(0)

    def read_sector(self, lba: int) -> bytes:
        return self.sectors.get(lba, b"\x00" * SECTOR).ljust(SECTOR, b"\x00")


# -- reference driver + recorder ---------------------------------------------

def reference_driver(device: DeviceModel, arena: DmaArena, job: SampleJob,
                     sink: Optional[list] = None) -> bytes:
    """The 'full' driver routine the recorder distills.

    Performs one job: allocate a DMA buffer, program the register block in
    the legal order, and wait for the completion interrupt. Returns read
    data (empty for writes).
    """

    def t(rec):
        if sink is not None:
            sink.append(rec)

    count = job.sector_count
    dma_addr = arena.alloc(count * SECTOR)
    t(DmaAlloc(count * SECTOR))
    if job.direction == CMD_WRITE:
        device.dma_stage(dma_addr, job.payload.ljust(count * SECTOR, b"\x00"))
    for offset, value in ((REG_LBA, job.lba), (REG_LEN, count),
                          (REG_DMA, dma_addr), (REG_CMD, job.direction)):
        device.mmio_write(offset, value)
        t(MmioWrite(offset, value))
    status = device.irq_wait()
    t(IrqWait(status))
    data = b""
    if job.direction == CMD_READ:
        data = device.dma_fetch(dma_addr, count * SECTOR)
    arena.release(dma_addr, count * SECTOR)
    return data


@dataclass
class TemplateOp:
    kind: str                      # mmio | dma_alloc | irq_wait
    offset: Optional[int] = None   # mmio only
    literal: Optional[int] = None
    placeholder: Optional[str] = None


@dataclass
class DriverTemplate:
    ops: list[TemplateOp]

    @property
    def placeholders(self) -> set[str]:
        return {op.placeholder for op in self.ops if op.placeholder}


def _normalize(trace: list, dma_addrs: set[int]) -> tuple:
    out = []
    for rec in trace:
        if isinstance(rec, MmioWrite) and rec.value in dma_addrs:
            out.append(("mmio", rec.offset, "<dma>"))
        elif isinstance(rec, MmioWrite):
            out.append(("mmio", rec.offset, rec.value))
        elif isinstance(rec, DmaAlloc):
            out.append(("dma_alloc", rec.length))
        else:
            out.append(("irq_wait", rec.status))
    return tuple(out)


def record(sample_jobs: list[SampleJob], device: DeviceModel,
           arena: DmaArena) -> DriverTemplate:
    """Run sample jobs through the reference driver and templatize the trace.

    Fields that vary across jobs become placeholders, matched against the
    job parameter that explains them; everything else is frozen as recorded.
    """
    template, _ = record_with_traces(sample_jobs, device, arena)
    return template


def record_with_traces(sample_jobs: list[SampleJob], device: DeviceModel,
                       arena: DmaArena) -> tuple[DriverTemplate, list[list]]:
    """As ``record`` but also returns the raw per-job interaction traces,
    which the replay-fidelity checks compare against."""
    if not sample_jobs:
        raise ValueError("need at least one sample job")
    traces: list[list] = []
    for job in sample_jobs:
        sink: list = []
        reference_driver(device, arena, job, sink)
        traces.append(sink)

    # identical jobs must interact identically (modulo DMA placement)
    seen: dict[SampleJob, tuple] = {}
    for job, tr in zip(sample_jobs, traces):
        addrs = {r.value for r in tr if isinstance(r, MmioWrite) and r.offset == REG_DMA}
        norm = _normalize(tr, addrs)
        if job in seen and seen[job] != norm:
            raise NonDeterministicDevice(f"job {job} traced twice with different behaviour")
        seen.setdefault(job, norm)

    skeleton = [type(rec) for rec in traces[0]]
    for tr in traces[1:]:
        if [type(r) for r in tr] != skeleton:
            raise NonTemplatableTrace("sample traces have different shapes")

    ops: list[TemplateOp] = []
    for idx, kind in enumerate(skeleton):
        recs = [tr[idx] for tr in traces]
        if kind is DmaAlloc:
            lengths = [r.length for r in recs]
            if len(set(lengths)) == 1:
                ops.append(TemplateOp("dma_alloc", literal=lengths[0]))
            else:
                ops.append(TemplateOp("dma_alloc", placeholder=PH_LEN))
            continue
        if kind is IrqWait:
            ops.append(TemplateOp("irq_wait", literal=recs[0].status))
            continue
        values = [r.value for r in recs]
        offset = recs[0].offset
        if len(set(values)) == 1:
            ops.append(TemplateOp("mmio", offset=offset, literal=values[0]))
            continue
        ph = _classify(offset, values, sample_jobs, traces)
        if ph is None:
            if len(set(values)) == 1:
                ops.append(TemplateOp("mmio", offset=offset, literal=values[0]))
            else:
                raise NonTemplatableTrace(f"register {offset:#x} varies unexplained")
        else:
            ops.append(TemplateOp("mmio", offset=offset, placeholder=ph))
    return DriverTemplate(ops), traces


def _classify(offset: int, values: list[int], jobs: list[SampleJob],
              traces: list[list]) -> Optional[str]:
    if all(v == j.lba for v, j in zip(values, jobs)):
        return PH_LBA
    if all(v == j.sector_count for v, j in zip(values, jobs)):
        return PH_LEN
    if all(v == j.direction for v, j in zip(values, jobs)):
        return PH_DIR
    dma_match = True
    for v, tr in zip(values, traces):
        allocs = [r for r in tr if isinstance(r, MmioWrite) and r.offset == REG_DMA]
        if not allocs or v != allocs[0].value:
            dma_match = False
            break
    if dma_match and offset == REG_DMA:
        return PH_DMA
    return None


def replay(template: DriverTemplate, device: DeviceModel, arena: DmaArena, *,
           lba: int, dir: int, payload: bytes = b"",
           read_sectors: int = 0,
           trace_sink: Optional[list] = None) -> tuple[str, bytes]:
    """Execute the template with dynamic parameters.

    Returns (status, data); data holds sector bytes for reads. The caller is
    responsible for having validated the DMA target against the SMMU filter.
    """
    count = read_sectors if dir == CMD_READ else (len(payload) + SECTOR - 1) // SECTOR
    dma_addr: Optional[int] = None
    dma_len = 0
    data = b""

    def t(rec):
        if trace_sink is not None:
            trace_sink.append(rec)

    try:
        for op in template.ops:
            if op.kind == "dma_alloc":
                dma_len = count * SECTOR if op.placeholder == PH_LEN else op.literal
                dma_addr = arena.alloc(dma_len)
                t(DmaAlloc(dma_len))
                if dir == CMD_WRITE:
                    device.dma_stage(dma_addr, payload.ljust(count * SECTOR, b"\x00"))
            elif op.kind == "mmio":
                if op.placeholder == PH_LBA:
                    value = lba
                elif op.placeholder == PH_LEN:
                    value = count
                elif op.placeholder == PH_DIR:
                    value = dir
                elif op.placeholder == PH_DMA:
                    value = dma_addr
                else:
                    value = op.literal
                device.mmio_write(op.offset, value)
                t(MmioWrite(op.offset, value))
            else:  # irq_wait
                status = device.irq_wait()
                t(IrqWait(status))
                if status != STATUS_DONE:
                    return REPLAY_IOERROR, b""
        if dir == CMD_READ and dma_addr is not None:
            data = device.dma_fetch(dma_addr, count * SECTOR)
    except DeviceProtocolError:
        return REPLAY_IOERROR, b""
    finally:
        if dma_addr is not None:
            arena.release(dma_addr, dma_len)
    return REPLAY_DONE, data


# -- append-only log store -----------------------------------------------------

SUPERBLOCK = struct.Struct("<4sHxxQQ")
SB_MAGIC = b"LSLG"
SB_VERSION = 1

RECORD_HEADER = struct.Struct("<IQQIBBBxQ")  # len, seq, emit, size, core, source, phase, digest
MIN_RECORD = RECORD_HEADER.size  # 36 bytes


def encode_record(seq: int, emit_time: int, size: int, core: int, source: int,
                  phase: int, digest: int) -> bytes:
    size = max(size, MIN_RECORD)
    head = RECORD_HEADER.pack(size, seq, emit_time, size, core, source, phase,
                              digest & 0xFFFFFFFFFFFFFFFF)
    return head.ljust(size, b"\x00")


def decode_records(blob: bytes) -> list[dict]:
    out = []
    pos = 0
    while pos + 4 <= len(blob):
        (length,) = struct.unpack_from("<I", blob, pos)
        if length == 0:
            pos = (pos // SECTOR + 1) * SECTOR
            continue
        if pos + length > len(blob) or length < MIN_RECORD:
            break
        fields = RECORD_HEADER.unpack_from(blob, pos)
        out.append({"seq": fields[1], "emit_time": fields[2], "size": fields[3],
                    "core": fields[4], "source": fields[5], "phase": fields[6],
                    "digest": fields[7]})
        pos += length
    return out


class LogStore:
    """Append-only record store on the simulated log disk.

    All device interaction goes through the recorded template; the store
    itself never touches registers directly.
    """

    def __init__(self, template: DriverTemplate, device: DeviceModel,
                 arena: DmaArena, dma_window: PhysRange):
        self.template = template
        self.device = device
        self.arena = arena
        self.dma_window = dma_window
        self.next_free_lba = 1
        self.entry_count = 0
        self._write_superblock()

    def _write_superblock(self) -> None:
        blob = SUPERBLOCK.pack(SB_MAGIC, SB_VERSION, self.next_free_lba,
                               self.entry_count).ljust(SECTOR, b"\x00")
        status, _ = replay(self.template, self.device, self.arena,
                           lba=0, dir=CMD_WRITE, payload=blob)
        if status != REPLAY_DONE:
            raise RuntimeError("superblock write failed")

    def _write_blob(self, lba: int, blob: bytes) -> None:
        # chunk by the DMA window so one replay never overruns it
        max_bytes = (self.dma_window.length // SECTOR) * SECTOR
        pos = 0
        while pos < len(blob):
            chunk = blob[pos:pos + max_bytes]
            status, _ = replay(self.template, self.device, self.arena,
                               lba=lba, dir=CMD_WRITE, payload=chunk)
            if status != REPLAY_DONE:
                raise RuntimeError("log write failed")
            lba += len(chunk) // SECTOR
            pos += len(chunk)

    def persist_records(self, records: list[bytes]) -> tuple[int, int]:
        """Append encoded records; returns (first_lba, sector_count)."""
        if not records:
            return self.next_free_lba, 0
        blob = b"".join(records)
        if len(blob) % SECTOR:
            blob = blob.ljust((len(blob) // SECTOR + 1) * SECTOR, b"\x00")
        nsectors = len(blob) // SECTOR
        if self.next_free_lba + nsectors > self.device.capacity:
            raise DiskFullError(
                f"{nsectors} sectors requested, "
                f"{self.device.capacity - self.next_free_lba} free")
        first = self.next_free_lba
        self._write_blob(first, blob)
        self.next_free_lba += nsectors
        self.entry_count += len(records)
        self._write_superblock()
        return first, nsectors

    def read_sectors(self, lba: int, count: int) -> bytes:
        status, data = replay(self.template, self.device, self.arena,
                              lba=lba, dir=CMD_READ, read_sectors=count)
        if status != REPLAY_DONE:
            raise RuntimeError("log read failed")
        return data

    def read_entries(self, lba: int, count: int) -> list[dict]:
        return decode_records(self.read_sectors(lba, count))

    def zero_sectors(self, lba: int, count: int) -> None:
        """Admin-authorized delete path; the only sanctioned rewrite."""
        self._write_blob(lba, b"\x00" * (count * SECTOR))

    def export_image(self, path: str) -> None:
        top = max(self.device.sectors) + 1 if self.device.sectors else 1
        with open(path, "wb") as fh:
            for lba in range(top):
                fh.write(self.device.read_sector(lba))
