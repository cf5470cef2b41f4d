"""Two-view physical memory permission model.

Physical memory is an array of 4 KB pages. Two permission tables exist at
all times, one per protection domain: the OS view, which the monitor edits
to revoke and restore buffer access, and the protected view, which always
grants the monitor/daemon side access to everything it needs. Either table
can model the granule-table ("gpt") or stage-2 ("s2pt") primitive; the only
behavioural difference here is the per-page tag alphabet and the switch
cost charged for edits.

A DMA filter maps device ids to the physical ranges they may touch,
mirroring an SMMU: anything outside the allow-list is blocked before it
reaches memory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .costs import MECH_GPT, MECH_S2PT, PAGE, CostModel
from .trace import Trace

DOMAIN_OS = "os"
DOMAIN_PROTECTED = "protected"

ACCESS_OK = "ok"
ACCESS_FAULT = "fault"
DMA_OK = "ok"
DMA_BLOCKED = "blocked"

# per-page tags; "normal" is the only OS-accessible tag in either alphabet
GPT_NORMAL = 0        # normal-world accessible
GPT_ROOT_ONLY = 1     # monitor-exclusive
GPT_NONE = 2          # inaccessible to any world the OS can enter
S2PT_ACCESSIBLE = 0
S2PT_INACCESSIBLE = 1

MONITOR_ACTOR = "monitor"


class OutOfSpaceError(ValueError):
    """Range reaches past the simulated physical space."""


class NotMonitorError(PermissionError):
    """Permission tables may only be edited by the monitor actor."""


class UnknownDeviceError(KeyError):
    pass


@dataclass(frozen=True)
class PhysRange:
    """Page-aligned [base, base+length) span of physical bytes."""

    base: int
    length: int

    def __post_init__(self):
        if self.base % PAGE or self.length % PAGE or self.length <= 0:
            raise ValueError(f"range {self.base:#x}+{self.length:#x} not page aligned")

    @property
    def end(self) -> int:
        return self.base + self.length

    @property
    def first_page(self) -> int:
        return self.base // PAGE

    @property
    def page_count(self) -> int:
        return self.length // PAGE

    def contains(self, other: "PhysRange") -> bool:
        return self.base <= other.base and other.end <= self.end

    def overlaps(self, other: "PhysRange") -> bool:
        return self.base < other.end and other.base < self.end

    def subrange(self, offset: int, length: int) -> "PhysRange":
        if offset % PAGE or offset + length > self.length:
            raise ValueError("subrange outside parent")
        return PhysRange(self.base + offset, length)


class PermissionTable:
    """One domain's page tag array under one mechanism."""

    __slots__ = ("mechanism", "owner_domain", "entries")

    def __init__(self, mechanism: str, owner_domain: str, num_pages: int,
                 fill: int):
        self.mechanism = mechanism
        self.owner_domain = owner_domain
        self.entries = bytearray([fill]) * num_pages

    def set_pages(self, rng: PhysRange, tag: int) -> None:
        self.entries[rng.first_page:rng.first_page + rng.page_count] = \
            bytes([tag]) * rng.page_count

    def os_accessible(self, rng: PhysRange) -> bool:
        """True when every page of the range carries the OS-accessible tag."""
        start = rng.first_page
        chunk = self.entries[start:start + rng.page_count]
        return not any(chunk)  # tag 0 is "accessible" in both alphabets

    def snapshot(self) -> bytes:
        return bytes(self.entries)


DEFAULT_REGIONS = {
    # name: (base, length); pairwise disjoint, all inside the 128 MiB space
    "monitor": (0x0010_0000, 0x0010_0000),
    "daemon_pt": (0x0020_0000, 0x0001_0000),
    "daemon": (0x0080_0000, 0x0080_0000),
    "shared": (0x0100_0000, 0x0001_0000),
    "buffer_pool": (0x0200_0000, 0x0010_0000),
    "mmio": (0x0300_0000, 0x0000_1000),
    "dma": (0x0301_0000, 0x0004_0000),
    "smmu_config": (0x0308_0000, 0x0000_1000),
    "gic_mmio": (0x0309_0000, 0x0000_1000),
    "os_general": (0x0400_0000, 0x0400_0000),
}
DEFAULT_SPACE = 0x0800_0000  # 128 MiB

# regions the OS must never reach, in any reachable state
PROTECTED_ONLY_REGIONS = ("monitor", "daemon_pt", "daemon", "mmio", "dma",
                          "smmu_config")


class MemoryLayout:
    """Named, pairwise-disjoint physical regions."""

    def __init__(self, regions: Optional[dict[str, tuple[int, int]]] = None,
                 space_bytes: int = DEFAULT_SPACE):
        raw = dict(DEFAULT_REGIONS if regions is None else regions)
        self.space_bytes = space_bytes
        self.regions: dict[str, PhysRange] = {
            name: PhysRange(base, length) for name, (base, length) in raw.items()
        }
        names = list(self.regions)
        for i, a in enumerate(names):
            ra = self.regions[a]
            if ra.end > space_bytes:
                raise ValueError(f"region {a} exceeds physical space")
            for b in names[i + 1:]:
                if ra.overlaps(self.regions[b]):
                    raise ValueError(f"regions {a} and {b} overlap")

    def __getitem__(self, name: str) -> PhysRange:
        return self.regions[name]

    @property
    def num_pages(self) -> int:
        return self.space_bytes // PAGE

    def region_of(self, addr: int) -> Optional[str]:
        for name, rng in self.regions.items():
            if rng.base <= addr < rng.end:
                return name
        return None

    def outside_pages(self) -> list[int]:
        """Page indices not covered by any named region."""
        covered = bytearray(self.num_pages)
        for rng in self.regions.values():
            covered[rng.first_page:rng.first_page + rng.page_count] = \
                b"\x01" * rng.page_count
        return [i for i, c in enumerate(covered) if not c]


class SmmuTable:
    """Device -> permitted DMA ranges."""

    def __init__(self):
        self._devices: dict[str, tuple[PhysRange, ...]] = {}

    def register(self, device: str, ranges: list[PhysRange]) -> None:
        self._devices[device] = tuple(ranges)

    def permitted(self, device: str) -> tuple[PhysRange, ...]:
        if device not in self._devices:
            raise UnknownDeviceError(device)
        return self._devices[device]


class MemorySystem:
    """Both permission views plus the DMA filter, owned by the monitor."""

    def __init__(self, layout: MemoryLayout, mechanism: str, costs: CostModel,
                 trace: Trace, gic_mitigation: bool = False):
        if mechanism not in (MECH_GPT, MECH_S2PT):
            raise ValueError(f"unsupported permission mechanism {mechanism!r}")
        self.layout = layout
        self.mechanism = mechanism
        self.costs = costs
        self.trace = trace
        n = layout.num_pages
        self.os_view = PermissionTable(mechanism, DOMAIN_OS, n, fill=GPT_NORMAL)
        self.prot_view = PermissionTable(mechanism, DOMAIN_PROTECTED, n, fill=GPT_NORMAL)
        self.smmu = SmmuTable()
        self.fault_count = 0
        self._init_views(gic_mitigation)

    def _init_views(self, gic_mitigation: bool) -> None:
        hidden = GPT_NONE if self.mechanism == MECH_GPT else S2PT_INACCESSIBLE
        root = GPT_ROOT_ONLY if self.mechanism == MECH_GPT else S2PT_INACCESSIBLE
        for name in PROTECTED_ONLY_REGIONS:
            tag = root if name in ("monitor", "daemon_pt") else hidden
            self.os_view.set_pages(self.layout[name], tag)
        if gic_mitigation:
            self.os_view.set_pages(self.layout["gic_mmio"], hidden)
        # protected view keeps everything reachable; nothing to hide from it

    # -- CPU access ---------------------------------------------------------

    def _check_space(self, rng: PhysRange) -> None:
        if rng.end > self.layout.space_bytes:
            raise OutOfSpaceError(f"{rng.base:#x}+{rng.length:#x}")

    def check_cpu_access(self, domain: str, rng: PhysRange, kind: str = "write",
                         now: int = 0, actor: str = "") -> str:
        self._check_space(rng)
        table = self.os_view if domain == DOMAIN_OS else self.prot_view
        if table.os_accessible(rng):
            return ACCESS_OK
        self.fault_count += 1
        self.trace.record(now, actor or domain, "fault",
                          base=rng.base, length=rng.length, access=kind,
                          domain=domain)
        return ACCESS_FAULT

    # -- table edits (monitor only) ------------------------------------------

    def set_range(self, table: PermissionTable, rng: PhysRange, tag: int,
                  caller: str) -> int:
        if caller != MONITOR_ACTOR:
            raise NotMonitorError(f"{caller!r} may not edit permission tables")
        self._check_space(rng)
        table.set_pages(rng, tag)
        return self.costs.switch_cost(self.mechanism, rng.length)

    def revoke_os(self, rng: PhysRange, caller: str = MONITOR_ACTOR) -> int:
        tag = GPT_NONE if self.mechanism == MECH_GPT else S2PT_INACCESSIBLE
        return self.set_range(self.os_view, rng, tag, caller)

    def restore_os(self, rng: PhysRange, caller: str = MONITOR_ACTOR) -> int:
        return self.set_range(self.os_view, rng, GPT_NORMAL, caller)

    # -- DMA -----------------------------------------------------------------

    def check_dma(self, device: str, rng: PhysRange) -> str:
        self._check_space(rng)
        allowed = self.smmu.permitted(device)
        page = rng.first_page
        for _ in range(rng.page_count):
            span = PhysRange(page * PAGE, PAGE)
            if not any(a.contains(span) for a in allowed):
                return DMA_BLOCKED
            page += 1
        return DMA_OK
