"""Adversary actor: timed privilege-escalation and log-clearing scenarios.

A scenario is a short phase timeline (exploit, escalate, load a malicious
kernel module, clear) taken from reproduced public CVE exploits. The
attack's own activity is what generates the interesting log entries: they
are emitted round-robin across cores at a uniform rate while the phases
run. At the end of the load phase the attacker holds root, and the clear
step wipes every buffer the OS can still write - exactly the entries whose
buffer incarnation has not been protected yet. Everything else (protected
or consumed buffers, daemon staging, the log disk) is out of reach and the
attempt is recorded as a fault.

The GIC variant additionally tries to deprioritize the protection timer by
writing the interrupt-priority register page once root is obtained; with
the mitigation enabled that page is monitor-only and the write faults.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .memdomain import ACCESS_OK, DOMAIN_OS, PhysRange
from .pipeline import (PHASE_ESCALATE, PHASE_EXPLOIT, PHASE_LOAD, PHASE_NAMES,
                       SRC_AUDIT)
from .system import System

ATTACKER = "attacker"

_PHASE_CODE = {"exploit": PHASE_EXPLOIT, "escalate": PHASE_ESCALATE,
               "load": PHASE_LOAD, "clear": PHASE_LOAD}


@dataclass(frozen=True)
class AttackPhase:
    label: str
    duration_ms: float
    emits: bool = True


@dataclass
class AttackScenario:
    """Timed attack description; durations are point values, with the
    publicly reported min-max range kept for reference."""

    name: str
    phases: tuple[AttackPhase, ...]
    total_logs: int
    entry_size: int = 256
    gic_attack: bool = False
    reported_range_ms: Optional[tuple[float, float]] = None
    description: str = ""

    @property
    def total_ms(self) -> float:
        return sum(p.duration_ms for p in self.phases)

    @property
    def emitting_ms(self) -> float:
        return sum(p.duration_ms for p in self.phases if p.emits)

    @property
    def compromise_offset_ms(self) -> float:
        """Root is obtained once exploit + escalate complete."""
        off = 0.0
        for p in self.phases:
            off += p.duration_ms
            if p.label == "escalate":
                break
        return off

    @property
    def log_rate(self) -> float:
        """Logs per second over the emitting window."""
        return self.total_logs / (self.emitting_ms / 1000.0)


def _semantic(name, exploit, escalate, total_logs, rng_ms, desc):
    return AttackScenario(
        name,
        (AttackPhase("exploit", exploit), AttackPhase("escalate", escalate),
         AttackPhase("load", 4.89), AttackPhase("clear", 0.02)),
        total_logs, reported_range_ms=rng_ms, description=desc)


def _memory_corruption(name, prep_ms, total_logs, rng_ms, desc):
    # slow preparation (heap grooming, in-kernel gadget work) generates the
    # recorded trace early; the long quiet tail before the clear means every
    # tested timer period has protected it all
    return AttackScenario(
        name,
        (AttackPhase("exploit", prep_ms), AttackPhase("escalate", 30.0, emits=False),
         AttackPhase("load", 4.89, emits=False), AttackPhase("clear", 0.02, emits=False)),
        total_logs, reported_range_ms=rng_ms, description=desc)


ATTACK_PRESETS: dict[str, AttackScenario] = {
    # measured phase split; 1,407 trace events over the 12.40 ms timeline
    "cve-2022-0847": _semantic("cve-2022-0847", 3.73, 3.76, 1407, (9.8, 14.4),
                               "page-cache splice flag abuse (dirty pipe)"),
    "cve-2023-0386": _semantic("cve-2023-0386", 4.52, 4.52, 1583, (12.1, 15.8),
                               "overlayfs uid-mapped copy-up of setuid file"),
    "cve-2023-2640": _semantic("cve-2023-2640", 7.30, 7.29, 2213, (13.5, 25.5),
                               "overlayfs privileged xattr copy without checks"),
    "cve-2023-32629": _semantic("cve-2023-32629", 7.77, 7.77, 2320, (13.8, 27.1),
                                "overlayfs metadata copy-up capability skip"),
    "cve-2023-2640-setxattr": _semantic("cve-2023-2640-setxattr", 20.05, 20.04,
                                        5106, (40.0, 50.0),
                                        "overlayfs setxattr security-check gap"),
    "cve-2020-14386": _memory_corruption("cve-2020-14386", 100.0, 2000,
                                         (100.0, 100.0),
                                         "af_packet ring-buffer overflow"),
    "cve-2022-0185": _memory_corruption("cve-2022-0185", 1000.0, 2000,
                                        (1000.0, 1000.0),
                                        "fs_context heap overflow"),
    "cve-2023-32233": _memory_corruption("cve-2023-32233", 1000.0, 2000,
                                         (1000.0, 1000.0),
                                         "nf_tables batch use-after-free"),
    "cve-2023-0179": _memory_corruption("cve-2023-0179", 1000.0, 2000,
                                        (1000.0, 1000.0),
                                        "nft_payload stack overflow"),
    "cve-2022-2588": _memory_corruption("cve-2022-2588", 1000.0, 2000,
                                        (1000.0, 1000.0),
                                        "cls_route filter use-after-free"),
}
ATTACK_PRESETS["dirtypipe"] = ATTACK_PRESETS["cve-2022-0847"]


def scenario_by_name(name: str) -> AttackScenario:
    if name not in ATTACK_PRESETS:
        raise KeyError(f"unknown attack preset {name!r}; "
                       f"have {sorted(ATTACK_PRESETS)}")
    return ATTACK_PRESETS[name]


@dataclass
class TamperResult:
    scenario: str
    start_cycles: int
    clear_cycles: int
    total_logs: int
    lost_logs: int = 0
    lost_by_phase: dict = field(default_factory=dict)
    protected_at_clear: int = 0
    cleared_buffers: int = 0
    gic_effect: Optional[bool] = None
    # oracle bookkeeping captured at the clear instant
    appended_at_clear: int = 0
    protected_incarnations: frozenset = frozenset()


class Attacker:
    """Drives one scenario against an assembled system."""

    def __init__(self, system: System, scenario: AttackScenario, start_at: int,
                 gic_contention_cycles: int = 240_000):
        self.system = system
        self.scenario = scenario
        self.start_at = start_at
        self.gic_contention = gic_contention_cycles
        eng = system.engine
        self._ms = eng.freq_hz // 1000
        self.result = TamperResult(
            scenario=scenario.name, start_cycles=start_at,
            clear_cycles=start_at + int(round(scenario.total_ms * self._ms)),
            total_logs=scenario.total_logs)
        self.faults_observed = 0
        self._emit_times = self._plan_emissions()
        self._i = 0

    # -- planning -------------------------------------------------------------

    def _plan_emissions(self) -> list[tuple[int, int]]:
        """(cycles, phase-code) for each attack log entry: uniform spacing
        over the emitting phase windows, exact total."""
        s = self.scenario
        windows: list[tuple[float, float, int]] = []
        off = 0.0
        for p in s.phases:
            if p.emits:
                windows.append((off, off + p.duration_ms, _PHASE_CODE[p.label]))
            off += p.duration_ms
        span = sum(b - a for a, b, _ in windows)
        out = []
        for i in range(s.total_logs):
            pos = i * span / s.total_logs
            for a, b, code in windows:
                if pos < (b - a):
                    t_ms = a + pos
                    break
                pos -= (b - a)
            else:
                t_ms, code = windows[-1][1], windows[-1][2]
            out.append((self.start_at + int(round(t_ms * self._ms)), code))
        return out

    # -- installation ------------------------------------------------------------

    def install(self) -> None:
        eng = self.system.engine
        if self._emit_times:
            first_t, _ = self._emit_times[0]
            eng.schedule(first_t, self._emit_next,
                         actor=self.system.gen_actor(self.system.active_cores[0]))
        t_c = self.start_at + int(round(self.scenario.compromise_offset_ms * self._ms))
        if self.scenario.gic_attack:
            eng.schedule(t_c, self._gic_write, actor=ATTACKER)
        eng.schedule(self.result.clear_cycles, self._clear, actor=ATTACKER)

    def _emit_next(self) -> None:
        sysm = self.system
        t, code = self._emit_times[self._i]
        core = sysm.active_cores[self._i % len(sysm.active_cores)]
        # re-target the event at the owning core's generator so protection
        # windows defer it like any other write on that core
        sysm.emit(core, SRC_AUDIT, self.scenario.entry_size, phase=code,
                  emit_time=t)
        self._i += 1
        if self._i < len(self._emit_times):
            nxt, _ = self._emit_times[self._i]
            ncore = sysm.active_cores[self._i % len(sysm.active_cores)]
            sysm.engine.schedule(max(nxt, sysm.engine.now), self._emit_next,
                                 actor=sysm.gen_actor(ncore))

    # -- root-phase actions ---------------------------------------------------------

    def _gic_write(self) -> None:
        sysm = self.system
        page = sysm.layout["gic_mmio"]
        verdict = sysm.memsys.check_cpu_access(DOMAIN_OS, page, "write",
                                               sysm.engine.now, ATTACKER)
        if verdict == ACCESS_OK:
            sysm.degraded_timer_extra = self.gic_contention
            self.result.gic_effect = True
        else:
            self.result.gic_effect = False
        sysm.trace.record(sysm.engine.now, ATTACKER, "attack",
                          action="gic_deprioritize",
                          effective=self.result.gic_effect)

    def attempt_protected_read(self, rng: PhysRange) -> str:
        sysm = self.system
        verdict = sysm.memsys.check_cpu_access(DOMAIN_OS, rng, "read",
                                               sysm.engine.now, ATTACKER)
        if verdict != ACCESS_OK:
            self.faults_observed += 1
        return verdict

    def _clear(self) -> None:
        """Wipe every buffer the OS view still permits writing."""
        sysm = self.system
        res = self.result
        now = sysm.engine.now
        res.clear_cycles = now
        # oracle snapshot: what has been appended/protected up to this instant
        res.appended_at_clear = len(sysm.append_log)
        res.protected_incarnations = frozenset(
            (rec[1], rec[2]) for rec in sysm.protect_log)
        res.protected_at_clear = sysm.stats.ever_protected
        lost_by_phase: dict[str, int] = {}
        for buf in sysm.pool.buffers:
            if not buf.entries:
                continue
            verdict = sysm.memsys.check_cpu_access(DOMAIN_OS, buf.range, "write",
                                                   now, ATTACKER)
            if verdict != ACCESS_OK:
                self.faults_observed += 1
                continue
            res.cleared_buffers += 1
            res.lost_logs += len(buf.entries)
            for e in buf.entries:
                name = PHASE_NAMES.get(e.phase, "background")
                lost_by_phase[name] = lost_by_phase.get(name, 0) + 1
                sysm.stats.cleared_by_phase[e.phase] = \
                    sysm.stats.cleared_by_phase.get(e.phase, 0) + 1
            sysm.stats.cleared += len(buf.entries)
            sysm.trace.record(now, ATTACKER, "clear", buffer=buf.id,
                              incarnation=buf.incarnation,
                              entries=len(buf.entries))
            buf.entries.clear()
            buf.used = 0
        res.lost_by_phase = lost_by_phase
        sysm.trace.record(now, ATTACKER, "attack", action="clear_done",
                          lost=res.lost_logs)


def recount_lost(system: System, result: TamperResult) -> int:
    """Independent recount: an appended entry is lost exactly when its
    buffer incarnation had not been protected by the clear instant."""
    lost = 0
    prot = result.protected_incarnations
    for seq, core, buf, inc in system.append_log[:result.appended_at_clear]:
        if (buf, inc) not in prot:
            lost += 1
    return lost
