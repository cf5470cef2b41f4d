"""Self-check suites behind the ``check`` CLI command.

Each check is a fast, self-contained scenario asserting one of the
system's security or correctness invariants: exact cost calibration,
flood survival, protected-memory isolation, shutdown persistence, admin
channel authentication, protect-before-measure attestation ordering,
driver replay fidelity and run determinism. The acceptance test suite
exercises the same properties at full scale; this command is the quick
gate (a couple of seconds end to end).
"""

from __future__ import annotations

import hashlib
import tempfile
from dataclasses import replace

from .attacker import Attacker, recount_lost, scenario_by_name
from .config import Config
from .costs import (CostModel, DEFAULT_POINTS, MECH_GPT, MECH_MEMCPY,
                    MECH_S2PT, TABLE_SIZES)
from .daemon import ManagementCommand
from .driver import (DeviceModel, DmaArena, SampleJob, record_with_traces,
                     replay, CMD_WRITE, CMD_READ, SECTOR)
from .engine import Rng
from .memdomain import ACCESS_FAULT, DOMAIN_OS, MemoryLayout, PhysRange
from .pipeline import PHASE_SPURIOUS, SRC_AUDIT
from .system import MODE_GPT, RunOptions, System


def _small_system(seed=3, cores=1, per_core=2, buffer_bytes=4096,
                  tp_cycles=120_000, **opt_overrides) -> System:
    opts = RunOptions(mode=MODE_GPT, tp_cycles=tp_cycles,
                      duration_cycles=10 * tp_cycles, workload_mode="none",
                      track_identity=True, record_appends=True)
    for k, v in opt_overrides.items():
        setattr(opts, k, v)
    return System(opts, seed=seed, cores=cores, buffers_per_core=per_core,
                  buffer_bytes=buffer_bytes)


def check_cost_exactness() -> tuple[bool, str]:
    model = CostModel()
    bad = []
    for mech, row in DEFAULT_POINTS.items():
        for size, want in zip(TABLE_SIZES, row):
            got = model.memcpy_cost(size) if mech == MECH_MEMCPY \
                else model.switch_cost(mech, size)
            if got != want:
                bad.append((mech, size, got, want))
    return not bad, f"{21 - len(bad)}/21 calibration points exact"


def check_crossover() -> tuple[bool, str]:
    model = CostModel()
    ok = True
    for size in (64, 256):          # copy wins below half a kilobyte
        for mech in (MECH_S2PT, MECH_GPT):
            ok &= model.memcpy_cost(size) < model.switch_cost(mech, size)
    for size in (4096, 16384, 32768, 65536):
        for mech in (MECH_S2PT, MECH_GPT):
            ok &= model.memcpy_cost(size) > model.switch_cost(mech, size)
    return ok, "copy cheaper under 512B, switching cheaper from 4KB up"


def check_flood_no_drop() -> tuple[bool, str]:
    system = _small_system()
    honest = [system.emit(0, SRC_AUDIT, 256) for _ in range(20)]
    honest_seqs = {e.seq for e in honest}
    system.engine.schedule(1000, lambda: system.flood(0, 3000, 256),
                           actor=system.gen_actor(0))
    system.start_timer()
    system.engine.run_until(system.opts.duration_cycles)
    system.drain()
    surviving = set(system.stats.persisted_seqs)
    for b in system.pool.buffers:
        surviving.update(e.seq for e in b.entries)
    for q in system.blocked:
        surviving.update(e.seq for e in q)
    surviving.update(e.seq for e in system.staging)
    ok = (system.conservation_ok() and honest_seqs <= surviving
          and system.stats.emitted == 3020)
    return ok, (f"{system.stats.emitted} emitted under flood, "
                f"{system.stats.persisted} persisted, zero dropped")


def check_protected_probes() -> tuple[bool, str]:
    system = _small_system()
    system.emit(0, SRC_AUDIT, 256)
    system.start_timer()
    system.engine.run_until(3 * system.opts.tp_cycles)
    layout = system.layout
    probes = [layout[name] for name in
              ("monitor", "daemon_pt", "daemon", "mmio", "dma", "smmu_config")]
    rng = Rng(5)
    for region in list(probes):
        off = (rng.uniform_int(0, region.page_count - 1)) * 4096
        probes.append(region.subrange(off, 4096))
    faults = sum(
        1 for r in probes
        if system.memsys.check_cpu_access(DOMAIN_OS, r, "read") == ACCESS_FAULT)
    ok = faults == len(probes)
    return ok, f"{faults}/{len(probes)} probes faulted, 0 bytes readable"


def check_shutdown_persistence() -> tuple[bool, str]:
    system = _small_system(tp_cycles=60_000)
    def pump():
        if system.engine.now < 500_000:
            system.emit(0, SRC_AUDIT, 256)
            system.engine.schedule_after(10_000, pump, actor=system.gen_actor(0))
    system.engine.schedule(0, pump, actor=system.gen_actor(0))
    system.start_timer()
    system.engine.run_until(200_000)
    system.os_honest = False        # daemon starved from here on
    system.engine.run_until(600_000)
    system.shutdown()
    ok = (system.stats.ever_protected_seqs <= system.stats.persisted_seqs
          and system.conservation_ok())
    return ok, (f"{len(system.stats.ever_protected_seqs)} ever-protected "
                f"entries all persisted at shutdown")


def _disk_digest(device: DeviceModel) -> bytes:
    h = hashlib.sha256()
    for lba in sorted(device.sectors):
        h.update(lba.to_bytes(8, "little"))
        h.update(device.read_sector(lba))
    return h.digest()


def check_admin_fuzz(n: int = 400) -> tuple[bool, str]:
    system = _small_system()
    for _ in range(32):
        system.emit(0, SRC_AUDIT, 256)
    system.start_timer()
    system.engine.run_until(5 * system.opts.tp_cycles)
    system.drain()
    base_deletions = system.protocol.deletions
    rng = Rng(11)
    ping = system.admin.command("ping")
    system.protocol.handle_admin(ping)          # executes once, legitimately
    digest_before = _disk_digest(system.device)
    accepted_forgeries = 0
    for _ in range(n):
        kind = rng.uniform_int(0, 3)
        if kind == 0:       # forged signature (random bytes)
            msg = ManagementCommand("delete", 1, 1, rng.bytes(16),
                                    ping.session, rng.bytes(64))
        elif kind == 1:     # bit-flipped signature on a real command
            real = system.admin.command("delete", 1, 1)
            sig = bytearray(real.signature)
            sig[rng.uniform_int(0, len(sig) - 1)] ^= 1 << rng.uniform_int(0, 7)
            msg = ManagementCommand("delete", real.lba, real.sector_count,
                                    real.nonce, real.session, bytes(sig))
        elif kind == 2:     # body mutated after signing
            real = system.admin.command("delete", 1, 1)
            msg = ManagementCommand("delete", real.lba + 1, real.sector_count,
                                    real.nonce, real.session, real.signature)
        else:               # replay of the executed ping
            msg = ping
        if system.protocol.handle_admin(msg) is not None:
            accepted_forgeries += 1
    deletions = system.protocol.deletions - base_deletions
    ok = (accepted_forgeries == 0 and deletions == 0
          and _disk_digest(system.device) == digest_before)
    return ok, (f"{n} forged/mutated/replayed messages, "
                f"{deletions} unauthorized deletions")


def check_tocttou() -> tuple[bool, str]:
    system = _small_system()
    steps = [r[4]["step"] for r in system.trace.of_kind("attest")]
    ok = "protect" in steps and "measure" in steps and \
        steps.index("protect") < steps.index("measure")
    return ok, "attestation trace shows protect before measure"


def check_driver_fidelity() -> tuple[bool, str]:
    layout = MemoryLayout()
    window = layout["dma"]
    jobs = [SampleJob(8, b"\x11" * 512), SampleJob(64, b"\x22" * 1024),
            SampleJob(200, b"\x33" * 512), SampleJob(16, read_sectors=2)]
    template, traces = record_with_traces(jobs, DeviceModel(1024, window),
                                          DmaArena(window))
    dev2, arena2 = DeviceModel(1024, window), DmaArena(window)
    ok = True
    for job, want in zip(jobs, traces):
        sink: list = []
        status, _ = replay(template, dev2, arena2, lba=job.lba,
                           dir=job.direction, payload=job.payload,
                           read_sectors=job.read_sectors, trace_sink=sink)
        ok &= status == "done" and sink == want
    # shadow-map spot check
    shadow: dict[int, bytes] = {}
    dev3, arena3 = DeviceModel(4096, window), DmaArena(window)
    rng = Rng(23)
    for _ in range(30):
        lba = rng.uniform_int(0, 4000)
        data = rng.bytes(SECTOR)
        replay(template, dev3, arena3, lba=lba, dir=CMD_WRITE, payload=data)
        shadow[lba] = data
    for lba, want in shadow.items():
        _, got = replay(template, dev3, arena3, lba=lba, dir=CMD_READ,
                        read_sectors=1)
        ok &= got == want
    return ok, "template replay matches recordings and shadow map"


def check_tamper_recount() -> tuple[bool, str]:
    cfg = Config()
    cfg.experiment.trials = 3
    from .experiments import run_tamper_trial
    ok = True
    for i in range(3):
        trial = run_tamper_trial(cfg, cfg.tp_cycles(), "cve-2022-0847", i)
        ok &= trial.oracle_lost == trial.result.lost_logs and trial.conserved
    return ok, "attack-trial lost counts equal the trace recount oracle"


def check_determinism() -> tuple[bool, str]:
    import os
    from .experiments import run_tamper_study, _sha256
    cfg = Config()
    cfg.experiment.trials = 3
    digests = []
    for _ in range(2):
        with tempfile.TemporaryDirectory() as d:
            run_tamper_study(cfg, out_dir=d)
            digests.append((_sha256(os.path.join(d, "tamper_trials.csv")),
                            _sha256(os.path.join(d, "summary.json"))))
    ok = digests[0] == digests[1]
    return ok, "identical seed and config reproduce identical artifacts"


ALL_CHECKS = (
    ("cost-exactness", check_cost_exactness),
    ("cost-crossover", check_crossover),
    ("flood-no-drop", check_flood_no_drop),
    ("protected-probes", check_protected_probes),
    ("shutdown-persistence", check_shutdown_persistence),
    ("admin-fuzz", check_admin_fuzz),
    ("attest-ordering", check_tocttou),
    ("driver-fidelity", check_driver_fidelity),
    ("tamper-recount", check_tamper_recount),
    ("determinism", check_determinism),
)


def run_all(printer=print) -> bool:
    all_ok = True
    for name, fn in ALL_CHECKS:
        ok, detail = fn()
        all_ok &= ok
        printer(f"{'PASS' if ok else 'FAIL'}  {name:24s} {detail}")
    return all_ok
