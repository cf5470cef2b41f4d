"""Two-view permission model and DMA filter."""

import pytest

from logshield.costs import CostModel, MECH_GPT, MECH_S2PT, PAGE
from logshield.engine import Rng
from logshield.memdomain import (ACCESS_FAULT, ACCESS_OK, DMA_BLOCKED, DMA_OK,
                                 DOMAIN_OS, DOMAIN_PROTECTED, MemoryLayout,
                                 MemorySystem, NotMonitorError, OutOfSpaceError,
                                 PhysRange, UnknownDeviceError)
from logshield.trace import Trace


def _memsys(mechanism=MECH_GPT, **kw):
    return MemorySystem(MemoryLayout(), mechanism, CostModel(), Trace(), **kw)


def test_ranges_must_be_page_aligned():
    with pytest.raises(ValueError):
        PhysRange(100, 4096)
    with pytest.raises(ValueError):
        PhysRange(4096, 100)
    with pytest.raises(ValueError):
        PhysRange(4096, 0)


def test_layout_rejects_overlaps_and_overruns():
    with pytest.raises(ValueError):
        MemoryLayout({"a": (0, 8192), "b": (4096, 8192)})
    with pytest.raises(ValueError):
        MemoryLayout({"a": (0, 1 << 40)})


def test_os_cannot_touch_monitor_or_daemon_regions():
    for mech in (MECH_GPT, MECH_S2PT):
        ms = _memsys(mech)
        for region in ("monitor", "daemon", "daemon_pt", "mmio", "dma",
                       "smmu_config"):
            assert ms.check_cpu_access(DOMAIN_OS, ms.layout[region]) == ACCESS_FAULT


def test_protected_domain_reads_all_buffers():
    ms = _memsys()
    assert ms.check_cpu_access(DOMAIN_PROTECTED, ms.layout["buffer_pool"],
                               "read") == ACCESS_OK
    for region in ("monitor", "daemon", "mmio", "dma"):
        assert ms.check_cpu_access(DOMAIN_PROTECTED, ms.layout[region],
                                   "read") == ACCESS_OK


def test_protect_then_write_faults_then_restore():
    ms = _memsys()
    buf = ms.layout["buffer_pool"].subrange(0, 65536)
    assert ms.check_cpu_access(DOMAIN_OS, buf) == ACCESS_OK
    ms.revoke_os(buf)
    assert ms.check_cpu_access(DOMAIN_OS, buf) == ACCESS_FAULT
    ms.restore_os(buf)
    assert ms.check_cpu_access(DOMAIN_OS, buf) == ACCESS_OK


def test_random_flip_sequence_matches_dict_oracle():
    ms = _memsys()
    pool = ms.layout["buffer_pool"]
    rng = Rng(17)
    oracle = {}           # page index -> revoked?
    for _ in range(300):
        page = rng.uniform_int(0, pool.page_count - 1)
        span = PhysRange(pool.base + page * PAGE, PAGE)
        if rng.random() < 0.5:
            ms.revoke_os(span)
            oracle[page] = True
        else:
            ms.restore_os(span)
            oracle[page] = False
        probe = rng.uniform_int(0, pool.page_count - 1)
        want = ACCESS_FAULT if oracle.get(probe) else ACCESS_OK
        got = ms.check_cpu_access(
            DOMAIN_OS, PhysRange(pool.base + probe * PAGE, PAGE))
        assert got == want


def test_set_range_charges_table_cost():
    ms = _memsys(MECH_GPT)
    buf4k = ms.layout["buffer_pool"].subrange(0, 4096)
    assert ms.revoke_os(buf4k) == 4383
    # idempotent state change still pays the switch
    assert ms.revoke_os(buf4k) == 4383
    ms2 = _memsys(MECH_S2PT)
    buf64k = ms2.layout["buffer_pool"].subrange(0, 65536)
    assert ms2.revoke_os(buf64k) == 4636


def test_only_monitor_may_edit_tables():
    ms = _memsys()
    with pytest.raises(NotMonitorError):
        ms.revoke_os(ms.layout["buffer_pool"].subrange(0, 4096), caller="os")


def test_out_of_space_rejected():
    ms = _memsys()
    beyond = PhysRange(ms.layout.space_bytes, 4096)
    with pytest.raises(OutOfSpaceError):
        ms.check_cpu_access(DOMAIN_OS, beyond)


def test_faults_are_recorded_and_counted():
    ms = _memsys()
    before = ms.fault_count
    ms.check_cpu_access(DOMAIN_OS, ms.layout["monitor"], "read", 123, "attacker")
    assert ms.fault_count == before + 1
    rec = ms.trace.of_kind("fault")[-1]
    assert rec[2] == "attacker" and rec[4]["access"] == "read"


def test_dma_filter_allows_window_blocks_everything_else():
    ms = _memsys()
    ms.smmu.register("log_disk", [ms.layout["dma"]])
    ms.smmu.register("rogue", [])
    window = ms.layout["dma"]
    assert ms.check_dma("log_disk", window.subrange(0, 4096)) == DMA_OK
    assert ms.check_dma("log_disk", window) == DMA_OK
    assert ms.check_dma("rogue", ms.layout["daemon"].subrange(0, 4096)) == DMA_BLOCKED
    with pytest.raises(UnknownDeviceError):
        ms.check_dma("ghost", window)


def test_dma_straddling_window_boundary_blocked():
    ms = _memsys()
    ms.smmu.register("log_disk", [ms.layout["dma"]])
    window = ms.layout["dma"]
    straddle = PhysRange(window.end - PAGE, 2 * PAGE)
    # page-by-page oracle: every page must be inside the allow-list
    want = DMA_OK if all(
        window.contains(PhysRange(p * PAGE, PAGE))
        for p in range(straddle.first_page, straddle.first_page + 2)) \
        else DMA_BLOCKED
    assert want == DMA_BLOCKED
    assert ms.check_dma("log_disk", straddle) == DMA_BLOCKED


def test_pages_outside_named_regions_never_touched():
    ms = _memsys()
    outside = ms.layout.outside_pages()
    before = [ms.os_view.entries[p] for p in outside]
    pool = ms.layout["buffer_pool"]
    rng = Rng(3)
    for _ in range(64):
        page = rng.uniform_int(0, pool.page_count - 1)
        span = PhysRange(pool.base + page * PAGE, PAGE)
        (ms.revoke_os if rng.random() < 0.5 else ms.restore_os)(span)
    after = [ms.os_view.entries[p] for p in outside]
    assert before == after


def test_gic_page_protection_follows_mitigation_flag():
    open_ms = _memsys(gic_mitigation=False)
    shut_ms = _memsys(gic_mitigation=True)
    gic = open_ms.layout["gic_mmio"]
    assert open_ms.check_cpu_access(DOMAIN_OS, gic) == ACCESS_OK
    assert shut_ms.check_cpu_access(DOMAIN_OS, gic) == ACCESS_FAULT
