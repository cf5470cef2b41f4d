"""Device FSM, record/replay templating, append-only log store."""

import pytest

from logshield.driver import (CMD_READ, CMD_WRITE, DeviceModel,
                              DeviceProtocolError, DiskFullError, DmaArena,
                              DriverTemplate, IrqWait, LogStore, MmioWrite,
                              NonDeterministicDevice, PH_DIR, PH_LBA, PH_LEN,
                              REG_CMD, REG_DMA, REG_LBA, REG_LEN, REPLAY_DONE,
                              REPLAY_IOERROR, SampleJob, SECTOR, decode_records,
                              encode_record, record, record_with_traces,
                              reference_driver, replay)
from logshield.engine import Rng
from logshield.memdomain import PhysRange

WINDOW = PhysRange(0x10000, 0x40000)


def _fresh():
    return DeviceModel(4096, WINDOW), DmaArena(WINDOW)


def _template(jobs=None):
    dev, arena = _fresh()
    jobs = jobs or [SampleJob(8, b"\xaa" * 512), SampleJob(40, b"\xbb" * 1024),
                    SampleJob(96, b"\xcc" * 512), SampleJob(12, read_sectors=2)]
    return record(jobs, dev, arena)


def test_fsm_requires_full_legal_sequence():
    dev, _ = _fresh()
    with pytest.raises(DeviceProtocolError):
        dev.mmio_write(REG_CMD, CMD_WRITE)      # command before parameters
    dev.mmio_write(REG_LBA, 4)
    with pytest.raises(DeviceProtocolError):
        dev.mmio_write(REG_DMA, WINDOW.base)    # skipped the length register
    assert dev.sectors == {}                    # nothing written


def test_write_lands_only_after_command():
    dev, arena = _fresh()
    reference_driver(dev, arena, SampleJob(5, b"\x11" * 512))
    assert dev.sectors[5] == b"\x11" * 512
    assert dev.irq_pending == []                # consumed by the driver


def test_two_jobs_differing_only_in_lba_yield_one_placeholder():
    dev, arena = _fresh()
    t = record([SampleJob(8, b"a" * 512), SampleJob(99, b"a" * 512)],
               dev, arena)
    assert t.placeholders == {PH_LBA}


def test_single_job_template_has_no_placeholders():
    dev, arena = _fresh()
    job = SampleJob(8, b"a" * 512)
    t = record([job], dev, arena)
    assert t.placeholders == set()
    # it still replays that exact job
    dev2, arena2 = _fresh()
    status, _ = replay(t, dev2, arena2, lba=8, dir=CMD_WRITE, payload=b"a" * 512)
    assert status == REPLAY_DONE and dev2.sectors[8] == b"a" * 512


def test_varied_jobs_replay_unseen_parameters():
    t = _template()
    dev, arena = _fresh()
    payload = bytes(range(256)) * 6             # 3 sectors, never recorded
    status, _ = replay(t, dev, arena, lba=777, dir=CMD_WRITE, payload=payload)
    assert status == REPLAY_DONE
    want = payload.ljust(3 * SECTOR, b"\x00")
    got = b"".join(dev.read_sector(777 + i) for i in range(3))
    assert got == want


def test_replay_reproduces_each_recorded_trace_exactly():
    jobs = [SampleJob(8, b"\x11" * 512), SampleJob(64, b"\x22" * 1024),
            SampleJob(12, read_sectors=2), SampleJob(200, b"\x33" * 512)]
    dev, arena = _fresh()
    template, traces = record_with_traces(jobs, dev, arena)
    dev2, arena2 = _fresh()
    for job, want in zip(jobs, traces):
        sink = []
        status, _ = replay(template, dev2, arena2, lba=job.lba,
                           dir=job.direction, payload=job.payload,
                           read_sectors=job.read_sectors, trace_sink=sink)
        assert status == REPLAY_DONE
        assert sink == want


def test_nondeterministic_device_detected():
    class Flaky(DeviceModel):
        def __init__(self, *a, **kw):
            super().__init__(*a, **kw)
            self.calls = 0

        def irq_wait(self):
            self.calls += 1
            status = super().irq_wait()
            return status + (self.calls % 2)    # alternating status

    dev = Flaky(4096, WINDOW)
    job = SampleJob(8, b"a" * 512)
    with pytest.raises(NonDeterministicDevice):
        record([job, job], dev, DmaArena(WINDOW))


def test_write_read_round_trip_identical():
    t = _template()
    dev, arena = _fresh()
    payload = Rng(1).bytes(2 * SECTOR)
    assert replay(t, dev, arena, lba=31, dir=CMD_WRITE,
                  payload=payload)[0] == REPLAY_DONE
    status, data = replay(t, dev, arena, lba=31, dir=CMD_READ, read_sectors=2)
    assert status == REPLAY_DONE and data == payload


def test_hundred_random_writes_match_shadow_map():
    t = _template()
    dev, arena = _fresh()
    rng = Rng(23)
    shadow = {}
    for _ in range(100):
        lba = rng.uniform_int(0, 4000)
        data = rng.bytes(SECTOR)
        assert replay(t, dev, arena, lba=lba, dir=CMD_WRITE,
                      payload=data)[0] == REPLAY_DONE
        shadow[lba] = data
    for lba in sorted(shadow):
        _, got = replay(t, dev, arena, lba=lba, dir=CMD_READ, read_sectors=1)
        assert got == shadow[lba]


def test_out_of_range_command_reports_ioerror():
    t = _template()
    dev, arena = _fresh()
    status, _ = replay(t, dev, arena, lba=4095, dir=CMD_WRITE,
                       payload=b"x" * 1024)
    assert status == REPLAY_IOERROR


# -- log store ----------------------------------------------------------------

def _store():
    t = _template()
    dev = DeviceModel(4096, WINDOW)
    return LogStore(t, dev, DmaArena(WINDOW), WINDOW), dev


def test_sixteen_256b_entries_occupy_eight_sectors():
    store, _ = _store()
    records = [encode_record(i, 1000 + i, 256, 0, 0, 0, i) for i in range(16)]
    first, nsectors = store.persist_records(records)
    assert (first, nsectors) == (1, 8)          # 16 * 256 / 512


def test_empty_persist_touches_nothing():
    store, dev = _store()
    written = dev.written_sectors
    first, nsectors = store.persist_records([])
    assert nsectors == 0 and dev.written_sectors == written


def test_two_persists_read_back_concatenated_in_order():
    store, _ = _store()
    a = [encode_record(i, i, 256, 0, 0, 0, i) for i in range(5)]
    b = [encode_record(i, i, 256, 0, 0, 0, i) for i in range(5, 9)]
    lba_a, n_a = store.persist_records(a)
    lba_b, n_b = store.persist_records(b)
    assert lba_b == lba_a + n_a                 # append only
    got = store.read_entries(lba_a, n_a + n_b)
    assert [e["seq"] for e in got] == list(range(9))


def test_superblock_tracks_allocation():
    store, dev = _store()
    store.persist_records([encode_record(0, 0, 512, 0, 0, 0, 0)])
    from logshield.driver import SUPERBLOCK
    magic, version, next_free, count = SUPERBLOCK.unpack_from(dev.read_sector(0))
    assert magic == b"LSLG" and next_free == store.next_free_lba and count == 1


def test_disk_full_raises():
    t = _template()
    dev = DeviceModel(8, WINDOW)                # tiny disk: superblock + 7
    store = LogStore(t, dev, DmaArena(WINDOW), WINDOW)
    with pytest.raises(DiskFullError):
        store.persist_records([encode_record(i, i, 512, 0, 0, 0, 0)
                               for i in range(8)])


def test_record_encode_decode_round_trip():
    rec = encode_record(7, 123456, 256, 3, 1, 2, 0xDEADBEEF)
    assert len(rec) == 256
    out = decode_records(rec)
    assert out == [{"seq": 7, "emit_time": 123456, "size": 256, "core": 3,
                    "source": 1, "phase": 2, "digest": 0xDEADBEEF}]
    # zero length prefix skips to the next sector boundary
    padded = rec + b"\x00" * 256 + encode_record(8, 9, 256, 0, 0, 0, 1)
    assert [e["seq"] for e in decode_records(padded)] == [7, 8]


def test_zeroed_sectors_decode_empty():
    store, _ = _store()
    records = [encode_record(i, i, 256, 0, 0, 0, i) for i in range(4)]
    first, n = store.persist_records(records)
    store.zero_sectors(first, n)
    assert store.read_entries(first, n) == []


def test_export_image_layout(tmp_path):
    store, _ = _store()
    store.persist_records([encode_record(1, 2, 256, 0, 0, 0, 3)])
    path = tmp_path / "disk.img"
    store.export_image(str(path))
    blob = path.read_bytes()
    assert len(blob) % SECTOR == 0
    assert blob[:4] == b"LSLG"
    assert decode_records(blob[SECTOR:])[0]["seq"] == 1
