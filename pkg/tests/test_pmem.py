import pytest

from pmtx.pmem import (EVERYTHING_SURVIVES, LINE_SIZE, NOTHING_SURVIVES, CrashPoint, CrashPolicy, PersistenceDomain,
                       PmemAlignmentError, PmemError, PmemOpenError, PmemRangeError, Region, read_image, write_image)


def domain(log=256, tree=512):
    return PersistenceDomain.create({Region.LOG: log, Region.TREE: tree})


def test_store_is_volatile_until_fenced():
    d = domain()
    d.store(Region.TREE, 0, b"AB")
    assert d.load(Region.TREE, 0, 2) == b"AB"
    assert d.durable(Region.TREE)[:2] == b"\0\0"
    d.crash(NOTHING_SURVIVES)
    assert d.load(Region.TREE, 0, 2) == b"\0\0"


def test_writeback_needs_fence():
    d = domain()
    d.store(Region.TREE, 3 * LINE_SIZE, b"x")
    d.writeback(Region.TREE, 3)
    d.crash(NOTHING_SURVIVES)
    assert d.load(Region.TREE, 3 * LINE_SIZE, 1) == b"\0"
    d.store(Region.TREE, 3 * LINE_SIZE, b"x")
    d.writeback(Region.TREE, 3)
    d.fence()
    d.crash(NOTHING_SURVIVES)
    assert d.load(Region.TREE, 3 * LINE_SIZE, 1) == b"x"


def test_clean_writeback_is_noop():
    d = domain()
    before = d.snapshot()
    d.writeback(Region.TREE, 1)
    d.fence()
    assert d.snapshot() == before


def test_store_spanning_lines_dirties_both():
    d = domain()
    d.store(Region.TREE, 60, bytes(range(8)))
    assert d.dirty_lines(Region.TREE) == {0, 1}
    assert d.load(Region.TREE, 60, 8) == bytes(range(8))


def test_out_of_range_and_alignment():
    d = domain()
    with pytest.raises(PmemRangeError):
        d.store(Region.LOG, 250, b"12345678")
    with pytest.raises(PmemRangeError):
        d.writeback(Region.LOG, 99)
    with pytest.raises(PmemAlignmentError):
        d.cas8(Region.LOG, 4, 0, 1)


def test_cas8_semantics():
    d = domain()
    assert d.cas8(Region.LOG, 8, 0, 7)
    assert d.load_int(Region.LOG, 8, 8) == 7
    assert not d.cas8(Region.LOG, 8, 0, 9)
    assert d.load_int(Region.LOG, 8, 8) == 7
    d.crash(NOTHING_SURVIVES)
    assert d.load_int(Region.LOG, 8, 8) == 0


def test_crash_policies():
    d = domain()
    d.store(Region.TREE, 0, b"\1" * 512)
    full = d.cached(Region.TREE)
    assert d.crash(EVERYTHING_SURVIVES)[Region.TREE] == full
    assert not d.dirty_lines(Region.TREE)


def test_seeded_eviction_is_reproducible():
    images = []
    for _ in range(2):
        d = domain(tree=64 * 32)
        for i in range(32):
            d.store(Region.TREE, i * 64, b"\xff")
        images.append(d.crash(CrashPolicy(0.5, rng_seed=11))[Region.TREE])
    assert images[0] == images[1]
    survivors = sum(images[0][i * 64] == 0xFF for i in range(32))
    assert 0 < survivors < 32


def test_survivor_callback_and_whole_words():
    d = domain()
    d.store(Region.TREE, 0, (2**64 - 1).to_bytes(8, "little"))
    d.store(Region.TREE, 64, b"\2" * 8)
    img = d.crash(CrashPolicy(survivors=lambda region, idx: idx == 1))[Region.TREE]
    assert img[0:8] == bytes(8)
    assert img[64:72] == b"\2" * 8


def test_fence_between_epochs_at_crash_point():
    d = domain()
    d.crash_at = 3
    d.store(Region.TREE, 0, b"a")
    d.persist(Region.TREE, [0])
    with pytest.raises(CrashPoint):
        d.store(Region.TREE, 64, b"b")
        d.persist(Region.TREE, [1])
    img = d.crash(NOTHING_SURVIVES)[Region.TREE]
    assert img[0:1] == b"a" and img[64:65] == b"\0"


def test_image_files_roundtrip(tmp_path):
    paths = {Region.LOG: str(tmp_path / "log.pm"), Region.TREE: str(tmp_path / "tree.pm")}
    d = PersistenceDomain.create({Region.LOG: 128, Region.TREE: 256}, paths=paths)
    d.store(Region.TREE, 70, b"hello")
    d.persist(Region.TREE, [1])
    d.store(Region.TREE, 0, b"lost")
    d.close()
    e = PersistenceDomain.open(paths)
    assert e.load(Region.TREE, 70, 5) == b"hello"
    assert e.load(Region.TREE, 0, 4) == bytes(4)


def test_open_rejects_bad_headers(tmp_path):
    p = tmp_path / "x.pm"
    write_image(str(p), bytes(64))
    raw = bytearray(p.read_bytes())
    raw[0] ^= 1
    p.write_bytes(bytes(raw))
    with pytest.raises(PmemOpenError):
        read_image(str(p))
    write_image(str(p), bytes(64))
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(PmemOpenError):
        read_image(str(p))


def test_image_length_must_be_line_multiple():
    with pytest.raises(PmemError):
        PersistenceDomain.create({Region.LOG: 100})
