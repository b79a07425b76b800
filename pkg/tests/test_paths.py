import pytest

from pmtx.arena import F_KEY, F_LEFT, F_RIGHT
from pmtx.engine import L_KEY, L_ROOT, new_domain
from pmtx.paths import (MAX_EPOCH, NODE_SIZE, NULL, Path, RecordingBackend, ResolutionError, WriteIntent, at,
                        log_field, read, resolve, run_epoch)
from pmtx.pmem import NOTHING_SURVIVES, Region


@pytest.fixture
def dom():
    return new_domain("rbt", 16)


def test_single_hop_log_field(dom):
    assert resolve(Path(L_ROOT), dom) == (Region.LOG, L_ROOT.offset, 4)


def test_two_hop_offset_arithmetic(dom):
    dom.store(Region.LOG, L_ROOT.offset, (5).to_bytes(4, "little"))
    assert resolve(Path(L_ROOT, F_LEFT), dom) == (Region.TREE, 5 * NODE_SIZE + 0, 4)
    assert resolve(Path(L_ROOT, F_KEY), dom) == (Region.TREE, 5 * 32 + 12, 8)


def test_null_hop_is_an_error(dom):
    with pytest.raises(ResolutionError):
        resolve(Path(L_ROOT, F_LEFT), dom)
    with pytest.raises(ResolutionError):
        resolve(at(NULL, F_KEY), dom)


def test_epoch_persists_and_reports_lines(dom):
    touched = run_epoch([WriteIntent(Path(L_KEY), 42), WriteIntent(at(3, F_RIGHT), 9)], dom)
    assert touched == {Region.LOG: {0}, Region.TREE: {1}}
    dom.crash(NOTHING_SURVIVES)
    assert read(Path(L_KEY), dom) == 42
    assert read(at(3, F_RIGHT), dom) == 9


def test_empty_epoch_only_fences(dom):
    before = dom.snapshot()
    assert run_epoch([], dom) == {}
    assert dom.snapshot() == before


def test_path_sourced_intent_copies(dom):
    run_epoch([WriteIntent(at(2, F_KEY), 77)], dom)
    run_epoch([WriteIntent(Path(L_KEY), at(2, F_KEY))], dom)
    assert read(Path(L_KEY), dom) == 77


def test_epoch_size_limit(dom):
    with pytest.raises(ValueError):
        run_epoch([WriteIntent(Path(L_KEY), 1)] * (MAX_EPOCH + 1), dom)


def test_rerun_after_mid_epoch_crash_matches(dom):
    intents = [WriteIntent(at(i, F_KEY), 100 + i) for i in range(1, 8)]
    ref = new_domain("rbt", 16)
    run_epoch(intents, ref)
    dom.crash_at = dom.ops + 4
    with pytest.raises(Exception):
        run_epoch(intents, dom)
    dom.crash(NOTHING_SURVIVES)
    run_epoch(intents, dom)
    assert dom.snapshot() == ref.snapshot()


def test_recording_backend(dom):
    rec = RecordingBackend(dom)
    run_epoch([WriteIntent(Path(L_KEY), Path(log_field("x", 40, 8)))], rec)
    assert (Region.LOG, 40, 8) in rec.reads
    assert (Region.LOG, L_KEY.offset, 8) in rec.writes


def test_path_construction_rules():
    with pytest.raises(ValueError):
        Path()
    with pytest.raises(ValueError):
        Path(F_KEY)
    with pytest.raises(ValueError):
        Path(L_KEY, index=3)
