import json

import pytest

from eads.history import DecodeFailure, HistoryRecord
from eads.storage import (
    Journal,
    JournalConflict,
    JournalCorrupt,
    journal_append,
    journal_latest,
    journal_read,
    scan_journal_bytes,
)

from chains import honest_chain


@pytest.fixture
def chain(keypair, random_entries):
    return honest_chain(random_entries(9), keypair)


def test_genesis_then_next(tmp_path, chain):
    j = Journal(tmp_path / "j.jsonl", fsync=False)
    assert journal_append(j, chain[0]) == 1
    assert journal_append(j, chain[1]) == 2


def test_version_skip_conflicts(tmp_path, chain):
    j = Journal(tmp_path / "j.jsonl", fsync=False)
    j.append(chain[0])
    j.append(chain[1])
    with pytest.raises(JournalConflict):
        j.append(chain[3])
    with pytest.raises(JournalConflict):
        j.append(chain[0])  # second genesis
    assert j.sequence == 2


def test_non_genesis_first_conflicts(tmp_path, chain):
    with pytest.raises(JournalConflict):
        Journal(tmp_path / "j.jsonl").append(chain[1])


def test_invalid_record_is_input_error(tmp_path):
    with pytest.raises(ValueError):
        Journal(tmp_path / "j.jsonl").append({"checkpoint": {}, "prev_version": None, "consistency": None})


def test_unknown_ledger(tmp_path):
    j = Journal(tmp_path / "j.jsonl")
    assert journal_read(j, "nope", 0, 10) == []
    assert journal_latest(j, "nope") is None


def test_latest_and_range(tmp_path, chain):
    j = Journal(tmp_path / "j.jsonl", fsync=False)
    for r in chain[:5]:
        j.append(r)
    assert journal_latest(j, "L").version == 4
    for r in chain[5:]:
        j.append(r)
    assert [r.version for r in journal_read(j, "L", 2, 3)] == [2, 3]
    assert journal_read(j, "L") == chain


def test_envelope_format(tmp_path, chain):
    j = Journal(tmp_path / "j.jsonl", fsync=False)
    j.append(chain[0])
    j.append(chain[1])
    lines = (tmp_path / "j.jsonl").read_bytes().splitlines()
    first = json.loads(lines[0])
    assert list(first) == ["seq", "record"]
    assert first["seq"] == 1
    assert HistoryRecord.from_json(first["record"]) == chain[0]


def test_ledgers_interleave(tmp_path, keypair, random_entries):
    a = honest_chain(random_entries(3), keypair, ledger_id="A")
    b = honest_chain(random_entries(3), keypair, ledger_id="B")
    j = Journal(tmp_path / "j.jsonl", fsync=False)
    for ra, rb in zip(a, b):
        j.append(ra)
        j.append(rb)
    again = Journal(tmp_path / "j.jsonl")
    assert again.read("A") == a and again.read("B") == b
    assert again.ledgers() == ["A", "B"]
    assert again.sequence == 8


def test_cold_reopen_thousand(tmp_path, keypair, random_entries):
    records = honest_chain(random_entries(999), keypair)
    path = tmp_path / "j.jsonl"
    j = Journal(path, fsync=False)
    for r in records:
        j.append(r)
    before = path.read_bytes()
    again = Journal(path)
    assert again.read("L") == records
    assert b"".join(again.raw_lines("L")) == before
    assert path.read_bytes() == before


def test_torn_final_line_discarded(tmp_path, chain):
    path = tmp_path / "j.jsonl"
    j = Journal(path, fsync=False)
    for r in chain[:4]:
        j.append(r)
    intact = path.read_bytes()
    with open(path, "ab") as fh:
        fh.write(b'{"seq":5,"record":{"checkp')
    again = Journal(path)
    assert again.read("L") == chain[:4]
    assert path.read_bytes() == intact
    assert again.append(chain[4]) == 5


def test_corrupt_middle_line_raises(tmp_path, chain):
    path = tmp_path / "j.jsonl"
    j = Journal(path, fsync=False)
    for r in chain[:3]:
        j.append(r)
    lines = path.read_bytes().splitlines(keepends=True)
    lines[1] = b"garbage\n"
    path.write_bytes(b"".join(lines))
    with pytest.raises(JournalCorrupt):
        Journal(path)


def test_scan_is_lenient(tmp_path, chain):
    path = tmp_path / "j.jsonl"
    j = Journal(path, fsync=False)
    for r in chain[:3]:
        j.append(r)
    data = path.read_bytes().replace(b'"prev_version":0', b'"prev_version":"0"')
    scanned = scan_journal_bytes(data + b"{partial", "L")
    assert isinstance(scanned[1], DecodeFailure)
    assert scanned[0] == chain[0] and scanned[2] == chain[2]
    assert len(scanned) == 3


def test_concurrent_reader_sees_prefix(tmp_path, chain):
    import threading

    path = tmp_path / "j.jsonl"
    j = Journal(path, fsync=False)
    seen = []
    stop = threading.Event()

    def reader():
        while not stop.is_set():
            seen.append([r.version for r in scan_journal_bytes(path.read_bytes(), "L")])

    t = threading.Thread(target=reader)
    t.start()
    for r in chain:
        j.append(r)
    stop.set()
    t.join()
    for versions in seen:
        assert versions == list(range(len(versions)))
