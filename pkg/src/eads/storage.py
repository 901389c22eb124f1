"""Append-only JSON Lines journal standing in for a public ledger.

Each line is ``{"seq": n, "record": <HistoryRecord>}``. The journal checks
only append-only-ness and ``prev_version`` linkage; it stores record content
as given.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from pathlib import Path

from .history import DecodeFailure, HistoryRecord

log = logging.getLogger(__name__)


class JournalError(Exception):
    pass


class JournalConflict(JournalError):
    """Append would not extend the ledger's latest record."""


class JournalCorrupt(JournalError):
    pass


@dataclass(frozen=True)
class _Stored:
    seq: int
    record: HistoryRecord
    line: bytes


def encode_envelope(seq: int, record: HistoryRecord) -> bytes:
    return json.dumps({"seq": seq, "record": record.to_json()}, separators=(",", ":")).encode() + b"\n"


def decode_envelope(line: bytes) -> tuple[int, HistoryRecord]:
    obj = json.loads(line)
    if not isinstance(obj, dict) or set(obj) != {"seq", "record"} or type(obj["seq"]) is not int:
        raise ValueError("malformed journal envelope")
    return obj["seq"], HistoryRecord.from_json(obj["record"])


class Journal:
    def __init__(self, path: str | os.PathLike, fsync: bool = True):
        self.path = Path(path)
        self.fsync = fsync
        self._lock = threading.Lock()
        self._seq = 0
        self._by_ledger: dict[str, list[_Stored]] = {}
        self._load()

    def _load(self) -> None:
        if not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch()
            return
        data = self.path.read_bytes()
        lines = data.splitlines(keepends=True)
        good = 0
        for i, line in enumerate(lines):
            last = i == len(lines) - 1
            try:
                if not line.endswith(b"\n"):
                    raise ValueError("unterminated line")
                seq, record = decode_envelope(line)
                if seq <= self._seq:
                    raise ValueError(f"sequence {seq} does not increase")
            except ValueError as exc:
                if last:
                    log.warning("discarding torn final journal line in %s: %s", self.path, exc)
                    break
                raise JournalCorrupt(f"{self.path}: line {i + 1}: {exc}") from exc
            self._seq = seq
            self._by_ledger.setdefault(record.ledger_id, []).append(_Stored(seq, record, line))
            good += len(line)
        if good != len(data):
            with open(self.path, "r+b") as fh:
                fh.truncate(good)

    @property
    def sequence(self) -> int:
        return self._seq

    def ledgers(self) -> list[str]:
        return sorted(self._by_ledger)

    def append(self, record: HistoryRecord | dict) -> int:
        if not isinstance(record, HistoryRecord):
            try:
                record = HistoryRecord.from_json(record)
            except (ValueError, TypeError, KeyError) as exc:
                raise ValueError(f"invalid history record: {exc}") from exc
        with self._lock:
            stored = self._by_ledger.get(record.ledger_id, [])
            expected = stored[-1].record.version if stored else None
            if record.prev_version != expected:
                raise JournalConflict(
                    f"ledger {record.ledger_id}: prev_version {record.prev_version} "
                    f"does not match latest version {expected}"
                )
            seq = self._seq + 1
            line = encode_envelope(seq, record)
            with open(self.path, "ab") as fh:
                fh.write(line)
                fh.flush()
                if self.fsync:
                    os.fsync(fh.fileno())
            self._seq = seq
            self._by_ledger.setdefault(record.ledger_id, []).append(_Stored(seq, record, line))
            return seq

    def read(self, ledger_id: str, from_version: int = 0, to_version: int | None = None) -> list[HistoryRecord]:
        """Records with ``from_version <= version <= to_version``, in version order."""
        stored = list(self._by_ledger.get(ledger_id, ()))
        return [
            s.record
            for s in stored
            if s.record.version >= from_version and (to_version is None or s.record.version <= to_version)
        ]

    def latest(self, ledger_id: str) -> HistoryRecord | None:
        stored = self._by_ledger.get(ledger_id)
        return stored[-1].record if stored else None

    def raw_lines(self, ledger_id: str | None = None) -> list[bytes]:
        if ledger_id is None:
            merged = [s for items in self._by_ledger.values() for s in items]
            return [s.line for s in sorted(merged, key=lambda s: s.seq)]
        return [s.line for s in self._by_ledger.get(ledger_id, ())]


def journal_append(journal: Journal, record: HistoryRecord) -> int:
    return journal.append(record)


def journal_read(journal: Journal, ledger_id: str, from_version: int = 0, to_version: int | None = None):
    return journal.read(ledger_id, from_version, to_version)


def journal_latest(journal: Journal, ledger_id: str) -> HistoryRecord | None:
    return journal.latest(ledger_id)


def scan_journal_bytes(data: bytes, ledger_id: str) -> list[HistoryRecord | DecodeFailure]:
    """Lenient reader for auditors.

    Undecodable lines become :class:`DecodeFailure` placeholders instead of
    aborting, so the audit report can point at them. A torn final line is
    dropped, matching :class:`Journal` recovery.
    """
    lines = data.splitlines(keepends=True)
    if lines and not lines[-1].endswith(b"\n"):
        lines.pop()
    out: list[HistoryRecord | DecodeFailure] = []
    for line in lines:
        try:
            obj = json.loads(line)
        except ValueError as exc:
            out.append(DecodeFailure(f"invalid JSON: {exc}"))
            continue
        try:
            owner = obj["record"]["checkpoint"]["ledger_id"]
        except (KeyError, TypeError):
            owner = None
        if owner is not None and owner != ledger_id:
            continue
        try:
            _, record = decode_envelope(line)
        except (ValueError, TypeError) as exc:
            out.append(DecodeFailure(str(exc)))
            continue
        out.append(record)
    return out
