"""Signed checkpoints chained by consistency proofs, and their verification."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from . import hashing
from .hashing import HASH_SIZE, Hash, hash_from_hex
from .merkle_log import ConsistencyProof, verify_consistency

CHECKPOINT_TAG = "eads/v1"
SIGNATURE_SIZE = 64
MAX_LEDGER_ID = 64


def _check_ledger_id(ledger_id) -> str:
    if (
        not isinstance(ledger_id, str)
        or not 0 < len(ledger_id) <= MAX_LEDGER_ID
        or not all(c.isascii() and (c.isalnum() or c in "-_.") for c in ledger_id)
    ):
        raise ValueError(f"invalid ledger id {ledger_id!r:.80}")
    return ledger_id


def _int(value, name: str) -> int:
    if type(value) is not int or value < 0:
        raise ValueError(f"{name} must be a non-negative integer")
    return value


@dataclass(frozen=True)
class SignedCheckpoint:
    ledger_id: str
    version: int
    tree_size: int
    root: Hash
    map_root: Hash | None
    timestamp: int
    signature: bytes = b""

    def canonical_bytes(self) -> bytes:
        map_root = self.map_root.hex() if self.map_root is not None else "-"
        return (
            f"{CHECKPOINT_TAG}\n{self.ledger_id}\n{self.version}\n{self.tree_size}\n"
            f"{self.root.hex()}\n{map_root}\n{self.timestamp}\n"
        ).encode()

    def verify(self, public_key: bytes) -> bool:
        return hashing.verify_signature(public_key, self.canonical_bytes(), self.signature)

    def same_state(self, other: SignedCheckpoint) -> bool:
        return (self.tree_size, self.root, self.map_root) == (other.tree_size, other.root, other.map_root)

    def to_json(self) -> dict:
        return {
            "ledger_id": self.ledger_id,
            "version": self.version,
            "tree_size": self.tree_size,
            "root": self.root.hex(),
            "map_root": self.map_root.hex() if self.map_root is not None else None,
            "timestamp": self.timestamp,
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_json(cls, obj) -> SignedCheckpoint:
        keys = {"ledger_id", "version", "tree_size", "root", "map_root", "timestamp", "signature"}
        if not isinstance(obj, dict) or set(obj) != keys:
            raise ValueError("malformed checkpoint")
        return cls(
            ledger_id=_check_ledger_id(obj["ledger_id"]),
            version=_int(obj["version"], "version"),
            tree_size=_int(obj["tree_size"], "tree_size"),
            root=hash_from_hex(obj["root"]),
            map_root=None if obj["map_root"] is None else hash_from_hex(obj["map_root"]),
            timestamp=_int(obj["timestamp"], "timestamp"),
            signature=hashing.from_hex(obj["signature"], SIGNATURE_SIZE),
        )


def make_checkpoint(
    ledger_id: str,
    version: int,
    tree_size: int,
    root: Hash,
    map_root: Hash | None,
    timestamp: int,
    secret_key: bytes,
) -> SignedCheckpoint:
    _check_ledger_id(ledger_id)
    if tree_size < 0 or version < 0:
        raise ValueError("version and tree_size must be non-negative")
    unsigned = SignedCheckpoint(ledger_id, version, tree_size, root, map_root, timestamp)
    signature = hashing.sign(secret_key, unsigned.canonical_bytes())
    return SignedCheckpoint(ledger_id, version, tree_size, root, map_root, timestamp, signature)


@dataclass(frozen=True)
class HistoryRecord:
    checkpoint: SignedCheckpoint
    prev_version: int | None = None
    consistency: ConsistencyProof | None = None

    @property
    def ledger_id(self) -> str:
        return self.checkpoint.ledger_id

    @property
    def version(self) -> int:
        return self.checkpoint.version

    def to_json(self) -> dict:
        return {
            "checkpoint": self.checkpoint.to_json(),
            "prev_version": self.prev_version,
            "consistency": self.consistency.to_json() if self.consistency is not None else None,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))

    @classmethod
    def from_json(cls, obj) -> HistoryRecord:
        if not isinstance(obj, dict) or set(obj) != {"checkpoint", "prev_version", "consistency"}:
            raise ValueError("malformed history record")
        prev = obj["prev_version"]
        proof = obj["consistency"]
        return cls(
            checkpoint=SignedCheckpoint.from_json(obj["checkpoint"]),
            prev_version=None if prev is None else _int(prev, "prev_version"),
            consistency=None if proof is None else ConsistencyProof.from_json(proof),
        )

    @classmethod
    def loads(cls, text: str | bytes) -> HistoryRecord:
        return cls.from_json(json.loads(text))


class Verdict(str, Enum):
    OK = "OK"
    BAD_SIGNATURE = "BAD_SIGNATURE"
    SIZE_REGRESSION = "SIZE_REGRESSION"
    PROOF_INVALID = "PROOF_INVALID"
    VERSION_GAP = "VERSION_GAP"
    LEDGER_MISMATCH = "LEDGER_MISMATCH"
    DECODE_ERROR = "DECODE_ERROR"


class Overall(str, Enum):
    CONSISTENT = "CONSISTENT"
    INCONSISTENT = "INCONSISTENT"
    FORKED = "FORKED"


@dataclass(frozen=True)
class LinkResult:
    """Verdict for record ``index``; links from its predecessor when index > 0."""

    index: int
    from_version: int | None
    to_version: int | None
    verdict: Verdict
    detail: str = ""

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "from_version": self.from_version,
            "to_version": self.to_version,
            "verdict": self.verdict.value,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class ForkEvidence:
    version: int
    record_a: HistoryRecord
    record_b: HistoryRecord

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "record_a": self.record_a.to_json(),
            "record_b": self.record_b.to_json(),
        }


@dataclass
class AuditReport:
    ledger_id: str
    records_checked: int = 0
    anchor: LinkResult | None = None
    link_results: list[LinkResult] = field(default_factory=list)
    fork_evidence: ForkEvidence | None = None

    @property
    def overall(self) -> Overall:
        if self.fork_evidence is not None:
            return Overall.FORKED
        checks = self.link_results + ([self.anchor] if self.anchor else [])
        if all(r.verdict is Verdict.OK for r in checks):
            return Overall.CONSISTENT
        return Overall.INCONSISTENT

    def first_failure(self) -> LinkResult | None:
        checks = ([self.anchor] if self.anchor else []) + self.link_results
        return next((r for r in checks if r.verdict is not Verdict.OK), None)

    def to_json(self) -> dict:
        return {
            "ledger_id": self.ledger_id,
            "records_checked": self.records_checked,
            "overall": self.overall.value,
            "anchor": self.anchor.to_json() if self.anchor else None,
            "link_results": [r.to_json() for r in self.link_results],
            "fork_evidence": self.fork_evidence.to_json() if self.fork_evidence else None,
        }


class DecodeFailure:
    """Placeholder for a stored record that could not be decoded."""

    def __init__(self, error: str):
        self.error = error

    def __repr__(self) -> str:
        return f"DecodeFailure({self.error!r})"


def _check_anchor(record: HistoryRecord, ledger_id: str, public_key: bytes) -> LinkResult:
    cp = record.checkpoint
    if cp.ledger_id != ledger_id:
        return LinkResult(0, None, cp.version, Verdict.LEDGER_MISMATCH, cp.ledger_id)
    if not cp.verify(public_key):
        return LinkResult(0, None, cp.version, Verdict.BAD_SIGNATURE)
    if record.prev_version is None and record.consistency is not None:
        return LinkResult(0, None, cp.version, Verdict.PROOF_INVALID, "genesis record carries a proof")
    return LinkResult(0, None, cp.version, Verdict.OK)


def check_link(
    index: int, prev: HistoryRecord, record: HistoryRecord, ledger_id: str, public_key: bytes
) -> LinkResult:
    """Verify one adjacent pair of stored records."""
    old, new = prev.checkpoint, record.checkpoint

    def result(verdict: Verdict, detail: str = "") -> LinkResult:
        return LinkResult(index, old.version, new.version, verdict, detail)

    if new.ledger_id != ledger_id:
        return result(Verdict.LEDGER_MISMATCH, new.ledger_id)
    if not new.verify(public_key):
        return result(Verdict.BAD_SIGNATURE)
    if record.prev_version != old.version or new.version < old.version:
        return result(Verdict.VERSION_GAP, f"prev_version={record.prev_version}")
    if new.tree_size < old.tree_size:
        return result(Verdict.SIZE_REGRESSION, f"{old.tree_size} -> {new.tree_size}")
    proof = record.consistency
    if proof is None:
        return result(Verdict.PROOF_INVALID, "missing consistency proof")
    if not verify_consistency(old.tree_size, old.root, new.tree_size, new.root, proof):
        return result(Verdict.PROOF_INVALID)
    if new.tree_size == old.tree_size and new.map_root != old.map_root:
        # same log prefix must mean the same map state
        return result(Verdict.PROOF_INVALID, "map root changed without log growth")
    return result(Verdict.OK)


def verify_chain(
    records: Sequence[HistoryRecord | DecodeFailure], public_key: bytes, ledger_id: str | None = None
) -> AuditReport:
    """Check every stored record and every adjacent link.

    Consistency is transitive, so adjacent links passing implies every pair
    of versions in the chain is consistent.
    """
    if ledger_id is None:
        first = next((r for r in records if isinstance(r, HistoryRecord)), None)
        ledger_id = first.ledger_id if first else ""
    report = AuditReport(ledger_id=ledger_id, records_checked=len(records))
    if not records:
        return report
    head = records[0]
    if isinstance(head, DecodeFailure):
        report.anchor = LinkResult(0, None, None, Verdict.DECODE_ERROR, head.error)
    else:
        report.anchor = _check_anchor(head, ledger_id, public_key)
    for index in range(1, len(records)):
        prev, record = records[index - 1], records[index]
        if isinstance(record, DecodeFailure):
            from_version = prev.version if isinstance(prev, HistoryRecord) else None
            report.link_results.append(
                LinkResult(index, from_version, None, Verdict.DECODE_ERROR, record.error)
            )
        elif isinstance(prev, DecodeFailure):
            report.link_results.append(
                LinkResult(index, None, record.version, Verdict.DECODE_ERROR, "predecessor unreadable")
            )
        else:
            report.link_results.append(check_link(index, prev, record, ledger_id, public_key))
    return report


def detect_fork(
    records_a: Sequence[HistoryRecord],
    records_b: Sequence[HistoryRecord],
    public_key: bytes | None = None,
) -> ForkEvidence | None:
    """Find the earliest pair of checkpoints that claim the same version or
    tree size but commit to different states.

    With ``public_key`` given, records whose signature fails are ignored:
    only validly signed conflicting checkpoints count as evidence.
    """
    ids = {r.ledger_id for r in records_a} | {r.ledger_id for r in records_b}
    if len(ids) > 1:
        raise ValueError(f"records span several ledgers: {sorted(ids)}")

    def usable(records):
        if public_key is None:
            return list(records)
        return [r for r in records if r.checkpoint.verify(public_key)]

    a, b = usable(records_a), usable(records_b)
    by_version = {r.version: r for r in b}
    by_size: dict[int, HistoryRecord] = {}
    for r in b:
        by_size.setdefault(r.checkpoint.tree_size, r)

    candidates: list[ForkEvidence] = []
    for ra in a:
        rb = by_version.get(ra.version)
        if rb is not None and not ra.checkpoint.same_state(rb.checkpoint):
            candidates.append(ForkEvidence(ra.version, ra, rb))
            continue
        rb = by_size.get(ra.checkpoint.tree_size)
        if rb is not None and rb.checkpoint.root != ra.checkpoint.root:
            candidates.append(ForkEvidence(min(ra.version, rb.version), ra, rb))
    if not candidates:
        return None
    return min(candidates, key=lambda e: e.version)
