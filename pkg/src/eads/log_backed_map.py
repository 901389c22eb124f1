"""Verifiable map whose every edit is first recorded in a verifiable log."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .hashing import Hash, from_hex
from .merkle_log import VerifiableLog
from .sparse_map import SparseMap


class OpKind(str, Enum):
    PUT = "PUT"
    DELETE = "DELETE"


@dataclass(frozen=True)
class EditOp:
    kind: OpKind
    key: bytes
    value: bytes = b""

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", OpKind(self.kind))
        if self.kind is OpKind.DELETE and self.value:
            raise ValueError("DELETE carries no value")

    @classmethod
    def put(cls, key: bytes, value: bytes) -> EditOp:
        return cls(OpKind.PUT, key, value)

    @classmethod
    def delete(cls, key: bytes) -> EditOp:
        return cls(OpKind.DELETE, key)

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "key": self.key.hex(), "value": self.value.hex()}

    def canonical_bytes(self) -> bytes:
        # dict insertion order fixes field order: kind, key, value
        return json.dumps(self.to_json(), separators=(",", ":")).encode()

    @classmethod
    def from_json(cls, obj: dict) -> EditOp:
        if not isinstance(obj, dict) or set(obj) - {"kind", "key", "value"} or "kind" not in obj:
            raise ValueError(f"malformed edit op: {obj!r:.80}")
        return cls(OpKind(obj["kind"]), from_hex(obj.get("key", "")), from_hex(obj.get("value", "")))

    @classmethod
    def from_canonical(cls, data: bytes) -> EditOp:
        op = cls.from_json(json.loads(data))
        if op.canonical_bytes() != data:
            raise ValueError("edit op bytes are not canonical")
        return op


@dataclass(frozen=True)
class CombinedDigest:
    log_size: int
    log_root: Hash
    map_root: Hash


def apply_to_map(smap: SparseMap, op: EditOp) -> Hash:
    if op.kind is OpKind.PUT:
        return smap.put(op.key, op.value)
    return smap.delete(op.key)


@dataclass
class LogBackedMap:
    log: VerifiableLog = field(default_factory=VerifiableLog)
    map: SparseMap = field(default_factory=SparseMap)

    def __post_init__(self) -> None:
        # A log loaded from disk carries ops the map has not seen yet.
        for raw in self.log.entries():
            apply_to_map(self.map, EditOp.from_canonical(raw))

    @property
    def digest(self) -> CombinedDigest:
        return CombinedDigest(self.log.size, self.log.root, self.map.root)

    def apply_edit(self, op: EditOp) -> CombinedDigest:
        self.log.append(op.canonical_bytes())
        apply_to_map(self.map, op)
        return self.digest

    def ops(self) -> list[EditOp]:
        return [EditOp.from_canonical(raw) for raw in self.log.entries()]


def apply_edit(lbm: LogBackedMap, op: EditOp) -> CombinedDigest:
    return lbm.apply_edit(op)


def replay(ops: Iterable[EditOp]) -> CombinedDigest:
    lbm = LogBackedMap()
    for op in ops:
        lbm.apply_edit(op)
    return lbm.digest


def replay_verify(ops: Sequence[EditOp], claimed: CombinedDigest) -> bool:
    """Rebuild log and map from plaintext ops and compare with ``claimed``.

    Needs the ops themselves, so this is an internal audit, not an external one.
    """
    if len(ops) != claimed.log_size:
        return False
    return replay(ops) == claimed


def replay_from(smap: SparseMap, ops: Iterable[EditOp]) -> Hash:
    """Fold ``ops`` onto an existing map state (mutates ``smap``)."""
    for op in ops:
        apply_to_map(smap, op)
    return smap.root


def load_edit_script(lines: Iterable[str]) -> list[EditOp]:
    """Parse a JSON Lines edit script, skipping blank lines."""
    ops = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            ops.append(EditOp.from_json(json.loads(line)))
        except (ValueError, TypeError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    return ops
