"""Sparse Merkle tree over the 256-bit SHA-256 keyspace.

A key lives at the leaf addressed by ``sha256(key)``, most significant bit
first from the root. Present leaves hash as ``leaf_hash(value)``; every
empty subtree of height ``h`` has the precomputed hash ``default_root(h)``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

from .hashing import HASH_SIZE, Hash, hash_from_hex, leaf_hash, node_hash, sha256

DEPTH = 256


@lru_cache(maxsize=None)
def _default_table() -> tuple[Hash, ...]:
    table = [leaf_hash(b"")]
    for _ in range(DEPTH):
        table.append(node_hash(table[-1], table[-1]))
    return tuple(table)


def default_root(height: int) -> Hash:
    """Hash of an empty subtree ``height`` levels tall (0 is a single leaf)."""
    if not 0 <= height <= DEPTH:
        raise IndexError(f"height {height} outside 0..{DEPTH}")
    return _default_table()[height]


def key_position(key: bytes) -> int:
    return int.from_bytes(sha256(key), "big")


@dataclass(frozen=True)
class MapProof:
    key_hash: Hash
    present: bool
    value_leaf: Hash
    siblings: tuple[Hash, ...]  # root-adjacent first

    def to_json(self) -> dict:
        return {
            "key_hash": self.key_hash.hex(),
            "present": self.present,
            "value_leaf": self.value_leaf.hex(),
            "siblings": [s.hex() for s in self.siblings],
        }

    @classmethod
    def from_json(cls, obj: dict) -> MapProof:
        if not isinstance(obj, dict) or set(obj) != {"key_hash", "present", "value_leaf", "siblings"}:
            raise ValueError("malformed map proof")
        if not isinstance(obj["present"], bool) or not isinstance(obj["siblings"], list):
            raise ValueError("malformed map proof")
        return cls(
            key_hash=hash_from_hex(obj["key_hash"]),
            present=obj["present"],
            value_leaf=hash_from_hex(obj["value_leaf"]),
            siblings=tuple(hash_from_hex(s) for s in obj["siblings"]),
        )


@dataclass
class SparseMap:
    """Key/value map whose root commits to the full binding set.

    Only non-default interior nodes are stored, keyed by ``(depth, prefix)``
    where ``prefix`` is the top ``depth`` bits of the key position.
    """

    _values: dict[int, bytes] = field(default_factory=dict, repr=False)
    _nodes: dict[tuple[int, int], Hash] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self._values)

    @property
    def root(self) -> Hash:
        return self._node(0, 0)

    def _node(self, depth: int, prefix: int) -> Hash:
        return self._nodes.get((depth, prefix), _default_table()[DEPTH - depth])

    def _set_node(self, depth: int, prefix: int, value: Hash) -> None:
        if value == _default_table()[DEPTH - depth]:
            self._nodes.pop((depth, prefix), None)
        else:
            self._nodes[(depth, prefix)] = value

    def _update_path(self, pos: int, leaf: Hash) -> Hash:
        # Hot loop: inlined node hashing and default-pruning of _set_node.
        nodes = self._nodes
        defaults = _default_table()
        sha = hashlib.sha256
        current = leaf
        prefix = pos
        for depth in range(DEPTH, 0, -1):
            key = (depth, prefix)
            if current == defaults[DEPTH - depth]:
                nodes.pop(key, None)
            else:
                nodes[key] = current
            sibling = nodes.get((depth, prefix ^ 1)) or defaults[DEPTH - depth]
            if prefix & 1:
                current = sha(b"\x01" + sibling + current).digest()
            else:
                current = sha(b"\x01" + current + sibling).digest()
            prefix >>= 1
        self._set_node(0, 0, current)
        return current

    def put(self, key: bytes, value: bytes) -> Hash:
        """Bind ``key`` to ``value`` and return the new root.

        An empty value hashes to the default leaf, so storing it is the same
        as deleting the key.
        """
        if not value:
            return self.delete(key)
        pos = key_position(key)
        self._values[pos] = bytes(value)
        return self._update_path(pos, leaf_hash(value))

    def delete(self, key: bytes) -> Hash:
        pos = key_position(key)
        if pos not in self._values:
            return self.root
        del self._values[pos]
        return self._update_path(pos, default_root(0))

    def get(self, key: bytes) -> bytes | None:
        return self._values.get(key_position(key))

    def get_with_proof(self, key: bytes) -> tuple[bytes | None, MapProof]:
        pos = key_position(key)
        value = self._values.get(pos)
        siblings = [self._node(depth, (pos >> (DEPTH - depth)) ^ 1) for depth in range(1, DEPTH + 1)]
        proof = MapProof(
            key_hash=pos.to_bytes(HASH_SIZE, "big"),
            present=value is not None,
            value_leaf=leaf_hash(value) if value is not None else default_root(0),
            siblings=tuple(siblings),
        )
        return value, proof

    def dump(self) -> dict[bytes, bytes]:
        """Unverified listing of key-hash to value for every binding."""
        return {pos.to_bytes(HASH_SIZE, "big"): v for pos, v in sorted(self._values.items())}


def map_put(smap: SparseMap, key: bytes, value: bytes) -> Hash:
    return smap.put(key, value)


def map_delete(smap: SparseMap, key: bytes) -> Hash:
    return smap.delete(key)


def map_get_with_proof(smap: SparseMap, key: bytes) -> tuple[bytes | None, MapProof]:
    return smap.get_with_proof(key)


def verify_map_proof(root: Hash, key: bytes, claimed_value: bytes | None, proof: MapProof) -> bool:
    """Check a (non-)inclusion claim for ``key`` against ``root``.

    ``claimed_value=None`` claims absence.
    """
    try:
        key_hash = sha256(key)
        if proof.key_hash != key_hash or len(proof.siblings) != DEPTH:
            return False
        if any(not isinstance(s, bytes) or len(s) != HASH_SIZE for s in proof.siblings):
            return False
        if claimed_value is None:
            if proof.present or proof.value_leaf != default_root(0):
                return False
        elif not proof.present or proof.value_leaf != leaf_hash(claimed_value):
            return False
        pos = int.from_bytes(key_hash, "big")
        current = proof.value_leaf
        for depth in range(DEPTH, 0, -1):
            sibling = proof.siblings[depth - 1]
            if pos & 1:
                current = node_hash(sibling, current)
            else:
                current = node_hash(current, sibling)
            pos >>= 1
        return current == root
    except (AttributeError, TypeError, ValueError):
        return False
