"""Append-only Merkle log with inclusion and consistency proofs.

Tree shape and proof construction follow the certificate-transparency
layout: a tree over ``n > 1`` leaves splits at ``k``, the largest power of
two strictly below ``n``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .hashing import EMPTY_ROOT, HASH_SIZE, Hash, hash_from_hex, leaf_hash, node_hash


def largest_power_of_two_below(n: int) -> int:
    """Largest power of two strictly less than ``n`` (n >= 2)."""
    if n < 2:
        raise ValueError("n must be at least 2")
    return 1 << ((n - 1).bit_length() - 1)


@dataclass(frozen=True)
class InclusionProof:
    leaf_index: int
    tree_size: int
    path: tuple[Hash, ...] = ()

    def to_json(self) -> dict:
        return {
            "leaf_index": self.leaf_index,
            "tree_size": self.tree_size,
            "path": [h.hex() for h in self.path],
        }

    @classmethod
    def from_json(cls, obj: dict) -> InclusionProof:
        _expect_keys(obj, {"leaf_index", "tree_size", "path"})
        return cls(
            leaf_index=_expect_int(obj["leaf_index"]),
            tree_size=_expect_int(obj["tree_size"]),
            path=tuple(hash_from_hex(h) for h in _expect_list(obj["path"])),
        )


@dataclass(frozen=True)
class ConsistencyProof:
    old_size: int
    new_size: int
    nodes: tuple[Hash, ...] = ()

    def to_json(self) -> dict:
        return {
            "old_size": self.old_size,
            "new_size": self.new_size,
            "nodes": [h.hex() for h in self.nodes],
        }

    @classmethod
    def from_json(cls, obj: dict) -> ConsistencyProof:
        _expect_keys(obj, {"old_size", "new_size", "nodes"})
        return cls(
            old_size=_expect_int(obj["old_size"]),
            new_size=_expect_int(obj["new_size"]),
            nodes=tuple(hash_from_hex(h) for h in _expect_list(obj["nodes"])),
        )


def _expect_keys(obj, keys: set[str]) -> None:
    if not isinstance(obj, dict) or set(obj) != keys:
        raise ValueError(f"expected object with keys {sorted(keys)}")


def _expect_int(value) -> int:
    # bool is an int subclass; reject it along with floats.
    if type(value) is not int or value < 0:
        raise ValueError(f"expected non-negative integer, got {value!r}")
    return value


def _expect_list(value) -> list:
    if not isinstance(value, list):
        raise ValueError("expected list")
    return value


@dataclass
class VerifiableLog:
    """In-memory Merkle log, optionally mirrored to an append-only file.

    ``_levels[h][j]`` caches the root of the perfect subtree of height ``h``
    covering leaves ``j * 2**h`` to ``(j + 1) * 2**h``, so any root or proof
    costs O(log n) hashes.
    """

    path: Path | None = None
    fsync: bool = True
    _entries: list[bytes] = field(default_factory=list, repr=False)
    _levels: list[list[Hash]] = field(default_factory=lambda: [[]], repr=False)
    _offsets: list[int] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        if self.path is not None:
            self.path = Path(self.path)
            self._load()

    @classmethod
    def from_entries(cls, entries: Iterable[bytes]) -> VerifiableLog:
        log = cls()
        for entry in entries:
            log.append(entry)
        return log

    @property
    def size(self) -> int:
        return len(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def entry(self, index: int) -> bytes:
        if not 0 <= index < self.size:
            raise IndexError(f"entry index {index} out of range for size {self.size}")
        return self._entries[index]

    def entries(self) -> list[bytes]:
        return list(self._entries)

    @property
    def root(self) -> Hash:
        return self.root_at(self.size)

    def append(self, entry: bytes) -> tuple[int, Hash]:
        entry = bytes(entry)
        if self.path is not None:
            with open(self.path, "ab") as fh:
                self._offsets.append(fh.tell())
                fh.write(entry.hex().encode() + b"\n")
                fh.flush()
                if self.fsync:
                    os.fsync(fh.fileno())
        self._push(entry)
        return self.size, self.root

    def _push(self, entry: bytes) -> None:
        self._entries.append(entry)
        self._levels[0].append(leaf_hash(entry))
        height = 0
        while len(self._levels[height]) % 2 == 0:
            row = self._levels[height]
            if height + 1 == len(self._levels):
                self._levels.append([])
            self._levels[height + 1].append(node_hash(row[-2], row[-1]))
            height += 1

    def _rebuild(self, entries: Sequence[bytes]) -> None:
        self._entries = []
        self._levels = [[]]
        for entry in entries:
            self._push(entry)

    def truncate(self, size: int) -> None:
        """Drop every entry at index >= ``size``.

        Not part of the append-only contract: used to roll back an edit that
        was never published, and by the adversarial server.
        """
        if not 0 <= size <= self.size:
            raise IndexError(f"cannot truncate size {self.size} log to {size}")
        if self.path is not None:
            cut = self._offsets[size] if size < len(self._offsets) else None
            if cut is not None:
                with open(self.path, "r+b") as fh:
                    fh.truncate(cut)
            del self._offsets[size:]
        self._rebuild(self._entries[:size])

    def overwrite(self, index: int, entry: bytes) -> None:
        """Replace an entry in place and recompute the tree (adversarial use only)."""
        entries = list(self._entries)
        entries[index] = bytes(entry)
        if self.path is not None:
            self.path.write_bytes(b"".join(e.hex().encode() + b"\n" for e in entries))
            self._offsets = []
            pos = 0
            for e in entries:
                self._offsets.append(pos)
                pos += 2 * len(e) + 1
        self._rebuild(entries)

    def _load(self) -> None:
        assert self.path is not None
        if not self.path.exists():
            return
        data = self.path.read_bytes()
        pos = 0
        good = 0
        for line in data.splitlines(keepends=True):
            if not line.endswith(b"\n"):
                break  # torn final write
            try:
                entry = bytes.fromhex(line[:-1].decode("ascii"))
            except ValueError:
                break
            self._offsets.append(pos)
            self._push(entry)
            pos += len(line)
            good = pos
        if good != len(data):
            with open(self.path, "r+b") as fh:
                fh.truncate(good)

    # -- tree hashes -------------------------------------------------------

    def _subtree(self, lo: int, hi: int) -> Hash:
        n = hi - lo
        if n == 0:
            return EMPTY_ROOT
        if n & (n - 1) == 0 and lo % n == 0:
            return self._levels[n.bit_length() - 1][lo // n]
        k = largest_power_of_two_below(n)
        return node_hash(self._subtree(lo, lo + k), self._subtree(lo + k, hi))

    def root_at(self, size: int) -> Hash:
        if not 0 <= size <= self.size:
            raise IndexError(f"size {size} out of range for log of size {self.size}")
        return self._subtree(0, size)

    # -- proofs ------------------------------------------------------------

    def inclusion_proof(self, leaf_index: int, tree_size: int) -> InclusionProof:
        if not 0 <= leaf_index < tree_size <= self.size:
            raise IndexError(
                f"need 0 <= leaf_index ({leaf_index}) < tree_size ({tree_size}) <= {self.size}"
            )
        path: list[Hash] = []
        lo, hi, m = 0, tree_size, leaf_index
        # Walk down from the root; siblings are collected top-down and
        # reversed so the path runs leaf to root.
        while hi - lo > 1:
            k = largest_power_of_two_below(hi - lo)
            if m < k:
                path.append(self._subtree(lo + k, hi))
                hi = lo + k
            else:
                path.append(self._subtree(lo, lo + k))
                lo, m = lo + k, m - k
        return InclusionProof(leaf_index, tree_size, tuple(reversed(path)))

    def consistency_proof(self, old_size: int, new_size: int) -> ConsistencyProof:
        if not 0 <= old_size <= new_size <= self.size:
            raise IndexError(
                f"need 0 <= old_size ({old_size}) <= new_size ({new_size}) <= {self.size}"
            )
        if old_size == 0 or old_size == new_size:
            return ConsistencyProof(old_size, new_size, ())
        nodes: list[Hash] = []
        lo, hi, m, complete = 0, new_size, old_size, True
        while True:
            if m == hi - lo:
                if not complete:
                    nodes.append(self._subtree(lo, hi))
                break
            k = largest_power_of_two_below(hi - lo)
            if m <= k:
                nodes.append(self._subtree(lo + k, hi))
                hi = lo + k
            else:
                nodes.append(self._subtree(lo, lo + k))
                lo, m, complete = lo + k, m - k, False
        return ConsistencyProof(old_size, new_size, tuple(reversed(nodes)))


def _is_hash(value) -> bool:
    return isinstance(value, bytes) and len(value) == HASH_SIZE


def verify_inclusion(
    leaf: Hash, leaf_index: int, tree_size: int, proof: InclusionProof, root: Hash
) -> bool:
    """Fold ``proof.path`` upward from ``leaf`` and compare with ``root``."""
    try:
        if proof.leaf_index != leaf_index or proof.tree_size != tree_size:
            return False
        if not (_is_hash(leaf) and _is_hash(root) and all(map(_is_hash, proof.path))):
            return False
        if not 0 <= leaf_index < tree_size:
            return False
        index, last = leaf_index, tree_size - 1
        acc = leaf
        for sibling in proof.path:
            if last == 0:
                return False
            if index & 1 or index == last:
                acc = node_hash(sibling, acc)
                if not index & 1:
                    while index and not index & 1:
                        index >>= 1
                        last >>= 1
            else:
                acc = node_hash(acc, sibling)
            index >>= 1
            last >>= 1
        return last == 0 and acc == root
    except (AttributeError, TypeError):
        return False


def verify_consistency(
    old_size: int, old_root: Hash, new_size: int, new_root: Hash, proof: ConsistencyProof
) -> bool:
    """Check that the size-``new_size`` tree extends the size-``old_size`` tree.

    The proof nodes must rebuild ``old_root`` from the old tree's right edge
    and ``new_root`` from the same nodes plus the appended region.
    """
    try:
        if proof.old_size != old_size or proof.new_size != new_size:
            return False
        nodes = list(proof.nodes)
        if not (_is_hash(old_root) and _is_hash(new_root) and all(map(_is_hash, nodes))):
            return False
        if not 0 <= old_size <= new_size:
            return False
        if old_size == new_size:
            return not nodes and old_root == new_root
        if old_size == 0:
            return not nodes and old_root == EMPTY_ROOT
        if not nodes:
            return False
        if old_size & (old_size - 1) == 0:
            nodes.insert(0, old_root)
        index, last = old_size - 1, new_size - 1
        while index & 1:
            index >>= 1
            last >>= 1
        old_acc = new_acc = nodes[0]
        for node in nodes[1:]:
            if last == 0:
                return False
            if index & 1 or index == last:
                old_acc = node_hash(node, old_acc)
                new_acc = node_hash(node, new_acc)
                if not index & 1:
                    while index and not index & 1:
                        index >>= 1
                        last >>= 1
            else:
                new_acc = node_hash(new_acc, node)
            index >>= 1
            last >>= 1
        return last == 0 and old_acc == old_root and new_acc == new_root
    except (AttributeError, TypeError):
        return False
