import json
import random

import pytest

from eads.hashing import EMPTY_ROOT, leaf_hash
from eads.log_backed_map import (
    CombinedDigest,
    EditOp,
    LogBackedMap,
    OpKind,
    apply_edit,
    load_edit_script,
    replay_from,
    replay_verify,
)
from eads.merkle_log import VerifiableLog, verify_consistency
from eads.sparse_map import SparseMap, default_root

import oracles


def random_script(rng, n, keys=8):
    pool = [b"key-%d" % i for i in range(keys)]
    ops = []
    for _ in range(n):
        k = rng.choice(pool)
        if rng.random() < 0.25:
            ops.append(EditOp.delete(k))
        else:
            ops.append(EditOp.put(k, rng.randbytes(rng.randint(16, 32))))
    return ops


class TestEditOp:
    def test_canonical_bytes(self):
        op = EditOp.put(b"k", b"v")
        assert op.canonical_bytes() == b'{"kind":"PUT","key":"6b","value":"76"}'
        assert EditOp.delete(b"k").canonical_bytes() == b'{"kind":"DELETE","key":"6b","value":""}'

    def test_round_trip(self):
        op = EditOp.put(b"\x00\xff", b"value")
        assert EditOp.from_canonical(op.canonical_bytes()) == op
        assert EditOp.from_json(json.loads(json.dumps(op.to_json()))) == op

    def test_non_canonical_rejected(self):
        with pytest.raises(ValueError):
            EditOp.from_canonical(b'{"key":"6b","kind":"PUT","value":"76"}')

    @pytest.mark.parametrize("obj", [{"kind": "UPSERT", "key": "00"}, {"key": "00"}, {"kind": "PUT", "key": "0G"}, [1]])
    def test_bad_ops(self, obj):
        with pytest.raises(ValueError):
            EditOp.from_json(obj)

    def test_delete_with_value_rejected(self):
        with pytest.raises(ValueError):
            EditOp(OpKind.DELETE, b"k", b"v")

    def test_edit_script(self):
        lines = ['{"kind":"PUT","key":"6b","value":"76"}', "", '{"kind":"DELETE","key":"6b"}']
        assert load_edit_script(lines) == [EditOp.put(b"k", b"v"), EditOp.delete(b"k")]
        with pytest.raises(ValueError, match="line 1"):
            load_edit_script(["not json"])


class TestApplyEdit:
    def test_first_put(self):
        lbm = LogBackedMap()
        op = EditOp.put(b"k", b"value-bytes")
        digest = apply_edit(lbm, op)
        assert digest.log_size == 1
        assert digest.log_root == oracles.leaf(op.canonical_bytes())
        assert digest.map_root == oracles.smt_root({b"k": b"value-bytes"})

    def test_delete_absent_still_logged(self):
        lbm = LogBackedMap()
        first = lbm.apply_edit(EditOp.put(b"a", b"1"))
        second = lbm.apply_edit(EditOp.delete(b"zzz"))
        assert second.log_size == 2
        assert second.log_root != first.log_root
        assert second.map_root == first.map_root

    def test_put_then_delete(self):
        lbm = LogBackedMap()
        lbm.apply_edit(EditOp.put(b"k", b"v"))
        digest = lbm.apply_edit(EditOp.delete(b"k"))
        assert digest.map_root == default_root(256)
        assert digest.log_size == 2

    def test_reload_from_persisted_log(self, tmp_path, rng):
        ops = random_script(rng, 20)
        lbm = LogBackedMap(log=VerifiableLog(path=tmp_path / "ops", fsync=False))
        for op in ops:
            lbm.apply_edit(op)
        again = LogBackedMap(log=VerifiableLog(path=tmp_path / "ops"))
        assert again.digest == lbm.digest
        assert again.ops() == ops


class TestReplay:
    def test_empty(self):
        assert replay_verify([], CombinedDigest(0, EMPTY_ROOT, default_root(256)))

    def test_reordering_breaks_log_root_only(self):
        a, b = EditOp.put(b"k1", b"v1"), EditOp.put(b"k2", b"v2")
        lbm = LogBackedMap()
        lbm.apply_edit(a)
        digest = lbm.apply_edit(b)
        assert replay_verify([a, b], digest)
        assert not replay_verify([b, a], digest)
        swapped = LogBackedMap()
        swapped.apply_edit(b)
        assert swapped.apply_edit(a).map_root == digest.map_root

    def test_length_mismatch(self):
        lbm = LogBackedMap()
        digest = lbm.apply_edit(EditOp.put(b"k", b"v"))
        assert not replay_verify([], digest)

    def test_fifty_random_ops(self, rng):
        ops = random_script(rng, 50)
        lbm = LogBackedMap()
        for op in ops:
            digest = lbm.apply_edit(op)
        assert replay_verify(ops, digest)
        tampered = list(ops)
        tampered[10] = EditOp.put(b"key-0", b"forged value bytes!")
        assert not replay_verify(tampered, digest)

    def test_two_routes_agree_at_every_prefix(self, rng):
        ops = random_script(rng, 64)
        lbm = LogBackedMap()
        digests = [lbm.digest]
        for op in ops:
            digests.append(lbm.apply_edit(op))
        for n in range(len(ops) + 1):
            assert replay_verify(ops[:n], digests[n])
            for other in (n - 1, n + 1):
                if 0 <= other <= len(ops) and digests[other] != digests[n]:
                    assert not replay_verify(ops[:n], digests[other])

    def test_log_consistency_certifies_map_history(self):
        rng = random.Random(77)
        ops = random_script(rng, 32, keys=5)
        lbm = LogBackedMap()
        digests = [lbm.digest]
        for op in ops:
            digests.append(lbm.apply_edit(op))
        for a in range(len(ops) + 1):
            state = SparseMap()
            assert replay_from(state, ops[:a]) == digests[a].map_root
            for b in range(a, len(ops) + 1):
                proof = lbm.log.consistency_proof(a, b)
                assert verify_consistency(a, digests[a].log_root, b, digests[b].log_root, proof)
                if b > a:
                    replay_from(state, ops[b - 1 : b])
                assert state.root == digests[b].map_root
