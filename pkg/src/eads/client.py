"""HTTP client for the server plus the checks a consumer runs on responses."""

from __future__ import annotations

import json
import urllib.error
import urllib.request
from dataclasses import dataclass

from .hashing import leaf_hash
from .history import HistoryRecord, SignedCheckpoint
from .log_backed_map import EditOp
from .merkle_log import ConsistencyProof, verify_consistency, verify_inclusion
from .server import AppendResponse, QueryResponse
from .sparse_map import verify_map_proof


class ClientError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(f"HTTP {status}: {message}")
        self.status = status


def verify_append_response(previous: SignedCheckpoint | None, resp: AppendResponse, public_key: bytes) -> bool:
    """Two-party check: the new checkpoint is signed and extends ``previous``."""
    return verify_extension(previous, resp.checkpoint, resp.consistency, public_key)


def verify_extension(
    previous: SignedCheckpoint | None, cp: SignedCheckpoint, proof: ConsistencyProof, public_key: bytes
) -> bool:
    if not cp.verify(public_key):
        return False
    if previous is None:
        return True
    if cp.ledger_id != previous.ledger_id or cp.version < previous.version:
        return False
    if cp.tree_size == previous.tree_size and cp.map_root != previous.map_root:
        return False
    return verify_consistency(previous.tree_size, previous.root, cp.tree_size, cp.root, proof)


def verify_query_response(resp: QueryResponse, public_key: bytes, key: bytes | None = None, index: int | None = None) -> bool:
    cp = resp.checkpoint
    if not cp.verify(public_key):
        return False
    if resp.map_proof is not None:
        if cp.map_root is None or (key is not None and resp.key != key):
            return False
        return verify_map_proof(cp.map_root, resp.key, resp.value, resp.map_proof)
    if resp.inclusion is None or resp.entry is None:
        return False
    leaf_index = resp.inclusion.leaf_index if index is None else index
    return verify_inclusion(leaf_hash(resp.entry), leaf_index, cp.tree_size, resp.inclusion, cp.root)


@dataclass
class Client:
    base_url: str
    token: str | None = None
    session: str | None = None
    timeout: float = 10.0

    def _request(self, method: str, path: str, body: dict | None = None):
        data = json.dumps(body).encode() if body is not None else None
        req = urllib.request.Request(self.base_url.rstrip("/") + path, data=data, method=method)
        req.add_header("Content-Type", "application/json")
        if self.token:
            req.add_header("Authorization", f"Bearer {self.token}")
        if self.session:
            req.add_header("X-Session", self.session)
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read())
        except urllib.error.HTTPError as exc:
            try:
                message = json.loads(exc.read()).get("error", exc.reason)
            except ValueError:
                message = exc.reason
            raise ClientError(exc.code, message) from None

    def append(self, ledger_id: str, entry: bytes) -> AppendResponse:
        return AppendResponse.from_json(self._request("POST", f"/ledgers/{ledger_id}/entries", {"entry": entry.hex()}))

    def append_op(self, ledger_id: str, op: EditOp) -> AppendResponse:
        return AppendResponse.from_json(self._request("POST", f"/ledgers/{ledger_id}/entries", {"op": op.to_json()}))

    def query(self, ledger_id: str, index: int) -> QueryResponse:
        return QueryResponse.from_json(self._request("GET", f"/ledgers/{ledger_id}/entries/{index}"))

    def query_key(self, ledger_id: str, key: bytes) -> QueryResponse:
        return QueryResponse.from_json(self._request("GET", f"/ledgers/{ledger_id}/keys/{key.hex()}"))

    def consistency(self, ledger_id: str, old_size: int, new_size: int) -> ConsistencyProof:
        return ConsistencyProof.from_json(
            self._request("GET", f"/ledgers/{ledger_id}/consistency/{old_size}/{new_size}")
        )

    def checkpoint(self, ledger_id: str) -> SignedCheckpoint:
        return SignedCheckpoint.from_json(self._request("GET", f"/ledgers/{ledger_id}/checkpoint"))

    def journal(self, ledger_id: str) -> list[dict]:
        return self._request("GET", f"/journal/{ledger_id}")

    def journal_latest(self, ledger_id: str) -> HistoryRecord | None:
        try:
            return HistoryRecord.from_json(self._request("GET", f"/journal/{ledger_id}/latest"))
        except ClientError as exc:
            if exc.status == 404:
                return None
            raise

    def set_adversary(self, **mode) -> dict:
        return self._request("POST", "/admin/adversary", mode)
