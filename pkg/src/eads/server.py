"""Untrusted server: runs edits and queries, publishes history to the journal.

The server can be switched into adversarial modes for testing; in every
mode it keeps publishing, so misbehaviour has to be caught by the checks
consumers and auditors run, not by the server itself.
"""

from __future__ import annotations

import json
import logging
import re
import shutil
import threading
import time
from dataclasses import dataclass, field, replace
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable
from urllib.parse import unquote

from .hashing import EMPTY_ROOT, Hash, KeyPair, from_hex
from .history import HistoryRecord, SignedCheckpoint, make_checkpoint
from .log_backed_map import EditOp, LogBackedMap, apply_to_map
from .merkle_log import ConsistencyProof, InclusionProof, VerifiableLog
from .sparse_map import MapProof, SparseMap, default_root
from .storage import Journal, JournalConflict

log = logging.getLogger(__name__)

Clock = Callable[[], int]


def system_clock() -> int:
    return time.time_ns() // 1_000_000


class StepClock:
    """Deterministic clock: ``start``, ``start + step``, ..."""

    def __init__(self, start: int = 1_700_000_000_000, step: int = 1000):
        self._next = start
        self._step = step
        self._lock = threading.Lock()

    def __call__(self) -> int:
        with self._lock:
            now = self._next
            self._next += self._step
            return now


class AuthError(Exception):
    pass


class UnknownLedger(KeyError):
    pass


@dataclass(frozen=True)
class Adversary:
    kind: str = "NONE"
    index: int = 0
    data: bytes = b""
    version: int = 0
    size: int = 0

    KINDS = ("NONE", "REWRITE_LEAF", "FORK_AFTER", "TRUNCATE")

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown adversary mode {self.kind!r}")

    @classmethod
    def from_json(cls, obj: dict) -> Adversary:
        kind = obj.get("mode", "NONE")
        return cls(
            kind=kind,
            index=int(obj.get("index", 0)),
            data=from_hex(obj.get("data", "")),
            version=int(obj.get("version", 0)),
            size=int(obj.get("size", 0)),
        )


HONEST = Adversary()


@dataclass(frozen=True)
class AppendResponse:
    checkpoint: SignedCheckpoint
    consistency: ConsistencyProof
    published: bool = True

    def to_json(self) -> dict:
        return {
            "checkpoint": self.checkpoint.to_json(),
            "consistency": self.consistency.to_json(),
            "published": self.published,
        }

    @classmethod
    def from_json(cls, obj: dict) -> AppendResponse:
        return cls(
            SignedCheckpoint.from_json(obj["checkpoint"]),
            ConsistencyProof.from_json(obj["consistency"]),
            bool(obj.get("published", True)),
        )


@dataclass(frozen=True)
class QueryResponse:
    checkpoint: SignedCheckpoint
    entry: bytes | None = None
    inclusion: InclusionProof | None = None
    key: bytes | None = None
    value: bytes | None = None
    map_proof: MapProof | None = None

    def to_json(self) -> dict:
        out: dict = {"checkpoint": self.checkpoint.to_json()}
        if self.map_proof is not None:
            out["key"] = self.key.hex()
            out["value"] = self.value.hex() if self.value is not None else None
            out["map_proof"] = self.map_proof.to_json()
        else:
            out["entry"] = self.entry.hex()
            out["inclusion"] = self.inclusion.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> QueryResponse:
        cp = SignedCheckpoint.from_json(obj["checkpoint"])
        if "map_proof" in obj:
            value = obj["value"]
            return cls(
                cp,
                key=from_hex(obj["key"]),
                value=None if value is None else from_hex(value),
                map_proof=MapProof.from_json(obj["map_proof"]),
            )
        return cls(cp, entry=from_hex(obj["entry"]), inclusion=InclusionProof.from_json(obj["inclusion"]))


@dataclass
class Branch:
    """One view of a ledger: data, journal and the last published checkpoint."""

    log: VerifiableLog
    journal: Journal
    lbm: LogBackedMap | None = None
    published_map: SparseMap | None = None
    last_checkpoint: SignedCheckpoint | None = None
    version: int = 0

    @property
    def size(self) -> int:
        return self.log.size

    def map_root(self) -> Hash | None:
        return self.lbm.map.root if self.lbm is not None else None

    def rebuild_map(self) -> None:
        if self.lbm is None:
            return
        self.lbm.map = SparseMap()
        for raw in self.log.entries():
            apply_to_map(self.lbm.map, EditOp.from_canonical(raw))


@dataclass
class Ledger:
    ledger_id: str
    mode: str
    branches: list[Branch]
    lock: threading.RLock = field(default_factory=threading.RLock)
    sessions: dict[str, int] = field(default_factory=dict)
    forked: bool = False


class Server:
    def __init__(
        self,
        journal: Journal,
        keypair: KeyPair,
        *,
        data_dir: str | Path | None = None,
        mode: str = "log",
        checkpoint_every: int = 1,
        clock: Clock = system_clock,
        token: str | None = None,
        fsync: bool = True,
        signer: Callable[[SignedCheckpoint], SignedCheckpoint] | None = None,
        allow_admin: bool = False,
    ):
        if mode not in ("log", "map"):
            raise ValueError(f"mode must be 'log' or 'map', not {mode!r}")
        if checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")
        self.journal = journal
        self.keypair = keypair
        self.data_dir = Path(data_dir) if data_dir is not None else None
        self.mode = mode
        self.checkpoint_every = checkpoint_every
        self.clock = clock
        self.token = token
        self.fsync = fsync
        self.signer = signer or self._sign_locally
        self.allow_admin = allow_admin
        self.adversary = HONEST
        # Test hook: called with a stage name at fault-injection points.
        self.fault_hook: Callable[[str], None] | None = None
        self._ledgers: dict[str, Ledger] = {}
        self._lock = threading.Lock()
        if self.data_dir is not None:
            self.data_dir.mkdir(parents=True, exist_ok=True)

    # -- ledger lifecycle ------------------------------------------------

    def _sign_locally(self, unsigned: SignedCheckpoint) -> SignedCheckpoint:
        return make_checkpoint(
            unsigned.ledger_id,
            unsigned.version,
            unsigned.tree_size,
            unsigned.root,
            unsigned.map_root,
            unsigned.timestamp,
            self.keypair.secret,
        )

    def _entries_path(self, ledger_id: str, suffix: str = "") -> Path | None:
        if self.data_dir is None:
            return None
        return self.data_dir / f"{ledger_id}{suffix}.entries"

    def ledger_ids(self) -> list[str]:
        return sorted(self._ledgers)

    def open_ledger(self, ledger_id: str, create: bool = True) -> Ledger:
        with self._lock:
            ledger = self._ledgers.get(ledger_id)
            if ledger is not None:
                return ledger
            path = self._entries_path(ledger_id)
            known = self.journal.latest(ledger_id) is not None or (path is not None and path.exists())
            if not known and not create:
                raise UnknownLedger(ledger_id)
            ledger = self._load_ledger(ledger_id, path)
            self._ledgers[ledger_id] = ledger
            return ledger

    def _load_ledger(self, ledger_id: str, path: Path | None) -> Ledger:
        vlog = VerifiableLog(path=path, fsync=self.fsync)
        branch = Branch(log=vlog, journal=self.journal)
        if self.mode == "map":
            branch.lbm = LogBackedMap(log=vlog)
        latest = self.journal.latest(ledger_id)
        if latest is None:
            if vlog.size:
                raise RuntimeError(f"ledger {ledger_id}: entries on disk but nothing published")
            genesis = self._checkpoint(ledger_id, 0, 0, EMPTY_ROOT, self._genesis_map_root())
            self.journal.append(HistoryRecord(genesis))
            branch.last_checkpoint = genesis
        else:
            cp = latest.checkpoint
            if vlog.size < cp.tree_size or vlog.root_at(cp.tree_size) != cp.root:
                raise RuntimeError(f"ledger {ledger_id}: stored entries do not match published checkpoint")
            branch.last_checkpoint = cp
            branch.version = cp.version
            if vlog.size > cp.tree_size:
                # Persisted but never published: publish now rather than drop.
                branch.version += vlog.size - cp.tree_size
                self._publish(ledger_id, branch)
        if self.mode == "map" and self.checkpoint_every > 1:
            branch.published_map = SparseMap()
            for raw in vlog.entries()[: branch.last_checkpoint.tree_size]:
                apply_to_map(branch.published_map, EditOp.from_canonical(raw))
        return Ledger(ledger_id, self.mode, [branch])

    def _genesis_map_root(self) -> Hash | None:
        return default_root(256) if self.mode == "map" else None

    def _checkpoint(self, ledger_id, version, tree_size, root, map_root) -> SignedCheckpoint:
        unsigned = SignedCheckpoint(ledger_id, version, tree_size, root, map_root, self.clock())
        return self.signer(unsigned)

    # -- auth and routing --------------------------------------------------

    def authorize(self, token: str | None) -> None:
        if self.token is not None and token != self.token:
            raise AuthError("missing or invalid bearer token")

    def _branch(self, ledger: Ledger, session: str | None) -> Branch:
        if not ledger.forked or session is None:
            return ledger.branches[0]
        if session not in ledger.sessions:
            ledger.sessions[session] = len(ledger.sessions) % len(ledger.branches)
        return ledger.branches[ledger.sessions[session]]

    def _fork(self, ledger: Ledger) -> None:
        main = ledger.branches[0]
        fork_path = main.journal.path.with_name(main.journal.path.stem + f".{ledger.ledger_id}.fork.jsonl")
        shutil.copyfile(main.journal.path, fork_path)
        entries_path = self._entries_path(ledger.ledger_id, ".fork")
        if entries_path is not None:
            entries_path.unlink(missing_ok=True)
        vlog = VerifiableLog(path=entries_path, fsync=self.fsync)
        for entry in main.log.entries():
            vlog.append(entry)
        twin = Branch(
            log=vlog,
            journal=Journal(fork_path, fsync=self.fsync),
            last_checkpoint=main.last_checkpoint,
            version=main.version,
        )
        if main.lbm is not None:
            twin.lbm = LogBackedMap(log=vlog)
        if main.published_map is not None:
            twin.published_map = SparseMap()
            for raw in vlog.entries()[: twin.last_checkpoint.tree_size]:
                apply_to_map(twin.published_map, EditOp.from_canonical(raw))
        ledger.branches.append(twin)
        ledger.forked = True
        ledger.sessions.clear()
        log.info("ledger %s forked at version %d -> %s", ledger.ledger_id, main.version + 1, fork_path)

    def fork_journal_paths(self, ledger_id: str) -> list[Path]:
        return [b.journal.path for b in self.open_ledger(ledger_id, create=False).branches]

    # -- operations --------------------------------------------------------

    def handle_append(
        self,
        ledger_id: str,
        item: bytes | EditOp,
        *,
        session: str | None = None,
        token: str | None = None,
    ) -> AppendResponse:
        self.authorize(token)
        if self.mode == "map" and not isinstance(item, EditOp):
            raise TypeError("map-mode ledgers take EditOp edits")
        if self.mode == "log" and isinstance(item, EditOp):
            raise TypeError("log-mode ledgers take raw entries")
        ledger = self.open_ledger(ledger_id)
        with ledger.lock:
            adv = self.adversary
            if adv.kind == "FORK_AFTER" and not ledger.forked and ledger.branches[0].version + 1 >= adv.version:
                self._fork(ledger)
            branch = self._branch(ledger, session)
            previous = branch.last_checkpoint
            size_before = branch.size
            undo = self._apply(branch, item)
            branch.version += 1
            if branch.version - previous.version < self.checkpoint_every:
                return AppendResponse(previous, ConsistencyProof(previous.tree_size, previous.tree_size), False)
            try:
                record = self._publish(ledger_id, branch)
            except Exception:
                undo()
                branch.version -= 1
                assert branch.size == size_before
                raise
            if self.fault_hook is not None:
                self.fault_hook("after_publish")
            return AppendResponse(record.checkpoint, record.consistency)

    def _apply(self, branch: Branch, item: bytes | EditOp) -> Callable[[], None]:
        size = branch.size
        if branch.lbm is None:
            branch.log.append(item)
            return lambda: branch.log.truncate(size)
        old_value = branch.lbm.map.get(item.key)
        branch.lbm.apply_edit(item)

        def undo() -> None:
            branch.log.truncate(size)
            if old_value is None:
                branch.lbm.map.delete(item.key)
            else:
                branch.lbm.map.put(item.key, old_value)

        return undo

    def _publish(self, ledger_id: str, branch: Branch) -> HistoryRecord:
        previous = branch.last_checkpoint
        old_size, new_size = previous.tree_size, branch.size
        if old_size <= new_size:
            proof = branch.log.consistency_proof(old_size, new_size)
        else:
            # Truncated below the published size: nothing honest to offer.
            proof = ConsistencyProof(old_size, new_size, ())
        cp = self._checkpoint(ledger_id, branch.version, new_size, branch.log.root, branch.map_root())
        record = HistoryRecord(cp, prev_version=previous.version, consistency=proof)
        branch.journal.append(record)
        branch.last_checkpoint = cp
        if branch.published_map is not None:
            if new_size >= old_size:
                for raw in branch.log.entries()[old_size:new_size]:
                    apply_to_map(branch.published_map, EditOp.from_canonical(raw))
            else:
                branch.published_map = SparseMap()
                for raw in branch.log.entries():
                    apply_to_map(branch.published_map, EditOp.from_canonical(raw))
        return record

    def handle_query(self, ledger_id: str, index_or_key: int | bytes, *, session: str | None = None) -> QueryResponse:
        ledger = self.open_ledger(ledger_id, create=False)
        with ledger.lock:
            branch = self._branch(ledger, session)
            cp = branch.last_checkpoint
            if ledger.mode == "map":
                if not isinstance(index_or_key, bytes):
                    raise TypeError("map-mode queries take a key")
                smap = branch.published_map if branch.published_map is not None else branch.lbm.map
                value, proof = smap.get_with_proof(index_or_key)
                return QueryResponse(cp, key=index_or_key, value=value, map_proof=proof)
            index = index_or_key
            if not isinstance(index, int) or not 0 <= index < cp.tree_size:
                raise IndexError(f"index {index!r} out of range for published size {cp.tree_size}")
            tree_size = min(cp.tree_size, branch.size)
            if index >= tree_size:
                raise IndexError(f"index {index} no longer stored")
            return QueryResponse(
                cp, entry=branch.log.entry(index), inclusion=branch.log.inclusion_proof(index, tree_size)
            )

    def handle_consistency(
        self, ledger_id: str, old_size: int, new_size: int, *, session: str | None = None
    ) -> ConsistencyProof:
        """Proof linking two published sizes, for consumers that missed checkpoints."""
        ledger = self.open_ledger(ledger_id, create=False)
        with ledger.lock:
            branch = self._branch(ledger, session)
            if new_size > branch.last_checkpoint.tree_size:
                raise IndexError(f"size {new_size} not published")
            return branch.log.consistency_proof(old_size, new_size)

    def handle_checkpoint(self, ledger_id: str, *, session: str | None = None) -> SignedCheckpoint:
        ledger = self.open_ledger(ledger_id, create=False)
        with ledger.lock:
            return self._branch(ledger, session).last_checkpoint

    def journal_for(self, ledger_id: str, session: str | None = None) -> Journal:
        ledger = self._ledgers.get(ledger_id)
        if ledger is None:
            return self.journal
        with ledger.lock:
            return self._branch(ledger, session).journal

    def set_adversary(self, mode: Adversary) -> dict:
        """Switch behaviour for subsequent operations.

        REWRITE_LEAF and TRUNCATE take effect immediately on every open
        ledger; FORK_AFTER splits each ledger when its next edit would reach
        ``mode.version``.
        """
        self.adversary = mode
        for ledger in list(self._ledgers.values()):
            with ledger.lock:
                for branch in ledger.branches:
                    if mode.kind == "REWRITE_LEAF":
                        if not 0 <= mode.index < branch.size:
                            raise IndexError(f"no entry {mode.index} to rewrite")
                        branch.log.overwrite(mode.index, mode.data)
                        branch.rebuild_map()
                    elif mode.kind == "TRUNCATE":
                        if mode.size < branch.size:
                            branch.log.truncate(mode.size)
                            branch.rebuild_map()
        return {"mode": mode.kind, "ok": True}


# -- HTTP transport ---------------------------------------------------------

_ROUTES = [
    ("POST", re.compile(r"^/ledgers/([^/]+)/entries$"), "append"),
    ("GET", re.compile(r"^/ledgers/([^/]+)/entries/(\d+)$"), "query_index"),
    ("GET", re.compile(r"^/ledgers/([^/]+)/keys/([0-9a-f]*)$"), "query_key"),
    ("GET", re.compile(r"^/ledgers/([^/]+)/checkpoint$"), "checkpoint"),
    ("GET", re.compile(r"^/ledgers/([^/]+)/consistency/(\d+)/(\d+)$"), "consistency"),
    ("GET", re.compile(r"^/journal/([^/]+)$"), "journal"),
    ("GET", re.compile(r"^/journal/([^/]+)/latest$"), "journal_latest"),
    ("POST", re.compile(r"^/admin/adversary$"), "adversary"),
]


class _HTTPError(Exception):
    def __init__(self, status: HTTPStatus, message: str):
        super().__init__(message)
        self.status = status


def make_handler(server: Server) -> type[BaseHTTPRequestHandler]:
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # route through logging
            log.debug("%s - %s", self.address_string(), fmt % args)

        def _send(self, status: HTTPStatus, body) -> None:
            data = json.dumps(body, separators=(",", ":")).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def _body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            try:
                body = json.loads(self.rfile.read(length) or b"{}")
            except ValueError as exc:
                raise _HTTPError(HTTPStatus.BAD_REQUEST, f"invalid JSON body: {exc}")
            if not isinstance(body, dict):
                raise _HTTPError(HTTPStatus.BAD_REQUEST, "body must be a JSON object")
            return body

        def _token(self) -> str | None:
            auth = self.headers.get("Authorization", "")
            return auth[7:] if auth.startswith("Bearer ") else None

        def _dispatch(self, method: str) -> None:
            path = self.path.split("?", 1)[0]
            for route_method, pattern, name in _ROUTES:
                match = pattern.match(path)
                if match and route_method == method:
                    args = [unquote(a) for a in match.groups()]
                    try:
                        status, body = getattr(self, "_do_" + name)(*args)
                    except _HTTPError as exc:
                        status, body = exc.status, {"error": str(exc)}
                    except AuthError as exc:
                        status, body = HTTPStatus.UNAUTHORIZED, {"error": str(exc)}
                    except JournalConflict as exc:
                        status, body = HTTPStatus.CONFLICT, {"error": str(exc)}
                    except (UnknownLedger, IndexError) as exc:
                        status, body = HTTPStatus.NOT_FOUND, {"error": str(exc)}
                    except (ValueError, TypeError) as exc:
                        status, body = HTTPStatus.BAD_REQUEST, {"error": str(exc)}
                    self._send(status, body)
                    return
            self._send(HTTPStatus.NOT_FOUND, {"error": f"no route for {method} {path}"})

        def do_GET(self):
            self._dispatch("GET")

        def do_POST(self):
            self._dispatch("POST")

        @property
        def session(self) -> str | None:
            return self.headers.get("X-Session")

        def _do_append(self, ledger_id):
            server.authorize(self._token())
            body = self._body()
            if "op" in body:
                item = EditOp.from_json(body["op"])
            elif "entry" in body:
                item = from_hex(body["entry"])
            else:
                raise _HTTPError(HTTPStatus.BAD_REQUEST, "body needs 'entry' or 'op'")
            resp = server.handle_append(ledger_id, item, session=self.session, token=self._token())
            return HTTPStatus.OK, resp.to_json()

        def _do_query_index(self, ledger_id, index):
            return HTTPStatus.OK, server.handle_query(ledger_id, int(index), session=self.session).to_json()

        def _do_query_key(self, ledger_id, key_hex):
            key = from_hex(key_hex)
            return HTTPStatus.OK, server.handle_query(ledger_id, key, session=self.session).to_json()

        def _do_checkpoint(self, ledger_id):
            return HTTPStatus.OK, server.handle_checkpoint(ledger_id, session=self.session).to_json()

        def _do_consistency(self, ledger_id, old_size, new_size):
            proof = server.handle_consistency(ledger_id, int(old_size), int(new_size), session=self.session)
            return HTTPStatus.OK, proof.to_json()

        def _do_journal(self, ledger_id):
            journal = server.journal_for(ledger_id, self.session)
            return HTTPStatus.OK, [r.to_json() for r in journal.read(ledger_id)]

        def _do_journal_latest(self, ledger_id):
            record = server.journal_for(ledger_id, self.session).latest(ledger_id)
            if record is None:
                raise UnknownLedger(ledger_id)
            return HTTPStatus.OK, record.to_json()

        def _do_adversary(self):
            if not server.allow_admin:
                raise _HTTPError(HTTPStatus.NOT_FOUND, "admin routes disabled")
            server.authorize(self._token())
            return HTTPStatus.OK, server.set_adversary(Adversary.from_json(self._body()))

    return Handler


def make_http_server(server: Server, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    httpd = ThreadingHTTPServer((host, port), make_handler(server))
    httpd.daemon_threads = True
    return httpd
