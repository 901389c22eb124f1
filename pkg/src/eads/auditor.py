"""External auditor.

Works from trusted-storage records only. The single input capability is a
journal source (file path or journal URL); there is no server client here,
and no code path that decodes entry payloads.
"""

from __future__ import annotations

import json
import os
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

from .history import (
    AuditReport,
    DecodeFailure,
    ForkEvidence,
    HistoryRecord,
    SignedCheckpoint,
    detect_fork,
    verify_chain,
)
from .merkle_log import ConsistencyProof
from .storage import scan_journal_bytes


@dataclass
class JournalView:
    """Everything the auditor consumed from one journal source."""

    records: list[HistoryRecord | DecodeFailure]
    raw: bytes
    objects: list = field(default_factory=list)


def _is_url(source: str) -> bool:
    return source.startswith(("http://", "https://"))


def read_journal(source: str | os.PathLike, ledger_id: str, timeout: float = 10.0) -> JournalView:
    """Load one ledger's records from a journal file or a server's journal route.

    Raises OSError when the source cannot be read.
    """
    source = str(source)
    if _is_url(source):
        url = source.rstrip("/")
        if not url.endswith(f"/journal/{ledger_id}"):
            url += f"/journal/{ledger_id}"
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            raw = resp.read()
        try:
            objects = json.loads(raw)
            if not isinstance(objects, list):
                raise ValueError("journal response is not a list")
        except ValueError as exc:
            return JournalView([DecodeFailure(str(exc))], raw)
        records: list[HistoryRecord | DecodeFailure] = []
        for obj in objects:
            try:
                records.append(HistoryRecord.from_json(obj))
            except (ValueError, TypeError) as exc:
                records.append(DecodeFailure(str(exc)))
        return JournalView(records, raw, objects)
    raw = Path(source).read_bytes()
    objects = []
    for line in raw.splitlines():
        try:
            envelope = json.loads(line)
            record = envelope.get("record") if isinstance(envelope, dict) else None
            owner = record["checkpoint"]["ledger_id"]
        except (ValueError, KeyError, TypeError):
            continue
        if owner == ledger_id:
            objects.append(record)
    return JournalView(scan_journal_bytes(raw, ledger_id), raw, objects)


def audit(source: str | os.PathLike, ledger_id: str, public_key: bytes) -> AuditReport:
    view = read_journal(source, ledger_id)
    return verify_chain(view.records, public_key, ledger_id=ledger_id)


def audit_cross(
    source_a: str | os.PathLike, source_b: str | os.PathLike, ledger_id: str, public_key: bytes
) -> ForkEvidence | None:
    a = [r for r in read_journal(source_a, ledger_id).records if isinstance(r, HistoryRecord)]
    b = [r for r in read_journal(source_b, ledger_id).records if isinstance(r, HistoryRecord)]
    return detect_fork(a, b, public_key=public_key)


def _checkpoint_ok(cp) -> bool:
    # from_json enforces the closed schema: exact key set, lowercase hex of
    # fixed width, non-negative ints and a restricted ledger-id alphabet.
    try:
        SignedCheckpoint.from_json(cp)
    except (ValueError, TypeError):
        return False
    return True


def _proof_ok(proof) -> bool:
    if proof is None:
        return True
    try:
        ConsistencyProof.from_json(proof)
    except (ValueError, TypeError):
        return False
    return True


def privacy_attest(records) -> bool:
    """True iff every record stays inside the closed, data-free schema.

    Accepts decoded :class:`HistoryRecord` objects or their raw JSON form.
    Any extra field, free-form string or byte blob fails the attestation.
    """
    for record in records:
        if isinstance(record, DecodeFailure):
            return False
        obj = record.to_json() if isinstance(record, HistoryRecord) else record
        if not isinstance(obj, dict) or set(obj) != {"checkpoint", "prev_version", "consistency"}:
            return False
        if not _checkpoint_ok(obj["checkpoint"]) or not _proof_ok(obj["consistency"]):
            return False
        prev = obj["prev_version"]
        if prev is not None and (type(prev) is not int or prev < 0):
            return False
    return True


def format_report(report: AuditReport) -> str:
    lines = [
        f"ledger   {report.ledger_id}",
        f"records  {report.records_checked}",
        f"overall  {report.overall.value}",
    ]
    rows = ([report.anchor] if report.anchor else []) + report.link_results
    if rows:
        lines.append("")
        lines.append(f"{'#':>5}  {'from':>7}  {'to':>7}  verdict")
        for r in rows:
            frm = "-" if r.from_version is None else str(r.from_version)
            to = "?" if r.to_version is None else str(r.to_version)
            detail = f"  ({r.detail})" if r.detail else ""
            lines.append(f"{r.index:>5}  {frm:>7}  {to:>7}  {r.verdict.value}{detail}")
    if report.fork_evidence is not None:
        ev = report.fork_evidence
        lines.append("")
        lines.append(f"fork at version {ev.version}:")
        lines.append(f"  a: size={ev.record_a.checkpoint.tree_size} root={ev.record_a.checkpoint.root.hex()}")
        lines.append(f"  b: size={ev.record_b.checkpoint.tree_size} root={ev.record_b.checkpoint.root.hex()}")
    return "\n".join(lines)
