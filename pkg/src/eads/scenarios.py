"""Scripted end-to-end runs: a server (honest or adversarial), a consumer
checking every response, and an external auditor reading the journal(s).

Every run is a pure function of ``(name, seed, ops)``: keys, entries,
adversary parameters and timestamps all derive from the seed.
"""

from __future__ import annotations

import random
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .auditor import audit_cross, privacy_attest, read_journal
from .client import verify_extension
from .hashing import KeyPair
from .history import AuditReport, Overall, verify_chain
from .server import Adversary, Server, StepClock
from .storage import Journal

SCENARIOS = ("honest", "rewrite", "fork", "truncate")
LEDGER = "demo"
TOKEN = "scenario-token"


@dataclass
class ScenarioResult:
    name: str
    seed: int
    ops: int
    expected: Overall
    expected_version: int | None
    observed: Overall
    observed_version: int | None
    reports: list[AuditReport]
    response_failures: int
    privacy_ok: bool
    payload_leaks: int
    journals: list[Path] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return (
            self.observed is self.expected
            and self.observed_version == self.expected_version
            and self.privacy_ok
            and self.payload_leaks == 0
        )

    def to_json(self) -> dict:
        return {
            "scenario": self.name,
            "seed": self.seed,
            "ops": self.ops,
            "expected": self.expected.value,
            "expected_version": self.expected_version,
            "observed": self.observed.value,
            "observed_version": self.observed_version,
            "response_failures": self.response_failures,
            "privacy_ok": self.privacy_ok,
            "payload_leaks": self.payload_leaks,
            "passed": self.passed,
            "journals": [str(p) for p in self.journals],
        }


def _leaks(raw: bytes, entries: list[bytes]) -> int:
    text = raw.lower()
    return sum(1 for e in entries if e in raw or e.hex().encode() in text)


def run_scenario(name: str, seed: int, ops: int = 200, workdir: str | Path | None = None) -> ScenarioResult:
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    if workdir is None:
        workdir = tempfile.mkdtemp(prefix=f"eads-{name}-{seed}-")
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    rng = random.Random(f"{name}:{seed}")
    keypair = KeyPair.from_seed(seed)
    journal = Journal(workdir / "journal.jsonl", fsync=False)
    server = Server(journal, keypair, clock=StepClock(), token=TOKEN, fsync=False, allow_admin=True)
    server.open_ledger(LEDGER)

    strike = rng.randint(ops // 4, 3 * ops // 4)  # edits made before the adversary acts
    expected, expected_version = Overall.CONSISTENT, None
    if name == "fork":
        expected, expected_version = Overall.FORKED, strike + 1
        server.set_adversary(Adversary("FORK_AFTER", version=strike + 1))
    elif name in ("rewrite", "truncate"):
        expected, expected_version = Overall.INCONSISTENT, strike + 1

    sessions = ["alice", "bob"]
    last_seen = {s: server.handle_checkpoint(LEDGER) for s in sessions}
    entries: list[bytes] = []
    response_failures = 0
    for step in range(ops):
        if step == strike and name == "rewrite":
            size = server.handle_checkpoint(LEDGER).tree_size
            server.set_adversary(Adversary("REWRITE_LEAF", index=rng.randrange(size), data=rng.randbytes(32)))
        elif step == strike and name == "truncate":
            size = server.handle_checkpoint(LEDGER).tree_size
            server.set_adversary(Adversary("TRUNCATE", size=rng.randrange(size)))
        session = sessions[step % 2]
        entry = rng.randbytes(rng.randint(16, 48))
        entries.append(entry)
        resp = server.handle_append(LEDGER, entry, session=session, token=TOKEN)
        previous, cp = last_seen[session], resp.checkpoint
        proof = resp.consistency
        if proof.old_size != previous.tree_size:
            # this session missed the other session's edits
            try:
                proof = server.handle_consistency(LEDGER, previous.tree_size, cp.tree_size, session=session)
            except IndexError:
                proof = None
        if proof is None or not verify_extension(previous, cp, proof, keypair.public):
            response_failures += 1
        last_seen[session] = resp.checkpoint

    paths = server.fork_journal_paths(LEDGER)
    views = [read_journal(p, LEDGER) for p in paths]
    reports = [verify_chain(v.records, keypair.public, ledger_id=LEDGER) for v in views]
    privacy_ok = all(privacy_attest(v.objects) and privacy_attest(v.records) for v in views)
    leaks = sum(_leaks(v.raw, entries) for v in views)

    observed, observed_version = Overall.CONSISTENT, None
    failing = next((r for r in reports if r.overall is not Overall.CONSISTENT), None)
    if failing is not None:
        observed = failing.overall
        first = failing.first_failure()
        observed_version = first.to_version if first else None
    else:
        for other in paths[1:]:
            evidence = audit_cross(paths[0], other, LEDGER, keypair.public)
            if evidence is not None:
                observed, observed_version = Overall.FORKED, evidence.version
                for r in reports:
                    r.fork_evidence = evidence
                break

    return ScenarioResult(
        name=name,
        seed=seed,
        ops=ops,
        expected=expected,
        expected_version=expected_version,
        observed=observed,
        observed_version=observed_version,
        reports=reports,
        response_failures=response_failures,
        privacy_ok=privacy_ok,
        payload_leaks=leaks,
        journals=paths,
    )
