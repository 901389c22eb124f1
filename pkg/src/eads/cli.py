"""Command-line entry point: ``eads serve|append|query|checkpoint|audit|scenario|keygen``."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import auditor
from .client import Client, ClientError, verify_append_response, verify_query_response
from .config import Config, ConfigError, load_config
from .hashing import KeyPair, from_hex
from .history import Overall, SignedCheckpoint
from .log_backed_map import load_edit_script

EXIT_OK, EXIT_ERROR, EXIT_INCONSISTENT, EXIT_FORKED = 0, 1, 2, 3
_EXIT_FOR = {Overall.CONSISTENT: EXIT_OK, Overall.INCONSISTENT: EXIT_INCONSISTENT, Overall.FORKED: EXIT_FORKED}


def _fail(message: str, code: int = EXIT_ERROR):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _read_key(path: str | Path, size: int = 32) -> bytes:
    try:
        return from_hex(Path(path).read_text().strip(), size)
    except OSError as exc:
        _fail(f"cannot read key file {path}: {exc}")
    except ValueError as exc:
        _fail(f"bad key file {path}: {exc}")


def _emit(ctx: click.Context, obj: dict, text: str) -> None:
    click.echo(json.dumps(obj, indent=2) if ctx.obj["json"] else text)


def _cp_line(cp: SignedCheckpoint) -> str:
    return f"version={cp.version} size={cp.tree_size} root={cp.root.hex()}" + (
        f" map_root={cp.map_root.hex()}" if cp.map_root is not None else ""
    )


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="TOML config file.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def main(ctx: click.Context, config_path, as_json, verbose):
    """Externally auditable data structures."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        _fail(str(exc))
    ctx.obj = {"config": cfg, "json": as_json}


def _cfg(ctx) -> Config:
    return ctx.obj["config"]


@main.command()
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Writes OUT (secret) and OUT.pub.")
def keygen(out):
    """Generate an Ed25519 signing key."""
    pair = KeyPair.generate()
    Path(out).write_text(pair.secret.hex() + "\n")
    Path(out + ".pub").write_text(pair.public.hex() + "\n")
    click.echo(pair.public.hex())


@main.command()
@click.pass_context
def serve(ctx):
    """Run the server until interrupted."""
    from .server import Server, make_http_server
    from .storage import Journal, JournalError

    cfg = _cfg(ctx)
    key_path = cfg.key_path
    if key_path.exists():
        pair = KeyPair.from_secret(_read_key(key_path))
    else:
        key_path.parent.mkdir(parents=True, exist_ok=True)
        pair = KeyPair.generate()
        key_path.write_text(pair.secret.hex() + "\n")
        Path(str(key_path) + ".pub").write_text(pair.public.hex() + "\n")
    try:
        journal = Journal(cfg.journal_path)
        server = Server(
            journal,
            pair,
            data_dir=cfg.data_dir,
            mode=cfg.mode,
            checkpoint_every=cfg.checkpoint_every_n_edits,
            token=cfg.token or None,
            allow_admin=cfg.allow_admin,
        )
        server.open_ledger(cfg.ledger)
        httpd = make_http_server(server, cfg.host, cfg.port)
    except (JournalError, RuntimeError, OSError, ValueError) as exc:
        _fail(str(exc))
    host, port = httpd.server_address[:2]
    click.echo(f"serving ledger {cfg.ledger} ({cfg.mode}) on http://{host}:{port} pubkey={pair.public.hex()}", err=True)
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()


def _client_options(f):
    f = click.option("--url", default=None, help="Server base URL.")(f)
    f = click.option("--ledger", default=None)(f)
    f = click.option("--pubkey", type=click.Path(dir_okay=False), default=None, help="Hex file with the source public key.")(f)
    return f


def _pubkey(cfg: Config, pubkey: str | None) -> bytes:
    return _read_key(pubkey or str(cfg.key_path) + ".pub")


def _state_path(cfg: Config, state: str | None) -> Path:
    return Path(state) if state else Path(cfg.data_dir) / "client-state.json"


def _load_state(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except (OSError, ValueError):
        return {}


@main.command()
@_client_options
@click.option("--token", default=None)
@click.option("--hex", "as_hex", is_flag=True, help="ENTRY is hex-encoded bytes.")
@click.option("--op-file", type=click.File("r"), default=None, help="JSON Lines edit script (map ledgers).")
@click.option("--state", default=None, help="Where the last verified checkpoint is cached.")
@click.argument("entry", required=False)
@click.pass_context
def append(ctx, url, ledger, pubkey, token, as_hex, op_file, state, entry):
    """Append an entry (or a batch of edit ops) and verify each response."""
    cfg = _cfg(ctx)
    ledger = ledger or cfg.ledger
    client = Client(url or cfg.server_url, token=token or cfg.token or None)
    public = _pubkey(cfg, pubkey)
    state_path = _state_path(cfg, state)
    cache = _load_state(state_path)
    cache_key = f"{client.base_url}#{ledger}"
    if (entry is None) == (op_file is None):
        _fail("give exactly one of ENTRY or --op-file")
    try:
        previous = SignedCheckpoint.from_json(cache[cache_key]) if cache_key in cache else client.checkpoint(ledger)
        if not previous.verify(public):
            _fail("cached/initial checkpoint has a bad signature", EXIT_INCONSISTENT)
        if op_file is not None:
            items = [("op", op) for op in load_edit_script(op_file)]
        else:
            items = [("entry", from_hex(entry) if as_hex else entry.encode())]
        results = []
        for kind, item in items:
            resp = client.append_op(ledger, item) if kind == "op" else client.append(ledger, item)
            ok = verify_append_response(previous, resp, public)
            results.append({"verified": ok, "checkpoint": resp.checkpoint.to_json()})
            if not ok:
                _emit(ctx, {"results": results}, "\n".join(
                    [f"VERIFIED {_cp_line(SignedCheckpoint.from_json(r['checkpoint']))}" for r in results[:-1]]
                    + [f"FAILED   {_cp_line(resp.checkpoint)} does not extend {_cp_line(previous)}"]
                ))
                sys.exit(EXIT_INCONSISTENT)
            previous = resp.checkpoint
            if not ctx.obj["json"]:
                click.echo(f"VERIFIED {_cp_line(previous)}")
    except ClientError as exc:
        _fail(str(exc))
    except (OSError, ValueError) as exc:
        _fail(str(exc))
    cache[cache_key] = previous.to_json()
    state_path.parent.mkdir(parents=True, exist_ok=True)
    state_path.write_text(json.dumps(cache, indent=2))
    if ctx.obj["json"]:
        click.echo(json.dumps({"results": results}, indent=2))


@main.command()
@_client_options
@click.option("--key", default=None, help="Map key (UTF-8) instead of an index.")
@click.option("--hex", "as_hex", is_flag=True, help="--key is hex-encoded.")
@click.option("--journal", "journal_source", default=None, help="Trusted storage to cross-check against (path or URL).")
@click.option("--session", default=None, hidden=True)
@click.argument("index", type=int, required=False)
@click.pass_context
def query(ctx, url, ledger, pubkey, key, as_hex, journal_source, session, index):
    """Fetch an entry or map value with its proof, verify it, and cross-check
    the checkpoint against trusted storage."""
    cfg = _cfg(ctx)
    ledger = ledger or cfg.ledger
    client = Client(url or cfg.server_url, session=session)
    public = _pubkey(cfg, pubkey)
    if (index is None) == (key is None):
        _fail("give exactly one of INDEX or --key")
    try:
        if key is not None:
            key_bytes = from_hex(key) if as_hex else key.encode()
            resp = client.query_key(ledger, key_bytes)
            ok = verify_query_response(resp, public, key=key_bytes)
        else:
            resp = client.query(ledger, index)
            ok = verify_query_response(resp, public, index=index)
        if journal_source is not None and not journal_source.startswith(("http://", "https://")):
            records = [r for r in auditor.read_journal(journal_source, ledger).records if hasattr(r, "checkpoint")]
            latest = records[-1] if records else None
        else:
            latest = Client(journal_source or client.base_url, session=session).journal_latest(ledger)
    except ClientError as exc:
        _fail(str(exc))
    except (OSError, ValueError) as exc:
        _fail(str(exc))
    cp = resp.checkpoint
    published = latest.checkpoint if latest is not None else None
    agrees = published is not None and published == cp
    out = resp.to_json() | {"verified": ok, "journal_checkpoint": published.to_json() if published else None, "journal_agrees": agrees}
    if resp.map_proof is not None:
        shown = "absent" if resp.value is None else resp.value.decode("utf-8", "replace")
    else:
        shown = resp.entry.decode("utf-8", "replace")
    lines = [f"value      {shown}", f"proof      {'VERIFIED' if ok else 'FAILED'}", f"server     {_cp_line(cp)}"]
    if not agrees:
        lines.append("journal    " + (_cp_line(published) if published else "(none)"))
        lines.append("MISMATCH: server checkpoint differs from trusted storage")
    _emit(ctx, out, "\n".join(lines))
    sys.exit(EXIT_OK if ok and agrees else EXIT_INCONSISTENT)


@main.command()
@_client_options
@click.pass_context
def checkpoint(ctx, url, ledger, pubkey):
    """Print the server's latest checkpoint."""
    cfg = _cfg(ctx)
    ledger = ledger or cfg.ledger
    try:
        cp = Client(url or cfg.server_url).checkpoint(ledger)
    except (ClientError, OSError) as exc:
        _fail(str(exc))
    default_pub = Path(str(cfg.key_path) + ".pub")
    ok = cp.verify(_pubkey(cfg, pubkey)) if pubkey or default_pub.exists() else None
    _emit(ctx, cp.to_json() | {"signature_valid": ok}, _cp_line(cp) + ("" if ok is None else f" signature={'ok' if ok else 'BAD'}"))
    if ok is False:
        sys.exit(EXIT_INCONSISTENT)


@main.group(invoke_without_command=True)
@click.option("--journal", "journal_source", default=None, help="Journal file path or server URL.")
@click.option("--ledger", default=None)
@click.option("--pubkey", type=click.Path(dir_okay=False), default=None)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
def audit(ctx, journal_source, ledger, pubkey, as_json):
    """Verify a ledger's published history from trusted storage alone."""
    ctx.obj["json"] = ctx.obj["json"] or as_json
    if ctx.invoked_subcommand is not None:
        return
    cfg = _cfg(ctx)
    ledger = ledger or cfg.ledger
    public = _pubkey(cfg, pubkey)
    source = journal_source or str(cfg.journal_path)
    try:
        report = auditor.audit(source, ledger, public)
    except OSError as exc:
        _fail(f"cannot read journal {source}: {exc}")
    _emit(ctx, report.to_json(), auditor.format_report(report))
    sys.exit(_EXIT_FOR[report.overall])


@audit.command()
@click.option("--journal-a", required=True)
@click.option("--journal-b", required=True)
@click.option("--ledger", default=None)
@click.option("--pubkey", type=click.Path(dir_okay=False), default=None)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
def cross(ctx, journal_a, journal_b, ledger, pubkey, as_json):
    """Compare two views of the same ledger for a fork."""
    ctx.obj["json"] = ctx.obj["json"] or as_json
    cfg = _cfg(ctx)
    ledger = ledger or cfg.ledger
    public = _pubkey(cfg, pubkey)
    try:
        evidence = auditor.audit_cross(journal_a, journal_b, ledger, public)
    except OSError as exc:
        _fail(f"cannot read journal: {exc}")
    except ValueError as exc:
        _fail(str(exc))
    if evidence is None:
        _emit(ctx, {"ledger_id": ledger, "overall": "CONSISTENT", "fork_evidence": None}, f"ledger {ledger}: no fork found")
        sys.exit(EXIT_OK)
    a, b = evidence.record_a.checkpoint, evidence.record_b.checkpoint
    _emit(
        ctx,
        {"ledger_id": ledger, "overall": "FORKED", "fork_evidence": evidence.to_json()},
        f"ledger {ledger}: FORKED at version {evidence.version}\n  a: {_cp_line(a)}\n  b: {_cp_line(b)}",
    )
    sys.exit(EXIT_FORKED)


@main.command()
@click.argument("name", type=click.Choice(["honest", "rewrite", "fork", "truncate"]))
@click.option("--seed", type=int, default=0)
@click.option("--ops", type=int, default=200)
@click.option("--workdir", type=click.Path(file_okay=False), default=None)
@click.pass_context
def scenario(ctx, name, seed, ops, workdir):
    """Run a scripted end-to-end scenario and compare the audit outcome with the expected one."""
    from .scenarios import run_scenario

    result = run_scenario(name, seed, ops, workdir)
    exp = result.expected.value + (f" @ version {result.expected_version}" if result.expected_version is not None else "")
    obs = result.observed.value + (f" @ version {result.observed_version}" if result.observed_version is not None else "")
    text = "\n".join([
        f"scenario   {name} (seed {seed}, {ops} ops)",
        f"expected   {exp}",
        f"observed   {obs}",
        f"responses  {result.response_failures} failed client-side checks",
        f"privacy    {'ok' if result.privacy_ok and not result.payload_leaks else 'VIOLATED'}",
        f"journals   {', '.join(str(p) for p in result.journals)}",
        "PASS" if result.passed else "FAIL",
    ])
    _emit(ctx, result.to_json(), text)
    sys.exit(EXIT_OK if result.passed else EXIT_INCONSISTENT)


if __name__ == "__main__":
    main()
