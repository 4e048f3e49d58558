"""``safe`` command line: thin mapping from subcommands onto modules and endpoints."""

from __future__ import annotations

import argparse
import logging
import signal
import os
import sys
from pathlib import Path
from typing import Optional

from .attestation import (
    DEFAULT_FRESHNESS_WINDOW,
    KeyPair,
    SignedEnvelope,
    TrustAnchorSet,
    issue_certificate,
    verify_envelope,
)
from .canonical import canonical_bytes, loads
from .errors import AttestationError, SafeError, ScenarioError
from .governance import GovernanceStore
from .harness import BUILTIN_NAMES, builtin_path, load_scenario, run_scenario
from .ids import Timestamp, parse_apid, parse_apni
from .model import RegistryView
from .policy import (
    CHECKS,
    DATASET_UNKNOWN,
    PLATFORM_UNKNOWN,
    CheckResult,
    Decision,
    TransferQuery,
    render_trace,
)
from .server import HttpTransport, make_server
from .wire import DEFAULT_GRANT_TTL, PlatformAgent, PlatformIdentity, RegistryApp

EXIT_OK = 0
EXIT_DENY = 1
EXIT_USAGE = 2
EXIT_GOVERNANCE = 3
EXIT_IO = 4


class ConfigError(Exception):
    pass


def _out(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _err(text: str) -> None:
    sys.stderr.write(text if text.endswith("\n") else text + "\n")


def _read_json(path: str, what: str):
    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {p}: {exc.strerror}") from None
    try:
        return loads(data)
    except SafeError as exc:
        raise ConfigError(f"{what} {p} is not valid JSON: {exc.detail}") from None


def _listen(config: dict) -> tuple:
    listen = config.get("listen", "127.0.0.1:8400")
    host, _, port = str(listen).rpartition(":")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise ConfigError(f"bad listen address {listen!r}") from None


# service construction (separate from serving so tests can build without binding)

def build_registry(config_path: str) -> tuple:
    config = _read_json(config_path, "config")
    if "persistence_dir" not in config:
        raise ConfigError("config is missing persistence_dir")
    try:
        store = GovernanceStore.open(config["persistence_dir"])
    except OSError as exc:
        raise ConfigError(f"persistence_dir {config['persistence_dir']}: {exc.strerror}") from None
    except SafeError as exc:
        raise ConfigError(f"cannot load audit log: {exc.code}: {exc.detail}") from None
    clock = Timestamp.now
    if "fixed_clock" in config:
        fixed = Timestamp.parse(config["fixed_clock"])
        clock = lambda: fixed  # noqa: E731
    app = RegistryApp(store, clock, admin_token=config.get("admin_token"))
    return app, _listen(config)


def build_agent(config_path: str) -> tuple:
    config = _read_json(config_path, "config")
    if "identity_path" not in config:
        raise ConfigError("config is missing identity_path")
    ident_doc = _read_json(config["identity_path"], "identity file")
    try:
        identity = PlatformIdentity.from_doc(ident_doc)
    except SafeError as exc:
        raise ConfigError(f"identity file {config['identity_path']}: {exc.detail}") from None

    if "registry_snapshot_path" in config:
        snap_path = config["registry_snapshot_path"]

        def registry() -> RegistryView:
            return RegistryView.from_doc(_read_json(snap_path, "registry snapshot"))

        registry()  # fail fast on a missing snapshot
    elif "registry_url" in config:
        client = HttpTransport(config["registry_url"])

        def registry() -> RegistryView:
            return RegistryView.from_doc(client.request("GET", "/registry/v1/snapshot").json())
    else:
        raise ConfigError("config needs registry_url or registry_snapshot_path")

    clock = Timestamp.now
    if "fixed_clock" in config:
        fixed = Timestamp.parse(config["fixed_clock"])
        clock = lambda: fixed  # noqa: E731
    app = PlatformAgent(
        identity,
        registry,
        clock,
        freshness_window=int(config.get("freshness_window_seconds", DEFAULT_FRESHNESS_WINDOW)),
        grant_ttl=int(config.get("grant_ttl_seconds", DEFAULT_GRANT_TTL)),
    )
    return app, _listen(config)


def _sigterm(signum, frame):
    raise KeyboardInterrupt


def _serve(builder, args) -> int:
    try:
        app, (host, port) = builder(args.config)
        server = make_server(app, host, port)
    except ConfigError as exc:
        _err(f"error: {exc}")
        return EXIT_IO
    except SafeError as exc:
        _err(f"error: {exc.code}: {exc.detail}")
        return EXIT_IO
    except OSError as exc:
        _err(f"error: cannot listen on {host}:{port}: {exc.strerror}")
        return EXIT_IO
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    signal.signal(signal.SIGTERM, _sigterm)
    _err(f"listening on http://{host}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


# admin

def _client(args) -> HttpTransport:
    url = args.registry or os.environ.get("SAFE_REGISTRY_URL")
    if not url:
        raise ConfigError("no registry URL: pass --registry or set SAFE_REGISTRY_URL")
    headers = {}
    token = os.environ.get("SAFE_TOKEN")
    if token:
        headers["Authorization"] = f"Bearer {token}"
    return HttpTransport(url, headers)


def _call(args, method: str, path: str, body=b""):
    """Issue one registry request; returns (exit_code, body_doc)."""
    try:
        resp = _client(args).request(method, path, body)
    except ConfigError as exc:
        _err(f"error: {exc}")
        return EXIT_IO, None
    except OSError as exc:
        _err(f"error: registry unreachable: {exc}")
        return EXIT_IO, None
    try:
        doc = resp.json()
    except SafeError:
        _err(f"error: registry returned a non-JSON body (HTTP {resp.status})")
        return EXIT_IO, None
    if 400 <= resp.status < 500:
        _err(f"{doc.get('error', resp.status)}: {doc.get('detail', '')}")
        return EXIT_GOVERNANCE, doc
    if resp.status >= 500:
        _err(f"error: registry failed with HTTP {resp.status}: {doc.get('error', '')}")
        return EXIT_IO, doc
    return EXIT_OK, doc


def _admin_request(args) -> tuple:
    c = args.admin_cmd
    if c == "register-platform":
        return "POST", "/registry/v1/platforms", {
            "apid": args.apid, "display_name": args.name, "region": args.region,
            "public_key_id": args.public_key_id, "operator": args.operator, "apni_memberships": [],
        }
    if c == "create-network":
        return "POST", "/registry/v1/networks", {
            "apni": args.apni, "authority_name": args.authority_name, "authority_public_key": args.authority_key,
            "framework_id": args.framework, "members": args.member or [],
        }
    if c == "add-member":
        return "POST", f"/registry/v1/networks/{args.apni}/members", {"apid": args.apid}
    if c == "remove-member":
        return "DELETE", f"/registry/v1/networks/{args.apni}/members/{args.apid}", b""
    if c == "submit-assessment":
        return "POST", "/registry/v1/assessments", {"apid": args.apid, "framework_id": args.framework}
    if c == "record-assessment":
        return "POST", f"/registry/v1/assessments/{args.apid}/independent", b""
    if c == "issue-ato":
        return "POST", "/registry/v1/atos", {"apid": args.apid, "valid_until": args.valid_until}
    if c == "record-review":
        return "POST", f"/registry/v1/atos/{args.apid}/reviews", b""
    if c == "revoke-ato":
        return "POST", f"/registry/v1/atos/{args.apid}/revocation", b""
    if c == "register-dataset":
        doc = {
            "dataset_id": args.id, "sponsor": args.sponsor,
            "rtd_holders": args.rtd or [], "authorized_networks": args.network or [],
        }
        if args.region is not None:
            doc["region_restrictions"] = args.region
        return "POST", "/registry/v1/datasets", doc
    if c == "authorize-network":
        return "POST", f"/registry/v1/datasets/{args.dataset}/networks", {"apni": args.apni}
    if c == "grant-rtd":
        return "POST", f"/registry/v1/datasets/{args.dataset}/rtd-grants", {"apid": args.apid}
    if c == "revoke-rtd":
        return "DELETE", f"/registry/v1/datasets/{args.dataset}/rtd-grants/{args.apid}", b""
    if c == "authorize-user":
        return "POST", "/registry/v1/users/authorizations", {
            "authorization_id": args.id, "user_id": args.user, "dataset_id": args.dataset,
            "granted_at": args.granted_at, "expires_at": args.expires_at, "revoked": False,
        }
    if c == "revoke-user":
        return "DELETE", f"/registry/v1/users/authorizations/{args.authorization_id}", b""
    raise AssertionError(c)


def cmd_admin(args) -> int:
    code, doc = _call(args, *_admin_request(args))
    if code == EXIT_OK:
        _out(canonical_bytes(doc).decode())
    return code


# query

def _decision_from_doc(doc: dict) -> Decision:
    trace = tuple(
        CheckResult(c["check"], c["passed"], c.get("reason"), c.get("detail", ""), c.get("evaluated", True))
        for c in doc["trace"]
    )
    return Decision(
        verdict=doc["decision"],
        reasons=tuple(doc["reasons"]),
        trace=trace,
        query_echo=TransferQuery.from_doc(doc["query"]),
        decided_at=Timestamp.parse(doc["decided_at"]),
        advisory=doc.get("advisory", False),
    )


def cmd_query(args) -> int:
    at = args.at or str(Timestamp.now())
    body = {
        "dataset_id": args.dataset, "source_apid": args.source, "dest_apid": args.dest,
        "user_id": args.user, "authorization_id": args.authorization, "now": at, "advisory": True,
    }
    code, doc = _call(args, "POST", "/registry/v1/decisions:evaluate", body)
    if code != EXIT_OK:
        return code
    decision = _decision_from_doc(doc)
    if len(decision.trace) != len(CHECKS):
        _err("error: registry returned an incomplete trace")
        return EXIT_IO
    _out(canonical_bytes(doc).decode() if args.json else render_trace(decision))
    if {DATASET_UNKNOWN, PLATFORM_UNKNOWN} & set(decision.reasons):
        return EXIT_GOVERNANCE
    return EXIT_OK if decision.allowed else EXIT_DENY


# attest

def cmd_attest_verify(args) -> int:
    try:
        env_doc = _read_json(args.envelope, "envelope")
        anchors = TrustAnchorSet.from_doc(_read_json(args.anchors, "anchors file"))
    except ConfigError as exc:
        _err(f"error: {exc}")
        return EXIT_IO
    except SafeError as exc:
        _err(f"{exc.code}: {exc.detail}")
        return EXIT_GOVERNANCE
    try:
        env = SignedEnvelope.from_doc(env_doc)
        now = Timestamp.parse(args.at) if args.at else Timestamp.now()
        identity = verify_envelope(env, anchors, args.nonce, now, args.window)
    except AttestationError as exc:
        _out(exc.code)
        _err(f"{exc.code}: {exc.detail}")
        return EXIT_GOVERNANCE
    except SafeError as exc:
        _err(f"{exc.code}: {exc.detail}")
        return EXIT_GOVERNANCE
    _out(canonical_bytes(identity.to_doc()).decode())
    return EXIT_OK


def cmd_attest_issue(args) -> int:
    try:
        authority = KeyPair.from_seed(bytes.fromhex(args.authority_seed))
        cert = issue_certificate(
            authority.secret, parse_apid(args.apid), bytes.fromhex(args.public_key),
            parse_apni(args.apni), Timestamp.parse(args.issued_at), Timestamp.parse(args.valid_until),
        )
    except ValueError as exc:
        if isinstance(exc, SafeError):
            _err(f"{exc.code}: {exc.detail}")
        else:
            _err(f"error: {exc}")
        return EXIT_GOVERNANCE
    except SafeError as exc:
        _err(f"{exc.code}: {exc.detail}")
        return EXIT_GOVERNANCE
    _out(canonical_bytes(cert.to_doc()).decode())
    return EXIT_OK


def cmd_keys_generate(args) -> int:
    keys = KeyPair.from_seed(bytes.fromhex(args.seed)) if args.seed else KeyPair.generate()
    _out(canonical_bytes({"seed": keys.secret.hex(), "public": keys.public.hex(), "key_id": keys.key_id}).decode())
    return EXIT_OK


# scenario

def cmd_scenario_run(args) -> int:
    path = Path(args.file)
    if not path.exists():
        name = path.stem if path.suffix == ".json" else path.name
        if name in BUILTIN_NAMES:
            path = builtin_path(name)
        else:
            _err(f"error: no such scenario file {args.file}")
            return EXIT_IO
    try:
        scenario = load_scenario(path)
    except ScenarioError as exc:
        _err(f"{exc.code}: {exc.detail}")
        return EXIT_GOVERNANCE
    report = run_scenario(scenario, args.seed, http=args.http)
    _out(report.to_bytes().decode() if args.json else report.summary())
    return EXIT_OK if report.passed else EXIT_DENY


# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safe", description="Federated controlled-access data governance.")
    sub = p.add_subparsers(dest="command", required=True)

    for name in ("registry", "agent"):
        sp = sub.add_parser(name).add_subparsers(dest="action", required=True)
        serve = sp.add_parser("serve")
        serve.add_argument("--config", required=True)
        serve.set_defaults(func=lambda a, n=name: _serve(build_registry if n == "registry" else build_agent, a))

    admin = sub.add_parser("admin").add_subparsers(dest="admin_cmd", required=True)

    def admin_cmd(name):
        cp = admin.add_parser(name)
        cp.add_argument("--registry")
        cp.add_argument("--json", action="store_true")
        cp.set_defaults(func=cmd_admin)
        return cp

    cp = admin_cmd("register-platform")
    cp.add_argument("--apid", required=True)
    cp.add_argument("--name", required=True)
    cp.add_argument("--region", required=True)
    cp.add_argument("--public-key-id", required=True)
    cp.add_argument("--operator", default="")
    cp = admin_cmd("create-network")
    cp.add_argument("--apni", required=True)
    cp.add_argument("--authority-name", required=True)
    cp.add_argument("--authority-key", required=True, help="hex Ed25519 public key")
    cp.add_argument("--framework", required=True)
    cp.add_argument("--member", action="append")
    for name in ("add-member", "remove-member"):
        cp = admin_cmd(name)
        cp.add_argument("apni")
        cp.add_argument("apid")
    cp = admin_cmd("submit-assessment")
    cp.add_argument("apid")
    cp.add_argument("--framework", required=True)
    for name in ("record-assessment", "record-review", "revoke-ato"):
        admin_cmd(name).add_argument("apid")
    cp = admin_cmd("issue-ato")
    cp.add_argument("apid")
    cp.add_argument("--valid-until", required=True)
    cp = admin_cmd("register-dataset")
    cp.add_argument("--id", required=True)
    cp.add_argument("--sponsor", required=True)
    cp.add_argument("--network", action="append")
    cp.add_argument("--rtd", action="append")
    cp.add_argument("--region", action="append")
    cp = admin_cmd("authorize-network")
    cp.add_argument("dataset")
    cp.add_argument("apni")
    for name in ("grant-rtd", "revoke-rtd"):
        cp = admin_cmd(name)
        cp.add_argument("dataset")
        cp.add_argument("apid")
    cp = admin_cmd("authorize-user")
    cp.add_argument("--id", required=True)
    cp.add_argument("--user", required=True)
    cp.add_argument("--dataset", required=True)
    cp.add_argument("--granted-at", required=True)
    cp.add_argument("--expires-at", required=True)
    admin_cmd("revoke-user").add_argument("authorization_id")

    query = sub.add_parser("query").add_subparsers(dest="query_cmd", required=True)
    q = query.add_parser("can-transfer")
    q.add_argument("--dataset", required=True)
    q.add_argument("--from", dest="source", required=True)
    q.add_argument("--to", dest="dest", required=True)
    q.add_argument("--user", required=True)
    q.add_argument("--authorization", required=True)
    q.add_argument("--at")
    q.add_argument("--registry")
    q.add_argument("--json", action="store_true")
    q.set_defaults(func=cmd_query)

    attest = sub.add_parser("attest").add_subparsers(dest="attest_cmd", required=True)
    v = attest.add_parser("verify")
    v.add_argument("--envelope", required=True)
    v.add_argument("--anchors", required=True)
    v.add_argument("--nonce", required=True)
    v.add_argument("--at")
    v.add_argument("--window", type=int, default=DEFAULT_FRESHNESS_WINDOW)
    v.set_defaults(func=cmd_attest_verify)
    ic = attest.add_parser("issue-certificate")
    ic.add_argument("--authority-seed", required=True)
    ic.add_argument("--apid", required=True)
    ic.add_argument("--public-key", required=True)
    ic.add_argument("--apni", required=True)
    ic.add_argument("--issued-at", required=True)
    ic.add_argument("--valid-until", required=True)
    ic.set_defaults(func=cmd_attest_issue)

    keys = sub.add_parser("keys").add_subparsers(dest="keys_cmd", required=True)
    kg = keys.add_parser("generate")
    kg.add_argument("--seed", help="hex 32-byte seed (deterministic output)")
    kg.set_defaults(func=cmd_keys_generate)

    scen = sub.add_parser("scenario").add_subparsers(dest="scenario_cmd", required=True)
    r = scen.add_parser("run")
    r.add_argument("file", help="scenario JSON file, or a builtin name: " + ", ".join(BUILTIN_NAMES))
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--json", action="store_true")
    r.add_argument("--http", action="store_true", help="run every service on a loopback port")
    r.set_defaults(func=cmd_scenario_run)
    return p


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    return args.func(args)


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_exit()
