"""Deterministic multi-platform scenario runner.

A scenario declares platforms, networks, datasets, a timeline of governance
actions and a timeline of transfer requests with expected outcomes. The
runner stands up one registry and one agent per platform, drives every
action through the registry's admin endpoints and every request through
the real challenge / attestation / transfer-request exchange, and reports
whether each outcome matched.

Keys and nonces come from ``random.Random(seed)``, the clock is simulated,
so a report is a pure function of ``(scenario, seed)``.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Union

from .attestation import KeyPair, issue_certificate
from .canonical import canonical_bytes, loads
from .errors import (
    MalformedDocument,
    NonMonotonicOffsets,
    ParseError,
    SafeError,
    UnresolvedReference,
)
from .governance import ACTIONS, GovernanceStore, ato_status_function, audit_log_bytes
from .ids import DAY, Timestamp, parse_apid, parse_apni, parse_arid, parse_dataset_id
from .model import DatasetSafeMetadata, NetworkRecord, PlatformRecord, _get, _only_keys
from .policy import ALLOW, DENY, REASON_CODES, TransferQuery, evaluate_transfer
from .server import BackgroundServer, HttpTransport
from .wire import InProcessTransport, PlatformAgent, PlatformIdentity, RegistryApp

CERT_VALIDITY_SECONDS = 730 * DAY
HARNESS_ACTOR = "scenario"


class SimClock:
    def __init__(self, start: Timestamp):
        self.now = start

    def __call__(self) -> Timestamp:
        return self.now


# scenario model

@dataclass(frozen=True)
class PlatformSeed:
    apid: str
    display_name: str
    region: str
    operator: str = ""
    hosts: tuple = ()
    framework_id: str = ""

    @classmethod
    def from_doc(cls, doc: Mapping) -> "PlatformSeed":
        w = "platform"
        _only_keys(doc, {"apid", "display_name", "region", "operator", "hosts", "framework_id"}, w)
        return cls(
            apid=str(parse_apid(_get(doc, "apid", str, w))),
            display_name=_get(doc, "display_name", str, w),
            region=str(parse_arid(_get(doc, "region", str, w))),
            operator=doc.get("operator", ""),
            hosts=tuple(parse_dataset_id(d) for d in doc.get("hosts", [])),
            framework_id=doc.get("framework_id", ""),
        )

    def to_doc(self) -> dict:
        return {
            "apid": self.apid,
            "display_name": self.display_name,
            "region": self.region,
            "operator": self.operator,
            "hosts": list(self.hosts),
            "framework_id": self.framework_id,
        }


@dataclass(frozen=True)
class NetworkSeed:
    apni: str
    authority_name: str
    framework_id: str
    members: tuple = ()

    @classmethod
    def from_doc(cls, doc: Mapping) -> "NetworkSeed":
        w = "network"
        _only_keys(doc, {"apni", "authority_name", "framework_id", "members"}, w)
        return cls(
            apni=str(parse_apni(_get(doc, "apni", str, w))),
            authority_name=_get(doc, "authority_name", str, w),
            framework_id=_get(doc, "framework_id", str, w),
            members=tuple(str(parse_apid(m)) for m in doc.get("members", [])),
        )

    def to_doc(self) -> dict:
        return {
            "apni": self.apni,
            "authority_name": self.authority_name,
            "framework_id": self.framework_id,
            "members": list(self.members),
        }


@dataclass(frozen=True)
class Action:
    at_offset_seconds: int
    op: str
    args: dict
    expect_error: Optional[str] = None

    def to_doc(self) -> dict:
        doc = {"at_offset_seconds": self.at_offset_seconds, "op": self.op, "args": self.args}
        if self.expect_error is not None:
            doc["expect_error"] = self.expect_error
        return doc


@dataclass(frozen=True)
class RequestSpec:
    at_offset_seconds: int
    dataset_id: str
    source: str
    dest: str
    user: str
    authorization_id: str
    expect_verdict: str
    expect_reasons: tuple = ()

    def expected_doc(self) -> dict:
        return {"verdict": self.expect_verdict, "reasons": list(self.expect_reasons)}


@dataclass(frozen=True)
class Scenario:
    name: str
    clock_start: Timestamp
    platforms: tuple
    networks: tuple
    datasets: tuple
    actions: tuple = ()
    requests: tuple = ()


def _parse_expect(value, where: str):
    if value == ALLOW:
        return ALLOW, ()
    if isinstance(value, str):
        raise MalformedDocument(f"{where}.expect: expected 'ALLOW' or {{verdict, reasons}}")
    _only_keys(value, {"verdict", "reasons"}, f"{where}.expect")
    verdict = _get(value, "verdict", str, f"{where}.expect")
    reasons = value.get("reasons", [])
    if verdict not in (ALLOW, DENY):
        raise MalformedDocument(f"{where}.expect.verdict: must be ALLOW or DENY")
    if not isinstance(reasons, list) or any(r not in REASON_CODES for r in reasons):
        raise MalformedDocument(f"{where}.expect.reasons: unknown reason code")
    if (verdict == ALLOW) != (not reasons):
        raise MalformedDocument(f"{where}.expect: DENY needs reasons and ALLOW must have none")
    return verdict, tuple(sorted(set(reasons)))


def _offset(doc: Mapping, where: str) -> int:
    value = _get(doc, "at_offset_seconds", int, where)
    if value < 0:
        raise MalformedDocument(f"{where}.at_offset_seconds: must be non-negative")
    return value


def scenario_from_doc(doc: Mapping) -> Scenario:
    w = "scenario"
    _only_keys(doc, {"name", "clock_start", "platforms", "networks", "datasets", "actions", "requests"}, w)
    platforms = tuple(PlatformSeed.from_doc(p) for p in _get(doc, "platforms", list, w))
    networks = tuple(NetworkSeed.from_doc(n) for n in doc.get("networks", []))
    datasets = tuple(DatasetSafeMetadata.from_doc(d) for d in doc.get("datasets", []))
    actions = []
    for i, a in enumerate(doc.get("actions", [])):
        where = f"actions[{i}]"
        _only_keys(a, {"at_offset_seconds", "op", "args", "expect_error"}, where)
        op = _get(a, "op", str, where)
        if op not in ACTIONS:
            raise MalformedDocument(f"{where}.op: unknown operation {op!r}")
        actions.append(Action(_offset(a, where), op, dict(_get(a, "args", dict, where)), a.get("expect_error")))
    requests = []
    for i, r in enumerate(doc.get("requests", [])):
        where = f"requests[{i}]"
        _only_keys(r, {"at_offset_seconds", "dataset_id", "source", "dest", "user", "authorization_id", "expect"}, where)
        verdict, reasons = _parse_expect(r.get("expect"), where)
        requests.append(RequestSpec(
            at_offset_seconds=_offset(r, where),
            dataset_id=parse_dataset_id(_get(r, "dataset_id", str, where)),
            source=str(parse_apid(_get(r, "source", str, where))),
            dest=str(parse_apid(_get(r, "dest", str, where))),
            user=_get(r, "user", str, where),
            authorization_id=_get(r, "authorization_id", str, where),
            expect_verdict=verdict,
            expect_reasons=reasons,
        ))
    scenario = Scenario(
        name=_get(doc, "name", str, w),
        clock_start=Timestamp.parse(_get(doc, "clock_start", str, w)),
        platforms=platforms,
        networks=networks,
        datasets=datasets,
        actions=tuple(actions),
        requests=tuple(requests),
    )
    _check_offsets(scenario)
    _check_references(scenario)
    return scenario


def _check_offsets(s: Scenario) -> None:
    for label, items in (("actions", s.actions), ("requests", s.requests)):
        for i in range(1, len(items)):
            if items[i].at_offset_seconds < items[i - 1].at_offset_seconds:
                raise NonMonotonicOffsets(
                    f"{label}[{i}] at offset {items[i].at_offset_seconds} follows offset "
                    f"{items[i - 1].at_offset_seconds}"
                )


def _timeline(s: Scenario) -> list:
    """Merge actions and requests by offset; actions win ties."""
    items = [(a.at_offset_seconds, 0, i, a) for i, a in enumerate(s.actions)]
    items += [(r.at_offset_seconds, 1, i, r) for i, r in enumerate(s.requests)]
    return sorted(items, key=lambda t: t[:3])


def _check_references(s: Scenario) -> None:
    platforms = {p.apid for p in s.platforms}
    networks = {n.apni for n in s.networks}
    datasets = {d.dataset_id for d in s.datasets}
    for n in s.networks:
        for m in n.members:
            if m not in platforms:
                raise UnresolvedReference(f"network {n.apni} lists undeclared platform {m}")
    for p in s.platforms:
        for d in p.hosts:
            if d not in datasets:
                raise UnresolvedReference(f"platform {p.apid} hosts undeclared dataset {d}")
    for d in s.datasets:
        for a in d.rtd_holders:
            if str(a) not in platforms:
                raise UnresolvedReference(f"dataset {d.dataset_id} names undeclared holder {a}")
        for a in d.authorized_networks:
            if str(a) not in networks:
                raise UnresolvedReference(f"dataset {d.dataset_id} names undeclared network {a}")

    for _, kind, i, item in _timeline(s):
        if kind == 0:
            args = item.args
            where = f"actions[{i}]"
            if item.op == "register_platform":
                platforms.add(args.get("apid", ""))
                continue
            if item.op == "create_network":
                networks.add(args.get("apni", ""))
            if item.op == "register_dataset":
                datasets.add(args.get("dataset_id", ""))
                continue
            if "apid" in args and args["apid"] not in platforms and item.expect_error is None:
                raise UnresolvedReference(f"{where} references undeclared platform {args['apid']}")
            if "apni" in args and args["apni"] not in networks and item.expect_error is None:
                raise UnresolvedReference(f"{where} references undeclared network {args['apni']}")
            if "dataset_id" in args and args["dataset_id"] not in datasets and item.expect_error is None:
                raise UnresolvedReference(f"{where} references undeclared dataset {args['dataset_id']}")
        else:
            where = f"requests[{i}]"
            for role, apid in (("source", item.source), ("dest", item.dest)):
                if apid not in platforms:
                    raise UnresolvedReference(f"{where} {role} {apid} is not a declared platform")
            if item.dataset_id not in datasets:
                raise UnresolvedReference(f"{where} references undeclared dataset {item.dataset_id}")


def load_scenario(path: Union[str, Path]) -> Scenario:
    text = Path(path).read_bytes()
    try:
        doc = loads(text)
    except MalformedDocument as exc:
        raise ParseError(f"{path}: {exc.detail}") from None
    try:
        return scenario_from_doc(doc)
    except (UnresolvedReference, NonMonotonicOffsets) as exc:
        raise type(exc)(f"{path}: {exc.detail}") from None
    except SafeError as exc:
        raise ParseError(f"{path}: {exc.code}: {exc.detail}") from None


BUILTIN_NAMES = ("blocker1", "blocker2", "blocker3", "blocker4")


def builtin_path(name: str) -> Path:
    return Path(str(resources.files("safenet") / "scenarios" / f"{name}.json"))


def builtin_blocker_scenarios() -> list:
    return [load_scenario(builtin_path(n)) for n in BUILTIN_NAMES]


# reports

@dataclass
class RequestOutcome:
    index: int
    at: Timestamp
    spec: RequestSpec
    http_status: int
    verdict: str
    reasons: tuple
    trace: list
    engine_agrees: bool
    grant: Optional[dict] = None

    @property
    def matched(self) -> bool:
        return (
            self.verdict == self.spec.expect_verdict
            and tuple(sorted(set(self.reasons))) == self.spec.expect_reasons
            and self.engine_agrees
        )

    def to_doc(self) -> dict:
        doc = {
            "index": self.index,
            "at": str(self.at),
            "dataset_id": self.spec.dataset_id,
            "source": self.spec.source,
            "dest": self.spec.dest,
            "user": self.spec.user,
            "expected": self.spec.expected_doc(),
            "actual": {"verdict": self.verdict, "reasons": list(self.reasons)},
            "http_status": self.http_status,
            "trace": self.trace,
            "engine_agrees": self.engine_agrees,
            "matched": self.matched,
        }
        if self.grant is not None:
            doc["grant"] = self.grant
        return doc


@dataclass
class ActionOutcome:
    index: int
    at: Timestamp
    action: Action
    http_status: int
    error: Optional[str] = None

    @property
    def matched(self) -> bool:
        return self.error == self.action.expect_error

    def to_doc(self) -> dict:
        doc = {
            "index": self.index,
            "at": str(self.at),
            "op": self.action.op,
            "http_status": self.http_status,
            "matched": self.matched,
        }
        if self.error is not None:
            doc["error"] = self.error
        return doc


@dataclass
class ScenarioReport:
    scenario: str
    seed: int
    requests: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    audit_log_digest: str = ""
    final_state_digest: str = ""
    # the registry the run produced; kept for replay checks, never serialized
    store: Optional[GovernanceStore] = field(default=None, repr=False, compare=False)

    @property
    def passed(self) -> bool:
        return all(r.matched for r in self.requests) and all(a.matched for a in self.actions)

    def to_doc(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "pass": self.passed,
            "requests": [r.to_doc() for r in self.requests],
            "actions": [a.to_doc() for a in self.actions],
            "audit_log_digest": self.audit_log_digest,
            "final_state_digest": self.final_state_digest,
        }

    def to_bytes(self) -> bytes:
        return canonical_bytes(self.to_doc())

    def summary(self) -> str:
        lines = [f"scenario {self.scenario} (seed {self.seed}): {'PASS' if self.passed else 'FAIL'}"]
        for a in self.actions:
            if not a.matched:
                lines.append(f"  action {a.index} {a.action.op}: unexpected {a.error or 'success'}"
                             f" (expected {a.action.expect_error or 'success'})")
        for r in self.requests:
            mark = "ok  " if r.matched else "FAIL"
            got = r.verdict + (f" {list(r.reasons)}" if r.reasons else "")
            want = r.spec.expect_verdict + (f" {list(r.spec.expect_reasons)}" if r.spec.expect_reasons else "")
            line = f"  {mark} [{r.at}] {r.spec.dataset_id} {r.spec.source} -> {r.spec.dest}: {got}"
            if not r.matched:
                line += f" (expected {want}{'' if r.engine_agrees else ', engine disagrees'})"
            lines.append(line)
        lines.append(f"  audit log digest {self.audit_log_digest}")
        return "\n".join(lines)


# runner

class _World:
    def __init__(self, scenario: Scenario, seed: int, http: bool = False):
        self.scenario = scenario
        self.rng = random.Random(seed)
        self.clock = SimClock(scenario.clock_start)
        self.store = GovernanceStore()
        self.http = http
        self.servers: list = []
        self.agents: dict = {}
        self.transports: dict = {}
        self.authorities: dict = {}
        self.registry = self._connect(RegistryApp(self.store, self.clock), {"X-Safe-Actor": HARNESS_ACTOR})

    def _connect(self, app, headers=None):
        if not self.http:
            return InProcessTransport(app, headers)
        srv = BackgroundServer(app).__enter__()
        self.servers.append(srv)
        return HttpTransport(srv.url, headers)

    def close(self) -> None:
        for srv in self.servers:
            srv.__exit__(None, None, None)
        self.servers.clear()

    def _seed_bytes(self) -> bytes:
        return self.rng.getrandbits(256).to_bytes(32, "big")

    def add_platform(self, seed: PlatformSeed):
        keys = KeyPair.from_seed(self._seed_bytes())
        rec = PlatformRecord(
            apid=parse_apid(seed.apid),
            display_name=seed.display_name,
            region=parse_arid(seed.region),
            public_key_id=keys.key_id,
            operator=seed.operator,
        )
        resp = self.registry.request("POST", "/registry/v1/platforms", rec.to_doc())
        if resp.status == 201:
            identity = PlatformIdentity(
                apid=rec.apid,
                region=rec.region,
                keys=keys,
                hosted_datasets=frozenset(seed.hosts),
                framework_id=seed.framework_id,
            )
            nonce_rng = random.Random(self.rng.getrandbits(64))
            agent = PlatformAgent(identity, self.store.snapshot, self.clock, entropy=nonce_rng.randbytes)
            self.agents[seed.apid] = agent
            self.transports[seed.apid] = self._connect(agent)
        return resp

    def certify(self, apni: str, apid: str) -> None:
        authority = self.authorities[apni]
        agent = self.agents[apid]
        now = self.clock()
        cert = issue_certificate(authority.secret, agent.apid, agent.identity.keys.public,
                                 parse_apni(apni), now, now + CERT_VALIDITY_SECONDS)
        agent.identity.certificates = [c for c in agent.identity.certificates if str(c.apni) != apni] + [cert]

    def add_network(self, seed: NetworkSeed):
        authority = KeyPair.from_seed(self._seed_bytes())
        rec = NetworkRecord(
            apni=parse_apni(seed.apni),
            authority_name=seed.authority_name,
            authority_public_key=authority.public,
            framework_id=seed.framework_id,
            members=frozenset(parse_apid(m) for m in seed.members),
        )
        resp = self.registry.request("POST", "/registry/v1/networks", rec.to_doc())
        if resp.status == 201:
            self.authorities[seed.apni] = authority
            for m in sorted(seed.members):
                self.certify(seed.apni, m)
        return resp

    def action(self, a: Action):
        args = a.args
        reg = self.registry
        if a.op == "register_platform":
            return self.add_platform(PlatformSeed.from_doc(args))
        if a.op == "create_network":
            return self.add_network(NetworkSeed.from_doc(args))
        if a.op == "register_dataset":
            return reg.request("POST", "/registry/v1/datasets", args)
        a_apid = args.get("apid", "")
        if a.op == "add_platform_to_network":
            resp = reg.request("POST", f"/registry/v1/networks/{args.get('apni')}/members", {"apid": a_apid})
            if resp.status == 200:
                self.certify(args["apni"], a_apid)
            return resp
        if a.op == "remove_platform_from_network":
            return reg.request("DELETE", f"/registry/v1/networks/{args.get('apni')}/members/{a_apid}")
        if a.op == "submit_assessment":
            return reg.request("POST", "/registry/v1/assessments", args)
        if a.op == "record_independent_assessment":
            return reg.request("POST", f"/registry/v1/assessments/{a_apid}/independent")
        if a.op == "issue_ato":
            return reg.request("POST", "/registry/v1/atos", args)
        if a.op == "record_pentest_review":
            return reg.request("POST", f"/registry/v1/atos/{a_apid}/reviews")
        if a.op == "revoke_ato":
            return reg.request("POST", f"/registry/v1/atos/{a_apid}/revocation")
        ds = args.get("dataset_id", "")
        if a.op == "authorize_dataset_network":
            return reg.request("POST", f"/registry/v1/datasets/{ds}/networks", {"apni": args.get("apni")})
        if a.op == "deauthorize_dataset_network":
            return reg.request("DELETE", f"/registry/v1/datasets/{ds}/networks/{args.get('apni')}")
        if a.op == "grant_right_to_distribute":
            return reg.request("POST", f"/registry/v1/datasets/{ds}/rtd-grants", {"apid": a_apid})
        if a.op == "revoke_right_to_distribute":
            return reg.request("DELETE", f"/registry/v1/datasets/{ds}/rtd-grants/{a_apid}")
        if a.op == "authorize_user":
            return reg.request("POST", "/registry/v1/users/authorizations", args)
        if a.op == "revoke_user_authorization":
            return reg.request("DELETE", f"/registry/v1/users/authorizations/{args.get('authorization_id')}")
        raise MalformedDocument(f"unknown operation {a.op!r}")

    def transfer(self, r: RequestSpec):
        dest = self.agents[r.dest]
        source = self.agents[r.source]
        resp = dest.request_transfer(self.transports[r.source], r.dataset_id, r.user, r.authorization_id)
        body = resp.json()
        # what the source actually evaluated, re-run directly against the engine
        query = TransferQuery.from_doc(source.events[-1].payload["query"])
        view = self.store.snapshot()
        direct = evaluate_transfer(query, view, ato_status_function(view, query.now))
        agrees = (
            direct.verdict == body.get("decision")
            and list(direct.reasons) == body.get("reasons")
            and [c.to_doc() for c in direct.trace] == body.get("trace")
        )
        return resp.status, body, agrees


def run_scenario(scenario: Scenario, seed: int = 0, http: bool = False) -> ScenarioReport:
    """Run ``scenario``; ``http=True`` puts every service on a loopback port.

    The report is identical either way since the same bytes cross the wire.
    """
    world = _World(scenario, seed, http)
    try:
        return _run(world, scenario, seed)
    finally:
        world.close()


def _run(world: _World, scenario: Scenario, seed: int) -> ScenarioReport:
    report = ScenarioReport(scenario=scenario.name, seed=seed)

    setup = [("register_platform", p.to_doc()) for p in scenario.platforms]
    setup += [("create_network", n.to_doc()) for n in scenario.networks]
    setup += [("register_dataset", d.to_doc()) for d in scenario.datasets]
    for op, args in setup:
        resp = world.action(Action(0, op, args))
        if resp.status >= 300:
            err = resp.json().get("error", str(resp.status))
            report.actions.append(ActionOutcome(-1, world.clock(), Action(0, op, args), resp.status, err))

    for offset, kind, i, item in _timeline(scenario):
        world.clock.now = scenario.clock_start + offset
        if kind == 0:
            resp = world.action(item)
            err = None if resp.status < 300 else resp.json().get("error", str(resp.status))
            report.actions.append(ActionOutcome(i, world.clock(), item, resp.status, err))
        else:
            status, body, agrees = world.transfer(item)
            report.requests.append(RequestOutcome(
                index=i,
                at=world.clock(),
                spec=item,
                http_status=status,
                verdict=body.get("decision", "ERROR"),
                reasons=tuple(body.get("reasons", [])),
                trace=body.get("trace", []),
                engine_agrees=agrees,
                grant=body.get("grant"),
            ))

    digest = hashlib.sha256(world.store.audit_log())
    for apid in sorted(world.agents):
        digest.update(audit_log_bytes(world.agents[apid].events))
    report.audit_log_digest = digest.hexdigest()
    report.final_state_digest = hashlib.sha256(world.store.state_bytes()).hexdigest()
    report.store = world.store
    return report


def scenario_to_json(scenario: Scenario) -> str:
    """Render a scenario back to its file format (used when writing fixtures)."""
    doc = {
        "name": scenario.name,
        "clock_start": str(scenario.clock_start),
        "platforms": [p.to_doc() for p in scenario.platforms],
        "networks": [n.to_doc() for n in scenario.networks],
        "datasets": [d.to_doc() for d in scenario.datasets],
        "actions": [a.to_doc() for a in scenario.actions],
        "requests": [
            {
                "at_offset_seconds": r.at_offset_seconds,
                "dataset_id": r.dataset_id,
                "source": r.source,
                "dest": r.dest,
                "user": r.user,
                "authorization_id": r.authorization_id,
                "expect": r.expected_doc() if r.expect_verdict == DENY else ALLOW,
            }
            for r in scenario.requests
        ],
    }
    return json.dumps(doc, indent=2) + "\n"
