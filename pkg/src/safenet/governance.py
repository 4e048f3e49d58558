"""Event-sourced governance store.

All state changes go through :meth:`GovernanceStore._mutate`, which applies
one named operation and appends one hash-chained :class:`AuditEvent`.
Replaying the log through the same operation table rebuilds the store
exactly, so the log is the source of truth and the in-memory maps are a
cache of it.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

from .canonical import canonical_bytes, loads_strict
from .errors import (
    AlreadyMember,
    AlreadyRevoked,
    BadInterval,
    BadRegion,
    BrokenHashChain,
    DanglingMember,
    DuplicateApid,
    DuplicateApni,
    DuplicateAuthorization,
    DuplicateDataset,
    DuplicateGrant,
    GapInSequence,
    InvalidTransition,
    MalformedDocument,
    NoSuchGrant,
    NotFound,
    NotMember,
    OutOfOrderTransition,
    SafeError,
    StaleClock,
)
from .ids import DAY, Apid, Timestamp, parse_apid, parse_apni, parse_dataset_id
from .model import (
    AtoRecord,
    DatasetSafeMetadata,
    NetworkRecord,
    PlatformRecord,
    RegistryView,
    UserAuthorization,
    _get,
    _only_keys,
)

REVIEW_WINDOW_SECONDS = 365 * DAY
GENESIS_HASH = "0" * 64


# ATO status

@dataclass(frozen=True)
class AtoStatus:
    state: str
    reason: Optional[str] = None

    def __str__(self) -> str:
        return f"{self.state}({self.reason})" if self.reason else self.state

    @property
    def is_active(self) -> bool:
        return self.state == "Active"


NOT_AUTHORIZED = AtoStatus("NotAuthorized")
ACTIVE = AtoStatus("Active")
SUSPENDED_REVIEW_OVERDUE = AtoStatus("Suspended", "ReviewOverdue")
EXPIRED = AtoStatus("Expired")
REVOKED = AtoStatus("Revoked")


def compute_ato_status(rec: AtoRecord, now: Timestamp) -> AtoStatus:
    if rec.revoked_at is not None and rec.revoked_at <= now:
        return REVOKED
    if rec.ato_issued_at is None:
        return NOT_AUTHORIZED
    if rec.ato_valid_until is None or now >= rec.ato_valid_until:
        return EXPIRED
    reviewed = rec.last_pentest_review_at or rec.ato_issued_at
    if now - reviewed > REVIEW_WINDOW_SECONDS:
        return SUSPENDED_REVIEW_OVERDUE
    return ACTIVE


def ato_status_function(view: RegistryView, now: Timestamp):
    """Bind a snapshot's ATO records into an ``Apid -> AtoStatus`` lookup."""

    def status_of(apid: Apid) -> AtoStatus:
        rec = view.atos.get(apid)
        return NOT_AUTHORIZED if rec is None else compute_ato_status(rec, now)

    return status_of


# records owned by the store

@dataclass(frozen=True)
class RtdGrant:
    grant_id: str
    dataset_id: str
    apid: Apid
    granted_at: Timestamp
    granted_by: str
    revoked_at: Optional[Timestamp] = None

    def is_active(self, t: Timestamp) -> bool:
        return self.granted_at <= t and (self.revoked_at is None or t < self.revoked_at)

    def to_doc(self) -> dict:
        doc = {
            "grant_id": self.grant_id,
            "dataset_id": self.dataset_id,
            "apid": str(self.apid),
            "granted_at": str(self.granted_at),
            "granted_by": self.granted_by,
        }
        if self.revoked_at is not None:
            doc["revoked_at"] = str(self.revoked_at)
        return doc


@dataclass(frozen=True)
class AuditEvent:
    seq: int
    at: Timestamp
    actor: str
    action: str
    payload: dict
    prev_hash: str
    hash: str = ""

    def to_doc(self, with_hash: bool = True) -> dict:
        return {
            "seq": self.seq,
            "at": str(self.at),
            "actor": self.actor,
            "action": self.action,
            "payload": self.payload,
            "prev_hash": self.prev_hash,
            "hash": self.hash if with_hash else "",
        }

    def compute_hash(self) -> str:
        return hashlib.sha256(canonical_bytes(self.to_doc(with_hash=False))).hexdigest()

    def to_line(self) -> bytes:
        return canonical_bytes(self.to_doc())

    @classmethod
    def from_doc(cls, doc: Mapping) -> "AuditEvent":
        w = "event"
        _only_keys(doc, {"seq", "at", "actor", "action", "payload", "prev_hash", "hash"}, w)
        return cls(
            seq=_get(doc, "seq", int, w),
            at=Timestamp.parse(_get(doc, "at", str, w)),
            actor=_get(doc, "actor", str, w),
            action=_get(doc, "action", str, w),
            payload=_get(doc, "payload", dict, w),
            prev_hash=_get(doc, "prev_hash", str, w),
            hash=_get(doc, "hash", str, w),
        )


def audit_log_bytes(events: Iterable[AuditEvent]) -> bytes:
    return b"".join(e.to_line() + b"\n" for e in events)


def parse_audit_log(data: bytes) -> list:
    """Split JSON Lines audit bytes into events.

    Any line that is not canonical JSON of a well-formed event means the
    chain can no longer be trusted, so it is reported as a broken chain at
    that line's position.
    """
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    events = []
    for i, line in enumerate(lines):
        try:
            events.append(AuditEvent.from_doc(loads_strict(line)))
        except SafeError as exc:
            raise BrokenHashChain(i, f"unreadable event: {exc.detail}") from None
    return events


def verify_chain(events) -> None:
    prev = GENESIS_HASH
    for i, ev in enumerate(events):
        if ev.compute_hash() != ev.hash or ev.prev_hash != prev:
            raise BrokenHashChain(i, "hash mismatch")
        if ev.seq != i:
            raise GapInSequence(i, f"expected seq {i}, found {ev.seq}")
        prev = ev.hash


# store

def _payload_ts(payload: Mapping, key: str, what: str) -> Timestamp:
    return Timestamp.parse(_get(payload, key, str, what))


class GovernanceStore:
    """Single-writer governance state machine with a tamper-evident log.

    Mutating methods take ``actor`` and ``now`` keyword arguments and
    reject a ``now`` earlier than the last logged event.
    """

    def __init__(self, persist_dir: Union[str, Path, None] = None):
        self.platforms: dict = {}
        self.networks: dict = {}
        self.datasets: dict = {}
        self.user_authorizations: dict = {}
        self.atos: dict = {}
        self.grants: dict = {}
        self.events: list = []
        self._lock = threading.RLock()
        self._persist_dir = Path(persist_dir) if persist_dir is not None else None

    # persistence

    @property
    def audit_path(self) -> Optional[Path]:
        return self._persist_dir / "audit.jsonl" if self._persist_dir else None

    @property
    def snapshot_path(self) -> Optional[Path]:
        return self._persist_dir / "snapshot.json" if self._persist_dir else None

    @classmethod
    def open(cls, persist_dir: Union[str, Path]) -> "GovernanceStore":
        """Load (by replay) or create a store persisted under ``persist_dir``."""
        persist_dir = Path(persist_dir)
        persist_dir.mkdir(parents=True, exist_ok=True)
        audit = persist_dir / "audit.jsonl"
        events = parse_audit_log(audit.read_bytes()) if audit.exists() else []
        store = replay_audit_log(events)
        store._persist_dir = persist_dir
        store._write_snapshot()
        return store

    def _write_snapshot(self) -> None:
        if self.snapshot_path is not None:
            tmp = self.snapshot_path.with_suffix(".tmp")
            tmp.write_bytes(self.state_bytes())
            tmp.replace(self.snapshot_path)

    # views

    def snapshot(self) -> RegistryView:
        with self._lock:
            return RegistryView(
                platforms=self.platforms,
                networks=self.networks,
                datasets=self.datasets,
                user_authorizations=self.user_authorizations,
                atos=self.atos,
            )

    def state_doc(self) -> dict:
        with self._lock:
            doc = self.snapshot().to_doc()
            doc["rtd_grants"] = [self.grants[k].to_doc() for k in sorted(self.grants)]
            return doc

    def state_bytes(self) -> bytes:
        return canonical_bytes(self.state_doc())

    def audit_log(self) -> bytes:
        with self._lock:
            return audit_log_bytes(self.events)

    def audit_digest(self) -> str:
        return hashlib.sha256(self.audit_log()).hexdigest()

    def active_grants(self, dataset_id: str) -> list:
        return [g for g in self.grants.values() if g.dataset_id == dataset_id and g.revoked_at is None]

    # write path

    def _mutate(self, action: str, payload: dict, actor: str, now: Timestamp):
        with self._lock:
            if self.events and now < self.events[-1].at:
                raise StaleClock(f"{now} precedes last event at {self.events[-1].at}")
            # canonical round trip so the applied payload equals the logged one
            payload = loads_strict(canonical_bytes(payload))
            seq = len(self.events)
            result = self._apply(action, payload, actor, now, seq)
            prev = self.events[-1].hash if self.events else GENESIS_HASH
            ev = AuditEvent(seq, now, actor, action, payload, prev)
            ev = replace(ev, hash=ev.compute_hash())
            self.events.append(ev)
            if self.audit_path is not None:
                with open(self.audit_path, "ab") as fh:
                    fh.write(ev.to_line() + b"\n")
                self._write_snapshot()
            return result

    def _apply(self, action: str, payload: dict, actor: str, now: Timestamp, seq: int):
        handler = _HANDLERS.get(action)
        if handler is None:
            raise MalformedDocument(f"unknown action {action!r}")
        return handler(self, payload, actor, now, seq)

    # platform and network operations

    def register_platform(self, rec: PlatformRecord, *, actor: str, now: Timestamp) -> PlatformRecord:
        return self._mutate("register_platform", rec.to_doc(), actor, now)

    def create_network(self, rec: NetworkRecord, *, actor: str, now: Timestamp) -> NetworkRecord:
        return self._mutate("create_network", rec.to_doc(), actor, now)

    def add_platform_to_network(self, apni, apid, *, actor: str, now: Timestamp) -> NetworkRecord:
        return self._mutate("add_platform_to_network", {"apni": str(apni), "apid": str(apid)}, actor, now)

    def remove_platform_from_network(self, apni, apid, *, actor: str, now: Timestamp) -> NetworkRecord:
        return self._mutate("remove_platform_from_network", {"apni": str(apni), "apid": str(apid)}, actor, now)

    # ATO lifecycle

    def submit_assessment(self, apid, framework_id: str, *, actor: str, now: Timestamp) -> AtoRecord:
        return self._mutate("submit_assessment", {"apid": str(apid), "framework_id": framework_id}, actor, now)

    def record_independent_assessment(self, apid, *, actor: str, now: Timestamp) -> AtoRecord:
        return self._mutate("record_independent_assessment", {"apid": str(apid)}, actor, now)

    def issue_ato(self, apid, valid_until: Timestamp, *, actor: str, now: Timestamp) -> AtoRecord:
        return self._mutate("issue_ato", {"apid": str(apid), "valid_until": str(valid_until)}, actor, now)

    def record_pentest_review(self, apid, *, actor: str, now: Timestamp) -> AtoRecord:
        return self._mutate("record_pentest_review", {"apid": str(apid)}, actor, now)

    def revoke_ato(self, apid, *, actor: str, now: Timestamp) -> AtoRecord:
        return self._mutate("revoke_ato", {"apid": str(apid)}, actor, now)

    def ato_status(self, apid, now: Timestamp) -> AtoStatus:
        rec = self.atos.get(parse_apid(str(apid)))
        if rec is None:
            raise NotFound(f"unknown platform {apid}")
        return compute_ato_status(rec, now)

    # datasets and right to distribute

    def register_dataset(self, meta: DatasetSafeMetadata, *, actor: str, now: Timestamp) -> DatasetSafeMetadata:
        return self._mutate("register_dataset", meta.to_doc(), actor, now)

    def authorize_dataset_network(self, dataset_id: str, apni, *, actor: str, now: Timestamp) -> DatasetSafeMetadata:
        return self._mutate("authorize_dataset_network", {"dataset_id": dataset_id, "apni": str(apni)}, actor, now)

    def deauthorize_dataset_network(self, dataset_id: str, apni, *, actor: str, now: Timestamp) -> DatasetSafeMetadata:
        return self._mutate("deauthorize_dataset_network", {"dataset_id": dataset_id, "apni": str(apni)}, actor, now)

    def grant_right_to_distribute(self, dataset_id: str, apid, *, actor: str, now: Timestamp) -> RtdGrant:
        return self._mutate("grant_right_to_distribute", {"dataset_id": dataset_id, "apid": str(apid)}, actor, now)

    def revoke_right_to_distribute(self, dataset_id: str, apid, *, actor: str, now: Timestamp) -> RtdGrant:
        return self._mutate("revoke_right_to_distribute", {"dataset_id": dataset_id, "apid": str(apid)}, actor, now)

    # user authorizations

    def authorize_user(self, auth: UserAuthorization, *, actor: str, now: Timestamp) -> UserAuthorization:
        return self._mutate("authorize_user", auth.to_doc(), actor, now)

    def revoke_user_authorization(self, authorization_id: str, *, actor: str, now: Timestamp) -> UserAuthorization:
        return self._mutate("revoke_user_authorization", {"authorization_id": authorization_id}, actor, now)

    # generic entry point used by the wire layer and scenario runner

    def execute(self, action: str, payload: dict, *, actor: str, now: Timestamp):
        if action not in _HANDLERS:
            raise MalformedDocument(f"unknown action {action!r}")
        return self._mutate(action, payload, actor, now)

    # lookups shared by handlers

    def _platform(self, apid: Apid) -> PlatformRecord:
        try:
            return self.platforms[apid]
        except KeyError:
            raise NotFound(f"unknown platform {apid}") from None

    def _network(self, apni) -> NetworkRecord:
        try:
            return self.networks[apni]
        except KeyError:
            raise NotFound(f"unknown network {apni}") from None

    def _dataset(self, dataset_id: str) -> DatasetSafeMetadata:
        try:
            return self.datasets[dataset_id]
        except KeyError:
            raise NotFound(f"unknown dataset {dataset_id}") from None

    def _ato(self, apid: Apid) -> AtoRecord:
        self._platform(apid)
        return self.atos[apid]

    def _sync_holders(self, dataset_id: str) -> None:
        holders = frozenset(g.apid for g in self.active_grants(dataset_id))
        self.datasets[dataset_id] = replace(self.datasets[dataset_id], rtd_holders=holders)


ACTIONS = (
    "register_platform",
    "create_network",
    "add_platform_to_network",
    "remove_platform_from_network",
    "submit_assessment",
    "record_independent_assessment",
    "issue_ato",
    "record_pentest_review",
    "revoke_ato",
    "register_dataset",
    "authorize_dataset_network",
    "deauthorize_dataset_network",
    "grant_right_to_distribute",
    "revoke_right_to_distribute",
    "authorize_user",
    "revoke_user_authorization",
)

# operations that can only withdraw permissions
REVOKING_ACTIONS = (
    "revoke_ato",
    "revoke_right_to_distribute",
    "revoke_user_authorization",
    "remove_platform_from_network",
)


# handlers: validate everything first, then mutate

def _h_register_platform(s: GovernanceStore, p, actor, now, seq):
    rec = PlatformRecord.from_doc(p)
    if rec.apid in s.platforms:
        raise DuplicateApid(f"{rec.apid} already registered")
    if rec.region.is_global:
        raise BadRegion("a platform must be located in a concrete region, not arid:global")
    for apni in rec.apni_memberships:
        s._network(apni)
    s.platforms[rec.apid] = rec
    s.atos[rec.apid] = AtoRecord(apid=rec.apid)
    for apni in rec.apni_memberships:
        net = s.networks[apni]
        s.networks[apni] = replace(net, members=net.members | {rec.apid})
    return rec


def _h_create_network(s, p, actor, now, seq):
    rec = NetworkRecord.from_doc(p)
    if rec.apni in s.networks:
        raise DuplicateApni(f"{rec.apni} already exists")
    if len(rec.authority_public_key) != 32:
        raise MalformedDocument("network.authority_public_key: expected 32 bytes")
    for apid in sorted(rec.members):
        if apid not in s.platforms:
            raise DanglingMember(f"member {apid} is not a registered platform")
    s.networks[rec.apni] = rec
    for apid in rec.members:
        plat = s.platforms[apid]
        s.platforms[apid] = replace(plat, apni_memberships=plat.apni_memberships | {rec.apni})
    return rec


def _membership_args(s, p, what):
    _only_keys(p, {"apni", "apid"}, what)
    apni = parse_apni(_get(p, "apni", str, what))
    apid = parse_apid(_get(p, "apid", str, what))
    return s._network(apni), s._platform(apid)


def _h_add_member(s, p, actor, now, seq):
    net, plat = _membership_args(s, p, "membership")
    if plat.apid in net.members:
        raise AlreadyMember(f"{plat.apid} is already a member of {net.apni}")
    net = replace(net, members=net.members | {plat.apid})
    s.networks[net.apni] = net
    s.platforms[plat.apid] = replace(plat, apni_memberships=plat.apni_memberships | {net.apni})
    return net


def _h_remove_member(s, p, actor, now, seq):
    net, plat = _membership_args(s, p, "membership")
    if plat.apid not in net.members:
        raise NotMember(f"{plat.apid} is not a member of {net.apni}")
    net = replace(net, members=net.members - {plat.apid})
    s.networks[net.apni] = net
    s.platforms[plat.apid] = replace(plat, apni_memberships=plat.apni_memberships - {net.apni})
    return net


def _ato_arg(s, p, what, extra=()):
    _only_keys(p, {"apid", *extra}, what)
    rec = s._ato(parse_apid(_get(p, "apid", str, what)))
    if rec.revoked_at is not None:
        raise AlreadyRevoked(f"ATO for {rec.apid} was revoked at {rec.revoked_at}")
    return rec


def _h_submit_assessment(s, p, actor, now, seq):
    rec = _ato_arg(s, p, "assessment", ("framework_id",))
    framework = _get(p, "framework_id", str, "assessment")
    if rec.assessment_submitted_at is not None:
        raise OutOfOrderTransition(f"assessment for {rec.apid} already submitted")
    rec = replace(rec, framework_id=framework, assessment_submitted_at=now)
    s.atos[rec.apid] = rec
    return rec


def _h_independent(s, p, actor, now, seq):
    rec = _ato_arg(s, p, "assessment")
    if rec.assessment_submitted_at is None:
        raise OutOfOrderTransition(f"no assessment submitted for {rec.apid}")
    if rec.independent_assessment_at is not None:
        raise OutOfOrderTransition(f"independent assessment for {rec.apid} already recorded")
    rec = replace(rec, independent_assessment_at=now)
    s.atos[rec.apid] = rec
    return rec


def _h_issue_ato(s, p, actor, now, seq):
    rec = _ato_arg(s, p, "ato", ("valid_until",))
    valid_until = _payload_ts(p, "valid_until", "ato")
    if rec.independent_assessment_at is None:
        raise OutOfOrderTransition(f"cannot issue an ATO for {rec.apid} before an independent assessment")
    # re-issue is only a renewal of an expired ATO
    if rec.ato_issued_at is not None and now < rec.ato_valid_until:
        raise OutOfOrderTransition(f"ATO for {rec.apid} is already issued and unexpired")
    if not valid_until > now:
        raise BadInterval("valid_until must be later than the issuance time")
    rec = replace(rec, ato_issued_at=now, ato_valid_until=valid_until, last_pentest_review_at=now, issuer=actor)
    s.atos[rec.apid] = rec
    return rec


def _h_review(s, p, actor, now, seq):
    rec = _ato_arg(s, p, "review")
    if rec.ato_issued_at is None:
        raise OutOfOrderTransition(f"no ATO issued for {rec.apid}; nothing to review")
    rec = replace(rec, last_pentest_review_at=now)
    s.atos[rec.apid] = rec
    return rec


def _h_revoke_ato(s, p, actor, now, seq):
    rec = _ato_arg(s, p, "revocation")
    rec = replace(rec, revoked_at=now)
    s.atos[rec.apid] = rec
    return rec


def _h_register_dataset(s, p, actor, now, seq):
    meta = DatasetSafeMetadata.from_doc(p)
    if meta.dataset_id in s.datasets:
        raise DuplicateDataset(f"{meta.dataset_id} already registered")
    for apni in sorted(meta.authorized_networks):
        s._network(apni)
    for apid in sorted(meta.rtd_holders):
        s._platform(apid)
    s.datasets[meta.dataset_id] = replace(meta, rtd_holders=frozenset())
    for i, apid in enumerate(sorted(meta.rtd_holders)):
        gid = f"rtd-{seq:06d}-{i}"
        s.grants[gid] = RtdGrant(gid, meta.dataset_id, apid, now, meta.sponsor)
    s._sync_holders(meta.dataset_id)
    return s.datasets[meta.dataset_id]


def _dataset_network_args(s, p, what):
    _only_keys(p, {"dataset_id", "apni"}, what)
    meta = s._dataset(parse_dataset_id(_get(p, "dataset_id", str, what)))
    net = s._network(parse_apni(_get(p, "apni", str, what)))
    return meta, net.apni


def _h_authorize_network(s, p, actor, now, seq):
    meta, apni = _dataset_network_args(s, p, "dataset_network")
    if apni in meta.authorized_networks:
        raise AlreadyMember(f"{apni} already authorized for {meta.dataset_id}")
    meta = replace(meta, authorized_networks=meta.authorized_networks | {apni})
    s.datasets[meta.dataset_id] = meta
    return meta


def _h_deauthorize_network(s, p, actor, now, seq):
    meta, apni = _dataset_network_args(s, p, "dataset_network")
    if apni not in meta.authorized_networks:
        raise NotMember(f"{apni} is not authorized for {meta.dataset_id}")
    meta = replace(meta, authorized_networks=meta.authorized_networks - {apni})
    s.datasets[meta.dataset_id] = meta
    return meta


def _rtd_args(s, p, what):
    _only_keys(p, {"dataset_id", "apid"}, what)
    meta = s._dataset(parse_dataset_id(_get(p, "dataset_id", str, what)))
    plat = s._platform(parse_apid(_get(p, "apid", str, what)))
    return meta, plat.apid


def _h_grant_rtd(s, p, actor, now, seq):
    meta, apid = _rtd_args(s, p, "rtd_grant")
    if any(g.apid == apid for g in s.active_grants(meta.dataset_id)):
        raise DuplicateGrant(f"{apid} already holds the right to distribute {meta.dataset_id}")
    gid = f"rtd-{seq:06d}-0"
    grant = RtdGrant(gid, meta.dataset_id, apid, now, actor)
    s.grants[gid] = grant
    s._sync_holders(meta.dataset_id)
    return grant


def _h_revoke_rtd(s, p, actor, now, seq):
    meta, apid = _rtd_args(s, p, "rtd_grant")
    active = [g for g in s.active_grants(meta.dataset_id) if g.apid == apid]
    if not active:
        raise NoSuchGrant(f"{apid} holds no active right to distribute {meta.dataset_id}")
    grant = replace(active[0], revoked_at=now)
    s.grants[grant.grant_id] = grant
    s._sync_holders(meta.dataset_id)
    return grant


def _h_authorize_user(s, p, actor, now, seq):
    auth = UserAuthorization.from_doc(p)
    s._dataset(auth.dataset_id)
    if auth.authorization_id in s.user_authorizations:
        raise DuplicateAuthorization(f"{auth.authorization_id} already exists")
    if not auth.granted_at < auth.expires_at:
        raise BadInterval("granted_at must precede expires_at")
    if auth.revoked:
        raise MalformedDocument("a new authorization cannot be created revoked")
    s.user_authorizations[auth.authorization_id] = auth
    return auth


def _h_revoke_user(s, p, actor, now, seq):
    _only_keys(p, {"authorization_id"}, "authorization")
    aid = _get(p, "authorization_id", str, "authorization")
    auth = s.user_authorizations.get(aid)
    if auth is None:
        raise NotFound(f"unknown authorization {aid}")
    if auth.revoked:
        raise AlreadyRevoked(f"authorization {aid} already revoked")
    auth = replace(auth, revoked=True)
    s.user_authorizations[aid] = auth
    return auth


_HANDLERS = {
    "register_platform": _h_register_platform,
    "create_network": _h_create_network,
    "add_platform_to_network": _h_add_member,
    "remove_platform_from_network": _h_remove_member,
    "submit_assessment": _h_submit_assessment,
    "record_independent_assessment": _h_independent,
    "issue_ato": _h_issue_ato,
    "record_pentest_review": _h_review,
    "revoke_ato": _h_revoke_ato,
    "register_dataset": _h_register_dataset,
    "authorize_dataset_network": _h_authorize_network,
    "deauthorize_dataset_network": _h_deauthorize_network,
    "grant_right_to_distribute": _h_grant_rtd,
    "revoke_right_to_distribute": _h_revoke_rtd,
    "authorize_user": _h_authorize_user,
    "revoke_user_authorization": _h_revoke_user,
}
assert set(_HANDLERS) == set(ACTIONS)


def replay_audit_log(events: Union[bytes, Iterable[AuditEvent]]) -> GovernanceStore:
    """Rebuild a store from its audit log, verifying the hash chain first."""
    if isinstance(events, (bytes, bytearray)):
        events = parse_audit_log(bytes(events))
    events = list(events)
    verify_chain(events)
    store = GovernanceStore()
    for ev in events:
        if store.events and ev.at < store.events[-1].at:
            raise InvalidTransition(ev.seq, "timestamp goes backwards")
        try:
            store._apply(ev.action, ev.payload, ev.actor, ev.at, ev.seq)
        except SafeError as exc:
            raise InvalidTransition(ev.seq, f"{exc.code}: {exc.detail}") from None
        store.events.append(ev)
    return store
