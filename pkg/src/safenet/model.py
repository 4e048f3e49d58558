"""Governance record types and the immutable registry snapshot.

Every record is a frozen dataclass with a ``to_doc``/``from_doc`` pair that
maps it onto a canonical-JSON-safe document (strings, ints, bools, lists,
string-keyed maps). Sets serialize as sorted lists; optional fields are
omitted when absent rather than written as null.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping, Optional

from .errors import MalformedDocument
from .ids import (
    Apid,
    Apni,
    Arid,
    Timestamp,
    parse_apid,
    parse_apni,
    parse_arid,
    parse_dataset_id,
)


# document helpers

def _get(doc: Mapping, key: str, kind: type, what: str) -> Any:
    if not isinstance(doc, Mapping):
        raise MalformedDocument(f"{what}: expected an object")
    if key not in doc:
        raise MalformedDocument(f"{what}: missing field {key!r}")
    value = doc[key]
    if kind is int and isinstance(value, bool):
        raise MalformedDocument(f"{what}.{key}: expected int")
    if not isinstance(value, kind):
        raise MalformedDocument(f"{what}.{key}: expected {kind.__name__}")
    return value


def _str_list(doc: Mapping, key: str, what: str) -> list:
    items = _get(doc, key, list, what)
    if not all(isinstance(x, str) for x in items):
        raise MalformedDocument(f"{what}.{key}: expected list of strings")
    return items


def _opt_ts(doc: Mapping, key: str, what: str) -> Optional[Timestamp]:
    if key not in doc:
        return None
    return Timestamp.parse(_get(doc, key, str, what))


def _only_keys(doc: Mapping, allowed: set, what: str) -> None:
    extra = set(doc) - allowed
    if extra:
        raise MalformedDocument(f"{what}: unexpected fields {sorted(extra)}")


def _put_opt(doc: dict, key: str, value: Optional[Timestamp]) -> None:
    if value is not None:
        doc[key] = str(value)


def sorted_strs(items) -> list:
    return sorted(str(x) for x in items)


# records

@dataclass(frozen=True)
class PlatformRecord:
    apid: Apid
    display_name: str
    region: Arid
    public_key_id: str
    apni_memberships: frozenset = frozenset()
    operator: str = ""

    def to_doc(self) -> dict:
        return {
            "apid": str(self.apid),
            "display_name": self.display_name,
            "region": str(self.region),
            "public_key_id": self.public_key_id,
            "apni_memberships": sorted_strs(self.apni_memberships),
            "operator": self.operator,
        }

    @classmethod
    def from_doc(cls, doc: Mapping) -> "PlatformRecord":
        w = "platform"
        _only_keys(doc, {"apid", "display_name", "region", "public_key_id", "apni_memberships", "operator"}, w)
        return cls(
            apid=parse_apid(_get(doc, "apid", str, w)),
            display_name=_get(doc, "display_name", str, w),
            region=parse_arid(_get(doc, "region", str, w)),
            public_key_id=_get(doc, "public_key_id", str, w),
            apni_memberships=frozenset(parse_apni(x) for x in _str_list(doc, "apni_memberships", w))
            if "apni_memberships" in doc else frozenset(),
            operator=_get(doc, "operator", str, w) if "operator" in doc else "",
        )


@dataclass(frozen=True)
class NetworkRecord:
    apni: Apni
    authority_name: str
    authority_public_key: bytes
    framework_id: str
    members: frozenset = frozenset()

    def to_doc(self) -> dict:
        return {
            "apni": str(self.apni),
            "authority_name": self.authority_name,
            "authority_public_key": self.authority_public_key.hex(),
            "framework_id": self.framework_id,
            "members": sorted_strs(self.members),
        }

    @classmethod
    def from_doc(cls, doc: Mapping) -> "NetworkRecord":
        w = "network"
        _only_keys(doc, {"apni", "authority_name", "authority_public_key", "framework_id", "members"}, w)
        try:
            key = bytes.fromhex(_get(doc, "authority_public_key", str, w))
        except ValueError:
            raise MalformedDocument("network.authority_public_key: expected hex") from None
        return cls(
            apni=parse_apni(_get(doc, "apni", str, w)),
            authority_name=_get(doc, "authority_name", str, w),
            authority_public_key=key,
            framework_id=_get(doc, "framework_id", str, w),
            members=frozenset(parse_apid(x) for x in _str_list(doc, "members", w))
            if "members" in doc else frozenset(),
        )


@dataclass(frozen=True)
class DatasetSafeMetadata:
    """Per-dataset governance metadata.

    ``region_restrictions`` of ``None`` means unrestricted; an empty set
    denies every region. An empty ``authorized_networks`` permits no
    cross-platform analysis at all.
    """

    dataset_id: str
    sponsor: str
    rtd_holders: frozenset = frozenset()
    authorized_networks: frozenset = frozenset()
    region_restrictions: Optional[frozenset] = None

    def to_doc(self) -> dict:
        doc = {
            "dataset_id": self.dataset_id,
            "sponsor": self.sponsor,
            "rtd_holders": sorted_strs(self.rtd_holders),
            "authorized_networks": sorted_strs(self.authorized_networks),
        }
        if self.region_restrictions is not None:
            doc["region_restrictions"] = sorted_strs(self.region_restrictions)
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping) -> "DatasetSafeMetadata":
        w = "dataset"
        _only_keys(doc, {"dataset_id", "sponsor", "rtd_holders", "authorized_networks", "region_restrictions"}, w)
        regions = None
        if "region_restrictions" in doc:
            regions = frozenset(parse_arid(x) for x in _str_list(doc, "region_restrictions", w))
        return cls(
            dataset_id=parse_dataset_id(_get(doc, "dataset_id", str, w)),
            sponsor=_get(doc, "sponsor", str, w),
            rtd_holders=frozenset(parse_apid(x) for x in _str_list(doc, "rtd_holders", w))
            if "rtd_holders" in doc else frozenset(),
            authorized_networks=frozenset(parse_apni(x) for x in _str_list(doc, "authorized_networks", w))
            if "authorized_networks" in doc else frozenset(),
            region_restrictions=regions,
        )


@dataclass(frozen=True)
class UserAuthorization:
    authorization_id: str
    user_id: str
    dataset_id: str
    granted_at: Timestamp
    expires_at: Timestamp
    revoked: bool = False

    def is_active(self, t: Timestamp) -> bool:
        return not self.revoked and self.granted_at <= t < self.expires_at

    def to_doc(self) -> dict:
        return {
            "authorization_id": self.authorization_id,
            "user_id": self.user_id,
            "dataset_id": self.dataset_id,
            "granted_at": str(self.granted_at),
            "expires_at": str(self.expires_at),
            "revoked": self.revoked,
        }

    @classmethod
    def from_doc(cls, doc: Mapping) -> "UserAuthorization":
        w = "authorization"
        _only_keys(doc, {"authorization_id", "user_id", "dataset_id", "granted_at", "expires_at", "revoked"}, w)
        return cls(
            authorization_id=_get(doc, "authorization_id", str, w),
            user_id=_get(doc, "user_id", str, w),
            dataset_id=parse_dataset_id(_get(doc, "dataset_id", str, w)),
            granted_at=Timestamp.parse(_get(doc, "granted_at", str, w)),
            expires_at=Timestamp.parse(_get(doc, "expires_at", str, w)),
            revoked=_get(doc, "revoked", bool, w) if "revoked" in doc else False,
        )


_ATO_STAGES = (
    "assessment_submitted_at",
    "independent_assessment_at",
    "ato_issued_at",
)


@dataclass(frozen=True)
class AtoRecord:
    apid: Apid
    framework_id: str = ""
    assessment_submitted_at: Optional[Timestamp] = None
    independent_assessment_at: Optional[Timestamp] = None
    ato_issued_at: Optional[Timestamp] = None
    ato_valid_until: Optional[Timestamp] = None
    last_pentest_review_at: Optional[Timestamp] = None
    revoked_at: Optional[Timestamp] = None
    issuer: str = ""

    def stage_violations(self) -> list:
        out = []
        prev_name, prev = None, None
        for name in _ATO_STAGES:
            cur = getattr(self, name)
            if cur is not None and prev is not None and cur < prev:
                out.append(f"{name} precedes {prev_name}")
            if cur is not None:
                prev_name, prev = name, cur
        if self.ato_issued_at is not None and self.independent_assessment_at is None:
            out.append("ATO issued without independent assessment")
        if self.independent_assessment_at is not None and self.assessment_submitted_at is None:
            out.append("independent assessment without submission")
        return out

    def to_doc(self) -> dict:
        doc = {"apid": str(self.apid), "framework_id": self.framework_id, "issuer": self.issuer}
        for name in (*_ATO_STAGES, "ato_valid_until", "last_pentest_review_at", "revoked_at"):
            _put_opt(doc, name, getattr(self, name))
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping) -> "AtoRecord":
        w = "ato"
        names = (*_ATO_STAGES, "ato_valid_until", "last_pentest_review_at", "revoked_at")
        _only_keys(doc, {"apid", "framework_id", "issuer", *names}, w)
        return cls(
            apid=parse_apid(_get(doc, "apid", str, w)),
            framework_id=_get(doc, "framework_id", str, w),
            issuer=_get(doc, "issuer", str, w),
            **{n: _opt_ts(doc, n, w) for n in names},
        )


def _frozen(d: Optional[Mapping]) -> Mapping:
    return MappingProxyType(dict(d or {}))


@dataclass(frozen=True)
class RegistryView:
    """Immutable snapshot of one sponsor's governance state."""

    platforms: Mapping = field(default_factory=dict)
    networks: Mapping = field(default_factory=dict)
    datasets: Mapping = field(default_factory=dict)
    user_authorizations: Mapping = field(default_factory=dict)
    atos: Mapping = field(default_factory=dict)

    def __post_init__(self):
        for name in ("platforms", "networks", "datasets", "user_authorizations", "atos"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    def to_doc(self) -> dict:
        return {
            "platforms": [self.platforms[k].to_doc() for k in sorted(self.platforms)],
            "networks": [self.networks[k].to_doc() for k in sorted(self.networks)],
            "datasets": [self.datasets[k].to_doc() for k in sorted(self.datasets)],
            "user_authorizations": [self.user_authorizations[k].to_doc() for k in sorted(self.user_authorizations)],
            "atos": [self.atos[k].to_doc() for k in sorted(self.atos)],
        }

    @classmethod
    def from_doc(cls, doc: Mapping) -> "RegistryView":
        w = "registry"

        def records(key, kind, ident):
            out = {}
            for item in _get(doc, key, list, w) if key in doc else []:
                rec = kind.from_doc(item)
                out[getattr(rec, ident)] = rec
            return out

        return cls(
            platforms=records("platforms", PlatformRecord, "apid"),
            networks=records("networks", NetworkRecord, "apni"),
            datasets=records("datasets", DatasetSafeMetadata, "dataset_id"),
            user_authorizations=records("user_authorizations", UserAuthorization, "authorization_id"),
            atos=records("atos", AtoRecord, "apid"),
        )


# validation

@dataclass(frozen=True, order=True)
class Violation:
    kind: str
    subject: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.kind}({self.subject}){': ' + self.detail if self.detail else ''}"


def validate_registry_view(view: RegistryView) -> list:
    """Return every broken reference or invariant in ``view`` (sorted)."""
    out = []
    add = lambda kind, subject, detail="": out.append(Violation(kind, str(subject), detail))  # noqa: E731

    for key, p in view.platforms.items():
        if key != p.apid:
            add("KeyMismatch", key, f"platform stored under {key}, record says {p.apid}")
        if p.region.is_global:
            add("GlobalRegion", p.apid, "platform region must be concrete")
        for apni in p.apni_memberships:
            net = view.networks.get(apni)
            if net is None:
                add("DanglingApni", apni, f"membership of {p.apid}")
            elif p.apid not in net.members:
                add("MembershipMismatch", p.apid, f"claims {apni} but network does not list it")

    for key, n in view.networks.items():
        if key != n.apni:
            add("KeyMismatch", key, f"network stored under {key}, record says {n.apni}")
        if not n.authority_public_key:
            add("EmptyAuthorityKey", n.apni)
        for apid in n.members:
            p = view.platforms.get(apid)
            if p is None:
                add("DanglingApid", apid, f"member of {n.apni}")
            elif n.apni not in p.apni_memberships:
                add("MembershipMismatch", apid, f"listed by {n.apni} but platform does not list it")

    for key, d in view.datasets.items():
        if key != d.dataset_id:
            add("KeyMismatch", key, f"dataset stored under {key}, record says {d.dataset_id}")
        for apid in d.rtd_holders:
            if apid not in view.platforms:
                add("DanglingApid", apid, f"rtd holder of {d.dataset_id}")
        for apni in d.authorized_networks:
            if apni not in view.networks:
                add("DanglingApni", apni, f"authorized network of {d.dataset_id}")

    for key, a in view.user_authorizations.items():
        if key != a.authorization_id:
            add("KeyMismatch", key, f"authorization stored under {key}, record says {a.authorization_id}")
        if a.dataset_id not in view.datasets:
            add("DanglingDataset", a.dataset_id, f"authorization {a.authorization_id}")
        if not a.granted_at < a.expires_at:
            add("BadInterval", a.authorization_id, "granted_at must precede expires_at")

    for key, r in view.atos.items():
        if key != r.apid:
            add("KeyMismatch", key, f"ATO stored under {key}, record says {r.apid}")
        if r.apid not in view.platforms:
            add("DanglingApid", r.apid, "ATO record")
        for v in r.stage_violations():
            add("AtoStageOrder", r.apid, v)

    return sorted(out)

