"""Transfer decision engine.

:func:`evaluate_transfer` answers whether a dataset hosted on a source
platform may move to a user's environment on a destination platform. It
always runs all six checks, in order, so a DENY carries every failing
condition rather than the first one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional

from .attestation import VerifiedIdentity
from .errors import MalformedDocument, MalformedView
from .ids import Apid, Timestamp, parse_apid
from .model import RegistryView, _get, _only_keys, validate_registry_view

ALLOW = "ALLOW"
DENY = "DENY"

DATASET_UNKNOWN = "DATASET_UNKNOWN"
PLATFORM_UNKNOWN = "PLATFORM_UNKNOWN"
USER_NOT_AUTHORIZED = "USER_NOT_AUTHORIZED"
USER_AUTHORIZATION_EXPIRED = "USER_AUTHORIZATION_EXPIRED"
SOURCE_NO_RIGHT_TO_DISTRIBUTE = "SOURCE_NO_RIGHT_TO_DISTRIBUTE"
DEST_NOT_IN_AUTHORIZED_NETWORK = "DEST_NOT_IN_AUTHORIZED_NETWORK"
DEST_ATO_INVALID = "DEST_ATO_INVALID"
REGION_NOT_AUTHORIZED = "REGION_NOT_AUTHORIZED"
ATTESTATION_INVALID = "ATTESTATION_INVALID"
ATTESTATION_APID_MISMATCH = "ATTESTATION_APID_MISMATCH"

REASON_CODES = (
    DATASET_UNKNOWN,
    PLATFORM_UNKNOWN,
    USER_NOT_AUTHORIZED,
    USER_AUTHORIZATION_EXPIRED,
    SOURCE_NO_RIGHT_TO_DISTRIBUTE,
    DEST_NOT_IN_AUTHORIZED_NETWORK,
    DEST_ATO_INVALID,
    REGION_NOT_AUTHORIZED,
    ATTESTATION_INVALID,
    ATTESTATION_APID_MISMATCH,
)

CHECKS = (
    "resolution",
    "user_authorization",
    "source_right_to_distribute",
    "destination_authorized_environment",
    "region",
    "attestation",
)


@dataclass(frozen=True)
class TransferQuery:
    dataset_id: str
    source_apid: Apid
    dest_apid: Apid
    user_id: str
    authorization_id: str
    now: Timestamp
    verified_attestation: Optional[VerifiedIdentity] = None
    # set when an envelope was presented but failed verification
    attestation_failure: Optional[str] = None

    def to_doc(self) -> dict:
        doc = {
            "dataset_id": self.dataset_id,
            "source_apid": str(self.source_apid),
            "dest_apid": str(self.dest_apid),
            "user_id": self.user_id,
            "authorization_id": self.authorization_id,
            "now": str(self.now),
        }
        if self.verified_attestation is not None:
            doc["verified_attestation"] = self.verified_attestation.to_doc()
        if self.attestation_failure is not None:
            doc["attestation_failure"] = self.attestation_failure
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping) -> "TransferQuery":
        w = "query"
        _only_keys(doc, {
            "dataset_id", "source_apid", "dest_apid", "user_id", "authorization_id", "now",
            "verified_attestation", "attestation_failure",
        }, w)
        va = doc.get("verified_attestation")
        failure = doc.get("attestation_failure")
        if failure is not None and not isinstance(failure, str):
            raise MalformedDocument("query.attestation_failure: expected string")
        return cls(
            dataset_id=_get(doc, "dataset_id", str, w),
            source_apid=parse_apid(_get(doc, "source_apid", str, w)),
            dest_apid=parse_apid(_get(doc, "dest_apid", str, w)),
            user_id=_get(doc, "user_id", str, w),
            authorization_id=_get(doc, "authorization_id", str, w),
            now=Timestamp.parse(_get(doc, "now", str, w)),
            verified_attestation=VerifiedIdentity.from_doc(va) if va is not None else None,
            attestation_failure=failure,
        )


@dataclass(frozen=True)
class CheckResult:
    check_name: str
    passed: bool
    reason: Optional[str] = None
    detail: str = ""
    evaluated: bool = True

    def to_doc(self) -> dict:
        doc = {"check": self.check_name, "passed": self.passed, "detail": self.detail}
        if self.reason is not None:
            doc["reason"] = self.reason
        if not self.evaluated:
            doc["evaluated"] = False
        return doc


@dataclass(frozen=True)
class Decision:
    verdict: str
    reasons: tuple
    trace: tuple
    query_echo: TransferQuery
    decided_at: Timestamp
    advisory: bool = False

    @property
    def allowed(self) -> bool:
        return self.verdict == ALLOW

    def to_doc(self) -> dict:
        doc = {
            "decision": self.verdict,
            "reasons": list(self.reasons),
            "trace": [c.to_doc() for c in self.trace],
            "query": self.query_echo.to_doc(),
            "decided_at": str(self.decided_at),
        }
        if self.advisory:
            doc["advisory"] = True
        return doc


def _pass(name: str, detail: str) -> CheckResult:
    return CheckResult(name, True, None, detail)


def _fail(name: str, reason: str, detail: str) -> CheckResult:
    return CheckResult(name, False, reason, detail)


def evaluate_transfer(
    query: TransferQuery,
    view: RegistryView,
    ato_status_of: Callable,
    *,
    advisory: bool = False,
    check_view: bool = True,
) -> Decision:
    """Evaluate all six governance checks for ``query`` against ``view``.

    With ``advisory=True`` (dry-run queries, where no attestation exists)
    the attestation check is reported as not evaluated and does not affect
    the verdict.
    """
    if check_view:
        violations = validate_registry_view(view)
        if violations:
            raise MalformedView("; ".join(str(v) for v in violations))

    ds = view.datasets.get(query.dataset_id)
    src = view.platforms.get(query.source_apid)
    dst = view.platforms.get(query.dest_apid)
    trace = []

    # 1. resolution
    name = CHECKS[0]
    if ds is None:
        trace.append(_fail(name, DATASET_UNKNOWN, f"dataset {query.dataset_id} is not registered"))
    elif src is None or dst is None:
        missing = [str(a) for a, p in ((query.source_apid, src), (query.dest_apid, dst)) if p is None]
        trace.append(_fail(name, PLATFORM_UNKNOWN, f"platform(s) not registered: {', '.join(missing)}"))
    else:
        trace.append(_pass(name, "dataset, source and destination are registered"))

    # 2. user authorization
    name = CHECKS[1]
    auth = view.user_authorizations.get(query.authorization_id)
    if ds is None:
        trace.append(_fail(name, DATASET_UNKNOWN, "cannot check authorization for an unknown dataset"))
    elif auth is None:
        trace.append(_fail(name, USER_NOT_AUTHORIZED, f"no authorization {query.authorization_id}"))
    elif auth.user_id != query.user_id or auth.dataset_id != query.dataset_id:
        trace.append(_fail(name, USER_NOT_AUTHORIZED,
                           f"authorization {auth.authorization_id} is for {auth.user_id} on {auth.dataset_id}"))
    elif auth.revoked:
        trace.append(_fail(name, USER_NOT_AUTHORIZED, f"authorization {auth.authorization_id} was revoked"))
    elif query.now < auth.granted_at:
        trace.append(_fail(name, USER_NOT_AUTHORIZED,
                           f"authorization {auth.authorization_id} not valid before {auth.granted_at}"))
    elif query.now >= auth.expires_at:
        trace.append(_fail(name, USER_AUTHORIZATION_EXPIRED,
                           f"authorization {auth.authorization_id} expired at {auth.expires_at}"))
    else:
        trace.append(_pass(name, f"{query.user_id} holds active authorization {auth.authorization_id}"))

    # 3. source right to distribute
    name = CHECKS[2]
    if ds is None:
        trace.append(_fail(name, DATASET_UNKNOWN, "unknown dataset"))
    elif src is None:
        trace.append(_fail(name, PLATFORM_UNKNOWN, f"source {query.source_apid} is not registered"))
    elif query.source_apid not in ds.rtd_holders:
        trace.append(_fail(name, SOURCE_NO_RIGHT_TO_DISTRIBUTE,
                           f"{query.source_apid} does not hold the right to distribute {ds.dataset_id}"))
    else:
        trace.append(_pass(name, f"{query.source_apid} holds the right to distribute {ds.dataset_id}"))

    # 4. destination is an authorized environment
    name = CHECKS[3]
    if ds is None:
        trace.append(_fail(name, DATASET_UNKNOWN, "unknown dataset"))
    elif dst is None:
        trace.append(_fail(name, PLATFORM_UNKNOWN, f"destination {query.dest_apid} is not registered"))
    else:
        shared = sorted(str(a) for a in ds.authorized_networks & dst.apni_memberships)
        status = ato_status_of(query.dest_apid)
        in_network = bool(shared)
        ato_ok = status.is_active
        problems = []
        if not in_network:
            problems.append(f"{query.dest_apid} is in none of the dataset's authorized networks")
        if not ato_ok:
            problems.append(f"ATO status of {query.dest_apid} is {status}")
        if not in_network:
            trace.append(_fail(name, DEST_NOT_IN_AUTHORIZED_NETWORK, "; ".join(problems)))
        elif not ato_ok:
            trace.append(_fail(name, DEST_ATO_INVALID, "; ".join(problems)))
        else:
            trace.append(_pass(name, f"member of {', '.join(shared)} with ATO {status}"))

    # 5. region
    name = CHECKS[4]
    if ds is None:
        trace.append(_fail(name, DATASET_UNKNOWN, "unknown dataset"))
    elif ds.region_restrictions is None:
        trace.append(_pass(name, "dataset has no regional restriction"))
    elif dst is None:
        trace.append(_fail(name, PLATFORM_UNKNOWN, f"destination {query.dest_apid} is not registered"))
    elif any(r.is_global for r in ds.region_restrictions) or dst.region in ds.region_restrictions:
        trace.append(_pass(name, f"{dst.region} is an authorized region"))
    else:
        allowed = ", ".join(sorted(str(r) for r in ds.region_restrictions)) or "none"
        trace.append(_fail(name, REGION_NOT_AUTHORIZED, f"{dst.region} is not among authorized regions ({allowed})"))

    # 6. attestation
    trace.append(_attestation_check(query, ds, advisory))

    trace = tuple(trace)
    reasons = tuple(c.reason for c in trace if not c.passed)
    return Decision(
        verdict=DENY if reasons else ALLOW,
        reasons=reasons,
        trace=trace,
        query_echo=query,
        decided_at=query.now,
        advisory=advisory,
    )


def _attestation_check(query: TransferQuery, ds, advisory: bool) -> CheckResult:
    name = CHECKS[5]
    va = query.verified_attestation
    if advisory:
        return CheckResult(name, True, None, "NOT-EVALUATED: dry-run query, no attestation presented", evaluated=False)
    if query.attestation_failure is not None:
        return _fail(name, ATTESTATION_INVALID, f"attestation rejected: {query.attestation_failure}")
    if ds is None:
        return _fail(name, DATASET_UNKNOWN, "unknown dataset")
    if va is None:
        if query.source_apid == query.dest_apid:
            return _pass(name, "self-transfer; no attestation required")
        return _fail(name, ATTESTATION_INVALID, "no verified attestation presented by the destination")
    if va.apid != query.dest_apid:
        return _fail(name, ATTESTATION_APID_MISMATCH,
                     f"attestation proves {va.apid}, request names {query.dest_apid}")
    proven = sorted(str(a) for a in va.apnis & ds.authorized_networks)
    if not proven:
        return _fail(name, ATTESTATION_INVALID,
                     "attestation proves no membership in the dataset's authorized networks")
    return _pass(name, f"chain of trust verified for {va.apid} in {', '.join(proven)}")


def render_trace(decision: Decision) -> str:
    lines = []
    for i, c in enumerate(decision.trace, 1):
        if not c.evaluated:
            mark = "NOT-EVALUATED"
        else:
            mark = "PASS" if c.passed else "FAIL"
        code = c.reason or "-"
        lines.append(f"{i}. {c.check_name:<36} {mark:<13} {code:<30} {c.detail}".rstrip())
    tail = f"VERDICT: {decision.verdict}"
    if decision.reasons:
        tail += f" ({', '.join(decision.reasons)})"
    if decision.advisory:
        tail += " (advisory)"
    lines.append(tail)
    return "\n".join(lines)
