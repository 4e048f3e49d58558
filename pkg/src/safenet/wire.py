"""HTTP+JSON protocol handlers.

Handlers are plain objects with ``handle(method, target, body, headers)``
returning a :class:`Response`; they know nothing about sockets. The same
bytes flow through the in-process transport used by the scenario runner
and through :mod:`safenet.server` in deployment.

Two applications live here:

* :class:`RegistryApp` fronts a :class:`GovernanceStore` with the
  ``/registry/v1`` administration and dry-run endpoints.
* :class:`PlatformAgent` is one platform's ``/safe/v1`` interoperability
  surface: metadata, challenges and transfer requests.
"""

from __future__ import annotations

import logging
import re
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional
from urllib.parse import parse_qs, unquote, urlsplit

from . import __version__
from .attestation import (
    DEFAULT_FRESHNESS_WINDOW,
    AttestationDocument,
    KeyPair,
    PlatformCertificate,
    SignedEnvelope,
    TrustAnchorSet,
    generate_nonce,
    issue_certificate,
    sign_attestation,
    verify_envelope,
)
from .canonical import canonical_bytes, loads
from .errors import AttestationError, MalformedDocument, MalformedView, SafeError
from .governance import GENESIS_HASH, AuditEvent, GovernanceStore, ato_status_function, compute_ato_status
from .ids import Apid, Arid, Timestamp, parse_apid, parse_apni, parse_arid, parse_dataset_id
from .model import PlatformRecord, RegistryView, _get, _only_keys, sorted_strs
from .policy import ALLOW, TransferQuery, evaluate_transfer

log = logging.getLogger(__name__)

MAX_BODY = 64 * 1024
SERVICE_VERSION = f"safe/1 safenet/{__version__}"
DEFAULT_GRANT_TTL = 3600


@dataclass
class Response:
    status: int
    body: bytes
    headers: dict = field(default_factory=lambda: {"Content-Type": "application/json"})

    def json(self):
        return loads(self.body)


def json_response(status: int, doc) -> Response:
    return Response(status, canonical_bytes(doc))


def error_response(status: int, code: str, detail: str) -> Response:
    return json_response(status, {"error": code, "detail": detail})


class App:
    """Regex router plus uniform error handling."""

    routes: list = []

    def handle(self, method: str, target: str, body: bytes = b"", headers: Optional[Mapping] = None) -> Response:
        headers = {k.lower(): v for k, v in (headers or {}).items()}
        if len(body) > MAX_BODY:
            return error_response(413, "BodyTooLarge", f"request bodies are limited to {MAX_BODY} bytes")
        parts = urlsplit(target)
        path = parts.path
        allowed = []
        for m, pattern, name in self.routes:
            match = pattern.fullmatch(path)
            if not match:
                continue
            if m != method:
                allowed.append(m)
                continue
            args = {k: unquote(v) for k, v in match.groupdict().items()}
            try:
                return getattr(self, name)(
                    body=body, headers=headers, query=parse_qs(parts.query), **args
                )
            except SafeError as exc:
                return error_response(exc.http_status, exc.code, exc.detail)
        if allowed:
            return error_response(405, "MethodNotAllowed", f"{method} not allowed on {path}")
        return error_response(404, "NotFound", f"no route for {path}")


def _route(method: str, path: str, name: str):
    return (method, re.compile(path.replace("{", "(?P<").replace("}", ">[^/]+)")), name)


def _body_doc(body: bytes) -> dict:
    if not body:
        raise MalformedDocument("request body required")
    doc = loads(body)
    if not isinstance(doc, dict):
        raise MalformedDocument("request body must be a JSON object")
    return doc


# registry

class RegistryApp(App):
    routes = [
        _route("GET", "/registry/v1/snapshot", "get_snapshot"),
        _route("GET", "/registry/v1/audit", "get_audit"),
        _route("POST", "/registry/v1/platforms", "post_platform"),
        _route("GET", "/registry/v1/platforms/{apid}", "get_platform"),
        _route("POST", "/registry/v1/networks", "post_network"),
        _route("GET", "/registry/v1/networks/{apni}", "get_network"),
        _route("POST", "/registry/v1/networks/{apni}/members", "post_member"),
        _route("DELETE", "/registry/v1/networks/{apni}/members/{apid}", "delete_member"),
        _route("POST", "/registry/v1/assessments", "post_assessment"),
        _route("POST", "/registry/v1/assessments/{apid}/independent", "post_independent"),
        _route("POST", "/registry/v1/atos", "post_ato"),
        _route("GET", "/registry/v1/atos/{apid}", "get_ato"),
        _route("DELETE", "/registry/v1/atos/{apid}", "delete_ato"),
        _route("POST", "/registry/v1/atos/{apid}/reviews", "post_review"),
        _route("POST", "/registry/v1/atos/{apid}/revocation", "delete_ato"),
        _route("POST", "/registry/v1/datasets", "post_dataset"),
        _route("GET", "/registry/v1/datasets/{dataset_id}", "get_dataset"),
        _route("POST", "/registry/v1/datasets/{dataset_id}/networks", "post_dataset_network"),
        _route("DELETE", "/registry/v1/datasets/{dataset_id}/networks/{apni}", "delete_dataset_network"),
        _route("POST", "/registry/v1/datasets/{dataset_id}/rtd-grants", "post_grant"),
        _route("DELETE", "/registry/v1/datasets/{dataset_id}/rtd-grants/{apid}", "delete_grant"),
        _route("POST", "/registry/v1/users/authorizations", "post_authorization"),
        _route("DELETE", "/registry/v1/users/authorizations/{authorization_id}", "delete_authorization"),
        _route("POST", "/registry/v1/decisions:evaluate", "post_evaluate"),
    ]

    def __init__(self, store: GovernanceStore, clock: Callable[[], Timestamp] = Timestamp.now,
                 admin_token: Optional[str] = None):
        self.store = store
        self.clock = clock
        self.admin_token = admin_token

    def _admin(self, headers, action: str, payload: dict, status: int = 200, with_status: bool = False) -> Response:
        if self.admin_token is not None and headers.get("authorization") != f"Bearer {self.admin_token}":
            return error_response(401, "Unauthorized", "admin bearer token required")
        actor = headers.get("x-safe-actor", "admin")
        now = self.clock()
        result = self.store.execute(action, payload, actor=actor, now=now)
        doc = result.to_doc()
        if with_status:
            doc["status"] = str(compute_ato_status(result, now))
        return json_response(status, doc)

    # reads

    def get_snapshot(self, **_):
        return json_response(200, self.store.state_doc())

    def get_audit(self, query, **_):
        try:
            offset = int(query.get("offset", ["0"])[0])
            limit = int(query.get("limit", ["100"])[0])
        except ValueError:
            raise MalformedDocument("offset and limit must be integers") from None
        if offset < 0 or not 1 <= limit <= 1000:
            raise MalformedDocument("offset must be >= 0 and limit in 1..1000")
        events = list(self.store.events)
        page = events[offset:offset + limit]
        return json_response(200, {
            "events": [e.to_doc() for e in page],
            "offset": offset,
            "limit": limit,
            "total": len(events),
        })

    def get_platform(self, apid, **_):
        rec = self.store.platforms.get(parse_apid(apid))
        if rec is None:
            return error_response(404, "NotFound", f"unknown platform {apid}")
        return json_response(200, rec.to_doc())

    def get_network(self, apni, **_):
        rec = self.store.networks.get(parse_apni(apni))
        if rec is None:
            return error_response(404, "NotFound", f"unknown network {apni}")
        return json_response(200, rec.to_doc())

    def get_dataset(self, dataset_id, **_):
        rec = self.store.datasets.get(parse_dataset_id(dataset_id))
        if rec is None:
            return error_response(404, "NotFound", f"unknown dataset {dataset_id}")
        return json_response(200, rec.to_doc())

    def get_ato(self, apid, **_):
        rec = self.store.atos.get(parse_apid(apid))
        if rec is None:
            return error_response(404, "NotFound", f"unknown platform {apid}")
        return json_response(200, {**rec.to_doc(), "status": str(compute_ato_status(rec, self.clock()))})

    # mutations

    def post_platform(self, body, headers, **_):
        return self._admin(headers, "register_platform", _body_doc(body), 201)

    def post_network(self, body, headers, **_):
        return self._admin(headers, "create_network", _body_doc(body), 201)

    def post_member(self, body, headers, apni, **_):
        doc = _body_doc(body)
        _only_keys(doc, {"apid"}, "membership")
        return self._admin(headers, "add_platform_to_network", {"apni": apni, "apid": _get(doc, "apid", str, "membership")})

    def delete_member(self, headers, apni, apid, **_):
        return self._admin(headers, "remove_platform_from_network", {"apni": apni, "apid": apid})

    def post_assessment(self, body, headers, **_):
        return self._admin(headers, "submit_assessment", _body_doc(body), with_status=True)

    def post_independent(self, headers, apid, **_):
        return self._admin(headers, "record_independent_assessment", {"apid": apid}, with_status=True)

    def post_ato(self, body, headers, **_):
        return self._admin(headers, "issue_ato", _body_doc(body), with_status=True)

    def post_review(self, headers, apid, **_):
        return self._admin(headers, "record_pentest_review", {"apid": apid}, with_status=True)

    def delete_ato(self, headers, apid, **_):
        return self._admin(headers, "revoke_ato", {"apid": apid}, with_status=True)

    def post_dataset(self, body, headers, **_):
        return self._admin(headers, "register_dataset", _body_doc(body), 201)

    def post_dataset_network(self, body, headers, dataset_id, **_):
        doc = _body_doc(body)
        _only_keys(doc, {"apni"}, "dataset_network")
        return self._admin(headers, "authorize_dataset_network",
                           {"dataset_id": dataset_id, "apni": _get(doc, "apni", str, "dataset_network")})

    def delete_dataset_network(self, headers, dataset_id, apni, **_):
        return self._admin(headers, "deauthorize_dataset_network", {"dataset_id": dataset_id, "apni": apni})

    def post_grant(self, body, headers, dataset_id, **_):
        doc = _body_doc(body)
        _only_keys(doc, {"apid"}, "rtd_grant")
        return self._admin(headers, "grant_right_to_distribute",
                           {"dataset_id": dataset_id, "apid": _get(doc, "apid", str, "rtd_grant")}, 201)

    def delete_grant(self, headers, dataset_id, apid, **_):
        return self._admin(headers, "revoke_right_to_distribute", {"dataset_id": dataset_id, "apid": apid})

    def post_authorization(self, body, headers, **_):
        return self._admin(headers, "authorize_user", _body_doc(body), 201)

    def delete_authorization(self, headers, authorization_id, **_):
        return self._admin(headers, "revoke_user_authorization", {"authorization_id": authorization_id})

    def post_evaluate(self, body, **_):
        doc = dict(_body_doc(body))
        advisory = doc.pop("advisory", False)
        if not isinstance(advisory, bool):
            raise MalformedDocument("advisory must be a boolean")
        query = TransferQuery.from_doc(doc)
        view = self.store.snapshot()
        decision = evaluate_transfer(query, view, ato_status_function(view, query.now), advisory=advisory)
        return json_response(200, decision.to_doc())


# platform agent

@dataclass
class PlatformIdentity:
    """What a platform knows about itself: keys, certificates, hosted data."""

    apid: Apid
    region: Arid
    keys: KeyPair
    certificates: list = field(default_factory=list)
    hosted_datasets: frozenset = frozenset()
    framework_id: str = ""

    def to_doc(self) -> dict:
        return {
            "apid": str(self.apid),
            "region": str(self.region),
            "key_seed": self.keys.secret.hex(),
            "certificates": [c.to_doc() for c in sorted(self.certificates, key=lambda c: c.apni)],
            "hosted_datasets": sorted(self.hosted_datasets),
            "framework_id": self.framework_id,
        }

    @classmethod
    def from_doc(cls, doc: Mapping) -> "PlatformIdentity":
        w = "identity"
        _only_keys(doc, {"apid", "region", "key_seed", "certificates", "hosted_datasets", "framework_id"}, w)
        try:
            seed = bytes.fromhex(_get(doc, "key_seed", str, w))
            keys = KeyPair.from_seed(seed)
        except ValueError:
            raise MalformedDocument("identity.key_seed: expected 64 hex characters") from None
        return cls(
            apid=parse_apid(_get(doc, "apid", str, w)),
            region=parse_arid(_get(doc, "region", str, w)),
            keys=keys,
            certificates=[PlatformCertificate.from_doc(c) for c in doc.get("certificates", [])],
            hosted_datasets=frozenset(parse_dataset_id(d) for d in doc.get("hosted_datasets", [])),
            framework_id=doc.get("framework_id", ""),
        )


class PlatformAgent(App):
    routes = [
        _route("GET", "/safe/v1/platform", "get_platform"),
        _route("GET", "/safe/v1/datasets/{dataset_id}", "get_dataset"),
        _route("POST", "/safe/v1/transfer-challenges", "post_challenge"),
        _route("POST", "/safe/v1/transfer-requests", "post_transfer"),
        _route("GET", "/safe/v1/audit", "get_audit"),
    ]

    def __init__(
        self,
        identity: PlatformIdentity,
        registry: Callable[[], RegistryView],
        clock: Callable[[], Timestamp] = Timestamp.now,
        entropy: Optional[Callable[[int], bytes]] = None,
        freshness_window: int = DEFAULT_FRESHNESS_WINDOW,
        grant_ttl: int = DEFAULT_GRANT_TTL,
    ):
        self.identity = identity
        self.registry = registry
        self.clock = clock
        self.entropy = entropy
        self.freshness_window = freshness_window
        self.grant_ttl = grant_ttl
        self._challenges: dict = {}
        self.events: list = []
        self._lock = threading.Lock()

    @property
    def apid(self) -> Apid:
        return self.identity.apid

    # audit

    def _record(self, action: str, payload: dict, now: Timestamp) -> None:
        with self._lock:
            prev = self.events[-1].hash if self.events else GENESIS_HASH
            ev = AuditEvent(len(self.events), now, str(self.apid), action, payload, prev)
            self.events.append(replace(ev, hash=ev.compute_hash()))

    def get_audit(self, **_):
        return json_response(200, {"events": [e.to_doc() for e in self.events], "total": len(self.events)})

    # metadata

    def _own_record(self, view: RegistryView) -> Optional[PlatformRecord]:
        return view.platforms.get(self.apid)

    def metadata_doc(self, view: RegistryView) -> dict:
        rec = self._own_record(view)
        if rec is not None:
            apnis = sorted_strs(rec.apni_memberships)
        else:
            apnis = sorted_strs({c.apni for c in self.identity.certificates})
        return {
            "apid": str(self.apid),
            "apnis": apnis,
            "region": str(self.identity.region),
            "service_version": SERVICE_VERSION,
        }

    def get_platform(self, **_):
        return json_response(200, self.metadata_doc(self.registry()))

    def get_dataset(self, dataset_id, **_):
        dataset_id = parse_dataset_id(dataset_id)
        meta = self.registry().datasets.get(dataset_id)
        if meta is None or dataset_id not in self.identity.hosted_datasets:
            return error_response(404, "UnknownDataset", f"{dataset_id} is not hosted on {self.apid}")
        doc = {
            "dataset_id": dataset_id,
            "right_to_distribute_here": self.apid in meta.rtd_holders,
            "authorized_networks": sorted_strs(meta.authorized_networks),
        }
        if meta.region_restrictions is not None:
            doc["region_restrictions"] = sorted_strs(meta.region_restrictions)
        return json_response(200, doc)

    # challenge-response

    def post_challenge(self, **_):
        now = self.clock()
        nonce = generate_nonce(self.entropy) if self.entropy else generate_nonce()
        expires = now + self.freshness_window
        with self._lock:
            self._challenges[nonce] = expires
            # drop challenges that can no longer be redeemed
            for n in [n for n, exp in self._challenges.items() if exp < now]:
                del self._challenges[n]
        return json_response(200, {"nonce": nonce, "expires_at": str(expires)})

    def _consume_nonce(self, nonce: str, now: Timestamp) -> Optional[str]:
        """Return a failure detail, or None if the nonce was outstanding."""
        with self._lock:
            expires = self._challenges.pop(nonce, None)
        if expires is None:
            return "NonceMismatch: nonce was not issued by this platform or was already used"
        if now > expires:
            return f"NonceMismatch: challenge expired at {expires}"
        return None

    def post_transfer(self, body, **_):
        now = self.clock()
        doc = _body_doc(body)
        w = "transfer_request"
        _only_keys(doc, {"dataset_id", "user_id", "authorization_id", "destination_envelope", "nonce"}, w)
        dataset_id = parse_dataset_id(_get(doc, "dataset_id", str, w))
        user_id = _get(doc, "user_id", str, w)
        authorization_id = _get(doc, "authorization_id", str, w)
        nonce = _get(doc, "nonce", str, w)
        env_doc = _get(doc, "destination_envelope", dict, w)
        env = SignedEnvelope.from_doc(env_doc)

        view = self.registry()
        failure = self._consume_nonce(nonce, now)
        identity = None
        if failure is None:
            anchors = TrustAnchorSet.from_networks(view.networks.values())
            try:
                identity = verify_envelope(env, anchors, nonce, now, self.freshness_window)
            except AttestationError as exc:
                failure = f"{exc.code}: {exc.detail}"

        query = TransferQuery(
            dataset_id=dataset_id,
            source_apid=self.apid,
            dest_apid=env.payload.apid,
            user_id=user_id,
            authorization_id=authorization_id,
            now=now,
            verified_attestation=identity,
            attestation_failure=failure,
        )
        try:
            decision = evaluate_transfer(query, view, ato_status_function(view, now))
        except MalformedView as exc:
            return error_response(500, exc.code, exc.detail)

        out = {
            "decision": decision.verdict,
            "reasons": list(decision.reasons),
            "trace": [c.to_doc() for c in decision.trace],
        }
        if decision.verdict == ALLOW:
            expires = now + self.grant_ttl
            auth = view.user_authorizations.get(authorization_id)
            if auth is not None and auth.expires_at < expires:
                expires = auth.expires_at
            out["grant"] = {
                "grant_id": f"xfer-{nonce}",
                "dataset_id": dataset_id,
                "destination_apid": str(query.dest_apid),
                "expires_at": str(expires),
                "redistribution": False,
            }
        self._record("transfer_request", {"query": query.to_doc(), "response": out}, now)
        log.info("transfer %s %s -> %s: %s", dataset_id, self.apid, query.dest_apid, decision.verdict)
        return json_response(200 if decision.verdict == ALLOW else 403, out)

    # requester side

    def certificate_for(self, authorized_networks) -> Optional[PlatformCertificate]:
        certs = sorted(self.identity.certificates, key=lambda c: c.apni)
        wanted = {str(a) for a in authorized_networks}
        for c in certs:
            if str(c.apni) in wanted:
                return c
        return certs[0] if certs else None

    def make_envelope(self, nonce: str, authorized_networks=(), now: Optional[Timestamp] = None) -> SignedEnvelope:
        """Answer a challenge from a distributing platform."""
        now = now if now is not None else self.clock()
        cert = self.certificate_for(authorized_networks)
        if cert is None:
            # uncertified: present a self-signed certificate the peer cannot anchor
            cert = issue_certificate(self.identity.keys.secret, self.apid, self.identity.keys.public,
                                     parse_apni("apni:self:uncertified"), now, now + 1)
        doc = AttestationDocument(
            apid=self.apid,
            apni_memberships=tuple(c.apni for c in self.identity.certificates),
            framework_id=self.identity.framework_id,
            region=self.identity.region,
            nonce=nonce,
            issued_at=now,
        )
        return sign_attestation(self.identity.keys.secret, doc, cert)

    def request_transfer(self, source, dataset_id: str, user_id: str, authorization_id: str) -> Response:
        """Run challenge, attestation and transfer request against ``source``.

        ``source`` is anything with ``request(method, path, body) -> Response``.
        """
        meta = source.request("GET", f"/safe/v1/datasets/{dataset_id}")
        networks = meta.json().get("authorized_networks", []) if meta.status == 200 else []
        challenge = source.request("POST", "/safe/v1/transfer-challenges", b"")
        nonce = challenge.json()["nonce"]
        env = self.make_envelope(nonce, networks)
        body = canonical_bytes({
            "dataset_id": dataset_id,
            "user_id": user_id,
            "authorization_id": authorization_id,
            "destination_envelope": env.to_doc(),
            "nonce": nonce,
        })
        return source.request("POST", "/safe/v1/transfer-requests", body)


class InProcessTransport:
    """Client that hands serialized requests straight to an App."""

    def __init__(self, app: App, headers: Optional[Mapping] = None):
        self.app = app
        self.headers = dict(headers or {})

    def request(self, method: str, path: str, body=b"") -> Response:
        if not isinstance(body, (bytes, bytearray)):
            body = canonical_bytes(body)
        return self.app.handle(method, path, bytes(body), self.headers)

