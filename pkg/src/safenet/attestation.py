"""Chain of trust between platforms.

A network authority signs a :class:`PlatformCertificate` binding one
platform key to one ``(apid, apni)`` pair. A platform answering a challenge
signs an :class:`AttestationDocument` carrying the challenger's nonce and
wraps it, with its certificate, in a :class:`SignedEnvelope`. The
distributing platform checks the whole chain with :func:`verify_envelope`.

Signatures are Ed25519 over ``canonical_bytes`` of a small wrapper that
names the algorithm and the document context, so a certificate signature
can never be replayed as an attestation signature or vice versa.
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from .canonical import canonical_bytes, loads_strict
from .errors import (
    ApidMismatch,
    BadCertificateSignature,
    BadEnvelopeSignature,
    BadInterval,
    CertificateExpired,
    MalformedDocument,
    MalformedEnvelope,
    NonceMismatch,
    SafeError,
    StaleAttestation,
    UnknownAnchor,
)
from .ids import Apid, Apni, Arid, Timestamp, parse_apid, parse_apni, parse_arid
from .model import _get, _only_keys, _str_list, sorted_strs

ALGORITHM = "Ed25519"
ATTEST_VERSION = "safe-attest/1"
CERT_CONTEXT = "safe-cert/1"
DEFAULT_FRESHNESS_WINDOW = 300

_NONCE_RE = re.compile(r"\A[0-9a-f]{32}\Z")
_SIG_RE = re.compile(r"\A[0-9a-f]{128}\Z")
_KEY_RE = re.compile(r"\A[0-9a-f]{64}\Z")


# keys

@dataclass(frozen=True)
class KeyPair:
    public: bytes
    secret: bytes
    algorithm: str = ALGORITHM

    @classmethod
    def from_seed(cls, seed: bytes) -> "KeyPair":
        if len(seed) != 32:
            raise ValueError("Ed25519 seed must be 32 bytes")
        sk = Ed25519PrivateKey.from_private_bytes(bytes(seed))
        pub = sk.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        return cls(public=pub, secret=bytes(seed))

    @classmethod
    def generate(cls, entropy: Callable[[int], bytes] = os.urandom) -> "KeyPair":
        return cls.from_seed(entropy(32))

    @property
    def key_id(self) -> str:
        return key_id(self.public)


def key_id(public: bytes) -> str:
    return "ed25519:" + hashlib.sha256(public).hexdigest()[:16]


def _signing_input(context: str, doc: dict) -> bytes:
    return canonical_bytes({"algorithm": ALGORITHM, "context": context, "document": doc})


def _sign(secret: bytes, message: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(secret).sign(message)


def _verify(public: bytes, signature: bytes, message: bytes) -> bool:
    if len(public) != 32 or len(signature) != 64:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def _hex_field(doc: Mapping, key: str, pattern: re.Pattern, what: str) -> bytes:
    value = _get(doc, key, str, what)
    if not pattern.match(value):
        raise MalformedDocument(f"{what}.{key}: malformed hex")
    return bytes.fromhex(value)


# documents

@dataclass(frozen=True)
class PlatformCertificate:
    apid: Apid
    platform_public_key: bytes
    apni: Apni
    issued_at: Timestamp
    valid_until: Timestamp
    authority_signature: bytes = b""

    def body_doc(self) -> dict:
        return {
            "apid": str(self.apid),
            "platform_public_key": self.platform_public_key.hex(),
            "apni": str(self.apni),
            "issued_at": str(self.issued_at),
            "valid_until": str(self.valid_until),
        }

    def signed_bytes(self) -> bytes:
        return _signing_input(CERT_CONTEXT, self.body_doc())

    def to_doc(self) -> dict:
        return {**self.body_doc(), "authority_signature": self.authority_signature.hex()}

    @classmethod
    def from_doc(cls, doc: Mapping) -> "PlatformCertificate":
        w = "certificate"
        _only_keys(doc, {"apid", "platform_public_key", "apni", "issued_at", "valid_until", "authority_signature"}, w)
        return cls(
            apid=parse_apid(_get(doc, "apid", str, w)),
            platform_public_key=_hex_field(doc, "platform_public_key", _KEY_RE, w),
            apni=parse_apni(_get(doc, "apni", str, w)),
            issued_at=Timestamp.parse(_get(doc, "issued_at", str, w)),
            valid_until=Timestamp.parse(_get(doc, "valid_until", str, w)),
            authority_signature=_hex_field(doc, "authority_signature", _SIG_RE, w),
        )


@dataclass(frozen=True)
class AttestationDocument:
    apid: Apid
    apni_memberships: tuple
    framework_id: str
    region: Arid
    nonce: str
    issued_at: Timestamp
    version: str = ATTEST_VERSION

    def __post_init__(self):
        object.__setattr__(self, "apni_memberships", tuple(sorted(set(self.apni_memberships))))
        if not _NONCE_RE.match(self.nonce):
            raise MalformedDocument("attestation.nonce: expected 32 lowercase hex characters")
        if self.version != ATTEST_VERSION:
            raise MalformedDocument(f"attestation.version: expected {ATTEST_VERSION!r}")

    def to_doc(self) -> dict:
        return {
            "version": self.version,
            "apid": str(self.apid),
            "apni_memberships": sorted_strs(self.apni_memberships),
            "framework_id": self.framework_id,
            "region": str(self.region),
            "nonce": self.nonce,
            "issued_at": str(self.issued_at),
        }

    def signed_bytes(self) -> bytes:
        return _signing_input(ATTEST_VERSION, self.to_doc())

    @classmethod
    def from_doc(cls, doc: Mapping) -> "AttestationDocument":
        w = "payload"
        _only_keys(doc, {"version", "apid", "apni_memberships", "framework_id", "region", "nonce", "issued_at"}, w)
        apnis = [parse_apni(x) for x in _str_list(doc, "apni_memberships", w)]
        if apnis != sorted(set(apnis)):
            raise MalformedDocument("payload.apni_memberships: must be sorted and duplicate-free")
        return cls(
            version=_get(doc, "version", str, w),
            apid=parse_apid(_get(doc, "apid", str, w)),
            apni_memberships=tuple(apnis),
            framework_id=_get(doc, "framework_id", str, w),
            region=parse_arid(_get(doc, "region", str, w)),
            nonce=_get(doc, "nonce", str, w),
            issued_at=Timestamp.parse(_get(doc, "issued_at", str, w)),
        )


@dataclass(frozen=True)
class SignedEnvelope:
    payload: AttestationDocument
    certificate: PlatformCertificate
    signature: bytes

    def to_doc(self) -> dict:
        return {
            "payload": self.payload.to_doc(),
            "certificate": self.certificate.to_doc(),
            "signature": self.signature.hex(),
        }

    def to_bytes(self) -> bytes:
        return canonical_bytes(self.to_doc())

    @classmethod
    def from_doc(cls, doc: Mapping) -> "SignedEnvelope":
        """Parse the wire form; any structural problem is a MalformedEnvelope."""
        try:
            _only_keys(doc, {"payload", "certificate", "signature"}, "envelope")
            return cls(
                payload=AttestationDocument.from_doc(_get(doc, "payload", dict, "envelope")),
                certificate=PlatformCertificate.from_doc(_get(doc, "certificate", dict, "envelope")),
                signature=_hex_field(doc, "signature", _SIG_RE, "envelope"),
            )
        except SafeError as exc:
            if isinstance(exc, MalformedEnvelope):
                raise
            raise MalformedEnvelope(f"{exc.code}: {exc.detail}") from None

    @classmethod
    def from_bytes(cls, data: bytes) -> "SignedEnvelope":
        try:
            doc = loads_strict(data)
        except SafeError as exc:
            raise MalformedEnvelope(f"{exc.code}: {exc.detail}") from None
        return cls.from_doc(doc)


@dataclass(frozen=True)
class VerifiedIdentity:
    apid: Apid
    apnis: frozenset
    region: Arid
    verified_at: Timestamp

    def to_doc(self) -> dict:
        return {
            "apid": str(self.apid),
            "apnis": sorted_strs(self.apnis),
            "region": str(self.region),
            "verified_at": str(self.verified_at),
        }

    @classmethod
    def from_doc(cls, doc: Mapping) -> "VerifiedIdentity":
        w = "verified_attestation"
        _only_keys(doc, {"apid", "apnis", "region", "verified_at"}, w)
        return cls(
            apid=parse_apid(_get(doc, "apid", str, w)),
            apnis=frozenset(parse_apni(x) for x in _str_list(doc, "apnis", w)),
            region=parse_arid(_get(doc, "region", str, w)),
            verified_at=Timestamp.parse(_get(doc, "verified_at", str, w)),
        )


class TrustAnchorSet(dict):
    """Mapping of network identifier to the authority's 32-byte public key."""

    @classmethod
    def from_networks(cls, networks) -> "TrustAnchorSet":
        return cls({n.apni: n.authority_public_key for n in networks})

    def to_doc(self) -> dict:
        return {str(k): v.hex() for k, v in self.items()}

    @classmethod
    def from_doc(cls, doc: Mapping) -> "TrustAnchorSet":
        if not isinstance(doc, Mapping):
            raise MalformedDocument("anchors: expected an object")
        out = cls()
        for k, v in doc.items():
            if not isinstance(v, str) or not _KEY_RE.match(v):
                raise MalformedDocument(f"anchors.{k}: expected 64 lowercase hex characters")
            out[parse_apni(k)] = bytes.fromhex(v)
        return out


# operations

def issue_certificate(
    authority_secret: bytes,
    apid: Apid,
    platform_public_key: bytes,
    apni: Apni,
    issued_at: Timestamp,
    valid_until: Timestamp,
) -> PlatformCertificate:
    if not issued_at < valid_until:
        raise BadInterval("certificate issued_at must precede valid_until")
    cert = PlatformCertificate(apid, bytes(platform_public_key), apni, issued_at, valid_until)
    sig = _sign(authority_secret, cert.signed_bytes())
    return PlatformCertificate(apid, bytes(platform_public_key), apni, issued_at, valid_until, sig)


def verify_certificate(cert: PlatformCertificate, authority_public: bytes) -> bool:
    return _verify(authority_public, cert.authority_signature, cert.signed_bytes())


def sign_attestation(platform_secret: bytes, doc: AttestationDocument, cert: PlatformCertificate) -> SignedEnvelope:
    if doc.apid != cert.apid:
        raise ApidMismatch(f"document apid {doc.apid} does not match certificate apid {cert.apid}")
    return SignedEnvelope(doc, cert, _sign(platform_secret, doc.signed_bytes()))


def verify_envelope(
    env: SignedEnvelope,
    anchors: Mapping,
    expected_nonce: Optional[str],
    now: Timestamp,
    freshness_window: int = DEFAULT_FRESHNESS_WINDOW,
) -> VerifiedIdentity:
    """Check the full chain and return what it proves.

    Raises the first failing condition, checked in chain order: anchor,
    certificate signature, certificate expiry, envelope signature, apid
    binding, nonce, freshness (inclusive window).
    """
    cert, payload = env.certificate, env.payload
    anchor = anchors.get(cert.apni)
    if anchor is None:
        raise UnknownAnchor(f"no trust anchor for {cert.apni}")
    if not verify_certificate(cert, anchor):
        raise BadCertificateSignature(f"certificate for {cert.apid} does not verify under {cert.apni}")
    if not now < cert.valid_until:
        raise CertificateExpired(f"certificate expired at {cert.valid_until}")
    if not _verify(cert.platform_public_key, env.signature, payload.signed_bytes()):
        raise BadEnvelopeSignature(f"attestation signature does not verify under the key certified for {cert.apid}")
    if payload.apid != cert.apid:
        raise ApidMismatch(f"payload apid {payload.apid} does not match certificate apid {cert.apid}")
    if expected_nonce is None or payload.nonce != expected_nonce:
        raise NonceMismatch("attestation nonce does not match the outstanding challenge")
    if abs(now - payload.issued_at) > freshness_window:
        raise StaleAttestation(
            f"attestation issued at {payload.issued_at}, {abs(now - payload.issued_at)} s from {now} "
            f"(window {freshness_window} s)"
        )
    apnis = frozenset({cert.apni}) & frozenset(payload.apni_memberships)
    return VerifiedIdentity(apid=cert.apid, apnis=apnis, region=payload.region, verified_at=now)


def generate_nonce(entropy: Callable[[int], bytes] = os.urandom) -> str:
    return bytes(entropy(16)).hex()
