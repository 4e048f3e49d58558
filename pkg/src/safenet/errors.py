"""Exception hierarchy shared by every layer.

Each error carries a stable ``code`` (the class name) that travels over the
wire and out of the CLI unchanged, plus the HTTP status the protocol layer
maps it to.
"""

from __future__ import annotations


class SafeError(Exception):
    http_status = 400

    def __init__(self, detail: str = ""):
        super().__init__(detail)
        self.detail = detail

    @property
    def code(self) -> str:
        return type(self).__name__


# identifiers / timestamps

class IdentifierError(SafeError, ValueError):
    def __init__(self, text: str, position: int, reason: str):
        super().__init__(f"{reason} at position {position} in {text!r}")
        self.text = text
        self.position = position
        self.reason = reason


class BadScheme(IdentifierError):
    pass


class BadLabel(IdentifierError):
    pass


class BadCountryCode(IdentifierError):
    pass


class BadTimestamp(SafeError, ValueError):
    pass


# canonical json / documents

class UnsupportedValue(SafeError, TypeError):
    pass


class MalformedDocument(SafeError, ValueError):
    """A document's structure does not match its schema."""


# governance

class GovernanceError(SafeError):
    http_status = 409


class NotFound(GovernanceError):
    http_status = 404


class DuplicateApid(GovernanceError):
    pass


class DuplicateApni(GovernanceError):
    pass


class DuplicateGrant(GovernanceError):
    pass


class DuplicateAuthorization(GovernanceError):
    pass


class DuplicateDataset(GovernanceError):
    pass


class NoSuchGrant(GovernanceError):
    http_status = 404


class AlreadyMember(GovernanceError):
    pass


class NotMember(GovernanceError):
    pass


class AlreadyRevoked(GovernanceError):
    pass


class StaleClock(GovernanceError):
    pass


class BadRegion(GovernanceError):
    http_status = 422


class DanglingMember(GovernanceError):
    http_status = 422


class OutOfOrderTransition(GovernanceError):
    http_status = 422


class BadInterval(GovernanceError):
    http_status = 422


class ReplayError(GovernanceError):
    def __init__(self, seq: int, detail: str = ""):
        super().__init__(f"seq {seq}: {detail}" if detail else f"seq {seq}")
        self.seq = seq


class BrokenHashChain(ReplayError):
    pass


class GapInSequence(ReplayError):
    pass


class InvalidTransition(ReplayError):
    pass


# policy

class MalformedView(SafeError):
    http_status = 500


# attestation

class AttestationError(SafeError):
    http_status = 403


class UnknownAnchor(AttestationError):
    pass


class CertificateExpired(AttestationError):
    pass


class BadCertificateSignature(AttestationError):
    pass


class BadEnvelopeSignature(AttestationError):
    pass


class ApidMismatch(AttestationError):
    pass


class NonceMismatch(AttestationError):
    pass


class StaleAttestation(AttestationError):
    pass


class MalformedEnvelope(AttestationError):
    http_status = 422


# harness

class ScenarioError(SafeError):
    pass


class ParseError(ScenarioError):
    pass


class UnresolvedReference(ScenarioError):
    pass


class NonMonotonicOffsets(ScenarioError):
    pass
