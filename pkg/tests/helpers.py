"""Shared fixture builders: the tcga-x / ncpi:main federation in a few states."""

from __future__ import annotations

import hashlib
from itertools import product

from safenet.attestation import (
    AttestationDocument,
    KeyPair,
    issue_certificate,
    sign_attestation,
)
from safenet.governance import GovernanceStore
from safenet.ids import DAY, Timestamp, parse_apid, parse_apni, parse_arid, ts
from safenet.model import DatasetSafeMetadata, NetworkRecord, PlatformRecord, UserAuthorization
from safenet.policy import TransferQuery
from safenet.attestation import VerifiedIdentity

T0 = ts("2024-01-22T00:00:00Z")
ACTOR = "sponsor"

GDC = parse_apid("apid:nih.nci:gdc")
ANVIL = parse_apid("apid:nhgri:anvil")
MIRROR = parse_apid("apid:example.edu:mirror")
GHOST = parse_apid("apid:nowhere:ghost")
NET = parse_apni("apni:ncpi:main")
OTHER_NET = parse_apni("apni:other:net")
US = parse_arid("arid:iso3166:US")
DE = parse_arid("arid:iso3166:DE")
DS = "ds:nih.nci:tcga-x"
ALICE = "u:alice"
DAR = "dar:alice:tcga-x"
FRAMEWORK = "NIST-SP-800-53-Moderate"


def seeded_keys(label: str) -> KeyPair:
    return KeyPair.from_seed(hashlib.sha256(label.encode()).digest())


AUTHORITY = seeded_keys("authority:ncpi:main")
OTHER_AUTHORITY = seeded_keys("authority:other:net")
PLATFORM_KEYS = {a: seeded_keys(str(a)) for a in (GDC, ANVIL, MIRROR)}


def platform(apid, region=US) -> PlatformRecord:
    return PlatformRecord(apid, str(apid).split(":")[-1], region, PLATFORM_KEYS[apid].key_id, operator="op")


def build_store(
    *,
    anvil_ato: bool = True,
    networks=(NET,),
    rtd=(GDC,),
    restrictions=None,
    authorize_alice: bool = True,
    anvil_in_network: bool = True,
    ato_valid_days: int = 730,
) -> GovernanceStore:
    """The happy fixture; keyword knobs break one condition at a time."""
    s = GovernanceStore()
    kw = {"actor": ACTOR, "now": T0}
    for apid in (GDC, ANVIL, MIRROR):
        s.register_platform(platform(apid), **kw)
    members = {GDC, MIRROR} | ({ANVIL} if anvil_in_network else set())
    s.create_network(NetworkRecord(NET, "NCPI authority", AUTHORITY.public, FRAMEWORK, frozenset(members)), **kw)
    s.create_network(NetworkRecord(OTHER_NET, "Other authority", OTHER_AUTHORITY.public, FRAMEWORK), **kw)
    if anvil_ato:
        s.submit_assessment(ANVIL, FRAMEWORK, **kw)
        s.record_independent_assessment(ANVIL, **kw)
        s.issue_ato(ANVIL, T0 + ato_valid_days * DAY, **kw)
    meta = DatasetSafeMetadata(
        DS, "NCI", frozenset(rtd), frozenset(networks),
        None if restrictions is None else frozenset(restrictions),
    )
    s.register_dataset(meta, **kw)
    if authorize_alice:
        s.authorize_user(UserAuthorization(DAR, ALICE, DS, T0, T0 + 365 * DAY), **kw)
    return s


def attestation_for(apid, now: Timestamp, apnis=(NET,)) -> VerifiedIdentity:
    return VerifiedIdentity(apid, frozenset(apnis), US, now)


def query(source=GDC, dest=ANVIL, *, now=None, attested=True, auth=DAR, user=ALICE, dataset=DS) -> TransferQuery:
    now = now if now is not None else T0 + 60
    return TransferQuery(
        dataset_id=dataset, source_apid=source, dest_apid=dest, user_id=user,
        authorization_id=auth, now=now,
        verified_attestation=attestation_for(dest, now) if attested else None,
    )


# truth table

ALL_OUTCOMES = list(product((True, False), repeat=6))


def truth_table_case(target: tuple):
    """Registry state and query realizing the six target check outcomes.

    A failed resolution check leaves an entity missing, and any check that
    needs that entity then fails too. When the target asks for resolution
    to fail while both source and destination checks pass, the destination
    is the missing entity, so check 4 is forced to fail. Returns the
    outcome vector the state actually realizes alongside it.
    """
    resolved, user_ok, rtd_ok, dest_ok, region_ok, attest_ok = target
    source, dest = GDC, ANVIL
    realized = list(target)
    if not resolved:
        if not rtd_ok:
            source = GHOST
        else:
            dest = GHOST
            realized[3] = False
    elif not rtd_ok:
        source = MIRROR
    store = build_store(
        anvil_ato=dest_ok or dest == GHOST,
        restrictions=None if region_ok else (DE,),
    )
    now = T0 + 60
    q = TransferQuery(
        dataset_id=DS, source_apid=source, dest_apid=dest, user_id=ALICE,
        authorization_id=DAR if user_ok else "dar:nobody", now=now,
        verified_attestation=attestation_for(dest, now) if attest_ok else None,
    )
    return store, q, tuple(realized)


# envelopes

def certificate(apid=ANVIL, apni=NET, authority=AUTHORITY, issued=T0, days=730):
    return issue_certificate(authority.secret, apid, PLATFORM_KEYS[apid].public, apni, issued, issued + days * DAY)


def envelope(nonce="0123456789abcdef0123456789abcdef", apid=ANVIL, issued_at=None, cert=None, apnis=(NET,)):
    issued_at = issued_at if issued_at is not None else T0 + 10
    cert = cert if cert is not None else certificate(apid)
    doc = AttestationDocument(
        apid=apid, apni_memberships=tuple(apnis), framework_id=FRAMEWORK,
        region=US, nonce=nonce, issued_at=issued_at,
    )
    return sign_attestation(PLATFORM_KEYS[apid].secret, doc, cert)
