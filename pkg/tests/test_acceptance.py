"""Acceptance criteria, one test per criterion.

Each test prints a single ``criterion N ...: PASS|FAIL`` line (outside
pytest's capture, so it shows up in the run log) before asserting.
"""

from __future__ import annotations

import random
import time
from collections import Counter
from dataclasses import replace
from datetime import datetime, timedelta, timezone

import pytest

from helpers import (
    ALL_OUTCOMES, ANVIL, AUTHORITY, DAR, DS, GDC, MIRROR, NET, T0, US, build_store, envelope, truth_table_case,
)
from opgen import AUTH_IDS, DATASETS, PLATFORMS, USERS, advance, random_op
from wire_fixtures import Federation
from safenet.attestation import SignedEnvelope, TrustAnchorSet, VerifiedIdentity, verify_envelope
from safenet.canonical import canonical_bytes, loads, loads_strict
from safenet.errors import AttestationError, BrokenHashChain, GovernanceError
from safenet.governance import GovernanceStore, ato_status_function, compute_ato_status, replay_audit_log
from safenet.harness import builtin_blocker_scenarios, run_scenario
from safenet.ids import DAY, Timestamp, parse_apid
from safenet.model import AtoRecord
from safenet.policy import ALLOW, DENY, TransferQuery, evaluate_transfer
from safenet.wire import InProcessTransport, RegistryApp

NONCE = "0123456789abcdef0123456789abcdef"


@pytest.fixture
def report(capsys):
    def emit(n: int, title: str, ok: bool, detail: str = "") -> None:
        with capsys.disabled():
            print(f"\ncriterion {n} {title}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else ""))
        assert ok, detail
    return emit


def _decide(store, q, **kw):
    view = store.snapshot()
    return evaluate_transfer(q, view, ato_status_function(view, q.now), **kw)


# 1

def test_c1_truth_table(report):
    started = time.perf_counter()
    bad = []
    for target in ALL_OUTCOMES:
        store, q, realized = truth_table_case(target)
        d = _decide(store, q)
        outcomes = tuple(c.passed for c in d.trace)
        if len(d.trace) != 6 or outcomes != realized or (d.verdict == ALLOW) != all(target):
            bad.append((target, outcomes, d.verdict))
    elapsed = time.perf_counter() - started
    report(1, "truth table", not bad and elapsed < 1.0,
           f"64 combinations, {len(bad)} mismatches, {elapsed:.3f} s")


# 2

def _revocations(store: GovernanceStore):
    """Every revoking operation that would succeed on ``store`` right now."""
    view = store.snapshot()
    out = []
    for apid, rec in view.atos.items():
        if rec.revoked_at is None:
            out.append(("revoke_ato", {"apid": str(apid)}))
    for g in store.grants.values():
        if g.revoked_at is None:
            out.append(("revoke_right_to_distribute", {"dataset_id": g.dataset_id, "apid": str(g.apid)}))
    for auth in view.user_authorizations.values():
        if not auth.revoked:
            out.append(("revoke_user_authorization", {"authorization_id": auth.authorization_id}))
    for net in view.networks.values():
        for m in net.members:
            out.append(("remove_platform_from_network", {"apni": str(net.apni), "apid": str(m)}))
    return out


ALL_QUERIES = [
    (ds, parse_apid(s), parse_apid(d), u, a)
    for ds in DATASETS for s in PLATFORMS for d in PLATFORMS for u in USERS for a in AUTH_IDS + [DAR]
]


def _queries(view, now):
    apnis = frozenset(view.networks)
    for ds, s, d, u, a in ALL_QUERIES:
        region = view.platforms[d].region if d in view.platforms else US
        yield TransferQuery(ds, s, d, u, a, now, VerifiedIdentity(d, apnis, region, now))


def _populated() -> GovernanceStore:
    """The fixture plus more ATOs, grants and authorizations, so many queries start out ALLOW."""
    store = build_store()
    kw = {"actor": "gen", "now": T0}
    for apid in (GDC, MIRROR):
        store.submit_assessment(apid, "fw", **kw)
        store.record_independent_assessment(apid, **kw)
        store.issue_ato(apid, T0 + 730 * DAY, **kw)
    store.grant_right_to_distribute(DS, MIRROR, **kw)
    store.grant_right_to_distribute(DS, ANVIL, **kw)
    for i, user in enumerate(USERS):
        store.execute("authorize_user", {
            "authorization_id": AUTH_IDS[i], "user_id": user, "dataset_id": DS,
            "granted_at": str(T0), "expires_at": str(T0 + 365 * DAY), "revoked": False,
        }, **kw)
    return store


def test_c2_revocation_monotonicity(report):
    rng = random.Random(2)
    pairs = evaluated = allow_before = violations = 0
    seen_states = set()
    kinds = Counter()
    while len(seen_states) < 1000:
        # most sequences start populated so ALLOW states are common
        store = _populated() if rng.random() < 0.7 else GovernanceStore()
        now = T0
        for _ in range(rng.randint(10, 40)):
            now = advance(rng, now)
            candidates = _revocations(store)
            if candidates and rng.random() < 0.3:
                action, payload = rng.choice(candidates)
            else:
                action, payload = random_op(rng, now, revoking_bias=0.1)
            is_revoking = action in {"revoke_ato", "revoke_right_to_distribute",
                                     "revoke_user_authorization", "remove_platform_from_network"}
            before_view = store.snapshot()
            try:
                store.execute(action, payload, actor="gen", now=now)
            except GovernanceError:
                continue
            if not is_revoking:
                continue
            after_view = store.snapshot()
            seen_states.add(canonical_bytes(before_view.to_doc()))
            before_f = ato_status_function(before_view, now)
            after_f = ato_status_function(after_view, now)
            for q in _queries(before_view, now):
                b = evaluate_transfer(q, before_view, before_f, check_view=False).verdict
                a = evaluate_transfer(q, after_view, after_f, check_view=False).verdict
                evaluated += 1
                allow_before += b == ALLOW
                violations += b == DENY and a == ALLOW
            pairs += 1
            kinds[action] += 1
    report(2, "revocation monotonicity", violations == 0 and len(seen_states) >= 1000,
           f"{pairs} revoking ops over {len(seen_states)} distinct states, {evaluated} query pairs "
           f"({allow_before} ALLOW before), {violations} DENY->ALLOW; ops {dict(sorted(kinds.items()))}")


# 3

def _regions(data: bytes, env: SignedEnvelope):
    """Byte ranges of the payload, certificate and signature inside the envelope bytes."""
    spans = {}
    for name, sub in (("payload", canonical_bytes(env.payload.to_doc())),
                      ("certificate", canonical_bytes(env.certificate.to_doc())),
                      ("signature", env.signature.hex().encode())):
        start = data.index(sub)
        spans[name] = range(start, start + len(sub))
    return spans


ALLOWED_CODES = {
    "payload": {"MalformedEnvelope", "BadEnvelopeSignature"},
    "certificate": {"MalformedEnvelope", "UnknownAnchor", "BadCertificateSignature"},
    "signature": {"MalformedEnvelope", "BadEnvelopeSignature"},
    "structure": {"MalformedEnvelope"},
}


def test_c3_tamper_suite(report):
    env = envelope()
    data = env.to_bytes()
    anchors = TrustAnchorSet({NET: AUTHORITY.public})
    now = T0 + 10
    assert verify_envelope(SignedEnvelope.from_bytes(data), anchors, NONCE, now).apid == ANVIL
    spans = _regions(data, env)
    region_of = ["structure"] * len(data)
    for name, span in spans.items():
        for i in span:
            region_of[i] = name

    def reject_code(candidate_env_or_bytes):
        try:
            e = (SignedEnvelope.from_bytes(candidate_env_or_bytes)
                 if isinstance(candidate_env_or_bytes, bytes) else candidate_env_or_bytes)
            verify_envelope(e, anchors, NONCE, now)
        except AttestationError as exc:
            return exc.code
        return None

    total, accepted, imprecise = 0, 0, []
    codes = Counter()
    # every alternative value at every byte of the wire form
    for i in range(len(data)):
        for v in range(256):
            if v == data[i]:
                continue
            code = reject_code(data[:i] + bytes([v]) + data[i + 1:])
            total += 1
            codes[code] += 1
            if code is None:
                accepted += 1
            elif code not in ALLOWED_CODES[region_of[i]]:
                imprecise.append((i, v, code))
    # the sweep above already reaches every nibble of the hex signatures; add raw bit flips on top
    cert = env.certificate
    for i in range(len(env.signature)):
        for bit in range(8):
            sig = env.signature[:i] + bytes([env.signature[i] ^ (1 << bit)]) + env.signature[i + 1:]
            for candidate, want in ((replace(env, signature=sig), "BadEnvelopeSignature"),
                                    (replace(env, certificate=replace(cert, authority_signature=sig)),
                                     "BadCertificateSignature")):
                code = reject_code(candidate)
                total += 1
                codes[code] += 1
                accepted += code is None
                if code is not None and code != want:
                    imprecise.append(("raw", i, v, code))
    report(3, "attestation tamper suite", accepted == 0 and not imprecise,
           f"{total} mutations, {accepted} accepted, {len(imprecise)} with an unexpected code; "
           f"codes {dict(sorted(codes.items(), key=lambda kv: str(kv[0])))}")


# 4

def _submit(fed, issued_delta=0, reuse=False):
    src, dest = fed.transports[GDC], fed.agents[ANVIL]
    nonce = src.request("POST", "/safe/v1/transfer-challenges").json()["nonce"]
    env = dest.make_envelope(nonce, [NET], now=fed.clock() + issued_delta)
    body = {"dataset_id": DS, "user_id": "u:alice", "authorization_id": DAR,
            "destination_envelope": env.to_doc(), "nonce": nonce}
    first = src.request("POST", "/safe/v1/transfer-requests", body)
    return src.request("POST", "/safe/v1/transfer-requests", body) if reuse else first


def _invalid(resp, code) -> bool:
    doc = resp.json()
    return (resp.status == 403 and doc["reasons"] == ["ATTESTATION_INVALID"]
            and code in doc["trace"][5]["detail"])


def test_c4_replay_rejection(report):
    fed = Federation()
    results = {
        "reused nonce": _invalid(_submit(fed, reuse=True), "NonceMismatch"),
        "issued 300 s ago accepted": _submit(fed, -300).status == 200,
        "issued 301 s ago rejected": _invalid(_submit(fed, -301), "StaleAttestation"),
        "issued 300 s ahead accepted": _submit(fed, 300).status == 200,
        "issued 301 s ahead rejected": _invalid(_submit(fed, 301), "StaleAttestation"),
    }
    # a nonce this platform never issued
    src, dest = fed.transports[GDC], fed.agents[ANVIL]
    forged = "f" * 32
    body = {"dataset_id": DS, "user_id": "u:alice", "authorization_id": DAR,
            "destination_envelope": dest.make_envelope(forged, [NET]).to_doc(), "nonce": forged}
    results["unissued nonce"] = _invalid(src.request("POST", "/safe/v1/transfer-requests", body), "NonceMismatch")
    failed = [k for k, ok in results.items() if not ok]
    report(4, "replay rejection at the wire", not failed, f"{len(results)} cases, failed: {failed or 'none'}")


# 5

def _dt(t):
    return None if t is None else datetime.strptime(str(t), "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)


def oracle_ato_status(rec: AtoRecord, now: Timestamp) -> str:
    """Five-branch rule on calendar datetimes, written without the library's arithmetic."""
    n = _dt(now)
    if rec.revoked_at is not None and _dt(rec.revoked_at) <= n:
        return "Revoked"
    if rec.ato_issued_at is None:
        return "NotAuthorized"
    if rec.ato_valid_until is None or n >= _dt(rec.ato_valid_until):
        return "Expired"
    last = _dt(rec.last_pentest_review_at or rec.ato_issued_at)
    if n - last > timedelta(days=365):
        return "Suspended(ReviewOverdue)"
    return "Active"


def test_c5_ato_clock_grid(report):
    issued = T0
    valid_until = issued + 730 * DAY
    reviews = [None, issued, issued + 100 * DAY, issued + 400 * DAY]
    revocations = [None, issued + 200 * DAY, issued + 500 * DAY]
    records = [AtoRecord(ANVIL, "fw", issued - 2 * DAY, issued - DAY)]  # assessed, never issued
    for r in reviews:
        for rv in revocations:
            records.append(AtoRecord(ANVIL, "fw", issued - 2 * DAY, issued - DAY, issued, valid_until, r, rv))
    records.append(AtoRecord(ANVIL, "fw", revoked_at=issued + DAY))  # revoked before any ATO
    # instants: every boundary, one second either side, plus a regular sweep
    anchors = {issued, valid_until}
    for rec in records:
        for t in (rec.last_pentest_review_at, rec.revoked_at):
            if t is not None:
                anchors.add(t)
                anchors.add(t + 365 * DAY)
                anchors.add(t + 366 * DAY)
    instants = set()
    for a in anchors:
        instants.update({a - 1, a, a + 1})
    instants.update(issued - DAY + k * 6 * 3600 for k in range(4 * 800))
    pairs = [(rec, now) for rec in records for now in sorted(instants)]
    mismatches = [(r, n) for r, n in pairs if str(compute_ato_status(r, n)) != oracle_ato_status(r, n)]

    reviewed = AtoRecord(ANVIL, "fw", issued - 2 * DAY, issued - DAY, issued, valid_until, issued)
    boundaries = {
        "now == valid_until": str(compute_ato_status(reviewed, valid_until)) == "Expired",
        "review age 365 d": str(compute_ato_status(reviewed, issued + 365 * DAY)) == "Active",
        "review age 366 d": str(compute_ato_status(reviewed, issued + 366 * DAY)) == "Suspended(ReviewOverdue)",
    }
    failed = [k for k, ok in boundaries.items() if not ok]
    report(5, "ATO clock grid", len(pairs) >= 10_000 and not mismatches and not failed,
           f"{len(pairs)} (record, now) pairs, {len(mismatches)} mismatches, boundaries failed: {failed or 'none'}")


# 6

def _random_sequence(rng: random.Random, steps: int) -> GovernanceStore:
    store = build_store() if rng.random() < 0.3 else GovernanceStore()
    now = store.events[-1].at if store.events else T0
    for _ in range(steps):
        now = advance(rng, now)
        try:
            store.execute(*random_op(rng, now, 0.2), actor="gen", now=now)
        except GovernanceError:
            pass
    return store


def _detected(log: bytes) -> bool:
    try:
        replay_audit_log(log)
    except BrokenHashChain:
        return True
    return False


def test_c6_event_sourcing_fixpoint(report):
    rng = random.Random(6)
    sequences = replay_mismatch = undetected = mutations = 0
    while sequences < 500:
        store = _random_sequence(rng, rng.randint(5, 30))
        log = store.audit_log()
        if not log:
            continue
        sequences += 1
        if replay_audit_log(log).state_bytes() != store.state_bytes():
            replay_mismatch += 1
        i = rng.randrange(len(log))
        v = rng.choice([b for b in range(256) if b != log[i]])
        mutations += 1
        undetected += not _detected(log[:i] + bytes([v]) + log[i + 1:])
    # exhaustive low-bit flips over one short log
    short = build_store().audit_log()
    for i in range(len(short)):
        mutations += 1
        undetected += not _detected(short[:i] + bytes([short[i] ^ 1]) + short[i + 1:])
    report(6, "event-sourcing fixpoint", sequences >= 500 and replay_mismatch == 0 and undetected == 0,
           f"{sequences} sequences, {replay_mismatch} replay mismatches, "
           f"{mutations} single-byte mutations, {undetected} undetected")


# 7

def test_c7_blocker_scenarios(report):
    scenarios = builtin_blocker_scenarios()
    first = [run_scenario(s, seed=0) for s in scenarios]
    second = [run_scenario(s, seed=0) for s in scenarios]
    over_http = [run_scenario(s, seed=0, http=True) for s in scenarios]
    passed = [r.passed for r in first]
    identical = all(a.to_bytes() == b.to_bytes() == c.to_bytes() for a, b, c in zip(first, second, over_http))
    report(7, "four blocker scenarios", len(scenarios) == 4 and all(passed) and identical,
           f"passed {sum(passed)}/{len(scenarios)}, byte-identical across runs and transports: {identical}")


# 8

# written out by hand from the fixture, independent of the golden generator
LITERAL_PLATFORM = (b'{"apid":"apid:nhgri:anvil","apnis":["apni:ncpi:main"],"region":"arid:iso3166:US",'
                    b'"service_version":"safe/1 safenet/0.1.0"}')
LITERAL_DATASET_GDC = (b'{"authorized_networks":["apni:ncpi:main"],"dataset_id":"ds:nih.nci:tcga-x",'
                       b'"right_to_distribute_here":true}')
LITERAL_DATASET_MIRROR = (b'{"authorized_networks":["apni:ncpi:main"],"dataset_id":"ds:nih.nci:tcga-x",'
                          b'"right_to_distribute_here":false}')


def test_c8_golden_wire_files(report, golden):
    fed = Federation()
    got = {
        "platform_anvil.json": fed.transports[ANVIL].request("GET", "/safe/v1/platform").body,
        "dataset_tcga-x_at_gdc.json": fed.transports[GDC].request("GET", f"/safe/v1/datasets/{DS}").body,
        "dataset_tcga-x_at_mirror.json": fed.transports[MIRROR].request("GET", f"/safe/v1/datasets/{DS}").body,
    }
    literal = {
        "platform_anvil.json": LITERAL_PLATFORM,
        "dataset_tcga-x_at_gdc.json": LITERAL_DATASET_GDC,
        "dataset_tcga-x_at_mirror.json": LITERAL_DATASET_MIRROR,
    }
    failed = [n for n in got if not (got[n] == golden(n) == literal[n])]
    report(8, "golden wire files", not failed, f"{len(got)} responses, mismatched: {failed or 'none'}")


# 9

_ALPHABET = "abcXYZ09 _-/\"\\\n\t\x00\x1f\x7fé€ÿ ￿\U0001f600\U0010ffff"


def _random_string(rng):
    return "".join(rng.choice(_ALPHABET) for _ in range(rng.randint(0, 8)))


def _random_doc(rng, depth=0):
    kind = rng.randint(0, 5 if depth < 4 else 2)
    if kind == 0:
        return rng.choice([True, False])
    if kind == 1:
        return rng.choice([0, -1, 1, rng.randint(-2**64, 2**64), rng.randint(-1000, 1000)])
    if kind == 2:
        return _random_string(rng)
    if kind == 3:
        return [_random_doc(rng, depth + 1) for _ in range(rng.randint(0, 4))]
    return {_random_string(rng): _random_doc(rng, depth + 1) for _ in range(rng.randint(0, 5))}


def _shuffled(rng, value):
    if isinstance(value, dict):
        items = list(value.items())
        rng.shuffle(items)
        return {k: _shuffled(rng, v) for k, v in items}
    if isinstance(value, list):
        return [_shuffled(rng, v) for v in value]
    return value


def test_c9_canonicalization(report):
    rng = random.Random(9)
    cases = fixpoint_bad = order_bad = 0
    for _ in range(10_000):
        doc = _random_doc(rng)
        cases += 1
        once = canonical_bytes(doc)
        if canonical_bytes(loads(once)) != once or loads_strict(once) != doc:
            fixpoint_bad += 1
        if canonical_bytes(_shuffled(rng, doc)) != once:
            order_bad += 1
    report(9, "canonicalization", cases >= 10_000 and fixpoint_bad == 0 and order_bad == 0,
           f"{cases} documents, {fixpoint_bad} fixpoint mismatches, {order_bad} key-order mismatches")


# 10

def test_c10_wire_engine_equivalence(report):
    mismatches = []
    for target in ALL_OUTCOMES:
        store, q, _ = truth_table_case(target)
        reg = InProcessTransport(RegistryApp(store, lambda: q.now))
        for advisory in (False, True):
            body = {**q.to_doc(), "advisory": True} if advisory else q.to_doc()
            resp = reg.request("POST", "/registry/v1/decisions:evaluate", body)
            direct = canonical_bytes(_decide(store, q, advisory=advisory).to_doc())
            if resp.status != 200 or resp.body != direct:
                mismatches.append((target, advisory))
    report(10, "wire/engine equivalence", not mismatches,
           f"{len(ALL_OUTCOMES)} fixtures x 2 modes, {len(mismatches)} mismatches")
