import json

import pytest

from safenet.errors import NonMonotonicOffsets, ParseError, UnresolvedReference
from safenet.governance import replay_audit_log
from safenet.harness import (
    BUILTIN_NAMES,
    SimClock,
    builtin_blocker_scenarios,
    builtin_path,
    load_scenario,
    run_scenario,
    scenario_to_json,
)
from safenet.ids import ts


def scenario_doc(name="blocker2"):
    return json.loads(builtin_path(name).read_text())


def write(tmp_path, doc, name="s.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def test_sim_clock():
    c = SimClock(ts("2024-01-01T00:00:00Z"))
    assert c() == ts("2024-01-01T00:00:00Z")


def test_builtins_load():
    scenarios = builtin_blocker_scenarios()
    assert len(scenarios) == 4
    assert [s.name.split("-")[0] for s in scenarios] == list(BUILTIN_NAMES)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtin_passes(name):
    report = run_scenario(load_scenario(builtin_path(name)), 0)
    assert report.passed, report.summary()
    assert all(r.engine_agrees for r in report.requests)


def test_deterministic_bytes():
    s = load_scenario(builtin_path("blocker4"))
    assert run_scenario(s, 0).to_bytes() == run_scenario(s, 0).to_bytes()


def test_seed_changes_keys_not_outcomes():
    s = load_scenario(builtin_path("blocker1"))
    a, b = run_scenario(s, 0), run_scenario(s, 1)
    assert b.passed and a.audit_log_digest != b.audit_log_digest


def test_http_transport_gives_same_report():
    s = load_scenario(builtin_path("blocker2"))
    assert run_scenario(s, 0, http=True).to_bytes() == run_scenario(s, 0).to_bytes()


def test_final_log_replays_to_final_state():
    for s in builtin_blocker_scenarios():
        report = run_scenario(s, 0)
        replayed = replay_audit_log(report.store.audit_log())
        assert replayed.state_bytes() == report.store.state_bytes()


def test_blocker1_outcomes():
    report = run_scenario(load_scenario(builtin_path("blocker1")), 0)
    first, second = report.requests
    assert first.verdict == "DENY"
    assert set(first.reasons) == {"DEST_NOT_IN_AUTHORIZED_NETWORK", "ATTESTATION_INVALID"}
    assert second.verdict == "ALLOW" and second.grant["redistribution"] is False


def test_blocker3_flips_on_expiry():
    report = run_scenario(load_scenario(builtin_path("blocker3")), 0)
    verdicts = [(r.verdict, r.reasons) for r in report.requests]
    assert verdicts[2] == ("DENY", ("DEST_ATO_INVALID",))
    assert verdicts[0][0] == verdicts[1][0] == verdicts[3][0] == "ALLOW"


def test_blocker4_exactly_one_flip():
    report = run_scenario(load_scenario(builtin_path("blocker4")), 0)
    by_dest_before, by_dest_after = {}, {}
    removal = next(a.at for a in report.actions if a.action.op == "remove_platform_from_network")
    for r in report.requests:
        (by_dest_before if r.at < removal else by_dest_after)[r.spec.dest] = r.verdict
    assert set(by_dest_before.values()) == {"ALLOW"} and len(by_dest_before) == 3
    flipped = [d for d in by_dest_before if by_dest_after[d] != by_dest_before[d]]
    assert flipped == ["apid:nhlbi:biodata-catalyst"]


def test_wrong_expectation_fails_report(tmp_path):
    doc = scenario_doc()
    doc["requests"][0]["expect"] = "ALLOW"
    report = run_scenario(load_scenario(write(tmp_path, doc)), 0)
    assert not report.passed
    assert "FAIL" in report.summary()
    assert report.to_doc()["pass"] is False


def test_exact_reason_set_required(tmp_path):
    doc = scenario_doc("blocker1")
    doc["requests"][0]["expect"]["reasons"] = ["DEST_NOT_IN_AUTHORIZED_NETWORK"]
    assert not run_scenario(load_scenario(write(tmp_path, doc)), 0).passed


def test_unexpected_action_error_fails(tmp_path):
    doc = scenario_doc()
    doc["actions"].append({"at_offset_seconds": 10**6, "op": "revoke_ato", "args": {"apid": "apid:nhgri:anvil"}})
    doc["actions"].append({"at_offset_seconds": 10**6, "op": "revoke_ato", "args": {"apid": "apid:nhgri:anvil"}})
    report = run_scenario(load_scenario(write(tmp_path, doc)), 0)
    assert not report.passed
    doc["actions"][-1]["expect_error"] = "AlreadyRevoked"
    assert run_scenario(load_scenario(write(tmp_path, doc)), 0).passed


def test_undeclared_platform(tmp_path):
    doc = scenario_doc()
    doc["requests"][0]["dest"] = "apid:nobody:here"
    with pytest.raises(UnresolvedReference):
        load_scenario(write(tmp_path, doc))


def test_non_monotonic_offsets(tmp_path):
    doc = scenario_doc()
    doc["requests"][0]["at_offset_seconds"] = 10
    doc["requests"][1]["at_offset_seconds"] = 5
    with pytest.raises(NonMonotonicOffsets):
        load_scenario(write(tmp_path, doc))


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("name"),
    lambda d: d.update(extra=1),
    lambda d: d["requests"][0].update(expect="MAYBE"),
    lambda d: d["actions"].append({"at_offset_seconds": 999999, "op": "launch_missiles", "args": {}}),
    lambda d: d["platforms"][0].update(apid="APID:x:y"),
])
def test_structural_errors(tmp_path, mutate):
    doc = scenario_doc()
    mutate(doc)
    with pytest.raises(ParseError):
        load_scenario(write(tmp_path, doc))


def test_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"name": "x",\n  "clock_start": 1.5}')
    with pytest.raises(ParseError):
        load_scenario(path)


def test_scenario_to_json_round_trip(tmp_path):
    for s in builtin_blocker_scenarios():
        path = tmp_path / "rt.json"
        path.write_text(scenario_to_json(s))
        assert load_scenario(path) == s


def test_syntax_error_has_line_context(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"name": "x",\n  "clock_start" "2024-01-01T00:00:00Z"}')
    with pytest.raises(ParseError) as exc:
        load_scenario(path)
    assert "line 2" in exc.value.detail
