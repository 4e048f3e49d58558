import pytest
from hypothesis import given, strategies as st

from safenet.errors import BadCountryCode, BadLabel, BadScheme, BadTimestamp, IdentifierError
from safenet.ids import (
    ARID_GLOBAL,
    Timestamp,
    parse_apid,
    parse_apni,
    parse_arid,
    parse_dataset_id,
    ts,
)

LABEL_ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789.-"
labels = st.from_regex(r"\A[a-z0-9]([a-z0-9.-]{0,61}[a-z0-9])?\Z", fullmatch=True)


def test_known_identifiers_parse():
    assert str(parse_apid("apid:nih.nci:gdc")) == "apid:nih.nci:gdc"
    assert str(parse_apni("apni:ncpi:main")) == "apni:ncpi:main"
    assert parse_dataset_id("ds:nih.nci:tcga-x") == "ds:nih.nci:tcga-x"
    assert str(parse_arid("arid:iso3166:US")) == "arid:iso3166:US"
    assert parse_arid(ARID_GLOBAL).is_global


def test_empty_org_label_names_position():
    with pytest.raises(BadLabel) as exc:
        parse_apid("apid::x")
    assert exc.value.position == 5
    assert "empty org-label" in exc.value.reason


def test_empty_network_label():
    with pytest.raises(BadLabel) as exc:
        parse_apni("apni:ncpi:")
    assert "empty network-label" in exc.value.reason


@pytest.mark.parametrize("text", ["APID:a:b", "apni:ncpi:main", "", "apid", " apid:a:b"])
def test_wrong_scheme_for_apid(text):
    with pytest.raises(BadScheme):
        parse_apid(text)


def test_apni_rejects_apid_scheme():
    with pytest.raises(BadScheme):
        parse_apni("apid:ncpi:main")


@pytest.mark.parametrize("text", [
    "apid:a:b:c", "apid:a", "apid:A:b", "apid:a:b_c", "apid:-a:b", "apid:a.:b",
    "apid:a:b-", "apid:a:.b", "apid:" + "a" * 64 + ":b", "apid:a:b/c", "apid:a:é",
])
def test_bad_labels(text):
    with pytest.raises(BadLabel):
        parse_apid(text)


def test_label_length_boundary():
    assert parse_apid("apid:" + "a" * 63 + ":b")


@pytest.mark.parametrize("text", ["arid:iso3166:usa", "arid:iso3166:us", "arid:iso3166:U", "arid:iso3166:U1"])
def test_bad_country_code(text):
    with pytest.raises(BadCountryCode):
        parse_arid(text)


@pytest.mark.parametrize("text", ["arid:Global", "arid:iso:US", "region:US"])
def test_bad_arid_scheme(text):
    with pytest.raises(BadScheme):
        parse_arid(text)


def test_comparison_is_byte_equality():
    assert parse_apid("apid:a:b") == parse_apid("apid:a:b")
    assert parse_apid("apid:a:b") != parse_apid("apid:a:c")
    assert parse_apid("apid:a:b") < parse_apid("apid:a:c")


@given(labels, labels)
def test_round_trip(org, name):
    for scheme, parse in (("apid", parse_apid), ("apni", parse_apni)):
        text = f"{scheme}:{org}:{name}"
        assert str(parse(text)) == text
    assert parse_dataset_id(f"ds:{org}:{name}") == f"ds:{org}:{name}"


@given(st.text(alphabet=LABEL_ALPHABET + ":AZ_", max_size=40))
def test_grammar_oracle(text):
    # independent statement of the label grammar
    def ok_label(s):
        return 1 <= len(s) <= 63 and all(c in LABEL_ALPHABET for c in s) and s[0] not in ".-" and s[-1] not in ".-"

    full = "apid:" + text
    parts = text.split(":")
    expected = len(parts) == 2 and all(ok_label(p) for p in parts)
    try:
        parse_apid(full)
        assert expected
    except IdentifierError:
        assert not expected


@given(st.binary(max_size=1024))
def test_parsers_total_on_bytes(data):
    for parse in (parse_apid, parse_apni, parse_arid, parse_dataset_id):
        try:
            parse(data)
        except IdentifierError as exc:
            assert isinstance(exc.position, int) and exc.reason


@given(st.text(max_size=200))
def test_parsers_total_on_text(text):
    for parse in (parse_apid, parse_apni, parse_arid, parse_dataset_id):
        try:
            parse(text)
        except IdentifierError:
            pass


def test_non_string_input_is_structured_error():
    with pytest.raises(BadScheme):
        parse_apid(42)


class TestTimestamp:
    def test_round_trip(self):
        assert str(ts("2024-01-22T00:00:00Z")) == "2024-01-22T00:00:00Z"

    @pytest.mark.parametrize("text", [
        "2024-01-22T00:00:00", "2024-01-22T00:00:00.5Z", "2024-01-22 00:00:00Z",
        "2024-02-30T00:00:00Z", "2024-01-22T24:00:00Z", "2024-01-22T00:00:00+00:00", "",
    ])
    def test_rejects(self, text):
        with pytest.raises(BadTimestamp):
            Timestamp.parse(text)

    def test_arithmetic_and_order(self):
        a = ts("2024-01-01T00:00:00Z")
        b = a + 86400
        assert str(b) == "2024-01-02T00:00:00Z"
        assert b - a == 86400
        assert a < b

    def test_leap_day(self):
        assert ts("2024-02-29T12:00:00Z") + 86400 == ts("2024-03-01T12:00:00Z")

    @given(st.integers(min_value=0, max_value=253402300799))
    def test_render_parse_inverse(self, epoch):
        t = Timestamp(epoch)
        assert Timestamp.parse(str(t)) == t

    @given(st.integers(min_value=0, max_value=4 * 10**9), st.integers(min_value=0, max_value=4 * 10**9))
    def test_order_is_chronological(self, a, b):
        assert (Timestamp(a) < Timestamp(b)) == (str(Timestamp(a)) < str(Timestamp(b))) == (a < b)
