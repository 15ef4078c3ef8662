"""Core model: record identity, validation, canonicalization, round-trips."""

import json
import random
import re
from datetime import date

import pytest
from hypothesis import given, strategies as st

from inframesh.errors import InvalidArgumentError
from inframesh.model import (
    DataProductManifest,
    DeltaEntry,
    DeltaMarker,
    GeoPoint,
    ReferenceDictionary,
    Stakeholder,
    StandardRecord,
    canonicalize,
    fold_key,
    make_record_id,
    new_record,
    validate_record,
)


def make_valid_record(**overrides):
    base = dict(
        source_id="T-1",
        source_url="https://a.gov/t/1",
        product_name="us_tenders",
        product_version="1.0.0",
        record_kind="tender",
        title="Bridge Rehab Phase 2",
        description="Deck replacement and seismic retrofit.",
        country="US",
        status="procurement",
        budget_value=1200000.0,
        budget_currency="USD",
        budget_usd=1200000.0,
        date_published="2024-03-05",
        sectors=("bridges",),
    )
    base.update(overrides)
    return new_record(**base)


class TestMakeRecordId:
    def test_deterministic(self):
        assert make_record_id("T-1", "https://a.gov/t/1") == make_record_id("T-1", "https://a.gov/t/1")

    def test_url_differs(self):
        assert make_record_id("T-1", "https://a.gov/t/1") != make_record_id("T-1", "https://b.gov/t/1")

    def test_empty_inputs_rejected(self):
        with pytest.raises(InvalidArgumentError):
            make_record_id("", "https://a.gov")
        with pytest.raises(InvalidArgumentError):
            make_record_id("T-1", "")

    def test_collision_scan_10k_random_pairs(self):
        rng = random.Random(20240305)
        seen = {}
        for _ in range(10_000):
            sid = "S-" + "".join(rng.choices("abcdefghij0123456789", k=rng.randint(1, 12)))
            url = "https://src.example/" + "".join(rng.choices("abcdefgh/", k=rng.randint(1, 20)))
            rid = make_record_id(sid, url)
            key = (sid, url)
            if rid in seen:
                assert seen[rid] == key, f"collision: {seen[rid]} vs {key}"
            seen[rid] = key

    def test_separator_prevents_concatenation_aliasing(self):
        assert make_record_id("ab", "c") != make_record_id("a", "bc")


def independent_violation_count(record):
    """Brute-force invariant checker, kept deliberately separate from the
    implementation: counts violations field by field."""
    count = 0
    for name in ("date_published", "date_updated", "date_deadline"):
        value = getattr(record, name)
        if value is None:
            continue
        if not re.match(r"^\d{4}-\d{2}-\d{2}$", value):
            count += 1
        else:
            y, m, d = map(int, value.split("-"))
            try:
                date(y, m, d)
            except ValueError:
                count += 1
    if record.budget_value is not None and record.budget_value < 0:
        count += 1
    if record.budget_usd is not None and record.budget_usd < 0:
        count += 1
    if record.budget_value is not None and record.budget_currency in (None, ""):
        count += 1
    if not record.product_name:
        count += 1
    if not record.product_version:
        count += 1
    if not record.source_id or not record.source_url:
        count += 1
    elif record.record_id != make_record_id(record.source_id, record.source_url):
        count += 1
    return count


class TestValidateRecord:
    def test_conforming_record_empty_report(self):
        assert validate_record(make_valid_record()) == []

    def test_bad_date_format(self):
        report = validate_record(make_valid_record(date_published="03/05/2024"))
        assert len(report) == 1
        assert report[0].field == "date_published"
        assert report[0].code == "BAD_DATE_FORMAT"

    def test_two_violations_enumerated(self):
        record = make_valid_record(budget_value=-5.0, date_deadline="2024-02-30")
        report = validate_record(record)
        assert len(report) == 2 == independent_violation_count(record)
        codes = {(v.field, v.code) for v in report}
        assert ("budget_value", "NEGATIVE_BUDGET") in codes
        assert ("date_deadline", "INVALID_DATE") in codes

    def test_currency_required_with_budget(self):
        report = validate_record(make_valid_record(budget_currency=None))
        assert [v.code for v in report] == ["MISSING_CURRENCY"]

    def test_tampered_record_id(self):
        record = make_valid_record()
        tampered = StandardRecord(**{**record.__dict__, "record_id": "0" * 32})
        assert [v.code for v in validate_record(tampered)] == ["BAD_RECORD_ID"]

    @given(
        bad_budget=st.booleans(),
        bad_date=st.booleans(),
        drop_currency=st.booleans(),
        empty_name=st.booleans(),
    )
    def test_report_size_matches_independent_checker(self, bad_budget, bad_date,
                                                     drop_currency, empty_name):
        overrides = {}
        if bad_budget:
            overrides["budget_value"] = -1.0
        if bad_date:
            overrides["date_updated"] = "2024-13-01"
        if drop_currency:
            overrides["budget_currency"] = None
        if empty_name:
            overrides["product_name"] = ""
        record = make_valid_record(**overrides)
        assert len(validate_record(record)) == independent_violation_count(record)


class TestCanonicalize:
    def test_fold_trim_then_lookup(self):
        d = ReferenceDictionary("status", {"under construction": "construction"})
        assert canonicalize("  Under Construction ", d) == "construction"

    def test_miss_returns_delta_marker(self):
        d = ReferenceDictionary("status", {})
        assert canonicalize("EPC tender", d) == DeltaMarker("EPC tender")

    def test_case_variants_all_hit(self):
        d = ReferenceDictionary("country", {"usa": "US"})
        for raw in ("USA", "usa", "Usa"):
            assert canonicalize(raw, d) == "US"

    def test_idempotent_on_self_mapping(self):
        d = ReferenceDictionary("status", {"construction": "construction"})
        assert canonicalize("construction", d) == "construction"
        assert canonicalize(canonicalize("Construction", d), d) == "construction"

    def test_dictionary_rejects_conflicting_folded_keys(self):
        with pytest.raises(InvalidArgumentError):
            ReferenceDictionary("status", {"Live": "operational", "live ": "construction"})


class TestGeoPoint:
    def test_bounds_enforced(self):
        with pytest.raises(InvalidArgumentError):
            GeoPoint(91.0, 0.0)
        with pytest.raises(InvalidArgumentError):
            GeoPoint(0.0, -181.0)
        GeoPoint(90.0, 180.0)


class TestManifest:
    def test_valid(self):
        DataProductManifest(
            name="us_tenders", version="1.0.0", source_category="public_procurement",
            fetcher_id="fixture", field_mapping={"Titre": "title"}, schedule="0 0 * * *")

    def test_bad_mapping_target(self):
        with pytest.raises(InvalidArgumentError):
            DataProductManifest(
                name="x", version="1.0.0", source_category="public_procurement",
                fetcher_id="fixture", field_mapping={"a": "not_a_field"})

    def test_bad_cron(self):
        with pytest.raises(InvalidArgumentError):
            DataProductManifest(
                name="x", version="1.0.0", source_category="public_procurement",
                fetcher_id="fixture", schedule="0 0 * *")


records_strategy = st.builds(
    make_valid_record,
    title=st.text(max_size=40),
    description=st.text(max_size=80),
    region=st.one_of(st.none(), st.text(min_size=1, max_size=20)),
    status=st.sampled_from(["announced", "construction", "pre-bid", "unknown"]),
    budget_value=st.one_of(st.none(), st.floats(min_value=0, max_value=1e12, allow_nan=False)),
    budget_usd=st.one_of(st.none(), st.floats(min_value=0, max_value=1e12, allow_nan=False)),
    date_updated=st.one_of(st.none(), st.just("2024-06-01")),
    location=st.one_of(st.none(), st.builds(
        GeoPoint,
        lat=st.floats(min_value=-90, max_value=90, allow_nan=False),
        lon=st.floats(min_value=-180, max_value=180, allow_nan=False))),
    sectors=st.lists(st.sampled_from(["roads", "rail", "solar", "airports"]), max_size=3).map(tuple),
    entities=st.lists(st.builds(Stakeholder, name=st.text(min_size=1, max_size=12),
                                role=st.sampled_from(["sponsor", "contractor", ""])),
                      max_size=2).map(tuple),
)


class TestRoundTrips:
    @given(records_strategy)
    def test_record_json_round_trip(self, record):
        encoded = json.dumps(record.to_json_dict())
        decoded = StandardRecord.from_json_dict(json.loads(encoded))
        assert decoded == record
        assert decoded.to_json_dict() == record.to_json_dict()

    def test_budget_currency_none_when_no_budget(self):
        record = make_valid_record(budget_value=None, budget_currency=None, budget_usd=None)
        assert validate_record(record) == []

    @given(st.dictionaries(st.text(min_size=1, max_size=10), st.text(min_size=1, max_size=10),
                           max_size=5),
           st.integers(min_value=1, max_value=99))
    def test_dictionary_round_trip(self, entries, version):
        try:
            d = ReferenceDictionary("status", entries, version)
        except InvalidArgumentError:
            return  # conflicting folded keys; construction correctly refuses
        assert ReferenceDictionary.from_json_dict(json.loads(json.dumps(d.to_json_dict()))) == d

    def test_delta_entry_round_trip(self):
        entry = DeltaEntry("status", "pre-bid", 5, "2024-03-05T00:00:00Z",
                           ("r1", "r2"), "pending", None)
        assert DeltaEntry.from_json_dict(json.loads(json.dumps(entry.to_json_dict()))) == entry

    def test_manifest_round_trip(self):
        m = DataProductManifest(
            name="us_tenders", version="1.2.3", source_category="public_procurement",
            fetcher_id="fixture", field_mapping={"Titre": "title"}, schedule="*/5 * * * *",
            enabled=False)
        assert DataProductManifest.from_json_dict(json.loads(json.dumps(m.to_json_dict()))) == m


class TestDeltaEntryInvariants:
    def test_resolved_requires_resolution(self):
        with pytest.raises(InvalidArgumentError):
            DeltaEntry("status", "x", 1, "t", state="resolved", resolution=None)

    def test_occurrence_count_positive(self):
        with pytest.raises(InvalidArgumentError):
            DeltaEntry("status", "x", 0, "t")


def test_fold_key_ascii_trim_and_casefold():
    assert fold_key("  Straße \t") == "strasse"
    assert fold_key("USA") == "usa"
