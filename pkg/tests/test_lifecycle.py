"""Lifecycle pipeline: scrape retries, cleaning, standardization, geocoding,
idempotent ingestion, and Parquet intermediates."""

import random

import pytest
from hypothesis import given, settings, strategies as st

from inframesh.errors import (
    ConfigurationError,
    NotFoundError,
    SourceError,
    StageError,
    StorageError,
)
from inframesh.lifecycle import (
    CleaningReport,
    FetcherRegistry,
    Gazetteer,
    IngestReceipt,
    RawBatch,
    clean,
    geocode,
    ingest,
    jsonl_fixture_fetcher,
    normalize_date,
    read_intermediate,
    run_product,
    scrape,
    standardize,
    write_intermediate,
)
from inframesh.model import (
    DataProductManifest,
    GeoPoint,
    ReferenceDictionary,
    new_record,
)
from inframesh.store import MeshStore


def fixed_clock():
    return "2024-03-05T00:00:00Z"


def no_sleep(_seconds):
    pass


def make_manifest(**overrides):
    base = dict(
        name="us_tenders",
        version="1.0.0",
        source_category="public_procurement",
        fetcher_id="fixture",
        field_mapping={
            "Id": "source_id", "Url": "source_url", "Titre": "title",
            "Desc": "description", "Pays": "country", "Statut": "status",
            "Budget": "budget_value", "Devise": "budget_currency",
            "Date": "date_published", "Secteurs": "sectors", "Region": "region",
        },
        schedule="0 0 * * *",
    )
    base.update(overrides)
    return DataProductManifest(**base)


def fixture_rows(n=3, status="under construction"):
    return [
        {"Id": f"T-{i}", "Url": f"https://a.gov/t/{i}", "Titre": f"Bridge {i}",
         "Desc": "Deck works", "Pays": "US", "Statut": status,
         "Budget": "1,000", "Devise": "USD", "Date": "2024-03-05"}
        for i in range(n)
    ]


class TestScrape:
    def test_fixture_passthrough(self, tmp_path):
        import json

        rows = fixture_rows(3)
        (tmp_path / "us_tenders.jsonl").write_text(
            "\n".join(json.dumps(r) for r in rows), encoding="utf-8")
        registry = FetcherRegistry()
        registry.register("fixture", jsonl_fixture_fetcher(tmp_path))
        batch = scrape(make_manifest(), registry, clock=fixed_clock, sleep=no_sleep)
        assert len(batch.rows) == 3
        assert batch.product_name == "us_tenders"
        assert batch.product_version == "1.0.0"
        assert [r["Id"] for r in batch.rows] == ["T-0", "T-1", "T-2"]  # order preserved

    def test_unknown_fetcher(self):
        registry = FetcherRegistry()
        with pytest.raises(ConfigurationError):
            scrape(make_manifest(fetcher_id="nope"), registry, sleep=no_sleep)

    def test_flaky_fetcher_retries(self):
        calls = {"n": 0}

        def flaky(_manifest):
            calls["n"] += 1
            if calls["n"] <= 2:
                raise SourceError("transient")
            return fixture_rows(1)

        registry = FetcherRegistry()
        registry.register("fixture", flaky)
        batch = scrape(make_manifest(), registry, clock=fixed_clock, sleep=no_sleep)
        assert batch.attempts == 3
        assert len(batch.rows) == 1

    def test_budget_exhausted(self):
        def always_fail(_manifest):
            raise RuntimeError("boom")

        registry = FetcherRegistry()
        registry.register("fixture", always_fail)
        with pytest.raises(SourceError) as err:
            scrape(make_manifest(), registry, retry_budget=3, sleep=no_sleep)
        assert err.value.attempts == 3

    def test_exponential_backoff_progression(self):
        waits = []

        def always_fail(_manifest):
            raise RuntimeError("boom")

        registry = FetcherRegistry()
        registry.register("fixture", always_fail)
        with pytest.raises(SourceError):
            scrape(make_manifest(), registry, retry_budget=3,
                   sleep=waits.append, backoff_base=0.1)
        assert waits == pytest.approx([0.1, 0.2])  # doubles between attempts


class TestClean:
    def batch(self, rows):
        return RawBatch("us_tenders", "1.0.0", fixed_clock(), tuple(rows))

    def test_rename(self):
        records, _ = clean(self.batch([{"Titre": "Pont A"}]), {"Titre": "title"})
        assert records[0].title == "Pont A"

    def test_trim(self):
        records, _ = clean(self.batch([{"title": "  X  "}]), {"title": "title"})
        assert records[0].title == "X"

    def test_empty_string_becomes_absent(self):
        records, _ = clean(self.batch([{"Region": "   "}]), {"Region": "region"})
        assert records[0].region is None

    def test_unmapped_keys_counted(self):
        row = {"a": "1", "b": "2", "c": "3", "d": "4", "Titre": "T"}
        _, report = clean(self.batch([row]), {"Titre": "title"})
        assert report == CleaningReport(rows=1, dropped_keys=4)

    def test_typed_coercion(self):
        row = {"Budget": "USD 1,200,000.50", "Secteurs": "roads; bridges",
               "Loc": "37.7749,-122.4194", "Id": "X", "Url": "https://x"}
        mapping = {"Budget": "budget_value", "Secteurs": "sectors",
                   "Loc": "location", "Id": "source_id", "Url": "source_url"}
        records, _ = clean(self.batch([row]), mapping)
        record = records[0]
        assert record.budget_value == pytest.approx(1200000.50)
        assert record.sectors == ("bridges", "roads")
        assert record.location == GeoPoint(37.7749, -122.4194)
        assert record.record_id  # derived from source_id+source_url

    def test_purity(self):
        rows = fixture_rows(4)
        a = clean(self.batch(rows), make_manifest().field_mapping)
        b = clean(self.batch(rows), make_manifest().field_mapping)
        assert a == b


def status_dict():
    return ReferenceDictionary("status", {"under construction": "construction"})


class TestStandardize:
    def records_from(self, rows, manifest=None):
        manifest = manifest or make_manifest()
        batch = RawBatch(manifest.name, manifest.version, fixed_clock(), tuple(rows))
        records, _ = clean(batch, manifest.field_mapping)
        return records

    def test_dictionary_hit(self):
        records = self.records_from(fixture_rows(1, status="Under construction"))
        result = standardize(records, {"status": status_dict()}, clock=fixed_clock)
        assert result.records[0].status == "construction"
        assert result.deltas == ()

    def test_unknown_status_dedup(self):
        records = self.records_from(fixture_rows(5, status="pre-bid"))
        result = standardize(records, {"status": status_dict()}, clock=fixed_clock)
        assert len(result.deltas) == 1
        delta = result.deltas[0]
        assert delta.attribute == "status"
        assert delta.raw_value == "pre-bid"
        assert delta.occurrence_count == 5
        assert len(delta.example_record_ids) == 5
        # raw stays in the field, provenance remembers it
        assert all(r.status == "pre-bid" for r in result.records)
        for record in result.records:
            assert result.provenance[record.record_id]["status"] == "pre-bid"

    def test_date_table(self):
        cases = {
            "2024-03-05": "2024-03-05",
            "5 March 2024": "2024-03-05",
            "March 5, 2024": "2024-03-05",
            "2024/03/05": "2024-03-05",
            "03/04/2024": None,   # ambiguous day/month: never guessed
            "04/03/2024": None,
            "2024-02-30": None,   # not a calendar date
            "yesterday": None,
        }
        for raw, expected in cases.items():
            assert normalize_date(raw) == expected, raw

    def test_ambiguous_date_left_and_flagged(self):
        rows = fixture_rows(1)
        rows[0]["Date"] = "03/04/2024"
        records = self.records_from(rows)
        result = standardize(records, {"status": status_dict()}, clock=fixed_clock)
        record = result.records[0]
        assert record.date_published == "03/04/2024"
        from inframesh.model import validate_record

        codes = [v.code for v in validate_record(record)]
        assert "BAD_DATE_FORMAT" in codes

    def test_currency_conversion(self):
        records = self.records_from(fixture_rows(1))
        result = standardize(records, {"status": status_dict()},
                             rates={"USD": 1.0, "EUR": 1.1}, clock=fixed_clock)
        assert result.records[0].budget_usd == pytest.approx(1000.0)

    def test_purity_byte_identical(self):
        records = self.records_from(fixture_rows(6, status="pre-bid"))
        a = standardize(records, {"status": status_dict()}, clock=fixed_clock)
        b = standardize(records, {"status": status_dict()}, clock=fixed_clock)
        assert a == b


class TestGeocode:
    gazetteer = Gazetteer(
        entries={"San Francisco": GeoPoint(37.7749, -122.4194),
                 "Paris": GeoPoint(48.8566, 2.3522),
                 "Paris Texas": GeoPoint(33.6609, -95.5555)},
        scope_hints={"Paris": "FR", "Paris Texas": "US"})

    def record(self, **kw):
        return new_record("S", "https://s", "p", "1.0.0", **kw)

    def test_fixture_hit(self):
        record = self.record(region="San Francisco", country="US", title="Sewer works")
        assert geocode(record, self.gazetteer).location == GeoPoint(37.7749, -122.4194)

    def test_no_match_unchanged(self):
        record = self.record(region="Atlantis", title="Dome")
        assert geocode(record, self.gazetteer) == record

    def test_country_scope_hint_wins(self):
        record = self.record(region="Paris", country="FR", title="Metro extension")
        assert geocode(record, self.gazetteer).location == GeoPoint(48.8566, 2.3522)
        texan = self.record(region="Paris Texas", country="US", title="Road")
        assert geocode(texan, self.gazetteer).location == GeoPoint(33.6609, -95.5555)

    def test_longest_match_wins(self):
        record = self.record(region="Paris Texas", title="Road")  # no country
        assert geocode(record, self.gazetteer).location == GeoPoint(33.6609, -95.5555)

    def test_existing_location_kept(self):
        record = self.record(region="San Francisco", location=GeoPoint(1.0, 2.0))
        assert geocode(record, self.gazetteer).location == GeoPoint(1.0, 2.0)


def make_records(n, **overrides):
    return [new_record(f"S-{i}", f"https://src/{i}", "p", "1.0.0",
                       title=f"R {i}", **overrides) for i in range(n)]


class TestIngest:
    def test_idempotence(self):
        store = MeshStore()
        records = make_records(4)
        first = ingest(records, store, clock=fixed_clock)
        assert (first.inserted, first.updated, first.unchanged) == (4, 0, 0)
        second = ingest(records, store, clock=fixed_clock)
        assert (second.inserted, second.updated, second.unchanged) == (0, 0, 4)

    def test_row_isolation(self):
        store = MeshStore()
        records = make_records(3)
        bad = new_record("S-bad", "https://bad", "p", "1.0.0", date_published="bad date")
        receipt = ingest(records + [bad], store, clock=fixed_clock)
        assert receipt.inserted == 3
        assert len(receipt.rejected) == 1
        assert receipt.rejected[0].row_index == 3
        assert store.count() == 3

    def test_diff_detection(self):
        store = MeshStore()
        records = make_records(5, budget_value=10.0, budget_currency="USD")
        ingest(records, store, clock=fixed_clock)
        from dataclasses import replace

        changed = [replace(records[0], budget_value=99.0)] + records[1:]
        receipt = ingest(changed, store, clock=lambda: "2024-03-06T00:00:00Z")
        assert (receipt.inserted, receipt.updated, receipt.unchanged) == (0, 1, 4)
        assert store.get(records[0].record_id).budget_value == 99.0
        assert store.get(records[0].record_id).ingested_at == "2024-03-06T00:00:00Z"
        assert store.get(records[1].record_id).ingested_at == "2024-03-05T00:00:00Z"

    def test_store_unavailable(self):
        store = MeshStore()
        store.set_available(False)
        with pytest.raises(StorageError):
            ingest(make_records(1), store)

    @given(st.integers(min_value=0, max_value=12), st.integers(min_value=0, max_value=4),
           st.random_module())
    @settings(max_examples=40)
    def test_conservation_and_idempotence(self, n_good, n_bad, rnd):
        store = MeshStore()
        good = make_records(n_good)
        bad = [new_record(f"B-{i}", f"https://b/{i}", "p", "1.0.0",
                          budget_value=-1.0, budget_currency="USD")
               for i in range(n_bad)]
        rng = random.Random(rnd.seed)
        batch = good + bad
        rng.shuffle(batch)
        receipt = ingest(batch, store, clock=fixed_clock)
        assert receipt.total() == len(batch)
        again = ingest(batch, store, clock=fixed_clock)
        assert again.inserted == 0 and again.updated == 0
        assert again.unchanged == n_good and len(again.rejected) == n_bad


class TestIntermediateStorage:
    def make_batch(self, rows):
        return RawBatch("p", "1.0.0", fixed_clock(), tuple(rows))

    def test_round_trip_100_rows(self, tmp_path):
        rng = random.Random(5)
        rows = []
        for i in range(100):
            row = {"id": str(i), "n": rng.randint(0, 9)}
            if rng.random() < 0.5:
                row["opt"] = "x" * rng.randint(1, 4)
            if rng.random() < 0.3:
                row["nested"] = {"a": [1, 2, {"b": None}]}
            rows.append(row)
        batch = self.make_batch(rows)
        uri = write_intermediate(batch, tmp_path)
        assert read_intermediate(uri) == batch

    def test_unknown_uri(self, tmp_path):
        with pytest.raises(NotFoundError):
            read_intermediate(tmp_path / "missing.parquet")

    def test_non_parquet_file_is_format_error(self, tmp_path):
        from inframesh.errors import FormatError

        junk = tmp_path / "junk.parquet"
        junk.write_bytes(b"this is not a parquet file")
        with pytest.raises(FormatError):
            read_intermediate(junk)

    def test_missing_batch_metadata_is_format_error(self, tmp_path):
        import pyarrow as pa
        import pyarrow.parquet as pq

        from inframesh.errors import FormatError

        bare = tmp_path / "bare.parquet"
        pq.write_table(pa.table({"a": pa.array(["1"])}), bare)
        with pytest.raises(FormatError):
            read_intermediate(bare)

    def test_same_batch_distinct_uris(self, tmp_path):
        batch = self.make_batch([{"a": "1"}])
        uri1 = write_intermediate(batch, tmp_path)
        uri2 = write_intermediate(batch, tmp_path)
        assert uri1 != uri2
        assert read_intermediate(uri1) == read_intermediate(uri2) == batch
        # content hash suffix identical, sequence differs
        assert uri1.rsplit("-", 1)[1] == uri2.rsplit("-", 1)[1]

    @given(rows=st.lists(
        st.dictionaries(
            st.text(alphabet="abcdef", min_size=1, max_size=6),
            st.one_of(st.text(max_size=8), st.integers(-5, 5), st.booleans(),
                      st.none(), st.floats(allow_nan=False, allow_infinity=False,
                                           min_value=-1e6, max_value=1e6)),
            max_size=5),
        max_size=8))
    @settings(max_examples=25, deadline=None)
    def test_round_trip_random_batches(self, rows, tmp_path_factory):
        batch = self.make_batch(rows)
        root = tmp_path_factory.mktemp("obj")
        assert read_intermediate(write_intermediate(batch, root)) == batch


class TestRunProduct:
    def setup_fixture(self, tmp_path, rows):
        import json

        (tmp_path / "us_tenders.jsonl").write_text(
            "\n".join(json.dumps(r) for r in rows), encoding="utf-8")
        registry = FetcherRegistry()
        registry.register("fixture", jsonl_fixture_fetcher(tmp_path))
        store = MeshStore()
        store.put_dictionary(status_dict())
        return registry, store

    def test_fixture_run_counts_distinct_deltas(self, tmp_path):
        rows = fixture_rows(8) + fixture_rows(2, status="pre-bid")
        for i, row in enumerate(rows):
            row["Id"], row["Url"] = f"T-{i}", f"https://a.gov/t/{i}"
        registry, store = self.setup_fixture(tmp_path, rows)
        receipt = run_product(make_manifest(), registry, store, tmp_path / "obj",
                              clock=fixed_clock, sleep=no_sleep)
        assert receipt.inserted == 10
        assert receipt.deltas_enqueued == 1
        assert len(store.pending_deltas("status")) == 1
        assert store.pending_deltas("status")[0].occurrence_count == 2

    def test_disabled_manifest_noop(self, tmp_path):
        registry, store = self.setup_fixture(tmp_path, fixture_rows(3))
        receipt = run_product(make_manifest(enabled=False), registry, store,
                              tmp_path / "obj", clock=fixed_clock, sleep=no_sleep)
        assert receipt == IngestReceipt()
        assert store.count() == 0

    def test_fetcher_error_tagged_scrape(self, tmp_path):
        registry = FetcherRegistry()

        def bad(_manifest):
            raise RuntimeError("dead source")

        registry.register("fixture", bad)
        store = MeshStore()
        with pytest.raises(StageError) as err:
            run_product(make_manifest(), registry, store, tmp_path / "obj",
                        clock=fixed_clock, sleep=no_sleep)
        assert err.value.stage == "scrape"

    def test_intermediate_persisted(self, tmp_path):
        registry, store = self.setup_fixture(tmp_path, fixture_rows(3))
        run_product(make_manifest(), registry, store, tmp_path / "obj",
                    clock=fixed_clock, sleep=no_sleep)
        files = list((tmp_path / "obj").glob("*.parquet"))
        assert len(files) == 1
        stored = read_intermediate(files[0])
        assert len(stored.rows) == 3
        assert stored.rows[0]["status"] == "construction"  # standardized before persisting
