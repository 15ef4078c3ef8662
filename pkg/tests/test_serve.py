"""Serve layer: search oracle equivalence, geohash, scheduler mutual
exclusion, timelines, health, HTTP endpoints, CLI, and config."""

import json
import random
import threading
import time
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings, strategies as st

from corpus import FIXTURES, fixed_clock, load_graph_store, load_mesh_store
from inframesh import geo
from inframesh.config import load_config
from inframesh.errors import InvalidArgumentError, NotFoundError
from inframesh.lifecycle import ingest
from inframesh.model import DataProductManifest, new_record
from inframesh.scheduler import Scheduler
from inframesh.search import (
    Aggregation,
    GeoBucket,
    SearchRequest,
    geo_aggregate,
    health_summary,
    parse_request,
    search,
    track_project,
)
from inframesh.store import MeshStore
from search_oracle import (
    oracle_geohash,
    oracle_match,
    random_filters,
    synthetic_records,
)


@pytest.fixture(scope="module")
def synthetic_store():
    store = MeshStore()
    receipt = ingest(synthetic_records(2000), store, clock=fixed_clock)
    assert not receipt.rejected
    return store


class TestSearch:
    def test_fixture_country_filter(self):
        store = load_mesh_store()
        result = search(SearchRequest(filters={"country": {"eq": "US"}}, limit=500), store)
        oracle = [r for r in store.all_records() if r.country == "US"]
        assert result.total == len(oracle)

    def test_aggregation_conservation(self, synthetic_store):
        req = SearchRequest(filters={"country": {"eq": "US"}},
                            aggregations=(Aggregation("status", "count"),), limit=1)
        result = search(req, synthetic_store)
        assert sum(result.aggregations["status:count"].values()) == result.total

    def test_pagination_contract(self, synthetic_store):
        base = SearchRequest(filters={"country": {"eq": "FR"}}, limit=500)
        everything = search(base, synthetic_store)
        page = search(SearchRequest(filters={"country": {"eq": "FR"}},
                                    offset=2, limit=2), synthetic_store)
        assert page.total == everything.total
        assert len(page.hits) == 2
        assert page.hits == everything.hits[2:4]

    def test_aggregations_cover_full_set_not_page(self, synthetic_store):
        req = SearchRequest(filters={}, aggregations=(Aggregation("country", "count"),),
                            limit=1)
        result = search(req, synthetic_store)
        assert sum(result.aggregations["country:count"].values()) >= 2000

    def test_free_text_and_semantics(self, synthetic_store):
        req = SearchRequest(filters={"title": {"free_text": "runway bridge"}}, limit=500)
        result = search(req, synthetic_store)
        for hit in result.hits:
            tokens = set(hit.title.casefold().split())
            assert "runway" in tokens and "bridge" in tokens

    def test_validation_lists_offenders(self):
        with pytest.raises(InvalidArgumentError) as err:
            search(SearchRequest(filters={"nope": {"eq": 1}, "country": {"zap": 1}}),
                   MeshStore())
        message = str(err.value)
        assert "nope" in message and "zap" in message

    def test_free_text_only_on_text_fields(self):
        with pytest.raises(InvalidArgumentError):
            parse_request({"filters": {"country": {"free_text": "US"}}})

    def test_limit_cap(self):
        with pytest.raises(InvalidArgumentError):
            search(SearchRequest(limit=501), MeshStore())

    def test_sum_budget_aggregation(self, synthetic_store):
        req = SearchRequest(filters={"country": {"eq": "DE"}},
                            aggregations=(Aggregation("status", "sum_budget_usd"),),
                            limit=1)
        result = search(req, synthetic_store)
        oracle = {}
        for record in synthetic_store.all_records():
            if record.country == "DE":
                oracle[record.status] = oracle.get(record.status, 0.0) + (record.budget_usd or 0)
        assert result.aggregations["status:sum_budget_usd"] == pytest.approx(oracle)

    def test_oracle_equivalence_randomized(self, synthetic_store):
        rng = random.Random(77)
        records = synthetic_store.all_records()
        for _ in range(40):
            filters = random_filters(rng)
            hits, total = page_through(synthetic_store, filters)
            expected = {r.record_id for r in records if oracle_match(r, filters)}
            assert hits == expected
            assert total == len(expected)

    def test_columnar_oracle_agrees_with_closure_oracle(self, synthetic_store):
        from search_oracle import ColumnarOracle

        records = synthetic_store.all_records()
        columnar = ColumnarOracle(records)
        rng = random.Random(5150)
        for _ in range(30):
            filters = random_filters(rng)
            fast = set(columnar.matching_ids(filters))
            slow = {r.record_id for r in records if oracle_match(r, filters)}
            assert fast == slow

    def test_sort_by_budget_descending(self, synthetic_store):
        req = SearchRequest(filters={"country": {"eq": "US"}},
                            sort="-budget_usd", limit=20)
        result = search(req, synthetic_store)
        budgets = [h.budget_usd for h in result.hits]
        assert budgets == sorted(budgets, reverse=True)


def page_through(store, filters):
    """Collect every hit across pages; also exercises the offset contract."""
    hits: set[str] = set()
    offset = 0
    while True:
        page = search(SearchRequest(filters=filters, offset=offset, limit=500), store)
        hits |= {h.record_id for h in page.hits}
        offset += 500
        if offset >= page.total:
            return hits, page.total


class TestGeohash:
    def test_reference_cell(self):
        assert geo.encode(37.7749, -122.4194, 5) == "9q8yy"

    def test_against_independent_bit_interleaving(self):
        rng = random.Random(3)
        for _ in range(200):
            lat = rng.uniform(-89.9, 89.9)
            lon = rng.uniform(-179.9, 179.9)
            precision = rng.randint(1, 8)
            assert geo.encode(lat, lon, precision) == \
                oracle_geohash(lat, lon, precision), (lat, lon, precision)

    @given(lat=st.floats(min_value=-90, max_value=90, allow_nan=False),
           lon=st.floats(min_value=-180, max_value=180, allow_nan=False),
           precision=st.integers(min_value=1, max_value=8))
    def test_bbox_contains_point(self, lat, lon, precision):
        cell = geo.encode(lat, lon, precision)
        lat_lo, lat_hi, lon_lo, lon_hi = geo.decode_bbox(cell)
        assert lat_lo <= lat <= lat_hi
        assert lon_lo <= lon <= lon_hi

    def test_precision_bounds(self):
        with pytest.raises(InvalidArgumentError):
            geo.encode(0, 0, 0)
        with pytest.raises(InvalidArgumentError):
            geo.encode(0, 0, 9)


class TestGeoAggregate:
    def test_conservation(self, synthetic_store):
        buckets = geo_aggregate({}, 4, synthetic_store)
        located = [r for r in synthetic_store.all_records() if r.location is not None]
        assert sum(b.count for b in buckets) == len(located)

    def test_membership(self, synthetic_store):
        buckets = geo_aggregate({"country": {"eq": "US"}}, 3, synthetic_store)
        cells = {b.geohash: b for b in buckets}
        for record in synthetic_store.all_records():
            if record.country == "US" and record.location:
                cell = geo.encode_point(record.location, 3)
                assert cell in cells
                lat_lo, lat_hi, lon_lo, lon_hi = geo.decode_bbox(cell)
                assert lat_lo <= record.location.lat <= lat_hi
                assert lon_lo <= record.location.lon <= lon_hi

    def test_coarse_precision_merges(self, synthetic_store):
        fine = geo_aggregate({}, 4, synthetic_store)
        coarse = geo_aggregate({}, 1, synthetic_store)
        assert len(coarse) <= len(fine)
        assert sum(b.count for b in coarse) == sum(b.count for b in fine)

    def test_fixture_sf_bucket(self):
        store = load_mesh_store()
        buckets = geo_aggregate({"region": {"eq": "California"}}, 5, store)
        assert any(b.geohash == "9q8yy" for b in buckets)

    def test_bad_precision(self, synthetic_store):
        with pytest.raises(InvalidArgumentError):
            geo_aggregate({}, 9, synthetic_store)


def manifest(name="us_projects", schedule="0 0 * * *", enabled=True):
    return DataProductManifest(
        name=name, version="1.0.0", source_category="public_procurement",
        fetcher_id="fixture", field_mapping={}, schedule=schedule, enabled=enabled)


class TestScheduler:
    def test_cron_match_triggers(self):
        runs = []
        scheduler = Scheduler(lambda: [manifest(schedule="0 0 * * *")],
                              lambda m: runs.append(m.name))
        triggered = scheduler.tick(datetime(2024, 3, 5, 0, 0, tzinfo=timezone.utc),
                                   wait=True)
        assert triggered == ["us_projects"]
        assert runs == ["us_projects"]
        assert scheduler.entries()["us_projects"].last_run == "2024-03-05T00:00:00Z"

    def test_non_matching_minute_skips(self):
        scheduler = Scheduler(lambda: [manifest(schedule="30 6 * * *")],
                              lambda m: None)
        assert scheduler.tick(datetime(2024, 3, 5, 0, 0, tzinfo=timezone.utc)) == []

    def test_running_product_not_double_started(self):
        release = threading.Event()

        def slow(_manifest):
            release.wait(timeout=5)

        scheduler = Scheduler(lambda: [manifest(schedule="* * * * *")], slow)
        now = datetime(2024, 3, 5, 0, 0, tzinfo=timezone.utc)
        first = scheduler.tick(now)
        second = scheduler.tick(now + timedelta(minutes=1))
        assert first == ["us_projects"]
        assert second == []  # mutex held by the slow run
        assert scheduler.entries()["us_projects"].state == "running"
        release.set()
        scheduler.join()
        assert scheduler.entries()["us_projects"].state == "idle"

    def test_failure_marks_state_and_retries_next_tick(self):
        attempts = []

        def flaky(m):
            attempts.append(1)
            if len(attempts) == 1:
                raise RuntimeError("boom")

        scheduler = Scheduler(lambda: [manifest(schedule="* * * * *")], flaky)
        now = datetime(2024, 3, 5, 0, 0, tzinfo=timezone.utc)
        scheduler.tick(now, wait=True)
        assert scheduler.entries()["us_projects"].state == "failed"
        scheduler.tick(now + timedelta(minutes=1), wait=True)
        assert scheduler.entries()["us_projects"].state == "idle"
        assert len(attempts) == 2

    def test_disabled_product_never_triggers(self):
        scheduler = Scheduler(lambda: [manifest(schedule="* * * * *", enabled=False)],
                              lambda m: None)
        assert scheduler.tick(datetime(2024, 3, 5, 0, 0, tzinfo=timezone.utc)) == []


class TestTrackProject:
    def test_riverton_timeline(self):
        store = load_mesh_store()
        graph = load_graph_store()
        anchor = next(r for r in store.all_records()
                      if r.title == "Riverton Solar Farm")
        events = track_project(anchor.record_id, store, graph)
        statuses = [e.status for e in events]
        assert statuses == ["announced", "procurement", "construction"]
        dates = [e.date for e in events]
        assert dates == sorted(dates)

    def test_single_record_single_event(self):
        store = MeshStore()
        record = new_record("S", "https://solo", "p", "1.0.0",
                            title="Lone project", status="announced",
                            date_updated="2024-01-01")
        ingest([record], store, clock=fixed_clock)
        events = track_project(record.record_id, store)
        assert len(events) == 1

    def test_same_day_same_status_dedup(self):
        store = MeshStore()
        a = new_record("S1", "https://a", "p", "1.0.0", title="Twin bridge works",
                       country="US", status="construction", date_updated="2024-02-02")
        b = new_record("S2", "https://b", "p", "1.0.0", title="twin bridge works",
                       country="US", status="construction", date_updated="2024-02-02")
        ingest([a, b], store, clock=fixed_clock)
        events = track_project(a.record_id, store)
        assert len(events) == 1

    def test_unknown_anchor(self):
        with pytest.raises(NotFoundError):
            track_project("missing", MeshStore())


class TestHealthSummary:
    def test_never_run_product(self):
        summary = health_summary(MeshStore(), ["ghost_product"])
        assert summary["ghost_product"] == {
            "record_count": 0, "last_ingest_at": None,
            "pending_deltas": 0, "state": "idle"}

    def test_counts_match_store(self):
        store = load_mesh_store()
        summary = health_summary(store, ["us_projects", "eu_tenders", "never_run"])
        oracle = sum(1 for r in store.all_records() if r.product_name == "us_projects")
        assert summary["us_projects"]["record_count"] == oracle
        assert summary["never_run"]["record_count"] == 0


@pytest.fixture()
def api(tmp_path):
    """TestClient over a data dir seeded from the fixtures."""
    import shutil

    from fastapi.testclient import TestClient

    from inframesh.config import MeshConfig
    from inframesh.server import bootstrap, create_app

    data = tmp_path / "data"
    data.mkdir()
    shutil.copy(FIXTURES / "mc3.json", data / "mc3.json")
    shutil.copy(FIXTURES / "dictionaries.json", data / "dictionaries.json")
    shutil.copy(FIXTURES / "gazetteer.json", data / "gazetteer.json")
    shutil.copy(FIXTURES / "rates.csv", data / "rates.csv")
    (data / "products").mkdir()
    shutil.copy(FIXTURES / "products" / "us_projects.jsonl",
                data / "products" / "us_projects.jsonl")
    token_file = tmp_path / "tokens.txt"
    token_file.write_text("sekrit\n", encoding="utf-8")
    config = MeshConfig(data_dir=str(data), token_file=str(token_file))
    state = bootstrap(config, clock=fixed_clock)
    # seed the mesh + graph with the fixture corpus
    from corpus import load_corpus_records

    ingest(load_corpus_records(), state.mesh, clock=fixed_clock)
    state.graph = load_graph_store()
    state.runtime.mesh = state.mesh
    state.runtime.graph = state.graph
    client = TestClient(create_app(state))
    client.state_bundle = state
    return client


AUTH = {"Authorization": "Bearer sekrit"}


class TestHttpApi:
    def test_health(self, api):
        reply = api.get("/health")
        assert reply.status_code == 200
        body = reply.json()
        assert "us_projects" in body
        assert body["us_projects"]["record_count"] > 0

    def test_records_filtering(self, api):
        reply = api.get("/records", params={"country": "US", "limit": 5})
        assert reply.status_code == 200
        body = reply.json()
        assert body["total"] >= 5
        assert all(r["country"] == "US" for r in body["hits"])

    def test_search_endpoint(self, api):
        reply = api.post("/search", json={
            "filters": {"sectors": {"eq": "solar"}},
            "aggregations": [{"dimension": "status", "metric": "count"}],
            "page": {"offset": 0, "limit": 10}})
        assert reply.status_code == 200
        body = reply.json()
        assert sum(body["aggregations"]["status:count"].values()) == body["total"]

    def test_search_validation_error(self, api):
        reply = api.post("/search", json={"filters": {"nope": {"eq": 1}}})
        assert reply.status_code == 400
        assert "nope" in reply.json()["detail"]

    def test_geo_endpoint(self, api):
        reply = api.get("/geo", params={"precision": 5, "country": "US"})
        assert reply.status_code == 200
        assert any(b["geohash"] == "9q8yy" for b in reply.json())

    def test_delta_resolution_flow(self, api):
        state = api.state_bundle
        receipt = state.run_one(state.mc3.get("us_projects"))
        assert receipt.deltas_enqueued == 1
        deltas = api.get("/deltas").json()
        assert len(deltas) == 1
        entry = deltas[0]
        assert entry["attribute"] == "status"
        assert entry["raw_value"] == "pre-bid"
        assert entry["occurrence_count"] == 2
        # unauthorized first
        bare = api.post(f"/deltas/{entry['entry_id']}/resolve",
                        json={"canonical": "procurement"})
        assert bare.status_code == 401
        reply = api.post(f"/deltas/{entry['entry_id']}/resolve",
                         json={"canonical": "procurement"}, headers=AUTH)
        assert reply.status_code == 200
        assert reply.json()["retro_applied"] == 2
        assert api.get("/deltas").json() == []
        # conflict on the second resolve
        again = api.post(f"/deltas/{entry['entry_id']}/resolve",
                         json={"canonical": "construction"}, headers=AUTH)
        assert again.status_code == 409

    def test_dictionaries_roundtrip(self, api):
        body = api.get("/dictionaries").json()
        assert "status" in body
        reply = api.put("/dictionaries/status",
                        json={"entries": {"pre-bid": "procurement"}}, headers=AUTH)
        assert reply.status_code == 200
        assert reply.json()["version"] == body["status"]["version"] + 1

    def test_kg_traverse_endpoint(self, api):
        reply = api.post("/kg/traverse", json={
            "subject": {"sector": "solar"},
            "lexicon": {"clauses": [
                {"kind": "should", "field": "sector", "pattern": "solar", "weight": 1.0}],
                "limit": 10, "min_score": 0.0}})
        assert reply.status_code == 200
        body = reply.json()
        assert body["results"]
        assert all(r["score"] >= 1.0 for r in body["results"])

    def test_timeline_endpoint(self, api):
        state = api.state_bundle
        anchor = next(r for r in state.mesh.all_records()
                      if r.title == "Riverton Solar Farm")
        reply = api.get(f"/projects/{anchor.record_id}/timeline")
        assert reply.status_code == 200
        assert [e["status"] for e in reply.json()] == \
            ["announced", "procurement", "construction"]

    def test_timeline_unknown_anchor_404(self, api):
        assert api.get("/projects/feedbeef/timeline").status_code == 404

    def test_agents_query_deterministic(self, api):
        payload = {"query": "latest status of Riverton Solar Farm",
                   "conversation_id": "t1"}
        first = api.post("/agents/query", json=payload)
        assert first.status_code == 200
        body = first.json()
        assert not body["insufficient_evidence"]
        payload2 = {"query": "latest status of Riverton Solar Farm",
                    "conversation_id": "t2"}
        second = api.post("/agents/query", json=payload2)
        assert second.json()["text"] == body["text"]

    def test_landscape_endpoint(self, api):
        reply = api.get("/landscape", params={"region": "California"})
        assert reply.status_code == 200
        body = reply.json()
        assert sum(body["status_histogram"].values()) == body["total"]

    def test_mc3_crud(self, api):
        body = api.get("/mc3/products").json()
        assert {p["name"] for p in body["products"]} >= {"us_projects", "eu_tenders"}
        new_manifest = dict(body["products"][0])
        new_manifest["name"] = "brand_new"
        bare = api.put("/mc3/products", json=new_manifest)
        assert bare.status_code == 401
        reply = api.put("/mc3/products", json=new_manifest, headers=AUTH)
        assert reply.status_code == 200
        assert reply.json()["version"] == body["version"] + 1
        listed = api.get("/mc3/products").json()
        assert "brand_new" in {p["name"] for p in listed["products"]}


class TestConfig:
    def test_defaults(self):
        config = load_config(None, env={})
        assert config.port == 8765 and config.tau == 0.30 and config.delta == 0.50

    def test_file_and_env_overrides(self, tmp_path):
        path = tmp_path / "mesh.json"
        path.write_text(json.dumps({"port": 9000, "tau": 0.5}), encoding="utf-8")
        config = load_config(path, env={"MESH_TAU": "0.7", "MESH_GEO_PRECISION": "6"})
        assert config.port == 9000
        assert config.tau == 0.7
        assert config.geo_precision == 6

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "mesh.json"
        path.write_text(json.dumps({"bogus": 1}), encoding="utf-8")
        from inframesh.errors import ConfigurationError

        with pytest.raises(ConfigurationError):
            load_config(path, env={})


class TestCli:
    def make_env(self, tmp_path):
        import shutil

        data = tmp_path / "data"
        (data / "products").mkdir(parents=True)
        shutil.copy(FIXTURES / "mc3.json", data / "mc3.json")
        shutil.copy(FIXTURES / "dictionaries.json", data / "dictionaries.json")
        shutil.copy(FIXTURES / "products" / "us_projects.jsonl",
                    data / "products" / "us_projects.jsonl")
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"data_dir": str(data)}), encoding="utf-8")
        return config

    def test_run_product_then_search_and_health(self, tmp_path):
        from click.testing import CliRunner

        from inframesh.cli import main

        config = self.make_env(tmp_path)
        runner = CliRunner()
        result = runner.invoke(main, ["--config", str(config),
                                      "run-product", "us_projects"])
        assert result.exit_code == 0, result.output
        receipt = json.loads(result.output)
        assert receipt["inserted"] == 10
        result = runner.invoke(main, ["--config", str(config), "search",
                                      "--filter", "country=US", "--limit", "5"])
        assert result.exit_code == 0, result.output
        assert json.loads(result.output)["total"] == 10
        result = runner.invoke(main, ["--config", str(config), "health"])
        assert result.exit_code == 0
        assert json.loads(result.output)["us_projects"]["record_count"] == 10

    def test_ask_smoke(self, tmp_path):
        from click.testing import CliRunner

        from inframesh.cli import main

        config = self.make_env(tmp_path)
        runner = CliRunner()
        runner.invoke(main, ["--config", str(config), "run-product", "us_projects"])
        result = runner.invoke(main, ["--config", str(config), "ask",
                                      "latest status of the levee upgrade"])
        assert result.exit_code == 0, result.output
        body = json.loads(result.output)
        assert body["text"]

    def test_tick(self, tmp_path):
        from click.testing import CliRunner

        from inframesh.cli import main

        config = self.make_env(tmp_path)
        runner = CliRunner()
        result = runner.invoke(main, ["--config", str(config), "tick",
                                      "--at", "2024-03-05T06:00:00Z"])
        assert result.exit_code == 0, result.output
        body = json.loads(result.output)
        assert body["triggered"] == ["us_projects"]
