#!/usr/bin/env python3
"""Record real API responses as contract fixtures for the console tests.

Drives the actual FastAPI app against the fixture corpus and captures
request/response pairs under frontend/fixtures/. Rerun whenever the API or
the corpus changes:

    python3 scripts/record_console_fixtures.py
"""

from __future__ import annotations

import json
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))
sys.path.insert(0, str(ROOT / "tests"))

from fastapi.testclient import TestClient  # noqa: E402

from corpus import fixed_clock, load_corpus_records, load_graph_store  # noqa: E402
from inframesh.config import MeshConfig  # noqa: E402
from inframesh.lifecycle import ingest  # noqa: E402
from inframesh.server import bootstrap, create_app  # noqa: E402

FIXTURES = ROOT / "fixtures"
OUT = ROOT / "frontend" / "fixtures"

AUTH = {"Authorization": "Bearer sekrit"}


def build_client() -> TestClient:
    workdir = Path(tempfile.mkdtemp(prefix="console-fixtures-"))
    data = workdir / "data"
    (data / "products").mkdir(parents=True)
    for name in ("mc3.json", "dictionaries.json", "gazetteer.json", "rates.csv"):
        shutil.copy(FIXTURES / name, data / name)
    shutil.copy(FIXTURES / "products" / "us_projects.jsonl",
                data / "products" / "us_projects.jsonl")
    tokens = workdir / "tokens.txt"
    tokens.write_text("sekrit\n", encoding="utf-8")
    state = bootstrap(MeshConfig(data_dir=str(data), token_file=str(tokens)),
                      clock=fixed_clock)
    ingest(load_corpus_records(), state.mesh, clock=fixed_clock)
    state.graph = load_graph_store()
    state.runtime.mesh = state.mesh
    state.runtime.graph = state.graph
    state.run_one(state.mc3.get("us_projects"))  # enqueues the pre-bid delta
    return TestClient(create_app(state))


def record(name: str, method: str, path: str, response, body=None,
           headers=None) -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    payload = {
        "request": {"method": method, "path": path, "body": body,
                    "auth": bool(headers)},
        "status": response.status_code,
        "response": response.json(),
    }
    (OUT / f"{name}.json").write_text(
        json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"recorded {name}: {method} {path} -> {response.status_code}")


def main() -> None:
    client = build_client()

    reply = client.get("/deltas")
    record("deltas_pending", "GET", "/deltas", reply)
    entry_id = reply.json()[0]["entry_id"]

    denied = client.post(f"/deltas/{entry_id}/resolve",
                         json={"canonical": "procurement"})
    record("resolve_unauthorized", "POST", f"/deltas/{entry_id}/resolve", denied,
           body={"canonical": "procurement"})

    resolved = client.post(f"/deltas/{entry_id}/resolve",
                           json={"canonical": "procurement"}, headers=AUTH)
    record("resolve_ok", "POST", f"/deltas/{entry_id}/resolve", resolved,
           body={"canonical": "procurement"}, headers=AUTH)

    conflict = client.post(f"/deltas/{entry_id}/resolve",
                           json={"canonical": "construction"}, headers=AUTH)
    record("resolve_conflict", "POST", f"/deltas/{entry_id}/resolve", conflict,
           body={"canonical": "construction"}, headers=AUTH)

    record("deltas_after_resolve", "GET", "/deltas", client.get("/deltas"))

    traverse_body = {
        "subject": {"sector": "solar"},
        "lexicon": {"clauses": [{"kind": "should", "field": "sector",
                                 "pattern": "solar", "weight": 1.0}],
                    "limit": 10, "min_score": 0.0}}
    record("traverse_solar", "POST", "/kg/traverse",
           client.post("/kg/traverse", json=traverse_body), body=traverse_body)

    empty_body = {
        "subject": {"sector": "solar", "region": "atlantis"},
        "lexicon": {"clauses": [{"kind": "should", "field": "sector",
                                 "pattern": "solar", "weight": 1.0}],
                    "limit": 10, "min_score": 0.0}}
    record("traverse_empty", "POST", "/kg/traverse",
           client.post("/kg/traverse", json=empty_body), body=empty_body)

    record("landscape_california", "GET", "/landscape?region=California",
           client.get("/landscape", params={"region": "California"}))

    search_body = {
        "filters": {"sectors": {"eq": "solar"}, "country": {"eq": "US"}},
        "aggregations": [{"dimension": "status", "metric": "count"}],
        "page": {"offset": 0, "limit": 20}}
    record("search_solar_us", "POST", "/search",
           client.post("/search", json=search_body), body=search_body)

    record("health", "GET", "/health", client.get("/health"))


if __name__ == "__main__":
    main()
