#!/usr/bin/env python3
"""Regenerate the fixture corpus under fixtures/.

Everything is constructed deterministically (no RNG) so the files are
byte-stable across runs and platforms. Run from the repo root:

    python3 scripts/build_fixtures.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from inframesh.kg import GraphStore, LexiconClause, LexiconSpec  # noqa: E402
from inframesh.model import GeoPoint, Stakeholder, new_record  # noqa: E402

FIXTURES = ROOT / "fixtures"

PLACES = [
    # (country, region, city, lat, lon, currency)
    ("US", "California", "San Francisco", 37.7749, -122.4194, "USD"),
    ("US", "Texas", "Houston", 29.7604, -95.3698, "USD"),
    ("FR", "Ile-de-France", "Paris", 48.8566, 2.3522, "EUR"),
    ("DE", "Bavaria", "Munich", 48.1351, 11.582, "EUR"),
    ("IN", "Maharashtra", "Mumbai", 19.076, 72.8777, "INR"),
    ("JP", "Kanto", "Tokyo", 35.6762, 139.6503, "JPY"),
]

SECTORS = ["solar", "airports", "rail", "roads", "water"]
WORKS = {
    "solar": ["inverter park", "panel array", "grid tie-in"],
    "airports": ["runway extension", "terminal upgrade", "apron lighting"],
    "rail": ["signalling upgrade", "track renewal", "station retrofit"],
    "roads": ["bridge deck rehab", "interchange widening", "resurfacing"],
    "water": ["treatment plant", "main renewal", "harbor dredging"],
}
ENTITIES = ["Acme Infra", "Beta Build", "Gamma Grid", "Delta Water", "Epsilon Rail"]
STATUSES = ["announced", "planned", "procurement", "construction", "operational"]
RATES = {"USD": 1.0, "EUR": 1.08, "INR": 0.012, "JPY": 0.0067, "GBP": 1.27}


def product_for(country: str, index: int) -> str:
    if index >= 44:
        return "journal_digest"
    if country == "US":
        return "us_projects"
    if country in ("FR", "DE"):
        return "eu_tenders"
    return "asia_assets"


def build_corpus() -> list:
    records = []
    # three lifecycle snapshots of one recognizable project, for timelines
    riverton = [
        ("announced", "2024-01-10", "Riverton Solar Farm", "riverton-a"),
        ("procurement", "2024-02-15", "Riverton Solar Farm RFP", "riverton-b"),
        ("construction", "2024-03-20", "Riverton solar farm", "riverton-c"),
    ]
    for status, date, title, sid in riverton:
        records.append(new_record(
            source_id=sid, source_url=f"https://records.example/us/{sid}",
            product_name="us_projects", product_version="1.0.0",
            record_kind="project", title=title,
            description="150 MW photovoltaic plant with storage in the Central Valley.",
            country="US", region="California", status=status,
            budget_value=180_000_000.0, budget_currency="USD",
            budget_usd=180_000_000.0, date_published="2024-01-10",
            date_updated=date, location=GeoPoint(36.733, -119.784),
            sectors=("solar",),
            entities=(Stakeholder("Acme Infra", "sponsor"),)))
    # an obvious duplicate pair for dedup demos
    dup = dict(product_name="us_projects", product_version="1.0.0",
               record_kind="tender", country="US", region="California",
               status="procurement", budget_value=42_000_000.0,
               budget_currency="USD", budget_usd=42_000_000.0,
               date_published="2024-02-01", sectors=("airports",),
               entities=(Stakeholder("Beta Build", "contractor"),))
    records.append(new_record(
        source_id="harborview-1", source_url="https://records.example/us/harborview-1",
        title="Harborview Runway Extension Phase 2",
        description="Extension of runway 9L/27R with new apron lighting.",
        date_deadline="2024-04-02", date_updated="2024-02-02", **dup))
    records.append(new_record(
        source_id="harborview-2", source_url="https://tenders.example/us/harborview-2",
        title="harborview runway extension - phase 2",
        description="Runway 9L/27R extension works, apron lighting included.",
        date_deadline="2024-04-05", date_updated="2024-02-05", **dup))
    index = len(records)
    while len(records) < 50:
        i = index
        place = PLACES[i % len(PLACES)]
        country, region, city, lat, lon, currency = place
        sector = SECTORS[i % len(SECTORS)]
        work = WORKS[sector][i % 3]
        kind = "project" if i % 3 == 0 else ("asset" if i % 7 == 0 else "tender")
        product = product_for(country, i)
        status = STATUSES[i % len(STATUSES)]
        budget = 1_000_000.0 * ((i % 9) + 1)
        entity = ENTITIES[i % len(ENTITIES)] if i % 4 != 3 else ENTITIES[0]
        record = new_record(
            source_id=f"{product}-{i:03d}",
            source_url=f"https://records.example/{country.lower()}/{i:03d}",
            product_name=product, product_version="1.0.0",
            record_kind=kind,
            title=f"{city} {work} {i:03d}",
            description=f"{sector} {work} in {region}; stage {status}.",
            country=country, region=region, status=status,
            budget_value=budget, budget_currency=currency,
            budget_usd=round(budget * RATES[currency], 2),
            date_published=f"2024-01-{(i % 28) + 1:02d}",
            date_updated=f"2024-02-{(i % 28) + 1:02d}",
            date_deadline=f"2024-05-{(i % 28) + 1:02d}" if kind == "tender" else None,
            location=GeoPoint(lat, lon) if i % 5 != 4 else None,
            sectors=(sector,) if i % 6 != 5 else (sector, SECTORS[(i + 1) % len(SECTORS)]),
            entities=(Stakeholder(entity, "sponsor"),) if i % 8 != 7 else ())
        records.append(record)
        index += 1
    return records


def build_graph(records) -> GraphStore:
    store = GraphStore()
    node_ids = {}
    for record in records[:12]:
        doc = {
            "title": record.title,
            "description": record.description,
            "url": record.source_url,
            "sector": record.sectors[0] if record.sectors else "",
            "region": record.region or "",
            "record_id": record.record_id,
        }
        node, _ = store.ingest_node(doc)
        node_ids[record.record_id] = node.node_id
    news = [
        {"title": "Riverton Solar Farm enters construction",
         "description": "Contractor mobilized on site this week.",
         "url": "https://news.example/riverton-construction"},
        {"title": "Harborview runway tender attracts five bidders",
         "description": "Airport authority confirms strong interest.",
         "url": "https://news.example/harborview-bidders"},
        {"title": "California grid operators brace for summer peaks",
         "description": "Storage-backed solar plants cited as stabilizers.",
         "url": "https://news.example/california-grid"},
    ]
    news_ids = [store.ingest_node(doc)[0].node_id for doc in news]
    riverton_node = node_ids[records[0].record_id]
    store.link(riverton_node, news_ids[0], "has_a")
    store.link(node_ids[records[3].record_id], news_ids[1], "has_a")
    related = LexiconSpec(clauses=(
        LexiconClause("more_like_text", pattern="", weight=1.0),), limit=10)
    store.add_verb_edge(riverton_node, news_ids[2], related)
    store.add_verb_edge(riverton_node, node_ids[records[1].record_id], related)
    store.add_verb_edge(riverton_node, node_ids[records[2].record_id], related)
    return store


def build_dictionaries() -> list:
    status_entries = {s: s for s in
                      ["announced", "planned", "procurement", "construction",
                       "operational", "cancelled", "unknown"]}
    status_entries.update({
        "under construction": "construction", "live": "operational",
        "rfp": "procurement", "pre-construction": "planned",
        "commissioned": "operational", "awarded": "procurement",
    })
    country_entries = {"usa": "US", "united states": "US", "france": "FR",
                       "germany": "DE", "india": "IN", "japan": "JP",
                       "uk": "GB", "united kingdom": "GB"}
    currency_entries = {"usd": "USD", "us$": "USD", "eur": "EUR", "euro": "EUR",
                        "inr": "INR", "jpy": "JPY", "gbp": "GBP"}
    sector_entries = {s: s for s in SECTORS}
    sector_entries.update({"photovoltaic": "solar", "pv": "solar",
                           "aviation": "airports", "railways": "rail",
                           "highways": "roads"})
    return [
        {"attribute": "status", "entries": status_entries, "version": 1},
        {"attribute": "country", "entries": country_entries, "version": 1},
        {"attribute": "budget_currency", "entries": currency_entries, "version": 1},
        {"attribute": "sectors", "entries": sector_entries, "version": 1},
    ]


def build_product_rows() -> list:
    rows = []
    for i in range(10):
        status = "pre-bid" if i in (3, 7) else "under construction"
        rows.append({
            "Id": f"RAW-{i:02d}",
            "Url": f"https://portal.example/us/raw/{i:02d}",
            "Title": f"Sacramento levee upgrade section {i}",
            "Summary": "Levee reinforcement and seepage control works.",
            "Country": "usa",
            "Status": status,
            "Budget": f"{(i + 1) * 250},000",
            "Currency": "usd",
            "Published": "5 March 2024",
            "Region": "California",
            "Sectors": "water",
        })
    return rows


def build_mc3() -> dict:
    mapping = {
        "Id": "source_id", "Url": "source_url", "Title": "title",
        "Summary": "description", "Country": "country", "Status": "status",
        "Budget": "budget_value", "Currency": "budget_currency",
        "Published": "date_published", "Region": "region", "Sectors": "sectors",
    }
    return {
        "version": 1,
        "products": [
            {"name": "us_projects", "version": "1.0.0",
             "source_category": "official_government_project",
             "fetcher_id": "fixture", "field_mapping": mapping,
             "schedule": "0 6 * * *", "enabled": True},
            {"name": "eu_tenders", "version": "1.0.0",
             "source_category": "public_procurement",
             "fetcher_id": "fixture", "field_mapping": mapping,
             "schedule": "30 6 * * *", "enabled": False},
            {"name": "asia_assets", "version": "1.0.0",
             "source_category": "third_party_project",
             "fetcher_id": "fixture", "field_mapping": mapping,
             "schedule": "0 7 * * *", "enabled": False},
            {"name": "journal_digest", "version": "1.0.0",
             "source_category": "engineering_journals",
             "fetcher_id": "fixture", "field_mapping": mapping,
             "schedule": "0 8 * * 1", "enabled": False},
        ],
    }


def build_gazetteer() -> dict:
    entries = {city: {"lat": lat, "lon": lon}
               for _, _, city, lat, lon, _ in PLACES}
    entries["Sacramento"] = {"lat": 38.5816, "lon": -121.4944}
    hints = {city: country for country, _, city, _, _, _ in PLACES}
    hints["Sacramento"] = "US"
    return {"entries": entries, "scope_hints": hints}


def build_bot_rules() -> list:
    return [
        {"rule_id": "tag-runway-works", "target_field": "sectors",
         "conditions": [{"field": "country", "op": "eq", "value": "US"},
                        {"field": "title", "op": "contains", "value": "runway"}],
         "action": {"kind": "append_tag", "value": "airports"}, "priority": 10},
        {"rule_id": "canonicalize-status", "target_field": "status",
         "conditions": [{"field": "status", "op": "present"}],
         "action": {"kind": "map_via_dictionary"}, "priority": 5},
    ]


def build_taxonomy() -> dict:
    return {
        "solar": ["solar", "pv", "photovoltaic", "inverter"],
        "airports": ["runway", "terminal", "apron", "airport"],
        "rail": ["rail", "signalling", "track", "station"],
        "roads": ["road", "bridge", "interchange", "resurfacing"],
        "water": ["water", "levee", "treatment", "dredging", "harbor"],
    }


def main() -> None:
    FIXTURES.mkdir(exist_ok=True)
    (FIXTURES / "corpus").mkdir(exist_ok=True)
    (FIXTURES / "products").mkdir(exist_ok=True)
    records = build_corpus()
    (FIXTURES / "corpus" / "records_50.jsonl").write_text(
        "\n".join(json.dumps(r.to_json_dict(), sort_keys=True) for r in records) + "\n",
        encoding="utf-8")
    build_graph(records).export_jsonl(FIXTURES / "corpus" / "graph.jsonl")
    (FIXTURES / "dictionaries.json").write_text(
        json.dumps(build_dictionaries(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    (FIXTURES / "products" / "us_projects.jsonl").write_text(
        "\n".join(json.dumps(r) for r in build_product_rows()) + "\n", encoding="utf-8")
    (FIXTURES / "mc3.json").write_text(
        json.dumps(build_mc3(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    (FIXTURES / "gazetteer.json").write_text(
        json.dumps(build_gazetteer(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    (FIXTURES / "bot_rules.json").write_text(
        json.dumps(build_bot_rules(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    (FIXTURES / "taxonomy.json").write_text(
        json.dumps(build_taxonomy(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    (FIXTURES / "rates.csv").write_text(
        "currency,usd_per_unit\n" +
        "".join(f"{c},{r}\n" for c, r in sorted(RATES.items())), encoding="utf-8")
    print(f"fixtures written under {FIXTURES}")


if __name__ == "__main__":
    main()
