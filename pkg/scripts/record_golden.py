#!/usr/bin/env python3
"""Record golden workflow transcripts against the fixture corpus.

The mock provider and a fixed clock make every byte reproducible; the
acceptance suite replays these queries and compares bytes. Run after any
intentional change to the corpus or the workflow:

    python3 scripts/record_golden.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))
sys.path.insert(0, str(ROOT / "tests"))

from corpus import make_runtime  # noqa: E402
from inframesh.agents import ConversationContext, ask  # noqa: E402

GOLDEN = ROOT / "fixtures" / "golden"

QUERIES = {
    "ask": "latest status of Riverton Solar Farm",
    "compare": "compare risks of Riverton Solar Farm and similar projects",
}


def record(name: str, query: str) -> dict:
    runtime = make_runtime()
    ctx = ConversationContext(conversation_id="golden")
    response, _ = ask(query, ctx, runtime)
    (GOLDEN / f"{name}_transcript.jsonl").write_text(
        runtime.activity_log.to_jsonl() + "\n", encoding="utf-8")
    (GOLDEN / f"{name}_response.json").write_text(
        json.dumps(response.to_json_dict(), indent=1, sort_keys=True) + "\n",
        encoding="utf-8")
    return response.to_json_dict()


def pick_uncertain_query() -> str:
    """Find a fixture query whose evidence carries positive uncertainty, so
    the closed delta gate has something to reject."""
    candidates = [
        "update on tenders without named stakeholders",
        "station retrofit progress in Kanto",
        "grid tie-in expansion latest update",
        "levee and harbor works status",
    ]
    for query in candidates:
        runtime = make_runtime(tau=-1.0, delta=1.0)
        response, _ = ask(query, ConversationContext(conversation_id="probe"), runtime)
        if response.max_uncertainty > 0:
            return query
    raise SystemExit("no candidate query yields positive uncertainty")


def main() -> None:
    GOLDEN.mkdir(parents=True, exist_ok=True)
    meta = {"queries": dict(QUERIES)}
    for name, query in QUERIES.items():
        body = record(name, query)
        print(f"{name}: plan={body['plan_id']} max_u={body['max_uncertainty']:.4f}")
    meta["uncertain_query"] = pick_uncertain_query()
    (GOLDEN / "meta.json").write_text(
        json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"uncertain query: {meta['uncertain_query']}")
    print(f"golden files under {GOLDEN}")


if __name__ == "__main__":
    main()
