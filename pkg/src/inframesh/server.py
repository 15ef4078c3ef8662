"""REST surface over the mesh: search/serve, DELTA queue, dictionaries,
graph traversal, project timelines, the agent workflow, the market
landscape, and the MC3 product registry.

All responses are JSON in the same encodings the fixtures use. Mutating
endpoints require a bearer token from the configured token file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Any, Mapping

from fastapi import Body, Depends, FastAPI, HTTPException, Query, Request
from fastapi.responses import JSONResponse

from . import agents, search
from .config import MeshConfig
from .enrichment import resolve_delta
from .errors import (
    ConfigurationError,
    ConflictError,
    InvalidArgumentError,
    MeshError,
    NotFoundError,
    StorageError,
)
from .kg import GraphStore, LexiconSpec
from .lifecycle import FetcherRegistry, Gazetteer, jsonl_fixture_fetcher, run_product
from .mc3 import Mc3Registry
from .model import DataProductManifest, ReferenceDictionary
from .retrieval import RelevanceThresholds
from .scheduler import Scheduler
from .store import MeshStore


@dataclass
class ServerState:
    """Everything the endpoints need, wired once at startup."""

    config: MeshConfig
    mesh: MeshStore
    graph: GraphStore
    mc3: Mc3Registry
    registry: FetcherRegistry
    runtime: agents.AgentRuntime
    scheduler: Scheduler
    tokens: set[str] = dataclass_field(default_factory=set)
    gazetteer: Gazetteer | None = None
    rates: Mapping[str, float] | None = None
    contexts: dict[str, agents.ConversationContext] = dataclass_field(default_factory=dict)

    def run_one(self, manifest: DataProductManifest):
        receipt = run_product(manifest, self.registry, self.mesh,
                              self.config.data_path / "intermediate",
                              gazetteer=self.gazetteer, rates=self.rates,
                              clock=self.runtime.clock)
        if self.mesh.path:
            self.mesh.save()
        return receipt


def load_rates(path: Path) -> dict[str, float]:
    import csv

    rates: dict[str, float] = {}
    with path.open(encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            rates[row["currency"]] = float(row["usd_per_unit"])
    return rates


def bootstrap(config: MeshConfig, clock=None) -> ServerState:
    """Assemble stores, registries, and the agent runtime from on-disk state."""
    from .store import utc_now_iso

    clock = clock or utc_now_iso
    data = config.data_path
    mesh = MeshStore(data / "mesh.json")
    graph_path = data / "graph.jsonl"
    graph = GraphStore.import_jsonl(graph_path) if graph_path.exists() else GraphStore()
    mc3_path = Path(config.mc3_path) if config.mc3_path else data / "mc3.json"
    mc3 = Mc3Registry(mc3_path if mc3_path.exists() else None)
    if mc3.path is None:
        mc3.path = mc3_path
    registry = FetcherRegistry()
    fixtures_root = Path(config.fixtures_dir) if config.fixtures_dir else data / "products"
    registry.register("fixture", jsonl_fixture_fetcher(fixtures_root))
    gazetteer = None
    gazetteer_path = data / "gazetteer.json"
    if gazetteer_path.exists():
        gazetteer = Gazetteer.from_json_dict(
            json.loads(gazetteer_path.read_text(encoding="utf-8")))
    rates = None
    rates_path = data / "rates.csv"
    if rates_path.exists():
        rates = load_rates(rates_path)
    dictionaries_path = data / "dictionaries.json"
    if dictionaries_path.exists() and not mesh.dictionaries():
        for entry in json.loads(dictionaries_path.read_text(encoding="utf-8")):
            mesh.put_dictionary(ReferenceDictionary.from_json_dict(entry))
    llm = agents.MockLlmProvider()
    if config.llm_url:
        llm = agents.RemoteLlmProvider(config.llm_url)
    runtime = agents.AgentRuntime(
        mesh=mesh, graph=graph, llm=llm,
        thresholds=RelevanceThresholds(tau=config.tau, delta=config.delta),
        clock=clock,
        product_categories={m.name: m.source_category for m in mc3.list()})
    state = ServerState(config=config, mesh=mesh, graph=graph, mc3=mc3,
                        registry=registry, runtime=runtime,
                        scheduler=None,  # type: ignore[arg-type]
                        tokens=config.tokens(), gazetteer=gazetteer, rates=rates)
    state.scheduler = Scheduler(mc3.list, state.run_one)
    return state


def create_app(state: ServerState) -> FastAPI:
    app = FastAPI(title="inframesh", version="0.1.0")

    @app.exception_handler(MeshError)
    async def mesh_error_handler(_request: Request, exc: MeshError):
        status = 400
        if isinstance(exc, NotFoundError):
            status = 404
        elif isinstance(exc, ConflictError):
            status = 409
        elif isinstance(exc, StorageError):
            status = 503
        elif isinstance(exc, ConfigurationError):
            status = 400
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    def require_token(request: Request) -> None:
        header = request.headers.get("authorization", "")
        token = header.removeprefix("Bearer ").strip()
        if not state.tokens or token not in state.tokens:
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    @app.get("/health")
    def health():
        products = state.mc3.names()
        return search.health_summary(state.mesh, products, state.scheduler.states())

    @app.get("/records")
    def records(offset: int = 0, limit: int = Query(default=50, le=500),
                country: str | None = None, status: str | None = None,
                record_kind: str | None = None, product_name: str | None = None):
        filters: dict[str, dict[str, Any]] = {}
        for name, value in (("country", country), ("status", status),
                            ("record_kind", record_kind), ("product_name", product_name)):
            if value is not None:
                filters[name] = {"eq": value}
        result = search.search(search.SearchRequest(
            filters=filters, offset=offset, limit=limit), state.mesh)
        return result.to_json_dict()

    @app.post("/search")
    def do_search(payload: dict = Body(...)):
        req = search.parse_request(payload)
        return search.search(req, state.mesh).to_json_dict()

    @app.get("/geo")
    def geo_grid(precision: int | None = None, country: str | None = None,
                 status: str | None = None, sector: str | None = None):
        filters: dict[str, dict[str, Any]] = {}
        if country:
            filters["country"] = {"eq": country}
        if status:
            filters["status"] = {"eq": status}
        if sector:
            filters["sectors"] = {"eq": sector}
        buckets = search.geo_aggregate(
            filters, precision or state.config.geo_precision, state.mesh)
        return [b.to_json_dict() for b in buckets]

    @app.get("/deltas")
    def deltas(attribute: str | None = None):
        return [d.to_json_dict() for d in state.mesh.pending_deltas(attribute)]

    @app.post("/deltas/{entry_id}/resolve", dependencies=[Depends(require_token)])
    def resolve(entry_id: str, payload: dict = Body(...)):
        canonical = str(payload.get("canonical", ""))
        result = resolve_delta(entry_id, canonical, state.mesh,
                               clock=state.runtime.clock)
        if state.mesh.path:
            state.mesh.save()
        return {"attribute": result.attribute, "canonical": result.canonical,
                "dictionary_version": result.dictionary_version,
                "retro_applied": result.retro_applied}

    @app.get("/dictionaries")
    def dictionaries():
        return {name: d.to_json_dict()
                for name, d in sorted(state.mesh.dictionaries().items())}

    @app.put("/dictionaries/{attribute}", dependencies=[Depends(require_token)])
    def put_dictionary(attribute: str, payload: dict = Body(...)):
        current = state.mesh.get_dictionary(attribute)
        dictionary = ReferenceDictionary(
            attribute=attribute, entries=dict(payload.get("entries", {})),
            version=current.version + 1)
        state.mesh.put_dictionary(dictionary)
        if state.mesh.path:
            state.mesh.save()
        return dictionary.to_json_dict()

    @app.post("/kg/traverse")
    def kg_traverse(payload: dict = Body(...)):
        subject = payload.get("subject")
        if isinstance(subject, Mapping):
            node = state.graph.make_symbolic_subject(dict(subject))
            subject_id = node.node_id
        else:
            subject_id = str(subject or "")
        lexicon_payload = payload.get("lexicon")
        lexicon: LexiconSpec | str
        if isinstance(lexicon_payload, str):
            lexicon = lexicon_payload
        elif isinstance(lexicon_payload, Mapping):
            lexicon = LexiconSpec.from_json_dict(lexicon_payload)
        else:
            raise InvalidArgumentError("lexicon must be a name or a clause spec")
        limit = payload.get("limit")
        results = state.graph.traverse(subject_id, lexicon,
                                       int(limit) if limit is not None else None)
        return {"subject": subject_id,
                "results": [{"node_id": r.node_id, "score": r.score,
                             "properties": dict(state.graph.get_node(r.node_id).properties)}
                            for r in results]}

    @app.get("/projects/{anchor}/timeline")
    def timeline(anchor: str):
        events = search.track_project(anchor, state.mesh, state.graph)
        return [e.to_json_dict() for e in events]

    @app.post("/agents/query")
    def agents_query(payload: dict = Body(...)):
        query = str(payload.get("query", "")).strip()
        if not query:
            raise InvalidArgumentError("query must be non-empty")
        conversation_id = str(payload.get("conversation_id", "default"))
        ctx = state.contexts.get(conversation_id) or agents.ConversationContext(
            conversation_id=conversation_id, max_turns=state.config.max_turns)
        response, new_ctx = agents.ask(query, ctx, state.runtime)
        state.contexts[conversation_id] = new_ctx
        return response.to_json_dict()

    @app.get("/landscape")
    def landscape(region: str | None = None, sector: str | None = None,
                  precision: int | None = None):
        view = agents.market_landscape(region, sector, state.mesh,
                                       precision or state.config.geo_precision)
        return view.to_json_dict()

    @app.get("/mc3/products")
    def mc3_products():
        return state.mc3.to_json_dict()

    @app.put("/mc3/products", dependencies=[Depends(require_token)])
    def mc3_put(payload: dict = Body(...)):
        manifest = DataProductManifest.from_json_dict(payload)
        version = state.mc3.put(manifest)
        state.runtime.product_categories = {
            m.name: m.source_category for m in state.mc3.list()}
        return {"version": version, "stored": manifest.to_json_dict()}

    console_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if console_dir.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/console", StaticFiles(directory=console_dir, html=True),
                  name="console")

    return app


def serve_http(config: MeshConfig, state: ServerState | None = None) -> None:
    """Run the API (and console, when built) on the configured port."""
    import uvicorn

    state = state or bootstrap(config)
    app = create_app(state)
    ssl_kwargs = {}
    if config.tls_cert and config.tls_key:
        ssl_kwargs = {"ssl_certfile": config.tls_cert, "ssl_keyfile": config.tls_key}
    uvicorn.run(app, host="0.0.0.0", port=config.port, **ssl_kwargs)
