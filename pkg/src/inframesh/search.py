"""Search/serve queries over the mesh: filtered search with aggregations,
geo-hash grid aggregation, project timelines, and health summaries.

Search results are defined by a naive full-scan semantics; the
implementation is the same scan, kept simple enough to be its own spec.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from . import geo
from .enrichment import detect_duplicates
from .errors import InvalidArgumentError, NotFoundError
from .kg import GraphStore
from .model import STANDARD_RECORD_FIELDS, StandardRecord
from .retrieval import tokenize
from .store import MeshStore

FILTER_OPS = ("eq", "in", "range", "free_text")
FREE_TEXT_FIELDS = ("title", "description", "sectors")
NUMERIC_FIELDS = ("budget_value", "budget_usd")
MAX_PAGE_LIMIT = 500
METRICS = ("count", "sum_budget_usd")


@dataclass(frozen=True)
class Aggregation:
    dimension: str
    metric: str = "count"


@dataclass(frozen=True)
class SearchRequest:
    filters: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    aggregations: tuple[Aggregation, ...] = ()
    sort: str | None = None
    offset: int = 0
    limit: int = 50


def validate_request(req: SearchRequest) -> None:
    problems = []
    for field_name, clause in req.filters.items():
        if field_name not in STANDARD_RECORD_FIELDS:
            problems.append(f"unknown filter field {field_name!r}")
            continue
        for op, value in clause.items():
            if op not in FILTER_OPS:
                problems.append(f"unknown op {op!r} on {field_name!r}")
            elif op == "free_text" and field_name not in FREE_TEXT_FIELDS:
                problems.append(f"free_text not allowed on {field_name!r}")
            elif op == "range" and not isinstance(value, Mapping):
                problems.append(f"range on {field_name!r} needs gte/lte bounds")
    for aggregation in req.aggregations:
        if aggregation.dimension not in STANDARD_RECORD_FIELDS:
            problems.append(f"unknown aggregation dimension {aggregation.dimension!r}")
        if aggregation.metric not in METRICS:
            problems.append(f"unknown metric {aggregation.metric!r}")
    if not (0 < req.limit <= MAX_PAGE_LIMIT):
        problems.append(f"limit must be in 1..{MAX_PAGE_LIMIT}")
    if req.offset < 0:
        problems.append("offset must be >= 0")
    if req.sort:
        sort_field = req.sort.lstrip("-")
        if sort_field not in STANDARD_RECORD_FIELDS:
            problems.append(f"unknown sort field {sort_field!r}")
    if problems:
        raise InvalidArgumentError("; ".join(problems))


def parse_request(data: Mapping[str, Any]) -> SearchRequest:
    page = data.get("page", {})
    req = SearchRequest(
        filters={str(k): dict(v) for k, v in data.get("filters", {}).items()},
        aggregations=tuple(
            Aggregation(dimension=str(a["dimension"]),
                        metric=str(a.get("metric", "count")))
            for a in data.get("aggregations", ())),
        sort=data.get("sort"),
        offset=int(page.get("offset", 0)),
        limit=int(page.get("limit", 50)))
    validate_request(req)
    return req


def compile_filters(filters: Mapping[str, Mapping[str, Any]]):
    """Build one predicate per clause up front; full scans stay cheap."""
    predicates = []
    for field_name, clause in filters.items():
        for op, expected in clause.items():
            predicates.append(_compile_clause(field_name, op, expected))

    if len(predicates) == 1:
        return predicates[0]

    def matches(record: StandardRecord) -> bool:
        return all(predicate(record) for predicate in predicates)

    return matches


def _compile_clause(field_name: str, op: str, expected: Any):
    if op == "eq":
        if field_name in NUMERIC_FIELDS:
            return lambda record: _eq(field_name, getattr(record, field_name), expected)
        target = str(expected).casefold()

        def eq(record: StandardRecord) -> bool:
            value = getattr(record, field_name)
            if value is None:
                return False
            if isinstance(value, tuple):
                return any(str(v).casefold() == target for v in value)
            return str(value).casefold() == target

        return eq
    if op == "in":
        items = list(expected)
        return lambda record: any(
            _eq(field_name, getattr(record, field_name), item) for item in items)
    if op == "range":
        bounds = dict(expected)
        return lambda record: _in_range(field_name, getattr(record, field_name), bounds)
    # free_text: pre-tokenize the query terms once
    terms = tokenize(str(expected))

    def free_text(record: StandardRecord) -> bool:
        value = getattr(record, field_name)
        if not terms:
            return True
        if isinstance(value, (tuple, list)):
            haystack = set(tokenize(" ".join(str(v) for v in value)))
        else:
            haystack = set(tokenize(str(value or "")))
        return all(term in haystack for term in terms)

    return free_text


def record_matches(record: StandardRecord, filters: Mapping[str, Mapping[str, Any]]) -> bool:
    return compile_filters(filters)(record)


def _eq(field_name: str, value: Any, expected: Any) -> bool:
    if value is None:
        return False
    if field_name in NUMERIC_FIELDS:
        try:
            return float(value) == float(expected)
        except (TypeError, ValueError):
            return False
    target = str(expected).casefold()
    if isinstance(value, (tuple, list)):
        return any(str(v).casefold() == target for v in value)
    return str(value).casefold() == target


def _in_range(field_name: str, value: Any, bounds: Mapping[str, Any]) -> bool:
    if value is None:
        return False
    if field_name in NUMERIC_FIELDS:
        current = float(value)
        gte = bounds.get("gte")
        lte = bounds.get("lte")
        if gte is not None and current < float(gte):
            return False
        if lte is not None and current > float(lte):
            return False
        return True
    current = str(value)
    gte = bounds.get("gte")
    lte = bounds.get("lte")
    if gte is not None and current < str(gte):
        return False
    if lte is not None and current > str(lte):
        return False
    return True


@dataclass(frozen=True)
class SearchResult:
    hits: tuple[StandardRecord, ...]
    total: int
    aggregations: Mapping[str, Mapping[str, float]]

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "hits": [r.to_json_dict() for r in self.hits],
            "total": self.total,
            "aggregations": {k: dict(v) for k, v in self.aggregations.items()},
        }


def search(req: SearchRequest, store: MeshStore) -> SearchResult:
    """Full-scan filter, aggregate over the whole filtered set, then page."""
    validate_request(req)
    matches = compile_filters(req.filters)
    matched = [r for r in store.all_records() if matches(r)]
    if req.sort:
        matched.sort(key=_sort_key(req.sort))
    # default order is record_id ascending, which the store scan already is
    aggregations: dict[str, dict[str, float]] = {}
    for aggregation in req.aggregations:
        buckets: dict[str, float] = {}
        for record in matched:
            for bucket in _bucket_values(record, aggregation.dimension):
                gain = 1 if aggregation.metric == "count" else (record.budget_usd or 0.0)
                buckets[bucket] = buckets.get(bucket, 0) + gain
        key = f"{aggregation.dimension}:{aggregation.metric}"
        aggregations[key] = dict(sorted(buckets.items()))
    page = matched[req.offset:req.offset + req.limit]
    return SearchResult(hits=tuple(page), total=len(matched), aggregations=aggregations)


def _bucket_values(record: StandardRecord, dimension: str) -> Iterable[str]:
    value = getattr(record, dimension)
    if value is None:
        return ("(none)",)
    if isinstance(value, (tuple, list)):
        return tuple(str(v) for v in value) or ("(none)",)
    return (str(value),)


def _sort_key(sort: str | None):
    if not sort:
        return lambda record: record.record_id
    descending = sort.startswith("-")
    field_name = sort.lstrip("-")

    def key(record: StandardRecord):
        value = getattr(record, field_name)
        missing = value is None
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        if value is None:
            value = ""
        if field_name in NUMERIC_FIELDS:
            value = float(value) if not missing else 0.0
            if descending:
                value = -value
            return (missing, value, record.record_id)
        text = str(value)
        if descending:
            # invert character ordinals for a descending text sort with a
            # stable record_id tie-break
            text = "".join(chr(0x10FFFF - ord(c)) for c in text)
        return (missing, text, record.record_id)

    return key


@dataclass(frozen=True)
class GeoBucket:
    geohash: str
    count: int
    sum_budget_usd: float

    def to_json_dict(self) -> dict[str, Any]:
        return {"geohash": self.geohash, "count": self.count,
                "sum_budget_usd": self.sum_budget_usd}


def geo_aggregate(filters: Mapping[str, Mapping[str, Any]], precision: int,
                  store: MeshStore) -> list[GeoBucket]:
    """Group filtered, located records into geohash cells."""
    if not (geo.MIN_PRECISION <= precision <= geo.MAX_PRECISION):
        raise InvalidArgumentError(
            f"precision must be in {geo.MIN_PRECISION}..{geo.MAX_PRECISION}")
    validate_request(SearchRequest(filters=filters))
    matches = compile_filters(filters)
    buckets: dict[str, list[float]] = {}
    for record in store.all_records():
        if record.location is None or not matches(record):
            continue
        cell = geo.encode_point(record.location, precision)
        slot = buckets.setdefault(cell, [0, 0.0])
        slot[0] += 1
        slot[1] += record.budget_usd or 0.0
    return [GeoBucket(geohash=cell, count=int(slot[0]), sum_budget_usd=slot[1])
            for cell, slot in sorted(buckets.items())]


@dataclass(frozen=True)
class TimelineEvent:
    date: str
    status: str
    source: str
    title: str

    def to_json_dict(self) -> dict[str, str]:
        return {"date": self.date, "status": self.status,
                "source": self.source, "title": self.title}


def track_project(anchor: str, mesh: MeshStore,
                  graph: GraphStore | None = None) -> list[TimelineEvent]:
    """Status timeline from the anchor, its duplicate cluster, and graph
    neighbors; same-day same-status events collapse to one."""
    members: dict[str, StandardRecord] = {}
    try:
        record = mesh.get(anchor)
        members[record.record_id] = record
    except NotFoundError:
        if graph is None or not graph.has_node(anchor):
            raise
        node = graph.get_node(anchor)
        if node.node_type == "symbolic":
            filters = node.prop("filters") or {}
            for candidate in mesh.all_records():
                probe = _record_as_node_props(candidate)
                if all(_prop_match(probe, k, v) for k, v in filters.items()):
                    members[candidate.record_id] = candidate
        else:
            record_id = str(node.prop("record_id") or "")
            if record_id:
                record = mesh.get(record_id)
                members[record.record_id] = record
    if not members:
        raise NotFoundError(f"anchor {anchor!r} resolves to no records")
    all_records = mesh.all_records(include_superseded=True)
    for cluster in detect_duplicates(all_records):
        if any(member_id in members for member_id in cluster.member_ids):
            for member_id in cluster.member_ids:
                members[member_id] = mesh.get(member_id)
    events = []
    for record in members.values():
        events.append(TimelineEvent(
            date=record.date_updated or record.date_published or "",
            status=record.status, source=record.source_url, title=record.title))
    if graph is not None:
        member_ids = set(members)
        for node_id in graph.node_ids():
            node = graph.get_node(node_id)
            if str(node.prop("record_id") or "") not in member_ids:
                continue
            for neighbor_id in graph.neighbors(node_id, ("verb", "has_a")):
                neighbor = graph.get_node(neighbor_id)
                status = neighbor.prop("status")
                if not status:
                    continue
                events.append(TimelineEvent(
                    date=str(neighbor.prop("date") or neighbor.prop("timestamp") or ""),
                    status=str(status),
                    source=str(neighbor.prop("url") or neighbor_id),
                    title=str(neighbor.prop("title") or "")))
    deduped: dict[tuple[str, str], TimelineEvent] = {}
    for event in sorted(events, key=lambda e: (e.date, e.status, e.source)):
        deduped.setdefault((event.date, event.status), event)
    return sorted(deduped.values(), key=lambda e: (e.date, e.status))


def _record_as_node_props(record: StandardRecord) -> dict[str, Any]:
    return {"country": record.country, "region": record.region,
            "status": record.status, "sectors": list(record.sectors),
            "record_kind": record.record_kind, "title": record.title}


def _prop_match(props: Mapping[str, Any], field_name: str, expected: str) -> bool:
    names = [field_name, "sectors"] if field_name == "sector" else [field_name]
    for name in names:
        value = props.get(name)
        if value is None:
            continue
        values = value if isinstance(value, (tuple, list)) else [value]
        if any(str(v).casefold() == str(expected).casefold() for v in values):
            return True
    return False


def health_summary(store: MeshStore, products: Sequence[str],
                   states: Mapping[str, str] | None = None) -> dict[str, dict[str, Any]]:
    """Per-product counts and freshness; covers never-run products too."""
    states = states or {}
    summary = {}
    for name in sorted(set(products)):
        summary[name] = {
            "record_count": store.count(name),
            "last_ingest_at": store.last_ingest_at(name),
            "pending_deltas": store.pending_delta_count(name),
            "state": states.get(name, "idle"),
        }
    return summary
