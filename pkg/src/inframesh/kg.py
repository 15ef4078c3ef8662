"""Triplet knowledge graph: symbolic subjects, lazy literals, Is-A / Has-A
edges, token-frequency vectors, and weighted lexical traversal.

Nodes enter from JSON documents; literals stay unmaterialized until a
traversal returns the node, which keeps large graphs cheap to hold. Scoring
is a linear weighted-clause model with hard must / must-not gates so an
eager full-scan oracle can check every traversal.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from . import retrieval
from .errors import FormatError, InvalidArgumentError, NotFoundError
from .model import STANDARD_RECORD_FIELDS

NODE_TYPES = ("data_point", "symbolic", "term")
EDGE_KINDS = ("verb", "is_a", "has_a")
CLAUSE_KINDS = ("must", "must_not", "should", "more_like_text")

#: Standard addressable properties of a data-point node.
STANDARD_PROPERTIES = ("title", "description", "url", "location", "timestamp")

#: Fields a symbolic subject may filter on.
FILTERABLE_FIELDS = tuple(sorted(set(STANDARD_RECORD_FIELDS) |
                                 set(STANDARD_PROPERTIES) | {"sector"}))


@dataclass(frozen=True)
class LexiconClause:
    kind: str
    field: str = ""
    pattern: str = ""
    weight: float = 0.0

    def __post_init__(self):
        if self.kind not in CLAUSE_KINDS:
            raise InvalidArgumentError(f"unknown clause kind: {self.kind!r}")
        if self.weight < 0:
            raise InvalidArgumentError("clause weight must be non-negative")

    def to_json_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "field": self.field, "pattern": self.pattern,
                "weight": self.weight}

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "LexiconClause":
        return cls(kind=str(data["kind"]), field=str(data.get("field", "")),
                   pattern=str(data.get("pattern", "")), weight=float(data.get("weight", 0.0)))


@dataclass(frozen=True)
class LexiconSpec:
    """Weighted lexical relation: hard gates plus scored clauses."""

    clauses: tuple[LexiconClause, ...]
    limit: int = 10
    min_score: float = 0.0

    def __post_init__(self):
        if not isinstance(self.clauses, tuple):
            object.__setattr__(self, "clauses", tuple(self.clauses))
        if self.limit < 1:
            raise InvalidArgumentError("limit must be positive")
        if self.min_score < 0:
            raise InvalidArgumentError("min_score must be non-negative")
        if not any(c.kind != "must_not" for c in self.clauses):
            raise InvalidArgumentError("lexicon needs at least one non-must_not clause")
        scored = [c for c in self.clauses if c.kind in ("should", "more_like_text")]
        if scored and not math.fsum(c.weight for c in scored) > 0:
            raise InvalidArgumentError("should/more_like_text weights must sum to > 0")

    def to_json_dict(self) -> dict[str, Any]:
        return {"clauses": [c.to_json_dict() for c in self.clauses],
                "limit": self.limit, "min_score": self.min_score}

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "LexiconSpec":
        return cls(clauses=tuple(LexiconClause.from_json_dict(c) for c in data["clauses"]),
                   limit=int(data.get("limit", 10)),
                   min_score=float(data.get("min_score", 0.0)))


@dataclass(frozen=True)
class SubjectNode:
    node_id: str
    node_type: str
    properties: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.node_type not in NODE_TYPES:
            raise InvalidArgumentError(f"unknown node type: {self.node_type!r}")
        if self.node_type == "symbolic" and not self.properties.get("filter_expression"):
            raise InvalidArgumentError("symbolic node needs a filter expression")
        object.__setattr__(self, "properties", dict(self.properties))

    def prop(self, name: str) -> Any:
        return self.properties.get(name)


@dataclass(frozen=True)
class Triplet:
    subject: str
    lexicon: LexiconSpec | str | None
    object: str
    edge_kind: str

    def __post_init__(self):
        if self.edge_kind not in EDGE_KINDS:
            raise InvalidArgumentError(f"unknown edge kind: {self.edge_kind!r}")
        if self.edge_kind in ("is_a", "has_a") and isinstance(self.lexicon, LexiconSpec):
            raise InvalidArgumentError(f"{self.edge_kind} edges carry no lexicon clauses")
        if self.edge_kind == "verb" and self.lexicon is None:
            raise InvalidArgumentError("verb edges need a lexicon or a stored lexicon name")


@dataclass(frozen=True)
class TokenVector:
    terms: Mapping[str, int]
    norm: float

    def __post_init__(self):
        object.__setattr__(self, "terms", dict(self.terms))
        if any(count < 1 for count in self.terms.values()):
            raise InvalidArgumentError("token counts must be >= 1")
        actual = math.sqrt(math.fsum(c * c for c in self.terms.values()))
        if actual > 0 and abs(self.norm - actual) > 1e-9 * actual:
            raise InvalidArgumentError("cached norm disagrees with recomputed norm")
        if actual == 0 and self.norm != 0.0:
            raise InvalidArgumentError("empty vector must have zero norm")

    @classmethod
    def from_terms(cls, terms: Mapping[str, int]) -> "TokenVector":
        return cls(terms=terms, norm=math.sqrt(math.fsum(c * c for c in terms.values())))


@dataclass(frozen=True)
class TraversalResult:
    node_id: str
    score: float


def _flatten(document: Mapping[str, Any], prefix: str = "") -> Iterator[tuple[str, Any]]:
    for key, value in document.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if isinstance(value, Mapping):
            yield from _flatten(value, path)
        else:
            yield path, value


def node_id_for_document(document: Mapping[str, Any]) -> str:
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return "dp-" + hashlib.blake2b(canonical.encode("utf-8"), digest_size=8).hexdigest()


def symbolic_node_id(filters: Mapping[str, str]) -> str:
    canonical = json.dumps({k: filters[k] for k in sorted(filters)},
                           separators=(",", ":"))
    return "sym-" + hashlib.blake2b(canonical.encode("utf-8"), digest_size=8).hexdigest()


class GraphStore:
    """Node table plus append-only edge log; single-writer commits."""

    def __init__(self):
        self._lock = threading.RLock()
        self._nodes: dict[str, SubjectNode] = {}
        self._vectors: dict[str, TokenVector] = {}
        self._texts: dict[str, str] = {}
        self._edges: list[Triplet] = []
        self._lexicons: dict[str, LexiconSpec] = {}
        self._literals: dict[str, dict[str, Any]] = {}
        self.materialization_count = 0

    # -- ingestion --

    def ingest_node(self, document: Mapping[str, Any]) -> tuple[SubjectNode, TokenVector]:
        """Store a JSON document as a data-point node with its token vector.

        Only lazy literal placeholders are created; no edges materialize.
        """
        if not isinstance(document, Mapping):
            raise FormatError("node source must be a JSON object")
        flat = list(_flatten(document))
        text = " ".join(str(v) for _, v in flat if isinstance(v, str))
        vector = TokenVector.from_terms(_count(retrieval.tokenize(text)))
        properties = {path: value for path, value in flat}
        node = SubjectNode(node_id=node_id_for_document(document),
                           node_type="data_point", properties=properties)
        with self._lock:
            self._nodes[node.node_id] = node
            self._vectors[node.node_id] = vector
            self._texts[node.node_id] = text
        return node, vector

    def make_symbolic_subject(self, filters: Mapping[str, str]) -> SubjectNode:
        """Filter-defined start node; materializes no members until traversed.

        Equal filter sets always produce the same node id.
        """
        if not filters:
            raise InvalidArgumentError("symbolic subject needs at least one predicate")
        for field_name in filters:
            if field_name not in FILTERABLE_FIELDS:
                raise InvalidArgumentError(f"cannot filter on unknown field {field_name!r}")
        expression = " AND ".join(f"{k}={filters[k]}" for k in sorted(filters))
        node = SubjectNode(
            node_id=symbolic_node_id(filters),
            node_type="symbolic",
            properties={"filter_expression": expression, "filters": dict(filters)})
        with self._lock:
            self._nodes.setdefault(node.node_id, node)
            return self._nodes[node.node_id]

    # -- edges --

    def link(self, subject: str, object_id: str, kind: str) -> Triplet:
        """Store an is_a or has_a edge; is_a cycles are rejected."""
        if kind not in ("is_a", "has_a"):
            raise InvalidArgumentError(f"link() stores is_a/has_a edges, not {kind!r}")
        with self._lock:
            self._require(subject)
            self._require(object_id)
            if kind == "is_a":
                if subject == object_id or subject in self._ancestors(object_id):
                    raise InvalidArgumentError(
                        f"is_a cycle: {subject!r} is already a supertype of {object_id!r}")
            edge = Triplet(subject=subject, lexicon=None if kind != "verb" else "",
                           object=object_id, edge_kind=kind)
            self._edges.append(edge)
            return edge

    def add_verb_edge(self, subject: str, object_id: str,
                      lexicon: LexiconSpec | str) -> Triplet:
        with self._lock:
            self._require(subject)
            self._require(object_id)
            edge = Triplet(subject=subject, lexicon=lexicon, object=object_id,
                           edge_kind="verb")
            self._edges.append(edge)
            return edge

    def _ancestors(self, node_id: str) -> set[str]:
        """All supertypes reachable by forward is_a edges."""
        seen: set[str] = set()
        frontier = [node_id]
        while frontier:
            current = frontier.pop()
            for edge in self._edges:
                if edge.edge_kind == "is_a" and edge.subject == current \
                        and edge.object not in seen:
                    seen.add(edge.object)
                    frontier.append(edge.object)
        return seen

    def subtype_closure(self, node_id: str) -> set[str]:
        """The node plus everything reachable by reversed is_a edges."""
        with self._lock:
            self._require(node_id)
            closure = {node_id}
            frontier = [node_id]
            while frontier:
                current = frontier.pop()
                for edge in self._edges:
                    if edge.edge_kind == "is_a" and edge.object == current \
                            and edge.subject not in closure:
                        closure.add(edge.subject)
                        frontier.append(edge.subject)
            return closure

    def delete_node(self, node_id: str) -> None:
        """Remove the node and its edges. Has-A objects had independent
        existence, so object nodes are never cascade-deleted."""
        with self._lock:
            self._require(node_id)
            del self._nodes[node_id]
            self._vectors.pop(node_id, None)
            self._texts.pop(node_id, None)
            self._literals.pop(node_id, None)
            self._edges = [e for e in self._edges
                           if e.subject != node_id and e.object != node_id]

    # -- named lexicons --

    def put_lexicon(self, name: str, lexicon: LexiconSpec) -> None:
        with self._lock:
            self._lexicons[name] = lexicon

    def get_lexicon(self, name: str) -> LexiconSpec:
        with self._lock:
            lexicon = self._lexicons.get(name)
        if lexicon is None:
            raise NotFoundError(f"no stored lexicon named {name!r}")
        return lexicon

    # -- scoring and traversal --

    def score(self, subject_id: str, candidate_id: str,
              lexicon: LexiconSpec) -> float | None:
        """Weighted clause score, or None when a hard gate rejects."""
        with self._lock:
            subject = self._require(subject_id)
            candidate = self._require(candidate_id)
            subject_vec = self._vectors.get(subject_id)
            candidate_vec = self._vectors.get(candidate_id)
        return score_candidate(subject, candidate, lexicon, subject_vec, candidate_vec)

    def traverse(self, subject_id: str, lexicon: LexiconSpec | str,
                 limit: int | None = None) -> list[TraversalResult]:
        """Score candidates on demand and materialize only the winners.

        Candidates are stored verb-edge objects plus, for symbolic subjects,
        nodes satisfying the filter expression. Results are sorted by score
        descending with node-id tie-break, cut at min_score, and truncated.
        """
        if isinstance(lexicon, str):
            lexicon = self.get_lexicon(lexicon)
        with self._lock:
            subject = self._require(subject_id)
            candidate_ids = sorted({e.object for e in self._edges
                                    if e.edge_kind == "verb" and e.subject == subject_id})
            if subject.node_type == "symbolic":
                filters = subject.prop("filters") or {}
                for node_id, node in sorted(self._nodes.items()):
                    if node_id != subject_id and matches_filters(node, filters):
                        if node_id not in candidate_ids:
                            candidate_ids.append(node_id)
            scored: list[TraversalResult] = []
            for candidate_id in candidate_ids:
                value = score_candidate(subject, self._nodes[candidate_id], lexicon,
                                        self._vectors.get(subject_id),
                                        self._vectors.get(candidate_id))
                if value is not None and value >= lexicon.min_score:
                    scored.append(TraversalResult(candidate_id, value))
            scored.sort(key=lambda r: (-r.score, r.node_id))
            cut = limit if limit is not None else lexicon.limit
            results = scored[:cut]
            for result in results:
                self._materialize(result.node_id)
            return results

    def _materialize(self, node_id: str) -> None:
        if node_id in self._literals:
            return
        node = self._nodes[node_id]
        self._literals[node_id] = {
            name: {"type": type(value).__name__, "value": value}
            for name, value in sorted(node.properties.items())}
        self.materialization_count += 1

    def is_materialized(self, node_id: str) -> bool:
        with self._lock:
            return node_id in self._literals

    def literals_of(self, node_id: str) -> dict[str, Any]:
        with self._lock:
            self._require(node_id)
            return dict(self._literals.get(node_id, {}))

    # -- lookups --

    def get_node(self, node_id: str) -> SubjectNode:
        with self._lock:
            return self._require(node_id)

    def has_node(self, node_id: str) -> bool:
        with self._lock:
            return node_id in self._nodes

    def vector_of(self, node_id: str) -> TokenVector | None:
        with self._lock:
            return self._vectors.get(node_id)

    def edges(self) -> list[Triplet]:
        with self._lock:
            return list(self._edges)

    def node_count(self) -> int:
        with self._lock:
            return len(self._nodes)

    def node_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._nodes)

    def neighbors(self, node_id: str, kinds: tuple[str, ...] = EDGE_KINDS) -> list[str]:
        with self._lock:
            return sorted({e.object for e in self._edges
                           if e.subject == node_id and e.edge_kind in kinds})

    def nodes_with_vectors(self) -> Iterator[tuple[str, dict[str, int], str, str]]:
        """(node_id, term counts, text, origin) for the retrieval module."""
        with self._lock:
            snapshot = [(node_id, dict(vec.terms), self._texts.get(node_id, ""),
                         str(self._nodes[node_id].prop("url") or node_id))
                        for node_id, vec in sorted(self._vectors.items())
                        if node_id in self._nodes]
        return iter(snapshot)

    def _require(self, node_id: str) -> SubjectNode:
        node = self._nodes.get(node_id)
        if node is None:
            raise NotFoundError(f"node {node_id!r} not in graph")
        return node

    # -- JSON-lines export/import for fixtures --

    def export_jsonl(self, path: str | Path) -> None:
        lines = []
        with self._lock:
            for node_id, node in sorted(self._nodes.items()):
                vector = self._vectors.get(node_id)
                lines.append(json.dumps({
                    "kind": "node", "node_id": node_id, "node_type": node.node_type,
                    "properties": node.properties,
                    "terms": dict(vector.terms) if vector else None,
                    "text": self._texts.get(node_id, ""),
                }, sort_keys=True))
            for edge in self._edges:
                lexicon: Any = edge.lexicon
                if isinstance(lexicon, LexiconSpec):
                    lexicon = {"spec": lexicon.to_json_dict()}
                lines.append(json.dumps({
                    "kind": "edge", "subject": edge.subject, "object": edge.object,
                    "edge_kind": edge.edge_kind, "lexicon": lexicon,
                }, sort_keys=True))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def import_jsonl(cls, path: str | Path) -> "GraphStore":
        store = cls()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            data = json.loads(line)
            if data["kind"] == "node":
                node = SubjectNode(node_id=data["node_id"], node_type=data["node_type"],
                                   properties=data["properties"])
                store._nodes[node.node_id] = node
                if data.get("terms") is not None:
                    store._vectors[node.node_id] = TokenVector.from_terms(data["terms"])
                store._texts[node.node_id] = data.get("text", "")
            elif data["kind"] == "edge":
                lexicon = data.get("lexicon")
                if isinstance(lexicon, Mapping) and "spec" in lexicon:
                    lexicon = LexiconSpec.from_json_dict(lexicon["spec"])
                store._edges.append(Triplet(
                    subject=data["subject"], lexicon=lexicon,
                    object=data["object"], edge_kind=data["edge_kind"]))
        return store


def _count(tokens: Iterable[str]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for token in tokens:
        counts[token] = counts.get(token, 0) + 1
    return counts


def matches_filters(node: SubjectNode, filters: Mapping[str, str]) -> bool:
    if node.node_type == "symbolic":
        return False
    return all(_property_matches(node, field_name, expected)
               for field_name, expected in filters.items())


def _property_matches(node: SubjectNode, field_name: str, expected: str) -> bool:
    aliases = [field_name]
    if field_name == "sector":
        aliases.append("sectors")
    elif field_name == "sectors":
        aliases.append("sector")
    target = str(expected).casefold()
    for alias in aliases:
        value = node.prop(alias)
        if value is None:
            continue
        if isinstance(value, (list, tuple)):
            if any(str(v).casefold() == target for v in value):
                return True
        elif str(value).casefold() == target:
            return True
    return False


def _clause_matches(node: SubjectNode, clause: LexiconClause) -> bool:
    value = node.prop(clause.field)
    if value is None:
        return False
    if isinstance(value, (list, tuple)):
        text = " ".join(str(v) for v in value)
    else:
        text = str(value)
    return re.search(clause.pattern, text, re.IGNORECASE) is not None


def score_candidate(subject: SubjectNode, candidate: SubjectNode,
                    lexicon: LexiconSpec, subject_vec: TokenVector | None,
                    candidate_vec: TokenVector | None) -> float | None:
    """Hard must / must-not gates, then the linear weighted sum."""
    for clause in lexicon.clauses:
        if clause.kind == "must" and not _clause_matches(candidate, clause):
            return None
        if clause.kind == "must_not" and _clause_matches(candidate, clause):
            return None
    total = 0.0
    for clause in lexicon.clauses:
        if clause.kind == "should":
            if _clause_matches(candidate, clause):
                total += clause.weight
        elif clause.kind == "more_like_text":
            total += clause.weight * _text_similarity(clause, subject_vec, candidate_vec)
    return total


def _text_similarity(clause: LexiconClause, subject_vec: TokenVector | None,
                     candidate_vec: TokenVector | None) -> float:
    if candidate_vec is None or not candidate_vec.terms:
        return 0.0
    if clause.pattern.strip():
        reference = retrieval.embed(retrieval.tokenize(clause.pattern))
    elif subject_vec is not None and subject_vec.terms:
        reference = retrieval.embed_counts(subject_vec.terms)
    else:
        return 0.0
    if reference.is_zero:
        return 0.0
    return retrieval.cosine(reference, retrieval.embed_counts(candidate_vec.terms))
