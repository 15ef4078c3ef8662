"""Multi-agent query workflow: context management, planning, step execution
with uncertainty gating, validation, activity logging, and the LLM provider
abstraction with a deterministic mock.

For every step the executor retrieves evidence, assesses uncertainty,
filters by the cosine threshold, generates through the provider only when
the uncertainty gate passes, validates, and logs. Step failures degrade the
answer, never abort the plan.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Any, Mapping, Protocol, Sequence

from . import retrieval
from .enrichment import detect_duplicates, outlier_scan
from .errors import (
    ConfigurationError,
    InsufficientDataError,
    InvalidArgumentError,
    ProviderError,
    ProviderFormatError,
)
from .kg import GraphStore
from .model import StandardRecord, is_populated
from .retrieval import Embedding, RelevanceThresholds, RetrievedItem, cosine, embed, tokenize
from .store import Clock, MeshStore, utc_now_iso

AGENT_KINDS = ("project_summary", "technical_research", "risk_analysis",
               "comparable_project", "multi_modal", "generic_qa")

EVENTS = ("retrieved", "uncertainty_assessed", "filtered", "generated",
          "validated", "rejected")

DEFAULT_MAX_TURNS = 8
DEFAULT_RETRIEVAL_K = 8
DEFAULT_PROVIDER_RETRIES = 2
MIN_INDEPENDENT_SOURCES = 3

#: Required fields per record kind, driving the incompleteness score.
REQUIRED_FIELDS: dict[str, tuple[str, ...]] = {
    "project": ("title", "description", "country", "region", "status",
                "budget_value", "budget_currency", "budget_usd",
                "date_published", "date_updated", "location", "sectors"),
    "tender": ("title", "description", "country", "region", "status",
               "budget_value", "budget_currency", "budget_usd",
               "date_published", "date_deadline", "sectors", "entities"),
    "asset": ("title", "description", "country", "region", "status",
              "location", "sectors", "date_updated"),
}


def digest(text: str) -> str:
    return hashlib.blake2b(text.encode("utf-8"), digest_size=8).hexdigest()


# -- conversation context -------------------------------------------------------

@dataclass(frozen=True)
class Turn:
    query: str
    answer_digest: str = ""


@dataclass(frozen=True)
class ConversationContext:
    conversation_id: str
    turns: tuple[Turn, ...] = ()
    max_turns: int = DEFAULT_MAX_TURNS


def update_context(ctx: ConversationContext, query: str | None = None,
                   answer: str | None = None) -> ConversationContext:
    """Append a turn or complete the last one; evict beyond max_turns.

    Intermediate step outputs never pass through here; only the query and
    the final answer digest persist.
    """
    turns = list(ctx.turns)
    if query is not None and answer is not None:
        turns.append(Turn(query=query, answer_digest=digest(answer)))
    elif query is not None:
        turns.append(Turn(query=query))
    elif answer is not None:
        if not turns:
            raise InvalidArgumentError("no open turn to attach the answer to")
        turns[-1] = replace(turns[-1], answer_digest=digest(answer))
    if len(turns) > ctx.max_turns:
        turns = turns[-ctx.max_turns:]
    return replace(ctx, turns=tuple(turns))


# -- plans ----------------------------------------------------------------------

@dataclass(frozen=True)
class Step:
    step_id: str
    agent_kind: str
    prompt_template_id: str
    inputs: Mapping[str, str] = field(default_factory=dict)
    k: int = DEFAULT_RETRIEVAL_K

    def __post_init__(self):
        if self.agent_kind not in AGENT_KINDS:
            raise ConfigurationError(f"unknown agent kind: {self.agent_kind!r}")
        object.__setattr__(self, "inputs", dict(self.inputs))


@dataclass(frozen=True)
class Plan:
    plan_id: str
    query: str
    steps: tuple[Step, ...]
    score: float
    rationale: str


#: intent -> (keywords, agent kind)
INTENT_RULES: tuple[tuple[str, tuple[str, ...], str], ...] = (
    ("comparison", ("compare", "comparable", "versus", " vs ", "similar"), "comparable_project"),
    ("risk", ("risk", "overrun", "exposure", "hazard"), "risk_analysis"),
    ("market", ("market", "landscape", "players", "trend"), "multi_modal"),
    ("technical", ("journal", "research", "best practice", "technical", "method"),
     "technical_research"),
    ("status", ("status", "latest", "update", "timeline", "progress"), "project_summary"),
)

LENGTH_PENALTY = 0.05


def detect_intents(query: str) -> list[str]:
    folded = f" {query.casefold()} "
    return [intent for intent, keywords, _ in INTENT_RULES
            if any(keyword in folded for keyword in keywords)]


def plan(query: str, ctx: ConversationContext,
         registry: Sequence[str] = AGENT_KINDS, k: int = DEFAULT_RETRIEVAL_K) -> Plan:
    """Generate candidate plans from intent rules and pick the best.

    Score = capability coverage minus a 0.05-per-step length penalty;
    ties break to fewer steps, then lexicographic plan id. Unroutable
    queries fall back to a single generic step.
    """
    if not registry:
        raise ConfigurationError("capability registry is empty")
    available = set(registry)
    intents = detect_intents(query)
    needed = [kind for intent, _, kind in
              ((i, k_, kd) for i, k_, kd in INTENT_RULES)
              if intent in intents and kind in available]
    # dedup preserving rule order
    needed = list(dict.fromkeys(needed))

    def build(kinds: Sequence[str], rationale: str) -> Plan:
        steps = tuple(
            Step(step_id=f"s{i}-{kind}", agent_kind=kind,
                 prompt_template_id=kind, inputs={"query": query}, k=k)
            for i, kind in enumerate(kinds))
        coverage = (len(set(kinds) & set(needed)) / len(needed)) if needed else \
            (1.0 if "generic_qa" in kinds else 0.0)
        score = coverage - LENGTH_PENALTY * len(steps)
        return Plan(plan_id="p-" + "-".join(kinds), query=query, steps=steps,
                    score=score, rationale=rationale)

    candidates: list[Plan] = []
    if needed:
        candidates.append(build(needed, f"intents: {', '.join(intents)}"))
        for kind in needed:
            candidates.append(build([kind], f"single intent: {kind}"))
        candidates.append(build(needed + ["generic_qa"], "intents plus generic backstop"))
    candidates.append(build(["generic_qa"], "generic fallback"))
    if len(candidates) == 1:
        candidates.append(build(["generic_qa", "project_summary"],
                                "generic fallback, broadened"))
    unique: dict[str, Plan] = {}
    for candidate in candidates:
        unique.setdefault(candidate.plan_id, candidate)
    ranked = sorted(unique.values(),
                    key=lambda p: (-p.score, len(p.steps), p.plan_id))
    return ranked[0]


# -- uncertainty ------------------------------------------------------------------

@dataclass(frozen=True)
class UncertaintyScore:
    incompleteness: float
    epistemic: float
    combined: float

    def __post_init__(self):
        for name in ("incompleteness", "epistemic", "combined"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise InvalidArgumentError(f"{name} out of [0, 1]: {value}")
        expected = max(self.incompleteness, self.epistemic)
        if abs(self.combined - expected) > 1e-12:
            raise InvalidArgumentError("combined must equal max(incompleteness, epistemic)")

    @classmethod
    def of(cls, incompleteness: float, epistemic: float) -> "UncertaintyScore":
        return cls(incompleteness=incompleteness, epistemic=epistemic,
                   combined=max(incompleteness, epistemic))

    def to_json_dict(self) -> dict[str, float]:
        return {"incompleteness": self.incompleteness, "epistemic": self.epistemic,
                "combined": self.combined}


def evaluate_uncertainty(evidence: Sequence[RetrievedItem],
                         required_fields: Mapping[str, tuple[str, ...]] | None = None,
                         corroboration_window_days: int | None = None,
                         min_sources: int = MIN_INDEPENDENT_SOURCES) -> UncertaintyScore:
    """Incompleteness from missing required fields; epistemic from source count.

    Empty evidence is maximal uncertainty on both axes. Evidence with no
    mesh-backed records contributes no incompleteness signal (the epistemic
    term carries sparsity). With a corroboration window, only evidence dated
    within that many days of the freshest item counts as an independent
    source; stale corroboration does not lower the epistemic gap.
    """
    if not evidence:
        return UncertaintyScore.of(1.0, 1.0)
    required_fields = required_fields or REQUIRED_FIELDS
    ratios = []
    for item in evidence:
        record = item.record
        if item.source != "mesh" or not isinstance(record, StandardRecord):
            continue
        required = required_fields.get(record.record_kind,
                                       required_fields.get("project", ()))
        if not required:
            continue
        missing = sum(1 for name in required if not is_populated(getattr(record, name)))
        ratios.append(missing / len(required))
    incompleteness = sum(ratios) / len(ratios) if ratios else 0.0
    corroborating = _corroborating(evidence, corroboration_window_days)
    distinct_sources = len({item.origin or item.id for item in corroborating})
    epistemic = 1.0 - min(1.0, distinct_sources / min_sources)
    return UncertaintyScore.of(incompleteness, epistemic)


def _corroborating(evidence: Sequence[RetrievedItem],
                   window_days: int | None) -> Sequence[RetrievedItem]:
    if window_days is None:
        return evidence
    from datetime import date

    def item_date(item: RetrievedItem) -> date | None:
        record = item.record
        if not isinstance(record, StandardRecord):
            return None
        text = record.date_updated or record.date_published
        if not text:
            return None
        try:
            y, m, d = map(int, text.split("-"))
            return date(y, m, d)
        except ValueError:
            return None

    dates = [d for item in evidence if (d := item_date(item)) is not None]
    if not dates:
        return evidence
    cutoff = max(dates)
    kept = []
    for item in evidence:
        stamp = item_date(item)
        if stamp is None or (cutoff - stamp).days <= window_days:
            kept.append(item)
    return kept


# -- outputs, logging -------------------------------------------------------------

@dataclass(frozen=True)
class Citation:
    source: str
    id: str

    def to_json_dict(self) -> dict[str, str]:
        return {"source": self.source, "id": self.id}


@dataclass(frozen=True)
class AgentOutput:
    step_id: str
    text: str
    citations: tuple[Citation, ...]
    uncertainty: UncertaintyScore
    validated: bool
    failure_reasons: tuple[str, ...] = ()
    evidence_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.validated and self.failure_reasons:
            raise InvalidArgumentError("validated output cannot carry failure reasons")

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "step_id": self.step_id,
            "text": self.text,
            "citations": [c.to_json_dict() for c in self.citations],
            "uncertainty": self.uncertainty.to_json_dict(),
            "validated": self.validated,
            "failure_reasons": list(self.failure_reasons),
            "evidence_ids": list(self.evidence_ids),
        }


@dataclass(frozen=True)
class ActivityLogEntry:
    timestamp: str
    conversation_id: str
    step_id: str
    event: str
    payload_digest: str

    def to_json_dict(self) -> dict[str, str]:
        return {"timestamp": self.timestamp, "conversation_id": self.conversation_id,
                "step_id": self.step_id, "event": self.event,
                "payload_digest": self.payload_digest}


class ActivityLog:
    """Append-only event channel, safe for concurrent appenders."""

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: list[ActivityLogEntry] = []

    def append(self, entry: ActivityLogEntry) -> None:
        if entry.event not in EVENTS:
            raise InvalidArgumentError(f"unknown event: {entry.event!r}")
        with self._lock:
            self._entries.append(entry)

    def entries(self) -> list[ActivityLogEntry]:
        with self._lock:
            return list(self._entries)

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(e.to_json_dict(), sort_keys=True)
                         for e in self.entries())

    def save(self, path) -> None:
        from pathlib import Path

        Path(path).write_text(self.to_jsonl() + "\n", encoding="utf-8")


# -- LLM provider abstraction -----------------------------------------------------

@dataclass(frozen=True)
class LlmRequest:
    provider_id: str
    prompt: str
    evidence_texts: tuple[str, ...]
    max_output_tokens: int = 512
    template_id: str = ""
    evidence_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class LlmResponse:
    text: str
    provider: str
    latency_ms: float = 0.0


class LlmProvider(Protocol):
    provider_id: str

    def complete(self, request: LlmRequest) -> LlmResponse: ...


class MockLlmProvider:
    """Deterministic provider: output is a pure function of (template id,
    sorted evidence ids), which keeps golden transcripts stable."""

    provider_id = "mock"

    def complete(self, request: LlmRequest) -> LlmResponse:
        ids = sorted(request.evidence_ids)
        lines = [f"TEMPLATE {request.template_id}",
                 f"CITES {','.join(ids)}"]
        lines += [f"- {i}" for i in ids]
        if not ids:
            lines.append("(no evidence)")
        return LlmResponse(text="\n".join(lines), provider=self.provider_id)


class RemoteLlmProvider:
    """HTTP provider speaking the LlmRequest/LlmResponse JSON shapes."""

    def __init__(self, url: str, provider_id: str = "remote",
                 timeout: float = 30.0):
        self.url = url
        self.provider_id = provider_id
        self.timeout = timeout

    def complete(self, request: LlmRequest) -> LlmResponse:
        import httpx

        started = time.monotonic()
        try:
            reply = httpx.post(self.url, timeout=self.timeout, json={
                "provider_id": request.provider_id,
                "prompt": request.prompt,
                "evidence_texts": list(request.evidence_texts),
                "max_output_tokens": request.max_output_tokens,
                "template_id": request.template_id,
                "evidence_ids": list(request.evidence_ids),
            })
            reply.raise_for_status()
            payload = reply.json()
        except Exception as exc:  # noqa: BLE001 - network failures are retryable
            raise ProviderError(f"llm provider call failed: {exc}") from exc
        if "text" not in payload:
            raise ProviderFormatError("provider reply lacks 'text'")
        return LlmResponse(text=str(payload["text"]), provider=self.provider_id,
                           latency_ms=(time.monotonic() - started) * 1000.0)


class TemplateRegistry:
    """Prompt templates: text files with {query} and {evidence} placeholders."""

    def __init__(self, templates: Mapping[str, str] | None = None):
        self._templates = dict(templates) if templates else _load_packaged_templates()

    def get(self, template_id: str) -> str:
        template = self._templates.get(template_id)
        if template is None:
            raise ConfigurationError(f"no prompt template {template_id!r}")
        return template

    def has(self, template_id: str) -> bool:
        return template_id in self._templates


def _load_packaged_templates() -> dict[str, str]:
    templates = {}
    for entry in resources.files("inframesh.templates").iterdir():
        if entry.name.endswith(".txt"):
            templates[entry.name[:-4]] = entry.read_text(encoding="utf-8")
    return templates


def render_prompt(template: str, query: str,
                  evidence: Sequence[RetrievedItem]) -> str:
    """Each evidence text's digest appears exactly once in the prompt."""
    block = "\n".join(f"[{item.id}] digest={digest(item.text)}" for item in evidence)
    return template.format(query=query, evidence=block or "(none)")


def llm_process(template_id: str, query: str, evidence: Sequence[RetrievedItem],
                provider: LlmProvider, templates: TemplateRegistry,
                retries: int = DEFAULT_PROVIDER_RETRIES,
                max_output_tokens: int = 512) -> tuple[LlmResponse, list[Citation]]:
    """Render the prompt, invoke the provider with a bounded retry budget,
    and parse the CITES line into citations."""
    template = templates.get(template_id)
    request = LlmRequest(
        provider_id=provider.provider_id,
        prompt=render_prompt(template, query, evidence),
        evidence_texts=tuple(item.text for item in evidence),
        max_output_tokens=max_output_tokens,
        template_id=template_id,
        evidence_ids=tuple(item.id for item in evidence))
    last: Exception | None = None
    for _ in range(retries + 1):
        try:
            response = provider.complete(request)
            return response, _parse_citations(response.text, evidence)
        except ProviderFormatError:
            raise
        except ProviderError as exc:
            last = exc
    raise ProviderError(f"provider {provider.provider_id!r} failed after "
                        f"{retries + 1} attempts: {last}")


def _parse_citations(text: str, evidence: Sequence[RetrievedItem]) -> list[Citation]:
    sources = {item.id: item.source for item in evidence}
    for line in text.splitlines():
        if line.startswith("CITES "):
            ids = [i.strip() for i in line[len("CITES "):].split(",") if i.strip()]
            return [Citation(source=sources.get(i, "unknown"), id=i) for i in ids]
    return []


def validate_output(text: str, citations: Sequence[Citation],
                    uncertainty: UncertaintyScore,
                    filtered_ids: Sequence[str], delta: float) -> tuple[bool, list[str]]:
    """Citation containment, non-empty output, and the delta gate re-check."""
    reasons = []
    allowed = set(filtered_ids)
    if any(citation.id not in allowed for citation in citations):
        reasons.append("uncited_evidence")
    if not text.strip():
        reasons.append("empty_output")
    if uncertainty.combined > delta:
        reasons.append("uncertainty_exceeds_delta")
    return (not reasons), reasons


# -- runtime and execution ---------------------------------------------------------

@dataclass
class AgentRuntime:
    """Everything a workflow run needs, bundled for injection."""

    mesh: MeshStore
    graph: GraphStore | None = None
    llm: LlmProvider = field(default_factory=MockLlmProvider)
    templates: TemplateRegistry = field(default_factory=TemplateRegistry)
    thresholds: RelevanceThresholds = field(default_factory=RelevanceThresholds)
    activity_log: ActivityLog = field(default_factory=ActivityLog)
    clock: Clock = utc_now_iso
    required_fields: Mapping[str, tuple[str, ...]] = field(
        default_factory=lambda: dict(REQUIRED_FIELDS))
    #: product name -> source category, for journal-scoped research
    product_categories: Mapping[str, str] = field(default_factory=dict)
    #: named numeric series for the multi-modal agent
    series: Mapping[str, Sequence[tuple[str, float]]] = field(default_factory=dict)
    embedder: retrieval.EmbeddingProvider | None = None
    provider_retries: int = DEFAULT_PROVIDER_RETRIES


@dataclass(frozen=True)
class WorkflowResponse:
    conversation_id: str
    plan_id: str
    text: str
    outputs: tuple[AgentOutput, ...]
    max_uncertainty: float
    insufficient_evidence: bool

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "conversation_id": self.conversation_id,
            "plan_id": self.plan_id,
            "text": self.text,
            "outputs": [o.to_json_dict() for o in self.outputs],
            "max_uncertainty": self.max_uncertainty,
            "insufficient_evidence": self.insufficient_evidence,
        }


INSUFFICIENT_EVIDENCE_TEXT = (
    "Insufficient evidence: no step cleared the relevance and uncertainty "
    "gates. Lower tau/delta or broaden the query.")


def execute(workflow_plan: Plan, ctx: ConversationContext,
            runtime: AgentRuntime) -> tuple[WorkflowResponse, ConversationContext]:
    """Run every step of the plan through retrieve -> assess -> filter ->
    generate -> validate, logging each event; consolidate validated outputs."""
    outputs: list[AgentOutput] = []
    for step in workflow_plan.steps:
        outputs.append(_run_step(step, workflow_plan.query, ctx, runtime))
    validated = [o for o in outputs if o.validated]
    if validated:
        parts = []
        for output in validated:
            cites = ",".join(c.id for c in output.citations)
            parts.append(f"[{output.step_id}] {output.text}\ncitations: {cites or '(none)'}")
        text = "\n\n".join(parts)
        insufficient = False
    else:
        text = INSUFFICIENT_EVIDENCE_TEXT
        insufficient = True
    max_uncertainty = max((o.uncertainty.combined for o in outputs), default=1.0)
    response = WorkflowResponse(
        conversation_id=ctx.conversation_id,
        plan_id=workflow_plan.plan_id,
        text=text,
        outputs=tuple(outputs),
        max_uncertainty=max_uncertainty,
        insufficient_evidence=insufficient)
    new_ctx = update_context(ctx, query=workflow_plan.query, answer=response.text)
    return response, new_ctx


def ask(query: str, ctx: ConversationContext,
        runtime: AgentRuntime) -> tuple[WorkflowResponse, ConversationContext]:
    """Plan then execute: the conversational entry point."""
    return execute(plan(query, ctx), ctx, runtime)


def _log(runtime: AgentRuntime, ctx: ConversationContext, step_id: str,
         event: str, payload: Any) -> None:
    canonical = json.dumps(payload, sort_keys=True, default=str)
    runtime.activity_log.append(ActivityLogEntry(
        timestamp=runtime.clock(), conversation_id=ctx.conversation_id,
        step_id=step_id, event=event, payload_digest=digest(canonical)))


def _run_step(step: Step, query: str, ctx: ConversationContext,
              runtime: AgentRuntime) -> AgentOutput:
    tau = runtime.thresholds.tau
    delta = runtime.thresholds.delta
    evidence = _gather_evidence(step, query, runtime)
    _log(runtime, ctx, step.step_id, "retrieved", [item.id for item in evidence])
    uncertainty = evaluate_uncertainty(evidence, runtime.required_fields)
    _log(runtime, ctx, step.step_id, "uncertainty_assessed", uncertainty.to_json_dict())
    filtered = [item for item in evidence if item.score >= tau]
    _log(runtime, ctx, step.step_id, "filtered", [item.id for item in filtered])
    if uncertainty.combined > delta:
        _log(runtime, ctx, step.step_id, "rejected", ["uncertainty_exceeds_delta"])
        return AgentOutput(step_id=step.step_id, text="", citations=(),
                           uncertainty=uncertainty, validated=False,
                           failure_reasons=("uncertainty_exceeds_delta",),
                           evidence_ids=tuple(i.id for i in filtered))
    try:
        response, citations = llm_process(
            step.prompt_template_id, query, filtered, runtime.llm,
            runtime.templates, retries=runtime.provider_retries)
    except (ProviderError, ProviderFormatError):
        _log(runtime, ctx, step.step_id, "rejected", ["provider_unavailable"])
        return AgentOutput(step_id=step.step_id, text="", citations=(),
                           uncertainty=uncertainty, validated=False,
                           failure_reasons=("provider_unavailable",),
                           evidence_ids=tuple(i.id for i in filtered))
    text = response.text + _kind_findings(step, filtered, runtime)
    _log(runtime, ctx, step.step_id, "generated", digest(text))
    ok, reasons = validate_output(text, citations, uncertainty,
                                  [item.id for item in filtered], delta)
    _log(runtime, ctx, step.step_id, "validated" if ok else "rejected",
         reasons or ["ok"])
    return AgentOutput(step_id=step.step_id, text=text, citations=tuple(citations),
                       uncertainty=uncertainty, validated=ok,
                       failure_reasons=tuple(reasons),
                       evidence_ids=tuple(i.id for i in filtered))


# -- evidence scopes per agent kind ----------------------------------------------

def _query_embedding(query: str, runtime: AgentRuntime) -> Embedding | None:
    tokens = tokenize(query)
    if not tokens:
        return None
    return embed(tokens, runtime.embedder)


def _item_from_record(record: StandardRecord, q: Embedding | None,
                      runtime: AgentRuntime) -> RetrievedItem | None:
    text = record.text()
    emb = embed(tokenize(text), runtime.embedder)
    if emb.is_zero:
        return None
    score = cosine(q, emb) if q is not None and not q.is_zero else 0.0
    return RetrievedItem(source="mesh", id=record.record_id, text=text, emb=emb,
                         score=score, origin=record.source_url, record=record)


def _gather_evidence(step: Step, query: str,
                     runtime: AgentRuntime) -> list[RetrievedItem]:
    kind = step.agent_kind
    if kind == "project_summary":
        return _project_summary_evidence(step, query, runtime)
    if kind == "technical_research":
        return _category_evidence(step, query, runtime, "engineering_journals")
    if kind == "risk_analysis":
        return _cohort_evidence(step, query, runtime)
    if kind == "comparable_project":
        return _comparable_evidence(step, query, runtime)
    # multi_modal and generic_qa share the broad retrieve path
    if not tokenize(query):
        raise InvalidArgumentError("empty query embeds to the zero vector")
    return retrieval.retrieve(query, runtime.graph, runtime.mesh, step.k,
                              provider=runtime.embedder)


def _anchor_record(step: Step, query: str, runtime: AgentRuntime) -> StandardRecord | None:
    anchor_id = step.inputs.get("record_id", "")
    if anchor_id:
        return runtime.mesh.get(anchor_id)
    items = retrieval.retrieve(query, None, runtime.mesh, 1, provider=runtime.embedder)
    return items[0].record if items else None


def _project_summary_evidence(step: Step, query: str,
                              runtime: AgentRuntime) -> list[RetrievedItem]:
    anchor = _anchor_record(step, query, runtime)
    if anchor is None:
        return []
    q = _query_embedding(query, runtime)
    members = {anchor.record_id: anchor}
    for cluster in detect_duplicates(runtime.mesh.all_records(include_superseded=True)):
        if anchor.record_id in cluster.member_ids:
            for member_id in cluster.member_ids:
                members[member_id] = runtime.mesh.get(member_id)
    items = [item for record in members.values()
             if (item := _item_from_record(record, q, runtime))]
    if runtime.graph is not None:
        member_ids = set(members)
        for node_id, terms, text, origin in runtime.graph.nodes_with_vectors():
            node = runtime.graph.get_node(node_id)
            if str(node.prop("record_id") or "") in member_ids:
                neighbor_ids = runtime.graph.neighbors(node_id, ("verb", "has_a"))
                for neighbor_id in [node_id] + neighbor_ids:
                    vec = runtime.graph.vector_of(neighbor_id)
                    if vec is None:
                        continue
                    emb = retrieval.embed_counts(vec.terms, runtime.embedder)
                    if emb.is_zero:
                        continue
                    neighbor = runtime.graph.get_node(neighbor_id)
                    items.append(RetrievedItem(
                        source="graph", id=neighbor_id,
                        text=" ".join(str(v) for v in neighbor.properties.values()
                                      if isinstance(v, str)),
                        emb=emb,
                        score=cosine(q, emb) if q is not None else 0.0,
                        origin=str(neighbor.prop("url") or neighbor_id)))
    seen: set[str] = set()
    unique = [item for item in items
              if not (item.id in seen or seen.add(item.id))]
    # timeline order: mesh records by date_updated ascending, then graph items
    unique.sort(key=lambda item: (
        0 if item.source == "mesh" else 1,
        (item.record.date_updated or item.record.date_published or "9999")
        if isinstance(item.record, StandardRecord) else "9999",
        item.id))
    return unique[:step.k]


def _category_evidence(step: Step, query: str, runtime: AgentRuntime,
                       category: str) -> list[RetrievedItem]:
    q = _query_embedding(query, runtime)
    items = []
    for record in runtime.mesh.all_records():
        if runtime.product_categories.get(record.product_name) != category:
            continue
        item = _item_from_record(record, q, runtime)
        if item:
            items.append(item)
    items.sort(key=lambda item: (-item.score, item.id))
    return items[:step.k]


def _cohort_evidence(step: Step, query: str,
                     runtime: AgentRuntime) -> list[RetrievedItem]:
    anchor = _anchor_record(step, query, runtime)
    if anchor is None:
        return []
    q = _query_embedding(query, runtime)
    cohort = [record for record in runtime.mesh.all_records()
              if record.country == anchor.country
              and (not anchor.sectors or set(record.sectors) & set(anchor.sectors))]
    items = [item for record in cohort
             if (item := _item_from_record(record, q, runtime))]
    items.sort(key=lambda item: (-item.score, item.id))
    return items[:step.k]


def _comparable_evidence(step: Step, query: str,
                         runtime: AgentRuntime) -> list[RetrievedItem]:
    anchor = _anchor_record(step, query, runtime)
    if anchor is None:
        return []
    reference = embed(tokenize(anchor.text()), runtime.embedder)
    items = []
    for record in runtime.mesh.all_records():
        if record.record_id == anchor.record_id:
            continue
        if anchor.sectors and not (set(record.sectors) & set(anchor.sectors)):
            continue
        item = _item_from_record(record, reference if not reference.is_zero else None,
                                 runtime)
        if item:
            items.append(item)
    items.sort(key=lambda item: (-item.score, item.id))
    return items[:step.k]


def _kind_findings(step: Step, filtered: Sequence[RetrievedItem],
                   runtime: AgentRuntime) -> str:
    """Deterministic analytic attachments appended after generation."""
    if step.agent_kind == "risk_analysis":
        records = [item.record for item in filtered
                   if isinstance(item.record, StandardRecord)]
        try:
            report = outlier_scan("budget_usd", records, method="iqr")
        except InsufficientDataError:
            return "\nRISK_FINDINGS insufficient-data"
        if not report.flagged:
            return "\nRISK_FINDINGS none"
        flags = ",".join(f"{f.record_id}:{f.value:g}" for f in report.flagged)
        return f"\nRISK_FINDINGS outliers={flags}"
    if step.agent_kind == "multi_modal" and runtime.series:
        lines = []
        for name in sorted(runtime.series):
            points = runtime.series[name]
            if not points:
                continue
            mean = sum(v for _, v in points) / len(points)
            lines.append(f"SERIES {name} n={len(points)} mean={mean:.4g}")
        if lines:
            return "\n" + "\n".join(lines)
    return ""


def run_specialized(kind: str, inputs: Mapping[str, str],
                    runtime: AgentRuntime,
                    ctx: ConversationContext | None = None,
                    k: int = DEFAULT_RETRIEVAL_K) -> AgentOutput:
    """Run one specialized agent through the standard step machinery."""
    if kind not in AGENT_KINDS:
        raise ConfigurationError(f"unknown agent kind: {kind!r}")
    query = inputs.get("query", "")
    if not query and "record_id" in inputs:
        query = runtime.mesh.get(inputs["record_id"]).title
    step = Step(step_id=f"s0-{kind}", agent_kind=kind, prompt_template_id=kind,
                inputs={**inputs, "query": query}, k=k)
    ctx = ctx or ConversationContext(conversation_id="adhoc")
    return _run_step(step, query, ctx, runtime)


# -- market landscape meta-agent ----------------------------------------------------

@dataclass(frozen=True)
class LandscapeView:
    region: str | None
    sector: str | None
    total: int
    top_entities: tuple[tuple[str, int], ...]
    geo_buckets: tuple[tuple[str, int, float], ...]  # (geohash, count, sum_budget_usd)
    status_histogram: Mapping[str, int]
    sector_co_tags: tuple[tuple[str, int], ...]

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "region": self.region,
            "sector": self.sector,
            "total": self.total,
            "top_entities": [{"name": n, "count": c} for n, c in self.top_entities],
            "geo_buckets": [{"geohash": g, "count": c, "sum_budget_usd": s}
                            for g, c, s in self.geo_buckets],
            "status_histogram": dict(self.status_histogram),
            "sector_co_tags": [{"tag": t, "count": c} for t, c in self.sector_co_tags],
        }


def market_landscape(region: str | None, sector: str | None, mesh: MeshStore,
                     precision: int = 5) -> LandscapeView:
    """Pure aggregation over the mesh; no model in the loop."""
    from .geo import encode_point

    folded_region = region.casefold() if region else None
    folded_sector = sector.casefold() if sector else None
    selected = []
    for record in mesh.all_records():
        if folded_region is not None:
            haystack = {(record.region or "").casefold(), record.country.casefold()}
            if folded_region not in haystack:
                continue
        if folded_sector is not None and folded_sector not in \
                {s.casefold() for s in record.sectors}:
            continue
        selected.append(record)
    entity_counts: dict[str, int] = {}
    status_histogram: dict[str, int] = {}
    buckets: dict[str, list[float]] = {}
    co_tags: dict[str, int] = {}
    for record in selected:
        for stakeholder in record.entities:
            entity_counts[stakeholder.name] = entity_counts.get(stakeholder.name, 0) + 1
        status_histogram[record.status] = status_histogram.get(record.status, 0) + 1
        if record.location is not None:
            cell = encode_point(record.location, precision)
            slot = buckets.setdefault(cell, [0, 0.0])
            slot[0] += 1
            slot[1] += record.budget_usd or 0.0
        for tag in record.sectors:
            if folded_sector is None or tag.casefold() != folded_sector:
                co_tags[tag] = co_tags.get(tag, 0) + 1
    top_entities = tuple(sorted(entity_counts.items(), key=lambda e: (-e[1], e[0])))
    geo_buckets = tuple((cell, int(slot[0]), slot[1])
                        for cell, slot in sorted(buckets.items()))
    co = tuple(sorted(co_tags.items(), key=lambda e: (-e[1], e[0])))
    return LandscapeView(region=region, sector=sector, total=len(selected),
                         top_entities=top_entities, geo_buckets=geo_buckets,
                         status_histogram=status_histogram, sector_co_tags=co)
