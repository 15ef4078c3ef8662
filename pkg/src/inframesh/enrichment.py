"""Enrichment: declarative bot rules, duplicate detection and merging,
sector tagging, outlier analysis, and DELTA resolution.

Everything here is deterministic and oracle-checkable: dedup uses trigram
Jaccard over normalized titles (no models), outliers use pinned quartile
math, and merges resolve per-field winners through a total order.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    ConflictError,
    InsufficientDataError,
    InvalidArgumentError,
)
from .model import (
    STANDARD_RECORD_FIELDS,
    STATUSES,
    is_populated,
    ReferenceDictionary,
    StandardRecord,
    canonicalize,
    DeltaMarker,
    fold_key,
)
from .retrieval import tokenize
from .store import Clock, MeshStore, utc_now_iso

DEFAULT_JACCARD_THRESHOLD = 0.6
DEFAULT_DEADLINE_WINDOW_DAYS = 7
DEFAULT_TAG_THRESHOLD = 0.2

CONDITION_OPS = ("eq", "regex", "present", "contains")
ACTION_KINDS = ("set_field", "map_via_dictionary", "append_tag")


# -- bot rules -----------------------------------------------------------------

@dataclass(frozen=True)
class BotCondition:
    field: str
    op: str
    value: str = ""

    def __post_init__(self):
        if self.op not in CONDITION_OPS:
            raise ConfigurationError(f"unknown condition op: {self.op!r}")

    def matches(self, record: StandardRecord) -> bool:
        current = getattr(record, self.field, None)
        if self.op == "present":
            return is_populated(current)
        if current is None:
            return False
        text = _as_text(current)
        if self.op == "eq":
            return fold_key(text) == fold_key(self.value)
        if self.op == "contains":
            return fold_key(self.value) in fold_key(text)
        return re.search(self.value, text, re.IGNORECASE) is not None


@dataclass(frozen=True)
class BotAction:
    kind: str
    value: str = ""

    def __post_init__(self):
        if self.kind not in ACTION_KINDS:
            raise ConfigurationError(f"unknown action kind: {self.kind!r}")


@dataclass(frozen=True)
class BotRule:
    rule_id: str
    target_field: str
    conditions: tuple[BotCondition, ...]
    action: BotAction
    priority: int

    def __post_init__(self):
        if not isinstance(self.conditions, tuple):
            object.__setattr__(self, "conditions", tuple(self.conditions))


def validate_rules(rules: Sequence[BotRule]) -> None:
    """Configuration problems surface at load, never at run."""
    priorities: set[int] = set()
    for rule in rules:
        if rule.target_field not in STANDARD_RECORD_FIELDS:
            raise ConfigurationError(
                f"rule {rule.rule_id!r} targets unknown field {rule.target_field!r}")
        if rule.action.kind == "append_tag" and rule.target_field != "sectors":
            raise ConfigurationError(
                f"rule {rule.rule_id!r}: append_tag writes sectors only")
        for condition in rule.conditions:
            if condition.field not in STANDARD_RECORD_FIELDS:
                raise ConfigurationError(
                    f"rule {rule.rule_id!r} conditions on unknown field {condition.field!r}")
        if rule.priority in priorities:
            raise ConfigurationError(f"duplicate priority {rule.priority}")
        priorities.add(rule.priority)


def load_bot_rules(path: str | Path) -> list[BotRule]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    rules = [
        BotRule(
            rule_id=str(item["rule_id"]),
            target_field=str(item["target_field"]),
            conditions=tuple(BotCondition(field=str(c["field"]), op=str(c["op"]),
                                          value=str(c.get("value", "")))
                             for c in item.get("conditions", [])),
            action=BotAction(kind=str(item["action"]["kind"]),
                             value=str(item["action"].get("value", ""))),
            priority=int(item["priority"]))
        for item in data]
    validate_rules(rules)
    return rules


def apply_bots(record: StandardRecord, rules: Sequence[BotRule],
               dictionaries: Mapping[str, ReferenceDictionary] | None = None,
               ) -> tuple[StandardRecord, list[str]]:
    """Apply rules in descending priority; each rule runs exactly once.

    Later (lower-priority) rules see earlier writes but cannot overwrite a
    field an earlier rule already set; tag appends always accumulate.
    """
    validate_rules(rules)
    dictionaries = dictionaries or {}
    ordered = sorted(rules, key=lambda r: -r.priority)
    applied: list[str] = []
    written: set[str] = set()
    current = record
    for rule in ordered:
        if not all(c.matches(current) for c in rule.conditions):
            continue
        applied.append(rule.rule_id)
        if rule.action.kind == "append_tag":
            if rule.action.value not in current.sectors:
                current = replace(current, sectors=current.sectors + (rule.action.value,))
            continue
        if rule.target_field in written:
            continue  # first (highest-priority) writer wins
        if rule.action.kind == "set_field":
            current = replace(current, **{rule.target_field: rule.action.value})
            written.add(rule.target_field)
        else:  # map_via_dictionary
            dictionary = dictionaries.get(rule.target_field)
            value = getattr(current, rule.target_field)
            if dictionary is None or value is None:
                continue
            result = canonicalize(str(value), dictionary)
            if not isinstance(result, DeltaMarker):
                current = replace(current, **{rule.target_field: result})
                written.add(rule.target_field)
    return current, applied


def _as_text(value: Any) -> str:
    if isinstance(value, (tuple, list)):
        return " ".join(str(v) for v in value)
    return str(value)


# -- duplicate detection --------------------------------------------------------

@dataclass(frozen=True)
class DuplicateCluster:
    member_ids: tuple[str, ...]
    match_score: float
    blocking_key: str

    def __post_init__(self):
        if len(self.member_ids) < 2:
            raise InvalidArgumentError("a duplicate cluster needs at least 2 members")
        object.__setattr__(self, "member_ids", tuple(sorted(self.member_ids)))


def normalize_title(title: str) -> str:
    return " ".join(tokenize(title))


def title_trigrams(title: str) -> frozenset[str]:
    normalized = normalize_title(title)
    if len(normalized) < 3:
        return frozenset({normalized} if normalized else ())
    return frozenset(normalized[i:i + 3] for i in range(len(normalized) - 2))


def trigram_jaccard(a: str, b: str) -> float:
    ta, tb = title_trigrams(a), title_trigrams(b)
    if not ta and not tb:
        return 1.0
    union = ta | tb
    if not union:
        return 0.0
    return len(ta & tb) / len(union)


def _days_between(a: str, b: str) -> int:
    from datetime import date

    ya, ma, da = map(int, a.split("-"))
    yb, mb, db = map(int, b.split("-"))
    return abs((date(ya, ma, da) - date(yb, mb, db)).days)


class _UnionFind:
    def __init__(self, items: Iterable[str]):
        self.parent = {item: item for item in items}

    def find(self, item: str) -> str:
        while self.parent[item] != item:
            self.parent[item] = self.parent[self.parent[item]]
            item = self.parent[item]
        return item

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def detect_duplicates(records: Sequence[StandardRecord],
                      jaccard_threshold: float = DEFAULT_JACCARD_THRESHOLD,
                      window_days: int = DEFAULT_DEADLINE_WINDOW_DAYS,
                      ) -> list[DuplicateCluster]:
    """Block by (country, record_kind); cluster title-similar records.

    Pairs match when normalized-title trigram Jaccard clears the threshold
    and deadlines (when both present) fall within the window; union-find
    closes the clusters transitively.
    """
    blocks: dict[tuple[str, str], list[StandardRecord]] = {}
    for record in records:
        blocks.setdefault((record.country, record.record_kind), []).append(record)
    clusters: list[DuplicateCluster] = []
    for (country, kind), members in sorted(blocks.items()):
        if len(members) < 2:
            continue
        members = sorted(members, key=lambda r: r.record_id)
        uf = _UnionFind(r.record_id for r in members)
        jaccards: dict[tuple[str, str], float] = {}
        for i, a in enumerate(members):
            for b in members[i + 1:]:
                score = trigram_jaccard(a.title, b.title)
                jaccards[(a.record_id, b.record_id)] = score
                if score < jaccard_threshold:
                    continue
                if a.date_deadline and b.date_deadline:
                    try:
                        if _days_between(a.date_deadline, b.date_deadline) > window_days:
                            continue
                    except ValueError:
                        pass  # unparseable deadline: the date criterion is waived
                uf.union(a.record_id, b.record_id)
        groups: dict[str, list[str]] = {}
        for record in members:
            groups.setdefault(uf.find(record.record_id), []).append(record.record_id)
        for root in sorted(groups):
            ids = sorted(groups[root])
            if len(ids) < 2:
                continue
            pair_scores = [jaccards[(a, b)] for i, a in enumerate(ids) for b in ids[i + 1:]]
            clusters.append(DuplicateCluster(
                member_ids=tuple(ids),
                match_score=sum(pair_scores) / len(pair_scores),
                blocking_key=f"{country}|{kind}"))
    return clusters


# -- merging ---------------------------------------------------------------------

#: Fields resolved per-contributor during a merge; identity fields follow
#: the survivor wholesale so record_id stays consistent with its source pair.
MERGEABLE_FIELDS = (
    "record_kind", "title", "description", "country", "region", "status",
    "budget_value", "budget_currency", "budget_usd",
    "date_published", "date_updated", "date_deadline",
    "location", "sectors", "entities",
)

Provenance = dict[str, str]


def merge_records(members: Sequence[tuple[StandardRecord, Provenance | None]],
                  resolver: Callable[[str], StandardRecord],
                  ) -> tuple[StandardRecord, Provenance]:
    """Field-wise merge over (record, provenance) pairs.

    Each populated field is contributed by an original record (traced through
    provenance when the member is itself a merge); the winner per field is
    the contributor with the most recent date_updated, record_id breaking
    ties. This makes pairwise merging associative on field values.
    """
    if not members:
        raise InvalidArgumentError("nothing to merge")
    contributions: dict[str, tuple[str, str, Any]] = {}  # field -> (date, cid, value)
    survivor_id: str | None = None
    for record, provenance in members:
        survivor_id = record.record_id if survivor_id is None \
            else min(survivor_id, record.record_id)
        for name in MERGEABLE_FIELDS:
            value = getattr(record, name)
            if not is_populated(value):
                continue
            contributor = (provenance or {}).get(name, record.record_id)
            date_key = resolver(contributor).date_updated or ""
            candidate = (date_key, contributor, value)
            best = contributions.get(name)
            if best is None or (candidate[0], candidate[1]) > (best[0], best[1]):
                contributions[name] = candidate
    survivor = resolver(survivor_id)
    values = {name: contribution[2] for name, contribution in contributions.items()}
    merged = replace(survivor, **values)
    provenance_out = {name: contribution[1]
                      for name, contribution in sorted(contributions.items())}
    return merged, provenance_out


def merge_cluster(cluster: DuplicateCluster, store: MeshStore,
                  ) -> tuple[StandardRecord, Provenance]:
    """Merge cluster members in the store; losers are marked superseded."""
    members = [(store.get(record_id), None) for record_id in cluster.member_ids]
    merged, provenance = merge_records(members, store.get)
    with store.lock():
        store.replace_record(merged)
        store.mark_superseded(
            [i for i in cluster.member_ids if i != merged.record_id], merged.record_id)
    return merged, provenance


# -- sector tagging ---------------------------------------------------------------

def tag_sectors(record: StandardRecord, taxonomy: Mapping[str, Sequence[str]],
                threshold: float = DEFAULT_TAG_THRESHOLD,
                ) -> tuple[StandardRecord, list[tuple[str, float]]]:
    """Score taxonomy tags by matched-keyword fraction over title+description."""
    if not taxonomy:
        raise InvalidArgumentError("taxonomy must be non-empty")
    text = f"{record.title} {record.description}"
    tokens = set(tokenize(text))
    folded_text = " ".join(tokenize(text))
    scored: list[tuple[str, float]] = []
    for tag in sorted(taxonomy):
        keywords = taxonomy[tag]
        if not keywords:
            continue
        matched = 0
        for keyword in set(map(fold_key, keywords)):
            if " " in keyword:
                if keyword in folded_text:
                    matched += 1
            elif keyword in tokens:
                matched += 1
        score = matched / len(set(map(fold_key, keywords)))
        if score >= threshold:
            scored.append((tag, score))
    scored.sort(key=lambda item: (-item[1], item[0]))
    new_tags = tuple(tag for tag, _ in scored if tag not in record.sectors)
    updated = replace(record, sectors=record.sectors + new_tags) if new_tags else record
    return updated, scored


# -- outlier analysis --------------------------------------------------------------

IQR_MIN_VALUES = 8
ZSCORE_MIN_VALUES = 30
IQR_K = 1.5
ZSCORE_MAX = 3.0


@dataclass(frozen=True)
class FlaggedValue:
    record_id: str
    value: float
    score: float


@dataclass(frozen=True)
class OutlierReport:
    field: str
    method: str
    flagged: tuple[FlaggedValue, ...]
    parameters: Mapping[str, float] = field(default_factory=dict)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "field": self.field,
            "method": self.method,
            "flagged": [{"record_id": f.record_id, "value": f.value, "score": f.score}
                        for f in self.flagged],
            "parameters": dict(self.parameters),
        }


def outlier_scan(field_name: str, records: Sequence[StandardRecord],
                 method: str = "iqr", k: float = IQR_K,
                 z_max: float = ZSCORE_MAX) -> OutlierReport:
    """Flag numeric outliers by IQR fence or z-score.

    Quartiles use linear (inclusive) interpolation, pinned so the brute-force
    oracle is unambiguous. A degenerate band (IQR, or std, equal to zero)
    flags only values strictly outside it.
    """
    if field_name not in ("budget_value", "budget_usd"):
        raise InvalidArgumentError(f"{field_name!r} is not a numeric record field")
    pairs = [(r.record_id, float(getattr(r, field_name)))
             for r in records if getattr(r, field_name) is not None]
    values = np.array([v for _, v in pairs], dtype=float)
    if method == "iqr":
        if len(values) < IQR_MIN_VALUES:
            raise InsufficientDataError(
                f"iqr needs at least {IQR_MIN_VALUES} values, got {len(values)}",
                minimum=IQR_MIN_VALUES)
        q1 = float(np.percentile(values, 25, method="linear"))
        q3 = float(np.percentile(values, 75, method="linear"))
        iqr = q3 - q1
        lower, upper = q1 - k * iqr, q3 + k * iqr
        flagged = tuple(
            FlaggedValue(record_id, value, score=max(lower - value, value - upper))
            for record_id, value in pairs if value < lower or value > upper)
        params = {"q1": q1, "q3": q3, "iqr": iqr, "k": k,
                  "lower": lower, "upper": upper}
        return OutlierReport(field_name, "iqr", flagged, params)
    if method == "zscore":
        if len(values) < ZSCORE_MIN_VALUES:
            raise InsufficientDataError(
                f"zscore needs at least {ZSCORE_MIN_VALUES} values, got {len(values)}",
                minimum=ZSCORE_MIN_VALUES)
        mean = float(np.mean(values))
        std = float(np.std(values))
        flagged = ()
        if std > 0:
            flagged = tuple(
                FlaggedValue(record_id, value, score=abs((value - mean) / std))
                for record_id, value in pairs if abs((value - mean) / std) > z_max)
        params = {"mean": mean, "std": std, "z_max": z_max}
        return OutlierReport(field_name, "zscore", flagged, params)
    raise InvalidArgumentError(f"unknown outlier method: {method!r}")


# -- DELTA resolution ---------------------------------------------------------------

_CANONICAL_PATTERNS = {
    "country": re.compile(r"^[A-Z]{2}$"),
    "budget_currency": re.compile(r"^[A-Z]{3}$"),
}


@dataclass(frozen=True)
class ResolveResult:
    attribute: str
    canonical: str
    dictionary_version: int
    retro_applied: int


def resolve_delta(entry_id: str, canonical: str, store: MeshStore,
                  clock: Clock = utc_now_iso) -> ResolveResult:
    """Resolve a pending DELTA: teach the dictionary, retro-update the mesh.

    Synchronous and bounded to the matching attribute, so the SME's action is
    observably complete when the call returns.
    """
    with store.lock():
        entry = store.get_delta(entry_id)
        if entry.state != "pending":
            raise ConflictError(f"delta {entry_id} already {entry.state}")
        _check_canonical(entry.attribute, canonical)
        dictionary = store.get_dictionary(entry.attribute).with_entry(
            entry.raw_value, canonical)
        store.put_dictionary(dictionary)
        retro_applied = 0
        target = fold_key(entry.raw_value)
        # provenance finds the tracked pending values; the field scan also
        # catches records where another pending raw overwrote the provenance
        # slot (e.g. two unknown sector tags on one record)
        candidates = set(store.records_with_raw(entry.attribute, entry.raw_value))
        for record in store.all_records(include_superseded=True):
            if _field_holds_raw(record, entry.attribute, target):
                candidates.add(record.record_id)
        for record_id in sorted(candidates):
            record = store.get(record_id)
            updated = _retro_apply(record, entry.attribute, target, canonical)
            if updated is not record:
                store.replace_record(updated)
                retro_applied += 1
            pending_raw = store.provenance_of(record_id).get(entry.attribute)
            if pending_raw is not None and fold_key(pending_raw) == target:
                store.clear_provenance(record_id, entry.attribute)
        store.store_delta(replace(entry, state="resolved", resolution=canonical))
        return ResolveResult(attribute=entry.attribute, canonical=canonical,
                             dictionary_version=dictionary.version,
                             retro_applied=retro_applied)


def _check_canonical(attribute: str, canonical: str) -> None:
    if attribute == "status":
        if canonical not in STATUSES:
            raise InvalidArgumentError(
                f"status {canonical!r} outside the closed vocabulary {STATUSES}")
        return
    pattern = _CANONICAL_PATTERNS.get(attribute)
    if pattern and not pattern.match(canonical):
        raise InvalidArgumentError(
            f"{canonical!r} is not a canonical {attribute} value")
    if not canonical:
        raise InvalidArgumentError("canonical value must be non-empty")


def _field_holds_raw(record: StandardRecord, attribute: str, folded_raw: str) -> bool:
    if attribute == "sectors":
        return any(fold_key(tag) == folded_raw for tag in record.sectors)
    current = getattr(record, attribute)
    return current is not None and fold_key(str(current)) == folded_raw


def _retro_apply(record: StandardRecord, attribute: str, folded_raw: str,
                 canonical: str) -> StandardRecord:
    if attribute == "sectors":
        updated = tuple(canonical if fold_key(tag) == folded_raw else tag
                        for tag in record.sectors)
        if updated != record.sectors:
            return replace(record, sectors=updated)
        return record
    current = getattr(record, attribute)
    if current is not None and fold_key(str(current)) == folded_raw:
        return replace(record, **{attribute: canonical})
    return record
