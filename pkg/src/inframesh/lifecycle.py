"""Data-product lifecycle: scrape, clean, standardize, geocode, ingest.

Fetchers are pluggable; the shipped ones read JSON-lines fixtures or stub
HTTP endpoints. Intermediate batches persist as content-addressed Parquet
files so reruns are diffable. Ingestion is batch-atomic with row-level
rejection and idempotent upserts keyed on record_id.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .errors import (
    ConfigurationError,
    FormatError,
    InvalidArgumentError,
    NotFoundError,
    SourceError,
    StageError,
)
from .model import (
    STATUSES,
    UNKNOWN_COUNTRY,
    DataProductManifest,
    DeltaEntry,
    GeoPoint,
    ReferenceDictionary,
    Stakeholder,
    StandardRecord,
    Violation,
    canonicalize,
    DeltaMarker,
    fold_key,
    make_record_id,
    validate_record,
)
from .store import Clock, MeshStore, utc_now_iso

#: Fields whose values run through reference dictionaries.
GOVERNED_FIELDS = ("status", "country", "budget_currency", "sectors")

DEFAULT_RETRY_BUDGET = 3

Fetcher = Callable[[DataProductManifest], Sequence[Mapping[str, Any]]]
Sleeper = Callable[[float], None]


@dataclass(frozen=True)
class RawBatch:
    product_name: str
    product_version: str
    fetched_at: str
    rows: tuple[Mapping[str, Any], ...]
    attempts: int = 1

    def __post_init__(self):
        if not isinstance(self.rows, tuple):
            object.__setattr__(self, "rows", tuple(self.rows))
        for row in self.rows:
            if row is None:
                raise InvalidArgumentError("batch rows must be non-null")
            if any(not key for key in row):
                raise InvalidArgumentError("row keys must be non-empty")


@dataclass(frozen=True)
class RejectedRow:
    row_index: int
    violations: tuple[Violation, ...]


@dataclass(frozen=True)
class IngestReceipt:
    inserted: int = 0
    updated: int = 0
    unchanged: int = 0
    deltas_enqueued: int = 0
    rejected: tuple[RejectedRow, ...] = ()

    def total(self) -> int:
        return self.inserted + self.updated + self.unchanged + len(self.rejected)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "inserted": self.inserted,
            "updated": self.updated,
            "unchanged": self.unchanged,
            "deltas_enqueued": self.deltas_enqueued,
            "rejected": [
                {"row_index": r.row_index,
                 "violations": [v.to_json_dict() for v in r.violations]}
                for r in self.rejected],
        }


@dataclass(frozen=True)
class CleaningReport:
    rows: int
    dropped_keys: int


@dataclass(frozen=True)
class Gazetteer:
    """Folded place names to coordinates, optionally scoped to a country."""

    entries: Mapping[str, GeoPoint]
    scope_hints: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "entries",
                           {fold_key(name): point for name, point in self.entries.items()})
        object.__setattr__(self, "scope_hints",
                           {fold_key(name): code for name, code in self.scope_hints.items()})

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "Gazetteer":
        entries = {name: GeoPoint.from_json_dict(p) for name, p in data["entries"].items()}
        return cls(entries=entries, scope_hints=dict(data.get("scope_hints", {})))


class FetcherRegistry:
    def __init__(self):
        self._fetchers: dict[str, Fetcher] = {}

    def register(self, fetcher_id: str, fetcher: Fetcher) -> None:
        self._fetchers[fetcher_id] = fetcher

    def get(self, fetcher_id: str) -> Fetcher:
        fetcher = self._fetchers.get(fetcher_id)
        if fetcher is None:
            raise ConfigurationError(f"no fetcher registered as {fetcher_id!r}")
        return fetcher


def jsonl_fixture_fetcher(root: str | Path) -> Fetcher:
    """Fetcher reading <root>/<product name>.jsonl, one raw row per line."""
    root = Path(root)

    def fetch(manifest: DataProductManifest) -> list[dict[str, Any]]:
        path = root / f"{manifest.name}.jsonl"
        if not path.exists():
            raise SourceError(f"fixture file missing: {path}")
        rows = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                rows.append(json.loads(line))
        return rows

    return fetch


def scrape(manifest: DataProductManifest, registry: FetcherRegistry,
           clock: Clock = utc_now_iso, retry_budget: int = DEFAULT_RETRY_BUDGET,
           sleep: Sleeper = time.sleep, backoff_base: float = 0.1) -> RawBatch:
    """Fetch raw rows with bounded retries and exponential backoff."""
    fetcher = registry.get(manifest.fetcher_id)
    attempts = 0
    while True:
        attempts += 1
        try:
            rows = fetcher(manifest)
            return RawBatch(
                product_name=manifest.name,
                product_version=manifest.version,
                fetched_at=clock(),
                rows=tuple(dict(row) for row in rows),
                attempts=attempts)
        except ConfigurationError:
            raise
        except Exception as exc:  # noqa: BLE001 - fetch failures are retryable
            if attempts >= retry_budget:
                raise SourceError(
                    f"fetcher {manifest.fetcher_id!r} failed after {attempts} attempts: {exc}",
                    attempts=attempts) from exc
            sleep(backoff_base * (2 ** (attempts - 1)))


_WS_ONLY = re.compile(r"^\s*$")


def clean(batch: RawBatch, mapping: Mapping[str, str]) -> tuple[list[StandardRecord], CleaningReport]:
    """Rename keys per the mapping, trim values, drop empties and unmapped keys."""
    records: list[StandardRecord] = []
    dropped = 0
    for row in batch.rows:
        assigned: dict[str, Any] = {}
        for raw_key, raw_value in row.items():
            target = mapping.get(raw_key)
            if target is None:
                dropped += 1
                continue
            value = _clean_value(target, raw_value)
            if value is not None:
                assigned[target] = value
        source_id = assigned.pop("source_id", "")
        source_url = assigned.pop("source_url", "")
        assigned.pop("record_id", None)
        assigned.pop("product_name", None)
        assigned.pop("product_version", None)
        assigned.pop("ingested_at", None)
        record_id = ""
        if source_id and source_url:
            record_id = make_record_id(source_id, source_url)
        records.append(StandardRecord(
            record_id=record_id,
            source_id=source_id,
            source_url=source_url,
            product_name=batch.product_name,
            product_version=batch.product_version,
            **assigned))
    return records, CleaningReport(rows=len(batch.rows), dropped_keys=dropped)


def _clean_value(target: str, raw: Any) -> Any:
    if raw is None:
        return None
    if isinstance(raw, str):
        raw = raw.strip()
        if not raw or _WS_ONLY.match(raw):
            return None
    if target in ("budget_value", "budget_usd"):
        return _parse_number(raw)
    if target == "sectors":
        if isinstance(raw, (list, tuple)):
            return tuple(str(v).strip() for v in raw if str(v).strip())
        parts = re.split(r"[;,]", str(raw))
        return tuple(p.strip() for p in parts if p.strip()) or None
    if target == "entities":
        return _parse_entities(raw)
    if target == "location":
        return _parse_location(raw)
    if target == "record_kind":
        return str(raw).strip().casefold()
    return str(raw)


def _parse_number(raw: Any) -> float | None:
    if isinstance(raw, (int, float)):
        return float(raw)
    text = re.sub(r"[,\s]", "", str(raw))
    text = re.sub(r"^[^\d\-.]+", "", text)
    try:
        return float(text)
    except ValueError:
        return None


def _parse_entities(raw: Any) -> tuple[Stakeholder, ...] | None:
    if isinstance(raw, (list, tuple)):
        items = raw
    else:
        text = str(raw)
        if text.startswith("["):
            try:
                items = json.loads(text)
            except json.JSONDecodeError:
                return (Stakeholder(name=text),)
        else:
            return tuple(Stakeholder(name=part.strip())
                         for part in text.split(";") if part.strip()) or None
    out = []
    for item in items:
        if isinstance(item, Mapping):
            out.append(Stakeholder(name=str(item.get("name", "")),
                                   role=str(item.get("role", ""))))
        else:
            out.append(Stakeholder(name=str(item)))
    return tuple(o for o in out if o.name) or None


def _parse_location(raw: Any) -> GeoPoint | None:
    if isinstance(raw, Mapping):
        try:
            return GeoPoint.from_json_dict(raw)
        except (InvalidArgumentError, KeyError, TypeError, ValueError):
            return None
    parts = str(raw).split(",")
    if len(parts) != 2:
        return None
    try:
        return GeoPoint(lat=float(parts[0]), lon=float(parts[1]))
    except (InvalidArgumentError, ValueError):
        return None


# -- date normalization ------------------------------------------------------

_MONTHS = {name: i + 1 for i, name in enumerate(
    ["january", "february", "march", "april", "may", "june", "july",
     "august", "september", "october", "november", "december"])}
_MONTHS.update({name[:3]: i for name, i in list(_MONTHS.items())})

_ISO_DATE = re.compile(r"^(\d{4})-(\d{2})-(\d{2})(?:[T ].*)?$")
_YEAR_FIRST = re.compile(r"^(\d{4})[/.](\d{1,2})[/.](\d{1,2})$")
_DAY_MONTH_NAME = re.compile(r"^(\d{1,2})(?:st|nd|rd|th)?\s+([a-z]+),?\s+(\d{4})$")
_MONTH_NAME_DAY = re.compile(r"^([a-z]+)\s+(\d{1,2})(?:st|nd|rd|th)?,?\s+(\d{4})$")


def normalize_date(raw: str) -> str | None:
    """Return yyyy-mm-dd when the input is unambiguous, else None.

    Numeric day/month orderings like 03/04/2024 are never guessed; silent
    locale guessing would corrupt the mesh irreversibly.
    """
    text = raw.strip().casefold()
    match = _ISO_DATE.match(text)
    if match:
        return _build_date(*match.groups())
    match = _YEAR_FIRST.match(text)
    if match:
        return _build_date(*match.groups())
    match = _DAY_MONTH_NAME.match(text)
    if match:
        day, month_name, year = match.groups()
        month = _MONTHS.get(month_name)
        if month:
            return _build_date(year, month, day)
    match = _MONTH_NAME_DAY.match(text)
    if match:
        month_name, day, year = match.groups()
        month = _MONTHS.get(month_name)
        if month:
            return _build_date(year, month, day)
    return None


def _build_date(year: Any, month: Any, day: Any) -> str | None:
    from datetime import date

    try:
        value = date(int(year), int(month), int(day))
    except ValueError:
        return None
    return value.strftime("%Y-%m-%d")


# -- standardization ---------------------------------------------------------

@dataclass(frozen=True)
class StandardizeResult:
    records: tuple[StandardRecord, ...]
    deltas: tuple[DeltaEntry, ...]
    #: record_id -> {attribute: raw value kept in the field pending resolution}
    provenance: Mapping[str, Mapping[str, str]]


def _already_canonical(attribute: str, value: str) -> bool:
    if attribute == "status":
        return value in STATUSES
    if attribute == "country":
        return bool(re.match(r"^[A-Z]{2}$", value))
    if attribute == "budget_currency":
        return bool(re.match(r"^[A-Z]{3}$", value))
    return False


def standardize(records: Iterable[StandardRecord],
                dictionaries: Mapping[str, ReferenceDictionary],
                rates: Mapping[str, float] | None = None,
                clock: Clock = utc_now_iso) -> StandardizeResult:
    """Canonicalize governed fields, normalize dates, convert budgets.

    Misses keep the raw value in place and emit DELTA entries deduplicated
    by (attribute, folded raw) with occurrence counts. Pure given a fixed
    clock: same inputs produce identical outputs.
    """
    out: list[StandardRecord] = []
    pending: dict[tuple[str, str], dict[str, Any]] = {}
    provenance: dict[str, dict[str, str]] = {}

    def miss(attribute: str, raw: str, record_id: str) -> None:
        key = (attribute, fold_key(raw))
        slot = pending.setdefault(key, {"raw": raw, "count": 0, "ids": []})
        slot["count"] += 1
        if record_id and record_id not in slot["ids"]:
            slot["ids"].append(record_id)
        if record_id:
            provenance.setdefault(record_id, {})[attribute] = raw

    for record in records:
        changes: dict[str, Any] = {}
        for attribute in ("status", "country", "budget_currency"):
            value = getattr(record, attribute)
            if value is None or value == "" or value == "unknown" or value == UNKNOWN_COUNTRY:
                continue
            if _already_canonical(attribute, value):
                continue
            dictionary = dictionaries.get(attribute)
            result = canonicalize(value, dictionary) if dictionary else DeltaMarker(value)
            if isinstance(result, DeltaMarker):
                miss(attribute, value, record.record_id)
            elif result != value:
                changes[attribute] = result
        if record.sectors:
            dictionary = dictionaries.get("sectors")
            new_sectors = []
            for tag in record.sectors:
                result = canonicalize(tag, dictionary) if dictionary else DeltaMarker(tag)
                if isinstance(result, DeltaMarker):
                    miss("sectors", tag, record.record_id)
                    new_sectors.append(tag)
                else:
                    new_sectors.append(result)
            if tuple(new_sectors) != record.sectors:
                changes["sectors"] = tuple(new_sectors)
        for name in ("date_published", "date_updated", "date_deadline"):
            value = getattr(record, name)
            if value and not re.match(r"^\d{4}-\d{2}-\d{2}$", value):
                normalized = normalize_date(value)
                if normalized:
                    changes[name] = normalized
        updated = replace(record, **changes) if changes else record
        if rates and updated.budget_value is not None and updated.budget_usd is None:
            rate = rates.get(updated.budget_currency or "")
            if rate is not None:
                updated = replace(updated, budget_usd=round(updated.budget_value * rate, 2))
        out.append(updated)

    stamp = clock()
    deltas = tuple(
        DeltaEntry(attribute=attribute, raw_value=slot["raw"],
                   occurrence_count=slot["count"], first_seen=stamp,
                   example_record_ids=tuple(slot["ids"][:5]))
        for (attribute, _), slot in sorted(pending.items()))
    return StandardizeResult(records=tuple(out), deltas=deltas, provenance=provenance)


# -- geocoding ----------------------------------------------------------------

_WORD_CACHE: dict[str, re.Pattern] = {}


def _name_pattern(folded_name: str) -> re.Pattern:
    pattern = _WORD_CACHE.get(folded_name)
    if pattern is None:
        pattern = re.compile(r"(?<!\w)" + re.escape(folded_name) + r"(?!\w)")
        _WORD_CACHE[folded_name] = pattern
    return pattern


def geocode(record: StandardRecord, gazetteer: Gazetteer) -> StandardRecord:
    """Fill location from the longest matching place name in region/title.

    Candidates whose scope hint contradicts the record's country are dropped
    before length wins; an existing location is never overwritten.
    """
    if record.location is not None:
        return record
    haystack = fold_key(f"{record.region or ''} {record.title}")
    if not haystack.strip():
        return record
    candidates = []
    for name, point in gazetteer.entries.items():
        if _name_pattern(name).search(haystack):
            candidates.append((name, point, gazetteer.scope_hints.get(name)))
    if not candidates:
        return record
    if record.country and record.country != UNKNOWN_COUNTRY:
        compatible = [c for c in candidates if c[2] is None or c[2] == record.country]
        if compatible:
            candidates = compatible
    candidates.sort(key=lambda c: (-len(c[0]), c[0]))
    return replace(record, location=candidates[0][1])


# -- ingestion ----------------------------------------------------------------

def ingest(records: Iterable[StandardRecord], store: MeshStore,
           provenance: Mapping[str, Mapping[str, str]] | None = None,
           clock: Clock = utc_now_iso) -> IngestReceipt:
    """Validate then upsert atomically; the receipt partitions the batch."""
    records = list(records)
    valid: list[StandardRecord] = []
    rejected: list[RejectedRow] = []
    for index, record in enumerate(records):
        violations = validate_record(record)
        if violations:
            rejected.append(RejectedRow(row_index=index, violations=tuple(violations)))
        else:
            valid.append(record)
    kept_provenance = None
    if provenance:
        valid_ids = {r.record_id for r in valid}
        kept_provenance = {rid: attrs for rid, attrs in provenance.items()
                           if rid in valid_ids}
    inserted, updated, unchanged = store.upsert_batch(valid, kept_provenance, clock=clock)
    return IngestReceipt(inserted=inserted, updated=updated, unchanged=unchanged,
                         rejected=tuple(rejected))


# -- intermediate object storage ----------------------------------------------

def write_intermediate(batch: RawBatch, root: str | Path) -> str:
    """Persist a batch as a columnar Parquet file; returns its URI.

    Files are immutable: every write gets a fresh sequence number, and the
    content hash rides in the name so identical reruns are visibly identical.
    """
    import pyarrow as pa
    import pyarrow.parquet as pq

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    columns = sorted({key for row in batch.rows for key in row})
    arrays = {
        column: [json.dumps(row[column], sort_keys=True) if column in row else None
                 for row in batch.rows]
        for column in columns}
    table = pa.table({c: pa.array(arrays[c], type=pa.string()) for c in columns})
    metadata = {
        b"product_name": batch.product_name.encode(),
        b"product_version": batch.product_version.encode(),
        b"fetched_at": batch.fetched_at.encode(),
        b"attempts": str(batch.attempts).encode(),
        # all-empty rows yield a zero-column table; keep the row count explicit
        b"row_count": str(len(batch.rows)).encode(),
    }
    table = table.replace_schema_metadata(metadata)
    digest = hashlib.blake2b(
        json.dumps([batch.product_name, batch.product_version, arrays],
                   sort_keys=True).encode(), digest_size=8).hexdigest()
    seq = sum(1 for _ in root.glob(f"{batch.product_name}-*.parquet"))
    path = root / f"{batch.product_name}-{seq:06d}-{digest}.parquet"
    pq.write_table(table, path)
    return str(path)


def read_intermediate(uri: str | Path) -> RawBatch:
    import pyarrow.parquet as pq

    path = Path(uri)
    if not path.exists():
        raise NotFoundError(f"no intermediate batch at {uri}")
    try:
        table = pq.read_table(path)
    except Exception as exc:  # noqa: BLE001 - arrow raises its own hierarchy
        raise FormatError(f"cannot read parquet at {uri}: {exc}") from exc
    metadata = table.schema.metadata or {}
    required = (b"product_name", b"product_version", b"fetched_at")
    if any(key not in metadata for key in required):
        raise FormatError(f"parquet at {uri} lacks batch metadata")
    columns = table.column_names
    rows = []
    data = {c: table.column(c).to_pylist() for c in columns}
    count = int(metadata.get(b"row_count", str(table.num_rows).encode()).decode())
    for i in range(count):
        row = {}
        for column in columns:
            cell = data[column][i]
            if cell is not None:
                row[column] = json.loads(cell)
        rows.append(row)
    return RawBatch(
        product_name=metadata[b"product_name"].decode(),
        product_version=metadata[b"product_version"].decode(),
        fetched_at=metadata[b"fetched_at"].decode(),
        rows=tuple(rows),
        attempts=int(metadata.get(b"attempts", b"1").decode()))


# -- full pipeline --------------------------------------------------------------

def run_product(manifest: DataProductManifest, registry: FetcherRegistry,
                store: MeshStore, intermediate_root: str | Path,
                gazetteer: Gazetteer | None = None,
                rates: Mapping[str, float] | None = None,
                clock: Clock = utc_now_iso,
                sleep: Sleeper = time.sleep) -> IngestReceipt:
    """Scrape -> clean -> standardize -> geocode -> validate -> ingest.

    Persists the standardized batch to object storage, enqueues DELTA
    entries, and tags any stage failure with the stage name.
    """
    if not manifest.enabled:
        return IngestReceipt()

    def stage(name: str, fn: Callable[[], Any]) -> Any:
        try:
            return fn()
        except StageError:
            raise
        except Exception as exc:  # noqa: BLE001 - tag and rethrow
            raise StageError(name, exc) from exc

    batch = stage("scrape", lambda: scrape(manifest, registry, clock=clock, sleep=sleep))
    cleaned, _report = stage("clean", lambda: clean(batch, manifest.field_mapping))
    result = stage("standardize", lambda: standardize(
        cleaned, store.dictionaries(), rates=rates, clock=clock))
    stage("store_intermediate", lambda: write_intermediate(
        RawBatch(product_name=batch.product_name,
                 product_version=batch.product_version,
                 fetched_at=batch.fetched_at,
                 rows=tuple(r.to_json_dict() for r in result.records),
                 attempts=batch.attempts),
        intermediate_root))
    if gazetteer is not None:
        records = stage("geocode", lambda: [geocode(r, gazetteer) for r in result.records])
    else:
        records = list(result.records)
    receipt = stage("ingest", lambda: ingest(records, store, result.provenance, clock=clock))
    enqueued = stage("ingest", lambda: store.enqueue_deltas(result.deltas))
    return replace(receipt, deltas_enqueued=enqueued)
