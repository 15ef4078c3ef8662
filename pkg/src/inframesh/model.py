"""Harmonized record schema, data-product manifests, reference dictionaries,
and DELTA entries shared by every other module.

Everything here is an immutable value object with an exact snake_case JSON
encoding; those encodings are the wire format of the HTTP layer and the file
format of fixtures.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, replace
from datetime import date
from typing import Any, Iterable, Mapping

from . import cron
from .errors import InvalidArgumentError

RECORD_KINDS = ("project", "tender", "asset")

#: Closed canonical status vocabulary; dictionary resolution maps into it.
STATUSES = (
    "announced",
    "planned",
    "procurement",
    "construction",
    "operational",
    "cancelled",
    "unknown",
)

SOURCE_CATEGORIES = (
    "official_government_project",
    "public_procurement",
    "third_party_project",
    "alt_government",
    "colleges_universities",
    "public_company_filings",
    "engineering_journals",
    "activities_conditions_risks",
    "capital_improvement_plans",
)

#: Country code reserved for "unknown" so filters never branch on missing keys.
UNKNOWN_COUNTRY = "ZZ"

#: Fields a raw-source mapping may target.
STANDARD_RECORD_FIELDS = (
    "record_id",
    "source_id",
    "record_kind",
    "title",
    "description",
    "country",
    "region",
    "status",
    "budget_value",
    "budget_currency",
    "budget_usd",
    "date_published",
    "date_updated",
    "date_deadline",
    "location",
    "sectors",
    "entities",
    "source_url",
    "product_name",
    "product_version",
    "ingested_at",
)

DATE_PATTERN = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_SEMVER_PATTERN = re.compile(r"^\d+\.\d+\.\d+$")
_ASCII_WS = " \t\r\n\f\v"


def fold_key(raw: str) -> str:
    """Dictionary key normalization: ASCII-trim then Unicode case fold."""
    return raw.strip(_ASCII_WS).casefold()


def make_record_id(source_id: str, source_url: str) -> str:
    """Deterministic 128-bit identity for a source record.

    Identical (source_id, source_url) map to the same id on every platform,
    which is what makes mesh upserts idempotent across re-scrapes.
    """
    if not source_id or not source_url:
        raise InvalidArgumentError("make_record_id: source_id and source_url must be non-empty")
    payload = f"{source_id}\x1f{source_url}".encode("utf-8")
    return hashlib.blake2b(payload, digest_size=16).hexdigest()


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0):
            raise InvalidArgumentError(f"latitude out of range: {self.lat}")
        if not (-180.0 <= self.lon <= 180.0):
            raise InvalidArgumentError(f"longitude out of range: {self.lon}")

    def to_json_dict(self) -> dict[str, float]:
        return {"lat": self.lat, "lon": self.lon}

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "GeoPoint":
        return cls(lat=float(data["lat"]), lon=float(data["lon"]))


@dataclass(frozen=True)
class Stakeholder:
    name: str
    role: str = ""

    def to_json_dict(self) -> dict[str, str]:
        return {"name": self.name, "role": self.role}

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "Stakeholder":
        return cls(name=str(data.get("name", "")), role=str(data.get("role", "")))


@dataclass(frozen=True)
class StandardRecord:
    """The harmonized project/tender/asset record flowing through the mesh.

    Governed fields (status, country, sectors, budget_currency) may hold raw,
    not-yet-canonical values while their DELTA entries are pending; validation
    checks the structural invariants, not vocabulary membership.
    """

    record_id: str
    source_id: str
    source_url: str
    product_name: str
    product_version: str
    record_kind: str = "project"
    title: str = ""
    description: str = ""
    country: str = UNKNOWN_COUNTRY
    region: str | None = None
    status: str = "unknown"
    budget_value: float | None = None
    budget_currency: str | None = None
    budget_usd: float | None = None
    date_published: str | None = None
    date_updated: str | None = None
    date_deadline: str | None = None
    location: GeoPoint | None = None
    sectors: tuple[str, ...] = ()
    entities: tuple[Stakeholder, ...] = ()
    ingested_at: str = ""

    def __post_init__(self):
        # sectors carry set semantics; keep them deduplicated and ordered so
        # value equality and JSON round-trips are stable.
        normalized = tuple(sorted(set(self.sectors)))
        if normalized != tuple(self.sectors):
            object.__setattr__(self, "sectors", normalized)
        if not isinstance(self.entities, tuple):
            object.__setattr__(self, "entities", tuple(self.entities))

    def content_equal(self, other: "StandardRecord") -> bool:
        """Equality ignoring the ingestion timestamp; drives upsert diffing."""
        return replace(self, ingested_at="") == replace(other, ingested_at="")

    def text(self) -> str:
        """Title + description, the unit embedded for retrieval."""
        return f"{self.title} {self.description}".strip()

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "source_id": self.source_id,
            "record_kind": self.record_kind,
            "title": self.title,
            "description": self.description,
            "country": self.country,
            "region": self.region,
            "status": self.status,
            "budget_value": self.budget_value,
            "budget_currency": self.budget_currency,
            "budget_usd": self.budget_usd,
            "date_published": self.date_published,
            "date_updated": self.date_updated,
            "date_deadline": self.date_deadline,
            "location": self.location.to_json_dict() if self.location else None,
            "sectors": list(self.sectors),
            "entities": [e.to_json_dict() for e in self.entities],
            "source_url": self.source_url,
            "product_name": self.product_name,
            "product_version": self.product_version,
            "ingested_at": self.ingested_at,
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "StandardRecord":
        loc = data.get("location")
        return cls(
            record_id=str(data.get("record_id", "")),
            source_id=str(data.get("source_id", "")),
            source_url=str(data.get("source_url", "")),
            product_name=str(data.get("product_name", "")),
            product_version=str(data.get("product_version", "")),
            record_kind=str(data.get("record_kind", "project")),
            title=str(data.get("title", "")),
            description=str(data.get("description", "")),
            country=str(data.get("country", UNKNOWN_COUNTRY)),
            region=data.get("region"),
            status=str(data.get("status", "unknown")),
            budget_value=_opt_float(data.get("budget_value")),
            budget_currency=data.get("budget_currency"),
            budget_usd=_opt_float(data.get("budget_usd")),
            date_published=data.get("date_published"),
            date_updated=data.get("date_updated"),
            date_deadline=data.get("date_deadline"),
            location=GeoPoint.from_json_dict(loc) if loc else None,
            sectors=tuple(data.get("sectors", ())),
            entities=tuple(Stakeholder.from_json_dict(e) for e in data.get("entities", ())),
            ingested_at=str(data.get("ingested_at", "")),
        )


def _opt_float(value: Any) -> float | None:
    return None if value is None else float(value)


def is_populated(value: Any) -> bool:
    """Whether a field carries real information (sentinels don't count)."""
    if value is None:
        return False
    if isinstance(value, str):
        return bool(value) and value not in ("unknown", UNKNOWN_COUNTRY)
    if isinstance(value, (tuple, list)):
        return len(value) > 0
    return True


def new_record(source_id: str, source_url: str, product_name: str,
               product_version: str, **fields: Any) -> StandardRecord:
    """Build a record with its identity derived from (source_id, source_url)."""
    return StandardRecord(
        record_id=make_record_id(source_id, source_url),
        source_id=source_id,
        source_url=source_url,
        product_name=product_name,
        product_version=product_version,
        **fields,
    )


@dataclass(frozen=True)
class Violation:
    field: str
    code: str
    message: str

    def to_json_dict(self) -> dict[str, str]:
        return {"field": self.field, "code": self.code, "message": self.message}


def validate_record(record: StandardRecord) -> list[Violation]:
    """Check every structural invariant; the report lists all violations.

    Violations are data, not errors: a non-empty report means the record is
    rejected at ingestion, never that processing aborts.
    """
    out: list[Violation] = []
    for name in ("date_published", "date_updated", "date_deadline"):
        value = getattr(record, name)
        if value is None:
            continue
        if not DATE_PATTERN.match(value):
            out.append(Violation(name, "BAD_DATE_FORMAT", f"{value!r} is not yyyy-mm-dd"))
        elif not _is_real_date(value):
            out.append(Violation(name, "INVALID_DATE", f"{value!r} is not a calendar date"))
    if record.budget_value is not None and record.budget_value < 0:
        out.append(Violation("budget_value", "NEGATIVE_BUDGET", f"{record.budget_value} < 0"))
    if record.budget_usd is not None and record.budget_usd < 0:
        out.append(Violation("budget_usd", "NEGATIVE_BUDGET", f"{record.budget_usd} < 0"))
    if record.budget_value is not None and not record.budget_currency:
        out.append(Violation("budget_currency", "MISSING_CURRENCY",
                             "budget_value present without budget_currency"))
    if not record.product_name:
        out.append(Violation("product_name", "EMPTY_PRODUCT_NAME", "product_name is empty"))
    if not record.product_version:
        out.append(Violation("product_version", "EMPTY_PRODUCT_VERSION", "product_version is empty"))
    if not record.source_id or not record.source_url:
        out.append(Violation("record_id", "BAD_RECORD_ID",
                             "source_id/source_url empty; identity cannot be derived"))
    elif record.record_id != make_record_id(record.source_id, record.source_url):
        out.append(Violation("record_id", "BAD_RECORD_ID",
                             "record_id does not match hash of (source_id, source_url)"))
    return out


def _is_real_date(text: str) -> bool:
    y, m, d = text.split("-")
    try:
        date(int(y), int(m), int(d))
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class DeltaMarker:
    """Returned by canonicalize when the raw value misses the dictionary."""

    raw: str


@dataclass(frozen=True)
class ReferenceDictionary:
    """Canonical-value map for one governed attribute.

    Keys are case-folded and ASCII-trimmed at construction; a folded key can
    never map to two canonical values.
    """

    attribute: str
    entries: Mapping[str, str] = field(default_factory=dict)
    version: int = 1

    def __post_init__(self):
        folded: dict[str, str] = {}
        for raw, canonical in self.entries.items():
            key = fold_key(raw)
            if key in folded and folded[key] != canonical:
                raise InvalidArgumentError(
                    f"dictionary {self.attribute!r}: key {key!r} maps to both "
                    f"{folded[key]!r} and {canonical!r}")
            folded[key] = canonical
        object.__setattr__(self, "entries", folded)

    def with_entry(self, raw: str, canonical: str) -> "ReferenceDictionary":
        merged = dict(self.entries)
        merged[fold_key(raw)] = canonical
        return ReferenceDictionary(self.attribute, merged, self.version + 1)

    def to_json_dict(self) -> dict[str, Any]:
        return {"attribute": self.attribute, "entries": dict(self.entries),
                "version": self.version}

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "ReferenceDictionary":
        return cls(attribute=str(data["attribute"]), entries=dict(data.get("entries", {})),
                   version=int(data.get("version", 1)))


def canonicalize(raw: str, dictionary: ReferenceDictionary) -> str | DeltaMarker:
    """Map a raw value to its canonical form, or mark it as a DELTA."""
    hit = dictionary.entries.get(fold_key(raw))
    return hit if hit is not None else DeltaMarker(raw)


def delta_entry_id(attribute: str, raw_value: str) -> str:
    """Stable queue id so the API and the console address the same entry."""
    payload = f"{attribute}\x1f{fold_key(raw_value)}".encode("utf-8")
    return hashlib.blake2b(payload, digest_size=8).hexdigest()


@dataclass(frozen=True)
class DeltaEntry:
    """A raw value no dictionary knows, queued for SME resolution."""

    attribute: str
    raw_value: str
    occurrence_count: int
    first_seen: str
    example_record_ids: tuple[str, ...] = ()
    state: str = "pending"
    resolution: str | None = None

    def __post_init__(self):
        if self.occurrence_count < 1:
            raise InvalidArgumentError("occurrence_count must be >= 1")
        if self.state == "resolved" and self.resolution is None:
            raise InvalidArgumentError("resolved entry must carry a resolution")
        if not isinstance(self.example_record_ids, tuple):
            object.__setattr__(self, "example_record_ids", tuple(self.example_record_ids))

    @property
    def entry_id(self) -> str:
        return delta_entry_id(self.attribute, self.raw_value)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "entry_id": self.entry_id,
            "attribute": self.attribute,
            "raw_value": self.raw_value,
            "occurrence_count": self.occurrence_count,
            "first_seen": self.first_seen,
            "example_record_ids": list(self.example_record_ids),
            "state": self.state,
            "resolution": self.resolution,
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "DeltaEntry":
        return cls(
            attribute=str(data["attribute"]),
            raw_value=str(data["raw_value"]),
            occurrence_count=int(data["occurrence_count"]),
            first_seen=str(data.get("first_seen", "")),
            example_record_ids=tuple(data.get("example_record_ids", ())),
            state=str(data.get("state", "pending")),
            resolution=data.get("resolution"),
        )


@dataclass(frozen=True)
class DataProductManifest:
    """Configuration of one data product: source, mapping, and schedule."""

    name: str
    version: str
    source_category: str
    fetcher_id: str
    field_mapping: Mapping[str, str] = field(default_factory=dict)
    schedule: str = "0 0 * * *"
    enabled: bool = True

    def __post_init__(self):
        if not self.name:
            raise InvalidArgumentError("manifest name must be non-empty")
        if not _SEMVER_PATTERN.match(self.version):
            raise InvalidArgumentError(f"manifest version is not semver: {self.version!r}")
        if self.source_category not in SOURCE_CATEGORIES:
            raise InvalidArgumentError(f"unknown source_category: {self.source_category!r}")
        bad = [target for target in self.field_mapping.values()
               if target not in STANDARD_RECORD_FIELDS]
        if bad:
            raise InvalidArgumentError(f"field_mapping targets unknown fields: {bad}")
        cron.parse(self.schedule)
        object.__setattr__(self, "field_mapping", dict(self.field_mapping))

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "version": self.version,
            "source_category": self.source_category,
            "fetcher_id": self.fetcher_id,
            "field_mapping": dict(self.field_mapping),
            "schedule": self.schedule,
            "enabled": self.enabled,
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "DataProductManifest":
        return cls(
            name=str(data["name"]),
            version=str(data["version"]),
            source_category=str(data["source_category"]),
            fetcher_id=str(data["fetcher_id"]),
            field_mapping=dict(data.get("field_mapping", {})),
            schedule=str(data.get("schedule", "0 0 * * *")),
            enabled=bool(data.get("enabled", True)),
        )


def records_to_jsonl(records: Iterable[StandardRecord]) -> str:
    import json

    return "\n".join(json.dumps(r.to_json_dict(), sort_keys=True) for r in records)
