"""Embedded mesh store: records keyed by record_id, field provenance for
pending raw values, the DELTA queue, and reference dictionaries.

Desk-scale deployment is a single JSON file per store under the configured
data directory. Many readers may hold snapshots concurrently; writers are
serialized through one lock.
"""

from __future__ import annotations

import json
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .errors import NotFoundError, StorageError
from .model import (
    DeltaEntry,
    ReferenceDictionary,
    StandardRecord,
    delta_entry_id,
    fold_key,
)

Clock = Callable[[], str]


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class MeshStore:
    """In-process record store with serialized writes and atomic batches."""

    def __init__(self, path: str | Path | None = None):
        self._lock = threading.RLock()
        self._records: dict[str, StandardRecord] = {}
        self._records_cache: list[StandardRecord] | None = None
        # record_id -> {attribute: raw value} for fields awaiting resolution
        self._provenance: dict[str, dict[str, str]] = {}
        self._superseded: dict[str, str] = {}  # loser -> survivor
        self._deltas: dict[str, DeltaEntry] = {}
        self._dictionaries: dict[str, ReferenceDictionary] = {}
        self._last_ingest: dict[str, str] = {}  # product -> timestamp
        self._available = True
        self.path = Path(path) if path else None
        if self.path and self.path.exists():
            self._load(self.path)

    # -- availability (lets tests exercise the retryable-storage contract) --

    def set_available(self, available: bool) -> None:
        self._available = available

    def lock(self):
        """Re-entrant store lock for multi-step transactions (e.g. resolve)."""
        return self._lock

    def _check_available(self) -> None:
        if not self._available:
            raise StorageError("mesh store unavailable")

    # -- records --

    def upsert_batch(self, records: Iterable[StandardRecord],
                     provenance: Mapping[str, Mapping[str, str]] | None = None,
                     clock: Clock = utc_now_iso) -> tuple[int, int, int]:
        """Atomically upsert validated records; returns (inserted, updated, unchanged).

        Identical content leaves the stored record (and its ingested_at)
        untouched; differing content replaces it with a refreshed timestamp.
        """
        self._check_available()
        records = list(records)
        provenance = provenance or {}
        with self._lock:
            inserted = updated = unchanged = 0
            staged: dict[str, StandardRecord] = {}
            stamp = clock()
            for record in records:
                existing = self._records.get(record.record_id)
                if existing is None:
                    staged[record.record_id] = self._stamped(record, stamp)
                    inserted += 1
                elif existing.content_equal(record):
                    unchanged += 1
                else:
                    staged[record.record_id] = self._stamped(record, stamp)
                    updated += 1
            # nothing above raised: commit the whole batch
            self._records.update(staged)
            if staged:
                self._records_cache = None
            for record_id, attrs in provenance.items():
                if record_id in staged or record_id in self._records:
                    merged = dict(self._provenance.get(record_id, {}))
                    merged.update(attrs)
                    self._provenance[record_id] = merged
            for record in records:
                if record.product_name:
                    self._last_ingest[record.product_name] = stamp
            return inserted, updated, unchanged

    @staticmethod
    def _stamped(record: StandardRecord, stamp: str) -> StandardRecord:
        from dataclasses import replace

        return replace(record, ingested_at=stamp)

    def get(self, record_id: str) -> StandardRecord:
        self._check_available()
        with self._lock:
            record = self._records.get(record_id)
        if record is None:
            raise NotFoundError(f"record {record_id!r} not in mesh")
        return record

    def all_records(self, include_superseded: bool = False) -> list[StandardRecord]:
        self._check_available()
        with self._lock:
            if include_superseded:
                return [r for _, r in sorted(self._records.items())]
            if self._records_cache is None:
                self._records_cache = [r for rid, r in sorted(self._records.items())
                                       if rid not in self._superseded]
            return list(self._records_cache)

    def count(self, product_name: str | None = None) -> int:
        with self._lock:
            return sum(1 for r in self._records.values()
                       if r.record_id not in self._superseded
                       and (product_name is None or r.product_name == product_name))

    def replace_record(self, record: StandardRecord) -> None:
        """Direct replacement used by retro-updates and merges."""
        self._check_available()
        with self._lock:
            if record.record_id not in self._records:
                raise NotFoundError(f"record {record.record_id!r} not in mesh")
            self._records[record.record_id] = record
            self._records_cache = None

    def mark_superseded(self, loser_ids: Iterable[str], survivor_id: str) -> None:
        self._check_available()
        with self._lock:
            for loser in loser_ids:
                if loser != survivor_id:
                    self._superseded[loser] = survivor_id
            self._records_cache = None

    def is_superseded(self, record_id: str) -> bool:
        with self._lock:
            return record_id in self._superseded

    def provenance_of(self, record_id: str) -> dict[str, str]:
        with self._lock:
            return dict(self._provenance.get(record_id, {}))

    def records_with_raw(self, attribute: str, raw_value: str) -> list[str]:
        """Record ids whose pending raw value for attribute folds equal."""
        target = fold_key(raw_value)
        with self._lock:
            return sorted(
                record_id for record_id, attrs in self._provenance.items()
                if attribute in attrs and fold_key(attrs[attribute]) == target
                and record_id in self._records)

    def clear_provenance(self, record_id: str, attribute: str) -> None:
        with self._lock:
            attrs = self._provenance.get(record_id)
            if attrs and attribute in attrs:
                del attrs[attribute]
                if not attrs:
                    del self._provenance[record_id]

    def last_ingest_at(self, product_name: str) -> str | None:
        with self._lock:
            return self._last_ingest.get(product_name)

    # -- delta queue --

    def enqueue_deltas(self, deltas: Iterable[DeltaEntry]) -> int:
        """Merge deltas into the queue by (attribute, folded raw).

        Returns the number of distinct entries touched. Concurrent enqueues
        are safe; occurrence counts accumulate.
        """
        self._check_available()
        touched = set()
        with self._lock:
            for delta in deltas:
                key = delta.entry_id
                existing = self._deltas.get(key)
                if existing is not None and existing.state != "pending":
                    continue  # resolved entries are history, not queue
                touched.add(key)
                if existing is None:
                    self._deltas[key] = delta
                else:
                    from dataclasses import replace

                    merged_ids = (existing.example_record_ids +
                                  tuple(i for i in delta.example_record_ids
                                        if i not in existing.example_record_ids))[:5]
                    self._deltas[key] = replace(
                        existing,
                        occurrence_count=existing.occurrence_count + delta.occurrence_count,
                        example_record_ids=merged_ids)
        return len(touched)

    def pending_deltas(self, attribute: str | None = None) -> list[DeltaEntry]:
        with self._lock:
            entries = [d for d in self._deltas.values() if d.state == "pending"
                       and (attribute is None or d.attribute == attribute)]
        entries.sort(key=lambda d: (-d.occurrence_count, d.attribute, fold_key(d.raw_value)))
        return entries

    def get_delta(self, entry_id: str) -> DeltaEntry:
        with self._lock:
            entry = self._deltas.get(entry_id)
        if entry is None:
            raise NotFoundError(f"delta entry {entry_id!r} not found")
        return entry

    def store_delta(self, entry: DeltaEntry) -> None:
        with self._lock:
            self._deltas[entry.entry_id] = entry

    def pending_delta_count(self, product_name: str | None = None) -> int:
        if product_name is None:
            return len(self.pending_deltas())
        with self._lock:
            product_records = {rid for rid, r in self._records.items()
                               if r.product_name == product_name}
            return sum(1 for d in self._deltas.values() if d.state == "pending"
                       and any(rid in product_records for rid in d.example_record_ids))

    # -- dictionaries --

    def get_dictionary(self, attribute: str) -> ReferenceDictionary:
        with self._lock:
            d = self._dictionaries.get(attribute)
        return d if d is not None else ReferenceDictionary(attribute, {}, 1)

    def put_dictionary(self, dictionary: ReferenceDictionary) -> None:
        self._check_available()
        with self._lock:
            self._dictionaries[dictionary.attribute] = dictionary

    def dictionaries(self) -> dict[str, ReferenceDictionary]:
        with self._lock:
            return dict(self._dictionaries)

    # -- single-file persistence --

    def save(self, path: str | Path | None = None) -> Path:
        target = Path(path) if path else self.path
        if target is None:
            raise StorageError("no persistence path configured")
        with self._lock:
            payload = {
                "records": [r.to_json_dict() for _, r in sorted(self._records.items())],
                "provenance": self._provenance,
                "superseded": self._superseded,
                "deltas": [d.to_json_dict() for _, d in sorted(self._deltas.items())],
                "dictionaries": [d.to_json_dict() for _, d in sorted(self._dictionaries.items())],
                "last_ingest": self._last_ingest,
            }
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(payload, sort_keys=True, indent=1), encoding="utf-8")
        return target

    def _load(self, path: Path) -> None:
        payload = json.loads(path.read_text(encoding="utf-8"))
        for data in payload.get("records", []):
            record = StandardRecord.from_json_dict(data)
            self._records[record.record_id] = record
        self._provenance = {k: dict(v) for k, v in payload.get("provenance", {}).items()}
        self._superseded = dict(payload.get("superseded", {}))
        for data in payload.get("deltas", []):
            entry = DeltaEntry.from_json_dict(data)
            self._deltas[entry.entry_id] = entry
        for data in payload.get("dictionaries", []):
            d = ReferenceDictionary.from_json_dict(data)
            self._dictionaries[d.attribute] = d
        self._last_ingest = dict(payload.get("last_ingest", {}))


def new_delta(attribute: str, raw_value: str, record_ids: Iterable[str],
              occurrence_count: int, clock: Clock = utc_now_iso) -> DeltaEntry:
    return DeltaEntry(
        attribute=attribute,
        raw_value=raw_value,
        occurrence_count=occurrence_count,
        first_seen=clock(),
        example_record_ids=tuple(list(record_ids)[:5]),
    )


__all__ = ["MeshStore", "new_delta", "utc_now_iso", "delta_entry_id"]
