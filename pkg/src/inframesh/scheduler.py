"""Cron-driven product orchestration with per-product mutual exclusion.

A tick triggers every enabled product whose cron matches the given minute
and whose mutex is free; runs happen on worker threads so slow products
never block the clock, and a product can never run concurrently with
itself.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from datetime import datetime
from typing import Callable, Sequence

from . import cron
from .model import DataProductManifest


@dataclass
class ScheduleEntry:
    product: str
    cron_expr: str
    last_run: str | None = None
    last_receipt_digest: str | None = None
    state: str = "idle"  # idle | running | failed

    def to_json_dict(self) -> dict[str, object]:
        return {"product": self.product, "cron": self.cron_expr,
                "last_run": self.last_run,
                "last_receipt_digest": self.last_receipt_digest,
                "state": self.state}


Runner = Callable[[DataProductManifest], object]


class Scheduler:
    def __init__(self, products: Callable[[], Sequence[DataProductManifest]],
                 runner: Runner):
        self._products = products
        self._runner = runner
        self._entries: dict[str, ScheduleEntry] = {}
        self._mutexes: dict[str, threading.Lock] = {}
        self._state_lock = threading.Lock()
        self._workers: list[threading.Thread] = []

    def entries(self) -> dict[str, ScheduleEntry]:
        with self._state_lock:
            self._sync_entries(self._products())
            return {name: ScheduleEntry(**vars(entry))
                    for name, entry in self._entries.items()}

    def states(self) -> dict[str, str]:
        return {name: entry.state for name, entry in self.entries().items()}

    def _sync_entries(self, manifests: Sequence[DataProductManifest]) -> None:
        for manifest in manifests:
            entry = self._entries.get(manifest.name)
            if entry is None:
                self._entries[manifest.name] = ScheduleEntry(
                    product=manifest.name, cron_expr=manifest.schedule)
            else:
                entry.cron_expr = manifest.schedule
            self._mutexes.setdefault(manifest.name, threading.Lock())

    def tick(self, now: datetime, wait: bool = False) -> list[str]:
        """Trigger matching products; returns the names actually started."""
        manifests = list(self._products())
        with self._state_lock:
            self._sync_entries(manifests)
        triggered = []
        for manifest in manifests:
            if not manifest.enabled:
                continue
            if not cron.matches(manifest.schedule, now):
                continue
            mutex = self._mutexes[manifest.name]
            if not mutex.acquire(blocking=False):
                continue  # still running: never double-start
            entry = self._entries[manifest.name]
            entry.state = "running"
            entry.last_run = now.strftime("%Y-%m-%dT%H:%M:%SZ")
            worker = threading.Thread(
                target=self._run_one, args=(manifest, mutex), daemon=True)
            self._workers.append(worker)
            worker.start()
            triggered.append(manifest.name)
        if wait:
            self.join()
        return triggered

    def _run_one(self, manifest: DataProductManifest, mutex: threading.Lock) -> None:
        entry = self._entries[manifest.name]
        try:
            receipt = self._runner(manifest)
            payload = getattr(receipt, "to_json_dict", lambda: str(receipt))()
            entry.last_receipt_digest = _digest(payload)
            entry.state = "idle"
        except Exception as exc:  # noqa: BLE001 - failures are state, not crashes
            entry.last_receipt_digest = _digest({"error": str(exc)})
            entry.state = "failed"
        finally:
            mutex.release()

    def join(self, timeout: float | None = None) -> None:
        for worker in self._workers:
            worker.join(timeout)
        self._workers = [w for w in self._workers if w.is_alive()]


def _digest(payload: object) -> str:
    canonical = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.blake2b(canonical.encode("utf-8"), digest_size=8).hexdigest()
