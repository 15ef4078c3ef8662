"""Master command-control registry: versioned data-product configuration.

A single JSON document on disk plus CRUD accessors; every mutation bumps
the registry version and persists immediately.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

from .errors import NotFoundError
from .model import DataProductManifest


class Mc3Registry:
    def __init__(self, path: str | Path | None = None):
        self._lock = threading.RLock()
        self._products: dict[str, DataProductManifest] = {}
        self.version = 1
        self.path = Path(path) if path else None
        if self.path and self.path.exists():
            self._load(self.path)

    def _load(self, path: Path) -> None:
        payload = json.loads(path.read_text(encoding="utf-8"))
        self.version = int(payload.get("version", 1))
        for data in payload.get("products", []):
            manifest = DataProductManifest.from_json_dict(data)
            self._products[manifest.name] = manifest

    def list(self) -> list[DataProductManifest]:
        with self._lock:
            return [self._products[name] for name in sorted(self._products)]

    def names(self) -> list[str]:
        with self._lock:
            return sorted(self._products)

    def get(self, name: str) -> DataProductManifest:
        with self._lock:
            manifest = self._products.get(name)
        if manifest is None:
            raise NotFoundError(f"no data product named {name!r}")
        return manifest

    def put(self, manifest: DataProductManifest) -> int:
        """Insert or replace by name; returns the new registry version."""
        with self._lock:
            self._products[manifest.name] = manifest
            self.version += 1
            self._persist()
            return self.version

    def to_json_dict(self) -> dict:
        with self._lock:
            return {"version": self.version,
                    "products": [m.to_json_dict() for m in self.list()]}

    def _persist(self) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(
            json.dumps(self.to_json_dict(), indent=1, sort_keys=True) + "\n",
            encoding="utf-8")
