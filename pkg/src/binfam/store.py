"""On-disk corpus store: content-addressed records and features plus run manifests.

Layout under the store root::

    index.json          binary id -> record and feature digests, in ingest order
    objects/<digest>    canonical JSON blobs, named by their sha256
    hierarchy.json      the persistent family hierarchy, if clustered
    manifests/NNNN-<command>.json
    reports/            component, lineage and evaluation outputs
    .lock               held for the lifetime of one command
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from filelock import FileLock, Timeout

from .features import BinaryFeatures, RawBinaryRecord
from .hierarchy import Hierarchy

INDEX = "index.json"
HIERARCHY = "hierarchy.json"


class StoreError(RuntimeError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


@dataclass
class IndexEntry:
    record: str
    features: str


class CorpusStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = FileLock(str(self.root / ".lock"))
        self.index: dict[str, IndexEntry] = {}
        self.order: list[str] = []

    # -------------------------------------------------------------- lifecycle

    def __enter__(self) -> "CorpusStore":
        self.root.mkdir(parents=True, exist_ok=True)
        try:
            self._lock.acquire(timeout=0)
        except Timeout as exc:
            raise StoreError(f"store {self.root} is locked by another process") from exc
        self._load_index()
        return self

    def __exit__(self, *exc) -> None:
        self._lock.release()

    def _load_index(self) -> None:
        path = self.root / INDEX
        if not path.exists():
            return
        obj = json.loads(path.read_text(encoding="utf-8"))
        self.order = list(obj["order"])
        self.index = {b: IndexEntry(**obj["binaries"][b]) for b in self.order}

    def _save_index(self) -> None:
        obj = {
            "order": self.order,
            "binaries": {b: {"record": e.record, "features": e.features} for b, e in self.index.items()},
        }
        write_atomic(self.root / INDEX, canonical_json(obj))

    # -------------------------------------------------------------- objects

    def put_object(self, obj) -> str:
        text = canonical_json(obj)
        d = digest_bytes(text.encode("utf-8"))
        path = self.root / "objects" / d
        if not path.exists():
            write_atomic(path, text)
        return d

    def get_object(self, digest: str):
        path = self.root / "objects" / digest
        if not path.exists():
            raise StoreError(f"missing object {digest}")
        return json.loads(path.read_text(encoding="utf-8"))

    # -------------------------------------------------------------- corpus

    def add(self, record: RawBinaryRecord, features: BinaryFeatures) -> bool:
        """Store a binary; returns False (and changes nothing) if the id is already present."""
        if record.binary_id in self.index:
            return False
        self.index[record.binary_id] = IndexEntry(self.put_object(record.to_json()), self.put_object(features.to_json()))
        self.order.append(record.binary_id)
        return True

    def commit(self) -> None:
        self._save_index()

    def __contains__(self, binary_id: str) -> bool:
        return binary_id in self.index

    def record(self, binary_id: str) -> RawBinaryRecord:
        return RawBinaryRecord.from_json(self.get_object(self._entry(binary_id).record))

    def features(self, binary_id: str) -> BinaryFeatures:
        return BinaryFeatures.from_json(self.get_object(self._entry(binary_id).features))

    def _entry(self, binary_id: str) -> IndexEntry:
        try:
            return self.index[binary_id]
        except KeyError:
            raise StoreError(f"unknown binary {binary_id!r}") from None

    # -------------------------------------------------------------- hierarchy

    @property
    def hierarchy_path(self) -> Path:
        return self.root / HIERARCHY

    def load_hierarchy(self) -> Hierarchy | None:
        if not self.hierarchy_path.exists():
            return None
        return Hierarchy.loads(self.hierarchy_path.read_text(encoding="utf-8"))

    def save_hierarchy(self, h: Hierarchy) -> None:
        write_atomic(self.hierarchy_path, h.dumps())

    # -------------------------------------------------------------- reports and manifests

    def write_report(self, name: str, text: str) -> Path:
        path = self.root / "reports" / name
        write_atomic(path, text)
        return path

    def manifests(self) -> list[Path]:
        mdir = self.root / "manifests"
        return sorted(mdir.glob("*.json")) if mdir.exists() else []

    def write_manifest(self, command: str, manifest: dict) -> Path:
        n = len(self.manifests())
        path = self.root / "manifests" / f"{n:04d}-{command}.json"
        write_atomic(path, canonical_json(manifest))
        return path

    def output_digests(self, names: list[str]) -> dict[str, str]:
        """sha256 of the named store-relative files that exist."""
        out = {}
        for name in names:
            p = self.root / name
            if p.exists():
                out[name] = digest_file(p)
        return out
