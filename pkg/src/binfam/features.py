"""Binary feature ingestion and the multi-channel bag-of-words model.

A binary is represented by four bags of procedure-call-graph 2-grams (one per
MinHash seed), a bag of distinct strings and a bag of imported libraries.
Procedure labels are MinHash values over the block-semantics hashes of the
procedure, so two procedures get the same label with probability equal to the
Jaccard index of their block sets.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

log = logging.getLogger(__name__)

DEFAULT_SEEDS: tuple[int, ...] = (1, 2, 3, 4)
NUM_NGRAM_BAGS = 4

FeatureBag = dict[str, float]

RECORD_FIELDS = (
    "binary_id",
    "procedures",
    "call_edges",
    "strings",
    "imports",
    "timestamp",
    "first_seen",
)


class RecordError(ValueError):
    """A raw binary record failed validation."""


def stable_hash64(token: str, seed: int) -> int:
    """Seeded 64-bit hash of ``token``, identical on every platform and run."""
    h = hashlib.blake2b(
        token.encode("utf-8"),
        digest_size=8,
        key=seed.to_bytes(8, "little", signed=False),
    )
    return int.from_bytes(h.digest(), "little")


@dataclass
class RawBinaryRecord:
    binary_id: str
    procedures: dict[str, list[str]]
    call_edges: list[tuple[str, str]] = field(default_factory=list)
    strings: list[str] = field(default_factory=list)
    imports: list[str] = field(default_factory=list)
    timestamp: int | None = None
    first_seen: int | None = None

    def validate(self) -> None:
        if not isinstance(self.binary_id, str) or not self.binary_id:
            raise RecordError("binary_id must be a non-empty string")
        for caller, callee in self.call_edges:
            for proc in (caller, callee):
                if proc not in self.procedures:
                    raise RecordError(
                        f"call edge endpoint {proc!r} is not a procedure of {self.binary_id}"
                    )

    @classmethod
    def from_json(cls, obj: Mapping) -> "RawBinaryRecord":
        if not isinstance(obj, Mapping):
            raise RecordError("record must be a JSON object")
        unknown = sorted(set(obj) - set(RECORD_FIELDS))
        if unknown:
            log.warning("ignoring unknown keys %s in record %r", unknown, obj.get("binary_id"))
        if "binary_id" not in obj:
            raise RecordError("missing binary_id")
        procs_raw = obj.get("procedures", [])
        procedures: dict[str, list[str]] = {}
        try:
            for proc_id, blocks in procs_raw:
                if proc_id in procedures:
                    raise RecordError(f"duplicate procedure id {proc_id!r}")
                procedures[str(proc_id)] = [str(b) for b in blocks]
            edges = [(str(a), str(b)) for a, b in obj.get("call_edges", [])]
        except (TypeError, ValueError) as exc:
            if isinstance(exc, RecordError):
                raise
            raise RecordError(f"malformed procedures or call_edges: {exc}") from exc
        rec = cls(
            binary_id=obj["binary_id"],
            procedures=procedures,
            call_edges=edges,
            strings=[str(s) for s in obj.get("strings", [])],
            imports=[str(s) for s in obj.get("imports", [])],
            timestamp=_opt_int(obj.get("timestamp"), "timestamp"),
            first_seen=_opt_int(obj.get("first_seen"), "first_seen"),
        )
        rec.validate()
        return rec

    def to_json(self) -> dict:
        return {
            "binary_id": self.binary_id,
            "procedures": [[p, list(blocks)] for p, blocks in self.procedures.items()],
            "call_edges": [list(e) for e in self.call_edges],
            "strings": list(self.strings),
            "imports": list(self.imports),
            "timestamp": self.timestamp,
            "first_seen": self.first_seen,
        }


def _opt_int(value, name: str) -> int | None:
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise RecordError(f"{name} must be an integer or null")
    return value


@dataclass(frozen=True)
class BinaryFeatures:
    """Feature set of a binary or an exemplar.

    ``size`` is the number of binaries represented (1 for a raw binary).
    """

    ngram_bags: tuple[FeatureBag, ...]
    string_bag: FeatureBag
    import_bag: FeatureBag
    size: int = 1

    def __post_init__(self):
        if len(self.ngram_bags) != NUM_NGRAM_BAGS:
            raise ValueError(f"expected {NUM_NGRAM_BAGS} n-gram bags, got {len(self.ngram_bags)}")

    @property
    def bags(self) -> tuple[FeatureBag, ...]:
        """All six bags: the four n-gram bags, strings, imports."""
        return (*self.ngram_bags, self.string_bag, self.import_bag)

    @classmethod
    def from_bags(cls, bags: Iterable[FeatureBag], size: int) -> "BinaryFeatures":
        bags = list(bags)
        return cls(tuple(bags[:NUM_NGRAM_BAGS]), bags[NUM_NGRAM_BAGS], bags[NUM_NGRAM_BAGS + 1], size)

    def with_size(self, size: int) -> "BinaryFeatures":
        return BinaryFeatures(self.ngram_bags, self.string_bag, self.import_bag, size)

    def to_json(self) -> dict:
        return {
            "ngrams": [_sorted_bag(b) for b in self.ngram_bags],
            "strings": _sorted_bag(self.string_bag),
            "imports": _sorted_bag(self.import_bag),
            "size": self.size,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "BinaryFeatures":
        return cls(
            tuple(dict(b) for b in obj["ngrams"]),
            dict(obj["strings"]),
            dict(obj["imports"]),
            int(obj["size"]),
        )

    def serialize(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))


def _sorted_bag(bag: FeatureBag) -> dict[str, float]:
    return {k: bag[k] for k in sorted(bag)}


def minhash_labels(procedure: list[str], seeds: Iterable[int] = DEFAULT_SEEDS) -> list[int]:
    """Label a procedure by the minimum block hash under each seed."""
    seeds = list(seeds)
    if not procedure:
        raise RecordError("empty procedure")
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")
    return [min(stable_hash64(block, s) for block in procedure) for s in seeds]


def ngram_token(caller_label: int, callee_label: int) -> str:
    return f"{caller_label:016x}>{callee_label:016x}"


def pcg_ngrams(record: RawBinaryRecord, seeds: Iterable[int] = DEFAULT_SEEDS) -> list[FeatureBag]:
    """Call-graph 2-gram bags, one per seed. Only procedures on a call edge are labeled."""
    seeds = list(seeds)
    if len(seeds) != NUM_NGRAM_BAGS:
        raise ValueError(f"expected {NUM_NGRAM_BAGS} seeds")
    record.validate()
    labels: dict[str, list[int]] = {}
    for caller, callee in record.call_edges:
        for proc in (caller, callee):
            if proc not in labels:
                labels[proc] = minhash_labels(record.procedures[proc], seeds)
    bags: list[FeatureBag] = [{} for _ in seeds]
    for caller, callee in record.call_edges:
        a, b = labels[caller], labels[callee]
        for k in range(len(seeds)):
            bags[k][ngram_token(a[k], b[k])] = 1.0
    return bags


def build_features(record: RawBinaryRecord, seeds: Iterable[int] = DEFAULT_SEEDS) -> BinaryFeatures:
    ngrams = pcg_ngrams(record, seeds)
    return BinaryFeatures(
        ngram_bags=tuple(ngrams),
        string_bag={s: 1.0 for s in record.strings},
        import_bag={s: 1.0 for s in record.imports},
        size=1,
    )


def read_records(lines: Iterable[str]) -> Iterator[tuple[int, RawBinaryRecord | None, str | None]]:
    """Parse JSON Lines; yields ``(line_no, record, error)`` for each non-blank line."""
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = RawBinaryRecord.from_json(json.loads(line))
        except (json.JSONDecodeError, RecordError, KeyError) as exc:
            yield line_no, None, str(exc)
            continue
        yield line_no, rec, None
