"""Seeded generators for planted-family and planted-component corpora."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import RawBinaryRecord


@dataclass(frozen=True)
class CorpusShape:
    procedures: int = 12
    blocks_per_procedure: int = 6
    call_edges: int = 16
    strings: int = 10
    imports: int = 5


def _prototype(rng: np.random.Generator, prefix: str, shape: CorpusShape) -> RawBinaryRecord:
    procs = {
        f"p{i}": [f"{prefix}.b{i}.{j}" for j in range(shape.blocks_per_procedure)]
        for i in range(shape.procedures)
    }
    names = list(procs)
    edges = set()
    # spanning chain keeps every procedure on an edge
    for i in range(1, len(names)):
        edges.add((names[int(rng.integers(i))], names[i]))
    while len(edges) < min(shape.call_edges, len(names) * (len(names) - 1)):
        a, b = rng.integers(len(names), size=2)
        if a != b:
            edges.add((names[a], names[b]))
    return RawBinaryRecord(
        binary_id=prefix,
        procedures=procs,
        call_edges=sorted(edges),
        strings=[f"{prefix}.s{i}" for i in range(shape.strings)],
        imports=[f"{prefix}.i{i}" for i in range(shape.imports)],
    )


def mutate_record(rec: RawBinaryRecord, new_id: str, rate: float, rng: np.random.Generator) -> RawBinaryRecord:
    """Replace each block, string and import by a fresh token with probability ``rate``."""

    def fresh(tok: str, k: int) -> str:
        return f"{new_id}.m{k}" if rng.random() < rate else tok

    k = 0
    procs = {}
    for pid, blocks in rec.procedures.items():
        out = []
        for b in blocks:
            out.append(fresh(b, k))
            k += 1
        procs[pid] = out
    strings = []
    for s in rec.strings:
        strings.append(fresh(s, k))
        k += 1
    imports = []
    for s in rec.imports:
        imports.append(fresh(s, k))
        k += 1
    return RawBinaryRecord(
        binary_id=new_id,
        procedures=procs,
        call_edges=list(rec.call_edges),
        strings=strings,
        imports=imports,
        timestamp=rec.timestamp,
        first_seen=rec.first_seen,
    )


def generate_planted_corpus(
    families: int,
    per_family: int,
    mutation_rate: float,
    seed: int = 0,
    shape: CorpusShape = CorpusShape(),
) -> tuple[list[RawBinaryRecord], dict[str, int]]:
    """Families of mutated copies of disjoint random prototypes.

    Records come back interleaved across families so that any prefix is a
    mixed batch.
    """
    if families < 1 or per_family < 1:
        raise ValueError("need at least one family and one member")
    if not 0.0 <= mutation_rate <= 1.0:
        raise ValueError("mutation_rate must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    protos = [_prototype(rng, f"fam{f}", shape) for f in range(families)]
    records = []
    truth = {}
    for m in range(per_family):
        for f, proto in enumerate(protos):
            bid = f"fam{f}-{m:05d}"
            records.append(mutate_record(proto, bid, mutation_rate, rng))
            truth[bid] = f
    order = rng.permutation(len(records))
    return [records[i] for i in order], truth


@dataclass
class PlantedComponents:
    records: list[RawBinaryRecord]
    # component index -> sorted (binary_id, procedure_id) pairs
    members: dict[int, list[tuple[str, str]]]
    presence: dict[int, list[str]]


def generate_planted_components(
    num_binaries: int,
    components: int,
    appearance_probs,
    seed: int = 0,
    mutation_rate: float = 0.0,
    procs_per_component: int = 5,
    filler_procs: int = 5,
    blocks_per_procedure: int = 8,
) -> PlantedComponents:
    """Binaries built from shared components plus per-binary filler procedures.

    Component ``i`` is included in each binary independently with probability
    ``appearance_probs[i]``. Draws are repeated until every component appears
    in at least one binary and no two components share a presence set, so the
    components are distinguishable.
    """
    probs = np.broadcast_to(np.asarray(appearance_probs, dtype=float), (components,))
    if np.any((probs < 0) | (probs > 1)):
        raise ValueError("appearance probabilities must lie in [0, 1]")
    if num_binaries < 1:
        raise ValueError("need at least one binary")
    rng = np.random.default_rng(seed)
    bids = [f"bin{j:04d}" for j in range(num_binaries)]
    for _ in range(10_000):
        inc = rng.random((components, num_binaries)) < probs[:, None]
        sets = {tuple(row) for row in inc}
        if inc.any(axis=1).all() and len(sets) == components:
            break
    else:
        raise ValueError("could not draw distinguishable component presence sets")
    comp_procs = [
        [[f"c{c}.p{i}.b{j}" for j in range(blocks_per_procedure)] for i in range(procs_per_component)]
        for c in range(components)
    ]
    records = []
    members: dict[int, list[tuple[str, str]]] = {c: [] for c in range(components)}
    for j, bid in enumerate(bids):
        procs: dict[str, list[str]] = {}
        k = 0
        for c in range(components):
            if not inc[c, j]:
                continue
            for i, blocks in enumerate(comp_procs[c]):
                pid = f"c{c}p{i}"
                procs[pid] = [f"{bid}.m{k + t}" if rng.random() < mutation_rate else b for t, b in enumerate(blocks)]
                k += len(blocks)
                members[c].append((bid, pid))
        for i in range(filler_procs):
            procs[f"f{i}"] = [f"{bid}.f{i}.b{t}" for t in range(blocks_per_procedure)]
        names = list(procs)
        edges = [(names[i - 1], names[i]) for i in range(1, len(names))]
        records.append(
            RawBinaryRecord(
                binary_id=bid,
                procedures=procs,
                call_edges=edges,
                strings=[f"{bid}.s"],
                imports=["libc"],
            )
        )
    presence = {c: [bids[j] for j in range(num_binaries) if inc[c, j]] for c in range(components)}
    return PlantedComponents(records=records, members={c: sorted(v) for c, v in members.items()}, presence=presence)
