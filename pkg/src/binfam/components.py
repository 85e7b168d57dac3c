"""Two-stage shared-component identification.

Stage one clusters every procedure in the corpus by block-set Jaccard
similarity. Each procedure cluster becomes a 0/1 presence vector over the
binaries; stage two clusters those vectors, so procedure clusters that show up
in the same binaries are grouped into one component.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.spatial.distance import pdist, squareform
from scipy.stats import binom

from .clusterers import kmeans, louvain
from .features import RawBinaryRecord

PROCEDURE_PRUNE = 0.3
PRESENCE_PRUNE = 0.7
DEFAULT_K = 50
METHODS = ("louvain", "kmeans")


@dataclass(frozen=True)
class ProcedureRef:
    binary_id: str
    procedure_id: str
    blocks: frozenset[str]

    def __post_init__(self):
        if not self.blocks:
            raise ValueError(f"procedure {self.binary_id}:{self.procedure_id} has no blocks")


@dataclass
class ProcedureCluster:
    members: list[ProcedureRef]
    presence: np.ndarray | None = None

    def binaries(self) -> set[str]:
        return {m.binary_id for m in self.members}


@dataclass
class Component:
    id: int
    clusters: list[ProcedureCluster]
    instantiations: dict[str, list[str]] = field(default_factory=dict)

    @property
    def shared(self) -> bool:
        return len(self.instantiations) >= 2

    def procedures(self) -> list[tuple[str, str]]:
        return sorted((b, p) for b, procs in self.instantiations.items() for p in procs)

    def to_json(self) -> dict:
        return {
            "component_id": self.id,
            "binaries": sorted(self.instantiations),
            "procedures": [list(bp) for bp in self.procedures()],
        }


def corpus_procedures(records: Sequence[RawBinaryRecord]) -> list[ProcedureRef]:
    return [
        ProcedureRef(rec.binary_id, pid, frozenset(blocks))
        for rec in records
        for pid, blocks in rec.procedures.items()
    ]


def procedure_similarity_edges(procs: Sequence[ProcedureRef], prune_below: float = PROCEDURE_PRUNE):
    """Jaccard index of block sets for every procedure pair at or above ``prune_below``."""
    vocab: dict[str, int] = {}
    rows, cols = [], []
    for i, p in enumerate(procs):
        for b in p.blocks:
            rows.append(i)
            cols.append(vocab.setdefault(b, len(vocab)))
    x = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(procs), max(len(vocab), 1)))
    inter = sparse.triu(x @ x.T, k=1).tocoo()
    sizes = np.asarray(x.sum(axis=1)).ravel()
    jac = inter.data / (sizes[inter.row] + sizes[inter.col] - inter.data)
    keep = jac >= prune_below
    return list(zip(inter.row[keep].tolist(), inter.col[keep].tolist(), jac[keep].tolist()))


def cluster_procedures(procs: Sequence[ProcedureRef], prune_below: float = PROCEDURE_PRUNE) -> list[ProcedureCluster]:
    """Louvain over the procedure graph weighted by block-set Jaccard."""
    if not procs:
        return []
    labels = louvain(len(procs), procedure_similarity_edges(procs, prune_below)).labels
    groups: dict[int, list[ProcedureRef]] = {}
    for p, lab in zip(procs, labels):
        groups.setdefault(lab, []).append(p)
    return [ProcedureCluster(members=groups[k]) for k in sorted(groups)]


def to_presence_vectors(clusters: Sequence[ProcedureCluster], binary_index: Sequence[str]) -> np.ndarray:
    """Row ``i`` has a 1 in column ``j`` iff cluster ``i`` holds a procedure of binary ``j``."""
    col = {b: j for j, b in enumerate(binary_index)}
    out = np.zeros((len(clusters), len(binary_index)), dtype=np.int8)
    for i, c in enumerate(clusters):
        for m in c.members:
            out[i, col[m.binary_id]] = 1
        c.presence = out[i]
    return out


def cluster_components(
    vectors: np.ndarray,
    method: str = "louvain",
    k: int = DEFAULT_K,
    seed: int = 0,
    prune_below: float = PRESENCE_PRUNE,
) -> np.ndarray:
    """Group presence vectors; returns a component label per vector.

    Louvain runs on ``1 - L2 / max(L2)`` similarities with edges below
    ``prune_below`` dropped, K-means on the raw vectors with L2 distance.
    """
    v = np.asarray(vectors, dtype=float)
    n = len(v)
    if n == 0:
        return np.zeros(0, dtype=int)
    if method == "kmeans":
        return kmeans(v, k, seed=seed)
    if method != "louvain":
        raise ValueError(f"method must be one of {METHODS}")
    if n == 1:
        return np.zeros(1, dtype=int)
    d = squareform(pdist(v, "euclidean"))
    top = d.max()
    if top == 0.0:
        return np.zeros(n, dtype=int)
    sim = 1.0 - d / top
    iu, ju = np.triu_indices(n, k=1)
    w = sim[iu, ju]
    keep = (w > 0.0) & (w >= prune_below)
    return np.asarray(louvain(n, zip(iu[keep].tolist(), ju[keep].tolist(), w[keep].tolist())).labels)


@dataclass
class ComponentReport:
    components: list[Component]
    binaries: list[str]
    components_per_binary: dict[str, int]

    def binaries_per_component(self) -> list[int]:
        return [len(c.instantiations) for c in self.components]

    def summary(self) -> dict:
        bpc = self.binaries_per_component()
        sizes = [len(p) for c in self.components for p in c.instantiations.values()]
        cpb = list(self.components_per_binary.values())
        return {
            "n_binaries": len(self.binaries),
            "n_components": len(self.components),
            "n_shared": sum(c.shared for c in self.components),
            "singleton_fraction": float(np.mean([b == 1 for b in bpc])) if bpc else 0.0,
            "binaries_per_component_hist": _histogram(bpc),
            "components_per_binary_mean": float(np.mean(cpb)) if cpb else 0.0,
            "instantiation_size_variance": float(np.var(sizes)) if sizes else 0.0,
        }

    def to_jsonl(self) -> str:
        return "".join(json.dumps(c.to_json(), sort_keys=True) + "\n" for c in self.components)


def _histogram(values: Sequence[int]) -> dict[str, int]:
    out: dict[int, int] = {}
    for v in values:
        out[v] = out.get(v, 0) + 1
    return {str(k): out[k] for k in sorted(out)}


def identify_components(
    records: Sequence[RawBinaryRecord],
    method: str = "louvain",
    k: int = DEFAULT_K,
    seed: int = 0,
    split: bool = False,
    prune_below: float = PROCEDURE_PRUNE,
) -> ComponentReport:
    if split:
        raise NotImplementedError("unimplemented: split refinement")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    binaries = [r.binary_id for r in records]
    if len(set(binaries)) != len(binaries):
        raise ValueError("duplicate binary ids in corpus")
    if not records:
        return ComponentReport([], [], {})
    clusters = cluster_procedures(corpus_procedures(records), prune_below)
    vectors = to_presence_vectors(clusters, binaries)
    labels = cluster_components(vectors, method, k, seed)
    grouped: dict[int, list[ProcedureCluster]] = {}
    for c, lab in zip(clusters, labels):
        grouped.setdefault(int(lab), []).append(c)
    components = []
    for cid, lab in enumerate(sorted(grouped)):
        inst: dict[str, list[str]] = {}
        for c in grouped[lab]:
            for m in c.members:
                inst.setdefault(m.binary_id, []).append(m.procedure_id)
        components.append(Component(cid, grouped[lab], {b: sorted(p) for b, p in sorted(inst.items())}))
    per_binary = {b: 0 for b in binaries}
    for comp in components:
        for b in comp.instantiations:
            per_binary[b] += 1
    return ComponentReport(components, binaries, per_binary)


def detection_probability_lower_bound(num_binaries: int, probs: Sequence[float], target: int) -> float:
    """Lower bound on the chance that component ``target`` gets a presence set of its own.

    Sums, over every possible appearance count ``x``, the probability that the
    target appears in exactly ``x`` binaries while no other component does.
    """
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or len(p) == 0:
        raise ValueError("need at least one appearance probability")
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise ValueError("appearance probabilities must lie in [0, 1]")
    if not 0 <= target < len(p):
        raise ValueError("target index out of range")
    if num_binaries < 0:
        raise ValueError("num_binaries must be >= 0")
    x = np.arange(num_binaries + 1)
    pmf = binom.pmf(x[None, :], num_binaries, p[:, None])
    others = np.delete(pmf, target, axis=0)
    return float((pmf[target] * np.prod(1.0 - others, axis=0)).sum())


# ---------------------------------------------------------------------------- recovery metrics


def membership_jaccard(report: ComponentReport, truth: dict[int, list[tuple[str, str]]]) -> float:
    """Mean over planted components of the best procedure-set Jaccard with any found component."""
    found = [set(c.procedures()) for c in report.components]
    scores = []
    for members in truth.values():
        t = set(members)
        best = 0.0
        for f in found:
            inter = len(t & f)
            if inter:
                best = max(best, inter / len(t | f))
        scores.append(best)
    return float(np.mean(scores)) if scores else 1.0


def binary_partition_ari(report: ComponentReport, truth: dict[int, list[tuple[str, str]]]) -> float:
    """ARI between binary groupings keyed by which components each binary contains.

    Only found components that overlap planted procedures take part, so filler
    code unique to each binary does not split the groups.
    """
    from .evaluation import ari_from_sequences

    planted = {bp for members in truth.values() for bp in members}
    t_sig: dict[str, list[int]] = {b: [] for b in report.binaries}
    for cid, members in sorted(truth.items()):
        for b in sorted({b for b, _ in members}):
            t_sig[b].append(cid)
    p_sig: dict[str, list[int]] = {b: [] for b in report.binaries}
    for comp in report.components:
        if not planted & set(comp.procedures()):
            continue
        for b in comp.instantiations:
            p_sig[b].append(comp.id)
    keys = sorted(report.binaries)
    return ari_from_sequences([tuple(p_sig[b]) for b in keys], [tuple(t_sig[b]) for b in keys])
