"""Command-line interface.

Every command works on one store directory (``--store``) and records a
manifest of its arguments, seed, input digests and output digests, so a store
can be rebuilt with ``binfam replay``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .components import DEFAULT_K, METHODS, identify_components
from .evaluation import clustering_report
from .features import build_features, read_records
from .hierarchy import CLUSTERERS, Hierarchy, HierarchyParams, batches
from .lineage import (
    InferenceConfig,
    LineageError,
    LineagePriors,
    MCMCConfig,
    TimeEvidence,
    generate_synthetic_lineage,
    infer_lineage,
)
from .similarity import ThetaKind
from .store import CorpusStore, StoreError, canonical_json, digest_file
from .synthetic import generate_planted_components, generate_planted_corpus

log = logging.getLogger("binfam")

DEFAULT_SEED = 42
DEFAULT_STORE = "binfam-store"


class CLIError(Exception):
    pass


def subseed(seed: int, name: str) -> int:
    """Independent 32-bit seed for one subsystem, derived from the master seed."""
    tag = int.from_bytes(name.encode("utf-8"), "little")
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def _emit(obj) -> None:
    sys.stdout.write(canonical_json(obj))


# ---------------------------------------------------------------------------- commands
# Each command returns (inputs, outputs): input file paths to digest and
# store-relative output paths whose digests go into the manifest.


def cmd_ingest(args, store: CorpusStore):
    path = Path(args.features)
    if not path.exists():
        raise CLIError(f"no such file: {path}")
    ingested, skipped, rejected = 0, [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, rec, err in read_records(fh):
            if err is not None:
                rejected.append({"line": lineno, "error": err})
                log.warning("line %d rejected: %s", lineno, err)
                continue
            if store.add(rec, build_features(rec)):
                ingested += 1
            else:
                skipped.append(rec.binary_id)
                log.info("line %d: duplicate binary_id %r skipped", lineno, rec.binary_id)
    if skipped:
        log.warning("%d duplicate binary ids skipped", len(skipped))
    store.commit()
    _emit({"ingested": ingested, "skipped": skipped, "rejected": rejected, "total": len(store.order)})
    return [path], ["index.json"]


def _params_from_args(args) -> HierarchyParams:
    return HierarchyParams(
        d_r=args.d_r,
        tau=args.tau,
        lam=args.lam,
        theta_kind=ThetaKind(args.theta),
        clusterer=args.clusterer,
    )


def cmd_cluster(args, store: CorpusStore):
    params = _params_from_args(args)
    h = store.load_hierarchy()
    if h is None:
        h = Hierarchy(params)
    elif h.params != params:
        log.warning("hierarchy parameters replaced by the ones given on the command line")
        h.params = params
    pending = [b for b in store.order if b not in h.binaries]
    if args.batch_size < 1:
        raise CLIError("--batch-size must be >= 1")
    for i, chunk in enumerate(batches(pending, args.batch_size)):
        report = h.incremental_cluster([(b, store.features(b)) for b in chunk])
        _emit({"batch": i, "size": len(chunk), **report.to_json()})
    h.validate()
    store.save_hierarchy(h)
    _emit({"binaries": len(h), "families": len(h.leaf_exemplars()), "max_depth": h.max_depth()})
    return [], ["hierarchy.json"]


def cmd_components(args, store: CorpusStore):
    records = [store.record(b) for b in store.order]
    report = identify_components(records, method=args.method, k=args.k, seed=subseed(args.seed, "components"))
    store.write_report("components.jsonl", report.to_jsonl())
    store.write_report("components-summary.json", canonical_json(report.summary()))
    _emit(report.summary())
    return [], ["reports/components.jsonl", "reports/components-summary.json"]


def _lineage_ids(args, store: CorpusStore) -> list[str]:
    if args.ids:
        ids = sorted({s.strip() for s in args.ids.split(",") if s.strip()})
        for b in ids:
            if b not in store:
                raise CLIError(f"unknown binary {b!r}")
        return ids
    h = store.load_hierarchy()
    if h is None:
        raise CLIError("no hierarchy yet; run cluster first or pass --ids")
    if args.family not in h.nodes:
        raise CLIError(f"unknown exemplar {args.family}")
    node = h.nodes[args.family]
    if not node.binaries:
        raise CLIError(f"exemplar {args.family} is not a family (leaf exemplar)")
    return sorted(node.binaries)


def cmd_lineage(args, store: CorpusStore):
    ids = _lineage_ids(args, store)
    if len(ids) < 2:
        raise LineageError(f"need >= 2 binaries for a lineage, got {len(ids)}")
    recs = {b: store.record(b) for b in ids}
    seen = [v for r in recs.values() for v in (r.timestamp, r.first_seen) if v is not None]
    t_min = args.t_min if args.t_min is not None else (min(seen) if seen else 0)
    t_max = args.t_max if args.t_max is not None else (max(seen) if seen else 1)
    ev = TimeEvidence(
        {b: r.timestamp for b, r in recs.items()},
        {b: r.first_seen for b, r in recs.items()},
        t_min,
        t_max,
    )
    seed = subseed(args.seed, "lineage")
    cfg = InferenceConfig(restarts=args.restarts, seed=seed, mcmc=MCMCConfig(samples=args.samples, seed=seed))
    graph = infer_lineage({b: store.features(b) for b in ids}, ev, LineagePriors(), cfg)
    store.write_report("lineage.json", canonical_json(graph.to_json()))
    store.write_report("lineage.dot", graph.to_dot())
    _emit(graph.to_json())
    return [], ["reports/lineage.json", "reports/lineage.dot"]


def cmd_eval(args, store: CorpusStore):
    path = Path(args.truth)
    if not path.exists():
        raise CLIError(f"no such file: {path}")
    truth = json.loads(path.read_text(encoding="utf-8"))
    h = store.load_hierarchy()
    if h is None:
        raise CLIError("no hierarchy yet; run cluster first")
    pred = h.families()
    missing = sorted(set(truth) - set(pred))
    if missing:
        raise CLIError(f"{len(missing)} labelled binaries are not clustered, e.g. {missing[0]!r}")
    pred = {b: pred[b] for b in truth}
    report = clustering_report(pred, truth)
    store.write_report("eval.json", canonical_json(report))
    _emit(report)
    return [path], ["reports/eval.json"]


def _write_jsonl(path: Path, records) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def cmd_synth(args, store: CorpusStore | None):
    out = Path(args.out)
    truth_path = Path(args.truth_out) if args.truth_out else out.with_suffix(".truth.json")
    seed = subseed(args.seed, f"synth-{args.kind}")
    if args.kind == "corpus":
        records, truth = generate_planted_corpus(args.families, args.per_family, args.mutation, seed=seed)
        truth_obj = {b: truth[b] for b in sorted(truth)}
    elif args.kind == "components":
        probs = [float(p) for p in args.probs.split(",")]
        planted = generate_planted_components(
            args.binaries, args.components, probs if len(probs) > 1 else probs[0], seed=seed, mutation_rate=args.mutation
        )
        records = planted.records
        truth_obj = {str(c): [list(bp) for bp in m] for c, m in planted.members.items()}
    else:
        syn = generate_synthetic_lineage(args.n, seed=seed, obfuscation=args.obfuscation, mutation_rate=args.mutation)
        records = syn.records
        truth_obj = syn.truth.to_json()
    _write_jsonl(out, records)
    truth_path.write_text(canonical_json(truth_obj), encoding="utf-8")
    _emit({"records": len(records), "out": str(out), "truth": str(truth_path)})
    return [], []


def cmd_replay(args, _store):
    """Re-run every manifest of ``--from`` into a fresh store and compare outputs."""
    src = CorpusStore(args.source)
    manifests = src.manifests()
    if not manifests:
        raise CLIError(f"no manifests in {args.source}")
    dest = Path(args.store)
    if dest.exists() and any(dest.iterdir()):
        raise CLIError(f"replay target {dest} must be empty")
    mismatches = []
    for mpath in manifests:
        m = json.loads(mpath.read_text(encoding="utf-8"))
        for name, d in m["inputs"].items():
            if not Path(name).exists() or digest_file(name) != d:
                raise CLIError(f"input {name} changed since {mpath.name}")
        argv = ["--store", str(dest), *m["argv"]]
        code = main(argv, _quiet=True)
        if code != 0:
            raise CLIError(f"replay of {mpath.name} failed with exit code {code}")
        got = CorpusStore(dest).output_digests(list(m["outputs"]))
        for name, d in m["outputs"].items():
            if got.get(name) != d:
                mismatches.append({"manifest": mpath.name, "output": name})
    _emit({"replayed": len(manifests), "mismatches": mismatches, "identical": not mismatches})
    if mismatches:
        raise CLIError(f"{len(mismatches)} outputs differ from the recorded run")
    return None


# ---------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="binfam", description="Malware family hierarchy, components and lineage.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--store", default=DEFAULT_STORE, help="store directory (default: %(default)s)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="master random seed (default: %(default)s)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="add binaries from a JSON Lines feature file")
    s.add_argument("features")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("cluster", help="cluster not-yet-clustered binaries in batches")
    s.add_argument("--batch-size", type=int, default=1000)
    s.add_argument("--d-r", dest="d_r", type=int, default=4)
    s.add_argument("--tau", type=float, default=0.15)
    s.add_argument("--lambda", dest="lam", type=float, default=1.5)
    s.add_argument("--theta", choices=[t.value for t in ThetaKind], default=ThetaKind.WEIGHTED_AVERAGE.value)
    s.add_argument("--clusterer", choices=CLUSTERERS, default="nj")
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("components", help="identify shared components across the corpus")
    s.add_argument("--method", choices=METHODS, default="louvain")
    s.add_argument("--k", type=int, default=DEFAULT_K)
    s.set_defaults(func=cmd_components)

    s = sub.add_parser("lineage", help="infer the lineage of a family or an explicit id list")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--family", type=int, help="leaf exemplar id")
    g.add_argument("--ids", help="comma-separated binary ids")
    s.add_argument("--restarts", type=int, default=10)
    s.add_argument("--samples", type=int, default=1000, help="MCMC samples per binary")
    s.add_argument("--t-min", type=int, default=None)
    s.add_argument("--t-max", type=int, default=None)
    s.set_defaults(func=cmd_lineage)

    s = sub.add_parser("eval", help="score the hierarchy's families against truth labels")
    s.add_argument("--truth", required=True, help="JSON object binary id -> label")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="write a synthetic corpus and its ground truth")
    s.add_argument("kind", choices=("corpus", "components", "lineage"))
    s.add_argument("--out", required=True, help="output JSON Lines file")
    s.add_argument("--truth-out", default=None)
    s.add_argument("--families", type=int, default=8)
    s.add_argument("--per-family", type=int, default=125)
    s.add_argument("--mutation", type=float, default=0.1)
    s.add_argument("--binaries", type=int, default=20)
    s.add_argument("--components", type=int, default=4)
    s.add_argument("--probs", default="0.2,0.3,0.5,0.6")
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--obfuscation", type=float, default=0.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("replay", help="rebuild a store from another store's manifests and compare")
    s.add_argument("--from", dest="source", required=True, help="store whose manifests to replay")
    s.set_defaults(func=cmd_replay)
    return p


def _error_line(command: str | None, exc: Exception) -> str:
    return json.dumps({"error": type(exc).__name__, "command": command, "message": str(exc)}, sort_keys=True)


def main(argv: list[str] | None = None, _quiet: bool = False) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    stdout = sys.stdout
    if _quiet:
        sys.stdout = open(os.devnull, "w")
    try:
        if args.command in ("synth", "replay"):
            args.func(args, None)
            return 0
        with CorpusStore(args.store) as store:
            inputs, outputs = args.func(args, store)
            manifest = {
                "command": args.command,
                "argv": _manifest_argv(argv),
                "seed": args.seed,
                "inputs": {str(p): digest_file(p) for p in inputs},
                "outputs": store.output_digests(outputs),
            }
            store.write_manifest(args.command, manifest)
        return 0
    except (CLIError, StoreError, LineageError, ValueError, NotImplementedError, OSError) as exc:
        sys.stderr.write(_error_line(args.command, exc) + "\n")
        return 1
    finally:
        if _quiet:
            sys.stdout.close()
            sys.stdout = stdout


def _manifest_argv(argv: list[str]) -> list[str]:
    """Arguments with ``--store`` removed and the seed made explicit."""
    out, skip = [], False
    for i, a in enumerate(argv):
        if skip:
            skip = False
            continue
        if a == "--store":
            skip = True
            continue
        if a.startswith("--store="):
            continue
        out.append(a)
    if not any(a == "--seed" or a.startswith("--seed=") for a in out):
        out = ["--seed", str(DEFAULT_SEED), *out]
    return out


if __name__ == "__main__":
    sys.exit(main())
