import json

import pytest

from binfam.cli import main, subseed
from binfam.features import build_features, read_records
from binfam.hierarchy import Hierarchy, HierarchyParams
from binfam.store import CorpusStore

from conftest import make_record


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    lines = [json.loads(line) for line in out.splitlines() if line.strip()]
    return code, lines, err


def write_records(path, records):
    path.write_text("".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture
def corpus(tmp_path, capsys):
    path = tmp_path / "corpus.jsonl"
    code, _, _ = run(capsys, "--seed", 3, "synth", "corpus", "--out", path, "--families", 4, "--per-family", 10)
    assert code == 0
    return path, tmp_path / "corpus.truth.json"


def test_subseed_is_stable_and_distinct():
    assert subseed(42, "lineage") == subseed(42, "lineage")
    assert subseed(42, "lineage") != subseed(42, "components")
    assert subseed(42, "lineage") != subseed(43, "lineage")


def test_ingest_empty_file(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    code, lines, _ = run(capsys, "--store", tmp_path / "s", "ingest", empty)
    assert code == 0
    assert lines[-1] == {"ingested": 0, "skipped": [], "rejected": [], "total": 0}


def test_ingest_skips_duplicates_and_rejects_bad_lines(tmp_path, capsys, caplog):
    rec = make_record("b1", {"p": ["x"]})
    path = write_records(tmp_path / "in.jsonl", [rec, rec])
    with open(path, "a") as fh:
        fh.write("{not json\n")
    code, lines, _ = run(capsys, "--store", tmp_path / "s", "ingest", path)
    assert code == 0
    report = lines[-1]
    assert report["ingested"] == 1 and report["skipped"] == ["b1"] and report["total"] == 1
    assert [r["line"] for r in report["rejected"]] == [3]
    assert "1 duplicate binary ids skipped" in caplog.text
    # ingesting again adds nothing
    code, lines, _ = run(capsys, "--store", tmp_path / "s", "ingest", path)
    assert lines[-1]["ingested"] == 0 and lines[-1]["total"] == 1


def test_missing_input_reports_json_error(tmp_path, capsys):
    code, _, err = run(capsys, "--store", tmp_path / "s", "ingest", tmp_path / "nope.jsonl")
    assert code == 1
    obj = json.loads(err.strip().splitlines()[-1])
    assert obj["command"] == "ingest" and obj["error"] == "CLIError"


def test_locked_store_is_refused(tmp_path, capsys):
    with CorpusStore(tmp_path / "s"):
        code, _, err = run(capsys, "--store", tmp_path / "s", "components")
    assert code == 1 and "locked" in err


def test_single_batch_cluster_equals_bootstrap(tmp_path, capsys, corpus):
    path, _ = corpus
    store = tmp_path / "s"
    run(capsys, "--store", store, "ingest", path)
    code, lines, _ = run(capsys, "--store", store, "cluster", "--batch-size", 1000, "--clusterer", "louvain")
    assert code == 0
    assert lines[-1]["binaries"] == 40
    with open(path) as fh:
        recs = [r for _, r, _ in read_records(fh)]
    params = HierarchyParams(clusterer="louvain")
    h = Hierarchy(params)
    h.incremental_cluster([(r.binary_id, build_features(r)) for r in recs])
    assert (store / "hierarchy.json").read_text() == h.dumps()


def test_cluster_is_deterministic(tmp_path, capsys, corpus):
    path, _ = corpus
    texts = []
    for name in ("a", "b"):
        store = tmp_path / name
        run(capsys, "--store", store, "ingest", path)
        code, _, _ = run(capsys, "--store", store, "cluster", "--batch-size", 15)
        assert code == 0
        texts.append((store / "hierarchy.json").read_text())
    assert texts[0] == texts[1]


def test_eval_against_own_families_is_perfect(tmp_path, capsys, corpus):
    path, _ = corpus
    store = tmp_path / "s"
    run(capsys, "--store", store, "ingest", path)
    run(capsys, "--store", store, "cluster")
    own = tmp_path / "own.json"
    own.write_text(json.dumps(Hierarchy.loads((store / "hierarchy.json").read_text()).families()))
    code, lines, _ = run(capsys, "--store", store, "eval", "--truth", own)
    assert code == 0
    rep = lines[-1]
    assert rep["jaccard"] == rep["purity"] == rep["inverse_purity"] == rep["ari"] == 1.0


def test_synth_cluster_eval_round_trip(tmp_path, capsys, corpus):
    path, truth = corpus
    store = tmp_path / "s"
    run(capsys, "--store", store, "ingest", path)
    code, lines, _ = run(capsys, "--store", store, "cluster", "--clusterer", "louvain", "--batch-size", 20)
    assert code == 0
    code, lines, _ = run(capsys, "--store", store, "eval", "--truth", truth)
    assert code == 0
    assert lines[-1]["ari"] > 0.9
    assert json.loads((store / "reports" / "eval.json").read_text()) == lines[-1]


def test_eval_before_cluster_errors(tmp_path, capsys, corpus):
    path, truth = corpus
    run(capsys, "--store", tmp_path / "s", "ingest", path)
    code, _, err = run(capsys, "--store", tmp_path / "s", "eval", "--truth", truth)
    assert code == 1 and "cluster" in err


def test_lineage_needs_two_binaries(tmp_path, capsys):
    path = write_records(tmp_path / "one.jsonl", [make_record("solo", {"p": ["x"]}, timestamp=5, first_seen=9)])
    run(capsys, "--store", tmp_path / "s", "ingest", path)
    code, _, err = run(capsys, "--store", tmp_path / "s", "lineage", "--ids", "solo")
    assert code == 1
    assert "need >= 2" in err
    code, _, err = run(capsys, "--store", tmp_path / "s", "lineage", "--ids", "solo,ghost")
    assert code == 1 and "ghost" in err


def test_lineage_on_synthetic_ids(tmp_path, capsys):
    path = tmp_path / "lin.jsonl"
    run(capsys, "synth", "lineage", "--out", path, "--n", 5)
    store = tmp_path / "s"
    run(capsys, "--store", store, "ingest", path)
    ids = ",".join(json.loads(line)["binary_id"] for line in path.read_text().splitlines())
    code, lines, _ = run(capsys, "--store", store, "lineage", "--ids", ids, "--restarts", 2, "--samples", 200)
    assert code == 0
    out = lines[-1]
    assert out["restarts_used"] == 2 and len(out["times"]) == 5
    assert (store / "reports" / "lineage.dot").read_text().startswith("digraph")


def test_components_report(tmp_path, capsys):
    path = tmp_path / "comp.jsonl"
    run(capsys, "synth", "components", "--out", path, "--binaries", 30, "--probs", "0.5")
    store = tmp_path / "s"
    run(capsys, "--store", store, "ingest", path)
    code, lines, _ = run(capsys, "--store", store, "components")
    assert code == 0
    assert (store / "reports" / "components.jsonl").exists()
    assert lines[-1] == json.loads((store / "reports" / "components-summary.json").read_text())


def test_manifest_records_explicit_seed(tmp_path, capsys, corpus):
    path, _ = corpus
    store = tmp_path / "s"
    run(capsys, "--store", store, "ingest", path)
    (m,) = CorpusStore(store).manifests()
    obj = json.loads(m.read_text())
    assert obj["argv"][:2] == ["--seed", "42"]
    assert "--store" not in obj["argv"]
    assert list(obj["inputs"]) == [str(path)]
    assert set(obj["outputs"]) == {"index.json"}


def test_replay_reproduces_outputs(tmp_path, capsys, corpus):
    path, truth = corpus
    store = tmp_path / "s"
    steps = [
        ("ingest", path),
        ("cluster", "--batch-size", 15, "--clusterer", "louvain"),
        ("components", "--method", "kmeans", "--k", 5),
        ("eval", "--truth", truth),
    ]
    for step in steps:
        assert run(capsys, "--store", store, *step)[0] == 0
    code, lines, _ = run(capsys, "--store", tmp_path / "copy", "replay", "--from", store)
    assert code == 0
    assert lines[-1] == {"replayed": 4, "mismatches": [], "identical": True}
    for name in ("index.json", "hierarchy.json", "reports/eval.json", "reports/components.jsonl"):
        assert (store / name).read_bytes() == (tmp_path / "copy" / name).read_bytes()


def test_replay_refuses_non_empty_target_and_changed_inputs(tmp_path, capsys, corpus):
    path, _ = corpus
    store = tmp_path / "s"
    run(capsys, "--store", store, "ingest", path)
    code, _, err = run(capsys, "--store", store, "replay", "--from", store)
    assert code == 1 and "empty" in err
    path.write_text(path.read_text() + "\n")
    code, _, err = run(capsys, "--store", tmp_path / "fresh", "replay", "--from", store)
    assert code == 1 and "changed" in err
