import csv
import gc
import json

import pytest

from graphcue.corpus import CorpusSpec, generate_corpus
from graphcue.encoder import init_params
from graphcue.errors import MissingIndex, MissingModel
from graphcue.evaluation import (
    EvalSummary,
    cumulative_curve,
    eval_run,
    iteration_histogram,
    percentile,
    write_group_files,
)
from graphcue.generator import GeneratorBackend
from graphcue.graph import build_graph
from graphcue.loop import LoopConfig
from graphcue.retrieval import build_index


def test_curve_by_hand():
    assert cumulative_curve([1, 2, 2, None], 2) == [0.25, 0.75]
    assert iteration_histogram([1, 2, 2, None], 2) == [1, 2]


def test_all_pass_first_time():
    assert cumulative_curve([1] * 7, 5) == [1.0] * 5
    assert iteration_histogram([1] * 7, 5) == [7, 0, 0, 0, 0]


def test_percentile_order_statistic():
    samples = list(range(1, 101))
    assert percentile(samples, 95) == 95
    assert percentile(samples, 50) == 50
    assert percentile([], 50) != percentile([], 50)  # nan


def test_summary_laws(tmp_path):
    s = EvalSummary("g", 4, {"a": 1, "b": 3, "c": None, "d": 3}, [5.0, 9.0, 12.0, 30.0],
                    [1.0, 2.0, 3.0])
    curve = s.curve
    assert curve == sorted(curve) and curve[-1] == s.passes / s.cases
    assert sum(s.histogram) == s.passes and s.p50 <= s.p95
    paths = write_group_files(s, tmp_path)
    assert [p.name for p in paths] == ["curve_g.csv", "hist_g.csv", "latency_g.csv",
                                       "iteration_latency_g.csv"]
    rows = list(csv.reader(open(tmp_path / "latency_g.csv")))
    assert rows[0] == ["latency_ms", "cdf"]
    xs = [float(r[0]) for r in rows[1:]]
    ps = [float(r[1]) for r in rows[1:]]
    assert xs == sorted(xs) and ps == sorted(ps) and ps[-1] == 1.0


@pytest.fixture(scope="module")
def small():
    corpus = generate_corpus(CorpusSpec(n_cases=16, seed=2))
    model = init_params(0).freeze()
    index = build_index(model, [build_graph(e.case) for e in corpus.split("train")])
    return corpus, model, index


def test_missing_inputs(small):
    corpus, model, index = small
    cfg = LoopConfig(GeneratorBackend.mock_backend())
    with pytest.raises(MissingModel):
        eval_run(corpus, None, index, ["graphcue"], cfg)
    with pytest.raises(MissingIndex):
        eval_run(corpus, model, None, ["graphcue"], cfg)


def test_eval_outputs(small, tmp_path):
    corpus, model, index = small
    cfg = LoopConfig(GeneratorBackend.mock_backend(defect_count=1), T=4)
    out = eval_run(corpus, model, index, ["graphcue", "no_retrieval", "no_structure"], cfg,
                   tmp_path, jobs=2, archive=True)
    n_val = len(corpus.split("validation"))
    for name, s in out.items():
        assert s.cases == n_val and len(s.curve) == 4
        for stem in ("curve", "hist", "latency", "iteration_latency"):
            assert (tmp_path / f"{stem}_{name}.csv").exists()
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert set(doc["groups"]) == set(out) and doc["T"] == 4
    assert len(list((tmp_path / "runs" / "graphcue").iterdir())) == n_val


def test_parallel_matches_sequential(small):
    corpus, model, index = small
    cfg = LoopConfig(GeneratorBackend.mock_backend(defect_count=2), T=5)
    a = eval_run(corpus, model, index, ["graphcue"], cfg, jobs=1)["graphcue"]
    b = eval_run(corpus, model, index, ["graphcue"], cfg, jobs=3)["graphcue"]
    assert a.pass_iterations == b.pass_iterations


def test_collector_state_restored(small):
    corpus, model, index = small
    cfg = LoopConfig(GeneratorBackend.mock_backend(defect_count=1), T=3)
    assert gc.get_freeze_count() == 0
    eval_run(corpus, model, index, ["graphcue"], cfg)
    assert gc.get_freeze_count() == 0
    gc.freeze()
    try:
        eval_run(corpus, model, index, ["graphcue"], cfg)
        assert gc.get_freeze_count() > 0  # a caller's freeze is left in place
    finally:
        gc.unfreeze()
