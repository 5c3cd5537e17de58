"""Evaluation harness: pass-rate curves, iteration histograms and latency CDFs per group."""

from __future__ import annotations

import csv
import dataclasses
import gc
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus
from .encoder import EncoderModel
from .errors import MissingIndex, MissingModel
from .graph import JsonGraph, build_graph
from .loop import LoopConfig, LoopResult, run_loop
from .retrieval import EmbeddingIndex

logger = logging.getLogger(__name__)

GROUPS: dict[str, frozenset[str]] = {
    "graphcue": frozenset(),
    "no_retrieval": frozenset({"no_retrieval"}),
    "no_structure": frozenset({"no_prompt_structure"}),
}


def cumulative_curve(pass_iterations: list[int | None], T: int) -> list[float]:
    """Fraction of cases passed by iteration ``t`` for ``t = 1..T``."""
    n = len(pass_iterations)
    if n == 0:
        return [0.0] * T
    hits = np.zeros(T + 1)
    for p in pass_iterations:
        if p is not None and 1 <= p <= T:
            hits[p] += 1
    return [float(x) for x in np.cumsum(hits)[1:] / n]


def iteration_histogram(pass_iterations: list[int | None], T: int) -> list[int]:
    """Passing cases counted by the iteration they passed at, index 0 is iteration 1."""
    counts = [0] * T
    for p in pass_iterations:
        if p is not None and 1 <= p <= T:
            counts[p - 1] += 1
    return counts


def percentile(samples, q: float) -> float:
    """Order statistic ``q`` (in percent) of the empirical distribution."""
    if len(samples) == 0:
        return float("nan")
    return float(np.percentile(np.asarray(samples, dtype=np.float64), q, method="inverted_cdf"))


@dataclass
class EvalSummary:
    group: str
    T: int
    pass_iterations: dict[str, int | None] = field(default_factory=dict)
    loop_latency_ms: list[float] = field(default_factory=list)
    iteration_latency_ms: list[float] = field(default_factory=list)

    @property
    def cases(self) -> int:
        return len(self.pass_iterations)

    @property
    def passes(self) -> int:
        return sum(p is not None for p in self.pass_iterations.values())

    @property
    def curve(self) -> list[float]:
        return cumulative_curve(list(self.pass_iterations.values()), self.T)

    @property
    def histogram(self) -> list[int]:
        return iteration_histogram(list(self.pass_iterations.values()), self.T)

    def rate_at(self, t: int) -> float:
        return self.curve[t - 1]

    @property
    def p50(self) -> float:
        return percentile(self.loop_latency_ms, 50)

    @property
    def p95(self) -> float:
        return percentile(self.loop_latency_ms, 95)

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "T": self.T,
            "cases": self.cases,
            "passes": self.passes,
            "curve": self.curve,
            "histogram": self.histogram,
            "latency_ms": {"loop_p50": self.p50, "loop_p95": self.p95,
                           "iteration_p50": percentile(self.iteration_latency_ms, 50),
                           "iteration_p95": percentile(self.iteration_latency_ms, 95)},
            "pass_iterations": dict(sorted(self.pass_iterations.items())),
        }


def summarize(group: str, T: int, results: list[LoopResult]) -> EvalSummary:
    results = sorted(results, key=lambda r: r.case_id)
    return EvalSummary(
        group, T,
        {r.case_id: r.pass_iteration for r in results},
        sorted(r.total_ms for r in results),
        sorted(rec.latency_ms for r in results for rec in r.records),
    )


def write_group_files(summary: EvalSummary, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    g = summary.group

    def dump(name, header, rows):
        path = out_dir / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        return path

    n = len(summary.loop_latency_ms)
    m = len(summary.iteration_latency_ms)
    return [
        dump(f"curve_{g}.csv", ["iteration", "cumulative_pass_rate"],
             [(t, f"{v:.6f}") for t, v in enumerate(summary.curve, start=1)]),
        dump(f"hist_{g}.csv", ["iteration", "count"],
             list(enumerate(summary.histogram, start=1))),
        dump(f"latency_{g}.csv", ["latency_ms", "cdf"],
             [(f"{x:.3f}", f"{(k + 1) / n:.6f}") for k, x in enumerate(summary.loop_latency_ms)]),
        dump(f"iteration_latency_{g}.csv", ["latency_ms", "cdf"],
             [(f"{x:.3f}", f"{(k + 1) / m:.6f}")
              for k, x in enumerate(summary.iteration_latency_ms)]),
    ]


def reference_materials(corpus: Corpus, split: str = "train",
                        graphs: dict[str, JsonGraph] | None = None
                        ) -> dict[str, tuple[JsonGraph, str]]:
    """Graph and validated configuration of every indexed reference case."""
    out = {}
    for e in corpus.split(split):
        if e.case.ground_truth is None:
            continue
        g = graphs[e.case.case_id] if graphs else build_graph(e.case)
        out[e.case.case_id] = (g, e.case.ground_truth)
    return out


def eval_run(corpus: Corpus, model: EncoderModel | None, index: EmbeddingIndex | None,
             groups: dict[str, frozenset[str]] | list[str], loop_config: LoopConfig,
             out_dir: str | Path | None = None, jobs: int = 1, split: str = "validation",
             archive: bool = False) -> dict[str, EvalSummary]:
    """Run the loop on every ``split`` case for each group and write CSV/JSON outputs.

    Every group shares ``loop_config``'s backend seed, so per-case results are paired.
    """
    if model is None:
        raise MissingModel("evaluation needs a trained encoder")
    if index is None:
        raise MissingIndex("evaluation needs an embedding index")
    if not isinstance(groups, dict):
        groups = {name: GROUPS[name] for name in groups}
    cases = sorted(corpus.split(split), key=lambda e: e.case.case_id)
    graphs = {e.case.case_id: build_graph(e.case) for e in corpus.entries}
    refs = reference_materials(corpus, "train", graphs)

    # corpus, graphs, model and index outlive every loop; freezing them keeps full
    # collections from rescanning the caller's heap inside timed loops
    own_freeze = gc.get_freeze_count() == 0
    if own_freeze:
        gc.freeze()
    try:
        summaries = _run_groups(cases, groups, loop_config, index, model, refs, graphs,
                                out_dir, jobs, archive)
    finally:
        if own_freeze:
            gc.unfreeze()

    if out_dir is not None:
        out = Path(out_dir)
        for s in summaries.values():
            write_group_files(s, out)
        doc = {
            "T": loop_config.T,
            "split": split,
            "backend": loop_config.backend.label,
            "seed": loop_config.seed,
            "groups": {name: s.to_dict() for name, s in summaries.items()},
        }
        (out / "summary.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n",
                                          encoding="utf-8")
    return summaries


def _run_groups(cases, groups, loop_config, index, model, refs, graphs, out_dir, jobs,
                archive) -> dict[str, EvalSummary]:
    summaries = {}
    for name, flags in groups.items():
        cfg = dataclasses.replace(loop_config, ablation=frozenset(flags))

        def one(entry, cfg=cfg, name=name):
            run_dir = None
            if archive and out_dir is not None:
                run_dir = Path(out_dir) / "runs" / name / entry.case.case_id
            return run_loop(entry.case, index, model, cfg, refs, run_dir,
                            graphs[entry.case.case_id])

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(one, cases))
        else:
            results = [one(e) for e in cases]
        summaries[name] = summarize(name, cfg.T, results)
        logger.info("group %s: %d/%d passed", name, summaries[name].passes, len(cases))
    return summaries
