"""Verify-in-loop orchestration: retrieve, compose, generate, verify, refine."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import EncoderModel
from .errors import GeneratorError, IterationExists, StorageError
from .generator import CandidateConfig, GeneratorBackend, generate
from .graph import JsonGraph, build_graph
from .prompt import KNOWLEDGE_V1, Prompt, compose_prompt, initial_constraints, refine_constraints
from .retrieval import EmbeddingIndex, query_nearest
from .topology import TopologyCase
from .verifier.checks import CHECK_ORDER, CheckResult, Failure, VerifyReport, verify
from .verifier.network import VerifyLimits, provision

logger = logging.getLogger(__name__)

ABLATIONS = frozenset({"no_retrieval", "no_prompt_structure"})
OUTCOMES = ("pass", "budget_exhausted", "wall_clock_exceeded")


@dataclass(frozen=True)
class LoopConfig:
    backend: GeneratorBackend
    T: int = 20
    wall_clock_limit: float = 300.0
    ablation: frozenset[str] = frozenset()
    seed: int = 0
    knowledge: str = KNOWLEDGE_V1
    limits: VerifyLimits = VerifyLimits()

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("budget T must be at least 1")
        if self.wall_clock_limit <= 0:
            raise ValueError("wall_clock_limit must be positive")
        object.__setattr__(self, "ablation", frozenset(self.ablation))
        bad = self.ablation - ABLATIONS
        if bad:
            raise ValueError(f"unknown ablation flags {sorted(bad)}")


@dataclass
class IterationRecord:
    iteration: int
    prompt: str
    candidate: CandidateConfig
    report: VerifyReport
    latency_ms: float


@dataclass
class LoopResult:
    case_id: str
    outcome: str
    iterations_used: int
    pass_iteration: int | None
    records: list[IterationRecord] = field(default_factory=list)
    retrieved: str | None = None
    total_ms: float = 0.0

    @property
    def best_index(self) -> int | None:
        if not self.records:
            return None
        counts = [r.report.failure_count() for r in self.records]
        return counts.index(min(counts))

    @property
    def best_attempt(self) -> CandidateConfig | None:
        k = self.best_index
        return None if k is None else self.records[k].candidate

    @property
    def final_report(self) -> VerifyReport | None:
        return self.records[-1].report if self.records else None

    def to_dict(self, include_latency: bool = True) -> dict:
        recs = []
        for r in self.records:
            item = {"iteration": r.iteration, "b": r.report.b,
                    "failures": r.report.failure_count(),
                    "categories": sorted({f.category for f in r.report.failures})}
            if include_latency:
                item["latency_ms"] = round(r.latency_ms, 3)
            recs.append(item)
        best = self.best_index
        out = {
            "case_id": self.case_id,
            "outcome": self.outcome,
            "iterations_used": self.iterations_used,
            "pass_iteration": self.pass_iteration,
            "best_iteration": None if best is None else self.records[best].iteration,
            "retrieved": self.retrieved,
            "records": recs,
        }
        if include_latency:
            out["total_ms"] = round(self.total_ms, 3)
        return out


def archive_attempt(run_dir: str | Path, iteration: int, prompt: Prompt | str,
                    candidate: CandidateConfig | str, report: VerifyReport) -> list[Path]:
    """Write ``iter_<t>/{prompt.txt,candidate.conf,report.json}``; never overwrites."""
    d = Path(run_dir) / f"iter_{iteration}"
    try:
        d.parent.mkdir(parents=True, exist_ok=True)
        d.mkdir()
    except FileExistsError:
        raise IterationExists(f"{d} already archived") from None
    except OSError as exc:
        raise StorageError(f"cannot create {d}: {exc}") from exc
    text = prompt.rendered if isinstance(prompt, Prompt) else str(prompt)
    body = candidate.text if isinstance(candidate, CandidateConfig) else str(candidate)
    files = [(d / "prompt.txt", text), (d / "candidate.conf", body),
             (d / "report.json", report.to_json(include_elapsed=False))]
    try:
        for path, content in files:
            with open(path, "x", encoding="utf-8") as fh:
                fh.write(content)
    except OSError as exc:
        raise StorageError(f"cannot write under {d}: {exc}") from exc
    return [p for p, _ in files]


def generator_failure_report(exc: Exception, case: TopologyCase, seed: int) -> VerifyReport:
    return VerifyReport(0, [CheckResult(n, "skipped") for n in CHECK_ORDER],
                        [Failure("syntax", None, None, "a candidate configuration",
                                 f"generator error: {type(exc).__name__}: {exc}")],
                        [f"generator: {exc}"], 0.0, seed, case.case_id)


def run_loop(case: TopologyCase, index: EmbeddingIndex | None, model: EncoderModel | None,
             config: LoopConfig, references: dict[str, tuple[JsonGraph, str]] | None = None,
             run_dir: str | Path | None = None, g: JsonGraph | None = None) -> LoopResult:
    """Iterate until the verifier passes, the budget ``T`` is spent, or time runs out.

    ``references`` maps indexed case ids to their graph and validated config.
    """
    t_start = time.perf_counter()
    g = g if g is not None else build_graph(case)
    retrieved, retrieved_id = None, None
    if "no_retrieval" not in config.ablation:
        if index is None or model is None or references is None:
            raise ValueError("retrieval needs an index, a model and reference materials")
        retrieved_id, _ = query_nearest(index, g, model)
        retrieved = references[retrieved_id]
    structured = "no_prompt_structure" not in config.ablation
    session = provision(g, case, config.seed, config.limits)
    constraints = initial_constraints(case, g)
    records: list[IterationRecord] = []
    outcome, pass_at = "budget_exhausted", None
    # S, R and K stay fixed across iterations; only C changes
    template = compose_prompt(g, retrieved, config.knowledge, [], structured)

    for t in range(1, config.T + 1):
        prompt = dataclasses.replace(template, constraints=list(constraints))
        t0 = time.perf_counter()
        try:
            cand = generate(config.backend, prompt, t)
            report = verify(g, case, cand.text, config.seed, config.limits, session)
        except GeneratorError as exc:
            logger.warning("%s iteration %d: %s", case.case_id, t, exc)
            cand = CandidateConfig("", config.backend.label, 0.0, t, {"error": str(exc)})
            report = generator_failure_report(exc, case, config.seed)
        latency = (time.perf_counter() - t0) * 1000.0
        records.append(IterationRecord(t, prompt.rendered, cand, report, latency))
        if run_dir is not None:
            archive_attempt(run_dir, t, prompt, cand, report)
        if report.b == 1:
            outcome, pass_at = "pass", t
            break
        if t == config.T:
            break
        if time.perf_counter() - t_start > config.wall_clock_limit:
            outcome = "wall_clock_exceeded"
            break
        constraints = refine_constraints(constraints, report, t, case.case_id)

    result = LoopResult(case.case_id, outcome, len(records), pass_at, records, retrieved_id,
                        (time.perf_counter() - t_start) * 1000.0)
    if run_dir is not None:
        path = Path(run_dir) / "result.json"
        try:
            path.write_text(json.dumps(result.to_dict(), sort_keys=True, indent=1) + "\n",
                            encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot write {path}: {exc}") from exc
    return result
