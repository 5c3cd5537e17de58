"""Command-line entry points: ``graphcue <subcommand> ...``.

Exit status is 0 on success, 1 on a domain error (including a failing
verification) and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .corpus import CorpusSpec, generate_corpus, load_corpus, write_corpus
from .encoder import EncoderModel, init_params
from .errors import GraphCueError, MissingIndex, MissingModel
from .evaluation import GROUPS, eval_run, reference_materials
from .generator import GeneratorBackend
from .graph import build_graph, deserialize_graph, serialize_graph
from .loop import LoopConfig, run_loop
from .retrieval import EmbeddingIndex, build_index, query_nearest, similarity_matrix, write_heatmap
from .topology import parse_case
from .trainer import TrainConfig, train, write_loss_history
from .verifier.checks import verify

logger = logging.getLogger("graphcue")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_model(path) -> EncoderModel:
    if not path or not Path(path).exists():
        raise MissingModel(f"model file {path!r} not found")
    return EncoderModel.load(path)


def _load_index(path) -> EmbeddingIndex:
    if not path or not Path(path).exists():
        raise MissingIndex(f"index file {path!r} not found")
    return EmbeddingIndex.load(path)


def _read_graph_or_case(path):
    """Return ``(graph, case or None)`` from a graph file or a case file."""
    raw = Path(path).read_bytes()
    doc = json.loads(raw)
    if isinstance(doc, dict) and "devices" in doc:
        case = parse_case(raw)
        return build_graph(case), case
    return deserialize_graph(raw.decode("utf-8")), None


def _backend(args) -> GeneratorBackend:
    if args.backend == "remote":
        return GeneratorBackend.remote_backend(timeout=args.timeout, provider=args.provider)
    return GeneratorBackend.mock_backend(seed=args.seed, defect_count=args.defects,
                                         defects_fixed_per_round=args.fixed_per_round)


# subcommands


def cmd_parse(args) -> int:
    case = parse_case(Path(args.case).read_bytes())
    for w in case.warnings:
        logger.warning(w)
    _write(serialize_graph(build_graph(case)) + "\n", args.out)
    return 0


def cmd_corpus(args) -> int:
    spec = CorpusSpec(n_cases=args.n_cases, seed=args.seed)
    corpus = generate_corpus(spec)
    write_corpus(corpus, args.out)
    print(f"wrote {len(corpus.entries)} cases to {args.out}")
    return 0


def cmd_train(args) -> int:
    corpus = load_corpus(args.corpus)
    graphs = [build_graph(e.case) for e in corpus.split(args.split)]
    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, tau=args.tau, batch_size=args.batch_size,
                      p_edge_drop=args.p_edge_drop, p_node_drop=args.p_node_drop,
                      seed=args.seed, loss_variant=args.loss_variant)
    if args.epochs == 0:
        model = init_params(args.seed, n_features=graphs[0].X.shape[1] if graphs else None)
        model.train_config = cfg.to_dict()
        model, history = model.freeze(), []
    else:
        result = train(graphs, cfg)
        model, history = result.model, result.history
    model.save(args.out)
    if args.history:
        write_loss_history(history, args.history)
    print(f"model {model.fingerprint()} written to {args.out}")
    return 0


def cmd_embed(args) -> int:
    model = _load_model(args.model)
    corpus = load_corpus(args.corpus)
    entries = corpus.split(args.split)
    index = build_index(model, [build_graph(e.case) for e in entries])
    index.save(args.out)
    if args.heatmap:
        S, ids = similarity_matrix(index, corpus.labels())
        write_heatmap(S, ids, args.heatmap)
    print(f"indexed {len(index)} references into {args.out}")
    return 0


def cmd_retrieve(args) -> int:
    model = _load_model(args.model)
    index = _load_index(args.index)
    g, _ = _read_graph_or_case(args.graph)
    ranked = query_nearest(index, g, model, k=max(args.k, 2))[:args.k]
    print(json.dumps([{"case_id": c, "similarity": round(s, 6)} for c, s in ranked]))
    return 0


def cmd_verify(args) -> int:
    g, case = _read_graph_or_case(args.graph)
    if args.case:
        case = parse_case(Path(args.case).read_bytes())
    if case is None:
        raise UsageError("verify needs a case: pass a case file as --graph or add --case")
    report = verify(g, case, Path(args.config).read_text(encoding="utf-8"), args.seed)
    _write(report.to_json(include_elapsed=not args.stable), args.out)
    return 0 if report.b == 1 else 1


def cmd_loop(args) -> int:
    case = parse_case(Path(args.case).read_bytes())
    ablation = set(args.ablation or [])
    model = index = refs = None
    if "no_retrieval" not in ablation:
        model = _load_model(args.model)
        index = _load_index(args.index)
        if not args.corpus:
            raise UsageError("retrieval needs --corpus for reference configurations")
        refs = reference_materials(load_corpus(args.corpus))
    cfg = LoopConfig(_backend(args), T=args.T, wall_clock_limit=args.wall_clock,
                     ablation=frozenset(ablation), seed=args.seed)
    result = run_loop(case, index, model, cfg, refs, args.run_dir)
    print(json.dumps(result.to_dict(), sort_keys=True))
    return 0 if result.outcome == "pass" else 1


def cmd_eval(args) -> int:
    corpus = load_corpus(args.corpus)
    model = _load_model(args.model)
    index = _load_index(args.index)
    unknown = set(args.groups) - set(GROUPS)
    if unknown:
        raise UsageError(f"unknown groups {sorted(unknown)}; choose from {sorted(GROUPS)}")
    cfg = LoopConfig(_backend(args), T=args.T, wall_clock_limit=args.wall_clock, seed=args.seed)
    summaries = eval_run(corpus, model, index, args.groups, cfg, args.out, jobs=args.jobs,
                         archive=args.archive)
    for name, s in summaries.items():
        print(f"{name}: pass@5={s.rate_at(min(5, s.T)):.3f} pass@{s.T}={s.curve[-1]:.3f} "
              f"p50={s.p50:.1f}ms p95={s.p95:.1f}ms")
    return 0


def _loop_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--T", type=int, default=20, help="iteration budget (default 20)")
    p.add_argument("--wall-clock", type=float, default=300.0, help="seconds per case")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", choices=("mock", "remote"), default="mock")
    p.add_argument("--defects", type=int, default=3, help="mock: injected defects")
    p.add_argument("--fixed-per-round", type=int, default=1, help="mock: repairs per round")
    p.add_argument("--provider", default="generic", help="remote: response adapter")
    p.add_argument("--timeout", type=float, default=60.0, help="remote: seconds per request")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="graphcue", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("parse", help="topology case JSON -> canonical graph JSON")
    p.add_argument("case")
    p.add_argument("--out")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("corpus", help="generate and write a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-cases", type=int, default=250)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("train", help="contrastive encoder training")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--epochs", type=int, default=80)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--tau", type=float, default=0.2)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--p-edge-drop", type=float, default=0.2)
    p.add_argument("--p-node-drop", type=float, default=0.1)
    p.add_argument("--loss-variant", choices=("paper_literal", "nt_xent"), default="paper_literal")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--history", help="CSV of per-epoch mean loss")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="build the reference index from a corpus split")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--heatmap", help="directory for similarity.csv and order.txt")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("retrieve", help="nearest references for a graph or case")
    p.add_argument("--model", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--k", type=int, default=1)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("verify", help="check a candidate configuration")
    p.add_argument("--graph", required=True, help="graph JSON, or a case JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--case", help="case JSON when --graph is a graph file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--stable", action="store_true", help="omit elapsed_ms from the report")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("loop", help="run the verify-in-loop agent on one case")
    p.add_argument("--case", required=True)
    p.add_argument("--model")
    p.add_argument("--index")
    p.add_argument("--corpus", help="corpus holding the indexed references")
    p.add_argument("--run-dir")
    p.add_argument("--ablation", action="append", choices=("no_retrieval", "no_prompt_structure"))
    _loop_flags(p)
    p.set_defaults(func=cmd_loop)

    p = sub.add_parser("eval", help="paired evaluation over the validation split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--groups", nargs="+", default=list(GROUPS))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--archive", action="store_true", help="keep per-iteration artifacts")
    _loop_flags(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"graphcue {args.command}: {exc}", file=sys.stderr)
        return 2
    except (GraphCueError, ValueError, OSError) as exc:
        print(f"graphcue {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
