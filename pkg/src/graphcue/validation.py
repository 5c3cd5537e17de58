"""Input coercion and validation shared by the estimator wrappers and the CLI."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .graph import JsonGraph, build_graph, graph_from_dict
from .topology import TopologyCase, parse_case


def as_graph(obj) -> JsonGraph:
    """Coerce a graph, a case, their dict forms, JSON text or a file path to a graph."""
    if isinstance(obj, JsonGraph):
        obj.validate()
        return obj
    if isinstance(obj, TopologyCase):
        return build_graph(obj)
    if isinstance(obj, Path):
        obj = obj.read_text(encoding="utf-8")
    if isinstance(obj, (str, bytes)):
        obj = json.loads(obj)
    if isinstance(obj, dict):
        if "devices" in obj:
            return build_graph(parse_case(json.dumps(obj)))
        return graph_from_dict(obj)
    raise TypeError(f"cannot interpret {type(obj).__name__} as a topology graph")


def check_graphs(X, min_graphs: int = 1) -> list[JsonGraph]:
    """Validated list of graphs sharing one feature width."""
    if isinstance(X, (JsonGraph, TopologyCase, dict, str, bytes, Path)):
        raise TypeError("expected a sequence of graphs, got a single graph")
    graphs = [as_graph(x) for x in X]
    if len(graphs) < min_graphs:
        raise ValueError(f"need at least {min_graphs} graphs, got {len(graphs)}")
    widths = {g.X.shape[1] for g in graphs}
    if len(widths) > 1:
        raise ValueError(f"graphs disagree on feature width: {sorted(widths)}")
    return graphs


def check_labels(y, n: int) -> list[str]:
    labels = [str(v) for v in np.asarray(y, dtype=object).ravel()]
    if len(labels) != n:
        raise ValueError(f"{len(labels)} labels for {n} graphs")
    return labels


def check_embeddings(Z, dim: int | None = None) -> np.ndarray:
    """2-D finite float array, optionally of a fixed width."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {Z.shape}")
    if dim is not None and Z.shape[1] != dim:
        raise ValueError(f"expected {dim} columns, got {Z.shape[1]}")
    if not np.isfinite(Z).all():
        raise ValueError("embeddings contain NaN or infinity")
    return Z
