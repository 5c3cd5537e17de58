"""Contrastive training of the encoder with edge/node-drop views and InfoNCE."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoder import PARAM_NAMES, EncoderModel, embed_with_grad_fn, forward_embed, init_params
from .errors import BatchTooSmall, CorpusTooSmall, DegenerateEmbedding, ShapeMismatch
from .graph import JsonGraph, pair_key

logger = logging.getLogger(__name__)

LOSS_VARIANTS = ("paper_literal", "nt_xent")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 80
    lr: float = 1e-4
    tau: float = 0.2
    batch_size: int = 32
    p_edge_drop: float = 0.2
    p_node_drop: float = 0.1
    seed: int = 0
    loss_variant: str = "paper_literal"

    def __post_init__(self):
        if not (0 <= self.p_edge_drop < 1 and 0 <= self.p_node_drop < 1):
            raise ValueError("drop probabilities must lie in [0, 1)")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ValueError(f"loss_variant must be one of {LOSS_VARIANTS}")

    def to_dict(self) -> dict:
        return asdict(self)


def augment(g: JsonGraph, p_edge: float, p_node: float, rng: np.random.Generator) -> JsonGraph:
    """Drop each non-self-loop edge w.p. ``p_edge`` and each node w.p. ``p_node``.

    Edges are drawn first, over the upper triangle in node order, then the
    node mask; an all-dropped node mask is redrawn until one node survives.
    """
    n = g.n_nodes
    A = g.A.copy()
    iu, ju = np.nonzero(np.triu(A, k=1))
    if len(iu):
        drop = rng.random(len(iu)) < p_edge
        A[iu[drop], ju[drop]] = 0
        A[ju[drop], iu[drop]] = 0
    keep = rng.random(n) >= p_node
    while not keep.any():
        keep = rng.random(n) >= p_node
    idx = np.flatnonzero(keep)
    A = A[np.ix_(idx, idx)]
    node_ids = [g.node_ids[i] for i in idx]
    pos = {v: k for k, v in enumerate(node_ids)}
    M = {}
    for (u, v), count in g.M.items():
        if u in pos and v in pos and A[pos[u], pos[v]]:
            M[pair_key(node_ids, u, v)] = count
    return JsonGraph(node_ids, g.X[idx].copy(), A, M, g.schema_version, g.case_id)


def info_nce_loss(Z1: np.ndarray, Z2: np.ndarray, tau: float = 0.2,
                  variant: str = "paper_literal") -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and its gradients w.r.t. ``Z1`` and ``Z2``.

    ``paper_literal`` sums the denominator over negatives only (``j != i``);
    ``nt_xent`` also includes the positive pair.
    """
    Z1 = np.asarray(Z1, dtype=np.float64)
    Z2 = np.asarray(Z2, dtype=np.float64)
    if Z1.shape != Z2.shape:
        raise ShapeMismatch(f"views have shapes {Z1.shape} and {Z2.shape}")
    B = Z1.shape[0]
    if B < 2:
        raise BatchTooSmall(f"batch of {B} has no negatives")
    if variant not in LOSS_VARIANTS:
        raise ValueError(f"unknown loss variant {variant!r}")
    S = Z1 @ Z2.T / tau
    mask = np.ones((B, B), dtype=bool)
    if variant == "paper_literal":
        np.fill_diagonal(mask, False)
    logits = np.where(mask, S, -np.inf)
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    denom = e.sum(axis=1, keepdims=True)
    lse = (m + np.log(denom)).ravel()
    loss = float(np.mean(lse - np.diag(S)))
    dS = e / denom / B
    dS[np.arange(B), np.arange(B)] -= 1.0 / B
    g1 = dS @ Z2 / tau
    g2 = dS.T @ Z1 / tau
    return loss, g1, g2


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float) -> tuple[dict[str, np.ndarray], AdamState]:
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ShapeMismatch("parameter, gradient and state keys differ")
    for k in params:
        if np.shape(params[k]) != np.shape(grads[k]) or np.shape(params[k]) != np.shape(state.m[k]):
            raise ShapeMismatch(f"shape mismatch for {k}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = {}, {}, {}
    for k in params:
        g = np.asarray(grads[k], dtype=np.float64)
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_p[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)


def batch_objective(model: EncoderModel, views1: list[JsonGraph], views2: list[JsonGraph],
                    tau: float, variant: str) -> tuple[float, dict[str, np.ndarray]]:
    """Loss of one batch of paired views and its gradient w.r.t. all parameters."""
    z1, back1 = zip(*(embed_with_grad_fn(model, g) for g in views1))
    z2, back2 = zip(*(embed_with_grad_fn(model, g) for g in views2))
    loss, g1, g2 = info_nce_loss(np.stack(z1), np.stack(z2), tau, variant)
    total = {k: np.zeros_like(v) for k, v in model.params().items()}
    # fixed accumulation order keeps runs bit-identical
    for i in range(len(views1)):
        for grads in (back1[i](g1[i]), back2[i](g2[i])):
            for k in PARAM_NAMES:
                total[k] += grads[k]
    return loss, total


@dataclass
class TrainResult:
    model: EncoderModel
    history: list[float] = field(default_factory=list)
    skipped: int = 0


def train(graphs: list[JsonGraph], config: TrainConfig = TrainConfig(),
          init: EncoderModel | None = None) -> TrainResult:
    """Seeded epoch loop; returns the frozen encoder and per-epoch mean loss."""
    if len(graphs) < config.batch_size:
        raise CorpusTooSmall(f"{len(graphs)} graphs for batch size {config.batch_size}")
    model = init if init is not None else init_params(config.seed, graphs[0].schema_version,
                                                      graphs[0].X.shape[1])
    model = model.with_params(model.params())
    model.train_config = config.to_dict()
    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros_like(model.params())
    history, skipped = [], 0
    B = config.batch_size
    for epoch in range(config.epochs):
        order = rng.permutation(len(graphs))
        losses = []
        for start in range(0, len(order), B):
            idx = order[start:start + B]
            views1, views2 = [], []
            for i in idx:
                views1.append(augment(graphs[i], config.p_edge_drop, config.p_node_drop, rng))
                views2.append(augment(graphs[i], config.p_edge_drop, config.p_node_drop, rng))
            if len(views1) < 2:
                continue
            try:
                loss, grads = batch_objective(model, views1, views2, config.tau,
                                              config.loss_variant)
            except DegenerateEmbedding as exc:
                logger.warning("epoch %d: skipped batch (%s)", epoch + 1, exc)
                skipped += 1
                continue
            params, state = adam_step(model.params(), grads, state, config.lr)
            model = model.with_params(params)
            losses.append(loss)
        history.append(float(np.mean(losses)) if losses else float("nan"))
        logger.info("epoch %d mean loss %.6f", epoch + 1, history[-1])
    model.train_config = config.to_dict()
    return TrainResult(model.freeze(), history, skipped)


def positive_alignment(model: EncoderModel, graphs: list[JsonGraph], p_edge: float = 0.2,
                       p_node: float = 0.1, seed: int = 12345) -> float:
    """Mean cosine between two fresh augmented views of each graph."""
    rng = np.random.default_rng(seed)
    sims = []
    for g in graphs:
        a = augment(g, p_edge, p_node, rng)
        b = augment(g, p_edge, p_node, rng)
        sims.append(float(forward_embed(model, a) @ forward_embed(model, b)))
    return float(np.mean(sims))


def write_loss_history(history: list[float], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for k, loss in enumerate(history, start=1):
            w.writerow([k, repr(loss)])
