"""Exact cosine nearest-neighbour index over frozen-encoder embeddings."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import EMBED_DIM, Embedding, EncoderModel, forward_embed
from .errors import DegenerateEmbedding, EmptyIndex, FingerprintMismatch, ModelNotFrozen
from .graph import JsonGraph


@dataclass
class EmbeddingIndex:
    fingerprint: str
    entries: list[Embedding] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def case_ids(self) -> list[str]:
        return [e.case_id for e in self.entries]

    def matrix(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, EMBED_DIM))
        return np.stack([e.z for e in self.entries])

    def to_json(self) -> str:
        doc = {
            "fingerprint": self.fingerprint,
            "dim": EMBED_DIM,
            "entries": [{"case_id": e.case_id, "z": [float(x) for x in e.z]} for e in self.entries],
        }
        return json.dumps(doc, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_json(cls, text: str) -> "EmbeddingIndex":
        doc = json.loads(text)
        entries = [Embedding(e["case_id"], np.array(e["z"], dtype=np.float64))
                   for e in doc["entries"]]
        return cls(doc["fingerprint"], entries)

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingIndex":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def build_index(model: EncoderModel, references: list[JsonGraph]) -> EmbeddingIndex:
    if not model.frozen:
        raise ModelNotFrozen("index requires a frozen encoder")
    entries, seen = [], set()
    for k, g in enumerate(references):
        cid = g.case_id if g.case_id is not None else f"ref-{k}"
        if cid in seen:
            raise ValueError(f"duplicate reference case_id {cid!r}")
        seen.add(cid)
        try:
            entries.append(Embedding(cid, forward_embed(model, g)))
        except DegenerateEmbedding as exc:
            raise DegenerateEmbedding("reference embedding is degenerate", cid) from exc
    return EmbeddingIndex(model.fingerprint(), entries)


def query_nearest(index: EmbeddingIndex, query: JsonGraph, model: EncoderModel,
                  k: int = 1) -> tuple[str, float] | list[tuple[str, float]]:
    """Best reference by inner product; ties go to the smaller case_id.

    Returns one ``(case_id, similarity)`` pair for ``k=1`` and a list otherwise.
    """
    if not index.entries:
        raise EmptyIndex("index has no entries")
    if model.fingerprint() != index.fingerprint:
        raise FingerprintMismatch(
            f"model {model.fingerprint()} did not build index {index.fingerprint}")
    z = forward_embed(model, query)
    sims = np.clip(index.matrix() @ z, -1.0, 1.0)
    ranked = sorted(zip(index.case_ids, sims.tolist()), key=lambda p: (-p[1], p[0]))
    return ranked[0] if k == 1 else ranked[:k]


def similarity_matrix(index: EmbeddingIndex, labels: dict[str, str] | None = None
                      ) -> tuple[np.ndarray, list[str]]:
    """Pairwise cosines, rows grouped by label (then case_id) when labels are given."""
    if not index.entries:
        raise EmptyIndex("index has no entries")
    order = list(range(len(index.entries)))
    if labels is not None:
        order.sort(key=lambda i: (labels.get(index.entries[i].case_id, ""),
                                  index.entries[i].case_id))
    Z = index.matrix()[order]
    S = np.clip(Z @ Z.T, -1.0, 1.0)
    S = (S + S.T) / 2.0
    np.fill_diagonal(S, 1.0)
    return S, [index.entries[i].case_id for i in order]


def block_contrast(S: np.ndarray, ids: list[str], labels: dict[str, str]) -> tuple[float, float]:
    """Mean intra-label and inter-label similarity (diagonal excluded)."""
    lab = np.array([labels[c] for c in ids])
    same = lab[:, None] == lab[None, :]
    off = ~np.eye(len(ids), dtype=bool)
    intra = S[same & off]
    inter = S[~same]
    return (float(intra.mean()) if intra.size else float("nan"),
            float(inter.mean()) if inter.size else float("nan"))


def write_heatmap(S: np.ndarray, ids: list[str], out_dir: str | Path,
                  stem: str = "similarity") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    matrix_path = out_dir / f"{stem}.csv"
    with open(matrix_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in S:
            w.writerow([f"{x:.6f}" for x in row])
    order_path = out_dir / "order.txt"
    order_path.write_text("\n".join(ids) + "\n", encoding="utf-8")
    return matrix_path, order_path
