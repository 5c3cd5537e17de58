"""Three-layer GCN encoder producing unit-norm 32-dimensional graph embeddings."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateEmbedding, ShapeMismatch
from .graph import DEFAULT_SCHEMA, JsonGraph

HIDDEN = (64, 64)
EMBED_DIM = 32
DEGENERATE_NORM = 1e-9
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


def normalize_adjacency(A: np.ndarray) -> np.ndarray:
    """Symmetric normalisation ``D^-1/2 A D^-1/2``; ``A`` must carry self-loops."""
    A = np.asarray(A, dtype=np.float64)
    d = A.sum(axis=1)
    inv = 1.0 / np.sqrt(d)
    return A * inv[:, None] * inv[None, :]


@dataclass
class EncoderModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    schema_version: int = 1
    frozen: bool = False
    train_config: dict = field(default_factory=dict)

    def __post_init__(self):
        f = self.W1.shape[0]
        shapes = {"W1": (f, HIDDEN[0]), "b1": (HIDDEN[0],), "W2": (HIDDEN[0], HIDDEN[1]),
                  "b2": (HIDDEN[1],), "W3": (HIDDEN[1], EMBED_DIM), "b3": (EMBED_DIM,)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ShapeMismatch(f"{name} has shape {getattr(self, name).shape}, want {shape}")
        if self.frozen:
            self._lock()

    @property
    def n_features(self) -> int:
        return self.W1.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def _lock(self):
        for name in PARAM_NAMES:
            getattr(self, name).setflags(write=False)

    def freeze(self) -> "EncoderModel":
        """Return a frozen copy; weights become read-only."""
        p = {k: v.copy() for k, v in self.params().items()}
        return EncoderModel(**p, schema_version=self.schema_version, frozen=True,
                            train_config=dict(self.train_config))

    def with_params(self, params: dict[str, np.ndarray]) -> "EncoderModel":
        return EncoderModel(**{k: np.array(params[k], dtype=np.float64) for k in PARAM_NAMES},
                            schema_version=self.schema_version, frozen=False,
                            train_config=dict(self.train_config))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"v{self.schema_version}".encode())
        for name in PARAM_NAMES:
            arr = np.ascontiguousarray(getattr(self, name), dtype="<f8")
            h.update(name.encode())
            h.update(arr.tobytes())
        h.update(json.dumps(self.train_config, sort_keys=True).encode())
        return h.hexdigest()[:16]

    # model file

    def to_dict(self) -> dict:
        return {
            "format": "graphcue-encoder/1",
            "schema_version": self.schema_version,
            "dims": {"features": self.n_features, "hidden": list(HIDDEN), "embed": EMBED_DIM},
            "frozen": self.frozen,
            "train_config": self.train_config,
            "fingerprint": self.fingerprint(),
            "weights": {name: getattr(self, name).tolist() for name in PARAM_NAMES},
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, doc: dict) -> "EncoderModel":
        w = {k: np.array(doc["weights"][k], dtype=np.float64) for k in PARAM_NAMES}
        model = cls(**w, schema_version=int(doc["schema_version"]), frozen=False,
                    train_config=dict(doc.get("train_config", {})))
        if doc.get("fingerprint") not in (None, model.fingerprint()):
            raise ShapeMismatch("model file fingerprint does not match its weights")
        return model.freeze() if doc.get("frozen") else model

    @classmethod
    def load(cls, path: str | Path) -> "EncoderModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def init_params(seed: int = 0, schema_version: int = 1,
                n_features: int | None = None) -> EncoderModel:
    """Glorot-uniform weights from ``seed``; zero biases."""
    if n_features is None:
        n_features = DEFAULT_SCHEMA.width
    rng = np.random.default_rng(seed)
    dims = [n_features, *HIDDEN, EMBED_DIM]
    ws = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    return EncoderModel(ws[0], np.zeros(HIDDEN[0]), ws[1], np.zeros(HIDDEN[1]),
                        ws[2], np.zeros(EMBED_DIM), schema_version=schema_version)


@dataclass
class ForwardCache:
    A_hat: np.ndarray
    AX: np.ndarray
    P1: np.ndarray
    H1: np.ndarray
    AH1: np.ndarray
    P2: np.ndarray
    H2: np.ndarray
    AH2: np.ndarray
    z_tilde: np.ndarray
    norm: float
    z: np.ndarray


def _forward(params: dict, X: np.ndarray, A: np.ndarray, case_id=None) -> ForwardCache:
    A_hat = normalize_adjacency(A)
    AX = A_hat @ X
    P1 = AX @ params["W1"] + params["b1"]
    H1 = np.maximum(P1, 0.0)
    AH1 = A_hat @ H1
    P2 = AH1 @ params["W2"] + params["b2"]
    H2 = np.maximum(P2, 0.0)
    AH2 = A_hat @ H2
    H3 = AH2 @ params["W3"] + params["b3"]
    z_tilde = H3.mean(axis=0)
    norm = float(np.linalg.norm(z_tilde))
    if norm < DEGENERATE_NORM:
        raise DegenerateEmbedding(f"pooled embedding norm {norm:.3g} below {DEGENERATE_NORM}",
                                  case_id)
    return ForwardCache(A_hat, AX, P1, H1, AH1, P2, H2, AH2, z_tilde, norm, z_tilde / norm)


def _backward(params: dict, cache: ForwardCache, grad_z: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar w.r.t. every parameter, given ``dL/dz``."""
    z = cache.z
    g_tilde = (grad_z - z * (z @ grad_z)) / cache.norm
    n = cache.A_hat.shape[0]
    dH3 = np.broadcast_to(g_tilde / n, (n, g_tilde.shape[0]))
    grads = {"W3": cache.AH2.T @ dH3, "b3": g_tilde.copy()}
    dP2 = (cache.A_hat.T @ (dH3 @ params["W3"].T)) * (cache.P2 > 0)
    grads["W2"] = cache.AH1.T @ dP2
    grads["b2"] = dP2.sum(axis=0)
    dP1 = (cache.A_hat.T @ (dP2 @ params["W2"].T)) * (cache.P1 > 0)
    grads["W1"] = cache.AX.T @ dP1
    grads["b1"] = dP1.sum(axis=0)
    return grads


def _check_features(model: EncoderModel, g: JsonGraph) -> None:
    if g.X.shape[1] != model.n_features or g.schema_version != model.schema_version:
        raise ShapeMismatch(
            f"graph has {g.X.shape[1]} features (schema v{g.schema_version}); model expects "
            f"{model.n_features} (schema v{model.schema_version})")


def forward_embed(model: EncoderModel, g: JsonGraph) -> np.ndarray:
    """Unit-norm embedding ``z`` of ``g``."""
    _check_features(model, g)
    return _forward(model.params(), g.X, g.A, g.case_id).z


def embed_with_grad_fn(model: EncoderModel, g: JsonGraph):
    """Embedding plus a closure mapping ``dL/dz`` to parameter gradients."""
    _check_features(model, g)
    params = model.params()
    cache = _forward(params, g.X, g.A, g.case_id)
    return cache.z, lambda grad_z: _backward(params, cache, grad_z)


@dataclass(frozen=True)
class Embedding:
    case_id: str
    z: np.ndarray
