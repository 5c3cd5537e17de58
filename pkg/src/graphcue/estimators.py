"""scikit-learn style wrappers around the encoder, trainer and retrieval index."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .encoder import EncoderModel, forward_embed
from .retrieval import build_index, query_nearest
from .trainer import TrainConfig, train
from .validation import check_graphs, check_labels


class GraphEncoder(TransformerMixin, BaseEstimator):
    """Contrastively trained GCN; ``transform`` maps graphs to unit rows of width 32."""

    def __init__(self, epochs=80, lr=1e-4, tau=0.2, batch_size=32, p_edge_drop=0.2,
                 p_node_drop=0.1, loss_variant="paper_literal", random_state=0):
        self.epochs = epochs
        self.lr = lr
        self.tau = tau
        self.batch_size = batch_size
        self.p_edge_drop = p_edge_drop
        self.p_node_drop = p_node_drop
        self.loss_variant = loss_variant
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr=self.lr, tau=self.tau,
                           batch_size=self.batch_size, p_edge_drop=self.p_edge_drop,
                           p_node_drop=self.p_node_drop, seed=int(self.random_state or 0),
                           loss_variant=self.loss_variant)

    def fit(self, X, y=None):
        graphs = check_graphs(X)
        result = train(graphs, self._config())
        self.model_ = result.model
        self.loss_history_ = list(result.history)
        self.n_features_in_ = graphs[0].X.shape[1]
        return self

    @classmethod
    def from_model(cls, model: EncoderModel) -> "GraphEncoder":
        """Wrap an already trained (frozen) encoder."""
        est = cls(**{k: v for k, v in model.train_config.items()
                     if k in cls._get_param_names()})
        est.model_ = model if model.frozen else model.freeze()
        est.loss_history_ = []
        est.n_features_in_ = model.n_features
        return est

    def transform(self, X):
        check_is_fitted(self, "model_")
        graphs = check_graphs(X)
        return np.stack([forward_embed(self.model_, g) for g in graphs])


class NearestReference(BaseEstimator):
    """Exact cosine 1-NN over frozen-encoder embeddings of reference graphs.

    ``predict`` returns the label of the closest reference (its case id when
    ``fit`` got no labels).
    """

    def __init__(self, encoder=None):
        self.encoder = encoder

    def _model(self) -> EncoderModel:
        enc = self.encoder
        if isinstance(enc, EncoderModel):
            return enc
        if isinstance(enc, GraphEncoder):
            check_is_fitted(enc, "model_")
            return enc.model_
        raise TypeError("encoder must be an EncoderModel or a fitted GraphEncoder")

    def fit(self, X, y=None):
        graphs = check_graphs(X)
        model = self._model()
        self.index_ = build_index(model, graphs)
        ids = self.index_.case_ids
        labels = check_labels(y, len(graphs)) if y is not None else list(ids)
        self.labels_ = dict(zip(ids, labels))
        self.classes_ = np.array(sorted(set(labels)), dtype=object)
        return self

    def kneighbors(self, X, n_neighbors: int = 1):
        """Similarities and reference ids of the ``n_neighbors`` closest references."""
        check_is_fitted(self, "index_")
        model = self._model()
        sims, ids = [], []
        for g in check_graphs(X):
            ranked = query_nearest(self.index_, g, model, k=max(n_neighbors, 2))[:n_neighbors]
            sims.append([s for _, s in ranked])
            ids.append([c for c, _ in ranked])
        return np.array(sims), np.array(ids, dtype=object)

    def predict(self, X):
        _, ids = self.kneighbors(X, 1)
        return np.array([self.labels_[row[0]] for row in ids], dtype=object)

    def score(self, X, y) -> float:
        pred = self.predict(X)
        truth = check_labels(y, len(pred))
        return float(np.mean([p == t for p, t in zip(pred, truth)]))
