import itertools
import json

import numpy as np
import pytest

from graphcue.encoder import (
    EMBED_DIM,
    EncoderModel,
    embed_with_grad_fn,
    forward_embed,
    init_params,
    normalize_adjacency,
)
from graphcue.errors import DegenerateEmbedding, ShapeMismatch
from graphcue.graph import JsonGraph, build_graph, permute_graph
from oracles import central_difference


def test_normalize_small_cases():
    assert normalize_adjacency(np.array([[1]])).tolist() == [[1.0]]
    assert np.allclose(normalize_adjacency(np.ones((2, 2))), 0.5)
    path = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]])
    A = normalize_adjacency(path)
    assert A[0, 1] == pytest.approx(1 / np.sqrt(6), abs=1e-12)
    assert np.allclose(A, A.T)


def _power_iteration(M, iters=500):
    v = np.ones(M.shape[0])
    for _ in range(iters):
        w = M @ v
        v = w / np.linalg.norm(w)
    return float(v @ M @ v)


@pytest.mark.parametrize("n", range(1, 7))
def test_spectral_radius_at_most_one(n):
    rng = np.random.default_rng(n)
    A = (rng.random((n, n)) < 0.5).astype(float)
    A = np.maximum(A, A.T)
    np.fill_diagonal(A, 1)
    assert _power_iteration(normalize_adjacency(A)) <= 1 + 1e-9


def test_init_is_seeded_and_bounded():
    a, b, c = init_params(1), init_params(1), init_params(2)
    assert all(np.array_equal(a.params()[k], b.params()[k]) for k in a.params())
    assert not np.array_equal(a.W1, c.W1)
    assert np.abs(a.W1).max() <= np.sqrt(6 / (a.n_features + 64))
    assert not a.frozen and not a.b1.any()
    assert a.W1.shape == (42, 64) and a.W3.shape == (64, EMBED_DIM)


def test_wrong_shapes_rejected():
    m = init_params(0)
    p = m.params()
    p["W2"] = np.zeros((64, 10))
    with pytest.raises(ShapeMismatch):
        EncoderModel(**p)


def test_embedding_is_unit_norm(corpus_graphs):
    m = init_params(0)
    for g in list(corpus_graphs.values())[:40]:
        z = forward_embed(m, g)
        assert z.shape == (EMBED_DIM,)
        assert abs(np.linalg.norm(z) - 1) < 1e-6


def test_zero_model_is_degenerate(two_routers):
    m = init_params(0)
    zero = m.with_params({k: np.zeros_like(v) for k, v in m.params().items()})
    with pytest.raises(DegenerateEmbedding):
        forward_embed(zero, build_graph(two_routers))


def test_feature_width_checked(two_routers):
    g = build_graph(two_routers)
    narrow = JsonGraph(g.node_ids, g.X[:, :10], g.A, g.M, case_id=g.case_id)
    with pytest.raises(ShapeMismatch):
        forward_embed(init_params(0), narrow)


def test_permutation_invariance_brute_force(corpus_graphs):
    m = init_params(3)
    small = [g for g in corpus_graphs.values() if g.n_nodes <= 5][:4]
    assert small
    for g in small:
        z = forward_embed(m, g)
        for perm in itertools.permutations(range(g.n_nodes)):
            assert np.allclose(forward_embed(m, permute_graph(g, perm)), z, atol=1e-9)


def test_backward_matches_finite_differences(two_routers):
    m = init_params(5)
    g = build_graph(two_routers)
    w = np.random.default_rng(0).normal(size=EMBED_DIM)
    z, back = embed_with_grad_fn(m, g)
    grads = back(w)
    params = {k: v.copy() for k, v in m.params().items()}
    for name in ("W3", "b3", "b1"):
        def f():
            return float(w @ forward_embed(m.with_params(params), g))
        num = central_difference(f, params[name])
        assert np.allclose(grads[name], num, atol=1e-7)


def test_frozen_weights_are_read_only():
    m = init_params(0).freeze()
    assert m.frozen
    with pytest.raises(ValueError):
        m.W1[0, 0] = 1.0


def test_save_load_round_trip(tmp_path, two_routers):
    m = init_params(4).freeze()
    path = tmp_path / "m.json"
    m.save(path)
    back = EncoderModel.load(path)
    assert back.frozen and back.fingerprint() == m.fingerprint()
    g = build_graph(two_routers)
    assert np.array_equal(forward_embed(back, g), forward_embed(m, g))
    doc = json.loads(path.read_text())
    assert doc["dims"] == {"features": 42, "hidden": [64, 64], "embed": 32}


def test_tampered_model_file_rejected(tmp_path):
    path = tmp_path / "m.json"
    init_params(4).save(path)
    doc = json.loads(path.read_text())
    doc["weights"]["b1"][0] = 0.5
    path.write_text(json.dumps(doc))
    with pytest.raises(ShapeMismatch):
        EncoderModel.load(path)
