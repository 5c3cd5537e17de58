import dataclasses

import numpy as np
import pytest

from graphcue.encoder import Embedding, init_params
from graphcue.errors import EmptyIndex, FingerprintMismatch, ModelNotFrozen
from graphcue.retrieval import (
    EmbeddingIndex,
    block_contrast,
    build_index,
    query_nearest,
    similarity_matrix,
    write_heatmap,
)


@pytest.fixture(scope="module")
def frozen():
    return init_params(11).freeze()


@pytest.fixture(scope="module")
def refs(corpus_graphs):
    return list(corpus_graphs.values())[:10]


def test_empty_reference_list(frozen):
    index = build_index(frozen, [])
    assert len(index) == 0
    with pytest.raises(EmptyIndex):
        similarity_matrix(index)


def test_entries_are_unit_norm_and_unique(frozen, refs):
    index = build_index(frozen, refs)
    assert len(index) == 10
    assert np.allclose(np.linalg.norm(index.matrix(), axis=1), 1, atol=1e-6)
    assert len(set(index.case_ids)) == 10


def test_rebuild_gives_identical_file(frozen, refs):
    assert build_index(frozen, refs).to_json() == build_index(frozen, refs).to_json()


def test_json_round_trip(frozen, refs, tmp_path):
    index = build_index(frozen, refs)
    index.save(tmp_path / "i.json")
    back = EmbeddingIndex.load(tmp_path / "i.json")
    assert back.fingerprint == index.fingerprint and back.case_ids == index.case_ids
    assert np.array_equal(back.matrix(), index.matrix())


def test_unfrozen_model_rejected(refs):
    with pytest.raises(ModelNotFrozen):
        build_index(init_params(0), refs)


def test_self_retrieval(frozen, refs):
    index = build_index(frozen, refs)
    for g in refs:
        cid, sim = query_nearest(index, g, frozen)
        assert cid == g.case_id and sim == pytest.approx(1.0, abs=1e-6)


def test_tie_goes_to_smaller_case_id(frozen, refs):
    g = refs[0]
    twins = [dataclasses.replace(g, case_id="zeta"), dataclasses.replace(g, case_id="alpha")]
    cid, _ = query_nearest(build_index(frozen, twins), g, frozen)
    assert cid == "alpha"


def test_fingerprint_and_empty_errors(frozen, refs):
    index = build_index(frozen, refs)
    with pytest.raises(FingerprintMismatch):
        query_nearest(index, refs[0], init_params(12).freeze())
    with pytest.raises(EmptyIndex):
        query_nearest(EmbeddingIndex(frozen.fingerprint()), refs[0], frozen)


def test_scaling_before_normalisation_cannot_change_argmax(frozen, refs):
    index = build_index(frozen, refs[1:])
    base = query_nearest(index, refs[0], frozen)
    p = {k: v.copy() for k, v in frozen.params().items()}
    p["W3"] *= 7.5
    p["b3"] *= 7.5
    scaled = frozen.with_params(p).freeze()
    rescaled = build_index(scaled, refs[1:])
    cid, sim = query_nearest(rescaled, refs[0], scaled)
    assert cid == base[0] and sim == pytest.approx(base[1], abs=1e-9)


def test_k_neighbours_are_sorted(frozen, refs):
    ranked = query_nearest(build_index(frozen, refs), refs[3], frozen, k=4)
    assert len(ranked) == 4
    sims = [s for _, s in ranked]
    assert sims == sorted(sims, reverse=True)


def test_similarity_matrix_laws(frozen, refs, tmp_path):
    single = EmbeddingIndex("x", [Embedding("a", np.eye(32)[0])])
    assert similarity_matrix(single)[0].tolist() == [[1.0]]
    index = build_index(frozen, refs)
    labels = {cid: ("b" if k % 2 else "a") for k, cid in enumerate(index.case_ids)}
    S, ids = similarity_matrix(index, labels)
    assert np.array_equal(S, S.T) and np.all(np.diag(S) == 1.0)
    assert [labels[c] for c in ids] == sorted(labels[c] for c in ids)
    m, o = write_heatmap(S, ids, tmp_path)
    assert len(m.read_text().splitlines()) == 10
    assert o.read_text().split() == ids


def test_block_contrast_by_hand():
    S = np.array([[1, .9, .1], [.9, 1, .2], [.1, .2, 1]])
    intra, inter = block_contrast(S, ["a", "b", "c"], {"a": "x", "b": "x", "c": "y"})
    assert intra == pytest.approx(0.9) and inter == pytest.approx(0.15)
