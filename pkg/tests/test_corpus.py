import filecmp
import json

import numpy as np
import pytest

from graphcue.corpus import (
    DEFAULT_ARCHETYPES,
    ArchetypeSpec,
    CorpusSpec,
    generate_corpus,
    ground_truth_config,
    load_corpus,
    write_corpus,
)
from graphcue.errors import InvalidSpec
from graphcue.graph import build_graph
from graphcue.topology import parse_case
from graphcue.verifier.checks import verify
from graphcue.verifier.config import parse_config
from conftest import TWO_ROUTERS


def test_one_case_per_archetype():
    corpus = generate_corpus(CorpusSpec(n_cases=8, seed=7))
    assert len(corpus.entries) == 8
    assert sorted(e.archetype for e in corpus.entries) == sorted(a.name for a in DEFAULT_ARCHETYPES)


def test_corpus_files_are_byte_identical(tmp_path):
    spec = CorpusSpec(n_cases=16, seed=3)
    a = write_corpus(generate_corpus(spec), tmp_path / "a")
    b = write_corpus(generate_corpus(spec), tmp_path / "b")
    names = sorted(p.name for p in (a / "cases").iterdir())
    match, mismatch, errors = filecmp.cmpfiles(a / "cases", b / "cases", names, shallow=False)
    assert not mismatch and not errors and len(match) == 16
    for f in ("labels.json", "spec.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_write_then_load_round_trips(tmp_path):
    corpus = generate_corpus(CorpusSpec(n_cases=8, seed=2))
    loaded = load_corpus(write_corpus(corpus, tmp_path))
    assert [e.case.to_json() for e in loaded.entries] == [e.case.to_json() for e in corpus.entries]
    assert loaded.labels() == corpus.labels()
    assert loaded.spec == corpus.spec


def test_default_split_is_disjoint_and_sized(corpus):
    train = {e.case.case_id for e in corpus.split("train")}
    val = {e.case.case_id for e in corpus.split("validation")}
    assert len(train) == 200 and len(val) == 50
    assert not train & val


def test_seed_changes_corpus():
    a = generate_corpus(CorpusSpec(n_cases=8, seed=1))
    b = generate_corpus(CorpusSpec(n_cases=8, seed=2))
    assert [e.case.to_json() for e in a.entries] != [e.case.to_json() for e in b.entries]


@pytest.mark.slow
def test_every_ground_truth_verifies_seed_1():
    corpus = generate_corpus(CorpusSpec(n_cases=200, seed=1))
    bad = [e.case.case_id for e in corpus.entries
           if verify(build_graph(e.case), e.case, e.case.ground_truth).b != 1]
    assert bad == []


def test_two_router_ospf_ground_truth(two_routers):
    text = ground_truth_config(two_routers)
    devs = {d.name: d for d in parse_config(text)}
    a1 = next(s.address for s in devs["r1"].interfaces if s.name == "eth0")
    a2 = next(s.address for s in devs["r2"].interfaces if s.name == "eth0")
    assert a1.network == a2.network and a1 != a2
    for d in devs.values():
        assert d.ospf is not None and (a1.network, 0) in d.ospf.networks
    assert verify(build_graph(two_routers), two_routers, text).b == 1


def test_host_only_case_has_addresses_only():
    case = parse_case(json.dumps({"case_id": "hosts", "devices": [
        {"name": "h1", "kind": "host", "interfaces": ["eth0"]},
        {"name": "h2", "kind": "host", "interfaces": ["eth0"]}],
        "links": [{"id": "L1", "a": {"device": "h1", "iface": "eth0"},
                   "b": {"device": "h2", "iface": "eth0"}}]}))
    text = ground_truth_config(case)
    assert "router" not in text and "ip route" not in text
    devs = parse_config(text)
    assert all(s.address is not None for d in devs for s in d.interfaces)
    assert verify(build_graph(case), case, text).b == 1


def test_bgp_ring_of_four_has_mutual_neighbors():
    doc = {"case_id": "ring4", "devices": [], "links": [],
           "intents": [{"protocol": "bgp", "params": {"asn": {f"r{i}": 65001 + i for i in range(4)}}}]}
    for i in range(4):
        doc["devices"].append({"name": f"r{i}", "kind": "router", "interfaces": ["ge0", "ge1", "lo"]})
        j = (i + 1) % 4
        doc["links"].append({"id": f"L{i}", "a": {"device": f"r{i}", "iface": "ge0"},
                             "b": {"device": f"r{j}", "iface": "ge1"}})
    case = parse_case(json.dumps(doc))
    text = ground_truth_config(case)
    devs = {d.name: d for d in parse_config(text)}
    for link in case.links:
        (u, ui), (v, vi) = link.a, link.b
        addr = {(d.name, s.name): s.address for d in devs.values() for s in d.interfaces}
        assert (addr[(v, vi)].ip, devs[v].bgp.asn) in devs[u].bgp.neighbors
        assert (addr[(u, ui)].ip, devs[u].bgp.asn) in devs[v].bgp.neighbors
    assert verify(build_graph(case), case, text).b == 1


@pytest.mark.parametrize("bad", [
    dict(n_cases=0),
    dict(n_cases=4),
    dict(split=(0.7, 0.2)),
    dict(archetypes=()),
    dict(archetypes=(ArchetypeSpec("x", "line", (1, 4), ("ospf",)),)),
    dict(archetypes=(ArchetypeSpec("x", "line", (2, 40), ("ospf",)),)),
    dict(archetypes=(ArchetypeSpec("x", "blob", (2, 4), ("ospf",)),)),
    dict(archetypes=(ArchetypeSpec("x", "line", (2, 4), ("ospf",)),) * 2),
])
def test_invalid_specs(bad):
    kw = dict(n_cases=8)
    kw.update(bad)
    with pytest.raises(InvalidSpec):
        generate_corpus(CorpusSpec(**kw))


def test_archetype_shapes_are_recognisable(corpus, corpus_graphs):
    for e in corpus.entries:
        g = corpus_graphs[e.case.case_id]
        deg = (g.A.sum(axis=1) - 1)
        n = g.n_nodes
        if e.archetype == "line_ospf":
            assert n <= 6 and deg.max() <= 2 and (deg == 1).sum() == 2
        elif e.archetype == "ring_bgp":
            assert np.all(deg == 2)
        elif e.archetype == "star_lan":
            assert deg.max() == n - 1
        elif e.archetype == "mesh_bgp":
            assert np.all(deg == n - 1)
