from __future__ import annotations

import pytest

from graphcue.corpus import CorpusSpec, generate_corpus
from graphcue.graph import build_graph
from graphcue.retrieval import build_index
from graphcue.topology import parse_case
from graphcue.trainer import TrainConfig, train

TWO_ROUTERS = {
    "case_id": "two-routers",
    "devices": [
        {"name": "r1", "kind": "router", "interfaces": ["eth0", "lo"]},
        {"name": "r2", "kind": "router", "interfaces": ["eth0", "lo"]},
    ],
    "links": [{"id": "L1", "a": {"device": "r1", "iface": "eth0"},
               "b": {"device": "r2", "iface": "eth0"}}],
    "intents": [{"protocol": "ospf", "params": {"area": 0}}],
    "endpoints": [["r1", "r2"]],
}


@pytest.fixture
def two_routers():
    import json
    return parse_case(json.dumps(TWO_ROUTERS))


@pytest.fixture(scope="session")
def corpus():
    return generate_corpus(CorpusSpec())


@pytest.fixture(scope="session")
def corpus_graphs(corpus):
    return {e.case.case_id: build_graph(e.case) for e in corpus.entries}


@pytest.fixture(scope="session")
def trained(corpus, corpus_graphs):
    """80-epoch encoder on the 200-case train split (about ten seconds)."""
    graphs = [corpus_graphs[e.case.case_id] for e in corpus.split("train")]
    return train(graphs, TrainConfig(epochs=80, seed=0))


@pytest.fixture(scope="session")
def trained_index(trained, corpus, corpus_graphs):
    return build_index(trained.model, [corpus_graphs[e.case.case_id] for e in corpus.split("train")])


@pytest.fixture(scope="session")
def references(corpus, corpus_graphs):
    return {e.case.case_id: (corpus_graphs[e.case.case_id], e.case.ground_truth)
            for e in corpus.split("train")}


# acceptance reporting: one line per criterion in the terminal summary

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
