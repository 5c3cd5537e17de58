import json

import pytest

from graphcue.corpus import ground_truth_config
from graphcue.errors import MalformedReference, ReportCaseMismatch
from graphcue.generator import GeneratorBackend, MockSettings, mock_generate
from graphcue.graph import build_graph, serialize_graph
from graphcue.prompt import (
    KNOWLEDGE_V1,
    SECTION_MARKERS,
    SNIPPET_MARKER,
    Constraint,
    compose_prompt,
    initial_constraints,
    parse_constraints,
    parse_prose_constraints,
    refine_constraints,
    select_snippets,
    split_sections,
)
from graphcue.topology import parse_case
from graphcue.verifier.checks import verify
from graphcue.verifier.config import split_device_blocks


def _link(k, a, ai, b, bi):
    return {"id": f"L{k}", "a": {"device": a, "iface": ai}, "b": {"device": b, "iface": bi}}


def _area_mismatch(case):
    text, dev = [], None
    for line in ground_truth_config(case).splitlines():
        if line.startswith("device"):
            dev = line.split()[1]
        if dev == "r2":
            line = line.replace("area 0", "area 1")
        text.append(line)
    return "\n".join(text) + "\n"


def test_counting_rule(two_routers):
    cs = initial_constraints(two_routers)
    kinds = [c.kind for c in cs]
    assert len(cs) == 6
    assert kinds.count("attach_interface") == 2
    assert kinds.count("daemon_activation") == 2
    assert kinds.count("naming") == 2
    assert len({(c.kind, c.subject) for c in cs}) == 6


def test_no_links_no_intents_gives_naming_only():
    case = parse_case(json.dumps({"case_id": "bare", "devices": [
        {"name": "a", "kind": "router", "interfaces": ["lo"]},
        {"name": "b", "kind": "switch", "interfaces": []}], "links": []}))
    cs = initial_constraints(case)
    assert [c.kind for c in cs] == ["naming", "naming"]


def test_initial_constraints_unique_over_corpus(corpus):
    for e in corpus.entries[:60]:
        cs = initial_constraints(e.case)
        assert len({(c.kind, c.subject) for c in cs}) == len(cs)


def test_empty_sections_keep_all_delimiters(two_routers):
    p = compose_prompt(build_graph(two_routers), None, "", [])
    lines = p.rendered.splitlines()
    assert [ln for ln in lines if ln.startswith("### ")] == list(SECTION_MARKERS)
    sections = split_sections(p.rendered)
    assert sections["knowledge"] == "" and sections["constraints"] == ""
    assert sections["target"] == serialize_graph(build_graph(two_routers))


def test_rendering_is_deterministic(two_routers):
    g = build_graph(two_routers)
    cs = initial_constraints(two_routers)
    ref = (g, ground_truth_config(two_routers))
    a = compose_prompt(g, ref, KNOWLEDGE_V1, cs).rendered
    b = compose_prompt(g, ref, KNOWLEDGE_V1, cs).rendered
    assert a == b


@pytest.fixture
def mixed_reference():
    doc = {"case_id": "ref", "devices": [
        {"name": "core", "kind": "router", "interfaces": ["eth0", "lo"]},
        {"name": "acc", "kind": "switch", "interfaces": ["eth0", "eth1"]},
        {"name": "pc", "kind": "host", "interfaces": ["eth0"]}],
        "links": [_link(1, "core", "eth0", "acc", "eth0"), _link(2, "acc", "eth1", "pc", "eth0")],
        "intents": [{"protocol": "ospf", "params": {"area": 0}},
                    {"protocol": "static", "params": {"prefix": "0.0.0.0/0"}}]}
    case = parse_case(json.dumps(doc))
    return build_graph(case), ground_truth_config(case)


def test_three_block_reference_keeps_kind_matches(mixed_reference):
    g_r, conf_r = mixed_reference
    assert len(split_device_blocks(conf_r)) == 3
    target = parse_case(json.dumps({"case_id": "t", "devices": [
        {"name": "r9", "kind": "router", "interfaces": ["eth0", "lo"]},
        {"name": "h9", "kind": "host", "interfaces": ["eth0"]}],
        "links": [_link(1, "r9", "eth0", "h9", "eth0")],
        "intents": [{"protocol": "ospf", "params": {"area": 0}},
                    {"protocol": "static", "params": {"prefix": "0.0.0.0/0"}}]}))
    g_t = build_graph(target)
    picked = select_snippets(g_t, g_r, conf_r)
    assert [name for name, _ in picked] == ["core", "pc"]
    ref = compose_prompt(g_t, (g_r, conf_r)).reference_section
    snippets = ref.split(SNIPPET_MARKER + "\n", 1)[1]
    assert [n for n, _ in split_device_blocks(snippets)] == ["core", "pc"]


def test_reference_naming_unknown_device(mixed_reference, two_routers):
    g_r, conf_r = mixed_reference
    with pytest.raises(MalformedReference):
        compose_prompt(build_graph(two_routers), (g_r, conf_r.replace("device pc", "device zz")))
    with pytest.raises(MalformedReference):
        compose_prompt(build_graph(two_routers), (g_r, "device core\n  interface eth0\n    ip address 999.0.0.1/24\n"))


def test_passing_report_leaves_constraints(two_routers):
    cs = initial_constraints(two_routers)
    report = verify(build_graph(two_routers), two_routers, ground_truth_config(two_routers))
    assert report.b == 1
    assert refine_constraints(cs, report, 1) == cs


def test_missing_interface_becomes_one_attach(two_routers):
    cs = initial_constraints(two_routers)
    text = ground_truth_config(two_routers)
    blocks = dict(split_device_blocks(text))
    r1 = blocks["r1"].replace("  interface eth0\n    ip address 10.0.0.1/30\n    link L1\n", "")
    report = verify(build_graph(two_routers), two_routers, r1 + blocks["r2"])
    assert [f.category for f in report.failures if f.device == "r1"][0] == "missing_interface"
    missing_only = [f for f in report.failures if f.category == "missing_interface"]
    report.failures = missing_only
    out = refine_constraints(cs, report, 1)
    new = [c for c in out if c.origin == "report_iteration-1"]
    assert [(c.kind, c.subject) for c in new] == [("attach_interface", "r1/eth0")]
    assert len(out) == len(cs)


def test_area_mismatch_targets_both_ends(two_routers):
    cs = initial_constraints(two_routers)
    report = verify(build_graph(two_routers), two_routers, _area_mismatch(two_routers))
    out = refine_constraints(cs, report, 1)
    nd = [c for c in out if c.kind == "neighbor_definition"]
    assert sorted(c.subject for c in nd) == ["r1/eth0", "r2/eth0"]
    assert all("area 0" in c.directive for c in nd)


def test_refinement_is_idempotent_and_newest_wins(two_routers):
    cs = initial_constraints(two_routers)
    report = verify(build_graph(two_routers), two_routers, _area_mismatch(two_routers))
    once = refine_constraints(cs, report, 1)
    assert refine_constraints(once, report, 1) == once
    twice = refine_constraints(once, report, 2)
    assert len(twice) == len(once)
    assert {c.origin for c in twice if c.kind == "neighbor_definition"} == {"report_iteration-2"}


def test_report_for_other_case(two_routers):
    report = verify(build_graph(two_routers), two_routers, _area_mismatch(two_routers))
    with pytest.raises(ReportCaseMismatch):
        refine_constraints([], report, 1, case_id="someone-else")


def _failing_reports(corpus, n=30):
    backend = MockSettings(seed=5, defect_count=3)
    for e in corpus.split("validation")[:n]:
        g = build_graph(e.case)
        cs = initial_constraints(e.case)
        prompt = compose_prompt(g, None, KNOWLEDGE_V1, cs)
        text, _ = mock_generate(backend, prompt.rendered)
        report = verify(g, e.case, text)
        if report.b == 0:
            yield e.case, cs, report


def test_every_failure_is_covered(corpus):
    seen = 0
    for case, cs, report in _failing_reports(corpus):
        out = refine_constraints(cs, report, 1, case.case_id)
        for f in report.failures:
            scope = {f.device, *f.related}
            assert any(c.device in scope for c in out if c.origin == "report_iteration-1"), f
            seen += 1
    assert seen > 30


def test_rendered_constraints_round_trip(corpus):
    for case, cs, report in _failing_reports(corpus, 10):
        out = refine_constraints(cs, report, 3)
        rendered = compose_prompt(build_graph(case), None, "", out).rendered
        assert parse_constraints(split_sections(rendered)["constraints"]) == out


def test_prose_rendering_recovers_kind_and_subject(corpus):
    for case, cs, report in _failing_reports(corpus, 10):
        out = refine_constraints(cs, report, 2)
        text = compose_prompt(build_graph(case), None, "", out, structured=False).rendered
        assert split_sections(text) is None
        back = parse_prose_constraints(text)
        assert [(c.kind, c.subject, c.origin) for c in back] == \
               [(c.kind, c.subject, c.origin) for c in out]


def test_constraint_validation():
    with pytest.raises(ValueError):
        Constraint("routing", "r1", "x")
    with pytest.raises(ValueError):
        Constraint("naming", "r1", "  ")
    assert Constraint("naming", "r1/eth0", "x", "report_iteration-4").iteration == 4
