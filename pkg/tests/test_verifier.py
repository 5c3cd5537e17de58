import json

import pytest

from graphcue.corpus import ground_truth_config
from graphcue.errors import ConfigSyntaxError, DuplicateDevice, ResourceLimitExceeded
from graphcue.graph import build_graph
from graphcue.topology import parse_case
from graphcue.verifier.checks import CHECK_ORDER, CATEGORY_OF_CHECK, reachability_matrix, verify
from graphcue.verifier.config import parse_config, render_config
from graphcue.verifier.network import VerifyLimits, compute_routes, provision
from fixtures import BUILDERS, fixture_set, missing_interface

DIALECT_EXAMPLE = """\
device r1
  interface eth0
    ip address 10.0.0.1/24
    link L1
  router ospf
    network 10.0.0.0/24 area 0
device r2
  interface eth0
    ip address 10.0.0.2/24
    link L1
  router ospf
    network 10.0.0.0/24 area 0
"""


def _line_case(n=3, protocol="ospf"):
    devices, links = [], []
    for i in range(1, n + 1):
        devices.append({"name": f"r{i}", "kind": "router", "interfaces": ["eth0", "eth1", "lo"]})
    for i in range(1, n):
        links.append({"id": f"L{i}", "a": {"device": f"r{i}", "iface": "eth1"},
                      "b": {"device": f"r{i + 1}", "iface": "eth0"}})
    params = {"area": 0} if protocol == "ospf" else {"asn": {f"r{i}": 65000 + i for i in range(1, n + 1)}}
    return parse_case(json.dumps({"case_id": f"line-{protocol}", "devices": devices, "links": links,
                                  "intents": [{"protocol": protocol, "params": params}],
                                  "endpoints": [["r1", f"r{n}"]]}))


def test_parse_empty_and_example():
    assert parse_config("") == []
    devs = parse_config(DIALECT_EXAMPLE)
    assert [d.name for d in devs] == ["r1", "r2"]
    assert all(len(d.interfaces) == 1 and len(d.ospf.networks) == 1 for d in devs)
    assert render_config(devs) == DIALECT_EXAMPLE


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ConfigSyntaxError) as exc:
        parse_config("device r1\n  interface eth0\n    ip address 10.0.0.1/33\n")
    assert exc.value.lineno == 3
    with pytest.raises(DuplicateDevice):
        parse_config("device r1\ndevice r1\n")
    with pytest.raises(ConfigSyntaxError):
        parse_config("  interface eth0\n")


def test_unknown_lines_are_warnings():
    from graphcue.verifier.config import parse_config_text
    parsed = parse_config_text("device r1\n  hostname r1\n")
    assert len(parsed.devices) == 1 and parsed.warnings == ["line 2: ignored 'hostname r1'"]


def test_provision_two_devices(two_routers):
    s = provision(build_graph(two_routers), two_routers, seed=4)
    assert s.devices == ["r1", "r2"] and len(s.links) == 1
    assert all(t == [] for t in s.tables.values()) and s.clean
    assert s.state_json() == provision(build_graph(two_routers), two_routers, seed=4).state_json()


def test_provision_limit():
    case = _line_case(33)
    with pytest.raises(ResourceLimitExceeded):
        provision(None, case, limits=VerifyLimits(max_devices=32))
    report = verify(None, case, "", limits=VerifyLimits(max_devices=32))
    assert report.b == 0 and [f.category for f in report.failures] == ["resource_limit"]


def test_connected_routes_only_on_shared_subnet():
    s = provision(None, parse_case(json.dumps({"case_id": "pair", "devices": [
        {"name": "r1", "kind": "router", "interfaces": ["eth0"]},
        {"name": "r2", "kind": "router", "interfaces": ["eth0"]}],
        "links": [{"id": "L1", "a": {"device": "r1", "iface": "eth0"},
                   "b": {"device": "r2", "iface": "eth0"}}],
        "intents": [{"protocol": "ospf", "params": {"area": 0}}]})))
    s.apply(parse_config(DIALECT_EXAMPLE))
    tables = compute_routes(s)
    for dev in ("r1", "r2"):
        assert [(r.source, str(r.prefix)) for r in tables[dev]] == [("connected", "10.0.0.0/24")]


def test_ospf_line_next_hop():
    case = _line_case(3)
    cfgs = {d.name: d for d in parse_config(ground_truth_config(case))}
    s = provision(None, case)
    s.apply(list(cfgs.values()))
    tables = compute_routes(s)
    far = cfgs["r3"].interface("lo").address.network
    route = next(r for r in tables["r1"] if r.prefix == far)
    r2_addr = cfgs["r2"].interface("eth0").address.ip
    assert route.source == "ospf" and route.next_hop == r2_addr


def test_bgp_mismatched_remote_as_blocks_propagation():
    case = _line_case(2, "bgp")
    cfgs = parse_config(ground_truth_config(case))
    for d in cfgs:
        if d.name == "r1":
            d.bgp.neighbors = [(a, ras + 1) for a, ras in d.bgp.neighbors]
    s = provision(None, case)
    s.apply(cfgs)
    tables = compute_routes(s)
    assert all(r.source != "bgp" for rs in tables.values() for r in rs)


def test_ground_truth_passes(two_routers):
    report = verify(build_graph(two_routers), two_routers, ground_truth_config(two_routers))
    assert report.b == 1 and report.failures == []
    assert [c.name for c in report.checks] == list(CHECK_ORDER)
    assert all(c.status == "pass" for c in report.checks)


def test_deleted_interface(corpus):
    case = next(e.case for e in corpus.entries if e.archetype == "line_ospf"
                and len(e.case.devices) >= 3)
    end = next(l.b for l in case.links)
    text = missing_interface(case, 1)
    report = verify(build_graph(case), case, text)
    missing = [f for f in report.failures if f.category == "missing_interface"]
    assert [(f.device, f.interface) for f in missing] == [end]
    extra = {f.category for f in report.failures} - {"missing_interface"}
    assert "reachability_failure" in extra


def test_syntax_failure_skips_checks(two_routers):
    report = verify(None, two_routers, "device r1\n  interface eth0\n    ip address 1.2.3.4/40\n")
    assert report.b == 0
    assert [f.category for f in report.failures] == ["syntax"]
    assert {c.status for c in report.checks} == {"skipped"}


def test_categories_match_checks(corpus):
    for label, case, text, expected in fixture_set(corpus):
        report = verify(build_graph(case), case, text)
        assert (report.b == 1) == (not report.failures), label
        if expected is not None:
            assert expected in {f.category for f in report.failures}, label
        failing = {c.name for c in report.checks if c.status == "fail"}
        assert failing == {n for n in CHECK_ORDER
                           if any(f.category == CATEGORY_OF_CHECK[n] for f in report.failures)}


def test_session_reuse_after_failure(corpus):
    case = corpus.split("validation")[0].case
    g = build_graph(case)
    session = provision(g, case)
    first = verify(g, case, case.ground_truth, session=session).to_json(include_elapsed=False)
    verify(g, case, BUILDERS["adjacency_mismatch"](case), session=session)
    again = verify(g, case, case.ground_truth, session=session).to_json(include_elapsed=False)
    assert first == again and session.clean


def test_step_budget_reports_timeout(corpus):
    case = next(e.case for e in corpus.entries if e.archetype == "mesh_ospf")
    report = verify(None, case, case.ground_truth, limits=VerifyLimits(max_check_steps=10))
    assert report.b == 0
    assert "timeout" in {c.status for c in report.checks}


def test_logs_are_trimmed(corpus):
    case = max((e.case for e in corpus.entries), key=lambda c: len(c.devices))
    report = verify(None, case, case.ground_truth)
    per_device = {}
    for line in report.logs:
        per_device[line.split(":", 1)[0]] = per_device.get(line.split(":", 1)[0], 0) + 1
    assert max(per_device.values()) <= 50


def test_reachability_matrix_is_symmetric_for_ground_truth(two_routers):
    m = reachability_matrix(two_routers, ground_truth_config(two_routers))
    assert m == {("r1", "r2"): True, ("r2", "r1"): True}


def test_report_round_trip(two_routers):
    from graphcue.verifier.checks import VerifyReport
    r = verify(None, two_routers, BUILDERS["adjacency_mismatch"](
        parse_case(json.dumps(dict(json.loads(two_routers.to_json()),
                                   ground_truth=ground_truth_config(two_routers))))))
    assert VerifyReport.from_dict(json.loads(r.to_json())).to_json() == r.to_json()
