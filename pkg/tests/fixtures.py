"""Deliberately broken candidate configurations, one builder per failure category.

Each builder edits a ground-truth config in a way a reader can check by hand
and returns the candidate text, or ``None`` when the case offers no target.
"""

from __future__ import annotations

import copy
import ipaddress

from graphcue.verifier.config import parse_config, render_config


def _devices(case):
    return {d.name: d for d in parse_config(case.ground_truth)}


def _render(case, cfgs):
    return render_config([cfgs[d.name] for d in case.devices])


def _linked(case, k):
    """The k-th (device, interface) link endpoint, cycling."""
    ends = [end for link in case.links for end in (link.a, link.b)]
    return ends[k % len(ends)] if ends else None


def missing_interface(case, k=0):
    end = _linked(case, k)
    if end is None:
        return None
    cfgs = _devices(case)
    dev = cfgs[end[0]]
    dev.interfaces = [s for s in dev.interfaces if s.name != end[1]]
    return _render(case, cfgs)


def naming_violation(case, k=0):
    names = [d.name for d in case.devices]
    cfgs = _devices(case)
    victim = names[k % len(names)]
    dev = cfgs.pop(victim)
    dev.name = victim + "-typo"
    cfgs[victim] = dev
    return _render(case, cfgs)


def addressing_violation(case, k=0):
    end = _linked(case, k)
    if end is None:
        return None
    cfgs = _devices(case)
    st = cfgs[end[0]].interface(end[1])
    st.address = ipaddress.IPv4Interface(f"172.31.{k % 250}.1/{st.address.network.prefixlen}")
    return _render(case, cfgs)


def adjacency_mismatch(case, k=0):
    cfgs = _devices(case)
    routed = [d for d in case.devices if cfgs[d.name].ospf or cfgs[d.name].bgp]
    if not routed:
        return None
    dev = cfgs[routed[k % len(routed)].name]
    if dev.ospf is not None:
        dev.ospf.networks = [(net, area + 1) for net, area in dev.ospf.networks]
    else:
        dev.bgp.neighbors = [(addr, ras + 1000) for addr, ras in dev.bgp.neighbors]
    return _render(case, cfgs)


def reachability_failure(case, k=0):
    """Withdraw a probed destination's loopback announcement."""
    cfgs = _devices(case)
    targets = [dst for _, dst in case.endpoints_of_interest
               if cfgs[dst].ospf or cfgs[dst].bgp]
    if not targets:
        return None
    dev = cfgs[targets[k % len(targets)]]
    lo = dev.interface("lo").address.network
    if dev.ospf is not None:
        dev.ospf.networks = [(n, a) for n, a in dev.ospf.networks if n != lo]
    if dev.bgp is not None:
        dev.bgp.networks = [n for n in dev.bgp.networks if n != lo]
    return _render(case, cfgs)


def syntax(case, k=0):
    lines = case.ground_truth.splitlines()
    at = [i for i, ln in enumerate(lines) if ln.strip().startswith("ip address")][k % 3]
    lines[at] = lines[at].rsplit("/", 1)[0] + "/33"
    return "\n".join(lines) + "\n"


BUILDERS = {
    "missing_interface": missing_interface,
    "naming_violation": naming_violation,
    "addressing_violation": addressing_violation,
    "adjacency_mismatch": adjacency_mismatch,
    "reachability_failure": reachability_failure,
    "syntax": syntax,
}


def fixture_set(corpus, per_category=5, passing=20):
    """``(label, case, candidate, expected category or None)`` over validation cases."""
    cases = sorted((e.case for e in corpus.split("validation")), key=lambda c: c.case_id)
    out = [(f"pass-{c.case_id}", c, c.ground_truth, None) for c in cases[:passing]]
    for category, build in BUILDERS.items():
        made = 0
        for k, c in enumerate(cases):
            text = build(copy.deepcopy(c), k)
            if text is None:
                continue
            out.append((f"{category}-{c.case_id}", c, text, category))
            made += 1
            if made == per_category:
                break
    return out
