"""The five check families and the machine-readable verification report."""

from __future__ import annotations

import json
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field

from ..errors import ConfigSyntaxError, DuplicateDevice, ResourceLimitExceeded
from ..graph import JsonGraph
from ..topology import TopologyCase
from .config import parse_config_text
from .network import LOG_TAIL, StepBudgetExceeded, VerifyLimits, VerifySession, provision

CHECK_ORDER = ("naming", "interface_state", "addressing", "adjacency", "reachability")
CATEGORY_OF_CHECK = {
    "naming": "naming_violation",
    "interface_state": "missing_interface",
    "addressing": "addressing_violation",
    "adjacency": "adjacency_mismatch",
    "reachability": "reachability_failure",
}
FAILURE_CATEGORIES = tuple(CATEGORY_OF_CHECK.values()) + ("syntax",)
LOG_LINES_PER_DEVICE = LOG_TAIL


@dataclass
class Failure:
    category: str
    device: str | None
    interface: str | None
    expected: str
    observed: str
    # devices involved beyond ``device``: link peer, path, destination
    related: list[str] = field(default_factory=list)

    def devices(self) -> set[str]:
        out = set(self.related)
        if self.device:
            out.add(self.device)
        return out


@dataclass
class CheckResult:
    name: str
    status: str  # pass | fail | skipped | timeout
    details: list[str] = field(default_factory=list)


@dataclass
class VerifyReport:
    b: int
    checks: list[CheckResult]
    failures: list[Failure]
    logs: list[str]
    elapsed_ms: float
    seed: int
    case_id: str = ""

    @property
    def passed(self) -> bool:
        return self.b == 1

    def to_dict(self, include_elapsed: bool = True) -> dict:
        out = {
            "b": self.b,
            "case_id": self.case_id,
            "checks": [asdict(c) for c in self.checks],
            "failures": [asdict(f) for f in self.failures],
            "logs": list(self.logs),
            "seed": self.seed,
        }
        if include_elapsed:
            out["elapsed_ms"] = round(self.elapsed_ms, 3)
        return out

    def to_json(self, include_elapsed: bool = True) -> str:
        return json.dumps(self.to_dict(include_elapsed), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "VerifyReport":
        return cls(
            b=int(doc["b"]),
            checks=[CheckResult(**c) for c in doc["checks"]],
            failures=[Failure(**f) for f in doc["failures"]],
            logs=list(doc["logs"]),
            elapsed_ms=float(doc.get("elapsed_ms", 0.0)),
            seed=int(doc["seed"]),
            case_id=doc.get("case_id", ""),
        )

    def failure_count(self) -> int:
        return len(self.failures)


def _check_naming(s: VerifySession) -> list[Failure]:
    case, out = s.case, []
    link_ids = {l.link_id for l in case.links}
    known = set(case.device_names())
    for name in sorted(set(s.configs) - known):
        out.append(Failure("naming_violation", name, None,
                           "only devices declared in the case", f"unknown device {name}"))
    for dev in case.devices:
        cfg = s.configs.get(dev.name)
        if cfg is None:
            out.append(Failure("naming_violation", dev.name, None,
                               f"device block {dev.name}", "missing"))
            continue
        declared = dev.interface_names()
        seen = set()
        for st in cfg.interfaces:
            s.tick()
            if st.name not in declared:
                out.append(Failure("naming_violation", dev.name, st.name,
                                   f"one of {', '.join(declared) or '(none)'}",
                                   f"interface {st.name}"))
            elif st.name in seen:
                out.append(Failure("naming_violation", dev.name, st.name,
                                   "each interface configured once", "duplicate stanza"))
            seen.add(st.name)
            if st.link is not None and st.link not in link_ids:
                out.append(Failure("naming_violation", dev.name, st.name,
                                   "a link id from the case", f"link {st.link}"))
    return out


def _check_interfaces(s: VerifySession) -> list[Failure]:
    out = []
    for link in s.case.links:
        for dev, iface in (link.a, link.b):
            s.tick()
            st = s.stanza(dev, iface)
            peer = link.other(dev, iface)[0]
            expected = f"{iface} addressed and bound to {link.link_id}"
            if st is None:
                observed = "interface not configured"
            elif st.address is None:
                observed = "no address"
            elif st.link != link.link_id:
                observed = f"bound to {st.link or 'nothing'}"
            else:
                s.log(dev, f"interface {iface} on {link.link_id} state up")
                continue
            s.log(dev, f"interface {iface} on {link.link_id} state down: {observed}")
            out.append(Failure("missing_interface", dev, iface, expected, observed, [peer]))
    return out


def _check_addressing(s: VerifySession) -> list[Failure]:
    out = []
    owners = defaultdict(list)
    for dev in s.devices:
        cfg = s.configs.get(dev)
        if cfg is None:
            continue
        for st in cfg.interfaces:
            s.tick()
            if st.address is None:
                continue
            owners[st.address.ip].append((dev, st.name))
            net = st.address.network
            if net.prefixlen <= 30 and st.address.ip in (net.network_address, net.broadcast_address):
                out.append(Failure("addressing_violation", dev, st.name,
                                   "a host address inside the subnet",
                                   f"{st.address.with_prefixlen} is not usable"))
    for ip, where in sorted(owners.items()):
        if len(where) > 1:
            for dev, iface in where:
                out.append(Failure("addressing_violation", dev, iface, f"{ip} unique",
                                   f"{ip} also on " + ", ".join(f"{d}/{i}" for d, i in where
                                                                if (d, i) != (dev, iface)),
                                   sorted({d for d, _ in where} - {dev})))
    link_subnets = defaultdict(list)
    for link in s.case.links:
        sa, sb = s.stanza(*link.a), s.stanza(*link.b)
        if sa is None or sb is None or sa.address is None or sb.address is None:
            continue
        if sa.address.network != sb.address.network:
            for (dev, iface), st, other in ((link.a, sa, sb), (link.b, sb, sa)):
                out.append(Failure("addressing_violation", dev, iface,
                                   f"same subnet as peer on {link.link_id}",
                                   f"{st.address.with_prefixlen} vs {other.address.with_prefixlen}",
                                   [link.other(dev, iface)[0]]))
        else:
            link_subnets[sa.address.network].append(link)
    for net, links in sorted(link_subnets.items()):
        if len(links) > 1:
            for link in links:
                for dev, iface in (link.a, link.b):
                    out.append(Failure("addressing_violation", dev, iface,
                                       f"subnet {net} used by one link only",
                                       "shared by " + ", ".join(l.link_id for l in links),
                                       [link.other(dev, iface)[0]]))
    return out


def _ospf_problem(s: VerifySession, link, area: int) -> str | None:
    ends = [link.a, link.b]
    for dev, iface in ends:
        if not s.is_up(dev, iface):
            return f"{dev}/{iface} is down"
    sa, sb = s.stanza(*link.a), s.stanza(*link.b)
    if sa.address.network != sb.address.network:
        return "endpoints in different subnets"
    for (dev, _), st in zip(ends, (sa, sb)):
        got = s.ospf_area(dev, st)
        if got is None:
            return f"{dev} does not announce {st.address.network}"
        if got != area:
            return f"{dev} runs area {got}"
    return None


def _bgp_problem(s: VerifySession, case: TopologyCase, intent, link) -> str | None:
    for dev, iface in (link.a, link.b):
        if not s.is_up(dev, iface):
            return f"{dev}/{iface} is down"
    for (dev, iface) in (link.a, link.b):
        pdev, piface = link.other(dev, iface)
        cfg = s.configs[dev]
        want_local, want_remote = case.asn_of(intent, dev), case.asn_of(intent, pdev)
        if cfg.bgp is None:
            return f"{dev} has no bgp process"
        if cfg.bgp.asn != want_local:
            return f"{dev} runs AS {cfg.bgp.asn}, expected {want_local}"
        paddr = s.stanza(pdev, piface).address.ip
        remote = [r for a, r in cfg.bgp.neighbors if a == paddr]
        if not remote:
            return f"{dev} lacks neighbor {paddr}"
        if want_remote not in remote:
            return f"{dev} neighbor {paddr} remote-as {remote[0]}, expected {want_remote}"
    return None


def _check_adjacency(s: VerifySession) -> list[Failure]:
    case, out = s.case, []
    for k, intent in enumerate(case.intents):
        if intent.protocol not in ("ospf", "bgp"):
            continue
        members = set(case.intent_members(intent))
        for link in case.links:
            s.tick()
            da, db = link.devices()
            if da not in members or db not in members:
                continue
            if intent.protocol == "ospf":
                area = int(intent.params["area"])
                problem = _ospf_problem(s, link, area)
                expected = f"ospf adjacency in area {area}"
            else:
                problem = _bgp_problem(s, case, intent, link)
                expected = (f"bgp session AS {case.asn_of(intent, da)} <-> "
                            f"AS {case.asn_of(intent, db)}")
            if problem is None:
                continue
            for dev, iface in (link.a, link.b):
                peer = link.other(dev, iface)[0]
                s.log(dev, f"{intent.protocol} adjacency with {peer} on {link.link_id} "
                           f"not formed: {problem}")
                out.append(Failure("adjacency_mismatch", dev, iface,
                                   f"{expected} with {peer} on {link.link_id}", problem, [peer]))
    return out


def _check_reachability(s: VerifySession) -> list[Failure]:
    out = []
    for src, dst in s.case.endpoints_of_interest:
        tr = s.trace(src, dst)
        if tr.ok:
            s.log(src, f"reach {dst} via {'>'.join(tr.path)}")
            continue
        s.log(src, f"reach {dst} failed: {tr.reason}")
        related = [d for d in tr.path if d != src] + ([dst] if dst not in tr.path else [])
        out.append(Failure("reachability_failure", src, None, f"reach {dst}",
                           f"{tr.reason}; path {'>'.join(tr.path)}", related))
    return out


_CHECKS = {
    "naming": _check_naming,
    "interface_state": _check_interfaces,
    "addressing": _check_addressing,
    "adjacency": _check_adjacency,
    "reachability": _check_reachability,
}


def _trim_logs(session: VerifySession, extra: list[str]) -> list[str]:
    lines = []
    for dev in sorted(session.logs):
        for msg in session.logs[dev][-LOG_LINES_PER_DEVICE:]:
            lines.append(f"{dev}: {msg}")
    return extra + lines


def _candidate_text(candidate) -> str:
    return candidate if isinstance(candidate, str) else candidate.text


def verify(g: JsonGraph | None, case: TopologyCase, candidate, seed: int = 0,
           limits: VerifyLimits = VerifyLimits(), session: VerifySession | None = None
           ) -> VerifyReport:
    """Run every check family on ``candidate``; failures are data, never exceptions.

    Passing an existing ``session`` reuses it; it is reset before and after use.
    """
    t0 = time.perf_counter()
    text = _candidate_text(candidate)

    def finish(checks, failures, logs):
        return VerifyReport(0 if failures else 1, checks, failures, logs,
                            (time.perf_counter() - t0) * 1000.0, seed, case.case_id)

    try:
        if session is None:
            session = provision(g, case, seed, limits)
    except ResourceLimitExceeded as exc:
        checks = [CheckResult(n, "skipped") for n in CHECK_ORDER]
        return finish(checks, [Failure("resource_limit", None, None,
                                       f"at most {limits.max_devices} devices", str(exc))],
                      [f"verifier: {exc}"])
    session.reset()

    try:
        parsed = parse_config_text(text)
    except (ConfigSyntaxError, DuplicateDevice) as exc:
        checks = [CheckResult(n, "skipped") for n in CHECK_ORDER]
        return finish(checks, [Failure("syntax", None, None, "parseable config", str(exc))],
                      [f"parser: {exc}"])

    session.apply(parsed.devices)
    checks, failures = [], []
    try:
        for name in CHECK_ORDER:
            if name == "reachability":
                try:
                    session.compute_routes()
                except StepBudgetExceeded:
                    checks.append(CheckResult(name, "timeout", ["route computation over budget"]))
                    failures.append(Failure(CATEGORY_OF_CHECK[name], None, None,
                                            "routes converge", "step budget exhausted"))
                    continue
            try:
                found = _CHECKS[name](session)
            except StepBudgetExceeded:
                checks.append(CheckResult(name, "timeout", ["step budget exhausted"]))
                failures.append(Failure(CATEGORY_OF_CHECK[name], None, None,
                                        "check completes", "step budget exhausted"))
                continue
            if name == "reachability" and not session.converged:
                found.append(Failure(CATEGORY_OF_CHECK[name], None, None,
                                     "bgp converges", "route propagation round limit hit"))
                checks.append(CheckResult(name, "timeout", [_describe(f) for f in found]))
            else:
                checks.append(CheckResult(name, "fail" if found else "pass",
                                          [_describe(f) for f in found]))
            failures.extend(found)
        logs = _trim_logs(session, [f"parser: {w}" for w in parsed.warnings])
    finally:
        session.reset()
    return finish(checks, failures, logs)


def _describe(f: Failure) -> str:
    where = f.device or "-"
    if f.interface:
        where += f"/{f.interface}"
    return f"{where}: expected {f.expected}; observed {f.observed}"


def reachability_matrix(case: TopologyCase, candidate, seed: int = 0,
                        limits: VerifyLimits = VerifyLimits()) -> dict[tuple[str, str], bool]:
    """Forwarding outcome for every ordered device pair under ``candidate``."""
    session = provision(None, case, seed, limits)
    session.apply(parse_config_text(_candidate_text(candidate)).devices)
    session.compute_routes()
    names = case.device_names()
    return {(a, b): session.trace(a, b).ok for a in names for b in names if a != b}
