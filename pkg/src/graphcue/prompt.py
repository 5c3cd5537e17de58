"""Structured prompts ``[target; reference; knowledge; constraints]`` and constraint refinement."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigSyntaxError, DuplicateDevice, MalformedReference, ReportCaseMismatch
from .graph import DEFAULT_SCHEMA, FeatureSchema, JsonGraph, serialize_graph
from .topology import DEVICE_KINDS, PROTOCOLS, TopologyCase
from .verifier.checks import VerifyReport
from .verifier.config import parse_config_text, split_device_blocks

CONSTRAINT_KINDS = (
    "attach_interface",
    "address_assignment",
    "naming",
    "daemon_activation",
    "neighbor_definition",
    "redistribution",
)
SECTION_MARKERS = ("### TARGET", "### REFERENCE", "### KNOWLEDGE", "### CONSTRAINTS")
SNIPPET_MARKER = "--- snippets"

KNOWLEDGE_V1 = """\
knowledge v1
config dialect: one 'device NAME' block per device; two-space indent per level.
  interface NAME / ip address A.B.C.D/LEN (LEN 8..32) / link LINK-ID
  router ospf / network PREFIX area N        (enables OSPF on interfaces inside PREFIX)
  router bgp ASN / neighbor ADDR remote-as N / network PREFIX
  ip route PREFIX NEXT-HOP
checks, in order:
  naming: device and interface names exactly as declared, link ids from the topology
  interface_state: every link endpoint configured, addressed and bound to its link
  addressing: unique addresses, both link ends in one subnet, one subnet per link
  adjacency: ospf needs same subnet and area on both ends; bgp needs mutual neighbors
    with matching AS numbers
  reachability: each probed endpoint pair forwards hop by hop to the peer loopback
"""


@dataclass(frozen=True)
class Constraint:
    kind: str
    subject: str
    directive: str
    origin: str = "initial"

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if not self.directive.strip():
            raise ValueError("constraint directive must be non-empty")

    @property
    def iteration(self) -> int | None:
        """Iteration of the report that produced this constraint, if any."""
        if self.origin == "initial":
            return None
        return int(self.origin.rsplit("-", 1)[1])

    @property
    def device(self) -> str:
        return self.subject.split("/", 1)[0]

    def render(self) -> str:
        return f"- [{self.kind}] {self.subject} ({self.origin}) :: {self.directive}"


_LINE = re.compile(r"^- \[(?P<kind>[a-z_]+)\] (?P<subject>\S+) \((?P<origin>[\w-]+)\) :: "
                   r"(?P<directive>.+)$")


def parse_constraints(text: str) -> list[Constraint]:
    out = []
    for line in text.splitlines():
        m = _LINE.match(line.strip())
        if m:
            out.append(Constraint(m["kind"], m["subject"], m["directive"], m["origin"]))
    return out


def report_origin(t: int) -> str:
    return f"report_iteration-{t}"


_DIRECTIVE_FORMS = (
    ("attach_interface", re.compile(r"^attach interface (\S+) of (\S+) "), "{1}/{0}"),
    ("attach_interface", re.compile(r"^configure (\S+) on (\S+) as "), "{1}/{0}"),
    ("daemon_activation", re.compile(r"^activate (ospf|bgp) on (\S+) "), "{1}/{0}"),
    ("daemon_activation", re.compile(r"^install static route \S+ on (\S+) "), "{0}/static"),
    ("naming", re.compile(r"^device (\S+) "), "{0}"),
    ("address_assignment", re.compile(r"^give (\S+) "), "{0}"),
    ("neighbor_definition", re.compile(r"^define (?:ospf|bgp) neighbor \S+ on (\S+?):"), "{0}"),
    ("redistribution", re.compile(r"^announce or redistribute routes towards \S+ on (\S+) "),
     "{0}"),
)
_CORRECTION = re.compile(r"^Correction after attempt (\d+): (.+)$")


def classify_directive(directive: str) -> tuple[str, str] | None:
    """Recover ``(kind, subject)`` from directive text written by this module."""
    for kind, pattern, subject in _DIRECTIVE_FORMS:
        m = pattern.match(directive)
        if m:
            return kind, subject.format(*m.groups())
    return None


def parse_prose_constraints(text: str) -> list[Constraint]:
    """Constraints from an unstructured prompt, where each directive is a sentence line."""
    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line.endswith("."):
            continue
        line = line[:-1]
        origin = "initial"
        m = _CORRECTION.match(line)
        if m:
            origin, line = report_origin(int(m[1])), m[2]
        found = classify_directive(line)
        if found is not None:
            out.append(Constraint(found[0], found[1], line, origin))
    return out


# initial constraints


def _daemon_directive(case: TopologyCase, k: int, dev: str) -> str:
    intent = case.intents[k]
    if intent.protocol == "ospf":
        return f"activate ospf on {dev} in area {intent.params['area']} (intent {k})"
    if intent.protocol == "bgp":
        return f"activate bgp on {dev} as AS {case.asn_of(intent, dev)} (intent {k})"
    prefix = intent.params.get("prefix", "0.0.0.0/0")
    return f"install static route {prefix} on {dev} towards its gateway (intent {k})"


def initial_constraints(case: TopologyCase, g: JsonGraph | None = None) -> list[Constraint]:
    out: list[Constraint] = []
    for link in case.links:
        for dev, iface in (link.a, link.b):
            pdev, piface = link.other(dev, iface)
            out.append(Constraint("attach_interface", f"{dev}/{iface}",
                                  f"attach interface {iface} of {dev} to link {link.link_id} "
                                  f"facing {pdev}:{piface}"))
    for k, intent in enumerate(case.intents):
        for dev in case.intent_members(intent):
            out.append(Constraint("daemon_activation", f"{dev}/{intent.protocol}",
                                  _daemon_directive(case, k, dev)))
    for dev in case.devices:
        names = ", ".join(i.name if i.address is None else f"{i.name}@{i.address}"
                          for i in dev.interfaces) or "(none)"
        out.append(Constraint("naming", dev.name,
                              f"device {dev.name} is a {dev.kind} declaring interfaces {names}"))
    return out


# prompt composition


@dataclass
class Prompt:
    target_section: str
    reference_section: str
    knowledge_section: str
    constraints: list[Constraint] = field(default_factory=list)
    structured: bool = True

    @property
    def rendered(self) -> str:
        if not self.structured:
            parts = [self.target_section, self.reference_section, self.knowledge_section]
            parts.append("\n".join(_prose(c) for c in self.constraints))
            return "\n\n".join(p.strip("\n") for p in parts if p.strip()) + "\n"
        body = [SECTION_MARKERS[0], self.target_section.rstrip("\n"),
                SECTION_MARKERS[1], self.reference_section.rstrip("\n"),
                SECTION_MARKERS[2], self.knowledge_section.rstrip("\n"),
                SECTION_MARKERS[3], "\n".join(c.render() for c in self.constraints)]
        return "\n".join(body) + "\n"

    def __str__(self):
        return self.rendered


def _prose(c: Constraint) -> str:
    if c.iteration is None:
        return c.directive + "."
    return f"Correction after attempt {c.iteration}: {c.directive}."


def split_sections(text: str) -> dict[str, str] | None:
    """Section bodies of a structured prompt, or ``None`` when markers are absent."""
    lines = text.splitlines()
    pos = []
    for marker in SECTION_MARKERS:
        try:
            pos.append(lines.index(marker))
        except ValueError:
            return None
    if pos != sorted(pos):
        return None
    names = ("target", "reference", "knowledge", "constraints")
    out = {}
    for k, name in enumerate(names):
        end = pos[k + 1] if k + 1 < len(pos) else len(lines)
        out[name] = "\n".join(lines[pos[k] + 1:end])
    return out


def _graph_profile(g: JsonGraph, schema: FeatureSchema = DEFAULT_SCHEMA):
    o_kind, o_proto = schema.offset("kind"), schema.offset("protocols")
    kinds, protos = {}, {}
    for i, node in enumerate(g.node_ids):
        kinds[node] = DEVICE_KINDS[int(np.argmax(g.X[i, o_kind:o_kind + len(DEVICE_KINDS)]))]
        protos[node] = {p for j, p in enumerate(PROTOCOLS) if g.X[i, o_proto + j] > 0} or {"none"}
    return kinds, protos


def _block_protocols(block: str) -> set[str]:
    found = set()
    for line in block.splitlines():
        tok = line.split()
        if tok[:2] == ["router", "ospf"]:
            found.add("ospf")
        elif tok[:2] == ["router", "bgp"]:
            found.add("bgp")
        elif tok[:2] == ["ip", "route"]:
            found.add("static")
    return found or {"none"}


def select_snippets(g_t: JsonGraph, g_r: JsonGraph, conf_r: str) -> list[tuple[str, str]]:
    """Reference device blocks whose kind and protocol set intersect the target's.

    One block is kept per distinct (kind, protocol set) signature.
    """
    t_kinds, t_protos = _graph_profile(g_t)
    r_kinds, _ = _graph_profile(g_r)
    want_kinds = set(t_kinds.values())
    want_protos = set().union(*t_protos.values()) if t_protos else set()
    picked, seen = [], set()
    for name, block in split_device_blocks(conf_r):
        if name not in r_kinds:
            raise MalformedReference(f"reference config names unknown device {name!r}")
        protos = _block_protocols(block)
        if r_kinds[name] not in want_kinds or not protos & want_protos:
            continue
        sig = (r_kinds[name], frozenset(protos))
        if sig in seen:
            continue
        seen.add(sig)
        picked.append((name, block))
    return picked


def compose_prompt(g_t: JsonGraph, retrieved: tuple[JsonGraph, str] | None, knowledge: str = "",
                   constraints: list[Constraint] | None = None, structured: bool = True) -> Prompt:
    target = serialize_graph(g_t)
    reference = ""
    if retrieved is not None:
        g_r, conf_r = retrieved
        try:
            parse_config_text(conf_r)
        except (ConfigSyntaxError, DuplicateDevice) as exc:
            raise MalformedReference(f"reference config does not parse: {exc}") from exc
        blocks = select_snippets(g_t, g_r, conf_r)
        reference = serialize_graph(g_r) + "\n" + SNIPPET_MARKER + "\n"
        reference += "".join(block for _, block in blocks)
    return Prompt(target, reference, knowledge, list(constraints or []), structured)


# refinement


def _find(current: list[Constraint], kind: str, subject: str) -> Constraint | None:
    for c in current:
        if c.kind == kind and c.subject == subject:
            return c
    return None


def _base_directive(current, kind, subject, fallback: str) -> str:
    c = _find(current, kind, subject)
    if c is None:
        return fallback
    return c.directive.split("; fix: ")[0]


def _param_from_daemon(current, device: str, protocol: str, pattern: str) -> str | None:
    c = _find(current, "daemon_activation", f"{device}/{protocol}")
    if c is None:
        return None
    m = re.search(pattern, c.directive)
    return m.group(1) if m else None


def _constraints_for(current: list[Constraint], f) -> list[tuple[str, str, str]]:
    if f.device is None:
        return []
    observed = f.observed
    if f.category == "missing_interface":
        subj = f"{f.device}/{f.interface}"
        base = _base_directive(current, "attach_interface", subj,
                               f"configure {f.interface} on {f.device} as {f.expected}")
        return [("attach_interface", subj, f"{base}; fix: {observed}")]
    if f.category == "naming_violation":
        base = _base_directive(current, "naming", f.device,
                               f"device {f.device} must use only declared names")
        what = f"{f.interface}: {observed}" if f.interface else observed
        return [("naming", f.device, f"{base}; fix: {what}")]
    if f.category == "addressing_violation":
        subj = f"{f.device}/{f.interface}" if f.interface else f.device
        peer = f" shared with {f.related[0]}" if f.related else ""
        return [("address_assignment", subj,
                 f"give {subj} a unique host address in the link subnet{peer}; fix: {observed}")]
    if f.category == "adjacency_mismatch":
        subj = f"{f.device}/{f.interface}"
        peer = f.related[0] if f.related else "its peer"
        if f.expected.startswith("ospf"):
            area = _param_from_daemon(current, f.device, "ospf", r"area (\d+)")
            if area is None:
                m = re.search(r"area (\d+)", f.expected)
                area = m.group(1) if m else "?"
            text = (f"define ospf neighbor {peer} on {subj}: announce the link subnet "
                    f"in area {area}")
        else:
            local = _param_from_daemon(current, f.device, "bgp", r"AS (\d+)") or "?"
            remote = _param_from_daemon(current, peer, "bgp", r"AS (\d+)") or "?"
            text = (f"define bgp neighbor {peer} on {subj}: router bgp {local} with "
                    f"neighbor at {peer}'s link address remote-as {remote}")
        return [("neighbor_definition", subj, f"{text}; fix: {observed}")]
    if f.category == "reachability_failure":
        m = re.match(r"reach (\S+)", f.expected)
        dst = m.group(1) if m else (f.related[-1] if f.related else f.device)
        path = observed.rsplit("path ", 1)[-1]
        stuck = path.split(">")[-1] if path else f.device
        return [
            ("address_assignment", dst,
             f"give {dst} an addressed loopback and announce it in its routing protocol"),
            ("redistribution", stuck,
             f"announce or redistribute routes towards {dst} on {stuck} (failing path {path})"),
        ]
    return []


def refine_constraints(current: list[Constraint], report: VerifyReport, t: int,
                       case_id: str | None = None) -> list[Constraint]:
    """Fold report failures into the constraint set; the newest directive wins per subject."""
    if case_id is not None and report.case_id and report.case_id != case_id:
        raise ReportCaseMismatch(f"report for {report.case_id}, constraints for {case_id}")
    if report.b == 1:
        return list(current)
    out = list(current)
    pos = {(c.kind, c.subject): k for k, c in enumerate(out)}
    for f in report.failures:
        for kind, subject, directive in _constraints_for(current, f):
            c = Constraint(kind, subject, directive, report_origin(t))
            key = (kind, subject)
            if key in pos:
                out[pos[key]] = c
            else:
                pos[key] = len(out)
                out.append(c)
    return out
