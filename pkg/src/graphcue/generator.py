"""Candidate generators: an HTTP client for hosted models and a deterministic mock.

The mock reads everything it needs from the prompt text. It rebuilds the
case from the constraint directives, renders the ground-truth configuration
and then injects seeded defects, repairing those that feedback constraints
cover at a fixed rate per refinement round. Without delimiters it cannot
isolate the reference snippets and repairs at half rate, so prompt
ablations degrade it in a measurable way.
"""

from __future__ import annotations

import copy
import functools
import hashlib
import ipaddress
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from .corpus import covered_links, ground_truth_config, reach_group
from .errors import (
    EmptyCompletion,
    GraphCueError,
    MalformedPrompt,
    RemoteProtocolError,
    RemoteTimeout,
)
from .graph import deserialize_graph
from .prompt import (
    Constraint,
    Prompt,
    parse_constraints,
    parse_prose_constraints,
    split_sections,
    SNIPPET_MARKER,
    _block_protocols,
)
from .topology import Device, Interface, Link, ProtocolIntent, TopologyCase
from .verifier.config import DeviceConfig, parse_config, render_config, split_device_blocks

logger = logging.getLogger(__name__)

DEFECT_CATEGORIES = (
    "missing_interface",
    "naming_violation",
    "addressing_violation",
    "adjacency_mismatch",
    "reachability_failure",
)
# constraint kinds whose feedback directives let the mock repair a defect
REPAIRED_BY = {
    "missing_interface": ("attach_interface",),
    "naming_violation": ("naming",),
    "addressing_violation": ("address_assignment",),
    "adjacency_mismatch": ("neighbor_definition",),
    "reachability_failure": ("address_assignment", "redistribution"),
    "reference_gap": ("neighbor_definition",),
}
_INTERFACE_LEVEL = {"missing_interface", "naming_violation", "addressing_violation"}


@dataclass(frozen=True)
class MockSettings:
    seed: int = 0
    defect_count: int = 0
    defects_fixed_per_round: int = 1
    categories: tuple[str, ...] = DEFECT_CATEGORIES
    unfixable: frozenset[str] = frozenset()
    reference_gaps: bool = True

    def __post_init__(self):
        if self.defect_count < 0:
            raise ValueError("defect_count must be non-negative")
        if self.defects_fixed_per_round < 0:
            raise ValueError("defects_fixed_per_round must be non-negative")
        bad = set(self.categories) - set(DEFECT_CATEGORIES)
        if bad:
            raise ValueError(f"unknown defect categories {sorted(bad)}")


@dataclass(frozen=True)
class RemoteSettings:
    endpoint: str
    model: str = ""
    api_key: str | None = field(default=None, repr=False)
    timeout: float = 60.0
    provider: str = "generic"
    max_in_flight: int = 4

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")
        if self.provider not in PROVIDERS:
            raise ValueError(f"unknown provider {self.provider!r}; known: {sorted(PROVIDERS)}")

    @classmethod
    def from_env(cls, env=None, **overrides) -> "RemoteSettings":
        env = os.environ if env is None else env
        url = overrides.pop("endpoint", None) or env.get("GRAPHCUE_API_URL")
        if not url:
            raise ValueError("GRAPHCUE_API_URL is not set")
        return cls(endpoint=url,
                   model=overrides.pop("model", None) or env.get("GRAPHCUE_MODEL", ""),
                   api_key=overrides.pop("api_key", None) or env.get("GRAPHCUE_API_KEY"),
                   **overrides)


@dataclass(frozen=True)
class GeneratorBackend:
    kind: str
    mock: MockSettings | None = None
    remote: RemoteSettings | None = None

    def __post_init__(self):
        if self.kind == "mock" and self.mock is None:
            raise ValueError("mock backend needs MockSettings")
        if self.kind == "remote" and self.remote is None:
            raise ValueError("remote backend needs RemoteSettings")
        if self.kind not in ("mock", "remote"):
            raise ValueError(f"backend kind must be 'mock' or 'remote', not {self.kind!r}")

    @classmethod
    def mock_backend(cls, **kw) -> "GeneratorBackend":
        return cls("mock", mock=MockSettings(**kw))

    @classmethod
    def remote_backend(cls, **kw) -> "GeneratorBackend":
        return cls("remote", remote=RemoteSettings.from_env(**kw))

    @property
    def label(self) -> str:
        if self.kind == "mock":
            return "mock"
        return f"remote:{self.remote.model or self.remote.provider}"


@dataclass
class CandidateConfig:
    text: str
    backend: str
    latency_ms: float = 0.0
    iteration: int | None = None
    metadata: dict = field(default_factory=dict)


def generate(backend: GeneratorBackend, prompt: Prompt | str,
             iteration: int | None = None) -> CandidateConfig:
    text = prompt.rendered if isinstance(prompt, Prompt) else str(prompt)
    start = time.perf_counter()
    if backend.kind == "mock":
        body, meta = mock_generate(backend.mock, text)
    else:
        body, meta = remote_generate(backend.remote, text)
    latency = (time.perf_counter() - start) * 1000.0
    return CandidateConfig(body, backend.label, latency, iteration, meta)


# remote backend


@dataclass(frozen=True)
class ProviderAdapter:
    """Request body builder, header builder and response text extractor."""

    request: object
    headers: object
    extract: object


def _bearer(key):
    return {"Authorization": f"Bearer {key}"} if key else {}


PROVIDERS: dict[str, ProviderAdapter] = {
    "generic": ProviderAdapter(
        lambda model, prompt: {"model": model, "prompt": prompt},
        _bearer,
        lambda doc: doc["text"]),
    "openai": ProviderAdapter(
        lambda model, prompt: {"model": model,
                               "messages": [{"role": "user", "content": prompt}]},
        _bearer,
        lambda doc: doc["choices"][0]["message"]["content"]),
    "anthropic": ProviderAdapter(
        lambda model, prompt: {"model": model, "max_tokens": 4096,
                               "messages": [{"role": "user", "content": prompt}]},
        lambda key: ({"x-api-key": key} if key else {}) | {"anthropic-version": "2023-06-01"},
        lambda doc: "".join(b["text"] for b in doc["content"] if b.get("type") == "text")),
}

_FENCE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)
_SEMAPHORES: dict[tuple[str, int], threading.BoundedSemaphore] = {}
_SEM_LOCK = threading.Lock()


def extract_config(body: str) -> str:
    """First fenced block of ``body``, or the whole body if it has none."""
    m = _FENCE.search(body)
    return m.group(1) if m else body


def _semaphore(settings: RemoteSettings) -> threading.BoundedSemaphore:
    key = (settings.endpoint, settings.max_in_flight)
    with _SEM_LOCK:
        if key not in _SEMAPHORES:
            _SEMAPHORES[key] = threading.BoundedSemaphore(settings.max_in_flight)
        return _SEMAPHORES[key]


def remote_generate(settings: RemoteSettings, text: str) -> tuple[str, dict]:
    adapter = PROVIDERS[settings.provider]
    deadline = time.monotonic() + settings.timeout
    sem = _semaphore(settings)
    if not sem.acquire(timeout=settings.timeout):
        raise RemoteTimeout("no request slot became free before the timeout")
    try:
        remaining = max(deadline - time.monotonic(), 1e-3)
        try:
            resp = requests.post(settings.endpoint,
                                 json=adapter.request(settings.model, text),
                                 headers=adapter.headers(settings.api_key),
                                 timeout=(remaining, remaining), stream=True)
            chunks = []
            for chunk in resp.iter_content(chunk_size=65536):
                chunks.append(chunk)
                if time.monotonic() > deadline:
                    raise RemoteTimeout(f"response not complete within {settings.timeout}s")
            raw = b"".join(chunks)
        except requests.Timeout as exc:
            raise RemoteTimeout(f"no response within {settings.timeout}s") from exc
        except requests.RequestException as exc:
            raise RemoteProtocolError(f"request failed: {exc}") from exc
    finally:
        sem.release()
    if resp.status_code != 200:
        raise RemoteProtocolError(f"HTTP {resp.status_code}: {raw[:200]!r}")
    try:
        completion = adapter.extract(json.loads(raw))
    except (ValueError, KeyError, IndexError, TypeError, AttributeError) as exc:
        raise RemoteProtocolError(f"unexpected response shape: {exc}") from exc
    if not isinstance(completion, str):
        raise RemoteProtocolError("completion text is not a string")
    config = extract_config(completion)
    if not config.strip():
        raise EmptyCompletion("model returned no configuration text")
    return config, {"provider": settings.provider, "model": settings.model}


# mock backend


@dataclass(frozen=True)
class Defect:
    category: str
    device: str
    interface: str | None = None
    protocol: str | None = None


@dataclass
class PromptView:
    """What the mock recovers from a prompt."""

    target: str
    constraints: list[Constraint]
    reference_protocols: set[str] | None
    structured: bool


def read_prompt(text: str) -> PromptView:
    sections = split_sections(text)
    if sections is not None:
        target = sections["target"].strip()
        constraints = parse_constraints(sections["constraints"])
        ref = sections["reference"]
        protos: set[str] = set()
        if SNIPPET_MARKER in ref:
            snippets = ref.split(SNIPPET_MARKER, 1)[1]
            for _, block in split_device_blocks(snippets):
                protos |= _block_protocols(block)
        return PromptView(target, constraints, protos, True)
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MalformedPrompt("empty prompt")
    return PromptView(lines[0].strip(), parse_prose_constraints(text), None, False)


_ATTACH = re.compile(r"^attach interface (\S+) of (\S+) to link (\S+) facing (\S+):(\S+)$")
_NAMING = re.compile(r"^device (\S+) is a (\S+) declaring interfaces (.+)$")
_OSPF = re.compile(r"^activate ospf on (\S+) in area (\d+) \(intent (\d+)\)$")
_BGP = re.compile(r"^activate bgp on (\S+) as AS (\d+) \(intent (\d+)\)$")
_STATIC = re.compile(r"^install static route (\S+) on (\S+) towards its gateway \(intent (\d+)\)$")


def case_from_constraints(case_id: str, constraints: list[Constraint]) -> TopologyCase:
    """Rebuild the topology facts stated by initial constraints."""
    devices, links, seen_links = [], [], set()
    members: dict[int, dict] = {}
    for c in constraints:
        # refined directives keep the original fact before "; fix: "
        text = c.directive.split("; fix: ")[0]
        if c.kind == "naming" and (m := _NAMING.match(text)):
            ifaces = []
            if m[3] != "(none)":
                for item in m[3].split(", "):
                    name, _, addr = item.partition("@")
                    ifaces.append(Interface(name, addr or None))
            devices.append(Device(m[1], m[2], tuple(ifaces)))
        elif c.kind == "attach_interface" and (m := _ATTACH.match(text)):
            if m[3] not in seen_links:
                seen_links.add(m[3])
                links.append(Link((m[2], m[1]), (m[4], m[5]), m[3]))
        elif c.kind == "daemon_activation":
            for proto, pattern in (("ospf", _OSPF), ("bgp", _BGP)):
                m = pattern.match(text)
                if m:
                    slot = members.setdefault(int(m[3]), {"protocol": proto, "devices": []})
                    slot["devices"].append(m[1])
                    if proto == "ospf":
                        slot["area"] = int(m[2])
                    else:
                        slot.setdefault("asn", {})[m[1]] = int(m[2])
            m = _STATIC.match(text)
            if m:
                slot = members.setdefault(int(m[3]), {"protocol": "static", "devices": []})
                slot["devices"].append(m[2])
                slot["prefix"] = m[1]
    if not devices:
        raise MalformedPrompt("prompt states no device facts")
    intents = []
    for k in range(max(members, default=-1) + 1):
        slot = dict(members.get(k, {"protocol": "static", "devices": []}))
        proto = slot.pop("protocol")
        intents.append(ProtocolIntent(proto, slot))
    return TopologyCase(case_id, devices, links, intents)


def _draw_key(seed: int, target: str) -> int:
    return int.from_bytes(hashlib.sha256(f"{seed}\0{target}".encode()).digest()[:8], "little")


def _slots(case: TopologyCase, base: dict[str, DeviceConfig]) -> dict[str, list[Defect]]:
    member = case.memberships()
    routing = {d for d, ks in member.items()
               if any(case.intents[k].protocol in ("ospf", "bgp") for k in ks)}
    endpoints = [end for link in case.links for end in (link.a, link.b)]
    out = {cat: [Defect(cat, d, i) for d, i in endpoints] for cat in _INTERFACE_LEVEL}
    adj = []
    for dev, proto in _peered(case):
        adj.append(Defect("adjacency_mismatch", dev, protocol=proto))
    out["adjacency_mismatch"] = adj
    reach = []
    anchor = case.devices[0].name
    probed = set(reach_group(case, anchor))  # destinations the verifier will probe
    for dev in case.device_names():
        cfg = base[dev]
        if dev == anchor:
            if cfg.static_routes:
                reach.append(Defect("reachability_failure", dev))
        elif (dev in probed and dev in routing and cfg.interface("lo") is not None
              and _announces_lo(cfg)):
            reach.append(Defect("reachability_failure", dev))
    out["reachability_failure"] = reach
    return out


def _peered(case: TopologyCase) -> list[tuple[str, str]]:
    """(device, protocol) pairs with a covered link to a peer in the same intent."""
    member = case.memberships()
    found = []
    for link in covered_links(case):
        u, v = link.devices()
        for k in sorted(set(member[u]) & set(member[v])):
            proto = case.intents[k].protocol
            if proto in ("ospf", "bgp"):
                for d in (u, v):
                    if (d, proto) not in found:
                        found.append((d, proto))
    order = {d: i for i, d in enumerate(case.device_names())}
    return sorted(found, key=lambda p: (order[p[0]], p[1]))


def _announces_lo(cfg: DeviceConfig) -> bool:
    lo = cfg.interface("lo").address
    if lo is None:
        return False
    nets = [n for n, _ in cfg.ospf.networks] if cfg.ospf else []
    nets += cfg.bgp.networks if cfg.bgp else []
    return lo.network in nets


def draw_defects(case: TopologyCase, base: dict[str, DeviceConfig], settings: MockSettings,
                 target: str) -> list[Defect]:
    """Seeded choice of ``defect_count`` defects, on distinct devices when possible."""
    rng = np.random.default_rng(_draw_key(settings.seed, target))
    slots = _slots(case, base)
    chosen: list[Defect] = []
    used_dev, used_slot = set(), set()

    def key(d: Defect):
        return (d.device, d.interface) if d.category in _INTERFACE_LEVEL else (d.category, d.device)

    for _ in range(settings.defect_count):
        cats = [settings.categories[i] for i in rng.permutation(len(settings.categories))]
        pick = None
        for strict in (True, False):
            for cat in cats:
                cands = [d for d in slots.get(cat, []) if key(d) not in used_slot
                         and (not strict or d.device not in used_dev)]
                if cands:
                    pick = cands[int(rng.integers(len(cands)))]
                    break
            if pick:
                break
        if pick is None:
            logger.warning("case %s: only %d feasible defects", case.case_id, len(chosen))
            break
        chosen.append(pick)
        used_dev.add(pick.device)
        used_slot.add(key(pick))
    return chosen


def gap_defects(case: TopologyCase, reference_protocols: set[str] | None) -> list[Defect]:
    """One defect per routing device whose protocol no reference snippet shows."""
    have = reference_protocols or set()
    return [Defect("reference_gap", d, protocol=p) for d, p in _peered(case) if p not in have]


def _apply(cfgs: dict[str, DeviceConfig], defect: Defect, n: int) -> None:
    cfg = cfgs[defect.device]
    cat = defect.category
    if cat == "missing_interface":
        cfg.interfaces = [i for i in cfg.interfaces if i.name != defect.interface]
    elif cat == "naming_violation":
        st = cfg.interface(defect.interface)
        if st is not None:
            upper = st.name.upper()
            st.name = upper if upper != st.name else st.name + "_x"
    elif cat == "addressing_violation":
        st = cfg.interface(defect.interface)
        if st is not None and st.address is not None:
            plen = max(st.address.network.prefixlen, 16)
            st.address = ipaddress.IPv4Interface(f"172.16.{n % 256}.1/{plen}")
    elif cat == "adjacency_mismatch":
        if defect.protocol == "ospf" and cfg.ospf is not None:
            cfg.ospf.networks = [(net, area + 1) for net, area in cfg.ospf.networks]
        elif cfg.bgp is not None and cfg.bgp.neighbors:
            addr, ras = cfg.bgp.neighbors[0]
            cfg.bgp.neighbors[0] = (addr, ras + 1000)
    elif cat == "reachability_failure":
        lo = cfg.interface("lo")
        if lo is not None and lo.address is not None:
            if cfg.ospf:
                cfg.ospf.networks = [p for p in cfg.ospf.networks if p[0] != lo.address.network]
            if cfg.bgp:
                cfg.bgp.networks = [p for p in cfg.bgp.networks if p != lo.address.network]
        else:
            cfg.static_routes = []
    elif cat == "reference_gap":
        if defect.protocol == "ospf" and cfg.ospf is not None:
            cfg.ospf.networks = []
        elif defect.protocol == "bgp" and cfg.bgp is not None:
            cfg.bgp.neighbors = []


def _covered(defect: Defect, feedback: list[Constraint]) -> bool:
    kinds = REPAIRED_BY[defect.category]
    return any(c.kind in kinds and c.device == defect.device for c in feedback)


@functools.lru_cache(maxsize=256)
def _mock_base(target: str, facts: tuple[tuple[str, str], ...]):
    """Case, parsed ground truth and target graph for one prompt; cached, never mutated."""
    try:
        g = deserialize_graph(target)
    except (GraphCueError, ValueError, KeyError, TypeError) as exc:
        raise MalformedPrompt(f"target section is not a graph: {exc}") from exc
    case = case_from_constraints(g.case_id or "target",
                                 [Constraint(k, "-", d) for k, d in facts])
    try:
        base_text = ground_truth_config(case)
    except (GraphCueError, KeyError, ValueError) as exc:
        raise MalformedPrompt(f"constraints do not describe a usable topology: {exc}") from exc
    return case, {d.name: d for d in parse_config(base_text)}


def mock_generate(settings: MockSettings, text: str) -> tuple[str, dict]:
    view = read_prompt(text)
    facts = tuple((c.kind, c.directive.split("; fix: ")[0]) for c in view.constraints
                  if c.kind in ("naming", "attach_interface", "daemon_activation"))
    case, base = _mock_base(view.target, facts)

    defects = draw_defects(case, base, settings, view.target)
    if settings.reference_gaps:
        defects += gap_defects(case, view.reference_protocols)

    feedback = [c for c in view.constraints if c.iteration is not None]
    rounds = max((c.iteration for c in feedback), default=0)
    if not view.structured:
        rounds //= 2
    allowance = settings.defects_fixed_per_round * rounds
    repaired, remaining = [], []
    for d in defects:
        if (len(repaired) < allowance and d.category not in settings.unfixable
                and _covered(d, feedback)):
            repaired.append(d)
        else:
            remaining.append(d)

    cfgs = dict(base)
    for name in {d.device for d in remaining}:
        cfgs[name] = copy.deepcopy(base[name])
    for n, d in enumerate(remaining):
        _apply(cfgs, d, n)
    out = render_config([cfgs[d.name] for d in case.devices])
    meta = {"defects": len(defects), "repaired": len(repaired),
            "remaining": [f"{d.category}:{d.device}" + (f"/{d.interface}" if d.interface else "")
                          for d in remaining]}
    return out, meta
