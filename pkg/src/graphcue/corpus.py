"""Deterministic synthetic corpora of topology cases with ground-truth configs.

Generation rules, per topology family (``n`` is the drawn device count):

* ``line``: routers chained ``r1 - r2 - ... - rn``.
* ``ring``: the line closed into a cycle.
* ``star``: a hub switch ``sw1`` and ``n - 1`` hosts; hosts are listed first.
* ``mesh``: a ring plus every chord with probability ``density``
  (``density=1`` gives a full mesh).
* ``dual-star``: two hubs joined by a link, the remaining devices split
  between them as leaves. With only routing protocols the leaves are routers
  and each hub forms its own OSPF area; the hub-to-hub link runs no protocol,
  so the two halves cannot reach each other. With ``static`` in the mix the
  leaves are hosts and both hubs share area 0.

Every link is duplicated with the archetype's parallel-link probability.
Routers and switches carry a loopback ``lo``.
"""

from __future__ import annotations

import ipaddress
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSpec, UnsupportedTopology
from .topology import Device, Interface, Link, ProtocolIntent, TopologyCase, parse_case
from .verifier.config import BgpStanza, DeviceConfig, InterfaceStanza, OspfStanza, render_config

FAMILIES = ("line", "ring", "star", "mesh", "dual-star")


@dataclass(frozen=True)
class ArchetypeSpec:
    name: str
    family: str
    devices: tuple[int, int]
    protocols: tuple[str, ...]
    parallel_p: float = 0.0
    density: float = 1.0
    iface_prefix: str = "eth"

    def validate(self) -> None:
        lo, hi = self.devices
        if self.family not in FAMILIES:
            raise InvalidSpec(f"{self.name}: unknown family {self.family!r}")
        if not 2 <= lo <= hi <= 32:
            raise InvalidSpec(f"{self.name}: device range {self.devices} outside [2, 32]")
        if self.family in ("ring", "mesh") and lo < 3:
            raise InvalidSpec(f"{self.name}: {self.family} needs at least 3 devices")
        if self.family == "dual-star" and lo < 4:
            raise InvalidSpec(f"{self.name}: dual-star needs at least 4 devices")
        if not 0.0 <= self.parallel_p < 1.0 or not 0.0 <= self.density <= 1.0:
            raise InvalidSpec(f"{self.name}: probabilities must lie in [0, 1)")
        if not self.protocols or set(self.protocols) - {"ospf", "bgp", "static"}:
            raise InvalidSpec(f"{self.name}: bad protocol mix {self.protocols}")
        if self.family == "star" and set(self.protocols) != {"static"}:
            raise InvalidSpec(f"{self.name}: star archetypes carry static routing only")
        if self.family in ("line", "ring", "mesh") and "static" in self.protocols:
            raise InvalidSpec(f"{self.name}: {self.family} archetypes are router-only")


DEFAULT_ARCHETYPES = (
    ArchetypeSpec("line_ospf", "line", (2, 6), ("ospf",)),
    ArchetypeSpec("ring_ospf", "ring", (6, 14), ("ospf",), parallel_p=0.25),
    ArchetypeSpec("ring_bgp", "ring", (4, 10), ("bgp",), iface_prefix="ge"),
    ArchetypeSpec("star_lan", "star", (4, 13), ("static",), iface_prefix="swp"),
    ArchetypeSpec("mesh_bgp", "mesh", (3, 6), ("bgp",), iface_prefix="ge"),
    ArchetypeSpec("mesh_ospf", "mesh", (8, 20), ("ospf",), parallel_p=0.15, density=0.25,
                  iface_prefix="ens"),
    ArchetypeSpec("dual_star_ospf", "dual-star", (8, 30), ("ospf",)),
    ArchetypeSpec("campus", "dual-star", (6, 20), ("ospf", "static"), parallel_p=0.2,
                  iface_prefix="ens"),
)


@dataclass(frozen=True)
class CorpusSpec:
    n_cases: int = 250
    seed: int = 0
    archetypes: tuple[ArchetypeSpec, ...] = DEFAULT_ARCHETYPES
    split: tuple[float, float] = (0.8, 0.2)

    def validate(self) -> None:
        if self.n_cases < 1:
            raise InvalidSpec("n_cases must be positive")
        if not self.archetypes:
            raise InvalidSpec("at least one archetype is required")
        if self.n_cases < len(self.archetypes):
            raise InvalidSpec("n_cases must be >= number of archetypes")
        if len(self.split) != 2 or min(self.split) < 0 or abs(sum(self.split) - 1.0) > 1e-9:
            raise InvalidSpec(f"split fractions {self.split} must be non-negative and sum to 1")
        names = [a.name for a in self.archetypes]
        if len(set(names)) != len(names):
            raise InvalidSpec("archetype names must be unique")
        for a in self.archetypes:
            a.validate()

    def to_dict(self) -> dict:
        return {
            "n_cases": self.n_cases,
            "seed": self.seed,
            "split": list(self.split),
            "archetypes": [asdict(a) for a in self.archetypes],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CorpusSpec":
        archetypes = doc.get("archetypes")
        if archetypes is None:
            archs = DEFAULT_ARCHETYPES
        else:
            archs = tuple(
                ArchetypeSpec(a["name"], a["family"], tuple(a["devices"]), tuple(a["protocols"]),
                              a.get("parallel_p", 0.0), a.get("density", 1.0),
                              a.get("iface_prefix", "eth"))
                for a in archetypes
            )
        return cls(int(doc.get("n_cases", 250)), int(doc.get("seed", 0)), archs,
                   tuple(doc.get("split", (0.8, 0.2))))


@dataclass
class CorpusEntry:
    case: TopologyCase
    archetype: str
    split: str


@dataclass
class Corpus:
    spec: CorpusSpec
    entries: list[CorpusEntry] = field(default_factory=list)

    def split(self, tag: str) -> list[CorpusEntry]:
        return [e for e in self.entries if e.split == tag]

    def labels(self) -> dict[str, str]:
        return {e.case.case_id: e.archetype for e in self.entries}

    def by_id(self) -> dict[str, CorpusEntry]:
        return {e.case.case_id: e for e in self.entries}


# topology construction


class _Builder:
    def __init__(self, prefix: str):
        self.prefix = prefix
        self.devices: list[tuple[str, str]] = []
        self.ifaces: dict[str, list[str]] = {}
        self.links: list[Link] = []

    def add(self, name: str, kind: str) -> str:
        self.devices.append((name, kind))
        self.ifaces[name] = []
        return name

    def _next_iface(self, dev: str, kind: str) -> str:
        prefix = "eth" if kind == "host" else self.prefix
        name = f"{prefix}{len(self.ifaces[dev])}"
        self.ifaces[dev].append(name)
        return name

    def connect(self, u: str, v: str) -> None:
        kinds = dict(self.devices)
        iu, iv = self._next_iface(u, kinds[u]), self._next_iface(v, kinds[v])
        self.links.append(Link((u, iu), (v, iv), f"L{len(self.links) + 1}"))

    def case(self, case_id, intents, endpoints) -> TopologyCase:
        devices = []
        for name, kind in self.devices:
            names = list(self.ifaces[name]) + ([] if kind == "host" else ["lo"])
            devices.append(Device(name, kind, tuple(Interface(n) for n in names)))
        return TopologyCase(case_id, devices, self.links, intents, endpoints)


def _pairs(arch: ArchetypeSpec, n: int, rng) -> tuple[list[tuple[str, str]], list[tuple[int, int]]]:
    """Device list ``(name, kind)`` and base edge list by index."""
    if arch.family == "line":
        devs = [(f"r{i + 1}", "router") for i in range(n)]
        return devs, [(i, i + 1) for i in range(n - 1)]
    if arch.family == "ring":
        devs = [(f"r{i + 1}", "router") for i in range(n)]
        return devs, [(i, (i + 1) % n) for i in range(n)]
    if arch.family == "star":
        devs = [(f"h{i + 1}", "host") for i in range(n - 1)] + [("sw1", "switch")]
        return devs, [(n - 1, i) for i in range(n - 1)]
    if arch.family == "mesh":
        devs = [(f"r{i + 1}", "router") for i in range(n)]
        edges = [(i, (i + 1) % n) for i in range(n)]
        ring = {frozenset(e) for e in edges}
        for i in range(n):
            for j in range(i + 1, n):
                if frozenset((i, j)) not in ring and rng.random() < arch.density:
                    edges.append((i, j))
        return devs, edges
    # dual-star
    hosts = "static" in arch.protocols
    leaf_kind, leaf_prefix = ("host", "h") if hosts else ("router", "r")
    devs = [("c1", "router"), ("c2", "router")]
    devs += [(f"{leaf_prefix}{i + 1}", leaf_kind) for i in range(n - 2)]
    edges = [(0, 1)]
    edges += [(i % 2, i + 2) for i in range(n - 2)]
    return devs, edges


def _intents(arch: ArchetypeSpec, devs: list[tuple[str, str]]) -> list[ProtocolIntent]:
    routers = [d for d, k in devs if k == "router"]
    hosts = [d for d, k in devs if k == "host"]
    intents = []
    if arch.family == "dual-star" and "static" not in arch.protocols:
        leaves = routers[2:]
        side = [["c1"] + leaves[0::2], ["c2"] + leaves[1::2]]
        for area, members in enumerate(side):
            intents.append(ProtocolIntent("ospf", {"area": area, "devices": members,
                                                   "prefix": f"10.{area}.0.0/16"}))
        return intents
    if "ospf" in arch.protocols:
        intents.append(ProtocolIntent("ospf", {"area": 0, "devices": routers,
                                               "prefix": "10.0.0.0/16"}))
    if "bgp" in arch.protocols:
        intents.append(ProtocolIntent("bgp", {"asn": {r: 65001 + i for i, r in enumerate(routers)},
                                              "devices": routers}))
    if "static" in arch.protocols:
        intents.append(ProtocolIntent("static", {"devices": hosts, "prefix": "0.0.0.0/0"}))
    return intents


def covered_links(case: TopologyCase) -> list[Link]:
    """Links carried by a protocol: both ends share a routing intent, or one end is static."""
    member = case.memberships()
    static = {d for d, ks in member.items() if any(case.intents[k].protocol == "static" for k in ks)}
    out = []
    for link in case.links:
        u, v = link.devices()
        shared = [k for k in set(member[u]) & set(member[v])
                  if case.intents[k].protocol in ("ospf", "bgp")]
        if shared or u in static or v in static:
            out.append(link)
    return out


def reach_group(case: TopologyCase, src: str) -> list[str]:
    """Devices joined to ``src`` over protocol-covered links, in case order."""
    adj: dict[str, set[str]] = {d: set() for d in case.device_names()}
    for link in covered_links(case):
        u, v = link.devices()
        adj[u].add(v)
        adj[v].add(u)
    seen, stack = {src}, [src]
    while stack:
        for v in adj[stack.pop()]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return [d for d in case.device_names() if d in seen]


def make_case(arch: ArchetypeSpec, case_id: str, rng) -> TopologyCase:
    lo, hi = arch.devices
    n = int(rng.integers(lo, hi + 1))
    devs, edges = _pairs(arch, n, rng)
    b = _Builder(arch.iface_prefix)
    for name, kind in devs:
        b.add(name, kind)
    for i, j in edges:
        copies = 2 if (arch.family == "dual-star" and (i, j) == (0, 1)) else 1
        if rng.random() < arch.parallel_p:
            copies += 1
        for _ in range(copies):
            b.connect(devs[i][0], devs[j][0])
    intents = _intents(arch, devs)
    case = b.case(case_id, intents, [])
    anchor = devs[0][0]
    case.endpoints_of_interest = [(anchor, d) for d in reach_group(case, anchor) if d != anchor]
    case.ground_truth = ground_truth_config(case)
    return case


def generate_corpus(spec: CorpusSpec = CorpusSpec()) -> Corpus:
    """Round-robin archetype assignment, seeded sizes/chords, seeded train/validation split."""
    spec.validate()
    n = spec.n_cases
    entries = []
    for k in range(n):
        arch = spec.archetypes[k % len(spec.archetypes)]
        rng = np.random.default_rng([spec.seed, k])
        entries.append(CorpusEntry(make_case(arch, f"case-{k:04d}", rng), arch.name, ""))
    n_train = int(round(spec.split[0] * n))
    order = np.random.default_rng([spec.seed, n, 7919]).permutation(n)
    train = set(int(i) for i in order[:n_train])
    for k, e in enumerate(entries):
        e.split = "train" if k in train else "validation"
    return Corpus(spec, entries)


# ground truth


def _link_subnet(case: TopologyCase, k: int, link: Link):
    kinds = {d.name: d.kind for d in case.devices}
    if kinds[link.a[0]] == "host" or kinds[link.b[0]] == "host":
        if k >= 256 * 100:
            raise UnsupportedTopology("too many links for the /24 address plan")
        net = ipaddress.IPv4Network(f"10.{1 + k // 256}.{k % 256}.0/24")
        # the non-host end acts as gateway and takes .1
        a_first = kinds[link.a[0]] != "host" or kinds[link.b[0]] == "host"
        lo_ip, hi_ip = net.network_address + 1, net.network_address + 2
        a_ip, b_ip = (lo_ip, hi_ip) if a_first else (hi_ip, lo_ip)
        return net, a_ip, b_ip
    if k >= 16384:
        raise UnsupportedTopology("too many links for the /30 address plan")
    base = ipaddress.IPv4Address("10.0.0.0") + 4 * k
    net = ipaddress.IPv4Network(f"{base}/30")
    return net, base + 1, base + 2


def _loopback(i: int) -> ipaddress.IPv4Interface:
    if i >= 250 * 250:
        raise UnsupportedTopology("too many devices for the loopback plan")
    return ipaddress.IPv4Interface(f"10.255.{i // 250}.{i % 250 + 1}/32")


def ground_truth_config(case: TopologyCase) -> str:
    """A configuration that passes every verifier check for ``case``."""
    for intent in case.intents:
        if intent.protocol == "bgp":
            members = case.intent_members(intent)
            asns = [case.asn_of(intent, m) for m in members]
            if len(set(asns)) != len(asns):
                raise UnsupportedTopology("ground truth supports eBGP (one AS per router) only")

    addr: dict[tuple[str, str], ipaddress.IPv4Interface] = {}
    link_net: dict[str, ipaddress.IPv4Network] = {}
    for k, link in enumerate(case.links):
        net, a_ip, b_ip = _link_subnet(case, k, link)
        addr[link.a] = ipaddress.IPv4Interface(f"{a_ip}/{net.prefixlen}")
        addr[link.b] = ipaddress.IPv4Interface(f"{b_ip}/{net.prefixlen}")
        link_net[link.link_id] = net
    for i, dev in enumerate(case.devices):
        for iface in dev.interfaces:
            if iface.address is not None:
                addr[(dev.name, iface.name)] = ipaddress.IPv4Interface(iface.address)
            elif iface.name == "lo":
                addr[(dev.name, "lo")] = _loopback(i)
    for link in case.links:
        link_net[link.link_id] = addr[link.a].network

    iface_link = case.iface_link()
    member = case.memberships()
    covered = {l.link_id for l in covered_links(case)}
    static_devs = {d for d, ks in member.items()
                   if any(case.intents[k].protocol == "static" for k in ks)}

    configs = []
    for dev in case.devices:
        cfg = DeviceConfig(dev.name)
        own_links = []
        for iface in dev.interfaces:
            link = iface_link.get((dev.name, iface.name))
            if link is None and iface.name != "lo" and iface.address is None:
                continue
            cfg.interfaces.append(InterfaceStanza(iface.name, addr.get((dev.name, iface.name)),
                                                  link.link_id if link else None))
            if link is not None:
                own_links.append((iface.name, link))
        lo = addr.get((dev.name, "lo"))

        def announced(k):
            # link subnets shared with intent peers, host-facing subnets, loopback
            intent = case.intents[k]
            peers = set(case.intent_members(intent))
            peer_nets, host_nets, neighbors = [], [], []
            for iname, link in own_links:
                if link.link_id not in covered:
                    continue
                pdev, piface = link.other(dev.name, iname)
                if pdev in peers:
                    neighbors.append((pdev, piface))
                    peer_nets.append(link_net[link.link_id])
                elif pdev in static_devs:
                    host_nets.append(link_net[link.link_id])
            return peer_nets, host_nets, neighbors

        for k in member[dev.name]:
            intent = case.intents[k]
            if intent.protocol == "ospf":
                area = int(intent.params["area"])
                peer_nets, host_nets, _ = announced(k)
                networks = [(n, area) for n in peer_nets + host_nets]
                if lo is not None:
                    networks.append((lo.network, area))
                cfg.ospf = OspfStanza(networks)
            elif intent.protocol == "bgp":
                _, host_nets, neighbors = announced(k)
                stanza = BgpStanza(case.asn_of(intent, dev.name))
                for pdev, piface in neighbors:
                    stanza.neighbors.append((addr[(pdev, piface)].ip, case.asn_of(intent, pdev)))
                if lo is not None:
                    stanza.networks.append(lo.network)
                stanza.networks.extend(host_nets)
                cfg.bgp = stanza
            elif intent.protocol == "static" and own_links:
                iname, link = own_links[0]
                prefix = ipaddress.IPv4Network(intent.params.get("prefix", "0.0.0.0/0"))
                cfg.static_routes.append((prefix, addr[link.other(dev.name, iname)].ip))
        configs.append(cfg)
    return render_config(configs)


# corpus files


def write_corpus(corpus: Corpus, root: str | Path) -> Path:
    root = Path(root)
    (root / "cases").mkdir(parents=True, exist_ok=True)
    for e in corpus.entries:
        (root / "cases" / f"{e.case.case_id}.json").write_text(e.case.to_json(), encoding="utf-8")
    labels = {e.case.case_id: {"archetype": e.archetype, "split": e.split} for e in corpus.entries}
    (root / "labels.json").write_text(json.dumps(labels, sort_keys=True, indent=1) + "\n",
                                      encoding="utf-8")
    (root / "spec.json").write_text(json.dumps(corpus.spec.to_dict(), sort_keys=True, indent=1)
                                    + "\n", encoding="utf-8")
    return root


def load_corpus(root: str | Path) -> Corpus:
    root = Path(root)
    spec = CorpusSpec.from_dict(json.loads((root / "spec.json").read_text(encoding="utf-8")))
    labels = json.loads((root / "labels.json").read_text(encoding="utf-8"))
    entries = []
    for cid in sorted(labels):
        case = parse_case((root / "cases" / f"{cid}.json").read_bytes())
        entries.append(CorpusEntry(case, labels[cid]["archetype"], labels[cid]["split"]))
    return Corpus(spec, entries)
