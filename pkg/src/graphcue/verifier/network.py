"""In-memory provisioning, route computation and hop-by-hop forwarding."""

from __future__ import annotations

import ipaddress
import json
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache

from ..errors import MalformedCase, ResourceLimitExceeded
from ..graph import JsonGraph, build_graph
from ..topology import Link, TopologyCase
from .config import DeviceConfig, InterfaceStanza

# route preference for equal-length prefixes
ADMIN_DISTANCE = {"connected": 0, "static": 1, "bgp": 20, "ospf": 110}


@dataclass(frozen=True)
class VerifyLimits:
    max_devices: int = 32
    max_route_rounds: int = 64
    max_hops: int = 32
    max_check_steps: int = 1_000_000


LOG_TAIL = 50


def _nkey(net: ipaddress.IPv4Network) -> tuple[int, int]:
    """Cheap hashable stand-in for a network; ``IPv4Network.__hash__`` is slow."""
    return int(net.network_address), net.prefixlen


@dataclass(frozen=True)
class Route:
    prefix: ipaddress.IPv4Network
    next_hop: ipaddress.IPv4Address | None
    iface: str | None
    source: str
    metric: int = 0

    def sort_key(self):
        nh = int(self.next_hop) if self.next_hop is not None else -1
        return (int(self.prefix.network_address), self.prefix.prefixlen,
                ADMIN_DISTANCE[self.source], nh)

    def __str__(self):
        nh = int(self.next_hop) if self.next_hop is not None else None
        return _route_text(self.source, *_nkey(self.prefix), nh, self.iface, self.metric)


@lru_cache(maxsize=65536)
def _route_text(source, net: int, plen: int, nh: int | None, iface, metric) -> str:
    via = f"via {ipaddress.IPv4Address(nh)}" if nh is not None else f"dev {iface}"
    return f"{source} {ipaddress.IPv4Address(net)}/{plen} {via} metric {metric}"


@dataclass
class Trace:
    ok: bool
    path: list[str]
    reason: str = ""


class StepBudgetExceeded(Exception):
    pass


@dataclass
class VerifySession:
    seed: int
    case: TopologyCase
    limits: VerifyLimits
    devices: list[str]
    links: list[Link]
    configs: dict[str, DeviceConfig] = field(default_factory=dict)
    tables: dict[str, list[Route]] = field(default_factory=dict)
    converged: bool = True
    clean: bool = True
    logs: dict[str, list[str]] = field(default_factory=dict)
    steps: int = 0

    def __post_init__(self):
        self._iface_link = self.case.iface_link()
        self._declared = {d.name: set(d.interface_names()) for d in self.case.devices}
        self.reset()

    def _clear_memo(self) -> None:
        # derived per-interface facts; valid until the next apply/reset
        self._stanzas: dict[str, dict[str, InterfaceStanza]] = {}
        self._up: dict[tuple[str, str], bool] = {}
        self._area: dict[tuple[str, int], int | None] = {}

    # lifecycle

    def reset(self) -> None:
        self.configs = {}
        self.tables = {d: [] for d in self.devices}
        self.logs = {d: [] for d in self.devices}
        self.converged = True
        self.steps = 0
        self.clean = True
        self._clear_memo()

    def apply(self, configs: list[DeviceConfig]) -> None:
        if not self.clean:
            self.reset()
        self.configs = {c.name: c for c in configs}
        self._clear_memo()
        self.clean = False

    def state_dict(self) -> dict:
        return {
            "seed": self.seed,
            "case_id": self.case.case_id,
            "devices": list(self.devices),
            "links": [[l.link_id, list(l.a), list(l.b)] for l in self.links],
            "tables": {d: [str(r) for r in rs] for d, rs in sorted(self.tables.items())},
            "clean": self.clean,
        }

    def state_json(self) -> str:
        return json.dumps(self.state_dict(), sort_keys=True)

    def log(self, device: str, message: str) -> None:
        self.logs.setdefault(device, []).append(message)

    def tick(self, n: int = 1) -> None:
        self.steps += n
        if self.steps > self.limits.max_check_steps:
            raise StepBudgetExceeded()

    # interface state

    def stanza(self, device: str, iface: str) -> InterfaceStanza | None:
        table = self._stanzas.get(device)
        if table is None:
            cfg = self.configs.get(device)
            table = {}
            if cfg is not None:
                for st in reversed(cfg.interfaces):
                    table[st.name] = st  # first stanza wins, as in DeviceConfig.interface
            self._stanzas[device] = table
        return table.get(iface)

    def link_of(self, device: str, iface: str) -> Link | None:
        return self._iface_link.get((device, iface))

    def is_up(self, device: str, iface: str) -> bool:
        key = (device, iface)
        if key not in self._up:
            self._up[key] = self._is_up(device, iface)
        return self._up[key]

    def _is_up(self, device: str, iface: str) -> bool:
        if iface not in self._declared.get(device, ()):
            return False
        st = self.stanza(device, iface)
        if st is None or st.address is None:
            return False
        link = self.link_of(device, iface)
        if link is None:
            return st.link is None
        return st.link == link.link_id

    def up_interfaces(self, device: str) -> list[InterfaceStanza]:
        cfg = self.configs.get(device)
        if cfg is None:
            return []
        return [i for i in cfg.interfaces if self.is_up(device, i.name)]

    def owner_of(self, addr) -> tuple[str, str] | None:
        for dev in self.devices:
            for st in self.up_interfaces(dev):
                if st.address.ip == addr:
                    return dev, st.name
        return None

    def target_address(self, device: str):
        """Address probed when ``device`` is a reachability destination."""
        names = self.case.device(device).interface_names()
        if "lo" in names:
            st = self.stanza(device, "lo")
            return st.address.ip if st is not None and self.is_up(device, "lo") else None
        for name in names:
            if self.is_up(device, name):
                return self.stanza(device, name).address.ip
        return None

    # routing

    def ospf_area(self, device: str, st: InterfaceStanza) -> int | None:
        key = (device, id(st))
        if key not in self._area:
            self._area[key] = self._ospf_area(device, st)
        return self._area[key]

    def _ospf_area(self, device: str, st: InterfaceStanza) -> int | None:
        cfg = self.configs.get(device)
        if cfg is None or cfg.ospf is None or not self.is_up(device, st.name):
            return None
        addr, plen = _nkey(st.address.network)
        for net, area in cfg.ospf.networks:
            # integer form of ``subnet_of``
            if plen >= net.prefixlen and addr & int(net.netmask) == int(net.network_address):
                return area
        return None

    def link_peer(self, device: str, iface: str) -> tuple[str, InterfaceStanza] | None:
        """Peer device and stanza across the link, when both ends are up."""
        link = self.link_of(device, iface)
        if link is None or not self.is_up(device, iface):
            return None
        pd, pi = link.other(device, iface)
        if not self.is_up(pd, pi):
            return None
        return pd, self.stanza(pd, pi)

    def ospf_adjacencies(self) -> list[tuple[int, str, str, str, ipaddress.IPv4Address]]:
        """``(area, device, local iface, peer, peer address)`` for every formed adjacency."""
        out = []
        for dev in self.devices:
            for st in self.up_interfaces(dev):
                area = self.ospf_area(dev, st)
                if area is None:
                    continue
                peer = self.link_peer(dev, st.name)
                if peer is None:
                    continue
                pd, pst = peer
                if pst.address.network != st.address.network:
                    continue
                if self.ospf_area(pd, pst) != area:
                    continue
                out.append((area, dev, st.name, pd, pst.address.ip))
        return out

    def bgp_sessions(self) -> list[tuple[str, str, ipaddress.IPv4Address]]:
        """``(device, peer, peer address)`` for every established session, both directions."""
        out = []
        for dev in self.devices:
            cfg = self.configs.get(dev)
            if cfg is None or cfg.bgp is None:
                continue
            for addr, ras in cfg.bgp.neighbors:
                self.tick()
                for st in self.up_interfaces(dev):
                    if addr not in st.address.network or addr == st.address.ip:
                        continue
                    peer = self.link_peer(dev, st.name)
                    if peer is None or peer[1].address.ip != addr:
                        continue
                    pd, pst = peer
                    pcfg = self.configs[pd]
                    if pcfg.bgp is None or pcfg.bgp.asn != ras:
                        continue
                    if any(a == st.address.ip and r == cfg.bgp.asn for a, r in pcfg.bgp.neighbors):
                        out.append((dev, pd, addr))
                    break
        return sorted(set(out), key=lambda s: (s[0], s[1], int(s[2])))

    def compute_routes(self) -> dict[str, list[Route]]:
        tables: dict[str, list[Route]] = {d: [] for d in self.devices}
        connected: dict[str, set] = {d: set() for d in self.devices}
        for dev in self.devices:
            for st in self.up_interfaces(dev):
                tables[dev].append(Route(st.address.network, None, st.name, "connected"))
                connected[dev].add(_nkey(st.address.network))
                self.log(dev, f"interface {st.name} up {st.address.with_prefixlen}")
            cfg = self.configs.get(dev)
            if cfg is not None:
                for prefix, nh in cfg.static_routes:
                    tables[dev].append(Route(prefix, nh, None, "static"))

        self._ospf_routes(tables, connected)
        self.converged = self._bgp_routes(tables, connected)
        for dev in self.devices:
            tables[dev].sort(key=Route.sort_key)
            learned = [r for r in tables[dev] if r.source != "connected"]
            # older lines would fall outside the kept log tail anyway
            for r in learned[-LOG_TAIL:]:
                self.log(dev, f"route {r}")
        self.tables = tables
        return tables

    def _ospf_routes(self, tables, connected) -> None:
        adjs = self.ospf_adjacencies()
        for area in sorted({a[0] for a in adjs} | self._ospf_areas()):
            nbrs: dict[str, list[tuple[str, ipaddress.IPv4Address]]] = {}
            for ar, dev, iface, pd, paddr in adjs:
                if ar == area:
                    nbrs.setdefault(dev, []).append((pd, paddr))
                    self.log(dev, f"ospf adjacency area {area} with {pd} on {iface} full")
            announced: dict[str, set] = {}
            for dev in self.devices:
                for st in self.up_interfaces(dev):
                    if self.ospf_area(dev, st) == area:
                        net = st.address.network
                        announced.setdefault(dev, {})[_nkey(net)] = net
            members = sorted(set(nbrs) | set(announced))
            dist = {m: self._bfs(m, nbrs) for m in members}
            hop_addr: dict[int, ipaddress.IPv4Address] = {}
            for r in members:
                # candidates in (hops, next hop) order; the first announcer of a prefix wins
                order = []
                for d in announced:
                    if d == r or d not in dist[r]:
                        continue
                    hops = dist[r][d]
                    options = [int(a) for n, a in nbrs.get(r, []) if dist[n].get(d) == hops - 1]
                    self.tick(len(options) + 1)
                    order.append((hops, min(options), d))
                order.sort()
                conn = connected[r]
                best: dict = {}
                for hops, nh, d in order:
                    for key, net in announced[d].items():
                        if key in best or key in conn:
                            continue
                        best[key] = (net, hops, nh)
                for net, hops, nh in best.values():
                    if nh not in hop_addr:
                        hop_addr[nh] = ipaddress.IPv4Address(nh)
                    tables[r].append(Route(net, hop_addr[nh], None, "ospf", hops))

    def _ospf_areas(self) -> set[int]:
        areas = set()
        for dev in self.devices:
            for st in self.up_interfaces(dev):
                area = self.ospf_area(dev, st)
                if area is not None:
                    areas.add(area)
        return areas

    def _bfs(self, src, nbrs) -> dict[str, int]:
        dist = {src: 0}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v, _ in nbrs.get(u, []):
                self.tick()
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist

    def _bgp_routes(self, tables, connected) -> bool:
        sessions = self.bgp_sessions()
        for dev, pd, addr in sessions:
            self.log(dev, f"bgp session to {pd} ({addr}) established")
        asn = {d: c.bgp.asn for d, c in self.configs.items() if c.bgp is not None and d in tables}
        # rib entry: (as path, next hop int or -1, learned over ibgp)
        rib: dict[str, dict] = {d: {} for d in asn}
        for d in asn:
            for net in self.configs[d].bgp.networks:
                rib[d][net] = ((), -1, False)
        converged = False
        for _ in range(self.limits.max_route_rounds):
            snapshot = {d: dict(entries) for d, entries in rib.items()}
            changed = False
            for dev, pd, addr in sessions:
                ebgp = asn[dev] != asn[pd]
                for prefix, (path, _, via_ibgp) in snapshot[pd].items():
                    self.tick()
                    if not ebgp and via_ibgp:
                        continue
                    new_path = (asn[pd],) + path if ebgp else path
                    if ebgp and asn[dev] in new_path:
                        continue
                    cur = rib[dev].get(prefix)
                    if cur is not None and cur[1] == -1:
                        continue
                    cand = (new_path, int(addr), not ebgp)
                    if cur is None or (len(new_path), int(addr)) < (len(cur[0]), cur[1]):
                        if cur != cand:
                            rib[dev][prefix] = cand
                            changed = True
            if not changed:
                converged = True
                break
        for dev, entries in rib.items():
            for prefix, (path, nh, _) in entries.items():
                if nh == -1 or _nkey(prefix) in connected[dev]:
                    continue
                tables[dev].append(
                    Route(prefix, ipaddress.IPv4Address(nh), None, "bgp", len(path)))
        return converged

    # forwarding

    def lookup(self, device: str, addr) -> Route | None:
        best = None
        for r in self.tables.get(device, []):
            if addr in r.prefix:
                key = (-r.prefix.prefixlen, ADMIN_DISTANCE[r.source],
                       int(r.next_hop) if r.next_hop is not None else -1)
                if best is None or key < best[0]:
                    best = (key, r)
        return best[1] if best else None

    def _connected_egress(self, device: str, addr) -> str | None:
        best = None
        for r in self.tables.get(device, []):
            if r.source == "connected" and addr in r.prefix:
                if best is None or r.prefix.prefixlen > best.prefix.prefixlen:
                    best = r
        return best.iface if best else None

    def trace(self, src: str, dst: str) -> Trace:
        target = self.target_address(dst)
        if target is None:
            return Trace(False, [src], f"{dst} has no reachable address configured")
        cur, path = src, [src]
        for _ in range(self.limits.max_hops + 1):
            self.tick()
            if any(st.address.ip == target for st in self.up_interfaces(cur)):
                if cur == dst:
                    return Trace(True, path)
                return Trace(False, path, f"{target} answered by {cur}, not {dst}")
            if len(path) > self.limits.max_hops:
                break
            route = self.lookup(cur, target)
            if route is None:
                return Trace(False, path, f"no route to {target} at {cur}")
            nh = target if route.next_hop is None else route.next_hop
            egress = route.iface if route.next_hop is None else self._connected_egress(cur, nh)
            if egress is None:
                return Trace(False, path, f"next hop {nh} unresolved at {cur}")
            peer = self.link_peer(cur, egress)
            if peer is None or peer[1].address.ip != nh:
                return Trace(False, path, f"{nh} not present beyond {cur}/{egress}")
            cur = peer[0]
            path.append(cur)
        return Trace(False, path, f"ttl {self.limits.max_hops} exceeded towards {target}")


def provision(g: JsonGraph | None, case: TopologyCase, seed: int = 0,
              limits: VerifyLimits = VerifyLimits()) -> VerifySession:
    """Instantiate devices and links of ``case``; ``g`` must describe the same topology."""
    if len(case.devices) > limits.max_devices:
        raise ResourceLimitExceeded(
            f"{len(case.devices)} devices exceeds max_devices={limits.max_devices}")
    if g is not None:
        ref = build_graph(case)
        if g.node_ids != ref.node_ids or g.M != ref.M:
            raise MalformedCase(f"graph does not describe case {case.case_id}")
    return VerifySession(seed, case, limits, case.device_names(), list(case.links))


def compute_routes(session: VerifySession) -> dict[str, list[Route]]:
    return session.compute_routes()
