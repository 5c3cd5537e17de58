"""Topology cases: devices, interfaces, links and protocol intents.

A case file is a JSON document::

    {"case_id": "...",
     "devices": [{"name": "r1", "kind": "router", "interfaces": ["eth0", "lo"]}],
     "links": [{"a": {"device": "r1", "iface": "eth0"},
                "b": {"device": "r2", "iface": "eth0"}, "id": "L1"}],
     "intents": [{"protocol": "ospf", "params": {"area": 0}}],
     "endpoints": [["r1", "r2"]],
     "ground_truth": "device r1\\n..."}

Interfaces may also be given as objects ``{"name": "eth0", "address": "10.0.0.1/30"}``.
Intent membership is controlled by the optional ``devices`` parameter; without it
routing intents cover every router and ``static`` intents cover every host.
"""

from __future__ import annotations

import ipaddress
import json
import logging
from dataclasses import dataclass, field

from .errors import DanglingReference, DuplicateName, MalformedCase

logger = logging.getLogger(__name__)

DEVICE_KINDS = ("router", "switch", "host")
PROTOCOLS = ("ospf", "bgp", "static")
MANDATORY_PARAMS = {"ospf": ("area",), "bgp": ("asn",), "static": ()}

_CASE_KEYS = {"case_id", "devices", "links", "intents", "endpoints", "ground_truth"}


@dataclass(frozen=True)
class Interface:
    name: str
    address: str | None = None


@dataclass(frozen=True)
class Device:
    name: str
    kind: str
    interfaces: tuple[Interface, ...] = ()

    def interface_names(self) -> list[str]:
        return [i.name for i in self.interfaces]


@dataclass(frozen=True)
class Link:
    a: tuple[str, str]
    b: tuple[str, str]
    link_id: str

    def other(self, device: str, iface: str) -> tuple[str, str]:
        if self.a == (device, iface):
            return self.b
        return self.a

    def devices(self) -> tuple[str, str]:
        return self.a[0], self.b[0]


@dataclass(frozen=True)
class ProtocolIntent:
    protocol: str
    params: dict = field(default_factory=dict)


@dataclass
class TopologyCase:
    case_id: str
    devices: list[Device]
    links: list[Link]
    intents: list[ProtocolIntent] = field(default_factory=list)
    endpoints_of_interest: list[tuple[str, str]] = field(default_factory=list)
    ground_truth: str | None = None
    warnings: list[str] = field(default_factory=list)

    def device(self, name: str) -> Device:
        for d in self.devices:
            if d.name == name:
                return d
        raise KeyError(name)

    def device_names(self) -> list[str]:
        return [d.name for d in self.devices]

    def intent_members(self, intent: ProtocolIntent) -> list[str]:
        """Devices covered by ``intent``, in case order."""
        if "devices" in intent.params:
            wanted = set(intent.params["devices"])
            return [d.name for d in self.devices if d.name in wanted]
        kind = "host" if intent.protocol == "static" else "router"
        return [d.name for d in self.devices if d.kind == kind]

    def memberships(self) -> dict[str, list[int]]:
        """Map device name to the indices of the intents that cover it."""
        out: dict[str, list[int]] = {d.name: [] for d in self.devices}
        for k, intent in enumerate(self.intents):
            for name in self.intent_members(intent):
                out[name].append(k)
        return out

    def asn_of(self, intent: ProtocolIntent, device: str) -> int:
        asn = intent.params["asn"]
        if isinstance(asn, dict):
            return int(asn[device])
        return int(asn)

    def iface_link(self) -> dict[tuple[str, str], Link]:
        out = {}
        for link in self.links:
            out[link.a] = link
            out[link.b] = link
        return out

    def to_dict(self) -> dict:
        devices = []
        for d in self.devices:
            ifaces = [
                i.name if i.address is None else {"name": i.name, "address": i.address}
                for i in d.interfaces
            ]
            devices.append({"name": d.name, "kind": d.kind, "interfaces": ifaces})
        out = {
            "case_id": self.case_id,
            "devices": devices,
            "links": [
                {
                    "a": {"device": l.a[0], "iface": l.a[1]},
                    "b": {"device": l.b[0], "iface": l.b[1]},
                    "id": l.link_id,
                }
                for l in self.links
            ],
            "intents": [{"protocol": i.protocol, "params": i.params} for i in self.intents],
            "endpoints": [list(p) for p in self.endpoints_of_interest],
        }
        if self.ground_truth is not None:
            out["ground_truth"] = self.ground_truth
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"


def _require(obj, key, ctx):
    if not isinstance(obj, dict) or key not in obj:
        raise MalformedCase(f"{ctx}: missing key {key!r}")
    return obj[key]


def _name(value, ctx) -> str:
    if not isinstance(value, str) or not value or any(c.isspace() for c in value) or "|" in value:
        raise MalformedCase(f"{ctx}: invalid name {value!r}")
    return value


def parse_case(raw: bytes | str) -> TopologyCase:
    """Parse case-file text into a validated :class:`TopologyCase`."""
    try:
        doc = json.loads(raw)
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedCase(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedCase("case file must be a JSON object")

    warnings = [f"unknown field {k!r} ignored" for k in sorted(set(doc) - _CASE_KEYS)]
    for w in warnings:
        logger.warning(w)

    case_id = _name(_require(doc, "case_id", "case"), "case_id")

    devices: list[Device] = []
    seen: set[str] = set()
    for k, d in enumerate(_require(doc, "devices", "case")):
        name = _name(_require(d, "name", f"devices[{k}]"), f"devices[{k}].name")
        if name in seen:
            raise DuplicateName(f"device {name!r} declared twice")
        seen.add(name)
        kind = d.get("kind", "router")
        if kind not in DEVICE_KINDS:
            raise MalformedCase(f"device {name}: unknown kind {kind!r}")
        ifaces = []
        inames: set[str] = set()
        for item in d.get("interfaces", []):
            if isinstance(item, dict):
                iname = _name(_require(item, "name", f"{name}.interfaces"), f"{name}.interfaces")
                address = item.get("address")
                if address is not None:
                    try:
                        ipaddress.ip_interface(address)
                    except ValueError as exc:
                        raise MalformedCase(f"{name}/{iname}: bad address {address!r}") from exc
            else:
                iname, address = _name(item, f"{name}.interfaces"), None
            if iname in inames:
                raise DuplicateName(f"interface {name}/{iname} declared twice")
            inames.add(iname)
            ifaces.append(Interface(iname, address))
        devices.append(Device(name, kind, tuple(ifaces)))

    by_name = {d.name: d for d in devices}

    def endpoint(obj, ctx):
        dev = _require(obj, "device", ctx)
        iface = _require(obj, "iface", ctx)
        if dev not in by_name:
            raise DanglingReference(f"{ctx}: unknown device {dev!r}")
        if iface not in by_name[dev].interface_names():
            raise DanglingReference(f"{ctx}: unknown interface {dev}/{iface}")
        return (dev, iface)

    links: list[Link] = []
    link_ids: set[str] = set()
    bound: set[tuple[str, str]] = set()
    for k, l in enumerate(doc.get("links", [])):
        lid = _name(_require(l, "id", f"links[{k}]"), f"links[{k}].id")
        if lid in link_ids:
            raise DuplicateName(f"link id {lid!r} used twice")
        link_ids.add(lid)
        a = endpoint(_require(l, "a", f"link {lid}"), f"link {lid}.a")
        b = endpoint(_require(l, "b", f"link {lid}"), f"link {lid}.b")
        if a == b:
            raise MalformedCase(f"link {lid}: both ends are {a[0]}/{a[1]}")
        for end in (a, b):
            if end in bound:
                raise DuplicateName(f"interface {end[0]}/{end[1]} bound to more than one link")
            bound.add(end)
        links.append(Link(a, b, lid))

    intents = []
    for k, it in enumerate(doc.get("intents", [])):
        proto = _require(it, "protocol", f"intents[{k}]")
        if proto not in PROTOCOLS:
            raise MalformedCase(f"intents[{k}]: unknown protocol {proto!r}")
        params = dict(it.get("params", {}))
        for key in MANDATORY_PARAMS[proto]:
            if key not in params:
                raise MalformedCase(f"intents[{k}]: {proto} intent requires {key!r}")
        for dev in params.get("devices", []):
            if dev not in by_name:
                raise DanglingReference(f"intents[{k}]: unknown device {dev!r}")
        intents.append(ProtocolIntent(proto, params))

    endpoints = []
    for pair in doc.get("endpoints", []):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise MalformedCase(f"endpoint pair {pair!r} must have two entries")
        for dev in pair:
            if dev not in by_name:
                raise DanglingReference(f"endpoint references unknown device {dev!r}")
        endpoints.append((pair[0], pair[1]))

    gt = doc.get("ground_truth")
    if gt is not None and not isinstance(gt, str):
        raise MalformedCase("ground_truth must be config text")

    case = TopologyCase(case_id, devices, links, intents, endpoints, gt, warnings)
    _check_memberships(case)
    return case


def _check_memberships(case: TopologyCase) -> None:
    # one intent per protocol per device keeps daemon constraints unique
    for k, intent in enumerate(case.intents):
        members = case.intent_members(intent)
        if intent.protocol == "bgp" and isinstance(intent.params["asn"], dict):
            missing = [m for m in members if m not in intent.params["asn"]]
            if missing:
                raise MalformedCase(f"intents[{k}]: no asn for {', '.join(missing)}")
    for name, idx in case.memberships().items():
        protos = [case.intents[k].protocol for k in idx]
        if len(protos) != len(set(protos)):
            raise MalformedCase(f"device {name} is covered by two intents of the same protocol")
