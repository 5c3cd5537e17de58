"""Line-oriented configuration dialect.

Example::

    device r1
      interface eth0
        ip address 10.0.0.1/30
        link L1
      router ospf
        network 10.0.0.0/30 area 0
      router bgp 65001
        neighbor 10.0.0.2 remote-as 65002
        network 10.255.0.1/32
      ip route 0.0.0.0/0 10.0.0.2

Blank lines and lines starting with ``!`` or ``#`` are ignored. Unrecognised
lines are kept as warnings rather than rejected.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from functools import lru_cache

from ..errors import ConfigSyntaxError, DuplicateDevice

IPv4Interface = ipaddress.IPv4Interface
IPv4Network = ipaddress.IPv4Network
IPv4Address = ipaddress.IPv4Address


@dataclass
class InterfaceStanza:
    name: str
    address: IPv4Interface | None = None
    link: str | None = None


@dataclass
class OspfStanza:
    networks: list[tuple[IPv4Network, int]] = field(default_factory=list)


@dataclass
class BgpStanza:
    asn: int
    neighbors: list[tuple[IPv4Address, int]] = field(default_factory=list)
    networks: list[IPv4Network] = field(default_factory=list)


@dataclass
class DeviceConfig:
    name: str
    interfaces: list[InterfaceStanza] = field(default_factory=list)
    ospf: OspfStanza | None = None
    bgp: BgpStanza | None = None
    static_routes: list[tuple[IPv4Network, IPv4Address]] = field(default_factory=list)

    def interface(self, name: str) -> InterfaceStanza | None:
        for i in self.interfaces:
            if i.name == name:
                return i
        return None


@dataclass
class ParsedConfig:
    devices: list[DeviceConfig]
    warnings: list[str]

    def by_name(self) -> dict[str, DeviceConfig]:
        return {d.name: d for d in self.devices}


# candidates repeat the same handful of strings across iterations; the parsed
# objects are immutable, so they are safe to share
_iface_of = lru_cache(maxsize=8192)(ipaddress.IPv4Interface)
_host_of = lru_cache(maxsize=8192)(ipaddress.IPv4Address)


@lru_cache(maxsize=8192)
def _net_of(text: str) -> IPv4Network:
    return ipaddress.IPv4Network(text, strict=False)


def _address(text: str, lineno: int) -> IPv4Interface:
    try:
        addr = _iface_of(text)
    except ValueError:
        raise ConfigSyntaxError(f"invalid address {text!r}", lineno) from None
    if "/" not in text:
        raise ConfigSyntaxError(f"address {text!r} lacks a prefix length", lineno)
    if not 8 <= addr.network.prefixlen <= 32:
        raise ConfigSyntaxError(f"prefix length out of range in {text!r}", lineno)
    return addr


def _network(text: str, lineno: int) -> IPv4Network:
    try:
        return _net_of(text)
    except ValueError:
        raise ConfigSyntaxError(f"invalid prefix {text!r}", lineno) from None


def _host(text: str, lineno: int) -> IPv4Address:
    try:
        return _host_of(text)
    except ValueError:
        raise ConfigSyntaxError(f"invalid address {text!r}", lineno) from None


def _int(text: str, lineno: int) -> int:
    try:
        value = int(text)
    except ValueError:
        raise ConfigSyntaxError(f"expected a number, got {text!r}", lineno) from None
    if value < 0:
        raise ConfigSyntaxError(f"negative number {text!r}", lineno)
    return value


def parse_config_text(text: str) -> ParsedConfig:
    devices: list[DeviceConfig] = []
    names: set[str] = set()
    warnings: list[str] = []
    dev: DeviceConfig | None = None
    ctx: object = None  # InterfaceStanza | OspfStanza | BgpStanza | None

    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "!#":
            continue
        tok = stripped.split()
        head = tok[0]

        if head == "device":
            if len(tok) != 2:
                raise ConfigSyntaxError("expected 'device NAME'", lineno)
            if tok[1] in names:
                raise DuplicateDevice(f"line {lineno}: device {tok[1]!r} configured twice")
            names.add(tok[1])
            dev = DeviceConfig(tok[1])
            devices.append(dev)
            ctx = None
            continue
        if dev is None:
            raise ConfigSyntaxError(f"{head!r} outside a device block", lineno)

        if head == "interface":
            if len(tok) != 2:
                raise ConfigSyntaxError("expected 'interface NAME'", lineno)
            ctx = InterfaceStanza(tok[1])
            dev.interfaces.append(ctx)
        elif head == "router" and len(tok) >= 2 and tok[1] == "ospf":
            if len(tok) != 2:
                raise ConfigSyntaxError("expected 'router ospf'", lineno)
            dev.ospf = dev.ospf or OspfStanza()
            ctx = dev.ospf
        elif head == "router" and len(tok) >= 2 and tok[1] == "bgp":
            if len(tok) != 3:
                raise ConfigSyntaxError("expected 'router bgp ASN'", lineno)
            dev.bgp = BgpStanza(_int(tok[2], lineno))
            ctx = dev.bgp
        elif head == "ip" and len(tok) >= 2 and tok[1] == "route":
            if len(tok) != 4:
                raise ConfigSyntaxError("expected 'ip route PREFIX NEXT-HOP'", lineno)
            dev.static_routes.append((_network(tok[2], lineno), _host(tok[3], lineno)))
            ctx = None
        elif head == "ip" and len(tok) >= 2 and tok[1] == "address":
            if not isinstance(ctx, InterfaceStanza):
                raise ConfigSyntaxError("'ip address' outside an interface", lineno)
            if len(tok) != 3:
                raise ConfigSyntaxError("expected 'ip address A.B.C.D/LEN'", lineno)
            ctx.address = _address(tok[2], lineno)
        elif head == "link":
            if not isinstance(ctx, InterfaceStanza):
                raise ConfigSyntaxError("'link' outside an interface", lineno)
            if len(tok) != 2:
                raise ConfigSyntaxError("expected 'link ID'", lineno)
            ctx.link = tok[1]
        elif head == "network" and isinstance(ctx, OspfStanza):
            if len(tok) != 4 or tok[2] != "area":
                raise ConfigSyntaxError("expected 'network PREFIX area N'", lineno)
            ctx.networks.append((_network(tok[1], lineno), _int(tok[3], lineno)))
        elif head == "network" and isinstance(ctx, BgpStanza):
            if len(tok) != 2:
                raise ConfigSyntaxError("expected 'network PREFIX'", lineno)
            ctx.networks.append(_network(tok[1], lineno))
        elif head == "neighbor" and isinstance(ctx, BgpStanza):
            if len(tok) != 4 or tok[2] != "remote-as":
                raise ConfigSyntaxError("expected 'neighbor ADDR remote-as N'", lineno)
            ctx.neighbors.append((_host(tok[1], lineno), _int(tok[3], lineno)))
        else:
            warnings.append(f"line {lineno}: ignored {stripped!r}")
    return ParsedConfig(devices, warnings)


def parse_config(text: str) -> list[DeviceConfig]:
    """Parse candidate text into device configs; see :func:`parse_config_text`."""
    return parse_config_text(text).devices


def render_device(dev: DeviceConfig) -> list[str]:
    lines = [f"device {dev.name}"]
    for iface in dev.interfaces:
        lines.append(f"  interface {iface.name}")
        if iface.address is not None:
            lines.append(f"    ip address {iface.address.with_prefixlen}")
        if iface.link is not None:
            lines.append(f"    link {iface.link}")
    if dev.ospf is not None:
        lines.append("  router ospf")
        for net, area in dev.ospf.networks:
            lines.append(f"    network {net.with_prefixlen} area {area}")
    if dev.bgp is not None:
        lines.append(f"  router bgp {dev.bgp.asn}")
        for addr, ras in dev.bgp.neighbors:
            lines.append(f"    neighbor {addr} remote-as {ras}")
        for net in dev.bgp.networks:
            lines.append(f"    network {net.with_prefixlen}")
    for prefix, nh in dev.static_routes:
        lines.append(f"  ip route {prefix.with_prefixlen} {nh}")
    return lines


def render_config(devices: list[DeviceConfig]) -> str:
    lines: list[str] = []
    for dev in devices:
        lines.extend(render_device(dev))
    return "\n".join(lines) + ("\n" if lines else "")


def split_device_blocks(text: str) -> list[tuple[str, str]]:
    """Cut config text into ``(device name, block text)`` pieces without full parsing."""
    blocks: list[tuple[str, list[str]]] = []
    for line in text.splitlines():
        tok = line.split()
        if tok and tok[0] == "device" and not line.startswith(" "):
            blocks.append((tok[1] if len(tok) > 1 else "", [line]))
        elif blocks:
            blocks[-1][1].append(line)
    return [(name, "\n".join(lines).rstrip("\n") + "\n") for name, lines in blocks]
