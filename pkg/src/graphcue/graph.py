"""The JSON graph abstraction ``(X, A, M)`` built from a topology case."""

from __future__ import annotations

import ipaddress
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCase, MalformedCase
from .topology import DEVICE_KINDS, PROTOCOLS, TopologyCase

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

FEATURE_DECIMALS = 6


def hash_token(token: str, buckets: int) -> int:
    """Stable bucket index for ``token``.

    64-bit FNV-1a over the UTF-8 bytes, then the high and low 32-bit halves
    are xor-folded and reduced modulo ``buckets``.
    """
    if buckets < 1:
        raise ValueError("buckets must be >= 1")
    h = FNV64_OFFSET
    for byte in token.encode("utf-8"):
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    folded = (h >> 32) ^ (h & 0xFFFFFFFF)
    return folded % buckets


@dataclass(frozen=True)
class FeatureSchema:
    version: int = 1
    hash_buckets_iface: int = 16
    hash_buckets_addr: int = 16

    @property
    def layout(self) -> list[tuple[str, int]]:
        return [
            ("kind", len(DEVICE_KINDS)),
            ("degree", 1),
            ("clustering", 1),
            ("leaf", 1),
            ("protocols", len(PROTOCOLS)),
            ("intent_count", 1),
            ("iface_hash", self.hash_buckets_iface),
            ("addr_hash", self.hash_buckets_addr),
        ]

    @property
    def width(self) -> int:
        return sum(w for _, w in self.layout)

    def offset(self, slot: str) -> int:
        pos = 0
        for name, w in self.layout:
            if name == slot:
                return pos
            pos += w
        raise KeyError(slot)


DEFAULT_SCHEMA = FeatureSchema()


def pair_key(node_ids: list[str], u: str, v: str) -> tuple[str, str]:
    """Canonical unordered pair: endpoint with the lower node index first."""
    index = {n: i for i, n in enumerate(node_ids)}
    return (u, v) if index[u] <= index[v] else (v, u)


@dataclass
class JsonGraph:
    node_ids: list[str]
    X: np.ndarray
    A: np.ndarray
    M: dict[tuple[str, str], int]
    schema_version: int = 1
    case_id: str | None = None
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def validate(self) -> None:
        n = len(self.node_ids)
        if len(set(self.node_ids)) != n:
            raise MalformedCase("duplicate node ids")
        if self.X.ndim != 2 or self.X.shape[0] != n:
            raise MalformedCase(f"X has shape {self.X.shape}, expected ({n}, F)")
        if self.A.shape != (n, n):
            raise MalformedCase(f"A has shape {self.A.shape}, expected ({n}, {n})")
        if not np.array_equal(self.A, self.A.T):
            raise MalformedCase("A is not symmetric")
        if not np.all(np.diag(self.A) == 1):
            raise MalformedCase("A lacks self-loops")
        index = {v: i for i, v in enumerate(self.node_ids)}
        expected = np.eye(n, dtype=self.A.dtype)
        for (u, v), count in self.M.items():
            if count < 1:
                raise MalformedCase(f"multiplicity for {u}|{v} must be >= 1")
            if u not in index or v not in index or u == v:
                raise MalformedCase(f"bad multiplicity pair {u}|{v}")
            expected[index[u], index[v]] = expected[index[v], index[u]] = 1
        if not np.array_equal(self.A, expected):
            raise MalformedCase("A disagrees with M")

    def __eq__(self, other):
        if not isinstance(other, JsonGraph):
            return NotImplemented
        return (
            self.node_ids == other.node_ids
            and self.schema_version == other.schema_version
            and self.case_id == other.case_id
            and self.M == other.M
            and np.array_equal(self.A, other.A)
            and self.X.shape == other.X.shape
            and np.array_equal(self.X, other.X)
        )

    def pair_counts(self) -> dict[frozenset, int]:
        """Per device-pair link count, reconstructed from ``A`` and ``M`` alone."""
        out = {}
        n = self.n_nodes
        for i in range(n):
            for j in range(i + 1, n):
                if self.A[i, j]:
                    u, v = self.node_ids[i], self.node_ids[j]
                    out[frozenset((u, v))] = self.M[pair_key(self.node_ids, u, v)]
        return out


def _clustering(adj: list[set[int]], i: int) -> float:
    nbrs = sorted(adj[i])
    k = len(nbrs)
    if k < 2:
        return 0.0
    tri = sum(1 for x in range(k) for y in range(x + 1, k) if nbrs[y] in adj[nbrs[x]])
    return 2.0 * tri / (k * (k - 1))


def _address_tokens(case: TopologyCase, device) -> list[str]:
    tokens = []
    for iface in device.interfaces:
        if iface.address is not None:
            tokens.append(str(ipaddress.ip_interface(iface.address).network))
    memberships = case.memberships()[device.name]
    for k in memberships:
        intent = case.intents[k]
        for key in ("prefix", "network"):
            if key in intent.params:
                tokens.append(f"{intent.protocol}:{intent.params[key]}")
    return tokens


def build_graph(case: TopologyCase, schema: FeatureSchema = DEFAULT_SCHEMA) -> JsonGraph:
    """Map a case to its feature graph; degree counts parallel links."""
    if not case.devices:
        raise EmptyCase(f"case {case.case_id} has no devices")
    node_ids = case.device_names()
    index = {n: i for i, n in enumerate(node_ids)}
    n = len(node_ids)

    M: dict[tuple[str, str], int] = {}
    for link in case.links:
        u, v = link.devices()
        if u == v:
            continue
        key = pair_key(node_ids, u, v)
        M[key] = M.get(key, 0) + 1

    A = np.eye(n, dtype=np.int8)
    adj: list[set[int]] = [set() for _ in range(n)]
    degree = np.zeros(n)
    for (u, v), count in M.items():
        i, j = index[u], index[v]
        A[i, j] = A[j, i] = 1
        adj[i].add(j)
        adj[j].add(i)
        degree[i] += count
        degree[j] += count

    X = np.zeros((n, schema.width))
    memberships = case.memberships()
    o_kind = schema.offset("kind")
    o_proto = schema.offset("protocols")
    o_iface = schema.offset("iface_hash")
    o_addr = schema.offset("addr_hash")
    for i, dev in enumerate(case.devices):
        X[i, o_kind + DEVICE_KINDS.index(dev.kind)] = 1.0
        X[i, schema.offset("degree")] = degree[i]
        X[i, schema.offset("clustering")] = _clustering(adj, i)
        X[i, schema.offset("leaf")] = 1.0 if len(adj[i]) == 1 else 0.0
        for k in memberships[dev.name]:
            X[i, o_proto + PROTOCOLS.index(case.intents[k].protocol)] += 1.0
        X[i, schema.offset("intent_count")] = len(memberships[dev.name])
        for iface in dev.interfaces:
            X[i, o_iface + hash_token(iface.name, schema.hash_buckets_iface)] += 1.0
        for tok in _address_tokens(case, dev):
            X[i, o_addr + hash_token(tok, schema.hash_buckets_addr)] += 1.0
    X = np.round(X, FEATURE_DECIMALS)
    return JsonGraph(node_ids, X, A, M, schema.version, case.case_id)


def graph_to_dict(g: JsonGraph) -> dict:
    pairs = []
    n = g.n_nodes
    for i in range(n):
        for j in range(i + 1, n):
            if g.A[i, j]:
                pairs.append([g.node_ids[i], g.node_ids[j]])
    out = {
        "node_ids": list(g.node_ids),
        "X": np.round(g.X, FEATURE_DECIMALS).tolist(),
        "A": pairs,
        "M": {f"{u}|{v}": int(c) for (u, v), c in g.M.items()},
        "schema_version": g.schema_version,
    }
    if g.case_id is not None:
        out["case_id"] = g.case_id
    return out


def serialize_graph(g: JsonGraph) -> str:
    """Canonical text form: sorted keys, node order kept, features at 1e-6 resolution."""
    return json.dumps(graph_to_dict(g), sort_keys=True, separators=(",", ":"))


def graph_from_dict(doc: dict) -> JsonGraph:
    try:
        node_ids = list(doc["node_ids"])
        n = len(node_ids)
        X = np.array(doc["X"], dtype=np.float64).reshape(n, -1) if n else np.zeros((0, 0))
        index = {v: i for i, v in enumerate(node_ids)}
        A = np.eye(n, dtype=np.int8)
        for u, v in doc["A"]:
            A[index[u], index[v]] = A[index[v], index[u]] = 1
        M = {}
        for key, count in doc["M"].items():
            u, v = key.split("|")
            M[pair_key(node_ids, u, v)] = int(count)
        g = JsonGraph(node_ids, X, A, M, int(doc["schema_version"]), doc.get("case_id"))
    except (KeyError, ValueError, TypeError) as exc:
        raise MalformedCase(f"bad graph document: {exc}") from exc
    g.validate()
    return g


def deserialize_graph(text: str) -> JsonGraph:
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise MalformedCase(f"graph text is not JSON: {exc}") from exc
    return graph_from_dict(doc)


def permute_graph(g: JsonGraph, perm) -> JsonGraph:
    """Relabel node order: new position ``k`` holds old node ``perm[k]``."""
    perm = list(perm)
    node_ids = [g.node_ids[p] for p in perm]
    M = {pair_key(node_ids, u, v): c for (u, v), c in g.M.items()}
    return JsonGraph(node_ids, g.X[perm].copy(), g.A[np.ix_(perm, perm)].copy(), M,
                     g.schema_version, g.case_id)
