"""Core domain model: topologies, flows, link quality, energy, metrics.

All protocol and analysis modules build on the types defined here.  Time is
measured in integer slots of 10 ms unless stated otherwise.
"""

from __future__ import annotations

import hashlib
import math
import random
from collections import deque
from dataclasses import dataclass, field, replace

NodeId = int

SLOT_MS = 10.0


def derive_seed(seed: int, tag: str) -> int:
    """Stable sub-seed for (seed, module-tag); independent of PYTHONHASHSEED."""
    digest = hashlib.sha256(f"{tag}:{seed}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def module_rng(seed: int, tag: str) -> random.Random:
    return random.Random(derive_seed(seed, tag))


class ModelError(ValueError):
    """Raised when a domain object or generator input violates its contract."""


@dataclass(frozen=True)
class NetworkTopology:
    """Undirected communication graph with gateway, access points, interference.

    Edges are stored in both directions.  Interference pairs are *extra*
    relations on top of communication edges: a transmission by u is heard
    (as noise) at v whenever u-v is a communication edge or an interference
    pair.
    """

    nodes: frozenset[NodeId]
    edges: frozenset[tuple[NodeId, NodeId]]
    gateway: NodeId
    access_points: frozenset[NodeId] = frozenset()
    interference_edges: frozenset[frozenset[NodeId]] = frozenset()

    def __post_init__(self):
        if self.gateway not in self.nodes:
            raise ModelError(f"gateway {self.gateway} not in nodes")
        if not self.access_points <= self.nodes:
            raise ModelError("access_points must be a subset of nodes")
        for u, v in self.edges:
            if u == v:
                raise ModelError(f"self-edge at node {u}")
            if u not in self.nodes or v not in self.nodes:
                raise ModelError(f"edge ({u},{v}) endpoint not in nodes")
        missing = {(v, u) for u, v in self.edges} - set(self.edges)
        if missing:
            raise ModelError(f"edges not stored both ways: {sorted(missing)[:3]}")

    @staticmethod
    def build(nodes, edges, gateway, access_points=(), interference_pairs=()) -> "NetworkTopology":
        """Build from undirected edge pairs (each pair stored both ways)."""
        both = set()
        for u, v in edges:
            both.add((u, v))
            both.add((v, u))
        interf = frozenset(frozenset(p) for p in interference_pairs)
        return NetworkTopology(
            nodes=frozenset(nodes),
            edges=frozenset(both),
            gateway=gateway,
            access_points=frozenset(access_points),
            interference_edges=interf,
        )

    def neighbors(self, u: NodeId) -> list[NodeId]:
        return sorted(v for (a, v) in self.edges if a == u)

    def has_edge(self, u: NodeId, v: NodeId) -> bool:
        return (u, v) in self.edges

    def interferes(self, u: NodeId, v: NodeId) -> bool:
        """True if a transmission by u is heard at v as noise.

        The relation is exactly interference_edges; generators that model a
        radio disk include the communication pairs in it (see
        with_disk_interference), while an empty set means conflicts reduce to
        half-duplex and shared-receiver constraints.
        """
        if u == v:
            return True
        return frozenset((u, v)) in self.interference_edges

    def field_devices(self) -> list[NodeId]:
        return sorted(self.nodes - self.access_points - {self.gateway})

    def is_connected(self) -> bool:
        if not self.nodes:
            return False
        seen = {next(iter(self.nodes))}
        queue = deque(seen)
        while queue:
            u = queue.popleft()
            for v in self.neighbors(u):
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == len(self.nodes)

    def shortest_hops(self, src: NodeId) -> dict[NodeId, int]:
        """BFS hop distances from src (the routing oracle used by tests)."""
        dist = {src: 0}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in self.neighbors(u):
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist

    def shortest_path(self, src: NodeId, dst: NodeId) -> list[NodeId] | None:
        """Lowest-hop path, ties broken toward lower node ids."""
        dist = self.shortest_hops(dst)
        if src not in dist:
            return None
        path = [src]
        cur = src
        while cur != dst:
            cur = min(v for v in self.neighbors(cur) if dist.get(v, math.inf) == dist[cur] - 1)
            path.append(cur)
        return path


@dataclass(frozen=True, order=True)
class Flow:
    """Periodic end-to-end control loop.  Lower priority value = higher priority."""

    id: int
    source: NodeId
    destination: NodeId
    period: int
    deadline: int
    priority: int = 0
    release_offset: int = 0

    def __post_init__(self):
        if self.source == self.destination:
            raise ModelError(f"flow {self.id}: source equals destination")
        if not (0 < self.deadline <= self.period):
            raise ModelError(f"flow {self.id}: need 0 < deadline <= period")


@dataclass(frozen=True)
class EnergyModel:
    energy_per_tx_mj: float = 0.22
    slot_length_ms: float = SLOT_MS

    def __post_init__(self):
        if self.energy_per_tx_mj <= 0 or self.slot_length_ms <= 0:
            raise ModelError("energy model fields must be strictly positive")


@dataclass
class MetricRecord:
    """Aggregate counters produced by a simulation or protocol run."""

    energy_mj_per_node: dict[NodeId, float] = field(default_factory=dict)
    memory_bytes_per_node: dict[NodeId, int] = field(default_factory=dict)
    convergence_slots: int = 0
    max_latency: dict[int, int] = field(default_factory=dict)
    avg_latency: dict[int, float] = field(default_factory=dict)
    deadline_misses: int = 0

    @property
    def schedulable(self) -> bool:
        return self.deadline_misses == 0

    @property
    def total_energy_mj(self) -> float:
        return sum(self.energy_mj_per_node.values())


# --------------------------------------------------------------------------
# Link quality models
# --------------------------------------------------------------------------

GOOD_SNR_DB = 25.0
BAD_SNR_DB = 0.0


@dataclass(frozen=True)
class ConstantLink:
    prr: float

    def __post_init__(self):
        if not 0.0 <= self.prr <= 1.0:
            raise ModelError("prr must be in [0,1]")


@dataclass(frozen=True)
class TwoStateMarkovLink:
    p_good_to_bad: float
    p_bad_to_good: float
    prr_good: float = 1.0
    prr_bad: float = 0.0

    def __post_init__(self):
        for p in (self.p_good_to_bad, self.p_bad_to_good, self.prr_good, self.prr_bad):
            if not 0.0 <= p <= 1.0:
                raise ModelError("all Markov probabilities must be in [0,1]")


@dataclass(frozen=True)
class TraceLink:
    """Replay of per-slot (good, snr_db) samples; wraps around when exhausted."""

    samples: tuple[tuple[bool, float], ...]

    def __post_init__(self):
        if not self.samples:
            raise ModelError("trace must be non-empty")


LinkQualityModel = ConstantLink | TwoStateMarkovLink | TraceLink


class LinkSampler:
    """Deterministic per-slot channel realization of one link-quality model.

    The same (sampler, slot) pair always returns the same outcome, so every
    probe of a given link in a given slot sees one channel state.
    """

    def __init__(self, model: LinkQualityModel, seed: int = 0):
        self.model = model
        self._rng = random.Random(derive_seed(seed, "link"))
        self._cache: list[tuple[bool, float]] = []
        self._markov_good = True

    def sample(self, slot: int) -> tuple[bool, float]:
        if slot < 0:
            raise ModelError("slot must be >= 0")
        if isinstance(self.model, TraceLink):
            return self.model.samples[slot % len(self.model.samples)]
        while len(self._cache) <= slot:
            self._cache.append(self._draw())
        return self._cache[slot]

    def success(self, slot: int) -> bool:
        return self.sample(slot)[0]

    def _draw(self) -> tuple[bool, float]:
        m = self.model
        if isinstance(m, ConstantLink):
            ok = self._rng.random() < m.prr
            return ok, GOOD_SNR_DB if ok else BAD_SNR_DB
        good = self._markov_good
        flip = self._rng.random()
        if good and flip < m.p_good_to_bad:
            self._markov_good = False
        elif not good and flip < m.p_bad_to_good:
            self._markov_good = True
        prr = m.prr_good if good else m.prr_bad
        ok = self._rng.random() < prr
        snr = GOOD_SNR_DB if good else BAD_SNR_DB
        return ok, snr


def sample_link(model: LinkQualityModel, slot: int, seed: int = 0) -> tuple[bool, float]:
    """One-shot convenience wrapper; use LinkSampler for repeated sampling."""
    return LinkSampler(model, seed).sample(slot)


# --------------------------------------------------------------------------
# Topology and workload generators
# --------------------------------------------------------------------------


def generate_grid_topology(base: NetworkTopology, replication: int, seed: int = 0) -> NetworkTopology:
    """Replicate a connected base topology into `replication` neighboring copies.

    Copy k holds node ids offset by k * |base.nodes|; a seeded subset of
    corresponding node pairs bridges each pair of neighboring copies.
    """
    if replication < 1:
        raise ModelError("replication must be >= 1")
    if not base.is_connected():
        raise ModelError("base topology must be connected")
    if replication == 1:
        return base

    rng = module_rng(seed, "grid")
    index = {v: i for i, v in enumerate(sorted(base.nodes))}
    n = len(index)
    nodes = set()
    edges = set()
    interf = set()
    for k in range(replication):
        off = k * n
        nodes.update(index[v] + off for v in base.nodes)
        for u, v in base.edges:
            edges.add((index[u] + off, index[v] + off))
        for pair in base.interference_edges:
            a, b = sorted(pair)
            interf.add((index[a] + off, index[b] + off))
    bridge_count = max(1, n // 10)
    for k in range(replication - 1):
        picks = rng.sample(sorted(index.values()), bridge_count)
        for i in picks:
            edges.add((i + k * n, i + (k + 1) * n))
    aps = {index[v] + k * n for v in base.access_points for k in range(replication)}
    topo = NetworkTopology.build(nodes, edges, gateway=index[base.gateway], access_points=aps,
                                 interference_pairs=interf)
    assert topo.is_connected()
    return topo


def generate_random_flows(topo: NetworkTopology, n: int, period_range: tuple[int, int],
                          harmonic: bool = True, seed: int = 0) -> list[Flow]:
    """Random flows between distinct non-gateway field devices.

    Harmonic mode draws periods from the powers of two inside period_range,
    so the LCM of all periods equals the largest period.  Priorities are
    deadline-monotonic (ties by flow id), deadlines implicit (= period).
    """
    lo, hi = period_range
    if n < 1:
        raise ModelError("need n >= 1")
    if lo > hi or lo < 1:
        raise ModelError("need 1 <= lo <= hi")
    devices = topo.field_devices()
    if len(devices) < 2:
        raise ModelError("topology needs at least 2 non-gateway field devices")
    if harmonic:
        choices = [1 << k for k in range(lo.bit_length() - 1, hi.bit_length() + 1)
                   if lo <= (1 << k) <= hi]
        if not choices:
            raise ModelError(f"no power of two inside [{lo}, {hi}]")
    rng = module_rng(seed, "flows")
    flows = []
    for i in range(n):
        src, dst = rng.sample(devices, 2)
        period = rng.choice(choices) if harmonic else rng.randint(lo, hi)
        flows.append(Flow(id=i + 1, source=src, destination=dst,
                          period=period, deadline=period))
    order = sorted(flows, key=lambda f: (f.deadline, f.id))
    prio = {f.id: rank + 1 for rank, f in enumerate(order)}
    return [replace(f, priority=prio[f.id]) for f in flows]


def line_topology(n: int, gateway: NodeId = 0) -> NetworkTopology:
    edges = [(i, i + 1) for i in range(n - 1)]
    return NetworkTopology.build(range(n), edges, gateway=gateway)


def ring_topology(n: int, gateway: NodeId = 0) -> NetworkTopology:
    edges = [(i, (i + 1) % n) for i in range(n)]
    return NetworkTopology.build(range(n), edges, gateway=gateway)


def with_disk_interference(topo: NetworkTopology, factor: int = 2) -> NetworkTopology:
    """Disk-model interference: all node pairs within `factor` hops interfere.

    Stands in for a measured interference map; the communication pairs are
    included (a neighbor always hears you).
    """
    if factor < 1:
        raise ModelError("interference factor must be >= 1")
    pairs = set()
    for u in sorted(topo.nodes):
        for v, d in topo.shortest_hops(u).items():
            if u < v and 1 <= d <= factor:
                pairs.add((u, v))
    return replace(topo, interference_edges=frozenset(frozenset(p) for p in pairs))


def random_connected_topology(n: int, extra_edge_prob: float, seed: int,
                              interference_factor: int = 2) -> NetworkTopology:
    """Random tree plus extra edges, with disk-model interference pairs."""
    rng = module_rng(seed, "randtopo")
    nodes = list(range(n))
    edges = set()
    for v in nodes[1:]:
        edges.add((rng.randrange(v), v))
    for u in nodes:
        for v in nodes[u + 1:]:
            if (u, v) not in edges and rng.random() < extra_edge_prob:
                edges.add((u, v))
    topo = NetworkTopology.build(nodes, edges, gateway=0)
    if interference_factor >= 1:
        topo = with_disk_interference(topo, interference_factor)
    return topo


def hyper_period(flows) -> int:
    return math.lcm(*(f.period for f in flows))
