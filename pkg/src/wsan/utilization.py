"""Utilization-bound schedulability tests for multi-channel mesh networks.

Channels act like processors; transmission conflicts (two flows sharing a
half-duplex node) act like blocking.  A flow's effective utilization is
mu_i = C_i / (D_i - Delta_i) where Delta_i bounds the conflict blocking, and
the multiprocessor EDF / DM utilization bounds decide schedulability.  This
module's channel model allows no spatial reuse: at most one transmission per
channel per slot network-wide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from wsan.model import Flow, ModelError, NodeId

EDF = "edf"
DM = "dm"


def wcet(route: list[NodeId], omega: int = 2) -> int:
    """Worst-case slot demand of one flow instance: links on route times the
    per-link slot reservation omega."""
    if omega < 1:
        raise ModelError("omega must be >= 1")
    if len(route) < 2:
        raise ModelError("route must have at least one link")
    return (len(route) - 1) * omega


@dataclass(frozen=True)
class ConflictStats:
    """Common-path counts between two routes (alpha) or between one path and a
    whole route set (beta); the _1 variants count single-node intersections."""

    common_paths: int
    single_node_paths: int

    def __post_init__(self):
        if self.single_node_paths > self.common_paths:
            raise ModelError("single-node common paths cannot exceed common paths")


def common_path_stats(route_i: list[NodeId], routes_j: list[list[NodeId]]) -> ConflictStats:
    """Maximal runs of route_i's nodes that appear anywhere in routes_j."""
    shared = set(route_i) & {v for r in routes_j for v in r}
    runs = []
    current = 0
    for v in route_i:
        if v in shared:
            current += 1
        elif current:
            runs.append(current)
            current = 0
    if current:
        runs.append(current)
    return ConflictStats(common_paths=len(runs),
                         single_node_paths=sum(1 for r in runs if r == 1))


def conflict_delay_tree(flow: Flow, interferers: list[Flow], omega: int = 2) -> int:
    """Tree routing: every interfering flow shares exactly one common path and
    each of its packets blocks for at most 3*omega slots."""
    return sum(3 * omega * math.ceil(flow.period / j.period) for j in interferers)


def conflict_delay_source(flow: Flow, other: Flow, stats: ConflictStats,
                          omega: int = 2) -> int:
    """Source routing: one packet pays 3*omega per common path (2*omega for
    single-node intersections); extra packets pile onto one path."""
    if stats.common_paths == 0:
        return 0
    value = (stats.common_paths + math.ceil(flow.period / other.period) - 1) * 3 * omega \
        - omega * stats.single_node_paths
    return max(0, value)


def conflict_delay_graph(flow: Flow, other: Flow,
                         per_path_stats: list[ConflictStats], omega: int = 2,
                         as_printed: bool = False) -> int:
    """Graph routing: sum the source-routing bound over every path of the
    flow's routing graph.

    Paths that never meet the interferer contribute nothing; as_printed keeps
    the raw formula value for such paths instead (which stays positive when
    several interferer packets arrive, a looser reading of the bound).
    """
    total = 0
    for stats in per_path_stats:
        if stats.common_paths == 0 and not as_printed:
            continue
        value = (stats.common_paths + math.ceil(flow.period / other.period) - 1) * 3 * omega \
            - stats.single_node_paths * omega
        total += max(0, value)
    return total


def conflict_delays(flows: list[Flow], routes: dict[int, list[NodeId]],
                    policy: str, omega: int = 2,
                    routing: str = "tree") -> dict[int, int]:
    """Delta_i per flow: DM sums over higher-priority flows, EDF over all."""
    deltas: dict[int, int] = {}
    for f in flows:
        if policy == DM:
            others = [j for j in flows
                      if j.id != f.id and (j.priority, j.id) < (f.priority, f.id)]
        elif policy == EDF:
            others = [j for j in flows if j.id != f.id]
        else:
            raise ModelError(f"unknown policy {policy!r}")
        if routing == "tree":
            interferers = [j for j in others
                           if set(routes[f.id]) & set(routes[j.id])]
            deltas[f.id] = conflict_delay_tree(f, interferers, omega)
        elif routing == "source":
            deltas[f.id] = sum(
                conflict_delay_source(f, j, common_path_stats(routes[f.id], [routes[j.id]]),
                                      omega)
                for j in others)
        else:
            raise ModelError(f"unknown routing kind {routing!r}")
    return deltas


@dataclass
class UtilizationReport:
    policy: str
    channels: int
    mu: dict[int, float] = field(default_factory=dict)
    wcet: dict[int, int] = field(default_factory=dict)
    delta: dict[int, int] = field(default_factory=dict)
    mu_max: float = 0.0
    mu_sum: float = 0.0
    bound: float = 0.0
    schedulable: bool = False
    reason: str = ""


def utilization_test(flows: list[Flow], routes: dict[int, list[NodeId]],
                     deltas: dict[int, int], m: int, policy: str,
                     omega: int = 2) -> UtilizationReport:
    """EDF: mu_sum <= m - (m-1) mu_max.  DM: mu_sum <= m/2 (1 - mu_max) + mu_max.
    A conflict delay at or beyond the deadline fails immediately."""
    if m < 1:
        raise ModelError("need at least one channel")
    report = UtilizationReport(policy=policy, channels=m)
    for f in flows:
        c = wcet(routes[f.id], omega)
        d = deltas.get(f.id, 0)
        report.wcet[f.id] = c
        report.delta[f.id] = d
        if d >= f.deadline:
            report.reason = f"flow {f.id}: conflict delay {d} >= deadline {f.deadline}"
            report.schedulable = False
            return report
        mu = c / (f.deadline - d)
        if mu > 1.0:
            report.reason = f"flow {f.id}: effective utilization {mu:.3f} > 1"
            report.schedulable = False
            return report
        report.mu[f.id] = mu
    report.mu_max = max(report.mu.values(), default=0.0)
    report.mu_sum = sum(report.mu.values())
    if policy == EDF:
        report.bound = m - (m - 1) * report.mu_max
    elif policy == DM:
        report.bound = (m / 2) * (1 - report.mu_max) + report.mu_max
    else:
        raise ModelError(f"unknown policy {policy!r}")
    report.schedulable = report.mu_sum <= report.bound
    if not report.schedulable:
        report.reason = f"mu_sum {report.mu_sum:.3f} > bound {report.bound:.3f}"
    return report


def analyze(flows: list[Flow], routes: dict[int, list[NodeId]], m: int,
            policy: str, omega: int = 2, routing: str = "tree") -> UtilizationReport:
    deltas = conflict_delays(flows, routes, policy, omega, routing)
    return utilization_test(flows, routes, deltas, m, policy, omega)


def hierarchical_decompose(flow: Flow, subnetworks: list[str]) -> list[tuple[str, int, int]]:
    """Equal split of the deadline into per-subnetwork (release, sub-deadline)
    windows; each window releases where the previous one ends."""
    k = len(subnetworks)
    if k < 1:
        raise ModelError("need at least one subnetwork")
    if flow.deadline < k:
        raise ModelError(f"deadline {flow.deadline} shorter than {k} subnetworks")
    bounds = [round(i * flow.deadline / k) for i in range(k + 1)]
    return [(name, bounds[i], bounds[i + 1]) for i, name in enumerate(subnetworks)]


# --------------------------------------------------------------------------
# Hyper-period schedule simulation (the soundness oracle's world model)
# --------------------------------------------------------------------------


def simulate_hyper_period(flows: list[Flow], routes: dict[int, list[NodeId]],
                          m: int, policy: str, omega: int = 2,
                          horizon: int | None = None) -> dict:
    """Slot-accurate priority schedule under this module's channel model.

    Each hop needs omega slot grants; per slot at most m transmissions happen
    network-wide (no spatial reuse) and a node takes part in at most one of
    them.  Returns per-flow max latency and the deadline-miss count.
    """
    if horizon is None:
        horizon = math.lcm(*(f.period for f in flows))
    packets = []
    for f in flows:
        for k in range(math.ceil(horizon / f.period)):
            release = f.release_offset + k * f.period
            if release >= horizon:
                continue
            packets.append({
                "flow": f, "release": release, "deadline": release + f.deadline,
                "hop": 0, "credit": 0, "done": None,
            })
    misses = 0
    max_latency: dict[int, int] = {}
    for slot in range(horizon + max(f.deadline for f in flows)):
        ready = [p for p in packets if p["done"] is None and p["release"] <= slot]
        for p in ready:
            if slot >= p["deadline"]:
                p["done"] = -1
                misses += 1
        ready = [p for p in ready if p["done"] is None]
        if policy == DM:
            ready.sort(key=lambda p: (p["flow"].priority, p["release"], p["flow"].id))
        else:
            ready.sort(key=lambda p: (p["deadline"], p["flow"].id, p["release"]))
        busy_nodes: set[NodeId] = set()
        used = 0
        for p in ready:
            if used >= m:
                break
            path = routes[p["flow"].id]
            u, v = path[p["hop"]], path[p["hop"] + 1]
            if u in busy_nodes or v in busy_nodes:
                continue
            busy_nodes.update((u, v))
            used += 1
            p["credit"] += 1
            if p["credit"] >= omega:
                p["credit"] = 0
                p["hop"] += 1
                if p["hop"] == len(path) - 1:
                    p["done"] = slot + 1
                    latency = slot + 1 - p["release"]
                    key = p["flow"].id
                    max_latency[key] = max(max_latency.get(key, 0), latency)
    for p in packets:
        if p["done"] is None:
            misses += 1
    return {"misses": misses, "max_latency": max_latency}
