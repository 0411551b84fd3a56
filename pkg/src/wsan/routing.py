"""Clustered distributed graph routing.

Every node keeps least-cost routes (through each neighbor) to the known
destinations inside its own cluster and to all cluster heads; packets headed
out of the cluster are forwarded toward the destination's cluster head and
switch to direct rows once they enter that cluster.  Routing tables are built
by a synchronous-round broadcast simulation of distance-vector updates, which
converges to the same fixed point as the asynchronous protocol.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from wsan.model import ModelError, NetworkTopology, NodeId, module_rng

INFINITY = math.inf


@dataclass(frozen=True)
class Cluster:
    head: NodeId
    members: frozenset[NodeId]

    def __post_init__(self):
        if self.head not in self.members:
            raise ModelError(f"cluster head {self.head} not among members")


@dataclass
class RouteRow:
    cost: float
    sequence_number: int


@dataclass
class RoutingTable:
    """Per-destination, per-neighbor costs at one node."""

    owner: NodeId
    rows: dict[NodeId, dict[NodeId, RouteRow]] = field(default_factory=dict)

    def destinations(self) -> set[NodeId]:
        return set(self.rows)

    def best(self, dest: NodeId, exclude=()) -> tuple[NodeId, float] | None:
        """Least-cost neighbor toward dest; ties broken by lowest neighbor id."""
        candidates = [
            (row.cost, nbr)
            for nbr, row in self.rows.get(dest, {}).items()
            if nbr not in exclude and row.cost < INFINITY
        ]
        if not candidates:
            return None
        cost, nbr = min(candidates)
        return nbr, cost

    def best_cost(self, dest: NodeId) -> float:
        found = self.best(dest)
        return found[1] if found else INFINITY


@dataclass
class RoutingGraph:
    """Per-destination DAG: every node forwards along strictly improving rows."""

    destination: NodeId
    edges: dict[NodeId, list[NodeId]]
    primary_paths: dict[NodeId, list[NodeId]]
    redundancy_ok: bool


@dataclass
class RoutingResult:
    tables: dict[NodeId, RoutingTable]
    cluster_of: dict[NodeId, Cluster]
    head_of_destination: dict[NodeId, NodeId]
    message_count: int
    rounds: int


def cluster_network(topo: NetworkTopology, target_fraction: float, seed: int = 0,
                    repair: bool = True) -> list[Cluster]:
    """LEACH-style clustering: seeded random head election, join nearest head.

    With repair enabled, clusters too small for their radius (|C| < 2r + 2,
    where r is the max member-to-head distance) are merged into the cluster
    with the nearest head.  A cluster routed through its head can detour a
    packet by up to 2r hops, so this size floor is the prerequisite for the
    detour bound L <= R + |C| - 2 checked by check_approximation_bound.
    """
    if not 0.0 < target_fraction <= 1.0:
        raise ModelError("target_fraction must be in (0, 1]")
    rng = module_rng(seed, "cluster")
    nodes = sorted(topo.nodes)
    heads = [v for v in nodes if rng.random() < target_fraction]
    if not heads:
        heads = [rng.choice(nodes)]
    members: dict[NodeId, set[NodeId]] = {h: {h} for h in heads}
    dist_from_head = {h: topo.shortest_hops(h) for h in heads}
    for v in nodes:
        if v in members:
            continue
        reachable = [(dist_from_head[h].get(v, INFINITY), h) for h in heads]
        d, h = min(reachable)
        if d == INFINITY:
            raise ModelError(f"node {v} cannot reach any cluster head")
        members[h].add(v)
    if repair:
        members = _merge_undersized(topo, members)
    return [Cluster(head=h, members=frozenset(ms)) for h, ms in sorted(members.items())]


def _radius(topo: NetworkTopology, head: NodeId, ms: set[NodeId]) -> int:
    dist = topo.shortest_hops(head)
    return max(dist.get(m, len(topo.nodes)) for m in ms)


def _merge_undersized(topo, members: dict[NodeId, set[NodeId]]) -> dict[NodeId, set[NodeId]]:
    while len(members) > 1:
        bad = [h for h, ms in members.items() if len(ms) < 2 * _radius(topo, h, ms) + 2]
        if not bad:
            break
        h = min(bad)
        others = [o for o in members if o != h]
        dist = topo.shortest_hops(h)
        target = min(others, key=lambda o: (dist.get(o, INFINITY), o))
        members[target] |= members.pop(h)
    return members


def singleton_clustering(topo: NetworkTopology) -> list[Cluster]:
    """One cluster spanning the whole network (degenerate case: plain routing)."""
    head = min(topo.nodes)
    return [Cluster(head=head, members=frozenset(topo.nodes))]


def one_hop_clusters(topo: NetworkTopology, seed: int = 0) -> list[Cluster]:
    """Greedy clustering in which every member is one hop from its head."""
    rng = module_rng(seed, "onehop")
    nodes = sorted(topo.nodes)
    rng.shuffle(nodes)
    assigned: dict[NodeId, NodeId] = {}
    heads: list[NodeId] = []
    for v in nodes:
        if v in assigned:
            continue
        heads.append(v)
        assigned[v] = v
        for u in topo.neighbors(v):
            if u not in assigned:
                assigned[u] = v
    members: dict[NodeId, set[NodeId]] = {h: set() for h in heads}
    for v, h in assigned.items():
        members[h].add(v)
    return [Cluster(head=h, members=frozenset(ms)) for h, ms in sorted(members.items())]


def _cluster_map(clusters) -> dict[NodeId, Cluster]:
    out: dict[NodeId, Cluster] = {}
    for c in clusters:
        for v in c.members:
            if v in out:
                raise ModelError(f"clusters do not partition the nodes: {v} repeated")
            out[v] = c
    return out


def run_distributed_routing(topo: NetworkTopology, clusters: list[Cluster],
                            destinations: set[NodeId],
                            cost_fn=None) -> RoutingResult:
    """Synchronous-round distance-vector simulation of the routing protocol.

    Destination nodes and cluster heads seed the broadcasts.  A node accepts a
    received row only if it is for a cluster head or for a destination inside
    the node's own cluster, and re-broadcasts whenever one of its best costs
    improves.  After convergence each head floods the list of destinations in
    its cluster so that every node can map a destination to its head.
    """
    if not destinations <= topo.nodes:
        raise ModelError("destinations must be a subset of the topology nodes")
    cluster_of = _cluster_map(clusters)
    if set(cluster_of) != set(topo.nodes):
        raise ModelError("clusters must partition all nodes")
    if cost_fn is None:
        cost_fn = lambda u, v: 1.0

    heads = {c.head for c in clusters}
    tables = {v: RoutingTable(owner=v) for v in topo.nodes}
    # best-known own cost per advertised target (the vector a node broadcasts)
    own_cost: dict[NodeId, dict[NodeId, float]] = {v: {} for v in topo.nodes}
    seq: dict[NodeId, dict[NodeId, int]] = {v: {} for v in topo.nodes}

    def tracks(node: NodeId, target: NodeId) -> bool:
        if target in heads:
            return True
        return target in destinations and target in cluster_of[node].members

    pending = set()
    for t in sorted(destinations | heads):
        own_cost[t][t] = 0.0
        seq[t][t] = 0
        pending.add(t)

    message_count = 0
    rounds = 0
    round_limit = max(1, len(topo.nodes) * max(1, len(topo.edges) // 2))
    while pending:
        rounds += 1
        if rounds > round_limit:
            raise ModelError("distance-vector iteration exceeded the |V|*|E| round bound")
        broadcasts = [(v, dict(own_cost[v])) for v in sorted(pending)]
        message_count += len(broadcasts)
        pending = set()
        for sender, vector in broadcasts:
            for receiver in topo.neighbors(sender):
                table = tables[receiver]
                for target, cost in vector.items():
                    if target == receiver or not tracks(receiver, target):
                        continue
                    new_cost = cost + cost_fn(receiver, sender)
                    rows = table.rows.setdefault(target, {})
                    row = rows.get(sender)
                    if row is None or new_cost < row.cost:
                        rows[sender] = RouteRow(cost=new_cost, sequence_number=rounds)
                        best = table.best_cost(target)
                        if best < own_cost[receiver].get(target, INFINITY):
                            own_cost[receiver][target] = best
                            seq[receiver][target] = rounds
                            pending.add(receiver)

    # heads flood which destinations live in their cluster (one broadcast per
    # node per head, a controlled flood over the communication graph)
    head_of_destination = {}
    for c in clusters:
        in_cluster = sorted(d for d in destinations if d in c.members)
        if in_cluster:
            message_count += len(topo.nodes)
        for d in in_cluster:
            head_of_destination[d] = c.head
    return RoutingResult(tables=tables, cluster_of=cluster_of,
                         head_of_destination=head_of_destination,
                         message_count=message_count, rounds=rounds)


@dataclass
class RouteOutcome:
    delivered: bool
    path: list[NodeId]
    reason: str = ""


def route_packet(result: RoutingResult, src: NodeId, dst: NodeId,
                 failed_links: set[tuple[NodeId, NodeId]] | None = None) -> RouteOutcome:
    """Greedy per-hop forwarding on converged tables with back-up neighbors.

    A failed link (u, v) blocks both directions for this delivery.  Visited
    nodes are never re-entered, which both implements the DSDV loop-freedom
    contract and turns pathological table states into delivery failures.
    """
    failed = set()
    for u, v in failed_links or ():
        failed.add((u, v))
        failed.add((v, u))
    if dst not in result.head_of_destination and all(
            dst not in t.rows for t in result.tables.values()):
        raise ModelError(f"{dst} is not a known destination")

    path = [src]
    visited = {src}
    cur = src
    while cur != dst:
        table = result.tables[cur]
        if dst in table.rows:
            target = dst
        else:
            head = result.head_of_destination.get(dst)
            if head is None:
                return RouteOutcome(False, path, "destination cluster unknown")
            target = head if head != cur else dst
            if target == dst and dst not in table.rows:
                return RouteOutcome(False, path, "reached head but no row for destination")
        exclude = visited | {v for (u, v) in failed if u == cur}
        found = table.best(target, exclude=exclude)
        if found is None:
            return RouteOutcome(False, path, f"no usable neighbor toward {target} at {cur}")
        nxt = found[0]
        path.append(nxt)
        visited.add(nxt)
        cur = nxt
    return RouteOutcome(True, path)


def build_routing_graph(topo: NetworkTopology, result: RoutingResult, dst: NodeId) -> RoutingGraph:
    """Per-destination DAG over (cost, id)-decreasing rows, with primary paths.

    Each non-destination node keeps at least two outgoing neighbors whenever
    its table offers them; redundancy_ok reports whether that held everywhere.
    """
    def key(node: NodeId) -> tuple[float, NodeId]:
        if node == dst:
            return (0.0, node)
        return (result.tables[node].best_cost(dst), node)

    edges: dict[NodeId, list[NodeId]] = {}
    redundancy_ok = True
    for v in sorted(topo.nodes):
        if v == dst:
            continue
        table = result.tables[v]
        if dst not in table.rows:
            continue
        cost_v = key(v)
        outgoing = [n for n in table.rows[dst]
                    if table.rows[dst][n].cost < INFINITY and key(n) < cost_v]
        outgoing.sort(key=lambda n: (table.rows[dst][n].cost, n))
        edges[v] = outgoing
        if len(outgoing) < 2:
            redundancy_ok = False
    primary: dict[NodeId, list[NodeId]] = {}
    for v in edges:
        outcome = route_packet(result, v, dst)
        if outcome.delivered:
            primary[v] = outcome.path
    return RoutingGraph(destination=dst, edges=edges, primary_paths=primary,
                        redundancy_ok=redundancy_ok)


@dataclass
class BoundReport:
    pairs: int
    slack_checked: int
    ratio_checked: int
    violations: list[tuple[NodeId, NodeId, int, int, int]]
    max_ratio: float
    one_hop_radius: bool

    @property
    def ok(self) -> bool:
        return not self.violations


def is_one_hop_radius(topo: NetworkTopology, clusters) -> bool:
    return all(
        all(m == c.head or topo.has_edge(m, c.head) for m in c.members)
        for c in clusters
    )


def _meets_size_premise(topo: NetworkTopology, c: Cluster) -> bool:
    return len(c.members) >= 2 * _radius(topo, c.head, set(c.members)) + 2


def check_approximation_bound(topo: NetworkTopology, clusters: list[Cluster],
                              result: RoutingResult,
                              pairs: list[tuple[NodeId, NodeId]]) -> BoundReport:
    """Compare primary-path hop counts against the shortest-path oracle.

    Same-cluster pairs must route optimally (L = R).  Cross-cluster pairs are
    held to L <= R + |C(dst)| - 2 whenever the destination cluster is large
    enough for its radius (|C| >= 2r + 2, the detour-bound prerequisite), and
    to L <= 3R when the clustering has a one-hop radius.
    """
    cluster_of = result.cluster_of
    one_hop = is_one_hop_radius(topo, clusters)
    violations = []
    max_ratio = 0.0
    slack_checked = 0
    ratio_checked = 0
    for src, dst in pairs:
        if src == dst:
            continue
        outcome = route_packet(result, src, dst)
        if not outcome.delivered:
            violations.append((src, dst, -1, -1, -1))
            continue
        hops = len(outcome.path) - 1
        optimal = topo.shortest_hops(src).get(dst)
        if optimal is None:
            raise ModelError(f"no path {src}->{dst} in topology")
        ok = True
        bound = -1
        if cluster_of[src] is cluster_of[dst]:
            bound = optimal
            slack_checked += 1
            ok = hops <= bound
        elif _meets_size_premise(topo, cluster_of[dst]):
            bound = optimal + len(cluster_of[dst].members) - 2
            slack_checked += 1
            ok = hops <= bound
        if one_hop:
            ratio_checked += 1
            ok = ok and hops <= 3 * optimal
        if not ok:
            violations.append((src, dst, hops, optimal, bound))
        if optimal > 0:
            max_ratio = max(max_ratio, hops / optimal)
    return BoundReport(pairs=len(pairs), slack_checked=slack_checked,
                       ratio_checked=ratio_checked, violations=violations,
                       max_ratio=max_ratio, one_hop_radius=one_hop)


def export_tables(result: RoutingResult) -> str:
    """Human-readable dump of converged routing tables."""
    lines = []
    for v in sorted(result.tables):
        table = result.tables[v]
        lines.append(f"node {v}")
        for dest in sorted(table.rows):
            for nbr in sorted(table.rows[dest]):
                row = table.rows[dest][nbr]
                lines.append(f"  dest {dest} via {nbr} cost {row.cost:g} seq {row.sequence_number}")
    return "\n".join(lines) + "\n"
