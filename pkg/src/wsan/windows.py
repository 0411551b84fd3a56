"""Conflict graphs and distributed transmit-window / receiver-channel allocation.

Receivers get channels and transmitters get time windows by randomized
distributed vertex coloring (simulated as synchronous lottery rounds, which
yields the same output class as the message protocol and is deterministic
under a seed).  Two transmitters that would still collide after channel
separation must end up with disjoint windows; the epoch is the interval after
which the window pattern repeats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from wsan.model import Flow, ModelError, NetworkTopology, NodeId, module_rng


@dataclass
class ConflictGraphs:
    receiver_conflicts: dict[NodeId, set[NodeId]]
    transmitter_conflicts: dict[NodeId, set[NodeId]]

    def receiver_degree(self) -> int:
        return max((len(v) for v in self.receiver_conflicts.values()), default=0)

    def transmitter_degree(self) -> int:
        return max((len(v) for v in self.transmitter_conflicts.values()), default=0)


@dataclass
class WindowAssignment:
    channel_of: dict[NodeId, int]
    windows_of: dict[NodeId, frozenset[int]]
    window_length: int
    epoch_length: int
    residual_receiver_conflicts: frozenset[frozenset[NodeId]] = frozenset()
    uniform: bool = True
    color_of: dict[NodeId, int] = field(default_factory=dict)

    def owns_slot(self, node: NodeId, slot: int) -> bool:
        return (slot % self.epoch_length) in self.windows_of.get(node, frozenset())

    def next_owned_slot(self, node: NodeId, slot: int) -> int | None:
        """First slot >= slot owned by node."""
        owned = self.windows_of.get(node)
        if not owned:
            return None
        phase = slot % self.epoch_length
        best = min(((s - phase) % self.epoch_length) for s in owned)
        return slot + best


def _symmetrize(adj: dict[NodeId, set[NodeId]]) -> None:
    for u in list(adj):
        for v in adj[u]:
            adj.setdefault(v, set()).add(u)


def senders_and_recipients(routes: dict[int, list[NodeId]]):
    """Per-node recipient/sender sets over all primary paths."""
    recipients: dict[NodeId, set[NodeId]] = {}
    senders: dict[NodeId, set[NodeId]] = {}
    for path in routes.values():
        for a, b in zip(path, path[1:]):
            recipients.setdefault(a, set()).add(b)
            senders.setdefault(b, set()).add(a)
    return senders, recipients


def build_conflict_graphs(topo: NetworkTopology, routes: dict[int, list[NodeId]],
                          channel_of: dict[NodeId, int] | None = None) -> ConflictGraphs:
    """Derive receiver and transmitter conflict graphs from routes.

    Receiver conflict: some sender of one receiver is heard at the other.
    Transmitter conflict: half-duplex sharing (one transmits to the other) or
    a transmission that lands as noise on the other's recipient while both
    recipients share a channel.  When channel_of is None all receivers are
    treated as sharing one channel (the pre-allocation worst case).
    """
    senders, recipients = senders_and_recipients(routes)

    def same_channel(r1: NodeId, r2: NodeId) -> bool:
        if channel_of is None:
            return True
        c1, c2 = channel_of.get(r1), channel_of.get(r2)
        return c1 is None or c2 is None or c1 == c2

    receiver_conflicts: dict[NodeId, set[NodeId]] = {r: set() for r in senders}
    recv_nodes = sorted(senders)
    for i, a in enumerate(recv_nodes):
        for b in recv_nodes[i + 1:]:
            if any(topo.interferes(s, b) for s in senders[a] if s != b) or \
               any(topo.interferes(s, a) for s in senders[b] if s != a):
                receiver_conflicts[a].add(b)
                receiver_conflicts[b].add(a)

    transmitter_conflicts: dict[NodeId, set[NodeId]] = {t: set() for t in recipients}
    tx_nodes = sorted(recipients)
    for i, a in enumerate(tx_nodes):
        for b in tx_nodes[i + 1:]:
            conflict = a in recipients[b] or b in recipients[a]
            if not conflict:
                for ra in recipients[a]:
                    for rb in recipients[b]:
                        if not same_channel(ra, rb):
                            continue
                        if ra == rb or topo.interferes(a, rb) or topo.interferes(b, ra):
                            conflict = True
                            break
                    if conflict:
                        break
            if conflict:
                transmitter_conflicts[a].add(b)
                transmitter_conflicts[b].add(a)
    return ConflictGraphs(receiver_conflicts=receiver_conflicts,
                          transmitter_conflicts=transmitter_conflicts)


def _lottery_coloring(adj: dict[NodeId, set[NodeId]], seed: int, tag: str,
                      demand: dict[NodeId, int] | None = None,
                      bias_order: dict[NodeId, tuple] | None = None,
                      stats: dict | None = None) -> dict[NodeId, set[int]]:
    """Randomized-round greedy coloring (lottery -> grab -> neighbor veto).

    Each round, every unsatisfied node draws a lottery number; local winners
    grab their smallest non-conflicting color(s).  demand gives the number of
    colors a node must hold (default 1); bias_order, when given, replaces the
    lottery so that lexicographically smaller keys pick first.  stats, when
    given, accumulates the broadcast count (one lottery message per contender
    per round plus one grab message per winner).
    """
    rng = module_rng(seed, tag)
    demand = demand or {}
    colors: dict[NodeId, set[int]] = {v: set() for v in adj}
    unsatisfied = {v for v in adj if demand.get(v, 1) > 0}
    while unsatisfied:
        if stats is not None:
            stats["rounds"] = stats.get("rounds", 0) + 1
            stats["messages"] = stats.get("messages", 0) + len(unsatisfied)
        if bias_order is not None:
            ticket = {v: bias_order[v] for v in unsatisfied}
        else:
            ticket = {v: (rng.random(), v) for v in sorted(unsatisfied)}
        winners = [v for v in unsatisfied
                   if all(u not in unsatisfied or ticket[v] < ticket[u]
                          for u in adj[v] if u != v)]
        if not winners:  # guaranteed progress: global minimum always wins
            winners = [min(unsatisfied, key=lambda v: ticket[v])]
        if stats is not None:
            stats["messages"] += len(winners)
        for v in sorted(winners):
            taken = set().union(*(colors[u] for u in adj[v])) if adj[v] else set()
            c = 0
            while c in taken or c in colors[v]:
                c += 1
            colors[v].add(c)
            if len(colors[v]) >= demand.get(v, 1):
                unsatisfied.discard(v)
    return colors


def allocate_channels(cg: ConflictGraphs, num_channels: int, seed: int = 0,
                      stats: dict | None = None):
    """Color the receiver conflict graph with at most num_channels channels.

    Returns (channel_of, residual_pairs): when a node's neighborhood already
    uses every channel, it takes the least-used one and the clashing pairs are
    reported as residual conflicts to be resolved by time windows.
    """
    if num_channels < 1:
        raise ModelError("num_channels must be >= 1")
    adj = cg.receiver_conflicts
    colors = _lottery_coloring(adj, seed, "channels", stats=stats)
    channel_of: dict[NodeId, int] = {}
    residual: set[frozenset[NodeId]] = set()
    for v in sorted(adj):
        c = min(colors[v])
        if c < num_channels:
            channel_of[v] = c
        else:
            used = [channel_of.get(u) for u in adj[v] if channel_of.get(u) is not None]
            counts = {k: used.count(k) for k in range(num_channels)}
            channel_of[v] = min(counts, key=lambda k: (counts[k], k))
            for u in adj[v]:
                if channel_of.get(u) == channel_of[v]:
                    residual.add(frozenset((u, v)))
    return channel_of, frozenset(residual)


def allocate_windows_uniform(cg: ConflictGraphs, w: int = 1, seed: int = 0,
                             channel_of: dict[NodeId, int] | None = None,
                             residual: frozenset = frozenset(),
                             stats: dict | None = None) -> WindowAssignment:
    """Uniform window allocation: one contiguous block of w slots per node."""
    if w < 1:
        raise ModelError("window length must be >= 1")
    colors = _lottery_coloring(cg.transmitter_conflicts, seed, "windows", stats=stats)
    color_of = {v: min(cs) for v, cs in colors.items()}
    gamma = max(color_of.values(), default=-1) + 1
    gamma = max(gamma, 1)
    windows = {
        v: frozenset(range(c * w, (c + 1) * w))
        for v, c in color_of.items()
    }
    return WindowAssignment(channel_of=dict(channel_of or {}), windows_of=windows,
                            window_length=w, epoch_length=gamma * w,
                            residual_receiver_conflicts=residual,
                            uniform=True, color_of=color_of)


def window_demand(flows: list[Flow], routes: dict[int, list[NodeId]],
                  alpha: int, beta: int, phi: float) -> dict[NodeId, int]:
    """Per-node window length from the traffic rate through the node.

    A node on some primary path gets alpha slots plus beta slots for every
    phi units of summed rate (1/T per flow routed through it).
    """
    if alpha < 1 or beta < 0 or phi <= 0:
        raise ModelError("need alpha >= 1, beta >= 0, phi > 0")
    sigma: dict[NodeId, float] = {}
    for f in flows:
        path = routes.get(f.id)
        if not path:
            continue
        for node in path[:-1]:
            sigma[node] = sigma.get(node, 0.0) + 1.0 / f.period
    return {v: alpha + math.ceil(s / phi) * beta for v, s in sigma.items()}


def default_phi(flows: list[Flow]) -> float:
    """Rate granularity between the min and max flow rates, biased high."""
    rates = [1.0 / f.period for f in flows]
    return (min(rates) + max(rates)) * 7.0 / 8.0


def allocate_windows_nonuniform(cg: ConflictGraphs, flows: list[Flow],
                                routes: dict[int, list[NodeId]],
                                alpha: int = 1, beta: int = 1,
                                phi: float | None = None, seed: int = 0,
                                channel_of: dict[NodeId, int] | None = None,
                                residual: frozenset = frozenset(),
                                stats: dict | None = None) -> WindowAssignment:
    """Multi-coloring allocation: node v holds w_v (not necessarily contiguous)
    slots; the epoch is compacted to the number of distinct colors in use."""
    if phi is None:
        phi = default_phi(flows)
    demand = window_demand(flows, routes, alpha, beta, phi)
    adj = {v: set(nb) for v, nb in cg.transmitter_conflicts.items()}
    for v in demand:
        adj.setdefault(v, set())
    colors = _lottery_coloring(adj, seed, "nonuniform", demand=demand, stats=stats)
    used = sorted(set().union(*colors.values())) if colors else []
    compact = {c: i for i, c in enumerate(used)}
    windows = {v: frozenset(compact[c] for c in cs) for v, cs in colors.items() if cs}
    epoch = max(len(used), 1)
    return WindowAssignment(channel_of=dict(channel_of or {}), windows_of=windows,
                            window_length=0, epoch_length=epoch,
                            residual_receiver_conflicts=residual, uniform=False)


def allocate_windows_il(cg: ConflictGraphs, flows: list[Flow],
                        routes: dict[int, list[NodeId]], w: int = 1, seed: int = 0,
                        channel_of: dict[NodeId, int] | None = None,
                        residual: frozenset = frozenset(),
                        stats: dict | None = None) -> WindowAssignment:
    """Latency-improved allocation: color selection order follows flow priority
    and hop position, so early hops of important flows get early windows."""
    rank: dict[NodeId, tuple] = {}
    for f in sorted(flows, key=lambda f: (f.priority, f.id)):
        path = routes.get(f.id, [])
        for hop, node in enumerate(path[:-1]):
            key = (f.priority, hop, f.id, node)
            if node not in rank or key < rank[node]:
                rank[node] = key
    adj = cg.transmitter_conflicts
    for v in adj:
        rank.setdefault(v, (math.inf, math.inf, math.inf, v))
    colors = _lottery_coloring(adj, seed, "il", bias_order=rank, stats=stats)
    color_of = {v: min(cs) for v, cs in colors.items()}
    gamma = max(max(color_of.values(), default=-1) + 1, 1)
    windows = {v: frozenset(range(c * w, (c + 1) * w)) for v, c in color_of.items()}
    return WindowAssignment(channel_of=dict(channel_of or {}), windows_of=windows,
                            window_length=w, epoch_length=gamma * w,
                            residual_receiver_conflicts=residual,
                            uniform=True, color_of=color_of)


def validate_assignment(cg: ConflictGraphs, wa: WindowAssignment) -> list[str]:
    """Edge-scan validator; empty list means the assignment is conflict-free."""
    problems = []
    for v, nbrs in cg.transmitter_conflicts.items():
        for u in nbrs:
            if u < v:
                continue
            overlap = wa.windows_of.get(v, frozenset()) & wa.windows_of.get(u, frozenset())
            if overlap:
                problems.append(f"transmitters {v},{u} share slots {sorted(overlap)}")
    for v, nbrs in cg.receiver_conflicts.items():
        for u in nbrs:
            if u < v:
                continue
            cv, cu = wa.channel_of.get(v), wa.channel_of.get(u)
            if cv is not None and cv == cu and frozenset((u, v)) not in wa.residual_receiver_conflicts:
                problems.append(f"receivers {v},{u} share channel {cv}")
    for v, slots in wa.windows_of.items():
        if any(s >= wa.epoch_length or s < 0 for s in slots):
            problems.append(f"node {v} has slots outside the epoch")
    return problems


@dataclass
class AllocationRun:
    conflict_graphs: ConflictGraphs
    assignment: WindowAssignment
    messages: int
    rounds: int


def allocate(topo: NetworkTopology, flows: list[Flow], routes: dict[int, list[NodeId]],
             num_channels: int, w: int = 1, seed: int = 0,
             mode: str = "uniform", alpha: int = 1, beta: int = 1,
             phi: float | None = None) -> AllocationRun:
    """Full pipeline: conflict graphs, channels, then windows in chosen mode.

    The message count covers the coloring broadcasts of both phases, the
    dissemination cost of building the schedule in place.
    """
    stats: dict = {}
    pre = build_conflict_graphs(topo, routes)
    channel_of, residual = allocate_channels(pre, num_channels, seed, stats=stats)
    cg = build_conflict_graphs(topo, routes, channel_of=channel_of)
    if mode == "uniform":
        wa = allocate_windows_uniform(cg, w, seed, channel_of, residual, stats=stats)
    elif mode == "nonuniform":
        wa = allocate_windows_nonuniform(cg, flows, routes, alpha, beta, phi, seed,
                                         channel_of, residual, stats=stats)
    elif mode == "il":
        wa = allocate_windows_il(cg, flows, routes, w, seed, channel_of, residual,
                                 stats=stats)
    else:
        raise ModelError(f"unknown allocation mode {mode!r}")
    return AllocationRun(conflict_graphs=cg, assignment=wa,
                         messages=stats.get("messages", 0),
                         rounds=stats.get("rounds", 0))
