"""Probabilistic end-to-end delay bounds for window-scheduled networks.

Per-node delay is the least fixed point of

    delta = (gamma - 1) w + C + sum_hp { floor(n_j C_j / w) (gamma w - 1)
                                         + n_j C_j / w }

with n_j = max(0, ceil((delta - D_j) / T_j)) and C the number of transmissions
needed to hit the per-node success target.  Non-uniform window assignments
substitute the compacted epoch for gamma*w and the node's own slot count for
w.  End-to-end bounds sum the per-node delays along the primary path and hold
with the product of the per-node probabilities.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from wsan.model import Flow, ModelError, NodeId

UNBOUNDED = math.inf


def tx_count_for_probability(target: float, prr: float) -> int:
    """Transmissions needed so that success probability reaches the target."""
    if prr == 1.0:
        return 1
    if prr <= 0.0:
        raise ModelError("unreachable target: link never succeeds")
    if not 0.0 < target < 1.0:
        raise ModelError("target probability must be in (0, 1)")
    return math.ceil(math.log(1.0 - target) / math.log(1.0 - prr))


@dataclass(frozen=True)
class NodeWindow:
    """Window geometry seen by one transmitter."""

    pre_window: float   # worst wait from packet arrival to the first owned slot
    gap_multiplier: float  # slots lost when an hp packet spills the window
    width: float        # owned slots per epoch

    @staticmethod
    def uniform(gamma: int, w: int) -> "NodeWindow":
        return NodeWindow(pre_window=(gamma - 1) * w,
                          gap_multiplier=gamma * w - 1, width=w)

    @staticmethod
    def nonuniform(epoch: int, w_v: int) -> "NodeWindow":
        # epoch - w_v bounds the wait to the next owned slot however the w_v
        # slots are spread; the printed uniform form (gamma-1)w equals it.
        return NodeWindow(pre_window=epoch - w_v,
                          gap_multiplier=epoch - 1, width=w_v)

    @staticmethod
    def from_assignment(assignment, node: NodeId) -> "NodeWindow":
        if assignment.uniform:
            gamma = assignment.epoch_length // max(assignment.window_length, 1)
            return NodeWindow.uniform(gamma, assignment.window_length)
        w_v = len(assignment.windows_of.get(node, frozenset())) or 1
        return NodeWindow.nonuniform(assignment.epoch_length, w_v)


@dataclass(frozen=True)
class HpInterferer:
    tx_count: float
    deadline: int
    period: int


def node_delay(window: NodeWindow, tx_count: float,
               hp: list[HpInterferer], deadline_cap: float) -> float:
    """Least fixed point of the per-node delay recurrence, or UNBOUNDED when
    the iteration exceeds the flow deadline."""
    if window.width <= 0:
        raise ModelError("window width must be positive")
    delta = window.pre_window + tx_count
    while True:
        hp_term = 0.0
        for j in hp:
            n = math.ceil((delta - j.deadline) / j.period)
            n = max(0, n)
            work = n * j.tx_count / window.width
            hp_term += math.floor(work) * window.gap_multiplier + work
        new = window.pre_window + tx_count + hp_term
        if new > deadline_cap:
            return UNBOUNDED
        if new == delta:
            return new
        delta = new


@dataclass
class DelayBound:
    flow_id: int
    per_node: dict[NodeId, float]
    total: float
    probability: float

    @property
    def bounded(self) -> bool:
        return self.total != UNBOUNDED


def candidate_targets(prr: float) -> tuple[float, float]:
    """Per-node success targets a primary-path node can promise: one or two
    dedicated transmissions."""
    return (prr, 1.0 - (1.0 - prr) ** 2)


def hp_flows_at(node: NodeId, flow: Flow, flows: list[Flow],
                routes: dict[int, list[NodeId]], policy: str) -> list[Flow]:
    """Flows that can interrupt `flow` at `node`: for DM those with higher
    priority routed through the node as transmitters, for EDF all of them."""
    out = []
    for other in flows:
        if other.id == flow.id:
            continue
        path = routes.get(other.id)
        if not path or node not in path[:-1]:
            continue
        if policy == "dm" and (other.priority, other.id) >= (flow.priority, flow.id):
            continue
        out.append(other)
    return out


def _hp_interferers(node: NodeId, flow: Flow, flows, routes, policy,
                    prr_of, chosen_tx: dict[tuple[int, NodeId], float]) -> list[HpInterferer]:
    hp = []
    for other in hp_flows_at(node, flow, flows, routes, policy):
        key = (other.id, node)
        if policy == "dm" and key in chosen_tx:
            c = chosen_tx[key]
        else:
            # conservative estimate for dynamic-priority interferers:
            # the two-transmission candidate
            c = tx_count_for_probability(candidate_targets(prr_of(node, other.id))[1],
                                         prr_of(node, other.id))
        hp.append(HpInterferer(tx_count=c, deadline=other.deadline, period=other.period))
    return hp


def end_to_end_delay(flow: Flow, path: list[NodeId], targets: dict[NodeId, float],
                     flows: list[Flow], routes: dict[int, list[NodeId]],
                     assignment, policy: str, prr_of,
                     chosen_tx: dict[tuple[int, NodeId], float] | None = None) -> DelayBound:
    """Sum of per-node delay bounds over the primary-path transmitters; the
    bound holds with the product of the per-node targets."""
    chosen_tx = chosen_tx if chosen_tx is not None else {}
    per_node: dict[NodeId, float] = {}
    prob = 1.0
    total = 0.0
    for node in path[:-1]:
        target = targets[node]
        c = tx_count_for_probability(target, prr_of(node, flow.id))
        window = NodeWindow.from_assignment(assignment, node)
        hp = _hp_interferers(node, flow, flows, routes, policy, prr_of, chosen_tx)
        delta = node_delay(window, c, hp, deadline_cap=flow.deadline)
        per_node[node] = delta
        prob *= target
        if delta == UNBOUNDED:
            return DelayBound(flow.id, per_node, UNBOUNDED, prob)
        total += delta
    return DelayBound(flow.id, per_node, total, prob)


def best_delay_for_target(flow: Flow, path: list[NodeId], target: float,
                          flows: list[Flow], routes: dict[int, list[NodeId]],
                          assignment, policy: str, prr_of,
                          chosen_tx: dict[tuple[int, NodeId], float] | None = None) -> DelayBound | None:
    """Enumerate per-node target combinations (two candidates per hop), keep
    those whose product reaches the flow target, and return the max-delay
    qualifying bound.  None when no combination reaches the target."""
    hops = path[:-1]
    options = [candidate_targets(prr_of(node, flow.id)) for node in hops]
    best: DelayBound | None = None
    for combo in itertools.product(*options):
        if math.prod(combo) < target:
            continue
        bound = end_to_end_delay(flow, path, dict(zip(hops, combo)),
                                 flows, routes, assignment, policy, prr_of, chosen_tx)
        if best is None or _delay_key(bound) > _delay_key(best):
            best = bound
    return best


def _delay_key(bound: DelayBound) -> float:
    return bound.total if bound.bounded else math.inf


@dataclass
class FlowVerdict:
    flow_id: int
    bound: DelayBound | None
    schedulable: bool


def schedulability_verdict(flows: list[Flow], routes: dict[int, list[NodeId]],
                           assignment, target: float, policy: str = "dm",
                           prr_of=None) -> dict[int, FlowVerdict]:
    """Sufficient-only per-flow verdicts: R_i(P >= target) <= D_i.

    Flows are processed in priority order so that fixed-priority interferers
    reuse the transmission counts chosen for the interfering flows.
    """
    if prr_of is None:
        prr_of = lambda node, flow_id: 1.0
    chosen_tx: dict[tuple[int, NodeId], float] = {}
    verdicts: dict[int, FlowVerdict] = {}
    for flow in sorted(flows, key=lambda f: (f.priority, f.id)):
        path = routes[flow.id]
        bound = best_delay_for_target(flow, path, target, flows, routes,
                                      assignment, policy, prr_of, chosen_tx)
        if bound is None:
            verdicts[flow.id] = FlowVerdict(flow.id, None, False)
            continue
        for node in path[:-1]:
            chosen_tx[(flow.id, node)] = tx_count_for_probability(
                max(candidate_targets(prr_of(node, flow.id))), prr_of(node, flow.id))
        verdicts[flow.id] = FlowVerdict(flow.id, bound,
                                        bound.bounded and bound.total <= flow.deadline)
    return verdicts


def exact_single_flow_latency(path: list[NodeId], assignment,
                              release_phase: int | None = None) -> int:
    """Exact worst-case latency of a lone flow under perfect links.

    Walks the window pattern arithmetically: each hop transmits in the first
    slot its sender owns at or after the packet's arrival.  With no phase
    given, the maximum over all release phases within one epoch is returned.
    """
    epoch = assignment.epoch_length
    phases = range(epoch) if release_phase is None else [release_phase % epoch]
    worst = 0
    for phase in phases:
        t = phase
        for node in path[:-1]:
            nxt = assignment.next_owned_slot(node, t)
            if nxt is None:
                raise ModelError(f"node {node} owns no transmit slots")
            t = nxt + 1  # delivered at the end of the transmit slot
        worst = max(worst, t - phase)
    return worst
