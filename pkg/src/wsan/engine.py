"""Slotted discrete-event engine driving the protocol modules.

One run owns a global slot clock: every slot the engine collects node
actions, arbitrates the medium per receiver (channels, half-duplex, capture),
delivers or fails packets, and accumulates energy, latency, miss, memory, and
dissemination metrics.  Runs are deterministic functions of their config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from wsan import local_sched, windows
from wsan.model import (
    ConstantLink,
    EnergyModel,
    Flow,
    LinkQualityModel,
    LinkSampler,
    MetricRecord,
    ModelError,
    NetworkTopology,
    NodeId,
    derive_seed,
    hyper_period,
)
from wsan.local_sched import (
    RECEIVE,
    SLEEP,
    TRANSMIT_DEDICATED,
    TRANSMIT_SHARED,
    CaptureModel,
    Packet,
    Transmission,
    resolve_receptions,
)

DISTRIBUTED_HART = "distributed-hart"
CENTRALIZED = "centralized"


class EngineInvariantError(RuntimeError):
    """An impossible medium state was reached; carries the slot for the trace."""


@dataclass(frozen=True)
class SimConfig:
    topology: NetworkTopology
    flows: tuple[Flow, ...]
    protocol: str = DISTRIBUTED_HART
    policy: str = local_sched.EDF
    num_channels: int = 4
    window_length: int = 1
    window_mode: str = "uniform"
    horizon: int | None = None
    seed: int = 0
    link_model: LinkQualityModel = ConstantLink(1.0)
    capture: CaptureModel = CaptureModel()
    energy: EnergyModel = EnergyModel()
    trace: bool = False


@dataclass
class SimResult:
    metrics: MetricRecord
    created: int
    delivered: int
    dropped: int
    in_flight: int
    latencies: dict[int, list[int]]
    epoch_length: int
    dissemination_messages: int
    schedule_bytes: dict[NodeId, int]
    trace_rows: list[tuple] = field(default_factory=list)
    schedulable_verdict: bool = True

    def key(self) -> tuple:
        """Comparable digest for determinism checks."""
        return (self.created, self.delivered, self.dropped, self.in_flight,
                tuple(sorted((f, tuple(v)) for f, v in self.latencies.items())),
                self.metrics.deadline_misses,
                round(self.metrics.total_energy_mj, 9))


def primary_routes(topo: NetworkTopology, flows) -> dict[int, list[NodeId]]:
    routes = {}
    for f in flows:
        path = topo.shortest_path(f.source, f.destination)
        if path is None:
            raise ModelError(f"no route for flow {f.id}")
        routes[f.id] = path
    return routes


def run(config: SimConfig) -> SimResult:
    if config.protocol == DISTRIBUTED_HART:
        return _run_distributed_hart(config)
    if config.protocol == CENTRALIZED:
        return _run_centralized(config)
    raise ModelError(f"unknown protocol {config.protocol!r}")


# --------------------------------------------------------------------------
# DistributedHART execution
# --------------------------------------------------------------------------


def _link_samplers(config: SimConfig) -> dict[tuple[NodeId, NodeId], LinkSampler]:
    samplers = {}
    for u, v in config.topology.edges:
        samplers[(u, v)] = LinkSampler(config.link_model,
                                       seed=derive_seed(config.seed, f"link:{u}:{v}"))
    return samplers


def _run_distributed_hart(config: SimConfig) -> SimResult:
    topo = config.topology
    flows = list(config.flows)
    routes = primary_routes(topo, flows)
    alloc = windows.allocate(topo, flows, routes, config.num_channels,
                             w=config.window_length, seed=config.seed,
                             mode=config.window_mode)
    wa = alloc.assignment
    horizon = config.horizon or hyper_period(flows)
    samplers = _link_samplers(config)
    flow_by_id = {f.id: f for f in flows}

    listeners: dict[NodeId, set[NodeId]] = {}
    for path in routes.values():
        for a, b in zip(path, path[1:]):
            listeners.setdefault(b, set()).add(a)

    queues: dict[NodeId, list[Packet]] = {v: [] for v in topo.nodes}
    releases: list[tuple[int, Flow]] = []
    for f in flows:
        for k in range(math.ceil((horizon - f.release_offset) / f.period)):
            t = f.release_offset + k * f.period
            if t < horizon:
                releases.append((t, f))
    releases.sort(key=lambda r: (r[0], r[1].id))
    release_idx = 0

    created = delivered = dropped = 0
    misses = 0
    latencies: dict[int, list[int]] = {f.id: [] for f in flows}
    energy_tx: dict[NodeId, int] = {v: 0 for v in topo.nodes}
    trace_rows: list[tuple] = []
    active: set[NodeId] = set()

    def drop(packet: Packet, node: NodeId) -> None:
        nonlocal dropped, misses
        queues[node].remove(packet)
        dropped += 1
        misses += 1

    slot = 0
    while slot < horizon:
        if not active and release_idx < len(releases):
            slot = max(slot, releases[release_idx][0])
        while release_idx < len(releases) and releases[release_idx][0] == slot:
            _, f = releases[release_idx]
            release_idx += 1
            queues[f.source].append(Packet(flow_id=f.id, release=slot,
                                           deadline=slot + f.deadline,
                                           path=tuple(routes[f.id]),
                                           instance=slot // f.period))
            created += 1
            active.add(f.source)
        if not active:
            if release_idx >= len(releases):
                break
            slot = releases[release_idx][0]
            continue

        # expire overdue / retry-exhausted packets
        for node in sorted(active):
            for packet in list(queues[node]):
                if slot >= packet.deadline or packet.retries >= local_sched.MAX_TOTAL_ATTEMPTS:
                    drop(packet, node)

        actions: dict[NodeId, local_sched.SlotAction] = {}
        for node in sorted(topo.nodes):
            ctx = local_sched.NodeContext(node=node, queue=queues[node],
                                          predecessors=listeners.get(node, set()))
            backoff = derive_seed(config.seed, f"backoff:{slot}:{node}") % 3
            actions[node] = local_sched.decide_slot_action(
                ctx, wa, slot, config.policy, config.capture, backoff, listeners)

        txs = {n: a for n, a in actions.items()
               if a.kind in (TRANSMIT_DEDICATED, TRANSMIT_SHARED)}
        # carrier sense: a shared sender leaves the slot when a dedicated
        # transmission toward the same receiver has already begun
        dedicated_rx = {a.receiver for a in txs.values() if a.kind == TRANSMIT_DEDICATED}
        txs = {n: a for n, a in txs.items()
               if a.kind == TRANSMIT_DEDICATED or a.receiver not in dedicated_rx}

        transmissions = [Transmission(action=a, sender=n) for n, a in sorted(txs.items())]
        for tx in transmissions:
            energy_tx[tx.sender] += 1
            if tx.sender == tx.action.receiver:
                raise EngineInvariantError(f"slot {slot}: node {tx.sender} sends to itself")

        receiving = {n for n, a in actions.items() if a.kind == RECEIVE}
        winners: dict[NodeId, Packet] = {}
        for r in sorted(receiving):
            arrivals = []
            for tx in transmissions:
                if tx.action.receiver == r:
                    arrivals.append(tx)
                elif topo.interferes(tx.sender, r) and _same_channel(tx.action.channel,
                                                                     wa.channel_of.get(r)):
                    arrivals.append(tx)
            if not arrivals:
                continue
            got = resolve_receptions(
                arrivals, config.capture,
                link_ok=lambda s, r=r: samplers[(s, r)].success(slot)
                if (s, r) in samplers else False)
            if got is not None and got.path[got.hop + 1] == r:
                winners[r] = got

        delivered_names = set()
        for r, packet in winners.items():
            sender = packet.node
            queues[sender].remove(packet)
            delivered_names.add(id(packet))
            packet.hop += 1
            packet.retries = 0
            if packet.at_destination:
                delivered += 1
                latencies[packet.flow_id].append(slot + 1 - packet.release)
            else:
                queues[r].append(packet)
                active.add(r)
        for tx in transmissions:
            if id(tx.packet) not in delivered_names:
                tx.packet.retries += 1
        if config.trace:
            for n, a in sorted(actions.items()):
                if a.kind != SLEEP:
                    trace_rows.append((slot, n, a.kind, a.channel,
                                       a.packet.flow_id if a.packet else None,
                                       "ok" if n in winners or (a.packet and id(a.packet)
                                                                in delivered_names) else ""))
        active = {n for n in topo.nodes if queues[n]}
        slot += 1

    in_flight = sum(len(q) for q in queues.values())
    if created != delivered + dropped + in_flight:
        raise EngineInvariantError("packet conservation violated")

    e = config.energy.energy_per_tx_mj
    alloc_share = alloc.messages / max(len(topo.nodes), 1)
    metrics = MetricRecord(
        energy_mj_per_node={v: (energy_tx[v] + alloc_share) * e for v in topo.nodes},
        memory_bytes_per_node=_distributed_bytes(topo, wa, listeners),
        convergence_slots=alloc.rounds,
        max_latency={f: max(v) for f, v in latencies.items() if v},
        avg_latency={f: sum(v) / len(v) for f, v in latencies.items() if v},
        deadline_misses=misses,
    )
    return SimResult(metrics=metrics, created=created, delivered=delivered,
                     dropped=dropped, in_flight=in_flight, latencies=latencies,
                     epoch_length=wa.epoch_length,
                     dissemination_messages=alloc.messages,
                     schedule_bytes=metrics.memory_bytes_per_node,
                     trace_rows=trace_rows,
                     schedulable_verdict=misses == 0)


def _same_channel(c1, c2) -> bool:
    return c1 is None or c2 is None or c1 == c2


def _distributed_bytes(topo, wa, listeners) -> dict[NodeId, int]:
    """Stored-schedule size: own slots, the slots of neighbors one forwards
    to or receives from, one channel byte; 2 bytes per slot index."""
    out = {}
    for v in topo.nodes:
        own = len(wa.windows_of.get(v, ()))
        neighbor = sum(len(wa.windows_of.get(u, ()))
                       for u in listeners.get(v, set()))
        out[v] = 2 * (own + neighbor) + 1
    return out


# --------------------------------------------------------------------------
# Centralized baseline execution
# --------------------------------------------------------------------------


def _run_centralized(config: SimConfig) -> SimResult:
    topo = config.topology
    flows = list(config.flows)
    routes = primary_routes(topo, flows)
    schedule = local_sched.centralized_schedule(topo, flows, routes, config.policy,
                                                config.num_channels)
    latencies: dict[int, list[int]] = {f.id: [] for f in flows}
    misses = 0
    for (fid, k), finish in schedule.completion.items():
        f = next(f for f in flows if f.id == fid)
        latencies[fid].append(finish - (f.release_offset + k * f.period))
    total_instances = sum(schedule.hyper_period // f.period for f in flows)
    misses = total_instances - len(schedule.completion)

    # dissemination: every schedule entry floods once over a BFS tree
    n = len(topo.nodes)
    messages = len(schedule.entries) * (n - 1)
    e = config.energy.energy_per_tx_mj
    metrics = MetricRecord(
        energy_mj_per_node={v: messages * e / n for v in topo.nodes},
        memory_bytes_per_node=schedule.table_bytes_per_node(topo.nodes),
        convergence_slots=len(schedule.entries),
        max_latency={f: max(v) for f, v in latencies.items() if v},
        avg_latency={f: sum(v) / len(v) for f, v in latencies.items() if v},
        deadline_misses=misses,
    )
    return SimResult(metrics=metrics, created=total_instances,
                     delivered=len(schedule.completion), dropped=misses,
                     in_flight=0, latencies=latencies,
                     epoch_length=schedule.hyper_period,
                     dissemination_messages=messages,
                     schedule_bytes=metrics.memory_bytes_per_node,
                     schedulable_verdict=schedule.schedulable)


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------


def sweep(configs: list[SimConfig], extract=None) -> list[dict]:
    """Run every config; rows carry the standard metrics plus anything the
    extract callback pulls from the result."""
    rows = []
    for cfg in configs:
        result = run(cfg)
        row = {
            "protocol": cfg.protocol,
            "flows": len(cfg.flows),
            "seed": cfg.seed,
            "schedulable": result.schedulable_verdict,
            "misses": result.metrics.deadline_misses,
            "energy_mj": result.metrics.total_energy_mj,
            "avg_bytes": sum(result.schedule_bytes.values()) / max(len(result.schedule_bytes), 1),
            "dissemination": result.dissemination_messages,
        }
        if extract is not None:
            row.update(extract(result))
        rows.append(row)
    return rows


def schedulability_ratio(rows: list[dict]) -> float:
    if not rows:
        return 0.0
    return sum(1 for r in rows if r["schedulable"]) / len(rows)
