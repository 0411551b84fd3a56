"""Per-node online packet scheduling and the centralized baseline scheduler.

Inside its transmit window a node picks a queued packet by EDF or DM and sends
it as a dedicated transmission (slot start, high power).  After two failed
dedicated attempts it may retry in any slot where the receiver listens, as a
shared transmission: sense for theta, back off a little, send at moderate
power.  A receiver resolves simultaneous arrivals with the capture effect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from wsan.model import Flow, ModelError, NetworkTopology, NodeId

EDF = "edf"
DM = "dm"

HIGH_POWER_DB = 0.0
MODERATE_POWER_DB = -3.0

MAX_DEDICATED_ATTEMPTS = 2   # per hop, before falling back to shared slots
MAX_SHARED_WITH_QUEUE = 3    # total attempts allowed while other traffic waits
MAX_TOTAL_ATTEMPTS = 8       # hard cap per hop, bounds the simulation


@dataclass
class Packet:
    flow_id: int
    release: int
    deadline: int
    path: tuple[NodeId, ...]
    hop: int = 0
    retries: int = 0
    instance: int = 0

    @property
    def node(self) -> NodeId:
        return self.path[self.hop]

    @property
    def next_node(self) -> NodeId:
        return self.path[self.hop + 1]

    @property
    def at_destination(self) -> bool:
        return self.hop == len(self.path) - 1

    @property
    def relative_deadline(self) -> int:
        return self.deadline - self.release


@dataclass(frozen=True)
class CaptureModel:
    theta_ms: float = 3.0
    power_delta_db: float = 3.0
    slot_length_ms: float = 10.0

    def __post_init__(self):
        if not 0 < self.theta_ms < self.slot_length_ms:
            raise ModelError("need 0 < theta < slot length")


TRANSMIT_DEDICATED = "dedicated"
TRANSMIT_SHARED = "shared"
RECEIVE = "receive"
SLEEP = "sleep"


@dataclass
class SlotAction:
    kind: str
    packet: Packet | None = None
    receiver: NodeId | None = None
    channel: int | None = None
    power_db: float = HIGH_POWER_DB
    offset_ms: float = 0.0


def pick_packet(queue: list[Packet], policy: str, now: int) -> Packet | None:
    """Highest-priority queued packet: EDF by absolute deadline, DM by relative
    deadline; ties broken by flow id."""
    if not queue:
        return None
    if policy == EDF:
        return min(queue, key=lambda p: (p.deadline, p.flow_id))
    if policy == DM:
        return min(queue, key=lambda p: (p.relative_deadline, p.flow_id))
    raise ModelError(f"unknown policy {policy!r}")


@dataclass
class NodeContext:
    """What one node knows when deciding a slot: its queue, its window
    assignment, the windows of its neighbors, and who routes through it."""

    node: NodeId
    queue: list[Packet] = field(default_factory=list)
    predecessors: set[NodeId] = field(default_factory=set)


def receiver_listens(assignment, predecessors: set[NodeId], slot: int) -> bool:
    """A receiver keeps its radio on whenever one of its route predecessors
    owns the slot (it cannot anticipate shared retries elsewhere)."""
    return any(assignment.owns_slot(p, slot) for p in predecessors)


def decide_slot_action(ctx: NodeContext, assignment, now: int, policy: str,
                       capture: CaptureModel, backoff: int = 0,
                       listeners: dict[NodeId, set[NodeId]] | None = None) -> SlotAction:
    """Pick this node's action for the current slot.

    backoff is the pre-drawn random back-off (sub-slot units) applied after
    the theta sensing period of a shared transmission; listeners maps each
    node to its route predecessors (used to tell when a shared retry has a
    listening receiver).
    """
    packet = pick_packet(ctx.queue, policy, now)
    in_window = assignment.owns_slot(ctx.node, now)
    if packet is not None:
        receiver = packet.next_node
        channel = assignment.channel_of.get(receiver)
        if packet.retries < MAX_DEDICATED_ATTEMPTS:
            if in_window:
                return SlotAction(TRANSMIT_DEDICATED, packet, receiver, channel,
                                  HIGH_POWER_DB, 0.0)
        else:
            shared_allowed = packet.retries < MAX_SHARED_WITH_QUEUE or len(ctx.queue) == 1
            recv_preds = (listeners or {}).get(receiver, set()) | {ctx.node}
            if shared_allowed and packet.retries < MAX_TOTAL_ATTEMPTS and \
                    receiver_listens(assignment, recv_preds, now):
                offset = capture.theta_ms + 0.1 * backoff
                return SlotAction(TRANSMIT_SHARED, packet, receiver, channel,
                                  MODERATE_POWER_DB, offset)
    if receiver_listens(assignment, ctx.predecessors, now):
        return SlotAction(RECEIVE)
    return SlotAction(SLEEP)


@dataclass
class Transmission:
    action: SlotAction
    sender: NodeId

    @property
    def packet(self) -> Packet:
        return self.action.packet


def resolve_receptions(arrivals: list[Transmission], capture: CaptureModel,
                       link_ok) -> Packet | None:
    """Decide what one receiver decodes out of the transmissions reaching it.

    A single arrival is received iff its link sample succeeds.  With several,
    the earliest-starting one is captured iff it starts strictly before every
    other and is stronger than all of them by at least the capture power
    margin; anything else is a collision.  link_ok(sender) samples the link
    between the winning sender and this receiver.
    """
    if not arrivals:
        return None
    if len(arrivals) == 1:
        tx = arrivals[0]
        return tx.packet if link_ok(tx.sender) else None
    ordered = sorted(arrivals, key=lambda t: t.action.offset_ms)
    first, second = ordered[0], ordered[1]
    if first.action.offset_ms == second.action.offset_ms:
        return None
    rest_power = max(t.action.power_db for t in ordered[1:])
    if first.action.power_db - rest_power < capture.power_delta_db:
        return None
    if not link_ok(first.sender):
        return None
    return first.packet


# --------------------------------------------------------------------------
# Centralized WirelessHART baseline
# --------------------------------------------------------------------------

DEDICATED_SLOTS_PER_LINK = 2
SHARED_SLOTS_PER_LINK = 2  # retry block on the back-up path
HOP_BLOCK = DEDICATED_SLOTS_PER_LINK + SHARED_SLOTS_PER_LINK


@dataclass(frozen=True)
class ScheduleEntry:
    slot: int
    sender: NodeId
    receiver: NodeId
    channel: int
    flow_id: int
    kind: str  # dedicated | shared


@dataclass
class CentralizedSchedule:
    entries: list[ScheduleEntry]
    hyper_period: int
    schedulable: bool
    completion: dict[tuple[int, int], int]  # (flow, instance) -> finish slot

    def entries_at(self, node: NodeId) -> list[ScheduleEntry]:
        return [e for e in self.entries if node in (e.sender, e.receiver)]

    def table_bytes_per_node(self, nodes) -> dict[NodeId, int]:
        # 4 packed bytes per stored entry (slot, peer, channel, kind/flow)
        return {v: 4 * len(self.entries_at(v)) for v in nodes}


def centralized_schedule(topo: NetworkTopology, flows: list[Flow],
                         routes: dict[int, list[NodeId]], policy: str,
                         num_channels: int,
                         backup_routes: dict[int, list[NodeId]] | None = None) -> CentralizedSchedule:
    """Serial priority-ordered schedule: per link two dedicated slots followed
    by a shared retry block on the back-up next hop, packed into the earliest
    conflict-free slots of the hyper-period."""
    if num_channels < 1:
        raise ModelError("num_channels must be >= 1")
    H = math.lcm(*(f.period for f in flows))
    instances = []
    for f in flows:
        path = routes[f.id]
        if len(path) < 2:
            raise ModelError(f"flow {f.id} route too short")
        for k in range(H // f.period):
            release = f.release_offset + k * f.period
            instances.append((f, k, release, path))
    if policy == DM:
        instances.sort(key=lambda it: (it[0].priority, it[2], it[0].id))
    elif policy == EDF:
        instances.sort(key=lambda it: (it[2] + it[0].deadline, it[0].id, it[2]))
    else:
        raise ModelError(f"unknown policy {policy!r}")

    busy_node: dict[int, set[NodeId]] = {}
    busy_channel: dict[int, dict[int, list[tuple[NodeId, NodeId]]]] = {}
    entries: list[ScheduleEntry] = []
    completion: dict[tuple[int, int], int] = {}
    schedulable = True

    def channel_free(slot: int, ch: int, sender: NodeId, receiver: NodeId) -> bool:
        for s, r in busy_channel.get(slot, {}).get(ch, []):
            if topo.interferes(sender, r) or topo.interferes(s, receiver) or \
                    receiver == r or sender == s:
                return False
        return True

    def reserve(slot: int, sender: NodeId, receiver: NodeId, flow_id: int, kind: str) -> bool:
        nodes = busy_node.setdefault(slot, set())
        if sender in nodes or receiver in nodes:
            return False
        for ch in range(num_channels):
            if channel_free(slot, ch, sender, receiver):
                nodes.update((sender, receiver))
                busy_channel.setdefault(slot, {}).setdefault(ch, []).append((sender, receiver))
                entries.append(ScheduleEntry(slot, sender, receiver, ch, flow_id, kind))
                return True
        return False

    for f, k, release, path in instances:
        t = release
        backup = (backup_routes or {}).get(f.id)
        ok = True
        for hop, (u, v) in enumerate(zip(path, path[1:])):
            placed = 0
            while placed < DEDICATED_SLOTS_PER_LINK:
                if t >= release + f.deadline:
                    ok = False
                    break
                if reserve(t, u, v, f.id, "dedicated"):
                    placed += 1
                t += 1
            if not ok:
                break
            bu, bv = u, v
            if backup and u in backup:
                i = backup.index(u)
                if i + 1 < len(backup):
                    bu, bv = u, backup[i + 1]
            placed = 0
            while placed < SHARED_SLOTS_PER_LINK:
                if t >= release + f.deadline:
                    ok = False
                    break
                if reserve(t, bu, bv, f.id, "shared"):
                    placed += 1
                t += 1
            if not ok:
                break
        if ok:
            completion[(f.id, k)] = t
        else:
            schedulable = False
    return CentralizedSchedule(entries=entries, hyper_period=H,
                               schedulable=schedulable, completion=completion)
