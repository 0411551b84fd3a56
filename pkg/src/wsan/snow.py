"""Multi-LPWAN base-station tree: subcarrier allocation and latency bounds.

Base stations form a tree over in-band links; each BS needs subcarriers for
collecting from its own nodes (intra set) and for forwarding to its parent
(link set).  Latency recurrences bound per-packet delay under a
receiver-initiated TDMA MAC and under plain TDMA; the greedy allocator feeds
one subcarrier at a time to whichever link currently delays the worst packet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from wsan.model import ModelError

UNBOUNDED = math.inf

RI_TDMA = "ri-tdma"
TDMA = "tdma"


@dataclass(frozen=True)
class SnowTree:
    """Tree of base stations with per-BS node periods and spectrum data."""

    parents: dict[int, int]                  # bs -> parent bs; root 0 excluded
    periods: dict[int, tuple[int, ...]]      # bs -> periods of its nodes
    available: dict[int, frozenset[int]]     # Z_i
    interferers: dict[int, frozenset[int]]   # I_i
    link_interferers: dict[int, frozenset[int]]  # J_i
    papr: dict[int, int]                     # beta_i
    overlap_tolerance: dict[int, float]      # sigma_i

    def __post_init__(self):
        if 0 in self.parents:
            raise ModelError("root base station 0 must not have a parent")
        for i, p in self.parents.items():
            seen = {i}
            cur = p
            while cur != 0:
                if cur in seen:
                    raise ModelError("parent map contains a cycle")
                seen.add(cur)
                cur = self.parents[cur]
        for i, b in self.papr.items():
            if b < 2:
                raise ModelError(f"BS {i}: papr limit must be >= 2")
        for i, z in self.available.items():
            if not z:
                raise ModelError(f"BS {i}: empty subcarrier set")

    @property
    def stations(self) -> list[int]:
        return sorted(self.periods)

    def children(self, i: int) -> list[int]:
        return sorted(b for b, p in self.parents.items() if p == i)

    def descendants_inclusive(self, i: int) -> list[int]:
        out = [i]
        for c in self.children(i):
            out.extend(self.descendants_inclusive(c))
        return sorted(out)

    def path_to_root(self, i: int) -> list[int]:
        """Base stations from i up to (excluding) the root."""
        out = []
        cur = i
        while cur != 0:
            out.append(cur)
            cur = self.parents[cur]
        return out

    def node_count(self, i: int) -> int:
        return len(self.periods[i])


@dataclass
class Allocation:
    intra: dict[int, set[int]] = field(default_factory=dict)
    link: dict[int, set[int]] = field(default_factory=dict)

    def copy(self) -> "Allocation":
        return Allocation(intra={i: set(s) for i, s in self.intra.items()},
                          link={i: set(s) for i, s in self.link.items()})


def validate_allocation(tree: SnowTree, alloc: Allocation) -> list[str]:
    """Empty list iff availability, both no-interference families, and the
    PAPR/overlap constraints all hold."""
    problems = []
    for i in tree.stations:
        s_i = alloc.intra.get(i, set())
        if not s_i <= tree.available[i]:
            problems.append(f"availability: intra set of BS {i} outside its spectrum")
        overlap = sum(len(s_i & alloc.intra.get(j, set())) for j in tree.interferers.get(i, ()))
        if overlap > tree.overlap_tolerance.get(i, 0.0) * len(s_i):
            problems.append(f"papr: BS {i} interferer overlap {overlap} exceeds tolerance")
    for i in tree.parents:
        p = tree.parents[i]
        s_link = alloc.link.get(i, set())
        if not (s_link <= tree.available[i] and s_link <= tree.available[p]):
            problems.append(f"availability: link set of BS {i} outside shared spectrum")
        if not 1 <= len(s_link) < tree.papr[i]:
            problems.append(f"papr: link set of BS {i} has size {len(s_link)}, "
                            f"needs 1 <= size < {tree.papr[i]}")
        for j in set(tree.interferers.get(p, frozenset())) | {i, p}:
            if s_link & alloc.intra.get(j, set()):
                problems.append(f"no-interfere-1: link {i}->{p} overlaps intra set of BS {j}")
        for j in set(tree.link_interferers.get(i, frozenset())) | {p}:
            if j == i or j not in tree.parents:
                continue
            if s_link & alloc.link.get(j, set()):
                problems.append(f"no-interfere-2: link {i}->{p} overlaps link {j}->{tree.parents[j]}")
    return problems


# --------------------------------------------------------------------------
# Subcarrier sharing and availability
# --------------------------------------------------------------------------


def share_count(tree: SnowTree, alloc: Allocation, i: int, z: int) -> int:
    """How many stations take turns on subcarrier z from BS i's viewpoint."""
    return 1 + sum(1 for j in tree.interferers.get(i, ())
                   if z in alloc.intra.get(j, set()))


def sharing_epoch(tree: SnowTree, count: int) -> int:
    """Round-robin epoch: the smallest divisor of every period that is at
    least the share count; falls back to the share count itself."""
    if count <= 1:
        return 1
    all_periods = [t for ps in tree.periods.values() for t in ps]
    g = math.gcd(*all_periods) if all_periods else count
    candidates = [d for d in range(count, g + 1) if g % d == 0]
    return candidates[0] if candidates else count


def availability(tree: SnowTree, alloc: Allocation, i: int) -> float:
    """psi_i: summed per-slot availability of BS i's intra subcarriers."""
    return sum(1.0 / sharing_epoch(tree, share_count(tree, alloc, i, z))
               for z in alloc.intra.get(i, set()))


def max_share(tree: SnowTree, alloc: Allocation, i: int) -> int:
    s_i = alloc.intra.get(i, set())
    if not s_i:
        return 1
    return max(share_count(tree, alloc, i, z) for z in s_i)


# --------------------------------------------------------------------------
# RI-TDMA latency recurrences
# --------------------------------------------------------------------------


def _hp_periods(periods, own_period: int, skip_index: int | None = None):
    return [t for k, t in enumerate(periods)
            if t <= own_period and k != skip_index]


def ri_tdma_intra_latency(tree: SnowTree, alloc: Allocation, bs: int,
                          node_index: int, simplified: bool = False) -> float:
    """Fixed point of the intra-SNOW latency recurrence for one node.

    Sharing a subcarrier among s stations adds s - 1 slots of phase wait (none
    when unshared).  simplified replaces the recurrence argument by the node's
    period, trading tightness for a closed form.
    """
    psi = availability(tree, alloc, bs)
    if psi <= 0:
        return UNBOUNDED
    t_u = tree.periods[bs][node_index]
    hp = _hp_periods(tree.periods[bs], t_u, skip_index=node_index)
    base = 1 + (max_share(tree, alloc, bs) - 1)
    if not hp:
        return float(base)
    if simplified:
        return base + math.ceil(sum(math.ceil(t_u / t) for t in hp) / psi)
    lam = float(base)
    while True:
        new = base + math.ceil(sum(math.ceil(lam / t) for t in hp) / psi)
        if new > t_u:
            return UNBOUNDED
        if new == lam:
            return new
        lam = new


def link_capacity(tree: SnowTree, alloc: Allocation, j: int) -> float:
    """phi: concurrent transmissions BS j can make toward its parent, capped
    by what it can take in per slot."""
    s_link = len(alloc.link.get(j, set()))
    intake = availability(tree, alloc, j) + sum(
        len(alloc.link.get(k, set())) for k in tree.children(j))
    return min(2 * s_link, intake)


def ri_tdma_link_latency(tree: SnowTree, alloc: Allocation, j: int,
                         origin_period: int, carried_latency: float,
                         simplified: bool = False,
                         exclude_origin: tuple[int, int] | None = None) -> float:
    """Fixed point of the tree-link latency recurrence at BS j.

    carried_latency is the packet's latency on its previous leg (intra
    collection for the first link, the previous link otherwise); the carried
    delay scales by how much slower the uplink drains than the station fills.
    """
    s_link = len(alloc.link.get(j, set()))
    if s_link == 0:
        return UNBOUNDED
    psi_j = availability(tree, alloc, j)
    phi = link_capacity(tree, alloc, j)
    if phi <= 0:
        return UNBOUNDED
    carried = carried_latency * math.ceil(psi_j / (2 * s_link))

    def hp_rate() -> float:
        rate = 0.0
        for k in tree.children(j):
            cap = len(alloc.link.get(k, set()))
            if cap == 0:
                continue
            for g in tree.descendants_inclusive(k):
                for idx, t in enumerate(tree.periods[g]):
                    if t > origin_period or (exclude_origin == (g, idx)):
                        continue
                    rate += 1.0 / (t * cap)
        if psi_j > 0:
            for idx, t in enumerate(tree.periods[j]):
                if t > origin_period or (exclude_origin == (j, idx)):
                    continue
                rate += 1.0 / (t * psi_j)
        return rate

    rate = hp_rate()
    if simplified:
        return carried + math.ceil(math.ceil(origin_period * rate) / phi)
    lam = carried
    while True:
        new = carried + math.ceil(math.ceil(lam * rate) / phi)
        if new > origin_period + carried:
            return UNBOUNDED
        if new == lam:
            return new
        lam = new


@dataclass
class PacketLatency:
    bs: int
    node_index: int
    total: float
    terms: list[tuple[str, int, float]]  # (kind, bs, value); kind intra|link


@dataclass
class LatencyProfile:
    per_packet: list[PacketLatency]
    per_station: dict[int, float]

    @property
    def objective(self) -> float:
        return max(self.per_station.values(), default=0.0)

    def worst_packet(self) -> PacketLatency:
        return max(self.per_packet, key=lambda p: (p.total, p.bs, p.node_index))


def ri_tdma_profile(tree: SnowTree, alloc: Allocation,
                    simplified: bool = False) -> LatencyProfile:
    packets = []
    for i in tree.stations:
        for idx, t_u in enumerate(tree.periods[i]):
            terms: list[tuple[str, int, float]] = []
            lam = ri_tdma_intra_latency(tree, alloc, i, idx, simplified)
            terms.append(("intra", i, lam))
            prev = lam
            for j in tree.path_to_root(i):
                if prev == UNBOUNDED:
                    break
                prev = ri_tdma_link_latency(tree, alloc, j, t_u, prev, simplified,
                                            exclude_origin=(i, idx))
                terms.append(("link", j, prev))
            total = _sum_terms(terms)
            packets.append(PacketLatency(bs=i, node_index=idx, total=total, terms=terms))
    per_station = {}
    for p in packets:
        per_station[p.bs] = max(per_station.get(p.bs, 0.0), p.total)
    return LatencyProfile(per_packet=packets, per_station=per_station)


def _sum_terms(terms) -> float:
    vals = [v for (_, _, v) in terms]
    return UNBOUNDED if any(v == UNBOUNDED for v in vals) else sum(vals)


def tdma_latency(tree: SnowTree, alloc: Allocation) -> dict[int, float]:
    """Plain-TDMA latency per SNOW: equal periods, no subcarrier sharing."""
    out: dict[int, float] = {}
    for i in tree.stations:
        s_i = len(alloc.intra.get(i, set()))
        if s_i == 0:
            out[i] = UNBOUNDED
            continue
        total = math.ceil(tree.node_count(i) / s_i)
        for j in tree.path_to_root(i):
            cap = len(alloc.link.get(j, set()))
            if cap == 0:
                total = UNBOUNDED
                break
            load = sum(tree.node_count(k) for k in tree.descendants_inclusive(j))
            total += math.ceil(load / cap)
        out[i] = total
    return out


def tdma_profile(tree: SnowTree, alloc: Allocation) -> LatencyProfile:
    packets = []
    for i in tree.stations:
        s_i = len(alloc.intra.get(i, set()))
        terms: list[tuple[str, int, float]] = [
            ("intra", i, UNBOUNDED if s_i == 0 else math.ceil(tree.node_count(i) / s_i))]
        for j in tree.path_to_root(i):
            cap = len(alloc.link.get(j, set()))
            load = sum(tree.node_count(k) for k in tree.descendants_inclusive(j))
            terms.append(("link", j, UNBOUNDED if cap == 0 else math.ceil(load / cap)))
        packets.append(PacketLatency(bs=i, node_index=0, total=_sum_terms(terms),
                                     terms=terms))
    per_station = {p.bs: p.total for p in packets}
    return LatencyProfile(per_packet=packets, per_station=per_station)


def profile(tree: SnowTree, alloc: Allocation, mac: str,
            simplified: bool = False) -> LatencyProfile:
    if mac == TDMA:
        return tdma_profile(tree, alloc)
    if mac == RI_TDMA:
        return ri_tdma_profile(tree, alloc, simplified)
    raise ModelError(f"unknown MAC {mac!r}")


# --------------------------------------------------------------------------
# Greedy allocator
# --------------------------------------------------------------------------


class InfeasibleAllocation(ModelError):
    pass


def _would_be_valid(tree, alloc) -> bool:
    return not validate_allocation(tree, alloc)


def _unique_subcarrier(tree: SnowTree, alloc: Allocation, kind: str, i: int) -> int | None:
    """First subcarrier that keeps every constraint satisfied when assigned."""
    if kind == "intra":
        pool = tree.available[i]
    else:
        pool = tree.available[i] & tree.available[tree.parents[i]]
    for z in sorted(pool):
        trial = alloc.copy()
        target = trial.intra.setdefault(i, set()) if kind == "intra" \
            else trial.link.setdefault(i, set())
        target.add(z)
        if _constraints_hold_partially(tree, trial):
            (alloc.intra if kind == "intra" else alloc.link).setdefault(i, set()).add(z)
            return z
    return None


def _constraints_hold_partially(tree, alloc) -> bool:
    """Validation that tolerates not-yet-assigned stations (size floors are
    checked only for sets that already exist)."""
    for problem in validate_allocation(tree, alloc):
        if problem.startswith("papr: link set") and "size 0" in problem:
            continue
        if problem.startswith("availability") and "link set" in problem:
            link_owner = int(problem.split("BS ")[1].split(" ")[0])
            if not alloc.link.get(link_owner):
                continue
        return False
    return True


def lt_sasi(tree: SnowTree, mac: str = RI_TDMA) -> Allocation:
    """Greedy latency-aware allocation: seed every set with one conflict-free
    subcarrier, then repeatedly add one feasible subcarrier to the link
    contributing the largest delay term of the currently worst packet.

    A link that cannot strictly improve its term without worsening the
    overall objective is excluded from further consideration; the loop ends
    when every link is excluded or saturated.
    """
    alloc = Allocation(intra={}, link={})
    for i in tree.stations:
        if _unique_subcarrier(tree, alloc, "intra", i) is None:
            raise InfeasibleAllocation(
                f"no conflict-free intra subcarrier for BS {i} (availability/no-interfere)")
    for i in sorted(tree.parents):
        if _unique_subcarrier(tree, alloc, "link", i) is None:
            raise InfeasibleAllocation(
                f"no conflict-free link subcarrier for BS {i} (availability/no-interfere)")
    bad = validate_allocation(tree, alloc)
    if bad:
        raise InfeasibleAllocation("; ".join(bad))

    excluded: set[tuple[str, int]] = set()
    while True:
        prof = profile(tree, alloc, mac, simplified=True)
        objective = prof.objective
        worst = prof.worst_packet()
        ordered = sorted(worst.terms,
                         key=lambda t: (-(t[2] if t[2] != UNBOUNDED else 1e18),
                                        len(tree.path_to_root(t[1]))))
        improved = False
        for kind, bs, term in ordered:
            if (kind, bs) in excluded or term <= 0:
                continue
            best = None
            pool = tree.available[bs] if kind == "intra" else \
                tree.available[bs] & tree.available[tree.parents[bs]]
            current = alloc.intra.get(bs, set()) if kind == "intra" else alloc.link.get(bs, set())
            for z in sorted(pool - current):
                trial = alloc.copy()
                (trial.intra if kind == "intra" else trial.link)[bs].add(z)
                if not _would_be_valid(tree, trial):
                    continue
                new_prof = profile(tree, trial, mac, simplified=True)
                new_term = _term_value(new_prof, kind, bs, worst)
                if new_prof.objective <= objective and new_term < term:
                    key = (new_prof.objective, new_term, z)
                    if best is None or key < best[0]:
                        best = (key, trial)
            if best is None:
                excluded.add((kind, bs))
                continue
            alloc = best[1]
            improved = True
            break
        if not improved:
            break
    assert not validate_allocation(tree, alloc)
    return alloc


def _term_value(prof: LatencyProfile, kind: str, bs: int, worst: PacketLatency) -> float:
    for p in prof.per_packet:
        if (p.bs, p.node_index) == (worst.bs, worst.node_index):
            for k, b, v in p.terms:
                if (k, b) == (kind, bs):
                    return v
    return 0.0


# --------------------------------------------------------------------------
# Slot-accurate simulation (upper-bound oracle for the recurrences)
# --------------------------------------------------------------------------


def simulate(tree: SnowTree, alloc: Allocation, mac: str = RI_TDMA,
             horizon: int | None = None) -> dict[tuple[int, int], int]:
    """Critical-instant slot simulation: every node releases at slot 0 and
    then periodically; returns the max observed root-arrival latency per
    (bs, node) over the horizon.  Transmissions happen at most once."""
    if horizon is None:
        horizon = 2 * max(t for ps in tree.periods.values() for t in ps)
    share_rank: dict[tuple[int, int], tuple[int, int]] = {}
    for i in tree.stations:
        for z in alloc.intra.get(i, set()):
            sharers = sorted([i] + [j for j in tree.interferers.get(i, ())
                                    if z in alloc.intra.get(j, set())])
            epoch = sharing_epoch(tree, len(sharers))
            share_rank[(i, z)] = (sharers.index(i), epoch)

    pending: dict[int, list] = {i: [] for i in tree.stations}   # intra queues
    relay: dict[int, list] = {i: [] for i in tree.stations}     # queued at BS
    worst: dict[tuple[int, int], int] = {}

    def rm_key(pkt):
        return (pkt["period"], pkt["origin"], pkt["release"])

    for slot in range(horizon):
        for i in tree.stations:
            for idx, t in enumerate(tree.periods[i]):
                if slot % t == 0:
                    pending[i].append({"origin": (i, idx), "period": t,
                                       "release": slot})
        arrivals: dict[int, list] = {i: [] for i in tree.stations}
        for i in tree.stations:
            capacity = sum(1 for z in alloc.intra.get(i, set())
                           if slot % share_rank[(i, z)][1] == share_rank[(i, z)][0])
            if mac == TDMA:
                capacity = len(alloc.intra.get(i, set()))
            queue = sorted(pending[i], key=rm_key)
            taken, rest = queue[:capacity], queue[capacity:]
            pending[i] = rest
            arrivals[i].extend(taken)
        link_arrivals: dict[int, list] = {i: [] for i in tree.stations}
        for i in tree.stations:
            if i == 0:
                continue
            cap = len(alloc.link.get(i, set()))
            if mac == RI_TDMA:
                cap *= 2
            queue = sorted(relay[i], key=rm_key)
            moved, rest = queue[:cap], queue[cap:]
            relay[i] = rest
            link_arrivals[tree.parents[i]].extend(moved)
        for i in tree.stations:
            for pkt in arrivals[i] + link_arrivals[i]:
                if i == 0:
                    latency = slot + 1 - pkt["release"]
                    key = pkt["origin"]
                    worst[key] = max(worst.get(key, 0), latency)
                else:
                    relay[i].append(pkt)
    return worst
