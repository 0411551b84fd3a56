"""Scheduling-control co-design on a single-hop star network.

Plants are LTI systems under linear state feedback.  Medium access is an
autonomous non-cooperative game: every node scores +1 for a delivered packet,
0 for abstaining, -1 for a failed transmission, and an additional -2 when a
packet dies, and all nodes derive the same equilibrium schedule from shared
link predictions.  On top of the scheduler, sampling periods acclimate every
tau slots: plants whose windowed Lyapunov function keeps decreasing slow
down (up to tau), the rest snap back to their initial period and split the
leftover utilization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from wsan.model import ModelError, module_rng

PAYOFF_SUCCESS = 1.0
PAYOFF_ABSTAIN = 0.0
PAYOFF_FAILURE = -1.0
PAYOFF_MISS = -2.0


def _matrix(v) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(v, dtype=float))
    if arr.shape[0] != arr.shape[1]:
        raise ModelError("plant matrices must be square")
    return arr


@dataclass
class Plant:
    """Discrete LTI plant x+ = A x + B u + w with feedback u = K x."""

    a: np.ndarray
    b: np.ndarray
    k: np.ndarray
    p_lyap: np.ndarray
    q_lyap: np.ndarray
    x0: np.ndarray
    noise: float = 0.0
    weight: float = 1.0
    t_min: int = 1
    t_max: int = 1
    c: np.ndarray | None = None

    def __post_init__(self):
        self.a = _matrix(self.a)
        self.b = np.atleast_2d(np.asarray(self.b, dtype=float))
        self.k = np.atleast_2d(np.asarray(self.k, dtype=float))
        self.p_lyap = _matrix(self.p_lyap)
        self.q_lyap = _matrix(self.q_lyap)
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if self.t_min > self.t_max:
            raise ModelError("need t_min <= t_max")
        closed = self.closed_loop()
        decrease = closed.T @ self.p_lyap @ closed - self.p_lyap
        if max(np.linalg.eigvalsh((decrease + decrease.T) / 2)) >= 0:
            raise ModelError("closed loop is not Lyapunov-decreasing for the given gain")

    def closed_loop(self) -> np.ndarray:
        return self.a + self.b @ self.k

    def step(self, x: np.ndarray, u: np.ndarray, w: float) -> np.ndarray:
        return self.a @ x + (self.b @ u).reshape(x.shape) + w

    def lyapunov(self, x: np.ndarray) -> float:
        return float(x @ self.p_lyap @ x)


def estimate_state(plant: Plant, x_start: np.ndarray, steps: int) -> list[np.ndarray]:
    """Shared deterministic rollout at sampling instants: every node assumes
    linear feedback and the constant nominal disturbance, so all nodes compute
    bit-identical trajectories."""
    if steps < 0:
        raise ModelError("steps must be >= 0")
    closed = plant.closed_loop()
    xs = [np.array(x_start, dtype=float)]
    for _ in range(steps):
        xs.append(closed @ xs[-1] + plant.noise)
    return xs


def control_cost(plant: Plant, horizon: int = 20) -> float:
    """Weighted quadratic rollout cost used to order flows when raising
    periods (most expensive plants keep their fast sampling longest)."""
    cost = 0.0
    x = np.array(plant.x0, dtype=float)
    for _ in range(horizon):
        u = plant.k @ x
        cost += 0.5 * float(x @ plant.p_lyap @ x) + 0.5 * float(u @ plant.q_lyap @ u)
        x = plant.closed_loop() @ x + plant.noise
    return plant.weight * cost


# --------------------------------------------------------------------------
# Slot game
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GamePacket:
    flow_id: int
    deadline: int  # last slot in which a transmission can still succeed


@dataclass
class GameState:
    """Common knowledge at one slot: who holds a packet and the predicted
    link quality (True = good) per node for the upcoming horizon."""

    packets: dict[int, GamePacket]            # node -> packet
    link_good: dict[int, list[bool]]          # node -> eta predictions
    slot: int = 0

    @property
    def horizon(self) -> int:
        return min((len(v) for v in self.link_good.values()), default=0)


@dataclass(frozen=True)
class PayoffModel:
    """Success probabilities behind the payoff matrices.  A predicted-bad link
    must succeed often enough that a last-chance attempt beats a sure miss
    (p > 1/4) but rarely enough that speculative attempts stay unattractive
    (p < 1/2)."""

    p_good: float = 1.0
    p_bad: float = 0.3

    def __post_init__(self):
        if not 0.25 < self.p_bad < 0.5:
            raise ModelError("p_bad must lie in (1/4, 1/2)")

    def expected(self, transmit: bool, good: bool, collision: bool,
                 critical: bool) -> float:
        """Expected slot payoff; a critical packet that fails also misses."""
        if not transmit:
            return PAYOFF_MISS if critical else PAYOFF_ABSTAIN
        if collision:
            return PAYOFF_FAILURE + (PAYOFF_MISS if critical else 0.0)
        p = self.p_good if good else self.p_bad
        return p * PAYOFF_SUCCESS + (1 - p) * (PAYOFF_FAILURE + (PAYOFF_MISS if critical else 0.0))


def slot_payoff(transmitted: bool, success: bool, missed: bool) -> float:
    """Realized payoff of one slot outcome; a same-slot failure and miss add."""
    value = 0.0
    if transmitted:
        value += PAYOFF_SUCCESS if success else PAYOFF_FAILURE
    if missed:
        value += PAYOFF_MISS
    return value


def nash_slot_decision(state: GameState, model: PayoffModel = PayoffModel()) -> dict[int, str]:
    """Single-slot equilibrium actions.

    Good-link holders defer to the one with the shortest absolute deadline
    (ties by flow id).  Nobody transmits on a predicted-bad link except a
    last-chance packet, and then every good-link competitor with slack backs
    off; all-bad slots fall silent.
    """
    now = state.slot
    contenders = {n: p for n, p in state.packets.items() if p is not None}
    actions = {n: "abstain" for n in state.link_good}
    if not contenders:
        return actions
    good = {n: p for n, p in contenders.items() if state.link_good[n][0]}
    bad_critical = {n: p for n, p in contenders.items()
                    if not state.link_good[n][0] and p.deadline == now}
    chosen: int | None = None
    if good:
        chosen = min(good, key=lambda n: (good[n].deadline, good[n].flow_id))
        if bad_critical and good[chosen].deadline > now:
            chosen = min(bad_critical, key=lambda n: bad_critical[n].flow_id)
    elif bad_critical:
        chosen = min(bad_critical, key=lambda n: bad_critical[n].flow_id)
    if chosen is not None:
        actions[chosen] = "transmit"
    return actions


def _plan(state: GameState, model: PayoffModel) -> tuple[float, list[int | None]]:
    """Depth-first search over per-slot transmitter choices.

    Joint profiles with two or more transmitters, or with a speculative
    transmission on a predicted-bad link, are payoff-dominated, so each slot
    branches only over "one of the eligible nodes transmits" and "everyone
    abstains"; ties prefer the shortest deadline, then the lowest flow id,
    then abstention, which keeps the plan identical at every node.
    """
    eta = state.horizon

    def recurse(slot_index: int, packets: dict[int, GamePacket]) -> tuple[float, list[int | None]]:
        if slot_index >= eta:
            return 0.0, []
        now = state.slot + slot_index
        holders = {n: p for n, p in packets.items() if p is not None}
        candidates: list[int | None] = []
        for n, p in sorted(holders.items(),
                           key=lambda item: (item[1].deadline, item[1].flow_id)):
            if state.link_good[n][slot_index] or p.deadline == now:
                candidates.append(n)
        candidates.append(None)
        best: tuple[float, list[int | None]] | None = None
        for choice in candidates:
            payoff = 0.0
            nxt = dict(packets)
            for n, p in holders.items():
                transmit = n is choice
                good = state.link_good[n][slot_index]
                delivered = transmit and good
                expires = p.deadline == now and not delivered
                if transmit:
                    payoff += model.expected(True, good, False, p.deadline == now)
                elif expires:
                    payoff += PAYOFF_MISS
                if delivered or expires:
                    nxt[n] = None
            sub, seq = recurse(slot_index + 1, nxt)
            total = payoff + sub
            if best is None or total > best[0]:
                best = (total, [choice] + seq)
        return best

    return recurse(0, dict(state.packets))


def multi_slot_schedule(state: GameState, model: PayoffModel = PayoffModel()) -> tuple[float, list[int | None]]:
    """Equilibrium plan over the predicted horizon: expected total payoff and
    the transmitter chosen per slot (None = all abstain).  Every node running
    this on identical inputs obtains the identical plan."""
    if state.horizon < 1:
        raise ModelError("need predictions for at least one slot")
    return _plan(state, model)


def online_schedulability(periods: list[int], bad_fraction: list[float],
                          gamma_slots: int = 2) -> tuple[bool, float]:
    """Sum of gamma / (T_i (1 - p_i)) must not exceed one."""
    total = 0.0
    for t, p in zip(periods, bad_fraction, strict=True):
        if not 0.0 <= p < 1.0:
            raise ModelError("bad-link fraction must be in [0, 1)")
        total += gamma_slots / (t * (1.0 - p))
    return total <= 1.0 + 1e-12, total


def initial_period_assignment(plants: list[Plant], gamma_slots: int = 2,
                              bad_fraction: list[float] | None = None) -> list[int]:
    """Start every flow at its minimum period; while the set is unschedulable,
    push flows to their maximum period starting from the cheapest plant (by
    weighted control cost).  All raised and still unschedulable -> infeasible."""
    n = len(plants)
    p = bad_fraction or [0.0] * n
    order = sorted(range(n), key=lambda i: (-control_cost(plants[i]), i))
    periods = [plants[i].t_min for i in range(n)]
    ok, _ = online_schedulability(periods, p, gamma_slots)
    cursor = n - 1
    while not ok and cursor >= 0:
        idx = order[cursor]
        periods[idx] = plants[idx].t_max
        cursor -= 1
        ok, _ = online_schedulability(periods, p, gamma_slots)
    if not ok:
        raise ModelError("plants are not stabilizable: no feasible period assignment")
    return periods


# --------------------------------------------------------------------------
# Sampling period acclimation
# --------------------------------------------------------------------------


@dataclass
class BetaRule:
    """Per-plant Lyapunov contraction factor keyed on the state norm."""

    high: float = 0.5
    low: float = 1.0
    threshold: float = 1.0

    def value(self, x: np.ndarray) -> float:
        return self.high if float(np.linalg.norm(x)) > self.threshold else self.low


@dataclass
class IncreaseDecision:
    plant_index: int
    epoch_start: int
    period: int
    v_now: float
    v_forecast: float
    beta: float
    x_now: tuple[float, ...] = ()


@dataclass
class SpaResult:
    periods: list[int]
    increase: list[IncreaseDecision]
    decrease: list[int]
    utilization: float


def _window_value(plant: Plant, samples: list[np.ndarray]) -> float:
    return sum(plant.lyapunov(x) for x in samples)


def _forecast_window(plant: Plant, x_now: np.ndarray, period: int, tau: int) -> float:
    """V over [t, t+tau] sampled every `period`, from the shared estimator."""
    steps = tau // period
    xs = estimate_state(plant, x_now, steps)
    return _window_value(plant, xs)


def spa_epoch(plants: list[Plant], current_periods: list[int], epoch_start: int,
              tau: int, history: list[list[np.ndarray]],
              beta_rule: BetaRule = BetaRule(), gamma_slots: int = 2,
              bad_fraction: list[float] | None = None,
              initial_periods: list[int] | None = None,
              extra_utilization: float = 0.0) -> SpaResult:
    """One acclimation step at an epoch boundary.

    history[i] holds plant i's estimated samples inside [t - tau, t] (newest
    last, which is the sample at t).  Plants whose forecast keeps the windowed
    Lyapunov value within beta of the current window search for the largest
    period up to tau (multiplicative increase, additive decrease); the others
    reset to their initial period and split the leftover utilization.
    """
    n = len(plants)
    p = bad_fraction or [0.0] * n
    init = initial_periods or [pl.t_min for pl in plants]
    increase: list[IncreaseDecision] = []
    decrease: list[int] = []
    new_periods = list(current_periods)

    forecasts = {}
    for i, plant in enumerate(plants):
        x_now = history[i][-1]
        v_now = _window_value(plant, history[i])
        beta = beta_rule.value(x_now)
        v_fc = _forecast_window(plant, x_now, current_periods[i], tau)
        forecasts[i] = (x_now, v_now, beta)
        if v_fc <= beta * v_now:
            chosen = _search_period(plant, x_now, v_now, beta, tau,
                                    init[i], current_periods[i])
            v_chosen = _forecast_window(plant, x_now, chosen, tau)
            new_periods[i] = chosen
            increase.append(IncreaseDecision(i, epoch_start, chosen,
                                             v_now, v_chosen, beta,
                                             x_now=tuple(float(v) for v in np.atleast_1d(x_now))))
        else:
            decrease.append(i)
            new_periods[i] = init[i]

    if decrease:
        _, used = online_schedulability(new_periods, p, gamma_slots)
        slack = 1.0 - used - extra_utilization
        if slack > 0:
            share = slack / len(decrease)
            for i in decrease:
                mu = gamma_slots / (new_periods[i] * (1.0 - p[i])) + share
                t = math.ceil(gamma_slots / (mu * (1.0 - p[i])))
                new_periods[i] = max(plants[i].t_min, min(t, init[i]))
    ok, used = online_schedulability(new_periods, p, gamma_slots)
    if used + extra_utilization > 1.0 + 1e-12:
        raise ModelError("acclimation produced an unschedulable assignment")
    return SpaResult(periods=new_periods, increase=increase, decrease=decrease,
                     utilization=used + extra_utilization)


def _search_period(plant: Plant, x_now, v_now: float, beta: float, tau: int,
                   initial: int, current: int) -> int:
    def satisfies(t: int) -> bool:
        return _forecast_window(plant, x_now, t, tau) <= beta * v_now

    best = initial if satisfies(initial) else None
    t = initial
    while t < tau and satisfies(t):
        best = t
        t = min(t * 2, tau)
    if satisfies(t):
        return t
    while t > (best or plant.t_min):
        t -= 1
        if satisfies(t):
            return t
    return best if best is not None else current


def error_broadcast_slots(nu: int, tau: int) -> tuple[set[int], float]:
    """Reserve the last nu slots of each tau epoch for state-error reports;
    they enter the schedulability test as a pseudo-flow of utilization nu/tau."""
    if nu < 0 or tau <= 0 or nu >= tau:
        raise ModelError("need 0 <= nu < tau")
    return set(range(tau - nu, tau)), nu / tau


# --------------------------------------------------------------------------
# Co-simulation of plants + star network
# --------------------------------------------------------------------------


@dataclass
class CodesignConfig:
    plants: list[Plant]
    tau: int
    horizon: int
    gamma_slots: int = 2
    use_spa: bool = True
    beta_rule: BetaRule = field(default_factory=BetaRule)
    noise_kind: str = "constant"  # constant | gaussian
    nu: int = 0
    seed: int = 0


@dataclass
class CodesignResult:
    transmissions: int
    misses: int
    periods_per_epoch: list[list[int]]
    utilization_per_epoch: list[float]
    increase_decisions: list[IncreaseDecision]
    state_samples: dict[int, list[tuple[int, float]]]  # plant -> (slot, |x|)
    total_cost: float


def run_codesign(config: CodesignConfig, link_good=None) -> CodesignResult:
    """Slot-accurate co-simulation: packets scheduled by the slot game on one
    channel, plants stepped at their sampling instants, periods re-acclimated
    every tau slots.

    link_good(slot, flow) -> bool supplies the per-slot link prediction (and
    realization) for a flow's sensor/controller links; default always good.
    """
    plants = config.plants
    n = len(plants)
    rng = module_rng(config.seed, "codesign-noise")
    if link_good is None:
        link_good = lambda slot, flow: True
    periods = initial_period_assignment(plants, config.gamma_slots)
    initial = list(periods)
    extra_mu = error_broadcast_slots(config.nu, config.tau)[1] if config.nu else 0.0

    x_true = [np.array(p.x0, dtype=float) for p in plants]
    x_est = [np.array(p.x0, dtype=float) for p in plants]
    u = [np.zeros(plants[i].k.shape[0]) for i in range(n)]
    u_pending: list[np.ndarray | None] = [None] * n
    next_sample = [0] * n
    history: list[list[np.ndarray]] = [[] for _ in range(n)]

    queue: list[dict] = []
    transmissions = 0
    misses = 0
    total_cost = 0.0
    periods_per_epoch: list[list[int]] = [list(periods)]
    utilization_per_epoch: list[float] = [online_schedulability(periods, [0.0] * n,
                                                                config.gamma_slots)[1]]
    increase_log: list[IncreaseDecision] = []
    samples: dict[int, list[tuple[int, float]]] = {i: [] for i in range(n)}

    def draw_noise(plant: Plant) -> float:
        if config.noise_kind == "gaussian":
            return rng.gauss(0.0, plant.noise)
        return plant.noise

    def advance(i: int, slot: int) -> None:
        plant = plants[i]
        if slot > 0:
            if u_pending[i] is not None:
                u[i] = u_pending[i]
                u_pending[i] = None
            x_true[i] = plant.step(x_true[i], u[i], draw_noise(plant))
            x_est[i] = plant.step(x_est[i], np.atleast_1d(plant.k @ x_est[i]),
                                  plant.noise)
            if config.noise_kind == "constant":
                # exact estimator: assumed feedback and disturbance match reality
                x_est[i] = np.array(x_true[i])
        history[i].append(np.array(x_est[i]))
        samples[i].append((slot, float(np.linalg.norm(x_true[i]))))
        nonlocal total_cost
        total_cost += plant.weight * plant.lyapunov(x_true[i])

    for slot in range(config.horizon):
        boundary = config.use_spa and slot > 0 and slot % config.tau == 0
        due = [i for i in range(n) if next_sample[i] == slot]
        if boundary:
            due = list(range(n))  # acclimation re-phases every flow
        for i in due:
            advance(i, slot)
        if boundary:
            spa = spa_epoch(plants, periods, slot, config.tau, history,
                            config.beta_rule, config.gamma_slots,
                            initial_periods=initial, extra_utilization=extra_mu)
            periods = spa.periods
            increase_log.extend(spa.increase)
            periods_per_epoch.append(list(periods))
            utilization_per_epoch.append(spa.utilization)
            for i in range(n):
                history[i] = history[i][-1:]
        for i in due:
            queue.append({"flow": i, "stage": "up", "release": slot,
                          "deadline": slot + periods[i] - 1,
                          "payload": np.array(x_true[i])})
            next_sample[i] = slot + periods[i]

        for p in [p for p in queue if p["deadline"] < slot]:
            misses += 1
            queue.remove(p)
        chosen = _slot_choice(queue, slot, link_good)
        if chosen is not None:
            transmissions += 1
            i = chosen["flow"]
            if link_good(slot, i):
                queue.remove(chosen)
                if chosen["stage"] == "up":
                    command = np.atleast_1d(plants[i].k @ chosen["payload"])
                    queue.append({"flow": i, "stage": "down",
                                  "release": chosen["release"],
                                  "deadline": chosen["deadline"],
                                  "payload": command})
                else:
                    u_pending[i] = chosen["payload"]
    return CodesignResult(transmissions=transmissions, misses=misses,
                          periods_per_epoch=periods_per_epoch,
                          utilization_per_epoch=utilization_per_epoch,
                          increase_decisions=increase_log,
                          state_samples=samples, total_cost=total_cost)


def _slot_choice(queue: list[dict], slot: int, link_good) -> dict | None:
    """Designated transmitter for this slot, by the slot game.

    Each sensor fields its uplink packet and the controller fields its most
    urgent downlink; the single-slot equilibrium rule then picks at most one
    transmitter among them.
    """
    if not queue:
        return None
    players: dict[int, dict] = {}
    downs = [p for p in queue if p["stage"] == "down"]
    if downs:
        players[-1] = min(downs, key=lambda p: (p["deadline"], p["flow"]))
    for p in queue:
        if p["stage"] == "up":
            node = p["flow"]
            if node not in players or \
                    (p["deadline"], p["flow"]) < (players[node]["deadline"], players[node]["flow"]):
                players[node] = p
    state = GameState(
        packets={node: GamePacket(flow_id=p["flow"], deadline=p["deadline"])
                 for node, p in players.items()},
        link_good={node: [link_good(slot, p["flow"])] for node, p in players.items()},
        slot=slot)
    actions = nash_slot_decision(state)
    for node, act in actions.items():
        if act == "transmit":
            return players[node]
    return None
