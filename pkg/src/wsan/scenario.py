"""Line-oriented scenario files.

Grammar (one statement per line, `#` starts a comment):

    [section]            -- one of: topology flows link protocol sim plants
                            codesign snow analysis sweep
    key = value          -- scalar setting
    key = v1 v2 ...      -- repeated keys accumulate rows (edge, flow, ...)

Sections and their keys:

    [topology]  nodes=N gateway=ID access_points=ID...
                edge=U V (repeat)  interference=U V (repeat)
                interference_factor=K (disk model when no explicit pairs)
    [flows]     flow=ID SRC DST PERIOD DEADLINE PRIORITY [OFFSET] (repeat)
    [link]      model=constant PRR | markov PGB PBG PRRG PRRB  seed=N
    [protocol]  name=distributed-hart|centralized policy=edf|dm channels=N
                window=N mode=uniform|nonuniform|il
    [sim]       horizon=N seed=N
    [plants]    plant=ID A B K P Q X0 NOISE TMIN TMAX WEIGHT (repeat, scalar)
    [codesign]  tau=N horizon=N gamma=N beta_high=X beta_low=X threshold=X nu=N
    [snow]      bs=ID PARENT NODES PERIOD BETA SIGMA (repeat; PARENT=-1 for root)
                subcarriers=ID Z1 Z2... (repeat)
                interferers=ID J1 J2... (repeat)
                link_interferers=ID J1 J2... (repeat)
                mac=ri-tdma|tdma
    [analysis]  target=P policy=edf|dm omega=N routing=tree|source
    [sweep]     flows=N1 N2... seeds=S1 S2... protocols=p1 p2...

Unknown sections or keys are rejected with the offending line number.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from wsan import codesign as cd
from wsan import snow as snow_mod
from wsan.model import (
    ConstantLink,
    Flow,
    ModelError,
    NetworkTopology,
    TwoStateMarkovLink,
    with_disk_interference,
)


class ScenarioError(ModelError):
    pass


_SCHEMA: dict[str, dict[str, bool]] = {
    # key -> repeatable?
    "topology": {"nodes": False, "gateway": False, "access_points": False,
                 "edge": True, "interference": True, "interference_factor": False},
    "flows": {"flow": True},
    "link": {"model": False, "seed": False},
    "protocol": {"name": False, "policy": False, "channels": False,
                 "window": False, "mode": False},
    "sim": {"horizon": False, "seed": False},
    "plants": {"plant": True},
    "codesign": {"tau": False, "horizon": False, "gamma": False, "beta_high": False,
                 "beta_low": False, "threshold": False, "nu": False, "seed": False},
    "snow": {"bs": True, "subcarriers": True, "interferers": True,
             "link_interferers": True, "mac": False},
    "analysis": {"target": False, "policy": False, "omega": False, "routing": False},
    "sweep": {"flows": False, "seeds": False, "protocols": False},
}


@dataclass
class Scenario:
    sections: dict[str, list[tuple[str, str]]] = field(default_factory=dict)

    def get(self, section: str, key: str, default: str | None = None) -> str | None:
        for k, v in self.sections.get(section, []):
            if k == key:
                return v
        return default

    def rows(self, section: str, key: str) -> list[str]:
        return [v for k, v in self.sections.get(section, []) if k == key]

    def has(self, section: str) -> bool:
        return section in self.sections


def parse_scenario_text(text: str, name: str = "<string>") -> Scenario:
    scenario = Scenario()
    section: str | None = None
    seen_scalar: set[tuple[str, str]] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{name}:{lineno}"
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                raise ScenarioError(f"{where}: unknown section [{section}]")
            scenario.sections.setdefault(section, [])
            continue
        if section is None:
            raise ScenarioError(f"{where}: statement before any [section]")
        if "=" not in line:
            raise ScenarioError(f"{where}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        allowed = _SCHEMA[section]
        if key not in allowed:
            raise ScenarioError(f"{where}: unknown key {key!r} in [{section}]")
        if not allowed[key]:
            if (section, key) in seen_scalar:
                raise ScenarioError(f"{where}: duplicate key {key!r} in [{section}]")
            seen_scalar.add((section, key))
        scenario.sections[section].append((key, value))
    if not scenario.sections:
        raise ScenarioError(f"{name}: missing topology section (empty scenario)")
    return scenario


def parse_scenario(path: str) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario_text(fh.read(), name=path)


def serialize_scenario(scenario: Scenario) -> str:
    lines = []
    for section, pairs in scenario.sections.items():
        lines.append(f"[{section}]")
        for key, value in pairs:
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# Builders: Scenario -> domain objects
# --------------------------------------------------------------------------


def build_topology(scenario: Scenario) -> NetworkTopology:
    if not scenario.has("topology"):
        raise ScenarioError("missing topology section")
    n = int(scenario.get("topology", "nodes", "0"))
    gateway = int(scenario.get("topology", "gateway", "0"))
    aps = [int(x) for x in (scenario.get("topology", "access_points") or "").split()]
    edges = [tuple(int(x) for x in row.split()) for row in scenario.rows("topology", "edge")]
    pairs = [tuple(int(x) for x in row.split())
             for row in scenario.rows("topology", "interference")]
    topo = NetworkTopology.build(range(n), edges, gateway=gateway, access_points=aps,
                                 interference_pairs=pairs)
    factor = scenario.get("topology", "interference_factor")
    if factor is not None and not pairs:
        topo = with_disk_interference(topo, int(factor))
    return topo


def build_flows(scenario: Scenario) -> list[Flow]:
    flows = []
    for row in scenario.rows("flows", "flow"):
        parts = row.split()
        if len(parts) not in (6, 7):
            raise ScenarioError(f"flow row needs 6 or 7 fields: {row!r}")
        vals = [int(p) for p in parts]
        flows.append(Flow(id=vals[0], source=vals[1], destination=vals[2],
                          period=vals[3], deadline=vals[4], priority=vals[5],
                          release_offset=vals[6] if len(vals) == 7 else 0))
    return flows


def build_link_model(scenario: Scenario):
    spec = scenario.get("link", "model", "constant 1.0")
    parts = spec.split()
    if parts[0] == "constant":
        return ConstantLink(float(parts[1]))
    if parts[0] == "markov":
        return TwoStateMarkovLink(*(float(p) for p in parts[1:5]))
    raise ScenarioError(f"unknown link model {parts[0]!r}")


def build_plants(scenario: Scenario) -> list[cd.Plant]:
    plants = []
    for row in scenario.rows("plants", "plant"):
        parts = row.split()
        if len(parts) != 11:
            raise ScenarioError(f"plant row needs 11 fields: {row!r}")
        (_, a, b, k, p, q, x0, noise, tmin, tmax, weight) = parts
        plants.append(cd.Plant(a=float(a), b=float(b), k=float(k),
                               p_lyap=float(p), q_lyap=float(q),
                               x0=[float(x0)], noise=float(noise),
                               t_min=int(tmin), t_max=int(tmax),
                               weight=float(weight)))
    return plants


def build_snow_tree(scenario: Scenario) -> tuple[snow_mod.SnowTree, str]:
    parents: dict[int, int] = {}
    periods: dict[int, tuple[int, ...]] = {}
    papr: dict[int, int] = {}
    sigma: dict[int, float] = {}
    for row in scenario.rows("snow", "bs"):
        bs, parent, nodes, period, beta, s = row.split()
        i = int(bs)
        if int(parent) >= 0:
            parents[i] = int(parent)
        periods[i] = tuple([int(period)] * int(nodes))
        papr[i] = int(beta)
        sigma[i] = float(s)
    available = {}
    for row in scenario.rows("snow", "subcarriers"):
        parts = [int(x) for x in row.split()]
        available[parts[0]] = frozenset(parts[1:])
    interferers = {i: frozenset() for i in periods}
    for row in scenario.rows("snow", "interferers"):
        parts = [int(x) for x in row.split()]
        interferers[parts[0]] = frozenset(parts[1:])
    link_interferers = {i: frozenset() for i in periods}
    for row in scenario.rows("snow", "link_interferers"):
        parts = [int(x) for x in row.split()]
        link_interferers[parts[0]] = frozenset(parts[1:])
    tree = snow_mod.SnowTree(parents=parents, periods=periods, available=available,
                             interferers=interferers, link_interferers=link_interferers,
                             papr=papr, overlap_tolerance=sigma)
    return tree, scenario.get("snow", "mac", snow_mod.RI_TDMA)
