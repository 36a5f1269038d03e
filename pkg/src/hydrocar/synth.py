"""Synthetic pipe networks and participant outcomes with known ground truth.

Random streams: ``simulate_dataset`` splits ``config.seed`` into one
independent Philox stream per stage (households, demographics, household
effects, spatial effects, graph effects, outcomes), so switching one effect
off never changes the draws of another.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import gmrf
from .model import Dataset, build_spatial_lattice
from .network import PipeSegment, WaterNetwork, downstream, downstream_distances
from .precision import build_border_precision, build_distance_precision


@dataclass(frozen=True)
class ContaminationEvent:
    origin: str
    effect_size: float
    decay: float = 0.0

    def __post_init__(self):
        if self.decay < 0:
            raise ValueError("decay must be non-negative")


@dataclass(frozen=True)
class SimulationConfig:
    n_participants: int
    beta0: float = 0.0
    beta_age: float = 0.0
    beta_gender: float = 0.0
    tau_house: float = 0.0
    tau_spatial: float = 0.0
    tau_graph: float = 0.0
    events: tuple[ContaminationEvent, ...] = ()
    seed: int = 1
    cell_size: float = 1000.0
    location_noise: float = 30.0

    def __post_init__(self):
        if self.n_participants < 1:
            raise ValueError("n_participants must be at least 1")
        object.__setattr__(self, "events", tuple(self.events))


def simulate_network(
    n_nodes: int,
    branching: str | int = "uniform",
    length_range: tuple[float, float] = (0.5, 1.5),
    seed=1,
    layout_step: float = 250.0,
) -> WaterNetwork:
    """Random out-tree grown from node ``N0`` (the source).

    ``branching="uniform"`` attaches each new node to a uniformly chosen
    existing node; an integer ``k`` restricts parents to nodes with fewer
    than ``k`` children. Lengths are uniform on ``length_range``; planar
    coordinates place each child ``layout_step`` meters from its parent.
    """
    if n_nodes < 1:
        raise ValueError("n_nodes must be at least 1")
    rng = gmrf.make_rng(seed)
    width = len(str(n_nodes - 1))
    names = [f"N{i:0{width}d}" for i in range(n_nodes)]
    coords = {names[0]: (0.0, 0.0)}
    children = [0] * n_nodes
    segments = []
    for i in range(1, n_nodes):
        if branching == "uniform":
            parent = int(rng.integers(i))
        else:
            open_slots = [j for j in range(i) if children[j] < int(branching)]
            parent = open_slots[int(rng.integers(len(open_slots)))]
        children[parent] += 1
        length = float(rng.uniform(*length_range))
        angle = float(rng.uniform(0.0, 2.0 * math.pi))
        px, py = coords[names[parent]]
        coords[names[i]] = (px + layout_step * math.cos(angle), py + layout_step * math.sin(angle))
        segments.append(PipeSegment(names[parent], names[i], length))
    return WaterNetwork(tuple(names), tuple(segments), coords)


def pick_origin(net: WaterNetwork, fraction: float = 1.0 / 3.0) -> str:
    """Node whose downstream set size is closest to ``fraction`` of the network."""
    target = fraction * len(net)
    sizes = [(abs(len(downstream(net, n)) - target), i, n) for i, n in enumerate(net.nodes)]
    return min(sizes)[2]


@dataclass(eq=False)
class SimulationTruth:
    config: SimulationConfig
    graph_effect: dict = field(default_factory=dict)  # CAR draw per node
    contamination: dict = field(default_factory=dict)  # event log-odds per node
    household_effect: dict = field(default_factory=dict)
    spatial_effect: dict = field(default_factory=dict)
    eta: np.ndarray = None

    def node_log_odds(self) -> dict:
        return {n: self.graph_effect[n] + self.contamination[n] for n in self.graph_effect}

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "config": {
                "n_participants": cfg.n_participants,
                "beta0": cfg.beta0,
                "beta_age": cfg.beta_age,
                "beta_gender": cfg.beta_gender,
                "tau_house": cfg.tau_house,
                "tau_spatial": cfg.tau_spatial,
                "tau_graph": cfg.tau_graph,
                "events": [
                    {"origin": e.origin, "effect_size": e.effect_size, "decay": e.decay}
                    for e in cfg.events
                ],
                "seed": cfg.seed,
            },
            "graph_effect": self.node_log_odds(),
            "car_graph_effect": dict(self.graph_effect),
            "contamination": dict(self.contamination),
            "household_effect": dict(self.household_effect),
            "spatial_effect": {f"{c},{r}": v for (c, r), v in self.spatial_effect.items()},
        }


def _intrinsic_draw(pm, tau, rng) -> np.ndarray:
    if tau <= 0 or pm.dim == 0:
        return np.zeros(pm.dim)
    if not np.any(pm.matrix.diagonal()):
        return np.zeros(pm.dim)  # every unit isolated: the constraint pins all to zero
    factor = gmrf.factorize(pm.scaled(tau))
    return gmrf.sample(factor, pm.constraint_matrix(), rng)


def simulate_dataset(net: WaterNetwork, config: SimulationConfig) -> tuple[Dataset, SimulationTruth]:
    """Participants in households on random nodes, with outcomes drawn from the true model.

    The true log-odds are ``beta0 + beta_age * (age - 50) / 10 +
    beta_gender * gender`` plus household, spatial-cell and graph-node
    effects and every contamination event's ``effect * exp(-decay * d)`` at
    nodes ``d`` meters downstream of its origin.
    """
    (rng_house, rng_demo, rng_hh_eff, rng_spatial, rng_graph, rng_out) = gmrf.spawn_rngs(config.seed, 6)
    n = config.n_participants

    node_of, house_of, loc = [], [], []
    h = 0
    while len(node_of) < n:
        size = 1 + int(rng_house.poisson(1.5))
        node = net.nodes[int(rng_house.integers(len(net)))]
        offset = rng_house.normal(0.0, config.location_noise, size=2)
        xy = net.coordinates.get(node)
        where = (np.nan, np.nan) if xy is None else (xy[0] + offset[0], xy[1] + offset[1])
        for _ in range(min(size, n - len(node_of))):
            node_of.append(node)
            house_of.append(f"H{h}")
            loc.append(where)
        h += 1

    age = rng_demo.uniform(20.0, 80.0, size=n)
    gender = (rng_demo.random(n) < 0.5).astype(int)
    ds = Dataset(
        ids=np.array([f"P{i}" for i in range(n)], dtype=object),
        outcome=np.zeros(n, dtype=int),
        age=age,
        gender=gender,
        house_id=np.array(house_of, dtype=object),
        node_id=np.array(node_of, dtype=object),
        location=np.array(loc, dtype=float),
        network=net,
    )

    eta = config.beta0 + config.beta_age * (age - 50.0) / 10.0 + config.beta_gender * gender

    houses = sorted(set(house_of), key=lambda s: int(s[1:]))
    if config.tau_house > 0:
        hh = rng_hh_eff.normal(0.0, 1.0 / math.sqrt(config.tau_house), size=len(houses))
    else:
        hh = np.zeros(len(houses))
    household_effect = dict(zip(houses, hh.tolist()))
    eta = eta + np.array([household_effect[hid] for hid in house_of])

    spatial_effect = {}
    if config.tau_spatial > 0 and ds.has_location().all():
        adjacency, cells = build_spatial_lattice(ds, config.cell_size)
        pm = build_border_precision(adjacency)
        draw = _intrinsic_draw(pm, config.tau_spatial, rng_spatial)
        spatial_effect = dict(zip(pm.labels, draw.tolist()))
        eta = eta + np.array([spatial_effect[c] for c in cells])

    pm = build_distance_precision(net)
    graph_draw = _intrinsic_draw(pm, config.tau_graph, rng_graph)
    graph_effect = dict(zip(net.nodes, graph_draw.tolist()))
    contamination = {node: 0.0 for node in net.nodes}
    for event in config.events:
        for node, d in downstream_distances(net, event.origin).items():
            contamination[node] += event.effect_size * math.exp(-event.decay * d)
    eta = eta + np.array([graph_effect[v] + contamination[v] for v in node_of])

    outcome = (rng_out.random(n) < expit(eta)).astype(int)
    ds = Dataset(
        ids=ds.ids, outcome=outcome, age=ds.age, gender=ds.gender, house_id=ds.house_id,
        node_id=ds.node_id, location=ds.location, network=net,
    )
    truth = SimulationTruth(config, graph_effect, contamination, household_effect, spatial_effect, eta)
    return ds, truth
