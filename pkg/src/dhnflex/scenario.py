"""Scenario configuration, synthetic network/demand generation and file IO.

File formats (all versioned through the config's ``format`` key):

* network: JSON document understood by :func:`dhnflex.network.build_graph`;
* building catalog CSV: ``id,C_J_per_K,dTL_K,dTU_K,TB_nom_C``;
* demand CSV: ``time_s,building_id,qdot_out_w``;
* ambient CSV: ``time_s,t_amb_c``;
* scenario config JSON with unit-suffixed keys (see :class:`ScenarioConfig`).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .buildings import Building, DemandProfile
from .network import (
    Edge,
    EdgeKind,
    FluidProperties,
    NetworkGraph,
    PipeAttributes,
    diameter_for_zeta,
    load_graph,
    save_graph,
)

CONFIG_FORMAT = 1

# pipe parameter ranges of the reference network
DIAMETER_RANGE = (0.15, 0.40)  # m
LENGTH_RANGE = (10.0, 100.0)  # m
BYPASS_LENGTH = 3.0  # m
HTC = 1.5  # W/(m2 K)
FRICTION = 0.01
AMBIENT_RANGE = (-19.5, -13.9)  # degC
CAPACITY_RANGE = (78e6, 12562e6)  # J/K
USER_PIPE_LENGTH = 10.0  # m, user edges are sized from their design point


@dataclass(frozen=True)
class CatalogEntry:
    id: str
    kind: str  # "house", "apartment" or a commercial use
    area_m2: float
    capacity_j_per_k: float

    @property
    def residential(self) -> bool:
        return self.kind in ("house", "apartment")


# the 18 buildings of the reference scenario, grouped by branch
REFERENCE_BUILDINGS: dict[str, list[CatalogEntry]] = {
    "A": [
        CatalogEntry("R-3561", "house", 160, 78e6),
        CatalogEntry("R-80372", "house", 760, 400e6),
        CatalogEntry("R-3801", "house", 160, 900e6),
        CatalogEntry("R-80387", "house", 250, 326e6),
    ],
    "B": [
        CatalogEntry("R-80368", "house", 110, 526e6),
        CatalogEntry("R-4017", "house", 760, 251e6),
        CatalogEntry("R-4090", "house", 160, 464e6),
        CatalogEntry("R-4177", "house", 250, 818e6),
    ],
    "C": [
        CatalogEntry("C-177428", "medical", 7000, 12562e6),
        CatalogEntry("C-1700", "retail", 3500, 9871e6),
        CatalogEntry("C-232839", "retail", 1600, 6059e6),
    ],
    "D": [
        CatalogEntry("C-343832", "retail", 3500, 8575e6),
        CatalogEntry("C-18740", "warehouse", 1600, 2393e6),
        CatalogEntry("C-123604", "office", 700, 1511e6),
        CatalogEntry("C-95364", "retail", 7000, 5088e6),
    ],
    "E": [
        CatalogEntry("R-20041", "apartment", 80, 513e6),
        CatalogEntry("R-28770", "apartment", 110, 265e6),
        CatalogEntry("R-22719", "apartment", 110, 657e6),
    ],
}
# branch -> trunk junction it hangs from
REFERENCE_ATTACH = {"A": "J1", "B": "J1", "C": "J2", "D": "J3", "E": "J3"}
# A bypass is a short small-bore line; at full trunk bore it would carry more
# than the users and push the plant head past the candidate range.
BYPASS_DIAMETER = 0.07  # m
REFERENCE_TRUNK = [("P", "J1", 60.0, 0.40), ("J1", "J2", 80.0, 0.40), ("J2", "J3", 80.0, 0.35)]


# --------------------------------------------------------------------------
# config
# --------------------------------------------------------------------------
@dataclass
class ScenarioConfig:
    network_path: str = "network.json"
    catalog_path: str = "buildings.csv"
    demand_path: str = "demand.csv"
    ambient_path: str = "ambient.csv"
    t0_c: float = 80.0
    t_setr_c: float = 40.0
    n_groups: int = 5
    candidate_min_pa: float = 0.5
    candidate_max_pa: float = 300.0
    candidate_count: int = 24
    horizon_s: float = 3600.0
    interval_s: float = 600.0
    duration_s: float = 86400.0
    seed: int = 0
    epsilon_pa: float | None = None  # None: 2 % of the median candidate
    epsilon_retries: int = 3
    zeta_ratio: float = 100.0  # valve range zeta_nom / r .. zeta_nom * r
    plant_mode: str = "min_head"  # or "sum_subsystems"
    parallelism: int = 1
    format: int = CONFIG_FORMAT
    base_dir: str = field(default=".", repr=False)

    def __post_init__(self):
        if self.format != CONFIG_FORMAT:
            raise ValueError(f"unsupported config format {self.format!r}")
        n = self.horizon_s / self.interval_s
        if self.interval_s <= 0 or abs(n - round(n)) > 1e-9 or n < 1:
            raise ValueError("horizon_s must be a positive multiple of interval_s")
        m = self.duration_s / self.interval_s
        if abs(m - round(m)) > 1e-9 or m < 1:
            raise ValueError("duration_s must be a positive multiple of interval_s")
        if not 0 < self.candidate_min_pa < self.candidate_max_pa or self.candidate_count < 1:
            raise ValueError("invalid candidate grid")
        if self.plant_mode not in ("min_head", "sum_subsystems"):
            raise ValueError(f"unknown plant mode {self.plant_mode!r}")
        if self.n_groups < 1:
            raise ValueError("n_groups must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration_s / self.interval_s))

    def candidates(self) -> np.ndarray:
        if self.candidate_count == 1:
            return np.array([self.candidate_min_pa])
        return np.geomspace(self.candidate_min_pa, self.candidate_max_pa, self.candidate_count)

    def epsilon(self) -> float:
        if self.epsilon_pa is not None:
            return float(self.epsilon_pa)
        return 0.02 * float(np.median(self.candidates()))

    def resolve(self, name: str) -> Path:
        p = Path(getattr(self, name))
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    with open(path) as fh:
        data = json.load(fh)
    known = set(ScenarioConfig.__dataclass_fields__) - {"base_dir"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ScenarioConfig(**data, base_dir=str(path.parent))


def save_config(cfg: ScenarioConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# time series
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class AmbientSeries:
    times: np.ndarray
    values: np.ndarray  # degC

    def at(self, t: float) -> float:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        if i < 0:
            raise ValueError(f"time {t} precedes the ambient series")
        return float(self.values[i])


@dataclass
class Scenario:
    """Everything a run needs, loaded and validated."""

    config: ScenarioConfig
    graph: NetworkGraph
    buildings: list[Building]  # in user-edge order of ``graph``
    ambient: AmbientSeries

    def boundary(self, t: float) -> np.ndarray:
        return np.array([self.config.t0_c, self.config.t_setr_c, self.ambient.at(t)])

    def with_envelope(self, dT_lower: float, dT_upper: float) -> "Scenario":
        bs = [replace(b, dT_lower=dT_lower, dT_upper=dT_upper) for b in self.buildings]
        return replace(self, buildings=bs)

    def with_config(self, **changes) -> "Scenario":
        return replace(self, config=replace(self.config, **changes))


def read_catalog(path) -> dict[str, dict]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["id"]] = {
                "heat_capacity": float(row["C_J_per_K"]),
                "dT_lower": float(row["dTL_K"]),
                "dT_upper": float(row["dTU_K"]),
                "nominal_temperature": float(row["TB_nom_C"]),
            }
    return out


def write_catalog(path, buildings: list[Building]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "C_J_per_K", "dTL_K", "dTU_K", "TB_nom_C"])
        for b in buildings:
            w.writerow([b.id, repr(b.heat_capacity), repr(b.dT_lower), repr(b.dT_upper), repr(b.nominal_temperature)])


def read_demand(path) -> dict[str, DemandProfile]:
    rows: dict[str, list[tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(row["building_id"], []).append((float(row["time_s"]), float(row["qdot_out_w"])))
    out = {}
    for bid, items in rows.items():
        items.sort()
        t, v = zip(*items)
        out[bid] = DemandProfile(np.array(t), np.array(v))
    return out


def write_demand(path, profiles: dict[str, DemandProfile]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "building_id", "qdot_out_w"])
        for bid, prof in profiles.items():
            for t, v in zip(prof.times, prof.values):
                w.writerow([repr(float(t)), bid, repr(float(v))])


def read_ambient(path) -> AmbientSeries:
    t, v = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            t.append(float(row["time_s"]))
            v.append(float(row["t_amb_c"]))
    order = np.argsort(t)
    return AmbientSeries(np.array(t)[order], np.array(v)[order])


def write_ambient(path, amb: AmbientSeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "t_amb_c"])
        for t, v in zip(amb.times, amb.values):
            w.writerow([repr(float(t)), repr(float(v))])


def load_scenario(cfg: ScenarioConfig) -> Scenario:
    g = load_graph(cfg.resolve("network_path"))
    catalog = read_catalog(cfg.resolve("catalog_path"))
    demand = read_demand(cfg.resolve("demand_path"))
    ambient = read_ambient(cfg.resolve("ambient_path"))
    buildings = []
    for bid in g.buildings:
        if bid not in catalog:
            raise ValueError(f"building {bid!r} missing from the catalog")
        if bid not in demand:
            raise ValueError(f"building {bid!r} has no demand profile")
        buildings.append(Building(bid, demand=demand[bid], **catalog[bid]))
    return Scenario(cfg, g, buildings, ambient)


def write_scenario(sc: Scenario, out_dir: str | Path, config_name: str = "scenario.json") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = replace(sc.config, base_dir=str(out))
    save_graph(sc.graph, cfg.resolve("network_path"))
    write_catalog(cfg.resolve("catalog_path"), sc.buildings)
    write_demand(cfg.resolve("demand_path"), {b.id: b.demand for b in sc.buildings})
    write_ambient(cfg.resolve("ambient_path"), sc.ambient)
    path = out / config_name
    save_config(cfg, path)
    return path


# --------------------------------------------------------------------------
# network construction from a route tree
# --------------------------------------------------------------------------
@dataclass
class Route:
    """Location tree: every non-plant location hangs from ``parent``."""

    parent: dict[str, str] = field(default_factory=dict)
    segment: dict[str, PipeAttributes] = field(default_factory=dict)
    users: dict[str, list[tuple[str, PipeAttributes]]] = field(default_factory=dict)
    bypass: dict[str, PipeAttributes] = field(default_factory=dict)

    def add(self, loc: str, parent: str, pipe: PipeAttributes):
        self.parent[loc] = parent
        self.segment[loc] = pipe


def build_route_network(route: Route, plant: str = "P", fluid: FluidProperties | None = None) -> NetworkGraph:
    locs = [plant] + list(route.parent)
    nodes, locations = [], {}
    for loc in locs:
        for side in ("f", "r"):
            n = f"{side}:{loc}"
            nodes.append(n)
            locations[n] = loc
    edges = []
    for loc, par in route.parent.items():
        edges.append(Edge(f"F:{loc}", f"f:{par}", f"f:{loc}", EdgeKind.FEED, route.segment[loc]))
    for loc, par in route.parent.items():
        edges.append(Edge(f"R:{loc}", f"r:{loc}", f"r:{par}", EdgeKind.RETURN, route.segment[loc]))
    for loc in locs:
        for bid, pipe in route.users.get(loc, []):
            edges.append(Edge(f"U:{bid}", f"f:{loc}", f"r:{loc}", EdgeKind.USER, pipe, bid))
    for loc in locs:
        if loc in route.bypass:
            edges.append(Edge(f"B:{loc}", f"f:{loc}", f"r:{loc}", EdgeKind.BYPASS, route.bypass[loc]))
    return NetworkGraph(nodes, edges, f"f:{plant}", f"r:{plant}", fluid, locations)


def user_pipe(peak_flow: float, design_dp: float, fluid: FluidProperties) -> PipeAttributes:
    """User edge whose nominal loss coefficient passes ``peak_flow`` at ``design_dp``."""
    zeta = design_dp / max(peak_flow, 1e-6) ** 2
    d = diameter_for_zeta(zeta, USER_PIPE_LENGTH, fluid, FRICTION)
    return PipeAttributes(USER_PIPE_LENGTH, d, FRICTION, HTC)


# --------------------------------------------------------------------------
# demand and ambient shapes
# --------------------------------------------------------------------------
def _bump(h, centre, width):
    d = (h - centre + 12.0) % 24.0 - 12.0
    return np.exp(-((d / width) ** 2))


def _plateau(h, start, stop, soft=1.0):
    return 1.0 / (1.0 + np.exp(-(h - start) / soft)) - 1.0 / (1.0 + np.exp(-(h - stop) / soft))


def ambient_profile(times: np.ndarray, lo: float = AMBIENT_RANGE[0], hi: float = AMBIENT_RANGE[1]) -> np.ndarray:
    """Daily cosine between ``lo`` (05:00) and ``hi`` (17:00)."""
    h = (np.asarray(times, dtype=float) / 3600.0) % 24.0
    return lo + (hi - lo) * 0.5 * (1.0 - np.cos(2.0 * np.pi * (h - 5.0) / 24.0))


def demand_shape(entry: CatalogEntry, times: np.ndarray, rng: np.random.Generator, ambient: np.ndarray) -> np.ndarray:
    h = (np.asarray(times) / 3600.0) % 24.0
    shift = rng.uniform(-0.75, 0.75)
    amp = rng.uniform(0.85, 1.15)
    if entry.residential:
        s = 0.55 + amp * (0.55 * _bump(h, 7.0 + shift, 1.6) + 0.45 * _bump(h, 19.0 + shift, 2.2))
    else:
        s = 0.3 + amp * 0.8 * _plateau(h, 7.0 + shift, 18.0 + shift, 0.8)
    weather = (21.0 - ambient) / (21.0 - np.mean(AMBIENT_RANGE))
    return s * weather


def _profiles(entries, times, ambient, intensity, rng):
    out = {}
    day = times < 86400.0
    for e in entries:
        s = demand_shape(e, times, rng, ambient)
        s = s / s[day].mean() if day.any() else s / s.mean()
        out[e.id] = DemandProfile(times.copy(), intensity * e.area_m2 * s)
    return out


def reference_scenario(
    seed: int = 0,
    config: ScenarioConfig | None = None,
    intensity_w_m2: float = 35.0,
    design_dp_pa: float = 60.0,
    fluid: FluidProperties | None = None,
    branch_diameter: tuple[float, float] = (0.30, 0.35),
    bypass_diameter: float = BYPASS_DIAMETER,
) -> Scenario:
    """The 18-user, five-branch reference network with its buildings and profiles."""
    cfg = config or ScenarioConfig(seed=seed)
    fluid = fluid or FluidProperties()
    rng = np.random.default_rng(seed)
    times = np.arange(0.0, cfg.duration_s + cfg.horizon_s + cfg.interval_s / 2, cfg.interval_s)
    amb = ambient_profile(times)
    entries = [e for br in REFERENCE_BUILDINGS.values() for e in br]
    profiles = _profiles(entries, times, amb, intensity_w_m2, rng)
    dT = cfg.t0_c - cfg.t_setr_c

    route = Route()
    for a, b, length, d in REFERENCE_TRUNK:
        route.add(b, a, PipeAttributes(length, d, FRICTION, HTC))
    for br, members in REFERENCE_BUILDINGS.items():
        prev = REFERENCE_ATTACH[br]
        for i, e in enumerate(members):
            loc = f"{br}{i + 1}"
            if i == 0:
                pipe = PipeAttributes(100.0, 0.30, FRICTION, HTC)
            else:
                pipe = PipeAttributes(float(rng.uniform(20.0, 40.0)), float(rng.uniform(*branch_diameter)), FRICTION, HTC)
            route.add(loc, prev, pipe)
            peak = profiles[e.id].values.max() / (fluid.specific_heat * dT)
            route.users[loc] = [(e.id, user_pipe(peak, design_dp_pa, fluid))]
            prev = loc
        route.bypass[prev] = PipeAttributes(BYPASS_LENGTH, bypass_diameter, FRICTION, HTC)
    g = build_route_network(route, fluid=fluid)
    buildings = [
        Building(bid, _capacity(bid), profiles[bid]) for bid in g.buildings
    ]
    return Scenario(cfg, g, buildings, AmbientSeries(times, amb))


def _capacity(bid: str) -> float:
    for br in REFERENCE_BUILDINGS.values():
        for e in br:
            if e.id == bid:
                return e.capacity_j_per_k
    raise KeyError(bid)


def random_route(rng: np.random.Generator, n_users: int, max_branch: int = 4) -> tuple[Route, list[str]]:
    """Random route tree with ``n_users`` user locations and leaf bypasses.

    Pipe parameters are drawn from the reference ranges; user pipes are left
    for the caller to size.  Returns the route and the user locations.
    """
    if n_users < 1:
        raise ValueError("need at least one user")
    route = Route()
    junctions = ["P"]
    user_locs: list[str] = []
    k = 0
    while len(user_locs) < n_users:
        k += 1
        parent = junctions[int(rng.integers(len(junctions)))]
        hub = f"J{k}"
        route.add(hub, parent, _random_pipe(rng))
        junctions.append(hub)
        prev = hub
        for j in range(int(rng.integers(1, max_branch + 1))):
            if len(user_locs) >= n_users:
                break
            loc = f"{hub}u{j + 1}"
            route.add(loc, prev, _random_pipe(rng))
            user_locs.append(loc)
            prev = loc
        route.bypass[prev] = PipeAttributes(BYPASS_LENGTH, float(rng.uniform(*DIAMETER_RANGE)), FRICTION, HTC)
    return route, user_locs


def _random_pipe(rng):
    return PipeAttributes(float(rng.uniform(*LENGTH_RANGE)), float(rng.uniform(*DIAMETER_RANGE)), FRICTION, HTC)


def random_scenario(
    seed: int,
    n_users: int,
    config: ScenarioConfig | None = None,
    intensity_w_m2: float = 35.0,
    design_dp_pa: float = 60.0,
) -> Scenario:
    """Random layout with parameters drawn from the reference ranges."""
    cfg = config or ScenarioConfig(seed=seed, n_groups=min(5, n_users))
    fluid = FluidProperties()
    rng = np.random.default_rng(seed)
    route, user_locs = random_route(rng, n_users)
    times = np.arange(0.0, cfg.duration_s + cfg.horizon_s + cfg.interval_s / 2, cfg.interval_s)
    amb = ambient_profile(times)
    lo, hi = np.log(CAPACITY_RANGE[0]), np.log(CAPACITY_RANGE[1])
    entries = []
    for i, loc in enumerate(user_locs):
        residential = rng.random() < 0.6
        area = float(rng.uniform(80, 800) if residential else rng.uniform(700, 7000))
        entries.append(CatalogEntry(f"b{i + 1}", "house" if residential else "retail", area, float(np.exp(rng.uniform(lo, hi)))))
    profiles = _profiles(entries, times, amb, intensity_w_m2, rng)
    dT = cfg.t0_c - cfg.t_setr_c
    for loc in route.bypass:
        route.bypass[loc] = PipeAttributes(BYPASS_LENGTH, BYPASS_DIAMETER, FRICTION, HTC)
    for loc, e in zip(user_locs, entries):
        peak = profiles[e.id].values.max() / (fluid.specific_heat * dT)
        route.users[loc] = [(e.id, user_pipe(peak, design_dp_pa, fluid))]
    g = build_route_network(route, fluid=fluid)
    cap = {e.id: e.capacity_j_per_k for e in entries}
    buildings = [Building(bid, cap[bid], profiles[bid]) for bid in g.buildings]
    return Scenario(cfg, g, buildings, AmbientSeries(times, amb))


def generate(seed: int, layout: str = "reference", users: int = 18, config: ScenarioConfig | None = None) -> Scenario:
    if layout == "reference":
        if users != 18:
            raise ValueError("the reference layout has exactly 18 users")
        return reference_scenario(seed, config)
    if layout == "random":
        return random_scenario(seed, users, config)
    raise ValueError(f"unknown layout {layout!r}")


__all__ = [
    "AmbientSeries",
    "CatalogEntry",
    "Route",
    "Scenario",
    "ScenarioConfig",
    "build_route_network",
    "generate",
    "load_config",
    "load_scenario",
    "random_route",
    "random_scenario",
    "reference_scenario",
    "save_config",
    "write_scenario",
]
