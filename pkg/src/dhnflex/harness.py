"""Closed-loop runs: nominal tracking and the receding-horizon hierarchy.

The full network is the plant.  Each step the users' valves deliver a heat
target (the nominal demand, or the first-stage plan of the selected local
solutions), the plant supplies the least head that lets every open valve
pass its flow, and temperatures are integrated over the step.  The used
flexibility of every building is then updated from the heat that was
actually delivered.
"""

from __future__ import annotations

import logging
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import buildings as bld
from .coordinator import SelectionProblem, SubsystemTable, select_optimal
from .errors import (
    EnvelopeViolation,
    NoFeasibleSelection,
    NonConvergence,
    ScenarioMismatch,
    StepInfeasible,
    TrackingInfeasible,
)
from .hydraulics import solve_flow_given_supply, solve_minimum_head
from .lowlevel import CostTable, HorizonGrid, LocalInputs, sweep_candidates
from .partition import Partition, ReducedGraph, recursive_partition, reduce_graph
from .scenario import Scenario
from .thermal import ThermalState, assemble_system, integrate, steady_state

log = logging.getLogger(__name__)

TRACK_TOL_K = 1e-9  # inlet temperature fixed-point tolerance
ENVELOPE_INNER = 1e-7  # fraction of C kept clear of the bounds when projecting targets


@dataclass
class StepRecord:
    step: int
    time: float
    supply: float  # kg/s
    bypass: float  # kg/s
    head: float  # Pa
    flows: np.ndarray  # (n_u,) kg/s
    heat: np.ndarray  # (n_u,) W, step average
    demand: np.ndarray  # (n_u,) W
    flexibility: np.ndarray  # (n_u,) J, end of step
    target: np.ndarray  # (n_u,) W, heat requested from the valves


@dataclass
class RunMetrics:
    label: str
    building_ids: list[str]
    capacity: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    interval: float
    steps: list[StepRecord] = field(default_factory=list)
    selections: list[dict] = field(default_factory=list)
    cost_rows: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    wall_time: float = 0.0
    completed: bool = True

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.steps])

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.steps])

    @property
    def bypass_integral(self) -> float:
        return float(np.sum(self.series("bypass")) * self.interval) if self.steps else 0.0

    @property
    def supplied_mass(self) -> float:
        return float(np.sum(self.series("supply")) * self.interval) if self.steps else 0.0

    @property
    def delivered_mass(self) -> float:
        """Mass passed through users and bypasses, for the conservation audit."""
        if not self.steps:
            return 0.0
        return float((self.series("flows").sum(axis=1) + self.series("bypass")).sum() * self.interval)

    @property
    def deviation(self) -> np.ndarray:
        """Equivalent temperature deviation F/C per step and user, K."""
        return self.series("flexibility") / self.capacity[None, :]

    @property
    def max_deviation(self) -> float:
        return float(np.abs(self.deviation).max()) if self.steps else 0.0


@dataclass
class ComparisonReport:
    nominal_bypass_kg: float
    optimized_bypass_kg: float
    reduction: float
    nominal_supply_kg: float
    optimized_supply_kg: float
    supply_ratio: float
    max_deviation_k: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def compare(nominal: RunMetrics, optimized: RunMetrics) -> ComparisonReport:
    if nominal.building_ids != optimized.building_ids or nominal.n_steps != optimized.n_steps:
        raise ScenarioMismatch("runs cover different buildings or step counts")
    if not np.array_equal(nominal.times, optimized.times):
        raise ScenarioMismatch("runs use different time grids")
    nb, ob = nominal.bypass_integral, optimized.bypass_integral
    ns, os_ = nominal.supplied_mass, optimized.supplied_mass
    return ComparisonReport(
        nb,
        ob,
        1.0 - ob / nb if nb > 0 else 0.0,
        ns,
        os_,
        os_ / ns if ns > 0 else float("nan"),
        optimized.max_deviation,
    )


# --------------------------------------------------------------------------
# plant (truth) simulation
# --------------------------------------------------------------------------
class Plant:
    """Full-network truth model advanced one control interval at a time."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        self.g = g = sc.graph
        self.users = g.user_edges
        self.cp = g.fluid.specific_heat
        ratio = sc.config.zeta_ratio
        self.zeta_min = g.zeta[self.users] / ratio
        self.zeta_max = g.zeta[self.users] * ratio
        self.dt = sc.config.interval_s
        self.state: ThermalState | None = None
        self.t_in: np.ndarray | None = None

    def _hydraulics(self, q: np.ndarray):
        """Minimum-head solve with users at flow ``q``; valves that would have to
        close beyond their range are left at ``zeta_max`` instead."""
        g = self.g
        zeta = np.array(g.zeta, dtype=float)
        saturated = np.zeros(len(self.users), dtype=bool)
        for _ in range(len(self.users) + 1):
            zeta[self.users] = np.where(saturated, self.zeta_max, g.zeta[self.users])
            fixed = {int(k): float(v) for k, v, s in zip(self.users, q, saturated) if not s}
            zmin = {int(k): float(z) for k, z in zip(self.users, self.zeta_min)}
            st = solve_minimum_head(g, zeta, fixed, zmin)
            implied = st.zeta[self.users]
            over = (~saturated) & (q > 0) & (implied > self.zeta_max * (1 + 1e-9))
            if not over.any():
                return st
            saturated |= over
        raise NonConvergence("valve saturation did not settle")

    def initialize(self, heat: np.ndarray, u: np.ndarray, t: float = 0.0):
        """Steady temperatures for the given user heat at ``t``."""
        g = self.g
        t_in = np.full(len(self.users), u[0])
        for _ in range(50):
            q = heat / (self.cp * np.maximum(t_in - u[1], 1e-3))
            st = self._hydraulics(q)
            sys_ = assemble_system(g, st.edge_flows)
            temps = steady_state(sys_, u)
            new = sys_.node_temperatures(temps, u)[g.tails[self.users]]
            if np.abs(new - t_in).max() < TRACK_TOL_K:
                t_in = new
                break
            t_in = new
        self.state = ThermalState(temps, t)
        self.t_in = t_in

    def track(self, target: np.ndarray, u: np.ndarray, max_iter: int = 60):
        """Advance one interval delivering ``target`` W per user (averaged)."""
        g = self.g
        if np.any(target < 0):
            raise TrackingInfeasible("negative heat target")
        t_in = self.t_in.copy()
        st = sys_ = new_state = avg = None
        for it in range(max_iter):
            dT = t_in - u[1]
            if np.any(dT[target > 0] <= 0):
                raise TrackingInfeasible("user inlet temperature at or below the return set point")
            q = np.where(target > 0, target / (self.cp * np.maximum(dT, 1e-12)), 0.0)
            try:
                st = self._hydraulics(q)
            except NonConvergence as exc:
                raise TrackingInfeasible(str(exc)) from exc
            sys_ = assemble_system(g, st.edge_flows)
            new_state, avg = integrate(self.state, sys_, u, self.dt, return_average=True)
            new = sys_.node_temperatures(avg, u)[g.tails[self.users]]
            change = np.abs(new - t_in).max()
            t_in = new
            if change < TRACK_TOL_K:
                break
        return self._commit(st, sys_, new_state, avg, u)

    def apply_valves(self, zeta_users: np.ndarray, supply: float, u: np.ndarray):
        """Advance one interval with prescribed valves and plant supply flow."""
        g = self.g
        zeta = np.array(g.zeta, dtype=float)
        zeta[self.users] = np.clip(zeta_users, self.zeta_min, self.zeta_max)
        try:
            st = solve_flow_given_supply(g, zeta, supply)
        except NonConvergence as exc:
            raise TrackingInfeasible(str(exc)) from exc
        sys_ = assemble_system(g, st.edge_flows)
        new_state, avg = integrate(self.state, sys_, u, self.dt, return_average=True)
        return self._commit(st, sys_, new_state, avg, u)

    def _commit(self, st, sys_, new_state, avg, u):
        g = self.g
        t_in = sys_.node_temperatures(avg, u)[g.tails[self.users]]
        q = st.edge_flows[self.users]
        heat = q * self.cp * (t_in - u[1])
        self.state = new_state
        self.t_in = t_in
        return st, q, heat


# --------------------------------------------------------------------------
# runs
# --------------------------------------------------------------------------
def _grid(sc: Scenario) -> HorizonGrid:
    return HorizonGrid(sc.config.horizon_s, sc.config.interval_s)


def _metrics(sc: Scenario, label: str) -> RunMetrics:
    bs = sc.buildings
    return RunMetrics(
        label,
        [b.id for b in bs],
        np.array([b.heat_capacity for b in bs]),
        np.array([b.lower_bound for b in bs]),
        np.array([b.upper_bound for b in bs]),
        sc.config.interval_s,
    )


def _demand(sc: Scenario, t: float) -> np.ndarray:
    return np.array([b.demand.at(t) for b in sc.buildings])


def _project(target, demand, flex, lower, upper, capacity, dt):
    """Clip heat targets so the end-of-step flexibility stays in the envelope."""
    inner = ENVELOPE_INNER * capacity
    lo_heat = demand + (np.minimum(lower + inner, 0.5 * (lower + upper)) - flex) / dt
    hi_heat = demand + (np.maximum(upper - inner, 0.5 * (lower + upper)) - flex) / dt
    return np.clip(target, np.maximum(lo_heat, 0.0), np.maximum(hi_heat, 0.0))


def _advance_buildings(sc: Scenario, blds, heat, t):
    out = []
    for b, h in zip(blds, heat):
        out.append(bld.update_flexibility(b, float(h), sc.config.interval_s, t, check=True))
    return out


def run_nominal(sc: Scenario, n_steps: int | None = None) -> RunMetrics:
    """Deliver exactly the nominal demand at every step."""
    t0 = _time.perf_counter()
    cfg = sc.config
    n = cfg.n_steps if n_steps is None else n_steps
    plant = Plant(sc)
    plant.initialize(_demand(sc, 0.0), sc.boundary(0.0))
    blds = list(sc.buildings)
    m = _metrics(sc, "nominal")
    for k in range(n):
        t = k * cfg.interval_s
        u = sc.boundary(t)
        dem = _demand(sc, t)
        st, q, heat = plant.track(dem, u)
        rel = np.abs(heat - dem) / np.maximum(dem, 1.0)
        if rel.max() > 5e-3:
            raise TrackingInfeasible(f"step {k}: nominal tracking error {rel.max():.2%}")
        blds = _advance_buildings(sc, blds, heat, t)
        m.steps.append(_record(sc, k, t, st, q, heat, dem, blds, dem))
    m.wall_time = _time.perf_counter() - t0
    return m


def _record(sc, k, t, st, q, heat, dem, blds, target):
    g = sc.graph
    return StepRecord(
        k,
        t,
        float(st.supply_flow),
        float(st.edge_flows[g.bypass_edges].sum()),
        float(st.head(g)),
        q.copy(),
        heat.copy(),
        dem.copy(),
        np.array([b.used_flexibility for b in blds]),
        np.asarray(target, dtype=float).copy(),
    )


@dataclass
class Hierarchy:
    """Partition and reduced graph fixed for a run."""

    partition: Partition
    reduced: ReducedGraph
    user_subsystems: list
    local_users: list[np.ndarray]  # per subsystem: indices into the full user list
    local_states: list[np.ndarray]  # per subsystem: indices into the full thermal state


def build_hierarchy(sc: Scenario) -> Hierarchy:
    g = sc.graph
    part = recursive_partition(g, sc.config.n_groups)
    red = reduce_graph(part)
    subs = [part.subsystems[e.subsystem] for e in red.edges if e.has_users]
    user_pos = {g.edges[k].id: i for i, k in enumerate(g.user_edges)}
    state_pos = {g.edges[k].id: i for i, k in enumerate(g.non_user_edges)}
    lu, ls = [], []
    for s in subs:
        sg = s.graph
        lu.append(np.array([user_pos[sg.edges[k].id] for k in sg.user_edges]))
        ls.append(np.array([state_pos[sg.edges[k].id] for k in sg.non_user_edges]))
    return Hierarchy(part, red, subs, lu, ls)


def local_inputs(sc: Scenario, h: Hierarchy, j: int, temps: np.ndarray, blds, t: float) -> LocalInputs:
    grid = _grid(sc)
    sub = h.user_subsystems[j].graph
    idx = h.local_users[j]
    bs = [blds[i] for i in idx]
    S = grid.n_stages
    ratio = sc.config.zeta_ratio
    z = sub.zeta[sub.user_edges]
    return LocalInputs(
        graph=sub,
        temperatures=temps[h.local_states[j]],
        demand=np.array([b.demand.sample(t, grid.interval, S) for b in bs]),
        flexibility=np.array([b.used_flexibility for b in bs]),
        lower=np.array([b.lower_bound for b in bs]),
        upper=np.array([b.upper_bound for b in bs]),
        capacity=np.array([b.heat_capacity for b in bs]),
        boundary=np.array([sc.boundary(t + s * grid.interval) for s in range(S)]),
        grid=grid,
        zeta_min=z / ratio,
        zeta_max=z * ratio,
    )


def _sweep(args):
    inp, cands = args
    return sweep_candidates(inp, cands)


def parallel_map(fn, items, workers: int = 1):
    """Order-preserving map; a process pool when ``workers > 1``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def coordinate(sc: Scenario, h: Hierarchy, tables: list[CostTable], step: int):
    """Select candidates, widening the tolerance by doubling when needed."""
    eps = sc.config.epsilon()
    last = None
    for attempt in range(sc.config.epsilon_retries + 1):
        prob = SelectionProblem(h.reduced, [SubsystemTable.from_cost_table(t) for t in tables], eps)
        try:
            return select_optimal(prob), eps, attempt
        except NoFeasibleSelection as exc:
            last = exc
            eps *= 2.0
    raise StepInfeasible(step, f"no admissible selection up to eps={eps / 2:g} Pa ({last})")


def run_optimized(
    sc: Scenario,
    n_steps: int | None = None,
    workers: int | None = None,
    hierarchy: Hierarchy | None = None,
    partial: RunMetrics | None = None,
) -> RunMetrics:
    """Receding-horizon hierarchical control of the scenario.

    ``partial``, when given, is overwritten and then filled step by step, so
    it holds the completed steps if the run raises.
    """
    t0 = _time.perf_counter()
    cfg = sc.config
    n = cfg.n_steps if n_steps is None else n_steps
    workers = cfg.parallelism if workers is None else workers
    h = hierarchy or build_hierarchy(sc)
    cands = cfg.candidates()
    plant = Plant(sc)
    plant.initialize(_demand(sc, 0.0), sc.boundary(0.0))
    blds = list(sc.buildings)
    m = _metrics(sc, "optimized")
    if partial is not None:
        # fill the caller's record in place so it survives an exception
        partial.__dict__.update(m.__dict__)
        m = partial
    m.completed = False
    for k in range(n):
        t = k * cfg.interval_s
        u = sc.boundary(t)
        dem = _demand(sc, t)
        temps = plant.state.temperatures
        inputs = [local_inputs(sc, h, j, temps, blds, t) for j in range(len(h.user_subsystems))]
        tables = parallel_map(_sweep, [(inp, cands) for inp in inputs], workers)
        for j, tab in enumerate(tables):
            for row in tab.rows(h.user_subsystems[j].id):
                row["step"] = k
                m.cost_rows.append(row)
        try:
            sel, eps, attempt = coordinate(sc, h, tables, k)
        except StepInfeasible:
            m.notes.append(f"step {k}: no admissible selection")
            raise
        plan = np.zeros(len(plant.users))
        zeta_plan = np.zeros(len(plant.users))
        for j, i in enumerate(sel.index):
            sol = tables[j].solutions[i]
            plan[h.local_users[j]] = sol.heat[0]
            zeta_plan[h.local_users[j]] = sol.zeta[0]
        flex = np.array([b.used_flexibility for b in blds])
        if cfg.plant_mode == "min_head":
            target = _project(plan, dem, flex, m.lower, m.upper, m.capacity, cfg.interval_s)
            clipped = float(np.abs(target - plan).max())
            if clipped > 1e-6 * max(1.0, float(np.abs(plan).max())):
                log.debug("step %d: heat targets clipped by up to %.3g W", k, clipped)
            try:
                st, q, heat = plant.track(target, u)
            except TrackingInfeasible as exc:
                raise StepInfeasible(k, str(exc)) from exc
        else:
            target = plan
            try:
                st, q, heat = plant.apply_valves(zeta_plan, sel.total_mdot, u)
            except TrackingInfeasible as exc:
                raise StepInfeasible(k, str(exc)) from exc
        try:
            blds = _advance_buildings(sc, blds, heat, t)
        except EnvelopeViolation as exc:
            m.notes.append(f"step {k}: {exc}")
            raise
        m.selections.append(
            {
                "step": k,
                "time_s": t,
                "index": list(sel.index),
                "dp_pa": [float(tables[j].candidates[i]) for j, i in enumerate(sel.index)],
                "total_cost_kg": sel.total_cost,
                "total_mdot_kg_s": sel.total_mdot,
                "pressure_residual_pa": sel.pressure_residual,
                "epsilon_pa": eps,
                "widenings": attempt,
            }
        )
        m.steps.append(_record(sc, k, t, st, q, heat, dem, blds, target))
        log.info(
            "step %d/%d bypass %.3f kg/s supply %.3f kg/s eps %.3g",
            k + 1,
            n,
            m.steps[-1].bypass,
            m.steps[-1].supply,
            eps,
        )
    m.completed = True
    m.wall_time = _time.perf_counter() - t0
    return m
