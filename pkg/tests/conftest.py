import numpy as np
import pytest

from dhnflex.buildings import Building, DemandProfile
from dhnflex.network import Edge, EdgeKind, FluidProperties, NetworkGraph, PipeAttributes
from dhnflex.scenario import (
    AmbientSeries,
    Route,
    Scenario,
    ScenarioConfig,
    build_route_network,
    random_route,
    reference_scenario,
    user_pipe,
)

PIPE = PipeAttributes(10.0, 0.2)


def edge(eid, tail, head, kind="feed", pipe=PIPE, building=None):
    return Edge(eid, tail, head, EdgeKind(kind), pipe, building)


def single_edge_graph():
    return NetworkGraph(["a", "b"], [edge("e", "a", "b")], "a", "b")


def parallel_graph():
    """Two branches from root to terminal."""
    return NetworkGraph(["r", "t"], [edge("e1", "r", "t", "bypass"), edge("e2", "r", "t", "bypass")], "r", "t")


def series_parallel_graph():
    """r -> a, two parallel edges a -> b (a user and its bypass), b -> t."""
    return NetworkGraph(
        ["r", "a", "b", "t"],
        [
            edge("F", "r", "a", "feed"),
            edge("U", "a", "b", "user", building="h1"),
            edge("B", "a", "b", "bypass"),
            edge("R", "b", "t", "return"),
        ],
        "r",
        "t",
    )


def random_network(seed, n_users=None, max_edges=30):
    """Random tree-with-bypass route network, redrawn until it fits ``max_edges``."""
    rng = np.random.default_rng(seed)
    fluid = FluidProperties()
    while True:
        n = int(rng.integers(1, 7)) if n_users is None else n_users
        route, locs = random_route(rng, n)
        for loc in locs:
            route.users[loc] = [(f"b{loc}", user_pipe(float(rng.uniform(0.2, 2.0)), 60.0, fluid))]
        g = build_route_network(route, fluid=fluid)
        if g.n_edges <= max_edges:
            return g


@pytest.fixture(scope="session")
def reference():
    return reference_scenario(0)


def one_user_graph(design_flow=1.0):
    """Plant, one feed pipe, a user with a parallel bypass, one return pipe."""
    fluid = FluidProperties()
    return NetworkGraph(
        ["r", "a", "b", "t"],
        [
            edge("F", "r", "a", "feed", PipeAttributes(50.0, 0.2)),
            edge("U", "a", "b", "user", user_pipe(design_flow, 60.0, fluid), building="h"),
            edge("B", "a", "b", "bypass", PipeAttributes(3.0, 0.15)),
            edge("R", "b", "t", "return", PipeAttributes(50.0, 0.2)),
        ],
        "r",
        "t",
    )


def local_inputs(g, demand_w, capacity, dT, n_stages=6, flex=0.0, ratio=100.0):
    """Constant-demand local problem with every pipe starting at the supply temperature."""
    from dhnflex.lowlevel import HorizonGrid, LocalInputs
    from dhnflex.thermal import BoundaryConditions, initial_state

    nu = len(g.user_edges)
    z = g.zeta[g.user_edges]
    bc = BoundaryConditions(80.0, 40.0, -15.0)
    return LocalInputs(
        graph=g,
        temperatures=initial_state(g, bc).temperatures,
        demand=np.broadcast_to(np.asarray(demand_w, dtype=float).reshape(-1, 1), (nu, n_stages)).copy(),
        flexibility=np.full(nu, float(flex)),
        lower=np.full(nu, -capacity * dT),
        upper=np.full(nu, capacity * dT),
        capacity=np.full(nu, float(capacity)),
        boundary=np.tile(bc.vector(), (n_stages, 1)),
        grid=HorizonGrid(n_stages * 600.0, 600.0),
        zeta_min=z / ratio,
        zeta_max=z * ratio,
    )


CP_DT = 4179.0 * 40.0


def one_user_network():
    fl = FluidProperties()
    route = Route()
    route.add("X", "P", PipeAttributes(50.0, 0.2))
    route.users["X"] = [("h", user_pipe(1.0, 60.0, fl))]
    route.bypass["X"] = PipeAttributes(3.0, 0.07)
    return build_route_network(route, fluid=fl)


def one_user_scenario(demand_w, steps=4, dT=2.0, **cfg):
    cfg = ScenarioConfig(duration_s=600.0 * steps, n_groups=1, **cfg)
    span = cfg.duration_s + cfg.horizon_s
    prof = DemandProfile.constant(demand_w, span + 600.0, 600.0)
    b = Building("h", 78e6, prof, dT_lower=-dT, dT_upper=dT)
    times = np.arange(0.0, span + 600.0, 600.0)
    return Scenario(cfg, one_user_network(), [b], AmbientSeries(times, np.full(len(times), -15.0)))


# one-line verdicts appended by the acceptance tests
VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
