"""End-to-end acceptance criteria, one test per criterion.

Each test records a one-line PASS/FAIL verdict that is printed at the end of
the session (see ``pytest_terminal_summary`` in conftest).  The two 24 h
closed-loop runs are cached per module because they dominate the runtime.
"""

import itertools
import math
import time

import networkx as nx
import numpy as np
import pytest

from dhnflex import harness
from dhnflex.cli import main as cli_main
from dhnflex.coordinator import select_optimal
from dhnflex.hydraulics import residuals, solve_flow_given_supply
from dhnflex.lowlevel import envelope_ok, replay
from dhnflex.network import NetworkGraph
from dhnflex.partition import (
    _Locations,
    exhaustive_min_ncut,
    fiedler_sweep_bipartition,
    ncut_value,
    recursive_partition,
)
from dhnflex.thermal import ThermalState, assemble_system, delivered_heat, integrate, pipe_coefficients

from conftest import VERDICTS, edge, random_network, single_edge_graph
from oracles import brute_force, random_problem

U = np.array([80.0, 40.0, -15.0])


def verdict(n, text, ok):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {text}"
    VERDICTS.append(line)
    print(line)
    return ok


# --------------------------------------------------------------------------
def test_1_hydraulic_correctness():
    t0 = time.perf_counter()
    worst_mass = worst_pres = 0.0
    for seed in range(20):
        g = random_network(1000 + seed, max_edges=30)
        m0 = 0.5 + seed * 0.37
        st = solve_flow_given_supply(g, g.zeta, m0)
        mass, pres = residuals(g, g.zeta, st)
        worst_mass = max(worst_mass, mass / m0)
        worst_pres = max(worst_pres, pres / st.head(g))
    # two parallel branches: m1 / m2 = sqrt(zeta2 / zeta1)
    worst_ratio = 0.0
    for z1, z2 in [(1.0, 4.0), (0.3, 7.0), (12.0, 0.05)]:
        g = NetworkGraph(["r", "t"], [edge("a", "r", "t", "bypass"), edge("b", "r", "t", "bypass")], "r", "t")
        st = solve_flow_given_supply(g, np.array([z1, z2]), 3.0)
        ratio = st.edge_flows[0] / st.edge_flows[1]
        worst_ratio = max(worst_ratio, abs(ratio / math.sqrt(z2 / z1) - 1.0))
    elapsed = time.perf_counter() - t0
    ok = worst_mass <= 1e-9 and worst_pres <= 1e-6 and worst_ratio <= 1e-6 and elapsed < 1.0
    verdict(
        1,
        f"mass {worst_mass:.1e}, pressure {worst_pres:.1e}, ratio law {worst_ratio:.1e}, {elapsed:.2f} s",
        ok,
    )
    assert ok


# --------------------------------------------------------------------------
def _energy_audit(g, supply_profile, dt=600.0):
    """(plant input - losses - user heat - storage change) / plant input over the run."""
    cp, rho = g.fluid.specific_heat, g.fluid.density
    state = None
    stored0 = None
    plant = loss = users = 0.0
    for k, m0 in enumerate(supply_profile):
        st = solve_flow_given_supply(g, g.zeta, m0)
        sys_ = assemble_system(g, st.edge_flows)
        if state is None:
            state = ThermalState(np.full(len(sys_.state_edges), 50.0))
            stored0 = sum(rho * cp * g.edges[e].pipe.volume * state.temperatures[i] for i, e in enumerate(sys_.state_edges))
        state, avg = integrate(state, sys_, U, dt, return_average=True)
        t_term = sys_.node_temperatures(avg, U)[g.node_index[g.terminal]]
        plant += m0 * cp * (U[0] - t_term) * dt
        loss += dt * sum(
            g.edges[e].pipe.htc * g.edges[e].pipe.surface_area * (avg[i] - U[2]) for i, e in enumerate(sys_.state_edges)
        )
        # water leaves the users at the return set point
        users += delivered_heat(g, st.edge_flows, sys_, avg, U).sum() * dt
    stored1 = sum(rho * cp * g.edges[e].pipe.volume * state.temperatures[i] for i, e in enumerate(sys_.state_edges))
    return abs(plant - loss - users - (stored1 - stored0)) / plant


def test_2_thermal_correctness(reference):
    t0 = time.perf_counter()
    g = single_edge_graph()
    m = 1.3
    c1, c2 = pipe_coefficients(g.edges[0].pipe, g.fluid)
    rate = c1 * m + c2
    t_ss = (c1 * m * U[0] + c2 * U[2]) / rate
    T0 = 20.0
    got = integrate(ThermalState(np.array([T0])), assemble_system(g, np.array([m])), U, 3.0 / rate).temperatures[0]
    exact = t_ss + (T0 - t_ss) * math.exp(-3.0)
    scalar_err = abs(got - exact) / abs(exact)

    hours = np.arange(144) * 600.0 / 3600.0
    profile = 6.0 + 3.0 * np.sin(2 * np.pi * (hours - 6.0) / 24.0)
    audit = _energy_audit(reference.graph, profile)
    elapsed = time.perf_counter() - t0
    ok = scalar_err <= 1e-4 and audit <= 1e-3 and elapsed < 5.0
    verdict(2, f"scalar pipe error {scalar_err:.1e}, 24 h energy audit {audit:.1e}, {elapsed:.2f} s", ok)
    assert ok


# --------------------------------------------------------------------------
def _location_graphs():
    """Contracted location graphs of random networks with at most 12 locations."""
    out = []
    seed = 0
    while len(out) < 150:
        g = random_network(seed, max_edges=60)
        seed += 1
        W = _Locations(g).W
        if 2 <= len(W) <= 12:
            out.append(W)
    return out


def _canonical_graphs():
    gs = [nx.path_graph(n) for n in range(2, 13)]
    gs += [nx.cycle_graph(n) for n in range(3, 13)]
    gs += [nx.star_graph(n) for n in range(2, 12)]
    gs += [nx.complete_graph(n) for n in range(2, 9)]
    gs += [nx.grid_2d_graph(a, b) for a, b in [(2, 3), (3, 3), (3, 4), (2, 6)]]
    gs += [nx.barbell_graph(a, b) for a, b in [(3, 0), (3, 2), (4, 1), (5, 2)]]
    gs += [nx.ladder_graph(n) for n in range(2, 7)]
    gs += [nx.balanced_tree(2, 2), nx.balanced_tree(3, 2), nx.wheel_graph(8), nx.petersen_graph()]
    return [nx.to_numpy_array(nx.convert_node_labels_to_integers(G)) for G in gs]


def test_3_partitioner_quality(reference):
    worst = 1.0
    graphs = _location_graphs() + _canonical_graphs()
    for W in graphs:
        a, b = fiedler_sweep_bipartition(W)
        best, _ = exhaustive_min_ncut(W)
        got = ncut_value(W, a, b)
        worst = max(worst, got / best if best > 0 else (1.0 if got == 0 else np.inf))
    g = reference.graph
    p = recursive_partition(g, 5)
    closed = True
    for s in p.subsystems:
        sg = s.graph
        und = nx.Graph([(e.tail, e.head) for e in sg.edges])
        closed &= nx.is_connected(und)
        st = solve_flow_given_supply(sg, sg.zeta, 1.0)
        mass, pres = residuals(sg, sg.zeta, st)
        closed &= mass < 1e-9 and pres <= 1e-6 * max(st.head(sg), 1e-12)
    n_user = len(p.user_subsystems)
    ok = worst <= 1.10 and n_user == 5 and closed
    verdict(
        3,
        f"{len(graphs)} graphs, worst Ncut ratio {worst:.3f}; reference split into {n_user} closed user subsystems",
        ok,
    )
    assert ok


# --------------------------------------------------------------------------
def test_4_coordinator_exactness():
    problems = [random_problem(seed) for seed in range(100)]
    t0 = time.perf_counter()
    results = []
    for p in problems:
        try:
            results.append(select_optimal(p))
        except Exception:
            results.append(None)
    elapsed = time.perf_counter() - t0
    mismatches = 0
    for p, sel in zip(problems, results):
        bf = brute_force(p)
        if bf is None:
            mismatches += sel is not None
            continue
        if sel is None or sel.index != bf[1] or abs(sel.total_cost - bf[0]) > 1e-9 * max(1.0, bf[0]):
            mismatches += 1
        elif sel.pressure_residual > p.epsilon:
            mismatches += 1
    ok = mismatches == 0 and elapsed < 10.0
    verdict(4, f"{mismatches} mismatches over 100 problems, selection time {elapsed:.2f} s", ok)
    assert ok


# --------------------------------------------------------------------------
def test_5_lowlevel_consistency(reference):
    sc = reference
    h = harness.build_hierarchy(sc)
    cands = sc.config.candidates()
    worst, bad_env, n = 0.0, 0, 0
    for t in (0.0, 8 * 3600.0, 17 * 3600.0):
        plant = harness.Plant(sc)
        plant.initialize(np.array([b.demand.at(t) for b in sc.buildings]), sc.boundary(t), t)
        for j in range(len(h.user_subsystems)):
            inp = harness.local_inputs(sc, h, j, plant.state.temperatures, sc.buildings, t)
            tab = harness._sweep((inp, cands))
            for sol in tab.solutions:
                if not sol.feasible:
                    continue
                cost, flex, _, _ = replay(inp, sol)
                worst = max(worst, abs(cost - sol.cost) / max(sol.cost, 1e-12))
                bad_env += not envelope_ok(inp, flex)
                n += 1
    ok = n > 0 and worst <= 0.01 and bad_env == 0
    verdict(5, f"{n} solutions replayed, worst cost mismatch {worst:.2e}, {bad_env} envelope violations", ok)
    assert ok


# --------------------------------------------------------------------------
@pytest.fixture(scope="module")
def day_runs(reference):
    sc = reference
    nominal = harness.run_nominal(sc)
    optimized = harness._metrics(sc, "optimized")
    t0 = time.perf_counter()
    error = None
    try:
        harness.run_optimized(sc, partial=optimized)
    except Exception as exc:  # recorded in the verdict
        error = exc
    return nominal, optimized, time.perf_counter() - t0, error


def test_6_end_to_end(day_runs):
    nominal, optimized, wall, error = day_runs
    n = optimized.n_steps
    if error is not None:
        verdict(6, f"run stopped after {n} of {nominal.n_steps} steps: {error}", False)
        pytest.fail(str(error))
    rep = harness.compare(nominal, optimized)
    a = rep.optimized_bypass_kg < rep.nominal_bypass_kg and rep.reduction >= 0.30
    b = rep.max_deviation_k <= 2.0 + 1e-6
    c = 0.95 <= rep.supply_ratio <= 1.15
    fast = wall <= 1800.0
    ok = a and b and c and fast
    verdict(
        6,
        f"bypass {rep.nominal_bypass_kg:.3g} -> {rep.optimized_bypass_kg:.3g} kg ({rep.reduction:.1%}) [{'ok' if a else 'no'}], "
        f"max deviation {rep.max_deviation_k:.3f} K [{'ok' if b else 'no'}], "
        f"supply ratio {rep.supply_ratio:.3f} [{'ok' if c else 'no'}], wall {wall / 60:.1f} min [{'ok' if fast else 'no'}]",
        ok,
    )
    assert a, "bypass reduction below 30 %"
    assert b, "temperature deviation above 2 K"
    assert fast, "run slower than 30 min"
    assert c, f"supplied-mass ratio {rep.supply_ratio:.3f} outside [0.95, 1.15]"


# --------------------------------------------------------------------------
def test_7_zero_flexibility(reference):
    sc = reference.with_envelope(0.0, 0.0)
    nominal = harness.run_nominal(sc)
    optimized = harness.run_optimized(sc)
    nb, ob = nominal.bypass_integral, optimized.bypass_integral
    rel = abs(ob - nb) / nb
    ok = rel <= 0.02
    verdict(7, f"bypass nominal {nb:.6g} kg, optimized {ob:.6g} kg, difference {rel:.2e}", ok)
    assert ok


# --------------------------------------------------------------------------
def test_8_determinism(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert cli_main(["generate", "--out", str(d / "sc"), "--seed", "5"]) == 0
        assert cli_main(["compare", "--config", str(d / "sc" / "scenario.json"), "--out", str(d / "out"), "--steps", "4"]) == 0
        outs.append(d / "out")
    same = all(
        (outs[0] / sub / "metrics.csv").read_bytes() == (outs[1] / sub / "metrics.csv").read_bytes()
        for sub in ("nominal", "optimized")
    )
    verdict(8, "metrics.csv byte-identical across two seeded runs" if same else "metrics.csv differs between seeded runs", same)
    assert same
