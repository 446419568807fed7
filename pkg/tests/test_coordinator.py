import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dhnflex.coordinator import SelectionProblem, SubsystemTable, feasibility_check, select_optimal
from dhnflex.errors import NoFeasibleSelection
from dhnflex.partition import ReducedEdge, ReducedGraph

from oracles import brute_force, random_problem

NAN = float("nan")


def single():
    return ReducedGraph(["f", "r"], [ReducedEdge(0, "f", "r", True, NAN)], "f", "r")


def parallel_pair():
    return ReducedGraph(
        ["f", "r"],
        [ReducedEdge(0, "f", "r", True, NAN), ReducedEdge(1, "f", "r", True, NAN)],
        "f",
        "r",
    )


def series_chain(zeta=0.5):
    """Feed pass-through, one user subsystem, return pass-through."""
    return ReducedGraph(
        ["fP", "f1", "r1", "rP"],
        [
            ReducedEdge(0, "f1", "r1", True, NAN),
            ReducedEdge(1, "fP", "f1", False, zeta),
            ReducedEdge(2, "r1", "rP", False, zeta),
        ],
        "fP",
        "rP",
    )


def test_single_subsystem_picks_cheapest_feasible():
    t = SubsystemTable([1.0, 2.0, 3.0, 4.0], [5.0, NAN, 1.0, 2.0], [1.0, 1.0, 1.0, 1.0])
    sel = select_optimal(SelectionProblem(single(), [t], 0.1))
    assert sel.index == (2,) and sel.total_cost == 1.0


def test_parallel_identical_tables_tie_break():
    dp = [1.0, 2.0, 4.0]
    t = SubsystemTable(dp, [3.0, 1.0, 1.0], [1.0, 1.4, 2.0])
    sel = select_optimal(SelectionProblem(parallel_pair(), [t, t], 0.05))
    assert sel.index == (1, 1)
    assert sel.pressure_residual < 0.05


def test_mismatched_parallel_residual():
    a = SubsystemTable([1.0], [1.0], [1.0])
    b = SubsystemTable([3.0], [1.0], [1.0])
    p = SelectionProblem(parallel_pair(), [a, b], 0.1)
    mass, pres = feasibility_check(p, (0, 0))
    # best compromise splits the 2 Pa difference evenly
    assert pres == pytest.approx(1.0, rel=1e-9)
    assert mass == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(NoFeasibleSelection):
        select_optimal(p)
    assert select_optimal(SelectionProblem(parallel_pair(), [a, b], 1.01)).index == (0, 0)


def test_series_chain_mass_residual_zero():
    t = SubsystemTable([1.0, 2.0], [1.0, 2.0], [0.8, 1.3])
    p = SelectionProblem(series_chain(), [t], 0.1)
    sel = select_optimal(p)
    assert sel.mass_residual < 1e-12
    assert sel.total_mdot == pytest.approx(t.mdot0[sel.index[0]])
    # plant head is the subsystem head plus both pass-through drops, each edge within eps
    m = t.mdot0[sel.index[0]]
    head = sel.pressures[0] - sel.pressures[3]
    assert head == pytest.approx(t.dp[sel.index[0]] + 2 * 0.5 * m * m, abs=3 * 0.1 + 1e-9)


def test_all_infeasible_subsystem():
    t = SubsystemTable([1.0, 2.0], [NAN, NAN], [NAN, NAN])
    with pytest.raises(NoFeasibleSelection):
        select_optimal(SelectionProblem(single(), [t], 0.1))


def test_table_validation():
    with pytest.raises(ValueError):
        SubsystemTable([1.0, 2.0], [1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        SelectionProblem(single(), [SubsystemTable([1.0], [1.0], [1.0])], 0.0)
    with pytest.raises(ValueError):
        SelectionProblem(single(), [], 1.0)


def test_three_by_ten_matches_brute_force():
    rng = np.random.default_rng(7)
    r = ReducedGraph(
        ["fP", "f1", "r1", "f2", "r2", "rP"],
        [
            ReducedEdge(0, "f1", "r1", True, NAN),
            ReducedEdge(1, "f2", "r2", True, NAN),
            ReducedEdge(2, "f2", "r2", True, NAN),
            ReducedEdge(3, "fP", "f1", False, 0.2),
            ReducedEdge(4, "r1", "rP", False, 0.2),
            ReducedEdge(5, "f1", "f2", False, 0.4),
            ReducedEdge(6, "r2", "r1", False, 0.4),
        ],
        "fP",
        "rP",
    )
    dp = np.geomspace(1.0, 40.0, 10)
    tables = [SubsystemTable(dp, rng.uniform(1, 100, 10), rng.uniform(0.3, 1.0) * np.sqrt(dp)) for _ in range(3)]
    p = SelectionProblem(r, tables, 1.5)
    assert p.n_combinations == 1000
    bf = brute_force(p)
    assert bf is not None
    for method in ("exhaustive", "bnb"):
        sel = select_optimal(p, method=method)
        assert sel.index == bf[1]
        assert sel.total_cost == pytest.approx(bf[0], rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_methods_agree_with_oracle(seed):
    p = random_problem(seed, max_combos=5000)
    bf = brute_force(p)
    for method in ("exhaustive", "bnb"):
        if bf is None:
            with pytest.raises(NoFeasibleSelection):
                select_optimal(p, method=method)
            continue
        sel = select_optimal(p, method=method)
        assert sel.index == bf[1]
        assert sel.total_cost == pytest.approx(bf[0], rel=1e-12)
        assert sel.pressure_residual <= p.epsilon
        assert sel.mass_residual <= 1e-9 * max(1.0, sel.total_mdot)
        assert sel.total_cost == pytest.approx(sum(t.cost[i] for t, i in zip(p.tables, sel.index)))
