import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dhnflex.hydraulics import solve_flow_given_supply
from dhnflex.network import FluidProperties, NetworkGraph, PipeAttributes
from dhnflex.thermal import (
    BoundaryConditions,
    ThermalState,
    assemble_system,
    delivered_heat,
    initial_state,
    integrate,
    pipe_coefficients,
    steady_state,
)

from conftest import edge, random_network, series_parallel_graph, single_edge_graph

U = np.array([80.0, 40.0, -15.0])


def test_unit_volume_c1():
    d = 0.2
    pipe = PipeAttributes(1.0 / (math.pi * (d / 2) ** 2), d)
    c1, _ = pipe_coefficients(pipe, FluidProperties(1000.0))
    assert c1 == pytest.approx(1e-3, rel=1e-12)


def test_adiabatic_pipe():
    assert pipe_coefficients(PipeAttributes(10.0, 0.2, htc=0.0), FluidProperties())[1] == 0.0


def test_reference_coefficients():
    # frozen from an independent evaluation of 1/(rho V) and h A_s/(rho c_p V)
    c1, c2 = pipe_coefficients(PipeAttributes(10.0, 0.2, htc=1.5), FluidProperties(971.0, 4179.0))
    assert c1 == pytest.approx(0.003278165666156444, rel=1e-12)
    assert c2 == pytest.approx(7.393152314463298e-06, rel=1e-12)


def test_single_pipe_rows():
    g = single_edge_graph()
    c1, c2 = pipe_coefficients(g.edges[0].pipe, g.fluid)
    sys_ = assemble_system(g, np.array([2.0]))
    np.testing.assert_allclose(sys_.A, [[-(c1 * 2.0 + c2)]], rtol=1e-14)
    np.testing.assert_allclose(sys_.B, [[c1 * 2.0, 0.0, c2]], rtol=1e-14)


def test_mixing_node_weights():
    g = NetworkGraph(
        ["r", "x", "y", "z", "t"],
        [
            edge("e1", "r", "x"),
            edge("e2", "r", "y"),
            edge("e3", "x", "z"),
            edge("e4", "y", "z"),
            edge("e5", "z", "t"),
        ],
        "r",
        "t",
    )
    a, b = 0.7, 1.9
    sys_ = assemble_system(g, np.array([a, b, a, b, a + b]))
    c1, _ = pipe_coefficients(g.edges[4].pipe, g.fluid)
    assert sys_.A[4, 2] == pytest.approx(c1 * a, rel=1e-14)
    assert sys_.A[4, 3] == pytest.approx(c1 * b, rel=1e-14)
    temps = np.array([0.0, 0.0, 60.0, 30.0, 0.0])
    t_mix = sys_.node_temperatures(temps, U)[g.node_index["z"]]
    assert t_mix == pytest.approx((a * 60.0 + b * 30.0) / (a + b), rel=1e-14)


def test_uniform_temperatures_are_equilibrium(reference):
    g = reference.graph
    st_ = solve_flow_given_supply(g, g.zeta, 8.0)
    sys_ = assemble_system(g, st_.edge_flows)
    t = 55.0
    dT = sys_.A @ np.full(sys_.A.shape[0], t) + sys_.B @ np.full(3, t)
    assert np.abs(dT).max() < 1e-12


def test_scalar_pipe_matches_closed_form():
    g = single_edge_graph()
    m = 1.3
    c1, c2 = pipe_coefficients(g.edges[0].pipe, g.fluid)
    rate = c1 * m + c2
    t_ss = (c1 * m * U[0] + c2 * U[2]) / rate
    sys_ = assemble_system(g, np.array([m]))
    T0 = 20.0
    tau = 1.0 / rate
    state = integrate(ThermalState(np.array([T0])), sys_, U, 3 * tau)
    exact = t_ss + (T0 - t_ss) * math.exp(-3.0)
    assert abs(state.temperatures[0] - exact) / abs(exact) <= 1e-4
    assert state.temperatures[0] == pytest.approx(exact, rel=1e-10)
    late = integrate(ThermalState(np.array([T0])), sys_, U, 60 * tau)
    assert abs(late.temperatures[0] - t_ss) < 1e-4


def test_step_average_matches_quadrature():
    g = single_edge_graph()
    m = 0.8
    sys_ = assemble_system(g, np.array([m]))
    rate = -sys_.A[0, 0]
    t_ss = (sys_.B[0] @ U) / rate
    T0, dt = 10.0, 0.5 / rate
    _, avg = integrate(ThermalState(np.array([T0])), sys_, U, dt, return_average=True)
    exact = t_ss + (T0 - t_ss) * (1 - math.exp(-rate * dt)) / (rate * dt)
    assert avg[0] == pytest.approx(exact, rel=1e-12)


def test_zero_step_rejected():
    g = single_edge_graph()
    with pytest.raises(ValueError):
        integrate(ThermalState(np.array([50.0])), assemble_system(g, np.array([1.0])), U, 0.0)


def test_delivered_heat_direct_product():
    g = series_parallel_graph()
    flows = np.array([2.0, 1.0, 1.0, 2.0])
    sys_ = assemble_system(g, flows)
    temps = np.array([80.0, 70.0, 50.0])  # F, B, R
    assert delivered_heat(g, flows, sys_, temps, U)[0] == pytest.approx(167160.0, rel=1e-14)
    closed = np.array([1.0, 0.0, 1.0, 1.0])
    sys0 = assemble_system(g, closed)
    assert delivered_heat(g, closed, sys0, temps, U)[0] == 0.0


def _plant_balance(g, flows, sys_, temps, u, supply):
    """Plant enthalpy input minus pipe losses minus user heat, W."""
    cp = g.fluid.specific_heat
    t_term = sys_.node_temperatures(temps, u)[g.node_index[g.terminal]]
    plant_in = supply * cp * (u[0] - t_term)
    loss = sum(
        g.edges[k].pipe.htc * g.edges[k].pipe.surface_area * (temps[i] - u[2])
        for i, k in enumerate(sys_.state_edges)
    )
    return plant_in, loss, delivered_heat(g, flows, sys_, temps, u).sum()


def test_steady_energy_balance(reference):
    g = reference.graph
    st_ = solve_flow_given_supply(g, g.zeta, 9.0)
    sys_ = assemble_system(g, st_.edge_flows)
    temps = steady_state(sys_, U)
    plant_in, loss, users = _plant_balance(g, st_.edge_flows, sys_, temps, U, 9.0)
    assert users == pytest.approx(plant_in - loss, rel=1e-3)
    assert users == pytest.approx(plant_in - loss, rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.2, 10.0))
def test_steady_temperatures_bounded(seed, m0):
    g = random_network(seed)
    st_ = solve_flow_given_supply(g, g.zeta, m0)
    state = initial_state(g, BoundaryConditions(), st_.edge_flows)
    assert np.all(state.temperatures <= 80.0 + 1e-9)
    assert np.all(state.temperatures >= -15.0 - 1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(60.0, 3600.0))
def test_integration_semigroup(seed, dt):
    g = random_network(seed)
    st_ = solve_flow_given_supply(g, g.zeta, 2.0)
    sys_ = assemble_system(g, st_.edge_flows)
    s0 = ThermalState(np.full(sys_.A.shape[0], 30.0))
    one = integrate(s0, sys_, U, 2 * dt)
    two = integrate(integrate(s0, sys_, U, dt), sys_, U, dt)
    np.testing.assert_allclose(one.temperatures, two.temperatures, rtol=1e-9, atol=1e-9)
