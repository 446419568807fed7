"""Well-mixed pipe temperature dynamics assembled over the whole network.

Each non-user pipe obeys

    dT/dt = c1 * mdot * (T_in - T) + c2 * (T_amb - T)

with ``c1 = 1 / (rho V)`` and ``c2 = h A_s / (rho c_p V)``.  ``T_in`` is the
ideal mixing temperature at the pipe's tail node: flow-weighted over the
incoming pipes, with user edges entering at the return set point and the
plant injecting at the supply temperature.  User edges carry no state.

The boundary input vector is always ``u = [T_supply, T_return_set, T_amb]``.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import InconsistentFlow
from .network import EdgeKind, FluidProperties, NetworkGraph, PipeAttributes


def pipe_coefficients(attr: PipeAttributes, fluid: FluidProperties) -> tuple[float, float]:
    v = attr.volume
    c1 = 1.0 / (fluid.density * v)
    c2 = attr.htc * attr.surface_area / (fluid.density * fluid.specific_heat * v)
    return c1, c2


@dataclass(frozen=True)
class BoundaryConditions:
    supply_temperature: float = 80.0
    return_set_temperature: float = 40.0
    ambient_temperature: float = -15.0

    def vector(self) -> np.ndarray:
        return np.array([self.supply_temperature, self.return_set_temperature, self.ambient_temperature])


@dataclass
class ThermalState:
    temperatures: np.ndarray  # one entry per non-user edge, degC
    time: float = 0.0

    def copy(self) -> "ThermalState":
        return ThermalState(self.temperatures.copy(), self.time)


@dataclass
class ThermalSystem:
    """Linear system ``dT/dt = A T + B u`` for fixed flows, plus node mixing maps.

    ``mix_state @ T + mix_input @ u`` gives the mixing temperature at every
    node; it is what the pipes leaving a node (and users) receive.
    """

    A: np.ndarray
    B: np.ndarray
    mix_state: np.ndarray
    mix_input: np.ndarray
    state_edges: np.ndarray

    def node_temperatures(self, temps: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.mix_state @ temps + self.mix_input @ u


_COEFFS: "weakref.WeakKeyDictionary[NetworkGraph, tuple]" = weakref.WeakKeyDictionary()


def _coefficients(g: NetworkGraph) -> tuple[np.ndarray, np.ndarray]:
    cache = _COEFFS.get(g)
    if cache is None:
        cs = np.array([pipe_coefficients(e.pipe, g.fluid) for e in g.edges])
        cache = _COEFFS[g] = (cs[:, 0], cs[:, 1])
    return cache


def assemble_system(
    g: NetworkGraph, flows: np.ndarray, supply: float | None = None, tol: float = 1e-9
) -> ThermalSystem:
    """Assemble ``A(mdot)`` and ``B`` for the non-user edges of ``g``.

    ``flows`` are per-edge mass flows (kg/s) satisfying conservation;
    ``supply`` defaults to the total outflow of the root.
    """
    flows = np.asarray(flows, dtype=float)
    if supply is None:
        supply = float(flows[g.out_edges(g.root)].sum())
    mv = np.zeros(g.n_nodes)
    mv[g.node_index[g.root]] = supply
    mv[g.node_index[g.terminal]] = -supply
    if np.abs(g.incidence @ flows - mv).max() > tol * max(supply, 1e-12) + 1e-14:
        raise InconsistentFlow("flows violate mass conservation")

    c1, c2 = _coefficients(g)
    state_edges = g.non_user_edges
    pos = -np.ones(g.n_edges, dtype=int)
    pos[state_edges] = np.arange(len(state_edges))
    ns = len(state_edges)
    n = g.n_nodes
    is_user = g.kinds == EdgeKind.USER.value

    inflow = np.zeros(n)
    np.add.at(inflow, g.heads, flows)
    inflow[g.node_index[g.root]] += supply
    mix_state = np.zeros((n, ns))
    mix_input = np.zeros((n, 3))
    for k in range(g.n_edges):
        h = g.heads[k]
        if inflow[h] <= 0:
            continue
        w = flows[k] / inflow[h]
        if is_user[k]:
            mix_input[h, 1] += w
        else:
            mix_state[h, pos[k]] += w
    r = g.node_index[g.root]
    if inflow[r] > 0:
        mix_input[r, 0] += supply / inflow[r]
    dead = inflow <= 0
    mix_input[dead, 2] = 1.0  # stagnant node sits at ambient

    A = np.zeros((ns, ns))
    B = np.zeros((ns, 3))
    for i, k in enumerate(state_edges):
        adv = c1[k] * flows[k]
        t = g.tails[k]
        A[i] += adv * mix_state[t]
        B[i] += adv * mix_input[t]
        A[i, i] -= adv + c2[k]
        B[i, 2] += c2[k]
    return ThermalSystem(A, B, mix_state, mix_input, state_edges)


def integrate(
    state: ThermalState,
    system: ThermalSystem,
    u: np.ndarray,
    dt: float,
    return_average: bool = False,
):
    """Advance the temperatures over ``dt`` seconds with flows held constant.

    The step is exact for the linear time-invariant system (zero-order hold
    on the boundary inputs), computed with one augmented matrix exponential
    that also yields the time-average of the state over the interval.
    """
    if not dt > 0:
        raise ValueError("time step must be positive")
    A, B = system.A, system.B
    ns = A.shape[0]
    u = np.asarray(u, dtype=float)
    # z = [T, integral of T, 1]
    M = np.zeros((2 * ns + 1, 2 * ns + 1))
    M[:ns, :ns] = A
    M[:ns, -1] = B @ u
    M[ns : 2 * ns, :ns] = np.eye(ns)
    E = expm(M * dt)
    z0 = np.concatenate([state.temperatures, np.zeros(ns), [1.0]])
    z = E @ z0
    new = ThermalState(z[:ns], state.time + dt)
    if return_average:
        return new, z[ns : 2 * ns] / dt
    return new


def steady_state(system: ThermalSystem, u: np.ndarray) -> np.ndarray:
    """Equilibrium temperatures ``-A^-1 B u`` (requires a nonsingular ``A``)."""
    return np.linalg.solve(system.A, -system.B @ np.asarray(u, dtype=float))


def delivered_heat(
    g: NetworkGraph,
    flows: np.ndarray,
    system: ThermalSystem,
    temps: np.ndarray,
    u: np.ndarray,
) -> np.ndarray:
    """Heat extracted by every user edge, W, in user-edge order.

    ``temps`` may be instantaneous or interval-averaged state temperatures;
    with averages the result is the interval-average power because flows
    are constant over the interval.
    """
    u = np.asarray(u, dtype=float)
    users = g.user_edges
    t_nodes = system.node_temperatures(temps, u)
    t_in = t_nodes[g.tails[users]]
    return flows[users] * g.fluid.specific_heat * (t_in - u[1])


def user_inlet_temperatures(g: NetworkGraph, system: ThermalSystem, temps, u) -> np.ndarray:
    return system.node_temperatures(temps, np.asarray(u, dtype=float))[g.tails[g.user_edges]]


def initial_state(g: NetworkGraph, bc: BoundaryConditions, flows: np.ndarray | None = None) -> ThermalState:
    """Steady temperatures for the given flows, or the supply temperature."""
    ns = len(g.non_user_edges)
    if flows is None:
        return ThermalState(np.full(ns, bc.supply_temperature))
    sys_ = assemble_system(g, flows)
    return ThermalState(steady_state(sys_, bc.vector()))
