"""Local finite-horizon optimal control of one subsystem for a fixed head.

For a candidate total pressure drop ``dp`` the subsystem is operated over a
short horizon of equal stages.  Decisions are the user flows of every stage
and the subsystem head of stages two onward (stage one is held at ``dp``).
Valve coefficients follow from the flows as ``dP_user / q**2`` and are kept
inside ``[zeta_min, zeta_max]``; bypass flows come out of the hydraulics.
Delivered heat uses stage-average user inlet temperatures, frozen while the
NLP is solved and refreshed by re-simulating the solution until they settle.

The objective is the bypass mass over the horizon.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, nnls

from .errors import NonConvergence
from .hydraulics import loop_system, solve_flow_given_supply, solve_minimum_head
from .network import EdgeKind, NetworkGraph
from .thermal import ThermalState, assemble_system, integrate

log = logging.getLogger(__name__)

ENVELOPE_MARGIN_K = 1e-4  # inner safety margin on the envelope, kelvin-equivalent
FEAS_TOL = 1e-8  # scaled constraint violation accepted from the NLP
MAX_PASSES = 4  # temperature refresh passes


@dataclass(frozen=True)
class HorizonGrid:
    horizon: float = 3600.0  # s
    interval: float = 600.0  # s

    def __post_init__(self):
        n = self.horizon / self.interval
        if self.interval <= 0 or n < 1 or abs(n - round(n)) > 1e-9:
            raise ValueError("horizon must be a positive multiple of the interval")

    @property
    def n_stages(self) -> int:
        return int(round(self.horizon / self.interval))


def candidate_set(lo: float = 0.5, hi: float = 300.0, n: int = 24) -> np.ndarray:
    """Log-spaced candidate heads, Pa."""
    if not 0 < lo < hi or n < 1:
        raise ValueError("invalid candidate range")
    return np.geomspace(lo, hi, n) if n > 1 else np.array([lo])


@dataclass
class LocalInputs:
    """Read-only snapshot handed to a local optimizer at one control step."""

    graph: NetworkGraph
    temperatures: np.ndarray  # non-user edge temperatures, degC
    demand: np.ndarray  # (n_users, n_stages) nominal heat, W
    flexibility: np.ndarray  # (n_users,) used flexibility at the step start, J
    lower: np.ndarray  # (n_users,) J
    upper: np.ndarray  # (n_users,) J
    capacity: np.ndarray  # (n_users,) J/K
    boundary: np.ndarray  # (n_stages, 3) [T_supply, T_return_set, T_amb]
    grid: HorizonGrid
    zeta_min: np.ndarray
    zeta_max: np.ndarray

    @property
    def n_users(self) -> int:
        return len(self.graph.user_edges)

    @property
    def n_stages(self) -> int:
        return self.grid.n_stages


# --------------------------------------------------------------------------
# hydraulics with prescribed user flows, batched over stages
# --------------------------------------------------------------------------
class StageHydraulics:
    def __init__(self, g: NetworkGraph):
        self.g = g
        users = g.user_edges
        self.users = users
        active = g.non_user_edges
        self.active = active
        self.sys = sys = loop_system(g, active, head_mode=True)
        nu = len(users)
        E = np.zeros((nu, g.n_nodes))
        E[np.arange(nu), g.tails[users]] = -1.0
        E[np.arange(nu), g.heads[users]] = 1.0
        self.E = E
        self.Mq = E @ sys.tree_solve.T  # (n_u, cols) particular flows per unit user flow
        pm = sys.pressure_map
        self.Gp = pm[g.tails[users]] - pm[g.heads[users]]  # user pressure drop from edge drops
        kinds = g.kinds[active]
        self.bypass_cols = np.flatnonzero(kinds == EdgeKind.BYPASS.value)
        self.z = np.append(g.zeta[active], 0.0)
        self.n_cols = sys.n_cols
        self._x = None

    def evaluate(self, q: np.ndarray, heads: np.ndarray, grad: bool = False):
        sys = self.sys
        S = q.shape[0]
        off = np.zeros((S, self.n_cols))
        off[:, -1] = -heads
        x0 = self._x if self._x is not None and self._x.shape[0] == S else None
        m, x, _ = sys.solve(q @ self.E, self.z, off, x0=x0)
        self._x = x
        d = self.z * m * np.abs(m) + off
        out = {"m": m, "dpu": d @ self.Gp.T, "bypass": m[:, self.bypass_cols].sum(axis=1)}
        if not grad:
            return out
        C = sys.cycles
        D = 2.0 * self.z * np.abs(m)
        D = np.maximum(D, 1e-12 * (D.max(axis=1, keepdims=True) + 1e-300))
        J = np.einsum("ik,sk,jk->sij", C, D, C)
        rq = np.einsum("ik,sk,uk->siu", C, D, self.Mq)
        dx_q = -np.linalg.solve(J, rq)
        dm_q = self.Mq.T[None] + np.einsum("ik,siu->sku", C, dx_q)
        rh = np.broadcast_to(C[:, -1], (S, C.shape[0]))[..., None]
        dx_h = np.linalg.solve(J, rh)[..., 0]
        dm_h = dx_h @ C
        dd_q = D[..., None] * dm_q
        dd_h = D * dm_h
        dd_h[:, -1] -= 1.0
        out["dm_q"] = dm_q  # (S, cols, n_u)
        out["dm_h"] = dm_h  # (S, cols)
        out["dpu_q"] = np.einsum("uk,skv->suv", self.Gp, dd_q)  # (S, n_u, n_u)
        out["dpu_h"] = dd_h @ self.Gp.T  # (S, n_u)
        return out

    def edge_flows(self, q: np.ndarray, m: np.ndarray) -> np.ndarray:
        flows = np.zeros((q.shape[0], self.g.n_edges))
        flows[:, self.users] = q
        flows[:, self.active] = m[:, :-1]
        return flows


# --------------------------------------------------------------------------
# local simulation
# --------------------------------------------------------------------------
def simulate_local(g: NetworkGraph, temps: np.ndarray, flows: np.ndarray, boundary: np.ndarray, dt: float):
    """Stage-by-stage thermal simulation of a subsystem with its root at T_supply.

    Returns stage-average user inlet temperatures ``(S, n_u)`` and the
    final temperatures.
    """
    state = ThermalState(np.asarray(temps, dtype=float).copy())
    users = g.user_edges
    t_in = np.zeros((flows.shape[0], len(users)))
    for s in range(flows.shape[0]):
        f = np.maximum(flows[s], 0.0)
        sys_ = assemble_system(g, f, tol=1e-7)
        state, avg = integrate(state, sys_, boundary[s], dt, return_average=True)
        t_in[s] = sys_.node_temperatures(avg, boundary[s])[g.tails[users]]
    return t_in, state.temperatures


def _heat_per_flow(inp: LocalInputs, t_in: np.ndarray) -> np.ndarray:
    """W per kg/s for every stage and user, ``c_p (T_in - T_setR)``."""
    cp = inp.graph.fluid.specific_heat
    return cp * np.maximum(t_in - inp.boundary[:, 1][:, None], 1e-3)


def nominal_plan(inp: LocalInputs, max_passes: int = 6):
    """Flows that deliver exactly the nominal demand, with the minimum head.

    Returns ``(q (S, n_u), heads (S,), t_in (S, n_u))``.
    """
    g = inp.graph
    S, nu = inp.n_stages, inp.n_users
    users = g.user_edges
    t_in = np.broadcast_to(inp.boundary[:, :1], (S, nu)).copy()
    q = heads = None
    for _ in range(max_passes):
        q = inp.demand.T / _heat_per_flow(inp, t_in)
        heads = np.zeros(S)
        flows = np.zeros((S, g.n_edges))
        for s in range(S):
            fixed = {int(k): float(v) for k, v in zip(users, q[s])}
            zmin = {int(k): float(z) for k, z in zip(users, inp.zeta_min)}
            st = solve_minimum_head(g, g.zeta, fixed, zmin)
            heads[s] = st.head(g)
            flows[s] = st.edge_flows
        new, _ = simulate_local(g, inp.temperatures, flows, inp.boundary, inp.grid.interval)
        done = np.abs(new - t_in).max() < 1e-9
        t_in = new
        if done:
            break
    q = inp.demand.T / _heat_per_flow(inp, t_in)
    return q, heads, t_in


# --------------------------------------------------------------------------
# NLP
# --------------------------------------------------------------------------
@dataclass
class NLPInstance:
    inputs: LocalInputs
    dp: float  # stage-one head, Pa
    t_in: np.ndarray  # frozen (S, n_u) inlet temperatures
    q_ref: np.ndarray  # (n_u,) flow scale
    head_bounds: tuple[float, float]
    margin: np.ndarray  # (n_u,) envelope margin, J

    @property
    def n_users(self) -> int:
        return self.inputs.n_users

    @property
    def n_stages(self) -> int:
        return self.inputs.n_stages

    @property
    def n_decisions(self) -> int:
        """Valve setting per user and stage plus the supply flow of each stage."""
        return self.n_users * self.n_stages + self.n_stages

    @property
    def n_variables(self) -> int:
        """Variables of the reduced problem actually passed to the solver."""
        return self.n_users * self.n_stages + self.n_stages - 1

    @property
    def n_envelope_constraints(self) -> int:
        return self.n_users * self.n_stages

    def pinned(self) -> np.ndarray:
        inp = self.inputs
        return (inp.upper - inp.lower) <= 2.0 * self.margin


def transcribe(
    inp: LocalInputs,
    dp: float,
    t_in: np.ndarray | None = None,
    q_ref: np.ndarray | None = None,
    head_bounds: tuple[float, float] = (0.5, 300.0),
) -> NLPInstance:
    if not dp > 0:
        raise ValueError("candidate head must be positive")
    if t_in is None:
        t_in = np.broadcast_to(inp.boundary[:, :1], (inp.n_stages, inp.n_users)).copy()
    if q_ref is None:
        q_ref = np.maximum(inp.demand.mean(axis=1) / _heat_per_flow(inp, t_in).mean(axis=0), 1e-4)
    margin = np.minimum(ENVELOPE_MARGIN_K * inp.capacity, 0.25 * (inp.upper - inp.lower))
    return NLPInstance(inp, float(dp), np.asarray(t_in, dtype=float), np.asarray(q_ref, dtype=float), head_bounds, margin)


class _Problem:
    """Scaled objective/constraint callbacks for one NLP, sharing evaluations."""

    def __init__(self, nlp: NLPInstance, hyd: StageHydraulics):
        self.nlp = nlp
        self.hyd = hyd
        inp = nlp.inputs
        self.S, self.nu = nlp.n_stages, nlp.n_users
        self.dt = inp.grid.interval
        self.qtot = float(nlp.q_ref.sum())
        self.h_ref = 100.0
        self.key = None
        self.val = None
        # linear envelope map: F[k, u] = f0 + dt * sum_{s<=k} (w[s,u] q[s,u] - Qout[s,u])
        self.w = _heat_per_flow(inp, nlp.t_in)
        self.cum_out = np.cumsum(inp.demand.T, axis=0) * self.dt  # (S, n_u)

    def split(self, v):
        S, nu = self.S, self.nu
        q = v[: S * nu].reshape(S, nu) * self.nlp.q_ref
        h = np.empty(S)
        h[0] = self.nlp.dp
        h[1:] = v[S * nu :] * self.h_ref
        return q, h

    def pack(self, q, h):
        return np.concatenate([(q / self.nlp.q_ref).ravel(), h[1:] / self.h_ref])

    def eval(self, v):
        key = v.tobytes()
        if key != self.key:
            q, h = self.split(v)
            self.val = (q, h, self.hyd.evaluate(q, h, grad=True))
            self.key = key
        return self.val

    # objective: mean bypass flow relative to the flow scale
    def f(self, v):
        _, _, o = self.eval(v)
        return float(o["bypass"].sum() / (self.S * self.qtot))

    def df(self, v):
        _, _, o = self.eval(v)
        bc = self.hyd.bypass_cols
        gq = o["dm_q"][:, bc, :].sum(axis=1) * self.nlp.q_ref  # (S, n_u)
        gh = o["dm_h"][:, bc].sum(axis=1)[1:] * self.h_ref
        return np.concatenate([gq.ravel(), gh]) / (self.S * self.qtot)

    # valve limits zeta_min q^2 <= dP_user <= zeta_max q^2, scaled per user
    def _pscale(self):
        inp = self.nlp.inputs
        return np.sqrt(inp.zeta_min * inp.zeta_max) * self.nlp.q_ref**2

    def valve(self, v):
        q, _, o = self.eval(v)
        inp = self.nlp.inputs
        ps = self._pscale()
        lo = (o["dpu"] - inp.zeta_min * q * q) / ps
        hi = (inp.zeta_max * q * q - o["dpu"]) / ps
        return np.concatenate([lo.ravel(), hi.ravel()])

    def dvalve(self, v):
        q, _, o = self.eval(v)
        inp = self.nlp.inputs
        S, nu = self.S, self.nu
        n = S * nu + S - 1
        ps = self._pscale()
        qr = self.nlp.q_ref
        jlo = np.zeros((S, nu, n))
        jhi = np.zeros((S, nu, n))
        for s in range(S):
            sl = slice(s * nu, (s + 1) * nu)
            dq = o["dpu_q"][s] * qr[None, :]
            jlo[s, :, sl] = dq - np.diag(2.0 * inp.zeta_min * q[s] * qr)
            jhi[s, :, sl] = np.diag(2.0 * inp.zeta_max * q[s] * qr) - dq
            if s > 0:
                dh = o["dpu_h"][s] * self.h_ref
                jlo[s, :, S * nu + s - 1] = dh
                jhi[s, :, S * nu + s - 1] = -dh
        jlo /= ps[None, :, None]
        jhi /= ps[None, :, None]
        return np.concatenate([jlo.reshape(S * nu, n), jhi.reshape(S * nu, n)])

    # no reversed flow in feed, return or bypass pipes
    def forward(self, v):
        _, _, o = self.eval(v)
        return (o["m"][:, :-1] / self.qtot).ravel()

    def dforward(self, v):
        _, _, o = self.eval(v)
        S, nu = self.S, self.nu
        ncol = self.hyd.n_cols - 1
        n = S * nu + S - 1
        jac = np.zeros((S, ncol, n))
        for s in range(S):
            jac[s, :, s * nu : (s + 1) * nu] = o["dm_q"][s, :-1, :] * self.nlp.q_ref[None, :]
            if s > 0:
                jac[s, :, S * nu + s - 1] = o["dm_h"][s, :-1] * self.h_ref
        return jac.reshape(S * ncol, n) / self.qtot

    # envelope, linear in q for frozen temperatures
    def envelope_matrix(self):
        S, nu = self.S, self.nu
        n = S * nu + S - 1
        A = np.zeros((S, nu, n))
        for k in range(S):
            for s in range(k + 1):
                A[k, np.arange(nu), s * nu + np.arange(nu)] = self.dt * self.w[s] * self.nlp.q_ref
        inp = self.nlp.inputs
        cap = inp.capacity
        A /= cap[None, :, None]
        f0 = (inp.flexibility[None, :] - self.cum_out) / cap[None, :]
        return A.reshape(S * nu, n), f0.ravel()

    def flex(self, q):
        inp = self.nlp.inputs
        return inp.flexibility[None, :] + np.cumsum(self.w * q, axis=0) * self.dt - self.cum_out


@dataclass
class LocalSolution:
    dp: float
    feasible: bool
    cost: float = float("nan")  # kg of bypass water over the horizon
    mdot0: float = float("nan")  # stage-one supply flow, kg/s
    flows: np.ndarray | None = None  # (S, n_u) user flows
    zeta: np.ndarray | None = None  # (S, n_u) valve coefficients
    heads: np.ndarray | None = None  # (S,)
    supply: np.ndarray | None = None  # (S,) supply flow per stage
    bypass: np.ndarray | None = None  # (S,)
    heat: np.ndarray | None = None  # (S, n_u) planned heat, W
    flexibility: np.ndarray | None = None  # (S, n_u) end-of-stage F, J
    kkt: float = float("nan")
    violation: float = float("nan")
    passes: int = 0
    status: str = ""
    x: np.ndarray | None = field(default=None, repr=False)


def _kkt_residual(grad, jac_act, tol=1e-12):
    if jac_act.shape[0] == 0:
        return float(np.abs(grad).max())
    lam, _ = nnls(jac_act.T, grad)
    return float(np.abs(grad - jac_act.T @ lam).max() / max(1.0, np.abs(grad).max()))


def _violation(cons, x) -> float:
    """Largest scaled constraint violation at ``x``."""
    try:
        viol = 0.0
        for c in cons:
            g = np.atleast_1d(c["fun"](x))
            bad = np.abs(g) if c["type"] == "eq" else np.maximum(-g, 0.0)
            viol = max(viol, float(bad.max(initial=0.0)))
        return viol
    except (NonConvergence, np.linalg.LinAlgError):
        return np.inf


def _backtrack(cons, good, bad, n_bisect: int = 30):
    """Furthest feasible point from ``good`` towards ``bad``, by bisection."""
    lo, hi = 0.0, 1.0
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        if _violation(cons, good + mid * (bad - good)) <= FEAS_TOL:
            lo = mid
        else:
            hi = mid
    x = good + lo * (bad - good)
    return x, _violation(cons, x)


def solve_stage(
    nlp: NLPInstance,
    warm: np.ndarray | None = None,
    hyd: StageHydraulics | None = None,
    maxiter: int = 150,
) -> tuple[LocalSolution, np.ndarray]:
    """Solve one transcribed NLP with frozen inlet temperatures.

    Returns the solution (not yet re-simulated) and the raw scaled vector.
    """
    hyd = hyd or StageHydraulics(nlp.inputs.graph)
    prob = _Problem(nlp, hyd)
    inp = nlp.inputs
    S, nu = prob.S, prob.nu
    n = S * nu + S - 1
    if warm is None:
        q0 = np.broadcast_to(nlp.q_ref, (S, nu))
        h0 = np.full(S, nlp.dp)
        warm = prob.pack(q0, h0)
    A, f0 = prob.envelope_matrix()
    cap = inp.capacity
    lo = np.tile((inp.lower + nlp.margin) / cap, S)
    hi = np.tile((inp.upper - nlp.margin) / cap, S)
    pinned = np.tile(nlp.pinned(), S)
    centre = np.tile((inp.lower + inp.upper) / (2.0 * cap), S)
    cons = [
        {"type": "ineq", "fun": prob.valve, "jac": prob.dvalve},
        {"type": "ineq", "fun": prob.forward, "jac": prob.dforward},
    ]
    free = ~pinned
    if free.any():
        Af, ff = A[free], f0[free]
        cons.append({"type": "ineq", "fun": lambda v: Af @ v + ff - lo[free], "jac": lambda v: Af})
        cons.append({"type": "ineq", "fun": lambda v: hi[free] - Af @ v - ff, "jac": lambda v: -Af})
    if pinned.any():
        Ap, fp = A[pinned], f0[pinned]
        cons.append({"type": "eq", "fun": lambda v: Ap @ v + fp - centre[pinned], "jac": lambda v: Ap})
    bounds = [(0.0, None)] * (S * nu) + [(nlp.head_bounds[0] / prob.h_ref, nlp.head_bounds[1] / prob.h_ref)] * (S - 1)
    lb = np.array([b[0] for b in bounds])
    ub = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
    x0 = np.clip(warm, lb, ub)

    def run(start):
        return minimize(
            prob.f,
            start,
            jac=prob.df,
            method="SLSQP",
            bounds=bounds,
            constraints=cons,
            options={"maxiter": maxiter, "ftol": 1e-10},
        )

    try:
        res = run(x0)
        x = np.clip(res.x, lb, ub)
        viol = _violation(cons, x)
        if viol > FEAS_TOL:
            # SLSQP often stalls next to a degenerate corner; one restart from
            # where it stopped usually finishes the job
            res2 = run(x)
            x2 = np.clip(res2.x, lb, ub)
            v2 = _violation(cons, x2)
            if v2 < viol:
                res, x, viol = res2, x2, v2
        status = f"{res.status}: {res.message}"
        if viol > FEAS_TOL and _violation(cons, x0) <= FEAS_TOL:
            # fall back to the last feasible point on the segment from the start
            x, viol = _backtrack(cons, x0, x)
            status += " (backtracked to a feasible point)"
        q, h = prob.split(x)
        o = hyd.evaluate(q, h, grad=False)
    except (NonConvergence, np.linalg.LinAlgError) as exc:
        return LocalSolution(nlp.dp, False, status=f"hydraulics failed: {exc}"), warm

    # constraint violation and KKT estimate on the scaled problem
    viol = 0.0
    rows, vals = [], []
    for c in cons:
        g = np.atleast_1d(c["fun"](x))
        jg = np.atleast_2d(c["jac"](x))
        if c["type"] == "eq":
            viol = max(viol, float(np.abs(g).max(initial=0.0)))
            rows.extend([jg, -jg])
            vals.extend([np.zeros(len(g)), np.zeros(len(g))])
        else:
            viol = max(viol, float(np.maximum(-g, 0).max(initial=0.0)))
            act = g <= 1e-7
            rows.append(jg[act])
            vals.append(g[act])
    # active simple bounds
    for i, (bl, bu) in enumerate(bounds):
        e = np.zeros((1, n))
        if bl is not None and x[i] <= bl + 1e-9:
            e[0, i] = 1.0
            rows.append(e)
        elif bu is not None and x[i] >= bu - 1e-9:
            e[0, i] = -1.0
            rows.append(e)
    jac_act = np.vstack(rows) if rows else np.zeros((0, n))
    kkt = _kkt_residual(prob.df(x), jac_act)

    feasible = viol <= FEAS_TOL or (viol <= 1e-6 and res.status in (0, 8, 9))
    feasible = feasible and viol <= 1e-6
    sol = LocalSolution(nlp.dp, bool(feasible), kkt=kkt, violation=viol, status=status)
    q = np.maximum(q, 0.0)
    sol.flows = q
    sol.heads = h
    sol.bypass = o["bypass"]
    sol.supply = q.sum(axis=1) + o["bypass"]
    with np.errstate(divide="ignore", over="ignore"):
        sol.zeta = np.where(q > 0, o["dpu"] / np.maximum(q * q, 1e-300), np.inf)
    sol.heat = prob.w * q
    sol.flexibility = prob.flex(q)
    sol.cost = float(o["bypass"].sum() * prob.dt)
    sol.mdot0 = float(sol.supply[0])
    sol.x = x
    return sol, x


def replay(inp: LocalInputs, sol: LocalSolution):
    """Forward-simulate the subsystem with the solution's valves and supply flows.

    Returns ``(cost_kg, flexibility (S, n_u), heat (S, n_u), bypass (S,))``.
    """
    g = inp.graph
    S = inp.n_stages
    users = g.user_edges
    flows = np.zeros((S, g.n_edges))
    for s in range(S):
        z = np.array(g.zeta, dtype=float)
        z[users] = sol.zeta[s]
        st = solve_flow_given_supply(g, z, sol.supply[s])
        flows[s] = st.edge_flows
    t_in, _ = simulate_local(g, inp.temperatures, flows, inp.boundary, inp.grid.interval)
    q = flows[:, users]
    heat = _heat_per_flow(inp, t_in) * q
    dt = inp.grid.interval
    flex = inp.flexibility[None, :] + np.cumsum(heat - inp.demand.T, axis=0) * dt
    byp = flows[:, g.bypass_edges].sum(axis=1)
    return float(byp.sum() * dt), flex, heat, byp


def envelope_ok(inp: LocalInputs, flex: np.ndarray, rtol: float = 1e-6) -> bool:
    tol = rtol * inp.capacity
    return bool(np.all(flex >= inp.lower - tol) and np.all(flex <= inp.upper + tol))


def solve_candidate(
    inp: LocalInputs,
    dp: float,
    t_in0: np.ndarray,
    q_ref: np.ndarray,
    warm: np.ndarray | None = None,
    hyd: StageHydraulics | None = None,
    head_bounds: tuple[float, float] = (0.5, 300.0),
) -> LocalSolution:
    """Solve for one candidate head, refreshing inlet temperatures until they settle."""
    hyd = hyd or StageHydraulics(inp.graph)
    t_in = t_in0
    x = warm
    sol = None
    for p in range(1, MAX_PASSES + 1):
        nlp = transcribe(inp, dp, t_in, q_ref, head_bounds)
        sol, x = solve_stage(nlp, x, hyd)
        sol.passes = p
        if not sol.feasible:
            return sol
        flows = hyd.edge_flows(sol.flows, hyd.evaluate(sol.flows, sol.heads)["m"])
        new, _ = simulate_local(inp.graph, inp.temperatures, flows, inp.boundary, inp.grid.interval)
        change = float(np.abs(new - t_in).max())
        t_in = new
        heat = _heat_per_flow(inp, t_in) * sol.flows
        flex = inp.flexibility[None, :] + np.cumsum(heat - inp.demand.T, axis=0) * inp.grid.interval
        if envelope_ok(inp, flex) and change < 1e-6:
            sol.heat, sol.flexibility = heat, flex
            return sol
    if not envelope_ok(inp, flex):
        sol.feasible = False
        sol.status = "envelope violated after temperature refresh"
    else:
        sol.heat, sol.flexibility = heat, flex
    return sol


@dataclass
class CostTable:
    candidates: np.ndarray
    solutions: list[LocalSolution]

    @property
    def feasible(self) -> np.ndarray:
        return np.array([s.feasible for s in self.solutions], dtype=bool)

    @property
    def costs(self) -> np.ndarray:
        return np.array([s.cost if s.feasible else np.nan for s in self.solutions])

    @property
    def mdot0(self) -> np.ndarray:
        return np.array([s.mdot0 if s.feasible else np.nan for s in self.solutions])

    def rows(self, subsystem: int) -> list[dict]:
        return [
            {
                "subsystem": subsystem,
                "dp_tot_pa": float(dp),
                "feasible": bool(s.feasible),
                "cost_kg": float(s.cost) if s.feasible else float("nan"),
                "mdot0_kg_s": float(s.mdot0) if s.feasible else float("nan"),
            }
            for dp, s in zip(self.candidates, self.solutions)
        ]


def sweep_candidates(inp: LocalInputs, candidates, head_bounds: tuple[float, float] | None = None) -> CostTable:
    """Solve every candidate head, warm-starting from the previous feasible one."""
    cands = np.asarray(candidates, dtype=float)
    if np.any(np.diff(cands) <= 0):
        raise ValueError("candidates must be strictly increasing")
    if head_bounds is None:
        head_bounds = (float(cands[0]), float(cands[-1]))
    hyd = StageHydraulics(inp.graph)
    try:
        q_nom, h_nom, t_in = nominal_plan(inp)
    except NonConvergence as exc:
        log.warning("nominal plan failed: %s", exc)
        return CostTable(cands, [LocalSolution(float(dp), False, status="no nominal plan") for dp in cands])
    q_ref = np.maximum(q_nom.mean(axis=0), 1e-3 * max(q_nom.mean(axis=0).sum(), 1e-6))
    prob = _Problem(transcribe(inp, cands[0], t_in, q_ref, head_bounds), hyd)
    h_later = np.clip(h_nom, *head_bounds)

    def scaled(q, h, dp):
        # pressures scale with the square of the flows, so scaling the first
        # stage by sqrt(dp / h) keeps its valves exactly where they were
        q = q.copy()
        q[0] *= np.sqrt(dp / h)
        hh = h_later.copy()
        hh[0] = dp
        return prob.pack(q, hh)

    out = []
    prev = None
    for dp in cands:
        nominal_x = scaled(q_nom, h_nom[0], dp)
        if prev is not None:
            hp = prev.heads.copy()
            start = prob.pack(prev.flows * np.r_[np.sqrt(dp / prev.dp), np.ones(len(hp) - 1)][:, None], np.r_[dp, hp[1:]])
        else:
            start = nominal_x
        sol = solve_candidate(inp, float(dp), t_in, q_ref, start, hyd, head_bounds)
        if not sol.feasible and prev is not None:
            retry = solve_candidate(inp, float(dp), t_in, q_ref, nominal_x, hyd, head_bounds)
            if retry.feasible:
                sol = retry
        if sol.feasible:
            prev = sol
        out.append(sol)
    return CostTable(cands, out)
