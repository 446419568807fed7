"""Selection of one candidate head per subsystem on the reduced graph.

A selection fixes the supply flow and head of every user-bearing subsystem.
Flows of the user-free elements then follow from mass conservation, and
their pressure drops from their loss coefficients.  The selection is
admissible when some nodal pressure field matches every element's drop to
within ``eps``; that is a system of difference constraints, checked with
Bellman-Ford.

The search is exact over the discrete grid: either ordered enumeration of
all combinations or a depth-first branch and bound whose pressure test uses
intervals for the subsystems not yet assigned.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import NoFeasibleSelection
from .partition import ReducedGraph

COST_RTOL = 1e-12
EXHAUSTIVE_LIMIT = 100_000


@dataclass
class SubsystemTable:
    """Candidate heads with the local optimum for each (``nan`` when infeasible)."""

    dp: np.ndarray  # Pa
    cost: np.ndarray  # kg
    mdot0: np.ndarray  # kg/s

    def __post_init__(self):
        self.dp = np.asarray(self.dp, dtype=float)
        self.cost = np.asarray(self.cost, dtype=float)
        self.mdot0 = np.asarray(self.mdot0, dtype=float)
        if not (self.dp.shape == self.cost.shape == self.mdot0.shape):
            raise ValueError("table columns must have equal length")

    @property
    def feasible(self) -> np.ndarray:
        return np.isfinite(self.cost) & np.isfinite(self.mdot0)

    @classmethod
    def from_cost_table(cls, table) -> "SubsystemTable":
        return cls(table.candidates, table.costs, table.mdot0)


@dataclass
class SelectionProblem:
    reduced: ReducedGraph
    tables: list[SubsystemTable]  # one per user-bearing reduced edge, in edge order
    epsilon: float  # Pa

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if len(self.tables) != len(self.reduced.user_edges):
            raise ValueError("need exactly one table per user-bearing subsystem")

    @property
    def n_combinations(self) -> int:
        return int(np.prod([len(t.dp) for t in self.tables], dtype=float))


@dataclass
class Selection:
    index: tuple[int, ...]
    total_cost: float
    total_mdot: float
    pressure_residual: float
    mass_residual: float
    pressures: np.ndarray  # a nodal pressure field meeting the tolerance


class _Net:
    """Pre-computed reduced-graph algebra shared by the searches."""

    def __init__(self, p: SelectionProblem):
        r = p.reduced
        self.r = r
        lam = r.incidence
        self.lam = lam
        self.n = len(r.nodes)
        self.ue = np.array(r.user_edges, dtype=int)
        self.pe = np.array(r.passthrough_edges, dtype=int)
        self.zeta = np.array([r.edges[k].zeta for k in self.pe])
        self.tail = np.array([r.nodes.index(e.tail) for e in r.edges])
        self.head = np.array([r.nodes.index(e.head) for e in r.edges])
        self.iroot = r.nodes.index(r.root)
        self.iterm = r.nodes.index(r.terminal)
        src = np.zeros(self.n)
        src[self.iroot], src[self.iterm] = 1.0, -1.0
        self.src = src
        # unknowns: pass-through flows and the plant flow
        A = np.column_stack([lam[:, self.pe], -src]) if len(self.pe) else -src[:, None]
        self.K = -np.linalg.pinv(A) @ lam[:, self.ue]  # maps user flows to unknowns
        self.A = A

    def flows(self, m_user: np.ndarray):
        """Full edge flows and plant flow for given user-subsystem flows."""
        u = self.K @ m_user
        m = np.zeros(len(self.r.edges))
        m[self.ue] = m_user
        m[self.pe] = u[:-1]
        return m, float(u[-1])

    def mass_residual(self, m, total):
        return float(np.abs(self.lam @ m - total * self.src).max())

    def drops(self, m, dp_user):
        d = np.zeros(len(self.r.edges))
        d[self.ue] = dp_user
        d[self.pe] = self.zeta * m[self.pe] * np.abs(m[self.pe])
        return d

    def potentials(self, lo, hi, eps):
        """Bellman-Ford on ``P_t - P_h <= hi + eps`` and ``P_h - P_t <= -lo + eps``.

        Returns a feasible pressure field (terminal at zero) or ``None``.
        """
        n = self.n
        # constraint x_b - x_a <= w is an arc a -> b of weight w
        a = np.concatenate([self.head, self.tail])
        b = np.concatenate([self.tail, self.head])
        w = np.concatenate([hi + eps, -lo + eps])
        dist = np.zeros(n)
        for _ in range(n + 1):
            cand = dist[a] + w
            new = dist.copy()
            np.minimum.at(new, b, cand)
            if np.array_equal(new, dist):
                return dist - dist[self.iterm]
            dist = new
        return None


def _eps_strict(eps):
    return eps * (1.0 - 1e-9)


def feasibility_check(p: SelectionProblem, index) -> tuple[float, float]:
    """Mass residual (kg/s) and min-max pressure residual (Pa) of a selection."""
    net = _Net(p)
    m_user, dp_user = _selected(p, index)
    m, total = net.flows(m_user)
    d = net.drops(m, dp_user)
    return net.mass_residual(m, total), _pressure_residual(net, d)


def _pressure_residual(net: _Net, d: np.ndarray) -> float:
    # min t  s.t.  |d_e - (P_tail - P_head)| <= t,  P_term = 0
    keep = [i for i in range(net.n) if i != net.iterm]
    ne = len(d)
    G = np.zeros((ne, net.n))
    G[np.arange(ne), net.tail] += 1.0
    G[np.arange(ne), net.head] -= 1.0
    G = G[:, keep]
    nv = len(keep)
    c = np.zeros(nv + 1)
    c[-1] = 1.0
    A = np.block([[G, -np.ones((ne, 1))], [-G, -np.ones((ne, 1))]])
    b = np.concatenate([d, -d])
    res = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * nv + [(0, None)], method="highs")
    if not res.success:  # pragma: no cover - the LP is always feasible and bounded
        raise RuntimeError(res.message)
    return float(res.x[-1])


def _selected(p: SelectionProblem, index):
    if len(index) != len(p.tables):
        raise ValueError("index length must equal the number of subsystems")
    m = np.array([t.mdot0[i] for t, i in zip(p.tables, index)])
    dp = np.array([t.dp[i] for t, i in zip(p.tables, index)])
    return m, dp


def _total(costs) -> float:
    s = 0.0
    for c in costs:
        s += c
    return s


def _better(cost, idx, best_cost, best_idx) -> bool:
    tol = COST_RTOL * max(1.0, abs(best_cost)) if np.isfinite(best_cost) else 0.0
    if cost < best_cost - tol:
        return True
    return abs(cost - best_cost) <= tol and tuple(idx) < tuple(best_idx)


def _finish(p: SelectionProblem, net: _Net, index) -> Selection:
    m_user, dp_user = _selected(p, index)
    m, total = net.flows(m_user)
    d = net.drops(m, dp_user)
    pr = net.potentials(d, d, _eps_strict(p.epsilon))
    cost = _total(t.cost[i] for t, i in zip(p.tables, index))
    return Selection(
        tuple(int(i) for i in index),
        float(cost),
        float(total),
        _pressure_residual(net, d),
        net.mass_residual(m, total),
        pr,
    )


def _exhaustive(p: SelectionProblem, net: _Net, batch: int = 20_000):
    feas = [np.flatnonzero(t.feasible) for t in p.tables]
    if any(len(f) == 0 for f in feas):
        return None
    combos = np.array(list(itertools.product(*feas)), dtype=int)
    total = np.zeros(len(combos))
    for j, t in enumerate(p.tables):
        total = total + t.cost[combos[:, j]]
    # ascending cost, lexicographic index for ties
    order = np.lexsort(tuple(combos[:, j] for j in reversed(range(combos.shape[1]))) + (total,))
    combos, total = combos[order], total[order]
    eps = _eps_strict(p.epsilon)
    for s in range(0, len(combos), batch):
        chunk = combos[s : s + batch]
        m_user = np.column_stack([t.mdot0[chunk[:, j]] for j, t in enumerate(p.tables)])
        dp_user = np.column_stack([t.dp[chunk[:, j]] for j, t in enumerate(p.tables)])
        ok = _batch_admissible(net, m_user, dp_user, eps)
        hits = np.flatnonzero(ok)
        if len(hits):
            k = s + hits[0]
            # later entries within the cost tolerance may still win the tie-break
            tol = COST_RTOL * max(1.0, abs(total[k]))
            best = tuple(int(i) for i in combos[k])
            for h in hits[1:]:
                if total[s + h] > total[k] + tol:
                    break
                best = min(best, tuple(int(i) for i in combos[s + h]))
            return best
    return None


def _batch_admissible(net: _Net, m_user: np.ndarray, dp_user: np.ndarray, eps: float) -> np.ndarray:
    """Vectorized Bellman-Ford over a batch of selections."""
    u = m_user @ net.K.T
    nb = len(m_user)
    d = np.zeros((nb, len(net.r.edges)))
    d[:, net.ue] = dp_user
    mp = u[:, :-1]
    d[:, net.pe] = net.zeta * mp * np.abs(mp)
    a = np.concatenate([net.head, net.tail])
    b = np.concatenate([net.tail, net.head])
    w = np.concatenate([d + eps, -d + eps], axis=1)
    dist = np.zeros((nb, net.n))
    for _ in range(net.n + 1):
        before = dist.copy()
        for k in range(len(a)):
            np.minimum(dist[:, b[k]], dist[:, a[k]] + w[:, k], out=dist[:, b[k]])
        if np.array_equal(before, dist):
            break
    # one more sweep: any further improvement means a negative cycle
    ok = np.ones(nb, dtype=bool)
    for k in range(len(a)):
        ok &= dist[:, b[k]] <= dist[:, a[k]] + w[:, k]
    return ok


def _branch_and_bound(p: SelectionProblem, net: _Net):
    nt = len(p.tables)
    feas = [np.flatnonzero(t.feasible) for t in p.tables]
    if any(len(f) == 0 for f in feas):
        return None
    # search order: subsystems by distance of their tail from the plant
    depth = _node_depth(net)
    order = sorted(range(nt), key=lambda j: (depth[net.tail[net.ue[j]]], j))
    choices = [feas[j][np.lexsort((feas[j], p.tables[j].cost[feas[j]]))] for j in order]
    mins = np.array([p.tables[j].cost[feas[j]].min() for j in order])
    rest = np.concatenate([np.cumsum(mins[::-1])[::-1], [0.0]])
    mlo = np.array([p.tables[j].mdot0[feas[j]].min() for j in range(nt)])
    mhi = np.array([p.tables[j].mdot0[feas[j]].max() for j in range(nt)])
    dlo = np.array([p.tables[j].dp[feas[j]].min() for j in range(nt)])
    dhi = np.array([p.tables[j].dp[feas[j]].max() for j in range(nt)])
    Kp, Km = np.maximum(net.K, 0), np.minimum(net.K, 0)
    eps = _eps_strict(p.epsilon)
    ne = len(net.r.edges)

    def relaxed_ok(lo_m, hi_m, lo_d, hi_d):
        ulo = Kp @ lo_m + Km @ hi_m
        uhi = Kp @ hi_m + Km @ lo_m
        lo = np.zeros(ne)
        hi = np.zeros(ne)
        lo[net.ue], hi[net.ue] = lo_d, hi_d
        z = net.zeta
        a, b = ulo[:-1], uhi[:-1]
        lo[net.pe] = z * a * np.abs(a)
        hi[net.pe] = z * b * np.abs(b)
        return net.potentials(lo, hi, eps) is not None

    best_cost, best_idx = np.inf, None
    cur = np.zeros(nt, dtype=int)
    lo_m, hi_m, lo_d, hi_d = mlo.copy(), mhi.copy(), dlo.copy(), dhi.copy()

    def dfs(level, partial):
        nonlocal best_cost, best_idx
        if level == nt:
            idx = tuple(int(i) for i in cur)
            cost = _total(p.tables[j].cost[cur[j]] for j in range(nt))
            if _better(cost, idx, best_cost, best_idx):
                best_cost, best_idx = cost, idx
            return
        j = order[level]
        t = p.tables[j]
        for i in choices[level]:
            c = partial + t.cost[i]
            bound = c + rest[level + 1]
            tol = COST_RTOL * max(1.0, abs(best_cost)) if np.isfinite(best_cost) else 0.0
            if bound > best_cost + tol:
                break  # choices are sorted by cost
            cur[j] = i
            lo_m[j] = hi_m[j] = t.mdot0[i]
            lo_d[j] = hi_d[j] = t.dp[i]
            if relaxed_ok(lo_m, hi_m, lo_d, hi_d):
                dfs(level + 1, c)
        lo_m[j], hi_m[j], lo_d[j], hi_d[j] = mlo[j], mhi[j], dlo[j], dhi[j]

    if relaxed_ok(lo_m, hi_m, lo_d, hi_d):
        dfs(0, 0.0)
    return best_idx


def _node_depth(net: _Net) -> np.ndarray:
    depth = np.full(net.n, np.inf)
    depth[net.iroot] = 0
    for _ in range(net.n):
        for t, h in zip(net.tail, net.head):
            depth[h] = min(depth[h], depth[t] + 1)
            depth[t] = min(depth[t], depth[h] + 1)
    return depth


def select_optimal(p: SelectionProblem, method: str = "auto", exhaustive_limit: int = EXHAUSTIVE_LIMIT) -> Selection:
    """Minimum-cost admissible selection; ties go to the lexicographically smallest index."""
    net = _Net(p)
    if method == "auto":
        n_feas = np.prod([max(int(t.feasible.sum()), 0) for t in p.tables], dtype=float)
        method = "exhaustive" if n_feas <= exhaustive_limit else "bnb"
    if method == "exhaustive":
        idx = _exhaustive(p, net)
    elif method == "bnb":
        idx = _branch_and_bound(p, net)
    else:
        raise ValueError(f"unknown method {method!r}")
    if idx is None:
        raise NoFeasibleSelection(f"no selection balances pressures within {p.epsilon:g} Pa")
    return _finish(p, net, idx)
