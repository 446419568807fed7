"""Steady network hydraulics: quadratic pipe losses, mass and pressure balance.

Unknowns are chord flows of a spanning-tree/cotree decomposition.  Mass
conservation is satisfied exactly by construction (tree flows carry the
injections), and Newton iterates on the fundamental-loop pressure residuals.

Two plant modes share the same machinery:

* supply mode injects ``+mdot0`` at the root and ``-mdot0`` at the terminal;
* head mode closes the network with a virtual edge terminal -> root whose
  pressure gain is the prescribed head, so the supply flow is the virtual
  edge's (chord) flow.

Edges may also be *flow-controlled*: their flow is prescribed and their
pressure drop is whatever the network imposes (used for valves that track a
flow set point).  Such edges are removed from the loop equations and act as
injections at their end nodes.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import DisconnectedGraph, NonConvergence
from .network import EdgeKind, NetworkGraph

MAX_ITER = 50


@dataclass
class HydraulicState:
    """Edge flows (kg/s), node pressures (Pa) and supply flow of one solve.

    ``zeta`` holds the loss coefficients consistent with the state: the
    input values for ordinary edges, the implied value ``dP / mdot**2`` for
    flow-controlled edges and ``inf`` for closed ones.
    """

    edge_flows: np.ndarray
    node_pressures: np.ndarray
    supply_flow: float
    zeta: np.ndarray
    iterations: int = 0

    def pressure_drops(self, g: NetworkGraph) -> np.ndarray:
        return self.node_pressures[g.tails] - self.node_pressures[g.heads]

    def head(self, g: NetworkGraph) -> float:
        return float(self.node_pressures[g.node_index[g.root]])


class LoopSystem:
    """Cycle basis of the active part of a network, precomputed once.

    Columns ``0..n_active-1`` refer to ``active`` edges in order; in head
    mode one extra trailing column is the virtual plant edge.
    """

    def __init__(self, g: NetworkGraph, active: np.ndarray, head_mode: bool):
        self.g = g
        self.active = np.asarray(active, dtype=int)
        self.head_mode = head_mode
        n = g.n_nodes
        tails = list(g.tails[self.active])
        heads = list(g.heads[self.active])
        if head_mode:
            tails.append(g.node_index[g.terminal])
            heads.append(g.node_index[g.root])
        self.tails = np.array(tails, dtype=int)
        self.heads = np.array(heads, dtype=int)
        m = len(tails)
        self.n_cols = m

        # BFS spanning tree from the terminal; edges scanned in column order
        adj = [[] for _ in range(n)]
        for k in range(m):
            adj[self.tails[k]].append(k)
            adj[self.heads[k]].append(k)
        start = g.node_index[g.terminal]
        parent_edge = np.full(n, -1)
        seen = np.zeros(n, dtype=bool)
        seen[start] = True
        order = [start]
        for v in order:
            for k in adj[v]:
                w = self.heads[k] if self.tails[k] == v else self.tails[k]
                if not seen[w]:
                    seen[w] = True
                    parent_edge[w] = k
                    order.append(w)
        if not seen.all():
            raise DisconnectedGraph("active hydraulic network does not span all nodes")
        tree = np.zeros(m, dtype=bool)
        tree[parent_edge[parent_edge >= 0]] = True
        self.tree = tree
        self.chords = np.flatnonzero(~tree)
        depth = np.zeros(n, dtype=int)
        for v in order[1:]:
            k = parent_edge[v]
            u = self.tails[k] if self.heads[k] == v else self.heads[k]
            depth[v] = depth[u] + 1

        # fundamental cycles, oriented along each chord
        cyc = np.zeros((len(self.chords), m))
        for r, c in enumerate(self.chords):
            cyc[r, c] = 1.0
            # walk tree path from head(c) back to tail(c)
            a, b = self.heads[c], self.tails[c]
            while a != b:
                if depth[a] >= depth[b]:
                    k = parent_edge[a]
                    # traversing from a toward its parent
                    cyc[r, k] += 1.0 if self.tails[k] == a else -1.0
                    a = self.tails[k] if self.heads[k] == a else self.heads[k]
                else:
                    k = parent_edge[b]
                    # path continues from parent toward b
                    cyc[r, k] += 1.0 if self.heads[k] == b else -1.0
                    b = self.tails[k] if self.heads[k] == b else self.heads[k]
        self.cycles = cyc

        lam = np.zeros((n, m))
        lam[self.tails, np.arange(m)] = 1.0
        lam[self.heads, np.arange(m)] = -1.0
        self.incidence = lam
        tcols = np.flatnonzero(tree)
        # tree flows from injections: exact for balanced injections
        tmat = np.zeros((m, n))
        tmat[tcols] = np.linalg.pinv(lam[:, tcols])
        self.tree_solve = tmat
        # node pressures from tree-edge drops with the terminal as reference
        keep = np.array([i for i in range(n) if i != start])
        pmap = np.zeros((n, m))
        pmap[np.ix_(keep, tcols)] = np.linalg.inv(lam[np.ix_(keep, tcols)].T)
        self.pressure_map = pmap
        cct = cyc @ cyc.T
        self._init = -np.linalg.solve(cct, cyc) if len(self.chords) else np.zeros((0, m))

    def particular(self, injections: np.ndarray) -> np.ndarray:
        return injections @ self.tree_solve.T

    def solve(self, injections, zeta, offsets, x0=None, rtol=1e-12, max_iter=MAX_ITER):
        """Batched Newton solve.

        Parameters
        ----------
        injections : (S, n_nodes) net outflow required at each node
        zeta : (n_cols,) or (S, n_cols)
        offsets : (S, n_cols) constant pressure drop added to each column
        x0 : (S, n_chords) optional warm start for chord flows

        Returns flows (S, n_cols), chord flows (S, n_chords), iterations.
        """
        inj = np.atleast_2d(np.asarray(injections, dtype=float))
        nb = inj.shape[0]
        zeta = np.broadcast_to(np.asarray(zeta, dtype=float), (nb, self.n_cols))
        off = np.broadcast_to(np.asarray(offsets, dtype=float), (nb, self.n_cols))
        mp = self.particular(inj)
        cyc = self.cycles
        nc = len(self.chords)
        if nc == 0:
            return mp, np.zeros((nb, 0)), 0
        scale = np.abs(off).sum(axis=1) + 1e-300
        if x0 is not None:
            x = np.array(x0, dtype=float)
        elif np.any(off):
            x = self._laminar_start(mp, zeta, off)
        else:
            x = mp @ self._init.T

        def resid(xx):
            m = mp + xx @ cyc
            r = (zeta * m * np.abs(m) + off) @ cyc.T
            return m, r

        m, r = resid(x)
        rn = np.abs(r).max(axis=1)
        it = 0
        for it in range(1, max_iter + 1):
            loopscale = np.maximum(np.abs(zeta * m * m) @ np.abs(cyc.T), scale[:, None]).max(axis=1)
            done = rn <= rtol * loopscale
            if done.all():
                break
            d = 2.0 * zeta * np.abs(m)
            d = np.maximum(d, 1e-9 * (d.max(axis=1, keepdims=True) + 1e-12))
            jac = np.einsum("ik,bk,jk->bij", cyc, d, cyc)
            step = np.linalg.solve(jac, r[..., None])[..., 0]
            step[done] = 0.0
            lam = np.ones(nb)
            for _ in range(30):
                xt = x - lam[:, None] * step
                mt, rt = resid(xt)
                rnt = np.abs(rt).max(axis=1)
                bad = (rnt > rn) & ~done & (lam > 1e-6)
                if not bad.any():
                    break
                lam[bad] *= 0.5
            x, m, r, rn = xt, mt, rt, rnt
        else:
            loopscale = np.maximum(np.abs(zeta * m * m) @ np.abs(cyc.T), scale[:, None]).max(axis=1)
            if not (rn <= 1e-8 * loopscale).all():
                raise NonConvergence(f"Newton did not converge in {max_iter} iterations")
        return m, x, it

    def _laminar_start(self, mp, zeta, off):
        # linear-loss solution, circulation rescaled to the quadratic law
        cyc = self.cycles
        d0 = np.maximum(zeta, 1e-12 * zeta.max(axis=1, keepdims=True))
        a = np.einsum("ik,bk,jk->bij", cyc, d0, cyc)
        rhs = -((d0 * mp + off) @ cyc.T)
        x = np.linalg.solve(a, rhs[..., None])[..., 0]
        circ = x @ cyc
        quad = (zeta * circ * circ).sum(axis=1)
        alpha = np.sqrt(np.abs(off).sum(axis=1) / np.maximum(quad, 1e-300))
        return x * np.minimum(alpha, 1e12)[:, None]

    def pressures(self, flows, zeta, offsets):
        drops = zeta * flows * np.abs(flows) + offsets
        return drops @ self.pressure_map.T


_CACHE: "weakref.WeakKeyDictionary[NetworkGraph, dict]" = weakref.WeakKeyDictionary()


def loop_system(g: NetworkGraph, active: np.ndarray, head_mode: bool) -> LoopSystem:
    per_graph = _CACHE.setdefault(g, {})
    key = (np.asarray(active, dtype=int).tobytes(), head_mode)
    sys = per_graph.get(key)
    if sys is None:
        sys = per_graph[key] = LoopSystem(g, active, head_mode)
    return sys


def _split_edges(g: NetworkGraph, fixed: Mapping[int, float] | None):
    fixed = {int(k): float(v) for k, v in (fixed or {}).items()}
    active = np.array([k for k in range(g.n_edges) if k not in fixed], dtype=int)
    return active, fixed


def _fixed_injections(g: NetworkGraph, fixed: dict[int, float]) -> np.ndarray:
    s = np.zeros(g.n_nodes)
    for k, q in fixed.items():
        s[g.tails[k]] -= q
        s[g.heads[k]] += q
    return s


def _finish(g, sys, flows_cols, pressures, zeta, fixed, supply, it, allow_reversal):
    flows = np.zeros(g.n_edges)
    flows[sys.active] = flows_cols[: len(sys.active)]
    zeff = np.array(zeta, dtype=float)
    drops = pressures[g.tails] - pressures[g.heads]
    for k, q in fixed.items():
        flows[k] = q
        zeff[k] = drops[k] / (q * q) if q > 0 else np.inf
    if not allow_reversal:
        scale = max(abs(supply), np.abs(flows).max(initial=0.0), 1e-300)
        if (flows < -1e-9 * scale).any():
            k = int(np.argmin(flows))
            raise NonConvergence(f"flow reversal demanded on edge {g.edges[k].id!r}")
        flows = np.maximum(flows, 0.0)
    return HydraulicState(flows, pressures, float(supply), zeff, it)


def solve_flow_given_supply(
    g: NetworkGraph,
    zeta: np.ndarray,
    supply: float,
    fixed: Mapping[int, float] | None = None,
    allow_reversal: bool = False,
) -> HydraulicState:
    """Flows and pressures for a prescribed plant supply flow ``supply``."""
    if not supply > 0:
        raise ValueError("supply flow must be positive")
    zeta = np.asarray(zeta, dtype=float)
    active, fixed = _split_edges(g, fixed)
    sys = loop_system(g, active, head_mode=False)
    s = _fixed_injections(g, fixed)
    s[g.node_index[g.root]] += supply
    s[g.node_index[g.terminal]] -= supply
    z = zeta[active]
    m, _, it = sys.solve(s[None], z, np.zeros((1, len(active))))
    p = sys.pressures(m, z, 0.0)[0]
    return _finish(g, sys, m[0], p, zeta, fixed, supply, it, allow_reversal)


def solve_flow_given_head_drop(
    g: NetworkGraph,
    zeta: np.ndarray,
    head: float,
    fixed: Mapping[int, float] | None = None,
    allow_reversal: bool = False,
) -> HydraulicState:
    """Flows and pressures with the root held at ``head`` Pa above the terminal."""
    if not head > 0:
        raise ValueError("head must be positive")
    zeta = np.asarray(zeta, dtype=float)
    active, fixed = _split_edges(g, fixed)
    sys = loop_system(g, active, head_mode=True)
    s = _fixed_injections(g, fixed)
    z = np.append(zeta[active], 0.0)
    off = np.zeros((1, sys.n_cols))
    off[0, -1] = -head
    m, _, it = sys.solve(s[None], z, off)
    p = sys.pressures(m, z, off)[0]
    supply = m[0, -1]
    return _finish(g, sys, m[0, :-1], p, zeta, fixed, supply, it, allow_reversal)


def residuals(g: NetworkGraph, zeta: np.ndarray, state: HydraulicState) -> tuple[float, float]:
    """Max-norm residuals of mass conservation (kg/s) and pressure balance (Pa)."""
    mv = np.zeros(g.n_nodes)
    mv[g.node_index[g.root]] = state.supply_flow
    mv[g.node_index[g.terminal]] = -state.supply_flow
    mass = np.abs(g.incidence @ state.edge_flows - mv).max()
    zeta = np.asarray(zeta, dtype=float)
    open_ = np.isfinite(zeta)
    drops = g.incidence.T @ state.node_pressures
    m = state.edge_flows
    pres = np.abs(zeta[open_] * m[open_] * np.abs(m[open_]) - drops[open_])
    return float(mass), float(pres.max(initial=0.0))


def user_valve_bounds(g: NetworkGraph, ratio: float = 100.0) -> tuple[np.ndarray, np.ndarray]:
    """Valve loss-coefficient limits per user edge: fully open / nearly closed."""
    z = g.zeta[g.user_edges]
    return z / ratio, z * ratio


def bypass_flow(g: NetworkGraph, state: HydraulicState) -> float:
    return float(state.edge_flows[g.edges_of_kind(EdgeKind.BYPASS)].sum())


def solve_minimum_head(
    g: NetworkGraph,
    zeta: np.ndarray,
    fixed: Mapping[int, float],
    zeta_min: Mapping[int, float],
    head_bounds: tuple[float, float] = (1e-6, 1e7),
    xtol: float = 1e-10,
) -> HydraulicState:
    """Smallest plant head that lets every flow-controlled edge pass its flow.

    Each fixed edge ``k`` with a positive flow ``q`` needs a pressure drop of
    at least ``zeta_min[k] * q**2`` (its valve cannot open further), and no
    other edge may run backwards.  Both margins grow with the head, so the
    threshold is found by bracketing and Brent's method.
    """
    from scipy.optimize import brentq

    zeta = np.asarray(zeta, dtype=float)
    active, fixed = _split_edges(g, fixed)
    sys = loop_system(g, active, head_mode=True)
    s = _fixed_injections(g, fixed)
    z = np.append(zeta[active], 0.0)
    need = [(k, zeta_min[k] * q * q) for k, q in fixed.items() if q > 0]
    total = sum(q for q in fixed.values()) or 1.0
    ta, ha = g.tails, g.heads
    guard = {"x": None}

    def solve(h):
        off = np.zeros((1, sys.n_cols))
        off[0, -1] = -h
        m, x, it = sys.solve(s[None], z, off, x0=guard["x"])
        guard["x"] = x
        return m, off, it

    def margin(h):
        m, off, _ = solve(h)
        p = sys.pressures(m, z, off)[0]
        vals = [m[0, :-1].min(initial=np.inf) / total]
        for k, dp in need:
            vals.append((p[ta[k]] - p[ha[k]]) / dp - 1.0)
        return float(min(vals))

    lo, hi = head_bounds
    if margin(lo) >= 0:
        head = lo
    else:
        h = max(lo, 1.0)
        while margin(h) < 0:
            guard["x"] = None
            h *= 4.0
            if h > hi:
                raise NonConvergence("no plant head up to the bound satisfies the flow set points")
        head = brentq(margin, lo if h == 1.0 else h / 4.0, h, xtol=xtol * h, rtol=1e-12)
        head *= 1.0 + 1e-9
    m, off, it = solve(head)
    p = sys.pressures(m, z, off)[0]
    return _finish(g, sys, m[0, :-1], p, zeta, fixed, m[0, -1], it, allow_reversal=True)
