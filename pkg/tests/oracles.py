"""Independent reference implementations used as test oracles."""

import itertools

import networkx as nx
import numpy as np

from dhnflex.coordinator import SelectionProblem, SubsystemTable
from dhnflex.partition import InfeasiblePartition, recursive_partition, reduce_graph

from conftest import random_network


def _cycles(reduced):
    """Signed edge vectors of all simple cycles of the undirected reduced multigraph."""
    G = nx.MultiDiGraph()
    for k, e in enumerate(reduced.edges):
        G.add_edge(e.tail, e.head, key=(k, 1))
        G.add_edge(e.head, e.tail, key=(k, -1))
    out = set()
    for cyc in nx.simple_cycles(nx.DiGraph(G)):
        # expand node cycles over parallel edges
        hops = list(zip(cyc, cyc[1:] + cyc[:1]))
        options = [[key for key in G[a][b]] for a, b in hops]
        for combo in itertools.product(*options):
            ks = [k for k, _ in combo]
            if len(set(ks)) != len(ks):
                continue
            v = np.zeros(len(reduced.edges))
            for k, s in combo:
                v[k] = s
            out.add(tuple(v))
    # two-edge cycles between parallel edges
    for a, b in {(e.tail, e.head) for e in reduced.edges}:
        par = [k for k, e in enumerate(reduced.edges) if (e.tail, e.head) == (a, b)]
        for i, j in itertools.combinations(par, 2):
            v = np.zeros(len(reduced.edges))
            v[i], v[j] = 1, -1
            out.add(tuple(v))
    return np.array(sorted(out)) if out else np.zeros((0, len(reduced.edges)))


def _flow_map(reduced):
    """Least-squares map from user-subsystem flows to pass-through flows."""
    lam = reduced.incidence
    ue, pe = reduced.user_edges, reduced.passthrough_edges
    src = np.zeros(len(reduced.nodes))
    src[reduced.nodes.index(reduced.root)] = 1.0
    src[reduced.nodes.index(reduced.terminal)] = -1.0
    A = np.column_stack([lam[:, pe], -src])
    X, *_ = np.linalg.lstsq(A, -lam[:, ue], rcond=None)
    return X


def brute_force(problem: SelectionProblem):
    """(cost, index) of the cheapest admissible selection, or None."""
    r = problem.reduced
    cyc = _cycles(r)
    lengths = np.abs(cyc).sum(axis=1)
    X = _flow_map(r)
    ue, pe = r.user_edges, r.passthrough_edges
    zeta = np.array([r.edges[k].zeta for k in pe])
    feas = [np.flatnonzero(t.feasible) for t in problem.tables]
    if any(len(f) == 0 for f in feas):
        return None
    combos = np.array(list(itertools.product(*feas)))
    mu = np.column_stack([t.mdot0[combos[:, j]] for j, t in enumerate(problem.tables)])
    dpu = np.column_stack([t.dp[combos[:, j]] for j, t in enumerate(problem.tables)])
    cost = sum(t.cost[combos[:, j]] for j, t in enumerate(problem.tables))
    mp = (mu @ X.T)[:, :-1]
    d = np.zeros((len(combos), len(r.edges)))
    d[:, ue] = dpu
    d[:, pe] = zeta * mp * np.abs(mp)
    ok = np.all(np.abs(d @ cyc.T) <= problem.epsilon * lengths, axis=1) if len(cyc) else np.ones(len(combos), bool)
    if not ok.any():
        return None
    best = np.min(cost[ok])
    tied = ok & (np.abs(cost - best) <= 1e-12 * max(1.0, abs(best)))
    idx = min(tuple(int(i) for i in c) for c in combos[tied])
    return float(best), idx


def random_problem(seed: int, max_combos: int = 100_000, eps_frac: float = 0.1) -> SelectionProblem:
    """Selection problem on the reduced graph of a random network."""
    rng = np.random.default_rng(seed)
    while True:
        g = random_network(int(rng.integers(1 << 30)), max_edges=60)
        try:
            p = recursive_partition(g, int(rng.integers(1, 6)))
        except InfeasiblePartition:
            continue
        r = reduce_graph(p)
        nu = len(r.user_edges)
        sizes = rng.integers(2, 11, size=nu)
        if np.prod(sizes.astype(float)) <= max_combos:
            break
    tables = []
    for n in sizes:
        dp = np.sort(rng.uniform(0.5, 60.0, size=n))
        m = rng.uniform(0.2, 2.0) * np.sqrt(dp) * rng.uniform(0.9, 1.1, size=n)
        cost = rng.uniform(10.0, 1000.0, size=n)
        cost[rng.random(n) < 0.15] = np.nan
        tables.append(SubsystemTable(dp, cost, m))
    return SelectionProblem(r, tables, eps_frac * 30.0)
