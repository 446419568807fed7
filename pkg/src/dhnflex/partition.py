"""Recursive normalized-cut partitioning and the reduced coordination graph.

Feed and return nodes that share a location label are contracted before the
spectral split, so a route's feed and return pipes always land in the same
part.  After the recursive Fiedler bipartition, every route segment is owned
by the part of its downstream location (this re-attaches the cut pipes to the
part they feed).  Segments of a part that also carry flow for another part
are user-free trunk pieces; they are peeled off as pass-through elements, and
what remains of each part hangs between the feed and return node of a single
location, so it is a closed two-terminal subsystem.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.sparse.linalg as spla

from .errors import DHNError, EigensolverFailure, InfeasiblePartition, IsolatedNode
from .network import EdgeKind, NetworkGraph


# --------------------------------------------------------------------------
# spectral primitives
# --------------------------------------------------------------------------
def undirected_weighted_adjacency(g: NetworkGraph) -> np.ndarray:
    """Symmetric node-node weights ``1 / (rho V)`` of the connecting pipes."""
    w = 1.0 / (g.fluid.density * g.volumes)
    W = np.zeros((g.n_nodes, g.n_nodes))
    np.add.at(W, (g.tails, g.heads), w)
    np.add.at(W, (g.heads, g.tails), w)
    return W


def normalized_laplacian(W: np.ndarray) -> np.ndarray:
    d = W.sum(axis=1)
    if np.any(d <= 0):
        raise IsolatedNode(f"nodes {np.flatnonzero(d <= 0).tolist()} have zero degree")
    s = 1.0 / np.sqrt(d)
    L = np.eye(len(d)) - s[:, None] * W * s[None, :]
    return 0.5 * (L + L.T)


def fiedler_vector(L: np.ndarray) -> tuple[float, np.ndarray]:
    """Second-smallest eigenpair of a normalized Laplacian."""
    n = L.shape[0]
    if n < 2:
        raise EigensolverFailure("need at least two nodes")
    try:
        if n < 64:
            vals, vecs = np.linalg.eigh(L)
        else:
            vals, vecs = spla.eigsh(L, k=2, sigma=-1e-3, which="LM")
            order = np.argsort(vals)
            vals, vecs = vals[order], vecs[:, order]
    except (np.linalg.LinAlgError, spla.ArpackError) as exc:
        raise EigensolverFailure(str(exc)) from exc
    v = vecs[:, 1]
    if not np.all(np.isfinite(v)):
        raise EigensolverFailure("non-finite Fiedler vector")
    return float(vals[1]), v


def fiedler_bipartition(L: np.ndarray, zero_tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Split nodes by the sign of the Fiedler vector.

    The sign is fixed so that node 0 lies on side A; (near-)zero entries join
    side A as well.
    """
    _, v = fiedler_vector(L)
    nz = np.flatnonzero(np.abs(v) > zero_tol)
    if len(nz) == 0:
        raise EigensolverFailure("Fiedler vector vanishes")
    if v[nz[0]] < 0:
        v = -v
    side_a = np.flatnonzero(v >= -zero_tol)
    side_b = np.flatnonzero(v < -zero_tol)
    if len(side_b) == 0:
        raise EigensolverFailure("Fiedler split left one side empty")
    return side_a, side_b


def _fiedler_directions(W: np.ndarray, tol: float = 1e-8) -> list[np.ndarray]:
    """Fiedler vector, or a spread of directions when its eigenvalue repeats.

    With a repeated second eigenvalue any vector of the eigenspace is an
    equally valid relaxed solution, so a single eigensolver output is an
    arbitrary pick.  Small graphs then also try the basis vectors, the
    projection of every node indicator and their pairwise differences.
    """
    n = W.shape[0]
    L = normalized_laplacian(W)
    if n >= 64:
        return [fiedler_vector(L)[1]]
    try:
        vals, vecs = np.linalg.eigh(L)
    except np.linalg.LinAlgError as exc:
        raise EigensolverFailure(str(exc)) from exc
    same = np.flatnonzero(np.abs(vals - vals[1]) <= tol * max(1.0, abs(vals[1])))
    V = vecs[:, same[same > 0]]
    if not np.all(np.isfinite(V)):
        raise EigensolverFailure("non-finite Fiedler vector")
    dirs = [V[:, j] for j in range(V.shape[1])]
    if V.shape[1] > 1:
        P = V @ V.T
        dirs += [P[:, i] for i in range(n)]
        dirs += [P[:, i] - P[:, j] for i, j in combinations(range(n), 2)]
    return dirs


def fiedler_sweep_bipartition(W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Best normalized cut among the threshold splits of the Fiedler embedding.

    Nodes are ordered by ``D^-1/2 v`` (the relaxed indicator) and every
    prefix/suffix split is scored with :func:`ncut_value`; the lowest score
    wins, ties going to the first direction and then the shortest prefix.
    Side A is the part holding node 0.
    """
    W = np.asarray(W, dtype=float)
    scale = np.sqrt(W.sum(axis=1))
    best, split = np.inf, None
    for v in _fiedler_directions(W):
        y = v / scale
        if y[0] > 0:
            y = -y
        order = np.argsort(y, kind="stable")
        for k in range(1, len(y)):
            val = ncut_value(W, order[:k], order[k:])
            if val < best * (1.0 - 1e-12):
                best, split = val, (order[:k], order[k:])
    a, b = np.sort(split[0]), np.sort(split[1])
    if 0 not in a:
        a, b = b, a
    return a, b


def ncut_value(W: np.ndarray, side_a, side_b) -> float:
    a = np.asarray(side_a, dtype=int)
    b = np.asarray(side_b, dtype=int)
    cut = W[np.ix_(a, b)].sum()
    if cut == 0:
        return 0.0
    d = W.sum(axis=1)
    return float(cut * (1.0 / d[a].sum() + 1.0 / d[b].sum()))


def exhaustive_min_ncut(W: np.ndarray) -> tuple[float, np.ndarray]:
    """Brute-force minimum normalized cut over all bipartitions (small graphs)."""
    n = W.shape[0]
    best, best_a = np.inf, None
    rest = list(range(1, n))
    for r in range(0, n - 1):
        for comb in combinations(rest, r):
            a = np.array((0,) + comb)
            b = np.setdiff1d(np.arange(n), a)
            val = ncut_value(W, a, b)
            if val < best:
                best, best_a = val, a
    return best, best_a


# --------------------------------------------------------------------------
# partition data
# --------------------------------------------------------------------------
@dataclass
class Subsystem:
    id: int
    edges: np.ndarray  # edge indices into the full graph
    root: str
    terminal: str
    graph: NetworkGraph
    location: str  # location at which the element hangs / starts

    @property
    def has_users(self) -> bool:
        return len(self.graph.user_edges) > 0

    @property
    def n_users(self) -> int:
        return len(self.graph.user_edges)


@dataclass
class Partition:
    graph: NetworkGraph
    subsystems: list[Subsystem]
    assignment: np.ndarray  # edge -> subsystem id
    cut_edges: list[int] = field(default_factory=list)
    groups: list[list[str]] = field(default_factory=list)  # location groups from the spectral stage

    @property
    def user_subsystems(self) -> list[Subsystem]:
        return [s for s in self.subsystems if s.has_users]

    @property
    def passthrough(self) -> list[Subsystem]:
        return [s for s in self.subsystems if not s.has_users]

    def to_dict(self) -> dict:
        g = self.graph
        return {
            "format": 1,
            "assignment": {g.edges[k].id: int(self.assignment[k]) for k in range(g.n_edges)},
            "cut_edges": [g.edges[k].id for k in self.cut_edges],
            "subsystems": [
                {
                    "id": s.id,
                    "root": s.root,
                    "terminal": s.terminal,
                    "users": s.n_users,
                    "edges": [g.edges[k].id for k in s.edges],
                }
                for s in self.subsystems
            ],
        }


@dataclass
class ReducedEdge:
    subsystem: int
    tail: str
    head: str
    has_users: bool
    zeta: float  # equivalent loss coefficient, used for pass-through elements


@dataclass
class ReducedGraph:
    nodes: list[str]
    edges: list[ReducedEdge]
    root: str
    terminal: str

    @property
    def incidence(self) -> np.ndarray:
        idx = {n: i for i, n in enumerate(self.nodes)}
        lam = np.zeros((len(self.nodes), len(self.edges)))
        for k, e in enumerate(self.edges):
            lam[idx[e.tail], k] = 1.0
            lam[idx[e.head], k] = -1.0
        return lam

    @property
    def user_edges(self) -> list[int]:
        return [k for k, e in enumerate(self.edges) if e.has_users]

    @property
    def passthrough_edges(self) -> list[int]:
        return [k for k, e in enumerate(self.edges) if not e.has_users]

    def to_dict(self) -> dict:
        return {
            "format": 1,
            "root": self.root,
            "terminal": self.terminal,
            "nodes": list(self.nodes),
            "edges": [
                {
                    "subsystem": e.subsystem,
                    "tail": e.tail,
                    "head": e.head,
                    "has_users": e.has_users,
                    "zeta": e.zeta,
                }
                for e in self.edges
            ],
        }


# --------------------------------------------------------------------------
# location graph
# --------------------------------------------------------------------------
class _Locations:
    """Contracted feed/return location graph with a BFS tree from the plant."""

    def __init__(self, g: NetworkGraph):
        self.g = g
        loc = g.locations
        self.plant = loc[g.root]
        if loc[g.terminal] != self.plant:
            raise InfeasiblePartition("root and terminal must share a location")
        self.labels = sorted(set(loc.values()), key=lambda s: (s != self.plant, s))
        self.index = {s: i for i, s in enumerate(self.labels)}
        n = len(self.labels)
        w = 1.0 / (g.fluid.density * g.volumes)
        self.W = np.zeros((n, n))
        self.rungs: dict[str, list[int]] = {s: [] for s in self.labels}
        self.segments: dict[frozenset, list[int]] = {}
        for k, e in enumerate(g.edges):
            a, b = loc[e.tail], loc[e.head]
            if a == b:
                self.rungs[a].append(k)
            else:
                i, j = self.index[a], self.index[b]
                self.W[i, j] += w[k]
                self.W[j, i] += w[k]
                self.segments.setdefault(frozenset((a, b)), []).append(k)
        # BFS tree over locations
        self.parent: dict[str, str | None] = {self.plant: None}
        self.depth = {self.plant: 0}
        queue = deque([self.plant])
        nbrs = {s: [] for s in self.labels}
        for pair in self.segments:
            a, b = sorted(pair, key=lambda s: self.index[s])
            nbrs[a].append(b)
            nbrs[b].append(a)
        while queue:
            a = queue.popleft()
            for b in sorted(nbrs[a], key=lambda s: self.index[s]):
                if b not in self.parent:
                    self.parent[b] = a
                    self.depth[b] = self.depth[a] + 1
                    queue.append(b)
        if len(self.parent) != n:
            raise InfeasiblePartition("location graph is disconnected")
        for pair in self.segments:
            a, b = tuple(pair)
            if self.parent.get(a) != b and self.parent.get(b) != a:
                raise InfeasiblePartition("looped route topologies are not supported")
        self.users = {
            s: sum(1 for k in self.rungs[s] if g.edges[k].kind is EdgeKind.USER) for s in self.labels
        }
        # feed/return node of every location
        self.feed_node: dict[str, str] = {self.plant: g.root}
        self.return_node: dict[str, str] = {self.plant: g.terminal}
        for e in g.edges:
            if e.kind is EdgeKind.FEED:
                self.feed_node.setdefault(loc[e.head], e.head)
            elif e.kind is EdgeKind.RETURN:
                self.return_node.setdefault(loc[e.tail], e.tail)
            elif loc[e.tail] == loc[e.head]:
                self.feed_node.setdefault(loc[e.tail], e.tail)
                self.return_node.setdefault(loc[e.head], e.head)

    def child_of_segment(self, pair: frozenset) -> str:
        a, b = tuple(pair)
        return b if self.parent.get(b) == a else a

    def ancestors(self, s: str):
        while s is not None:
            yield s
            s = self.parent[s]


def _split_group(locs: _Locations, group: list[str]) -> tuple[list[str], list[str]]:
    idx = [locs.index[s] for s in group]
    W = locs.W[np.ix_(idx, idx)]
    a, b = fiedler_sweep_bipartition(W)
    return [group[i] for i in a], [group[i] for i in b]


def _is_connected(W: np.ndarray) -> bool:
    n = W.shape[0]
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(W[i] > 0):
            if j not in seen:
                seen.add(int(j))
                stack.append(int(j))
    return len(seen) == n


def recursive_partition(g: NetworkGraph, n_groups: int) -> Partition:
    """Split ``g`` into ``n_groups`` parts by repeated Fiedler bipartition.

    The part with the most users is split next (ties: earliest part).
    """
    if n_groups < 1:
        raise ValueError("n_groups must be >= 1")
    locs = _Locations(g)
    groups = [list(locs.labels)]
    while len(groups) < n_groups:
        order = sorted(
            range(len(groups)),
            key=lambda i: (-sum(locs.users[s] for s in groups[i]), i),
        )
        for i in order:
            grp = groups[i]
            if len(grp) < 2 or sum(locs.users[s] for s in grp) < 2:
                continue
            idx = [locs.index[s] for s in grp]
            if not _is_connected(locs.W[np.ix_(idx, idx)]):
                continue
            a, b = _split_group(locs, grp)
            groups[i : i + 1] = [a, b]
            break
        else:
            raise InfeasiblePartition(f"cannot split network into {n_groups} parts")
    return _build_partition(g, locs, groups)


def _build_partition(g: NetworkGraph, locs: _Locations, groups: list[list[str]]) -> Partition:
    group_of = {s: i for i, grp in enumerate(groups) for s in grp}
    seg_group = {pair: group_of[locs.child_of_segment(pair)] for pair in locs.segments}
    cut_edges = []
    for pair, ks in locs.segments.items():
        a, b = tuple(pair)
        if group_of[a] != group_of[b]:
            cut_edges.extend(ks)

    def head_of(grp):
        top = min(grp, key=lambda s: (locs.depth[s], locs.index[s]))
        return locs.parent[top] if locs.parent[top] is not None else top

    heads = [head_of(grp) for grp in groups]
    pieces: list[tuple[str, list[int]]] = []
    trunk_segments: list[frozenset] = []
    for gi, grp in enumerate(groups):
        members = set(grp)
        # locations inside this group where another group hangs
        attach = {heads[h] for h in range(len(groups)) if h != gi and heads[h] in members}
        trunk = set()
        for a in attach:
            for s in locs.ancestors(a):
                if s == heads[gi]:
                    break
                trunk.add(frozenset((s, locs.parent[s])))
        trunk_locs = {heads[gi]} | {locs.child_of_segment(p) for p in trunk}

        def key(s):
            for anc in locs.ancestors(s):
                if anc in trunk_locs:
                    return anc
            raise InfeasiblePartition("segment outside its group's tree")

        by_key: dict[str, list[int]] = {}
        for pair, gid in seg_group.items():
            if gid != gi:
                continue
            if pair in trunk:
                trunk_segments.append(pair)
                continue
            parent = locs.parent[locs.child_of_segment(pair)]
            by_key.setdefault(key(parent), []).extend(locs.segments[pair])
        for s in grp:
            if locs.rungs[s]:
                by_key.setdefault(key(s), []).extend(locs.rungs[s])
        for k_loc in sorted(by_key, key=lambda s: locs.index[s]):
            pieces.append((k_loc, sorted(by_key[k_loc])))

    subsystems: list[Subsystem] = []
    assignment = -np.ones(g.n_edges, dtype=int)
    for loc, edges in pieces:
        root, term = locs.feed_node[loc], locs.return_node[loc]
        try:
            sub = g.subgraph(edges, root, term)
        except DHNError as exc:
            raise InfeasiblePartition(f"subsystem at {loc!r} is not a valid network: {exc}") from exc
        subsystems.append(Subsystem(len(subsystems), np.array(edges), root, term, sub, loc))
    for pair in sorted(trunk_segments, key=lambda p: min(locs.segments[p])):
        for k in locs.segments[pair]:
            e = g.edges[k]
            sub = g.subgraph([k], e.tail, e.head)
            subsystems.append(Subsystem(len(subsystems), np.array([k]), e.tail, e.head, sub, locs.child_of_segment(pair)))
    for s in subsystems:
        assignment[s.edges] = s.id
    if np.any(assignment < 0):
        raise InfeasiblePartition("some edges were not assigned")
    return Partition(g, subsystems, assignment, sorted(cut_edges), groups)


def equivalent_zeta(zetas) -> float:
    """Loss coefficient of parallel quadratic elements."""
    return float(1.0 / np.sum(1.0 / np.sqrt(np.asarray(zetas, dtype=float))) ** 2)


def _series_zeta(sub: Subsystem) -> float:
    """Equivalent coefficient of a user-free element (its head at unit flow)."""
    from .hydraulics import solve_flow_given_supply

    st = solve_flow_given_supply(sub.graph, sub.graph.zeta, 1.0)
    return st.head(sub.graph)


def reduce_graph(p: Partition) -> ReducedGraph:
    """One reduced edge per subsystem between its root and terminal."""
    g = p.graph
    nodes: list[str] = []
    edges: list[ReducedEdge] = []
    for s in p.subsystems:
        for n in (s.root, s.terminal):
            if n not in nodes:
                nodes.append(n)
        zeta = 0.0 if s.has_users else _series_zeta(s)
        edges.append(ReducedEdge(s.id, s.root, s.terminal, s.has_users, zeta))
    order = sorted(nodes, key=lambda n: g.node_index[n])
    return ReducedGraph(order, edges, g.root, g.terminal)
