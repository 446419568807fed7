"""Typed directed-graph model of a district heating network.

Edges are pipes of four disjoint kinds (feed, return, bypass, user).  The
plant is represented by a root node with no inflow and a terminal node with
no outflow.  Incidence uses +1 at the tail of an edge and -1 at its head, so
``incidence @ flows`` is the net outflow of every node.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

from .errors import (
    DanglingReference,
    DisconnectedGraph,
    InvalidNetwork,
    RootTerminalViolation,
)

FORMAT_VERSION = 1


class EdgeKind(str, Enum):
    FEED = "feed"
    RETURN = "return"
    BYPASS = "bypass"
    USER = "user"


@dataclass(frozen=True)
class FluidProperties:
    density: float = 971.0  # kg/m3
    specific_heat: float = 4179.0  # J/(kg K)

    def __post_init__(self):
        if not (self.density > 0 and self.specific_heat > 0):
            raise ValueError("fluid density and specific heat must be positive")


@dataclass(frozen=True)
class PipeAttributes:
    """Geometry and transfer properties of a single pipe segment."""

    length: float  # m
    diameter: float  # m
    friction: float = 0.01  # Darcy friction factor, dimensionless
    htc: float = 1.5  # heat transfer coefficient, W/(m2 K)

    def __post_init__(self):
        if not (self.length > 0 and self.diameter > 0 and self.friction > 0):
            raise ValueError(f"invalid pipe geometry {self!r}")
        if self.htc < 0:
            raise ValueError("heat transfer coefficient must be non-negative")

    @property
    def cross_section(self) -> float:
        return math.pi * (self.diameter / 2.0) ** 2

    @property
    def volume(self) -> float:
        return self.cross_section * self.length

    @property
    def surface_area(self) -> float:
        return math.pi * self.diameter * self.length


def loss_coefficient(attr: PipeAttributes, fluid: FluidProperties) -> float:
    """Quadratic loss coefficient ``zeta`` with ``dP = zeta * mdot**2``.

    Darcy-Weisbach written for mass flow:
    ``dP = f * (L / D) * mdot**2 / (2 * rho * A**2)``.
    """
    a = attr.cross_section
    return attr.friction * attr.length / (attr.diameter * 2.0 * fluid.density * a * a)


def diameter_for_zeta(zeta: float, length: float, fluid: FluidProperties, friction: float = 0.01) -> float:
    """Inverse of :func:`loss_coefficient` in the diameter."""
    # zeta = 8 f L / (rho pi^2 D^5)
    return (8.0 * friction * length / (fluid.density * math.pi**2 * zeta)) ** 0.2


@dataclass(frozen=True)
class Edge:
    id: str
    tail: str
    head: str
    kind: EdgeKind
    pipe: PipeAttributes
    building: str | None = None  # building served by a user edge


class NetworkGraph:
    """Immutable DHN graph with cached incidence/adjacency structures.

    Parameters
    ----------
    nodes : sequence of str
        Node identifiers. Order defines row order of the matrices.
    edges : sequence of Edge
        Order defines column order of the incidence matrix.
    root, terminal : str
        Plant supply node (indegree 0) and plant return node (outdegree 0).
    fluid : FluidProperties
    locations : mapping node -> location label, optional
        Feed and return nodes at the same physical place share a label.
        Used to keep feed/return routes together when partitioning.
    """

    def __init__(
        self,
        nodes: Sequence[str],
        edges: Sequence[Edge],
        root: str,
        terminal: str,
        fluid: FluidProperties | None = None,
        locations: dict[str, str] | None = None,
        *,
        validate: bool = True,
    ):
        self.nodes: tuple[str, ...] = tuple(nodes)
        self.edges: tuple[Edge, ...] = tuple(edges)
        self.root = root
        self.terminal = terminal
        self.fluid = fluid or FluidProperties()
        self.node_index = {n: i for i, n in enumerate(self.nodes)}
        if len(self.node_index) != len(self.nodes):
            raise InvalidNetwork("duplicate node identifiers")
        self.edge_index = {e.id: k for k, e in enumerate(self.edges)}
        if len(self.edge_index) != len(self.edges):
            raise InvalidNetwork("duplicate edge identifiers")
        locations = dict(locations or {})
        self.locations = {n: locations.get(n, n) for n in self.nodes}
        if validate:
            self._validate()

    # construction checks ---------------------------------------------------
    def _validate(self):
        for name in (self.root, self.terminal):
            if name not in self.node_index:
                raise DanglingReference(f"plant node {name!r} is not declared")
        if self.root == self.terminal:
            raise RootTerminalViolation("root and terminal must differ")
        for e in self.edges:
            for n in (e.tail, e.head):
                if n not in self.node_index:
                    raise DanglingReference(f"edge {e.id!r} references unknown node {n!r}")
            if e.tail == e.head:
                raise InvalidNetwork(f"edge {e.id!r} is a self loop")
        if any(e.head == self.root for e in self.edges):
            raise RootTerminalViolation(f"root {self.root!r} has nonzero indegree")
        if any(e.tail == self.terminal for e in self.edges):
            raise RootTerminalViolation(f"terminal {self.terminal!r} has nonzero outdegree")
        ug = nx.Graph()
        ug.add_nodes_from(self.nodes)
        ug.add_edges_from((e.tail, e.head) for e in self.edges)
        if not nx.is_connected(ug):
            raise DisconnectedGraph("network graph is not connected")
        dg = nx.DiGraph()
        dg.add_nodes_from(self.nodes)
        dg.add_edges_from((e.tail, e.head) for e in self.edges if e.kind is not EdgeKind.USER)
        for e in self.edges:
            if e.kind is EdgeKind.USER and not nx.has_path(dg, e.tail, e.head):
                raise InvalidNetwork(f"user edge {e.id!r} has no bypass path")

    # derived structures ----------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def tails(self) -> np.ndarray:
        return np.array([self.node_index[e.tail] for e in self.edges], dtype=int)

    @cached_property
    def heads(self) -> np.ndarray:
        return np.array([self.node_index[e.head] for e in self.edges], dtype=int)

    @cached_property
    def incidence(self) -> np.ndarray:
        lam = np.zeros((self.n_nodes, self.n_edges))
        cols = np.arange(self.n_edges)
        lam[self.tails, cols] = 1.0
        lam[self.heads, cols] = -1.0
        lam.setflags(write=False)
        return lam

    @cached_property
    def adjacency(self) -> np.ndarray:
        """0/1 directed adjacency, ``adjacency[i, j] = 1`` for an edge i -> j."""
        gam = np.zeros((self.n_nodes, self.n_nodes))
        gam[self.tails, self.heads] = 1.0
        gam.setflags(write=False)
        return gam

    @cached_property
    def kinds(self) -> np.ndarray:
        return np.array([e.kind.value for e in self.edges])

    @cached_property
    def zeta(self) -> np.ndarray:
        """Physical loss coefficients; for user edges the nominal valve value."""
        z = np.array([loss_coefficient(e.pipe, self.fluid) for e in self.edges])
        z.setflags(write=False)
        return z

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.array([e.pipe.volume for e in self.edges])

    def edges_of_kind(self, kind: EdgeKind | str) -> np.ndarray:
        kind = EdgeKind(kind)
        return np.flatnonzero(self.kinds == kind.value)

    @property
    def user_edges(self) -> np.ndarray:
        return self.edges_of_kind(EdgeKind.USER)

    @property
    def bypass_edges(self) -> np.ndarray:
        return self.edges_of_kind(EdgeKind.BYPASS)

    @cached_property
    def non_user_edges(self) -> np.ndarray:
        return np.flatnonzero(self.kinds != EdgeKind.USER.value)

    @property
    def buildings(self) -> list[str]:
        return [self.edges[k].building or self.edges[k].id for k in self.user_edges]

    def out_edges(self, node: str) -> list[int]:
        return [k for k, e in enumerate(self.edges) if e.tail == node]

    def in_edges(self, node: str) -> list[int]:
        return [k for k, e in enumerate(self.edges) if e.head == node]

    # derived graphs ---------------------------------------------------------
    def subgraph(self, edge_ids: Iterable[int], root: str, terminal: str) -> "NetworkGraph":
        idx = sorted(set(int(k) for k in edge_ids))
        edges = [self.edges[k] for k in idx]
        used = {root, terminal}
        for e in edges:
            used.update((e.tail, e.head))
        nodes = [n for n in self.nodes if n in used]
        return NetworkGraph(nodes, edges, root, terminal, self.fluid, self.locations)

    # serialization ----------------------------------------------------------
    def to_dict(self) -> dict:
        nodes = []
        for n in self.nodes:
            item = {"id": n}
            if self.locations[n] != n:
                item["location"] = self.locations[n]
            nodes.append(item)
        edges = []
        for e in self.edges:
            item = {
                "id": e.id,
                "tail": e.tail,
                "head": e.head,
                "kind": e.kind.value,
                "length_m": e.pipe.length,
                "diameter_m": e.pipe.diameter,
                "friction": e.pipe.friction,
                "htc_w_m2k": e.pipe.htc,
            }
            if e.building is not None:
                item["building"] = e.building
            edges.append(item)
        return {
            "format": FORMAT_VERSION,
            "fluid": {
                "density_kg_m3": self.fluid.density,
                "specific_heat_j_kgk": self.fluid.specific_heat,
            },
            "root": self.root,
            "terminal": self.terminal,
            "nodes": nodes,
            "edges": edges,
        }

    def structurally_equal(self, other: "NetworkGraph") -> bool:
        return self.to_dict() == other.to_dict()

    def __repr__(self):
        counts = {k.value: len(self.edges_of_kind(k)) for k in EdgeKind}
        return f"NetworkGraph(nodes={self.n_nodes}, edges={counts})"


def build_graph(doc: dict) -> NetworkGraph:
    """Build a validated :class:`NetworkGraph` from a parsed network document."""
    fmt = doc.get("format")
    if fmt != FORMAT_VERSION:
        raise InvalidNetwork(f"unsupported network format {fmt!r}")
    fl = doc.get("fluid", {})
    fluid = FluidProperties(
        density=float(fl.get("density_kg_m3", 971.0)),
        specific_heat=float(fl.get("specific_heat_j_kgk", 4179.0)),
    )
    nodes, locations = [], {}
    for item in doc["nodes"]:
        if isinstance(item, str):
            item = {"id": item}
        nodes.append(item["id"])
        if "location" in item:
            locations[item["id"]] = item["location"]
    edges = []
    for item in doc["edges"]:
        try:
            kind = EdgeKind(item["kind"])
        except ValueError as exc:
            raise InvalidNetwork(f"edge {item.get('id')!r}: unknown kind {item['kind']!r}") from exc
        pipe = PipeAttributes(
            length=float(item["length_m"]),
            diameter=float(item["diameter_m"]),
            friction=float(item.get("friction", 0.01)),
            htc=float(item.get("htc_w_m2k", 1.5)),
        )
        edges.append(Edge(item["id"], item["tail"], item["head"], kind, pipe, item.get("building")))
    return NetworkGraph(nodes, edges, doc["root"], doc["terminal"], fluid, locations)


def load_graph(path: str | Path) -> NetworkGraph:
    with open(path) as fh:
        return build_graph(json.load(fh))


def save_graph(g: NetworkGraph, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(g.to_dict(), fh, indent=1)
        fh.write("\n")
