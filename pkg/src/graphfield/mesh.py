"""FEM refinement of a metric graph and hat-basis bookkeeping.

Each edge is subdivided into ``n_e = max(2, ceil(length/target_h))`` uniform
segments.  Global node numbering puts the original vertices first (one node
per vertex, shared by all incident edges), then the interior nodes edge by
edge.  The basis is the standard piecewise-linear hat system: interior hats
supported on two segments, vertex hats decaying into the first segment of
every incident edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix

from .graph import GraphError, GraphPoint, MetricGraph

# points closer than this (relative to a segment) to a mesh node snap to it;
# hat "tips" are not differentiable, so boundary points resolve to the node
_SNAP = 1e-12


@dataclass(frozen=True)
class EdgeMesh:
    n_segments: int
    h: float  # segment length, length / n_segments


class Mesh:
    """Uniform per-edge refinement of a metric graph."""

    def __init__(self, graph: MetricGraph, target_h: float):
        if not (target_h > 0):
            raise ValueError("target_h must be positive")
        self.graph = graph
        self.target_h = float(target_h)
        self.edge_meshes: list[EdgeMesh] = []
        for e in graph.edges:
            n = max(2, math.ceil(e.length / target_h - 1e-12))
            self.edge_meshes.append(EdgeMesh(n, e.length / n))
        self.h = max(em.h for em in self.edge_meshes)

        nv = graph.n_vertices
        self._vnode = {vid: i for i, vid in enumerate(graph.vertex_ids)}
        self._interior_start = []
        start = nv
        for em in self.edge_meshes:
            self._interior_start.append(start)
            start += em.n_segments - 1
        self.n_nodes = start
        self.matrix_cache: dict = {}  # assembled matrices, keyed by assembler

    @property
    def N(self) -> int:
        return self.n_nodes

    def vertex_node(self, vid) -> int:
        return self._vnode[vid]

    def edge_node(self, edge_id: int, j: int) -> int:
        """Global index of local node j on an edge (j = 0..n_segments)."""
        e = self.graph.edges[edge_id]
        n = self.edge_meshes[edge_id].n_segments
        if j == 0:
            return self._vnode[e.u]
        if j == n:
            return self._vnode[e.v]
        return self._interior_start[edge_id] + j - 1

    def node_points(self) -> list[GraphPoint]:
        """Canonical GraphPoint for every global node.

        Vertex nodes map to an endpoint of their lowest-index incident edge.
        """
        pts: list[GraphPoint | None] = [None] * self.n_nodes
        for eid, e in enumerate(self.graph.edges):
            em = self.edge_meshes[eid]
            for j in range(em.n_segments + 1):
                g = self.edge_node(eid, j)
                if pts[g] is None:
                    pts[g] = GraphPoint(eid, j * em.h)
        return pts  # every vertex is an endpoint of some edge, all filled

    def node_xy(self) -> np.ndarray:
        """Planar coordinates for every node (requires graph coordinates)."""
        return np.array([self.graph.point_xy(p) for p in self.node_points()])

    def eval_basis(self, s: GraphPoint) -> list[tuple[int, float]]:
        """Hat-basis weights at a point: at most two (node, weight) pairs.

        Weights are in [0,1] and sum to 1; a point exactly on a mesh node
        returns that single node with weight 1.
        """
        s = self.graph.check_point(s)
        em = self.edge_meshes[s.edge]
        u = s.t / em.h
        j = int(math.floor(u))
        if j >= em.n_segments:
            j = em.n_segments - 1
        w = u - j
        if w <= _SNAP:
            return [(self.edge_node(s.edge, j), 1.0)]
        if w >= 1.0 - _SNAP:
            return [(self.edge_node(s.edge, j + 1), 1.0)]
        return [(self.edge_node(s.edge, j), 1.0 - w), (self.edge_node(s.edge, j + 1), w)]

    def basis_matrix(self, points: list[GraphPoint]) -> csr_matrix:
        """Projector A with A[i, j] = psi_j(points[i])."""
        rows, cols, vals = [], [], []
        for i, p in enumerate(points):
            for node, w in self.eval_basis(p):
                rows.append(i)
                cols.append(node)
                vals.append(w)
        return csr_matrix((vals, (rows, cols)), shape=(len(points), self.n_nodes))

    def segments(self):
        """Iterate (global_i, global_j, h_seg) over all mesh segments."""
        for eid in range(self.graph.n_edges):
            em = self.edge_meshes[eid]
            for j in range(em.n_segments):
                yield self.edge_node(eid, j), self.edge_node(eid, j + 1), em.h

    def interpolate(self, node_values: np.ndarray, s: GraphPoint) -> float:
        return float(sum(w * node_values[n] for n, w in self.eval_basis(s)))


def build_mesh(graph: MetricGraph, target_h: float) -> Mesh:
    """Refine a metric graph with uniform per-edge segments of size <= target_h
    (every edge gets at least 2 segments)."""
    return Mesh(graph, target_h)
