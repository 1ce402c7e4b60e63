"""Finite weighted graphs and their discrete calculus.

A graph here is a connected, undirected, simple graph on nodes 0..n-1 with
strictly positive symmetric edge weights w, plus an optional second weight
family wt ("fisher weights") used by the Fisher information functional and
defaulting to w.

States living on a graph:

* Density     nonnegative node vector summing to one.
* Potential   node vector modulo additive constants; the stored
              representative has zero mean.
* SkewField   edge vector field, antisymmetric: v_ij = -v_ji, zero off-edge.

The calculus follows one sign convention throughout:

    gradient      (grad S)_ij = S_i - S_j
    divergence    div(rho v)_j = -(sum_l w_jl v_jl theta_jl)
    inner product <u, v>_rho = 1/2 sum over both edge orientations of
                  u_ij v_ij theta_ij w_ij

so that <grad S, v>_rho = -sum_j S_j div(rho v)_j (integration by parts)
and the weighted Laplacian L = -div(rho grad .) is positive semidefinite
with kernel spanned by constants on a connected graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AsymmetricWeight,
    BoundaryDensity,
    DisconnectedGraph,
    NonpositiveWeight,
    SelfLoop,
    SingularLaplacian,
)
from .theta import ThetaKind, AVERAGE, theta, resolve_direction

_SUM_TOL = 1e-12


def _arr(x) -> np.ndarray:
    """Accept a plain array or one of the thin state wrappers."""
    return np.asarray(getattr(x, "values", x), dtype=float)


@dataclass(frozen=True)
class Graph:
    n: int
    edges: tuple            # tuple of (i, j) with i < j
    weight: np.ndarray      # (n, n) symmetric, zero off-edge
    fisher_weight: np.ndarray

    @property
    def adjacency(self) -> np.ndarray:
        return self.weight > 0

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.weight[i] > 0)

    def edge_count(self) -> int:
        return len(self.edges)


def validate_graph(raw_nodes, raw_edges) -> Graph:
    """Build a Graph from a node count and an edge list.

    raw_edges rows are (i, j, w) or (i, j, w, wt); duplicate orientations
    are allowed only when their weights agree exactly.
    """
    n = int(raw_nodes)
    if n < 2:
        raise DisconnectedGraph("need at least two nodes, got %d" % n)
    weight = np.zeros((n, n))
    fisher = np.zeros((n, n))
    seen = {}
    for row in raw_edges:
        if len(row) == 3:
            i, j, w = row
            wt = w
        elif len(row) == 4:
            i, j, w, wt = row
        else:
            raise ValueError("edge rows must be (i, j, w) or (i, j, w, wt)")
        i, j = int(i), int(j)
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError("edge (%d, %d) outside node range 0..%d" % (i, j, n - 1))
        if i == j:
            raise SelfLoop("edge (%d, %d) is a self loop" % (i, j))
        w = float(w)
        wt = float(wt)
        if w <= 0 or wt <= 0:
            raise NonpositiveWeight("edge (%d, %d) has nonpositive weight" % (i, j))
        key = (min(i, j), max(i, j))
        if key in seen and seen[key] != (w, wt):
            raise AsymmetricWeight("conflicting weights for edge %s" % (key,))
        seen[key] = (w, wt)
        weight[i, j] = weight[j, i] = w
        fisher[i, j] = fisher[j, i] = wt
    # connectivity by breadth-first search from node 0
    reached = np.zeros(n, dtype=bool)
    stack = [0]
    reached[0] = True
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(weight[i] > 0):
            if not reached[j]:
                reached[j] = True
                stack.append(int(j))
    if not reached.all():
        raise DisconnectedGraph("nodes %s unreachable from node 0"
                                % np.flatnonzero(~reached).tolist())
    edges = tuple(sorted(seen))
    weight.setflags(write=False)
    fisher.setflags(write=False)
    return Graph(n=n, edges=edges, weight=weight, fisher_weight=fisher)


def complete_graph(n: int, w: float = 1.0) -> Graph:
    return validate_graph(n, [(i, j, w) for i in range(n) for j in range(i + 1, n)])


# -- node and edge states -------------------------------------------------------


@dataclass(frozen=True)
class Density:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(v < -_SUM_TOL):
            raise BoundaryDensity("negative mass %r" % v[v < -_SUM_TOL][0])
        if abs(v.sum() - 1.0) > _SUM_TOL * max(1, len(v)):
            raise BoundaryDensity("mass sums to %r, not 1" % v.sum())
        object.__setattr__(self, "values", v)

    def interior(self, margin: float = 0.0) -> bool:
        return bool(self.values.min() > margin)


@dataclass(frozen=True)
class Potential:
    """Node potential stored with zero mean; the removed shift is kept."""

    values: np.ndarray
    shift: float = field(default=0.0)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        mean = v.mean()
        object.__setattr__(self, "values", v - mean)
        object.__setattr__(self, "shift", float(self.shift + mean))


@dataclass(frozen=True)
class SkewField:
    values: np.ndarray  # (n, n), antisymmetric, zero off-edge

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.max(np.abs(v + v.T)) > 1e-9 * max(1.0, np.max(np.abs(v))):
            raise ValueError("edge field is not antisymmetric")
        object.__setattr__(self, "values", v)


def graph_gradient(g: Graph, S) -> SkewField:
    """(grad S)_ij = S_i - S_j on edges, zero elsewhere."""
    s = _arr(S)
    v = (s[:, None] - s[None, :]) * g.adjacency
    return SkewField(v)


def edge_theta(g: Graph, rho, kind: ThetaKind, direction=None, masses=None) -> np.ndarray:
    """Theta weights as an (n, n) matrix over ordered adjacent pairs.

    `direction` feeds the upwind kind when the kind itself carries no
    source. `masses` overrides the node masses (used by fisher weights).
    """
    r = _arr(rho) if masses is None else np.asarray(masses, dtype=float)
    dirs = resolve_direction(kind, fallback=direction)
    if dirs is None:
        dirs = 0.0
    th = theta(kind, r[:, None] * np.ones_like(g.weight), r[None, :] * np.ones_like(g.weight), dirs)
    return np.where(g.adjacency, th, 0.0)


def divergence(g: Graph, rho, v, kind: ThetaKind = AVERAGE) -> np.ndarray:
    """div(rho v)_j = -(sum_l w_jl v_jl theta_jl)."""
    vv = _arr(v)
    th = edge_theta(g, rho, kind, direction=vv)
    return -(g.weight * vv * th).sum(axis=1)


def inner_product(g: Graph, u, v, rho, kind: ThetaKind = AVERAGE) -> float:
    """<u, v>_rho, summed over both orientations of every edge with a 1/2."""
    uu = _arr(u)
    vv = _arr(v)
    th = edge_theta(g, rho, kind, direction=vv)
    return float(0.5 * (uu * vv * th * g.weight).sum())


def hodge_decompose(g: Graph, rho, v, kind: ThetaKind = AVERAGE):
    """Split v = grad S + u with div(rho u) = 0.

    Solves the weighted Laplacian system div(rho grad S) = div(rho v) with
    the constant mode deflated; S is returned with zero mean. The density
    must be interior so every edge keeps positive conductance.
    """
    r = _arr(rho)
    if r.min() <= 0:
        raise BoundaryDensity("decomposition needs an interior density")
    vv = _arr(v)
    th = edge_theta(g, r, kind, direction=vv)
    cond = g.weight * th                     # edge conductances
    lap = np.diag(cond.sum(axis=1)) - cond   # L = -div(rho grad .)
    eigs = np.sort(np.abs(np.linalg.eigvalsh(lap)))
    scale = max(eigs[-1], 1.0)
    if len(eigs) > 1 and eigs[1] < 1e-12 * scale:
        raise SingularLaplacian("weighted Laplacian kernel has dimension > 1")
    rhs = -divergence(g, r, vv, kind)
    # deflate the constant kernel; rhs is orthogonal to constants already
    s = np.linalg.solve(lap + np.ones_like(lap) / g.n, rhs)
    s -= s.mean()
    grad = graph_gradient(g, s).values
    u = SkewField(vv - grad)
    return Potential(s), u
