"""Discrete first-passage metrics with conformal-factor vertex weights.

The graph is the 8-neighbor lattice over the grid cells; the cost of an edge
is its euclidean length (delta on axes, delta*sqrt(2) on diagonals) times the
arithmetic mean of the endpoint weights exp(xi * h_eps), a trapezoid-rule
quadrature of the weighted path length.  No deterministic normalization is
applied to distances: every downstream statistic is an exponent or a ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from . import _dijkstra
from .gaussian_field import (circle_average, constants_Q_xi,
                             heat_kernel_mollify)
from .grids import (CellSet, FieldKind, GridField, GridSpec, ValidationError,
                    interpolate_bilinear)

__all__ = ["WeightedGrid", "DistanceField", "build_lfpp_graph",
           "shortest_distances", "distances_from", "metric_ball",
           "filled_metric_ball", "internal_distance", "weyl_scale",
           "circle_average_distance_bound", "extract_path"]


@dataclass(frozen=True)
class WeightedGrid:
    """8-neighbor lattice with positive vertex weights e^(xi * h_eps)."""

    spec: GridSpec
    xi: float
    eps: float
    vertex_weights: np.ndarray  # (n, n), > 0

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.vertex_weights, dtype=np.float64))
        if w.shape != (self.spec.n, self.spec.n):
            raise ValidationError("weights shape mismatch")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValidationError("vertex weights must be positive and finite")
        w.setflags(write=False)
        object.__setattr__(self, "vertex_weights", w)

    def edge_cost(self, u: tuple[int, int], v: tuple[int, int]) -> float:
        dj, dk = abs(u[0] - v[0]), abs(u[1] - v[1])
        if max(dj, dk) != 1:
            raise ValidationError(f"{u} and {v} are not lattice neighbors")
        length = self.spec.delta * (math.sqrt(2.0) if dj + dk == 2 else 1.0)
        return length * 0.5 * (self.vertex_weights[u] + self.vertex_weights[v])


@dataclass(frozen=True)
class DistanceField:
    """Single- or multi-source shortest-path solution."""

    sources: tuple
    dist: np.ndarray  # (n, n); inf beyond the solve limit
    predecessor: Optional[np.ndarray] = None  # flat indices, -1 at roots

    def at(self, cell: tuple[int, int]) -> float:
        return float(self.dist[cell])


def build_lfpp_graph(field: GridField, xi: float, eps: float) -> WeightedGrid:
    """Weights exp(xi * heat_kernel_mollify(field, eps)); deterministic."""
    if xi <= 0:
        raise ValidationError(f"xi must be positive, got {xi}")
    if eps < field.spec.delta:
        raise ValidationError(f"eps must be >= delta = {field.spec.delta}")
    h_eps = heat_kernel_mollify(field, eps)
    return WeightedGrid(field.spec, xi, eps, np.exp(xi * h_eps.values))


def _flat(spec: GridSpec, cell: tuple[int, int]) -> int:
    j, k = cell
    if not (0 <= j < spec.n and 0 <= k < spec.n):
        raise ValidationError(f"cell {cell} outside the grid")
    return j * spec.n + k


def distances_from(graph: WeightedGrid, sources, limit: float = np.inf,
                   predecessors: bool = False,
                   region: Optional[CellSet] = None) -> DistanceField:
    """Multi-source Dijkstra; cells with distance > limit are reported inf."""
    spec = graph.spec
    srcs = np.array([_flat(spec, s) for s in sources], dtype=np.int64)
    if region is None:
        mask = np.empty(0, dtype=bool)
        use_mask = False
    else:
        mask = region.mask.ravel()
        use_mask = True
    dist, pred = _dijkstra.dijkstra(
        graph.vertex_weights.ravel(), spec.n, spec.delta, srcs,
        float(limit), mask, use_mask, predecessors)
    return DistanceField(tuple(map(tuple, sources)),
                         dist.reshape(spec.n, spec.n),
                         pred.reshape(spec.n, spec.n) if predecessors else None)


def shortest_distances(graph: WeightedGrid, source: tuple[int, int]) -> DistanceField:
    """Exact single-source distances over the whole grid, with path tree."""
    return distances_from(graph, [source], predecessors=True)


def extract_path(field: DistanceField, target: tuple[int, int]) -> list[tuple[int, int]]:
    """Cell path from a source to target along the predecessor tree."""
    if field.predecessor is None:
        raise ValidationError("distance field was solved without predecessors")
    n = field.dist.shape[0]
    pred = field.predecessor
    path = [target]
    guard = n * n + 1
    while True:
        p = int(pred[path[-1]])
        if p < 0:
            break
        path.append((p // n, p % n))
        guard -= 1
        if guard == 0:
            raise ValidationError("predecessor cycle; corrupt distance field")
    return path[::-1]


def metric_ball(graph: WeightedGrid, center: tuple[int, int], r: float) -> CellSet:
    """Open ball {dist < r}; empty for r <= 0."""
    if r < 0:
        raise ValidationError("ball radius must be nonnegative")
    if r == 0:
        return CellSet(graph.spec, np.zeros((graph.spec.n,) * 2, dtype=bool))
    df = distances_from(graph, [center], limit=r)
    return CellSet(graph.spec, df.dist < r)


def filled_metric_ball(graph: WeightedGrid, center: tuple[int, int],
                       r: float) -> CellSet:
    """Closed ball plus the complement components it cuts off from the boundary."""
    df = distances_from(graph, [center], limit=r)
    closed = df.dist <= r
    n = graph.spec.n
    border = np.zeros((n, n), dtype=bool)
    border[0, :] = border[-1, :] = border[:, 0] = border[:, -1] = True
    if (closed & border).any():
        raise ValidationError("closed ball touches the grid boundary; "
                              "the outside component is ill-defined")
    labels, count = ndimage.label(~closed, structure=np.ones((3, 3), dtype=bool))
    outside = np.unique(labels[border & (labels > 0)])
    filled = closed.copy()
    for lab in range(1, count + 1):
        if lab not in outside:
            filled |= labels == lab
    return CellSet(graph.spec, filled)


def internal_distance(graph: WeightedGrid, region: CellSet, u: tuple[int, int],
                      v: tuple[int, int]) -> float:
    """Shortest path constrained to region cells; inf when disconnected."""
    if u not in region or v not in region:
        raise ValidationError("both endpoints must belong to the region")
    return float(_dijkstra.dijkstra_to_target(
        graph.vertex_weights.ravel(), graph.spec.n, graph.spec.delta,
        _flat(graph.spec, u), _flat(graph.spec, v),
        region.mask.ravel(), True))


def weyl_scale(graph: WeightedGrid, f: GridField) -> WeightedGrid:
    """Multiply vertex weights by exp(xi * f) cell-wise."""
    if f.spec != graph.spec:
        raise ValidationError("field spec does not match the graph spec")
    return WeightedGrid(graph.spec, graph.xi, graph.eps,
                        graph.vertex_weights * np.exp(graph.xi * f.values))


def circle_average_distance_bound(field: GridField, z: complex, gamma: float,
                                  d_gamma: float, t_step: float = 0.05,
                                  t_max: Optional[float] = None) -> tuple[float, float]:
    """Circle-average integral bound vs the measured distance to z.

    Computes the trapezoid approximation (unit prefactor) of

        integral_{-log(|z|/2)}^{T} ( e^{xi h_{e^-t}(0) - xi (Q - gamma) t}
                                     + e^{xi h_{e^-t}(z) - xi Q t} ) dt

    with T = log(1/delta) by default, alongside the first-passage distance
    from the origin cell to z under the field with the explicit singularity
    -gamma * log|.| added.  Circle averages at radii below the quadrature
    floor 2*delta fall back to the bilinear field value at the point.
    """
    spec = field.spec
    if abs(z) > 0.25:
        raise ValidationError(f"|z| must be <= 1/4, got {abs(z)}")
    if abs(z) < 4 * spec.delta:
        raise ValidationError(f"|z| must be >= 4*delta = {4 * spec.delta}")
    q, xi = constants_Q_xi(gamma, d_gamma)
    t_lo = -math.log(abs(z) / 2.0)
    t_hi = math.log(1.0 / spec.delta) if t_max is None else t_max
    if t_hi <= t_lo:
        raise ValidationError("empty integration range; grid too coarse for this z")
    ts = np.linspace(t_lo, t_hi, max(2, int(math.ceil((t_hi - t_lo) / t_step)) + 1))

    def avg_at(center: complex, r: float) -> float:
        if r >= 2 * spec.delta and spec.contains_circle(center, r):
            return circle_average(field, center, r)
        return float(interpolate_bilinear(
            field.values, spec, np.array(center.real), np.array(center.imag)))

    h0 = np.array([avg_at(spec.origin, math.exp(-t)) for t in ts])
    hz = np.array([avg_at(z, math.exp(-t)) for t in ts])
    integrand = (np.exp(xi * h0 - xi * (q - gamma) * ts)
                 + np.exp(xi * hz - xi * q * ts))
    bound = float(np.trapezoid(integrand, ts))

    rho = np.abs(field.spec.cell_centers() - spec.origin)
    sing = field.with_values(field.values - gamma * np.log(rho))
    graph = build_lfpp_graph(sing, xi, spec.delta)
    src = spec.nearest_cell(spec.origin)
    dst = spec.nearest_cell(z)
    dist = float(_dijkstra.dijkstra_to_target(
        graph.vertex_weights.ravel(), spec.n, spec.delta,
        _flat(spec, src), _flat(spec, dst), np.empty(0, dtype=bool), False))
    return bound, dist
