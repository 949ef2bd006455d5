"""Correlated boundary-length processes and mated random planar maps.

The pair (L, R) is a two-dimensional Brownian motion with per-unit-time
covariance [[a, -a cos(4 pi / kappa')], [., a]], sampled by Euler steps.
Cells are eps-increments of time; two non-consecutive cells are adjacent when
for one of the coordinates the path between them stays above both cell
minima:

    max( inf_{cell x} Z, inf_{cell y} Z ) <= inf_{(x, y-eps)} Z .

This shared-boundary-arc condition is the standard cell discretization of the
peanosphere encoding; it reduces to a path graph for monotone paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import shortest_path

from .fractal import ScalingFit, dimension_fit
from .grids import ValidationError

__all__ = ["BoundaryLengthProcess", "MatedCrtGraph", "sample_lr",
           "mated_crt_graph", "graph_ball_growth", "boundary_contact_cells",
           "contact_probability_profile", "arcsine_contact_probability",
           "exponential_functional", "exponential_functional_ensemble"]


@dataclass(frozen=True)
class BoundaryLengthProcess:
    """Euler-sampled correlated Brownian pair (L, R), L[0] = R[0] = 0."""

    kappa_prime: float
    a: float
    dt: float
    L: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        if self.L.ndim != 1 or self.L.shape != self.R.shape:
            raise ValidationError("L and R must be 1-D arrays of equal length")
        if self.L[0] != 0.0 or self.R[0] != 0.0:
            raise ValidationError("boundary length processes start at 0")

    @property
    def total_time(self) -> float:
        return (len(self.L) - 1) * self.dt


def lr_covariance(kappa_prime: float, a: float) -> np.ndarray:
    """Per-unit-time covariance matrix of (L, R)."""
    c = -a * math.cos(4 * math.pi / kappa_prime)
    return np.array([[a, c], [c, a]])


def sample_lr(kappa_prime: float, a: float, T: float, dt: float,
              seed: int) -> BoundaryLengthProcess:
    """Euler sample of the correlated pair on [0, T]; deterministic per seed."""
    if not kappa_prime > 4:
        raise ValidationError(f"kappa' must exceed 4 strictly, got {kappa_prime}")
    if a <= 0:
        raise ValidationError("variance rate a must be positive")
    if dt > 1e-3 * T:
        raise ValidationError(f"dt must be <= T/1000, got dt={dt}, T={T}")
    steps = int(round(T / dt))
    cov = lr_covariance(kappa_prime, a)
    chol = np.linalg.cholesky(cov)
    rng = np.random.default_rng(seed)
    incr = chol @ rng.standard_normal((2, steps)) * math.sqrt(dt)
    path = np.concatenate([np.zeros((2, 1)), np.cumsum(incr, axis=1)], axis=1)
    return BoundaryLengthProcess(kappa_prime, a, dt, path[0], path[1])


@dataclass(frozen=True)
class MatedCrtGraph:
    """Planar adjacency over time cells of width eps."""

    eps: float
    num_cells: int
    edges: np.ndarray  # (E, 2) int64, each row i < j, unique, sorted

    def adjacency(self):
        """Symmetric CSR adjacency matrix with unit edge weights."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        ones = np.ones(len(self.edges))
        m = coo_matrix((ones, (i, j)), shape=(self.num_cells, self.num_cells))
        return (m + m.T).tocsr()

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_cells, dtype=np.int64)
        np.add.at(deg, self.edges.ravel(), 1)
        return deg


def _cell_minima(path: np.ndarray, spc: int, num_cells: int) -> np.ndarray:
    """Minimum of the path on each cell [i*eps, (i+1)*eps], endpoints shared."""
    starts = np.arange(num_cells) * spc
    mins = np.minimum.reduceat(path[:num_cells * spc], starts)
    return np.minimum(mins, path[spc::spc][:num_cells])


def _previous_leq_links(m: np.ndarray) -> np.ndarray:
    """jump[i] = largest i' < i with m[i'] <= m[i], else -1 (monotone stack)."""
    jump = np.full(len(m), -1, dtype=np.int64)
    stack: list[int] = []
    for i in range(len(m)):
        while stack and m[stack[-1]] > m[i]:
            stack.pop()
        if stack:
            jump[i] = stack[-1]
        stack.append(i)
    return jump


def _component_edges(m: np.ndarray) -> list[tuple[int, int]]:
    """Non-consecutive adjacencies from one coordinate's cell minima.

    For each cell j walks candidate cells i leftward along previous-<=-links,
    maintaining B = min of the cell minima strictly between i and j; (i, j)
    is an edge iff max(m[i], m[j]) <= B.
    """
    jump = _previous_leq_links(m)
    edges: list[tuple[int, int]] = []
    for j in range(2, len(m)):
        b = m[j - 1]
        i = j - 2
        while i >= 0 and b >= m[j]:
            if m[i] <= b:
                edges.append((i, j))
                b = m[i]
            i = jump[i]
    return edges


def mated_crt_graph(process: BoundaryLengthProcess, eps: float) -> MatedCrtGraph:
    """Build the cell adjacency graph of the pair at cell width eps."""
    dt = process.dt
    if eps < 10 * dt - 1e-12:
        raise ValidationError(f"eps must be >= 10*dt = {10 * dt}")
    spc = eps / dt
    if abs(spc - round(spc)) > 1e-9:
        raise ValidationError("eps must be an integer multiple of dt")
    spc = int(round(spc))
    num_cells = (len(process.L) - 1) // spc
    if num_cells < 100:
        raise ValidationError(f"need at least 100 cells, got {num_cells}")
    edges: set[tuple[int, int]] = set()
    for i in range(num_cells - 1):
        edges.add((i, i + 1))
    for path in (process.L, process.R):
        m = _cell_minima(path, spc, num_cells)
        edges.update(_component_edges(m))
    arr = np.array(sorted(edges), dtype=np.int64)
    return MatedCrtGraph(eps, num_cells, arr)


def graph_ball_growth(graph: MatedCrtGraph, centers, radii) -> ScalingFit:
    """Pooled fit of log |B_r(center)| against log r (graph distance balls).

    Centers within 2 * max(radii) graph hops of either time boundary are
    dropped; the fitted slope estimates the volume-growth exponent.
    """
    radii = np.sort(np.asarray(radii, dtype=int))
    if radii[0] < 1:
        raise ValidationError("radii must be positive integers")
    adj = graph.adjacency()
    m = graph.num_cells
    guard = 2 * int(radii[-1])
    dist_ends = shortest_path(adj, method="D", unweighted=True,
                              indices=[0, m - 1])
    pooled = []
    kept = 0
    for c in centers:
        if dist_ends[0, c] < guard or dist_ends[1, c] < guard:
            continue
        kept += 1
        d = shortest_path(adj, method="D", unweighted=True, indices=c)
        for r in radii:
            pooled.append((1.0 / r, float(np.count_nonzero(d <= r))))
    if kept == 0:
        raise ValidationError("every center sits too close to the time boundary")
    return dimension_fit(pooled)


def boundary_contact_cells(process: BoundaryLengthProcess, component: str,
                           interval_count: int) -> np.ndarray:
    """Flags per interval I_k: does the component attain a new running minimum.

    Time is rescaled to [0, 1] and split into K = interval_count intervals;
    the flag for I_k is inf_{I_k} Z < inf_{[0, k/K]} Z.  Average the flags
    over an ensemble of paths to estimate the contact probabilities.
    """
    if interval_count < 16:
        raise ValidationError("need at least 16 intervals")
    z = process.L if component == "L" else process.R if component == "R" else None
    if z is None:
        raise ValidationError("component must be 'L' or 'R'")
    return _contact_flags(z, interval_count)


def _contact_flags(z: np.ndarray, k_count: int) -> np.ndarray:
    n = len(z) - 1
    bounds = (np.arange(k_count + 1) * n) // k_count
    prefix = np.minimum.accumulate(z)
    flags = np.empty(k_count, dtype=bool)
    for k in range(k_count):
        lo, hi = bounds[k], bounds[k + 1]
        flags[k] = z[lo + 1:hi + 1].min() < prefix[lo]
    return flags


def arcsine_contact_probability(k: np.ndarray) -> np.ndarray:
    """Closed-form contact probability 1 - (2/pi) arctan(sqrt(k))."""
    return 1.0 - (2.0 / math.pi) * np.arctan(np.sqrt(np.asarray(k, dtype=float)))


def contact_probability_profile(interval_count: int, n_paths: int, dt: float,
                                seed: int, chunk: int = 100) -> np.ndarray:
    """Empirical contact probabilities over an ensemble of unit-time BM paths.

    Contact flags are scale-invariant in the path, so a single standard
    Brownian component suffices regardless of (kappa', a).  Vectorized in
    chunks; deterministic per seed.
    """
    if interval_count < 16:
        raise ValidationError("need at least 16 intervals")
    steps = int(round(1.0 / dt))
    bounds = (np.arange(interval_count + 1) * steps) // interval_count
    rng = np.random.default_rng(seed)
    acc = np.zeros(interval_count)
    done = 0
    while done < n_paths:
        b = min(chunk, n_paths - done)
        paths = np.concatenate(
            [np.zeros((b, 1)),
             np.cumsum(math.sqrt(dt) * rng.standard_normal((b, steps)), axis=1)],
            axis=1)
        prefix = np.minimum.accumulate(paths, axis=1)
        for k in range(interval_count):
            lo, hi = bounds[k], bounds[k + 1]
            window_min = paths[:, lo + 1:hi + 1].min(axis=1)
            acc[k] += np.count_nonzero(window_min < prefix[:, lo])
        done += b
    return acc / n_paths


def exponential_functional(xi: float, q: float, T: float, dt: float,
                           seed: int) -> float:
    """One trapezoid sample of the integral of e^(xi B_s - xi Q s) over [0, T]."""
    rate = xi * q - xi ** 2 / 2
    if rate <= 0:
        raise ValidationError(
            f"integrability needs xi*Q > xi^2/2; rate = {rate}")
    if T < 50.0 / rate:
        raise ValidationError(f"horizon too short: need T >= {50.0 / rate}")
    steps = int(round(T / dt))
    rng = np.random.default_rng(seed)
    b = np.concatenate(
        [[0.0], np.cumsum(math.sqrt(dt) * rng.standard_normal(steps))])
    s = dt * np.arange(steps + 1)
    return float(np.trapezoid(np.exp(xi * b - xi * q * s), dx=dt))


def exponential_functional_ensemble(xi: float, q: float, T: float, dt: float,
                                    seed: int, count: int) -> np.ndarray:
    """count independent samples; member i uses the (seed, i) child stream."""
    from .gaussian_field import child_seed

    return np.array([
        exponential_functional(xi, q, T, dt, child_seed(seed, i))
        for i in range(count)])
