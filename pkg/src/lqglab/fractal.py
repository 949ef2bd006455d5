"""Covering and packing numbers, scaling fits, and content-ratio experiments.

Conventions (fixed here for every operation): balls are open, and both cover
and packing centers are restricted to the target set.  Greedy covers are the
production proxy for the covering number (count >= the true minimum); the
exact oracle confines the bias on small sets.  The sandwich

    N_pack(eps) <= N(eps) <= N_pack(eps/2)

holds for any maximal packing and any valid cover, so it is testable without
knowing the true covering number.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _dijkstra
from .gaussian_field import constants_Q_xi
from .gmc import GridMeasure, Region, gmc_from_field, measure_of
from .grids import CellSet, GridField, ValidationError
from .lfpp import WeightedGrid, build_lfpp_graph, distances_from

__all__ = ["CoverResult", "ScalingFit", "RescalingCoefficients",
           "greedy_cover", "exact_cover_count", "maximal_packing",
           "boundary_neighborhood", "dimension_fit", "ball_volume_scaling",
           "content_ratio_experiment", "estimate_rescaling_coefficients",
           "cover_greedy_points", "pack_greedy_points", "cover_exact_points",
           "inner_half_mask"]

EXACT_COVER_LIMIT = 15


@dataclass(frozen=True)
class CoverResult:
    eps: float
    centers: tuple
    count: int
    method: str  # "greedy" | "exact" | "packing"

    def __post_init__(self):
        if self.count != len(self.centers):
            raise ValidationError("count must equal the number of centers")


@dataclass(frozen=True)
class ScalingFit:
    """Least-squares fit of log count against log(1/eps)."""

    log_eps: np.ndarray
    log_count: np.ndarray
    slope: float
    stderr: float
    r2: float


@dataclass(frozen=True)
class RescalingCoefficients:
    """Ensemble-mean cover counts b_eps and their regular-variation summary."""

    eps_grid: np.ndarray
    b_values: np.ndarray
    delta_dim: float
    c1: float
    c2: float
    ratio_table: tuple  # rows (r, eps, measured b_{r eps}/b_eps, r^-delta)


# ---------------------------------------------------------------------------
# finite point sets (distance-matrix interface)


def cover_greedy_points(dmat: np.ndarray, eps: float) -> CoverResult:
    """Farthest-point greedy cover of a finite metric space.

    Seeded at the minimax center (the point minimizing the maximum distance);
    afterwards repeatedly adds the uncovered point farthest from the chosen
    centers.  Ties break to the lowest index.  Open balls.
    """
    if eps <= 0:
        raise ValidationError("eps must be positive")
    m = len(dmat)
    if m == 0:
        return CoverResult(eps, (), 0, "greedy")
    centers = [int(np.argmin(dmat.max(axis=1)))]
    best = dmat[centers[0]].copy()
    while best.max() >= eps:
        nxt = int(np.argmax(best))
        centers.append(nxt)
        np.minimum(best, dmat[nxt], out=best)
    return CoverResult(eps, tuple(centers), len(centers), "greedy")


def pack_greedy_points(dmat: np.ndarray, eps: float) -> CoverResult:
    """Greedy maximal packing: scan in index order, keep points >= 2*eps apart."""
    if eps <= 0:
        raise ValidationError("eps must be positive")
    centers: list[int] = []
    for i in range(len(dmat)):
        if all(dmat[i, c] >= 2 * eps for c in centers):
            centers.append(i)
    return CoverResult(eps, tuple(centers), len(centers), "packing")


def cover_exact_points(dmat: np.ndarray, eps: float) -> int:
    """Exact minimum cover count via dynamic programming over subsets.

    dp[mask] = least number of balls covering exactly the points in mask;
    exponential in the set size, so guarded to EXACT_COVER_LIMIT points.
    """
    m = len(dmat)
    if m == 0:
        return 0
    if m > EXACT_COVER_LIMIT:
        raise ValidationError(f"exact cover limited to {EXACT_COVER_LIMIT} points")
    balls = [int(sum(1 << j for j in range(m) if dmat[i, j] < eps))
             for i in range(m)]
    full = (1 << m) - 1
    dp = np.full(full + 1, m + 1, dtype=np.int32)
    dp[0] = 0
    for mask in range(full):
        if dp[mask] > m:
            continue
        # cover the lowest missing point with each candidate ball
        low = (~mask & full) & -(~mask & full)
        i = low.bit_length() - 1
        for c in range(m):
            if balls[c] & (1 << i):
                nxt = mask | balls[c]
                if dp[mask] + 1 < dp[nxt]:
                    dp[nxt] = dp[mask] + 1
    return int(dp[full])


# ---------------------------------------------------------------------------
# grid cell sets


def _set_indices(cells: CellSet) -> np.ndarray:
    idx = cells.indices()
    if len(idx) == 0:
        raise ValidationError("empty cell set")
    return idx


def _pairwise_distances(cells: CellSet, metric: WeightedGrid) -> np.ndarray:
    idx = _set_indices(cells)
    n = metric.spec.n
    out = np.empty((len(idx), len(idx)))
    for row, flat in enumerate(idx):
        df = distances_from(metric, [(flat // n, flat % n)])
        out[row] = df.dist.ravel()[idx]
    return out


def greedy_cover(cells: CellSet, metric: WeightedGrid, eps: float) -> CoverResult:
    """Farthest-point greedy cover of a cell set with metric eps-balls.

    Centers are cells of the set; the seed is the set cell nearest to the
    set's euclidean centroid (the exact minimax seed would need one solve per
    candidate).  Distances are ambient: covering balls may route outside the
    set.  Incremental farthest-point updates make the total cost about
    O(V log V log(count)).
    """
    if eps <= 0:
        raise ValidationError("eps must be positive")
    if cells.size == 0:
        return CoverResult(eps, (), 0, "greedy")
    idx = _set_indices(cells)
    n = metric.spec.n
    w = metric.vertex_weights.ravel()
    jj, kk = idx // n, idx % n
    cj, ck = jj.mean(), kk.mean()
    seed_pos = int(np.argmin((jj - cj) ** 2 + (kk - ck) ** 2))
    best = np.full(n * n, np.inf)
    centers = [int(idx[seed_pos])]
    _dijkstra.lower_best(w, n, metric.spec.delta, best, centers[0], np.inf)
    while True:
        over = best[idx]
        far = int(np.argmax(over))
        if over[far] < eps:
            break
        centers.append(int(idx[far]))
        _dijkstra.lower_best(w, n, metric.spec.delta, best, centers[-1], np.inf)
    return CoverResult(eps, tuple(centers), len(centers), "greedy")


def maximal_packing(cells: CellSet, metric: WeightedGrid, eps: float) -> CoverResult:
    """Greedy maximal packing on the grid: scan set cells in index order."""
    if eps <= 0:
        raise ValidationError("eps must be positive")
    if cells.size == 0:
        return CoverResult(eps, (), 0, "packing")
    idx = _set_indices(cells)
    n = metric.spec.n
    w = metric.vertex_weights.ravel()
    best = np.full(n * n, np.inf)
    centers: list[int] = []
    for flat in idx:
        if best[flat] >= 2 * eps:
            centers.append(int(flat))
            _dijkstra.lower_best(w, n, metric.spec.delta, best, int(flat),
                                 2 * eps)
    return CoverResult(eps, tuple(centers), len(centers), "packing")


def exact_cover_count(cells: CellSet, metric: WeightedGrid, eps: float) -> int:
    """Exact covering number of a small cell set (<= 15 cells)."""
    if cells.size > EXACT_COVER_LIMIT:
        raise ValidationError(
            f"exact cover limited to {EXACT_COVER_LIMIT} cells, got {cells.size}")
    return cover_exact_points(_pairwise_distances(cells, metric), eps)


def _boundary_cells(cells: CellSet) -> np.ndarray:
    """Set cells 4-adjacent to the complement (or lying on the grid edge)."""
    m = cells.mask
    inner = np.zeros_like(m)
    inner[1:-1, 1:-1] = (m[1:-1, 1:-1] & m[:-2, 1:-1] & m[2:, 1:-1]
                         & m[1:-1, :-2] & m[1:-1, 2:])
    return m & ~inner


def boundary_neighborhood(cells: CellSet, metric: WeightedGrid,
                          eps: float) -> CellSet:
    """Set cells within metric distance eps of the set's boundary cells."""
    if eps <= 0:
        raise ValidationError("eps must be positive")
    border = _boundary_cells(cells)
    if not border.any():
        return CellSet(cells.spec, np.zeros_like(cells.mask))
    n = metric.spec.n
    sources = [(int(f // n), int(f % n)) for f in np.flatnonzero(border.ravel())]
    df = distances_from(metric, sources, limit=eps)
    return CellSet(cells.spec, cells.mask & (df.dist < eps))


# ---------------------------------------------------------------------------
# scaling fits


def dimension_fit(counts: Sequence[tuple[float, float]]) -> ScalingFit:
    """Slope of log count vs log(1/eps); the slope estimates the dimension."""
    if len(counts) < 3:
        raise ValidationError("need at least 3 eps levels for a dimension fit")
    eps = np.array([c[0] for c in counts], dtype=float)
    cnt = np.array([c[1] for c in counts], dtype=float)
    if np.any(eps <= 0) or np.any(cnt <= 0):
        raise ValidationError("eps levels and counts must be positive")
    x = np.log(1.0 / eps)
    y = np.log(cnt)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    dof = len(x) - 2
    sxx = float(np.sum((x - x.mean()) ** 2))
    stderr = math.sqrt(float(resid @ resid) / dof / sxx) if dof > 0 else 0.0
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / tss if tss > 0 else 1.0
    return ScalingFit(x, y, float(slope), stderr, r2)


def inner_half_mask(spec) -> np.ndarray:
    """Central square covering half the grid side (truncation-bias control)."""
    n = spec.n
    lo, hi = n // 4, n - n // 4
    m = np.zeros((n, n), dtype=bool)
    m[lo:hi, lo:hi] = True
    return m


def ball_volume_scaling(measure: GridMeasure, metric: WeightedGrid,
                        centers: Sequence[tuple[int, int]],
                        radii: Sequence[float]) -> tuple[ScalingFit, dict]:
    """Pooled fit of log mu(ball(z, r)) vs log r over centers and radii.

    Centers whose largest ball leaves the inner half-grid are dropped with a
    warning.  Returns the fit plus sup/inf ratio statistics of the ball-volume
    asymptotics at zeta = 0.5 around the fitted exponent.
    """
    radii = np.sort(np.asarray(radii, dtype=float))
    if len(radii) < 2 or radii[0] <= 0:
        raise ValidationError("need at least two positive radii")
    inner = inner_half_mask(metric.spec)
    pooled: list[tuple[float, float]] = []
    kept = 0
    for c in centers:
        df = distances_from(metric, [c], limit=float(radii[-1]))
        largest = df.dist < radii[-1]
        if (largest & ~inner).any():
            warnings.warn(f"center {c} dropped: ball escapes the inner half-grid")
            continue
        kept += 1
        for r in radii:
            mass = float(math.fsum(measure.masses[df.dist < r]))
            if mass > 0:
                pooled.append((float(r), mass))
    if kept == 0:
        raise ValidationError("no center kept; shrink the radii")
    # dimension_fit regresses log count on log(1/eps); eps = 1/r turns that
    # into the slope of log mass against log r
    fit = dimension_fit([(1.0 / r, m) for r, m in pooled])
    d_hat = fit.slope
    rr = np.array([p[0] for p in pooled])
    mm = np.array([p[1] for p in pooled])
    stats = {
        "kept_centers": kept,
        "sup_ratio_minus": float(np.max(mm / rr ** (d_hat - 0.5))),
        "inf_ratio_plus": float(np.min(mm / rr ** (d_hat + 0.5))),
    }
    return fit, stats


def content_ratio_experiment(field: GridField, gamma: float, d_gamma: float,
                             regions: Sequence[Region],
                             eps_list: Sequence[float],
                             moll_eps: Optional[float] = None) -> dict:
    """Ratio constancy test of the content ansatz across regions.

    For each covering radius eps and region A_i computes
    rho_i = N_eps(A_i) * eps^d_gamma / mu(A_i) and reports the coefficient of
    variation of {rho_i} per eps; the content theorem predicts CV -> 0.
    Regions lighter than 1e-6 of the total mass are dropped with a warning.
    """
    _, xi = constants_Q_xi(gamma, d_gamma)
    moll = field.spec.delta if moll_eps is None else moll_eps
    graph = build_lfpp_graph(field, xi, moll)
    mu = gmc_from_field(field, gamma, moll)
    masses, masks = [], []
    for i, reg in enumerate(regions):
        m = measure_of(mu, reg)
        if m < 1e-6 * mu.total:
            warnings.warn(f"region {i} dropped: mass below 1e-6 of total")
            continue
        masses.append(m)
        masks.append(reg.mask(field.spec))
    if not masses:
        raise ValidationError("no region kept")
    rows = []
    cv_per_eps = {}
    for eps in eps_list:
        ratios = []
        for i, (mass, mask) in enumerate(zip(masses, masks)):
            cover = greedy_cover(CellSet(field.spec, mask), graph, float(eps))
            rho = cover.count * eps ** d_gamma / mass
            ratios.append(rho)
            rows.append({"eps": float(eps), "region": i, "count": cover.count,
                         "mass": mass, "ratio": rho})
        ratios = np.array(ratios)
        cv = float(ratios.std(ddof=1) / ratios.mean()) if len(ratios) > 1 else 0.0
        cv_per_eps[float(eps)] = cv
    return {"rows": rows, "cv_per_eps": cv_per_eps}


def estimate_rescaling_coefficients(eps_grid: Sequence[float],
                                    counts: np.ndarray) -> RescalingCoefficients:
    """Ensemble-mean cover counts as rescaling coefficients.

    counts: array (n_samples, n_eps) of cover counts per sample and eps level.
    Fits the dimension of the mean counts, brackets b_eps * eps^dim, and
    tabulates the regular-variation ratio test for r in {2, 4}.
    """
    eps_grid = np.asarray(eps_grid, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 2 or counts.shape[0] < 20:
        raise ValidationError("need an ensemble of at least 20 samples")
    if counts.shape[1] != len(eps_grid) or len(eps_grid) < 4:
        raise ValidationError("need at least 4 eps levels matching the counts")
    b = counts.mean(axis=0)
    fit = dimension_fit(list(zip(eps_grid, b)))
    delta_dim = fit.slope
    scaled = b * eps_grid ** delta_dim
    table = []
    for r in (2.0, 4.0):
        for i, e in enumerate(eps_grid):
            target = r * e
            # atol must be zero: eps levels can sit far below the default
            # absolute tolerance and would all collide
            j = np.flatnonzero(np.isclose(eps_grid, target, rtol=1e-9, atol=0.0))
            if len(j):
                table.append((r, float(e), float(b[j[0]] / b[i]),
                              float(r ** -delta_dim)))
    return RescalingCoefficients(eps_grid, b, float(delta_dim),
                                 float(scaled.min()), float(scaled.max()),
                                 tuple(table))
