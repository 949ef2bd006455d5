import math

import numpy as np
import pytest
from scipy import ndimage

from lqglab.grids import (CellSet, FieldKind, GridField, GridSpec,
                          ValidationError, resample_affine)
from lqglab.gaussian_field import constants_Q_xi, sample_gff_spectral
from lqglab import lfpp

from oracles import enumerate_distances

SQRT2 = math.sqrt(2.0)


def flat_graph(n=6, delta=1.0, xi=1.0, level=0.0):
    spec = GridSpec(n, delta)
    fld = GridField(spec, np.full((n, n), level), FieldKind.DERIVED)
    return lfpp.build_lfpp_graph(fld, xi=xi, eps=delta)


def random_graph(n, seed, delta=1.0, xi=1.0, sigma=0.6):
    spec = GridSpec(n, delta)
    rng = np.random.default_rng(seed)
    fld = GridField(spec, sigma * rng.standard_normal((n, n)), FieldKind.DERIVED)
    return lfpp.build_lfpp_graph(fld, xi=xi, eps=delta)


# ---------------------------------------------------------------------------
# graph construction


def test_flat_graph_weights_and_costs():
    g = flat_graph()
    assert np.array_equal(g.vertex_weights, np.ones((6, 6)))
    assert g.edge_cost((0, 0), (0, 1)) == 1.0
    assert g.edge_cost((0, 0), (1, 1)) == pytest.approx(SQRT2, rel=1e-15)


def test_graph_constant_shift_scales_weights(spec32, exact_ensemble_32):
    fld = GridField(spec32, exact_ensemble_32[4], FieldKind.WHOLE_PLANE_GFF)
    xi, c = 0.4, 0.9
    g0 = lfpp.build_lfpp_graph(fld, xi, 2 * spec32.delta)
    g1 = lfpp.build_lfpp_graph(fld.with_values(fld.values + c), xi, 2 * spec32.delta)
    assert np.allclose(g1.vertex_weights, math.exp(xi * c) * g0.vertex_weights,
                       rtol=1e-12)


def test_graph_parameter_validation(spec32):
    fld = GridField(spec32, np.zeros((32, 32)), FieldKind.DERIVED)
    with pytest.raises(ValidationError):
        lfpp.build_lfpp_graph(fld, 0.0, 2 * spec32.delta)
    with pytest.raises(ValidationError):
        lfpp.build_lfpp_graph(fld, 0.4, 0.1 * spec32.delta)


# ---------------------------------------------------------------------------
# shortest paths


def test_uniform_grid_distance():
    g = flat_graph(6)
    df = lfpp.shortest_distances(g, (0, 0))
    assert df.dist[0, 0] == 0.0
    assert df.dist[3, 4] == pytest.approx(3 * SQRT2 + 1, rel=1e-14)
    oracle = enumerate_distances(g.vertex_weights, 1.0, (0, 0))
    assert np.array_equal(df.dist, oracle)


def test_heap_solver_equals_enumeration_random():
    rng = np.random.default_rng(4242)
    for _ in range(60):
        n = int(rng.integers(2, 5))
        w = np.exp(0.7 * rng.standard_normal((n, n)))
        spec = GridSpec(n, 1.0)
        g = lfpp.WeightedGrid(spec, 1.0, 1.0, w)
        src = (int(rng.integers(n)), int(rng.integers(n)))
        df = lfpp.distances_from(g, [src])
        oracle = enumerate_distances(w, 1.0, src)
        assert np.array_equal(df.dist, oracle)


def test_all_pairs_symmetry_5x5():
    g = random_graph(5, seed=11)
    n = 5
    dmat = np.empty((n * n, n * n))
    for j in range(n):
        for k in range(n):
            dmat[j * n + k] = lfpp.distances_from(g, [(j, k)]).dist.ravel()
    # undirected graph: asymmetry can only come from float accumulation order
    assert np.max(np.abs(dmat - dmat.T)) <= 4 * np.spacing(dmat.max())


def test_triangle_inequality_and_lipschitz():
    g = random_graph(12, seed=3)
    rng = np.random.default_rng(5)
    cells = [(int(a), int(b)) for a, b in rng.integers(0, 12, (4, 2))]
    dmats = {c: lfpp.distances_from(g, [c]).dist for c in cells}
    for a in cells:
        for b in cells:
            for c in cells:
                assert dmats[a][b] <= dmats[a][c[0], c[1]] + dmats[c][b] + 1e-12
    # 1-Lipschitz along edges
    d = dmats[cells[0]]
    for j in range(12):
        for k in range(12):
            for dj, dk in ((0, 1), (1, 0), (1, 1), (1, -1)):
                vj, vk = j + dj, k + dk
                if 0 <= vj < 12 and 0 <= vk < 12:
                    cost = g.edge_cost((j, k), (vj, vk))
                    assert abs(d[j, k] - d[vj, vk]) <= cost + 1e-12


def test_extract_path_runs_source_to_target():
    g = random_graph(8, seed=9)
    df = lfpp.shortest_distances(g, (0, 0))
    path = lfpp.extract_path(df, (7, 7))
    assert path[0] == (0, 0) and path[-1] == (7, 7)
    cost = sum(g.edge_cost(path[i], path[i + 1]) for i in range(len(path) - 1))
    assert cost == pytest.approx(df.dist[7, 7], rel=1e-12)


# ---------------------------------------------------------------------------
# metric balls


def test_metric_ball_trivial_radii():
    g = flat_graph(9)
    assert lfpp.metric_ball(g, (4, 4), 0.0).size == 0
    assert (4, 4) in lfpp.metric_ball(g, (4, 4), 1e-9)


def test_metric_ball_unit_weights_nine_cells():
    g = flat_graph(9)
    ball = lfpp.metric_ball(g, (4, 4), 1.5)
    assert ball.size == 9
    jj, kk = np.nonzero(ball.mask)
    assert np.max(np.abs(jj - 4)) <= 1 and np.max(np.abs(kk - 4)) <= 1


def test_metric_balls_nested():
    g = random_graph(16, seed=21)
    df = lfpp.distances_from(g, [(8, 8)])
    rng = np.random.default_rng(0)
    for _ in range(100):
        r1, r2 = np.sort(rng.uniform(0, np.nanmax(df.dist[np.isfinite(df.dist)]), 2))
        b1 = df.dist < r1
        b2 = df.dist < r2
        assert not (b1 & ~b2).any()


def test_grid_topology_ball_contains_neighbors():
    g = random_graph(10, seed=33)
    center = (5, 5)
    max_cost = max(g.edge_cost(center, (5 + dj, 5 + dk))
                   for dj in (-1, 0, 1) for dk in (-1, 0, 1) if (dj, dk) != (0, 0))
    ball = lfpp.metric_ball(g, center, max_cost * 1.000001)
    assert ball.mask[4:7, 4:7].all()


def test_filled_ball_flat_field_equals_closed_ball():
    g = flat_graph(13)
    r = 3.2
    filled = lfpp.filled_metric_ball(g, (6, 6), r)
    closed = lfpp.distances_from(g, [(6, 6)], limit=r).dist <= r
    assert np.array_equal(filled.mask, closed)


def test_filled_ball_swallows_expensive_pocket():
    # cheap cells surround one expensive cell: the closed ball encloses it
    # without containing it, and filling adds it back
    spec = GridSpec(11, 1.0)
    w = np.ones((11, 11))
    w[6, 5] = 1e6
    g = lfpp.WeightedGrid(spec, 1.0, 1.0, w)
    r = 4.0
    closed = lfpp.distances_from(g, [(5, 5)], limit=r).dist <= r
    assert not closed[6, 5]
    filled = lfpp.filled_metric_ball(g, (5, 5), r)
    assert filled.mask[6, 5]
    assert filled.size == closed.sum() + 1


def test_filled_ball_topology_random():
    checked = 0
    seed = 0
    eight = np.ones((3, 3), dtype=bool)
    while checked < 100:
        seed += 1
        g = random_graph(16, seed=seed, sigma=1.0)
        df = lfpp.distances_from(g, [(8, 8)])
        r = np.quantile(df.dist[np.isfinite(df.dist)], 0.25)
        try:
            filled = lfpp.filled_metric_ball(g, (8, 8), r)
        except ValidationError:
            continue
        labels, count = ndimage.label(filled.mask, structure=eight)
        assert count == 1
        comp_labels, comp_count = ndimage.label(~filled.mask, structure=eight)
        assert comp_count == 1  # the border ring joins everything outside
        checked += 1


def test_filled_ball_refuses_boundary_contact():
    g = flat_graph(9)
    with pytest.raises(ValidationError):
        lfpp.filled_metric_ball(g, (4, 4), 100.0)


# ---------------------------------------------------------------------------
# internal metric


def test_internal_distance_full_region_matches_global():
    g = random_graph(10, seed=8)
    region = CellSet(g.spec, np.ones((10, 10), dtype=bool))
    df = lfpp.distances_from(g, [(0, 0)])
    for target in [(9, 9), (3, 7), (5, 5)]:
        assert lfpp.internal_distance(g, region, (0, 0), target) == \
            pytest.approx(df.dist[target], rel=1e-14)


def test_internal_distance_disconnected_blobs():
    g = flat_graph(10)
    mask = np.zeros((10, 10), dtype=bool)
    mask[:3, :3] = True
    mask[7:, 7:] = True
    region = CellSet(g.spec, mask)
    assert lfpp.internal_distance(g, region, (0, 0), (8, 8)) == np.inf


def test_internal_distance_corridor():
    g = flat_graph(10)
    mask = np.zeros((10, 10), dtype=bool)
    mask[0, :] = True   # along k
    mask[:, 9] = True   # along j
    region = CellSet(g.spec, mask)
    # L path (0,0) -> (0,8) -> diagonal corner hop -> (1,9) -> (9,9):
    # 16 axis steps plus one diagonal
    assert lfpp.internal_distance(g, region, (0, 0), (9, 9)) == \
        pytest.approx(16.0 + SQRT2, rel=1e-14)
    with pytest.raises(ValidationError):
        lfpp.internal_distance(g, region, (5, 5), (0, 0))


# ---------------------------------------------------------------------------
# Weyl scaling


def test_weyl_constant_exact():
    g = random_graph(12, seed=14, xi=0.4)
    c = 0.8
    fld = GridField(g.spec, np.full((12, 12), c), FieldKind.DERIVED)
    scaled = lfpp.weyl_scale(g, fld)
    d0 = lfpp.distances_from(g, [(3, 3)]).dist
    d1 = lfpp.distances_from(scaled, [(3, 3)]).dist
    sel = d0 > 0
    assert np.max(np.abs(d1[sel] / (math.exp(0.4 * c) * d0[sel]) - 1)) <= 1e-12


def test_weyl_zero_identity():
    g = random_graph(12, seed=14)
    fld = GridField(g.spec, np.zeros((12, 12)), FieldKind.DERIVED)
    scaled = lfpp.weyl_scale(g, fld)
    assert np.array_equal(scaled.vertex_weights, g.vertex_weights)


def test_weyl_sandwich_bounds():
    g = random_graph(12, seed=19, xi=0.5)
    rng = np.random.default_rng(2)
    f = rng.uniform(-0.5, 0.7, (12, 12))
    fld = GridField(g.spec, f, FieldKind.DERIVED)
    scaled = lfpp.weyl_scale(g, fld)
    d0 = lfpp.distances_from(g, [(6, 6)]).dist
    d1 = lfpp.distances_from(scaled, [(6, 6)]).dist
    lo = math.exp(0.5 * f.min())
    hi = math.exp(0.5 * f.max())
    sel = d0 > 0
    ratio = d1[sel] / d0[sel]
    assert np.all(ratio >= lo * (1 - 1e-12)) and np.all(ratio <= hi * (1 + 1e-12))


def test_weyl_spec_mismatch():
    g = random_graph(12, seed=1)
    other = GridField(GridSpec(12, 2.0), np.zeros((12, 12)), FieldKind.DERIVED)
    with pytest.raises(ValidationError):
        lfpp.weyl_scale(g, other)


# ---------------------------------------------------------------------------
# coordinate change (dyadic rescaling with resampled field)


def _coord_change_ratio(field, xi, q, eps, pairs):
    """Max relative mismatch of r^(1-xi*Q) * D_tilde(u,v) vs D(phi(u), phi(v))."""
    r = 2.0
    tilde = resample_affine(field, r, 0j, q)
    g = lfpp.build_lfpp_graph(field, xi, eps)
    gt = lfpp.build_lfpp_graph(tilde, xi, eps / r)
    worst = 0.0
    for u, v in pairs:
        pu = field.spec.nearest_cell(r * tilde.spec.cell_centers()[u])
        pv = field.spec.nearest_cell(r * tilde.spec.cell_centers()[v])
        d_big = lfpp.distances_from(g, [pu]).dist[pv]
        d_small = lfpp.distances_from(gt, [u]).dist[v]
        mapped = r ** (1 - xi * q) * d_small
        worst = max(worst, abs(mapped / d_big - 1.0))
    return worst


def test_coordinate_change_flat_exact():
    spec = GridSpec(64, 4 / 64)
    fld = GridField(spec, np.full((64, 64), 0.4), FieldKind.DERIVED)
    q, xi = constants_Q_xi(math.sqrt(8 / 3), 4.0)
    pairs = [((20, 32), (44, 32)), ((24, 24), (40, 44))]
    assert _coord_change_ratio(fld, xi, q, 4 * spec.delta, pairs) <= 1e-12


def test_coordinate_change_smooth_within_tolerance():
    spec = GridSpec(64, 4 / 64)
    zz = spec.cell_centers()
    fld = GridField(spec, 0.4 * zz.real + 0.3 * np.sin(zz.imag),
                    FieldKind.DERIVED)
    q, xi = constants_Q_xi(math.sqrt(8 / 3), 4.0)
    pairs = [((20, 32), (44, 32)), ((24, 24), (40, 44))]
    assert _coord_change_ratio(fld, xi, q, 4 * spec.delta, pairs) <= 0.05


def test_coordinate_change_mapped_path_near_optimal():
    # the rescaled argmin path, mapped back, is a near-optimal path upstairs
    spec = GridSpec(64, 4 / 64)
    zz = spec.cell_centers()
    fld = GridField(spec, 0.4 * zz.real + 0.3 * np.sin(zz.imag), FieldKind.DERIVED)
    q, xi = constants_Q_xi(math.sqrt(8 / 3), 4.0)
    r = 2.0
    tilde = resample_affine(fld, r, 0j, q)
    g = lfpp.build_lfpp_graph(fld, xi, 4 * spec.delta)
    gt = lfpp.build_lfpp_graph(tilde, xi, 2 * spec.delta)
    u, v = (20, 32), (44, 40)
    dft = lfpp.shortest_distances(gt, u)
    path_t = lfpp.extract_path(dft, v)
    snapped = [fld.spec.nearest_cell(r * tilde.spec.cell_centers()[c])
               for c in path_t]
    full = [snapped[0]]
    for c in snapped[1:]:
        prev = full[-1]
        if c == prev:
            continue
        if max(abs(c[0] - prev[0]), abs(c[1] - prev[1])) > 1:
            full.append(((c[0] + prev[0]) // 2, (c[1] + prev[1]) // 2))
        full.append(c)
    cost = sum(g.edge_cost(full[i], full[i + 1]) for i in range(len(full) - 1))
    d_big = lfpp.distances_from(g, [full[0]]).dist[full[-1]]
    assert d_big <= cost <= 1.05 * d_big


# ---------------------------------------------------------------------------
# circle-average distance bound


def test_distance_bound_flat_field_closed_form():
    spec = GridSpec(64, 1 / 64)
    fld = GridField(spec, np.zeros((64, 64)), FieldKind.DERIVED)
    gamma, d_gamma = math.sqrt(8 / 3), 4.0
    q, xi = constants_Q_xi(gamma, d_gamma)
    z = 0.125 + 0j
    bound, dist = lfpp.circle_average_distance_bound(fld, z, gamma, d_gamma,
                                                     t_step=0.002)
    t0, t1 = -math.log(abs(z) / 2), math.log(1 / spec.delta)
    a = xi * (q - gamma)
    b = xi * q
    exact = ((math.exp(-a * t0) - math.exp(-a * t1)) / a
             + (math.exp(-b * t0) - math.exp(-b * t1)) / b)
    assert bound == pytest.approx(exact, rel=1e-3)
    assert dist > 0


def test_distance_bound_monotone_in_horizon():
    spec = GridSpec(64, 1 / 64)
    fld = GridField(spec, np.zeros((64, 64)), FieldKind.DERIVED)
    gamma, d_gamma = 1.0, 4.0
    b1, _ = lfpp.circle_average_distance_bound(fld, 0.125 + 0j, gamma, d_gamma,
                                               t_max=3.0)
    b2, _ = lfpp.circle_average_distance_bound(fld, 0.125 + 0j, gamma, d_gamma,
                                               t_max=4.0)
    assert b2 >= b1


def test_distance_bound_preconditions():
    spec = GridSpec(64, 1 / 64)
    fld = GridField(spec, np.zeros((64, 64)), FieldKind.DERIVED)
    with pytest.raises(ValidationError):
        lfpp.circle_average_distance_bound(fld, 0.3 + 0j, 1.0, 4.0)
    with pytest.raises(ValidationError):
        lfpp.circle_average_distance_bound(fld, 0.01 + 0j, 1.0, 4.0)


def test_distance_bound_dominates_distance_on_gff():
    # Monte-Carlo rendering of the circle-average estimate: the measured
    # first-passage distance rarely exceeds a large multiple of the bound
    gamma, d_gamma = math.sqrt(8 / 3), 4.0
    spec = GridSpec(512, 4 / 512)
    hits = 0
    trials = 40
    for i in range(trials):
        fld = sample_gff_spectral(spec, 900 + i)
        bound, dist = lfpp.circle_average_distance_bound(
            fld, 0.2 + 0.1j, gamma, d_gamma)
        if dist <= 10 * bound:
            hits += 1
    assert hits / trials >= 0.9
