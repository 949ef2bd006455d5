"""Whole-plane Gaussian free fields and quantum-cone fields on a lattice.

The lattice value at a cell stands for the circle average of the continuum
field at radius ``delta/2`` around the cell center.  With that reading the
covariance matrix of the exact sampler is a genuine Gram matrix (positive
semidefinite by construction), while every pair of distinct cells keeps the
log-kernel covariance

    G(z, w) = log( max(|z|,1) * max(|w|,1) / |z - w| )

exactly, apart from cells whose delta/2-circle straddles the unit circle
(handled by explicit quadrature).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .grids import (CellSet, FieldKind, GridField, GridSpec, NumericalError,
                    ValidationError, interpolate_bilinear)

# geometric spacing (in t = log r) of tabulated radial profiles; the grid is
# anchored at r = 1 so that r = 1 and all dyadic radii are exact knots
RADIAL_T_STEP = math.log(2.0) / 32.0
# Euler grid for the quantum-cone radial path, in t = -log r
CONE_PATH_DT = 1.0e-3
# retry budget for the negative-time conditioning of the quantum cone
CONE_REJECTION_BUDGET = 100_000

__all__ = [
    "covariance_G", "constants_Q_xi", "circle_average", "heat_kernel_mollify",
    "sample_gff_exact", "sample_gff_exact_ensemble", "sample_gff_spectral",
    "sample_quantum_cone", "radial_lateral_decompose", "RadialLateralParts",
    "CircleAverageProcess", "circle_average_process", "child_seed",
]


# ---------------------------------------------------------------------------
# constants and kernels


def covariance_G(z, w):
    """Whole-plane GFF covariance kernel, normalized so h_1(0) = 0.

    Accepts scalars or broadcastable arrays.  Diverges on the diagonal, so
    coincident points are a domain error.
    """
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    sep = np.abs(z - w)
    if np.any(sep == 0):
        raise ValidationError("covariance kernel diverges at z == w")
    out = np.log(np.maximum(np.abs(z), 1.0) * np.maximum(np.abs(w), 1.0) / sep)
    return out if out.ndim else float(out)


def constants_Q_xi(gamma: float, d_gamma: float) -> tuple[float, float]:
    """Background charge Q = gamma/2 + 2/gamma and distance exponent xi = gamma/d_gamma."""
    if not 0 < gamma < 2:
        raise ValidationError(f"gamma must lie in (0, 2), got {gamma}")
    if not d_gamma > 2:
        raise ValidationError(f"the fractal dimension must exceed 2, got {d_gamma}")
    return gamma / 2.0 + 2.0 / gamma, gamma / d_gamma


# ---------------------------------------------------------------------------
# circle averages


def circle_average(field: GridField, z: complex, r: float) -> float:
    """Average of the field over the circle |w - z| = r.

    Trapezoid rule over max(16, ceil(2*pi*r/delta)) equispaced angles with
    bilinear interpolation; for a periodic integrand on equispaced nodes the
    trapezoid rule reduces to the plain mean.
    """
    spec = field.spec
    if r < 2 * spec.delta:
        raise ValidationError(f"circle radius {r} is below 2*delta = {2*spec.delta}")
    if not spec.contains_circle(z, r):
        raise ValidationError(f"circle of radius {r} at {z} exits the grid")
    m = max(16, int(math.ceil(2 * math.pi * r / spec.delta)))
    theta = 2 * np.pi * np.arange(m) / m
    x = z.real + r * np.cos(theta)
    y = z.imag + r * np.sin(theta)
    return float(interpolate_bilinear(field.values, spec, x, y).mean())


@dataclass(frozen=True)
class CircleAverageProcess:
    """Circle averages h_{e^-t}(center) tabulated on a strictly increasing t grid."""

    center: complex
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape:
            raise ValidationError("times and values must be matching 1-D arrays")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("time grid must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValidationError("circle-average values must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)


def circle_average_process(field: GridField, center: complex,
                           times: np.ndarray) -> CircleAverageProcess:
    """Evaluate t -> h_{e^-t}(center) on the given t grid."""
    values = np.array([circle_average(field, center, math.exp(-t)) for t in times])
    return CircleAverageProcess(center, np.asarray(times, dtype=float), values)


# ---------------------------------------------------------------------------
# heat-kernel mollification


def heat_kernel_mollify(field: GridField, eps: float) -> GridField:
    """Convolve with the heat kernel at time eps^2/2, truncated at radius 4*eps.

    The discrete kernel is renormalized to unit mass, and edge cells are
    corrected by normalized convolution (dividing by the local kernel mass),
    which preserves constants exactly.
    """
    from scipy.signal import fftconvolve

    spec = field.spec
    if eps < spec.delta:
        raise ValidationError(
            f"mollification scale {eps} below lattice spacing {spec.delta}")
    half = int(math.ceil(4 * eps / spec.delta))
    off = np.arange(-half, half + 1) * spec.delta
    rr = off[:, None] ** 2 + off[None, :] ** 2
    kernel = np.exp(-rr / eps ** 2)
    kernel[rr > (4 * eps) ** 2] = 0.0
    kernel /= kernel.sum()
    num = fftconvolve(field.values, kernel, mode="same")
    den = fftconvolve(np.ones_like(field.values), kernel, mode="same")
    return field.with_values(num / den, FieldKind.DERIVED,
                             note=f"heat-kernel mollified at eps={eps}")


# ---------------------------------------------------------------------------
# exact sampler (dense factorization)

_EXACT_GUARD_N = 64


def _straddle_mean_logmax(z: np.ndarray, r: float, n_theta: int = 512) -> np.ndarray:
    """Circle average of log max(|u|, 1) over |u - z| = r by quadrature."""
    theta = (np.arange(n_theta) + 0.5) * (2 * np.pi / n_theta)
    u = z[:, None] + r * np.exp(1j * theta)[None, :]
    return np.log(np.maximum(np.abs(u), 1.0)).mean(axis=1)


@functools.lru_cache(maxsize=4)
def _exact_factor(spec: GridSpec) -> np.ndarray:
    """Cholesky factor of the lattice covariance (circle averages at delta/2)."""
    z = spec.cell_centers().ravel()
    r = spec.delta / 2.0
    m = np.log(np.maximum(np.abs(z), 1.0))
    straddle = np.abs(np.abs(z) - 1.0) < r + spec.delta
    if np.any(straddle):
        m[straddle] = _straddle_mean_logmax(z[straddle], r)
    with np.errstate(divide="ignore"):
        cov = m[:, None] + m[None, :] - np.log(np.abs(z[:, None] - z[None, :]))
    np.fill_diagonal(cov, 2 * m + math.log(2.0 / spec.delta))
    for jitter in (0.0, 1e-10):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(len(z)))
        except np.linalg.LinAlgError:
            continue
    lo = float(np.linalg.eigvalsh(cov)[0])
    raise NumericalError(
        f"lattice covariance is not positive definite (smallest eigenvalue {lo:.3e})")


_EXACT_NOTE = ("exact dense sampler; cell value = circle average at delta/2, "
               "h_1(0) = 0 normalization")


def sample_gff_exact(spec: GridSpec, seed: int) -> GridField:
    """One exact draw of the lattice whole-plane GFF (dense Cholesky).

    Guarded to n <= 64; larger grids should use :func:`sample_gff_spectral`.
    Deterministic in (spec, seed).
    """
    if spec.n > _EXACT_GUARD_N:
        raise ValidationError(
            f"exact sampler is limited to n <= {_EXACT_GUARD_N} "
            f"(got n = {spec.n}); use sample_gff_spectral for large grids")
    factor = _exact_factor(spec)
    g = np.random.default_rng(seed).standard_normal(spec.n * spec.n)
    values = (factor @ g).reshape(spec.n, spec.n)
    return GridField(spec, values, FieldKind.WHOLE_PLANE_GFF, seed=seed,
                     normalization_note=_EXACT_NOTE)


def child_seed(seed: int, index: int) -> int:
    """Derived 64-bit seed for ensemble member ``index`` of stream ``seed``."""
    return int(np.random.SeedSequence((seed, index)).generate_state(1, np.uint64)[0])


def sample_gff_exact_ensemble(spec: GridSpec, seed: int, count: int) -> np.ndarray:
    """Stack of ``count`` exact draws, member i seeded by child_seed(seed, i).

    Returns an array of shape (count, n, n); member i is bitwise equal to
    ``sample_gff_exact(spec, child_seed(seed, i)).values``.
    """
    if spec.n > _EXACT_GUARD_N:
        raise ValidationError(f"exact sampler is limited to n <= {_EXACT_GUARD_N}")
    factor = _exact_factor(spec)
    n2 = spec.n * spec.n
    g = np.empty((n2, count))
    for i in range(count):
        g[:, i] = np.random.default_rng(child_seed(seed, i)).standard_normal(n2)
    return np.ascontiguousarray(
        (factor @ g).T.reshape(count, spec.n, spec.n))


# ---------------------------------------------------------------------------
# radial profiles (circle-average part around the grid origin)


def radial_profile_radii(delta: float, r_min: float, r_max: float,
                         t_step: float = RADIAL_T_STEP) -> np.ndarray:
    """Geometric radius grid covering [r_min, r_max], anchored at r = 1.

    Interior knots sit at r = exp(k * t_step) for integer k, so r = 1 and all
    dyadic radii (t_step divides log 2) are exact knots whenever they lie in
    range; the endpoints r_min and r_max are appended to preserve coverage.
    """
    if not 0 < r_min < r_max:
        raise ValidationError(f"need 0 < r_min < r_max, got [{r_min}, {r_max}]")
    k_lo = math.ceil(math.log(r_min) / t_step - 1e-12)
    k_hi = math.floor(math.log(r_max) / t_step + 1e-12)
    knots = np.exp(np.arange(k_lo, k_hi + 1) * t_step)
    radii = np.unique(np.concatenate([[r_min], knots, [r_max]]))
    return radii[(radii >= r_min) & (radii <= r_max)]


def _measure_radial_profile(values: np.ndarray, spec: GridSpec,
                            radii: np.ndarray) -> np.ndarray:
    """Circle averages of raw grid values around spec.origin at each radius."""
    out = np.empty(len(radii))
    for i, r in enumerate(radii):
        m = max(16, int(math.ceil(2 * math.pi * r / spec.delta)))
        theta = 2 * np.pi * np.arange(m) / m
        x = spec.origin.real + r * np.cos(theta)
        y = spec.origin.imag + r * np.sin(theta)
        out[i] = interpolate_bilinear(values, spec, x, y).mean()
    return out


def _interp_radial(radii: np.ndarray, profile: np.ndarray,
                   rho: np.ndarray) -> np.ndarray:
    """Evaluate a tabulated radial profile at radii rho (linear in log r, clamped)."""
    t = np.log(np.clip(rho, radii[0], radii[-1]))
    return np.interp(t, np.log(radii), profile)


# ---------------------------------------------------------------------------
# spectral sampler (large grids)


@functools.lru_cache(maxsize=1)
def _log_kernel_eigs(n_big: int, delta: float) -> tuple[np.ndarray, float]:
    """FFT eigenvalues of the min-image log kernel on an n_big x n_big torus.

    The DC mode is zeroed (the additive constant is replaced by the exact
    radial process later) and negative eigenvalues are clipped; the clipped
    fraction of total spectral mass is returned for diagnostics.
    """
    idx = np.arange(n_big)
    d1 = np.minimum(idx, n_big - idx) * delta
    dist = np.hypot(d1[:, None], d1[None, :])
    log_r_big = math.log(n_big * delta)
    with np.errstate(divide="ignore"):
        kernel = log_r_big - np.log(dist)
    kernel[0, 0] = log_r_big + math.log(2.0 / delta)
    eigs = np.fft.fft2(kernel).real
    eigs[0, 0] = 0.0
    neg = eigs < 0
    clipped = float(-eigs[neg].sum() / np.abs(eigs).sum()) if neg.any() else 0.0
    eigs[neg] = 0.0
    eigs.setflags(write=False)
    return eigs, clipped


def _sample_stationary_log_field(n_big: int, delta: float,
                                 rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """One stationary log-correlated field on the torus via circulant embedding."""
    eigs, clipped = _log_kernel_eigs(n_big, delta)
    noise = rng.standard_normal((2, n_big, n_big))
    spectral = np.sqrt(eigs) * (noise[0] + 1j * noise[1])
    sample = np.fft.ifft2(spectral).real * n_big  # sqrt(N) with N = n_big^2
    return sample, clipped


def _two_sided_bm_at(t_values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Exact sample of a two-sided standard BM (B_0 = 0) at arbitrary times."""
    out = np.zeros_like(t_values)
    for sign in (1.0, -1.0):
        sel = np.flatnonzero(sign * t_values > 0)
        if len(sel) == 0:
            continue
        ts = np.abs(t_values[sel])
        order = np.argsort(ts)
        incr = np.sqrt(np.diff(np.concatenate([[0.0], ts[order]])))
        path = np.cumsum(incr * rng.standard_normal(len(sel)))
        out[sel[order]] = path
    return out


_SPECTRAL_NOTE = ("spectral sampler: circulant log-kernel synthesis on a 3n torus, "
                  "measured radial part swapped for an exact two-sided Brownian "
                  "motion in t = -log r; h_1(0) = 0 normalization")


def _spectral_lateral(spec: GridSpec, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Lateral (zero-circle-average) field on spec via the big-torus synthesis."""
    n, delta = spec.n, spec.delta
    n_big = 3 * n
    big, clipped = _sample_stationary_log_field(n_big, delta, rng)
    big_spec = GridSpec(n_big, delta, spec.origin)
    rho_max = math.sqrt(2.0) * spec.extent
    radii = radial_profile_radii(delta, 2 * delta, rho_max + 2 * delta)
    profile = _measure_radial_profile(big, big_spec, radii)
    window = big[n:2 * n, n:2 * n]
    rho = np.abs(spec.cell_centers() - spec.origin)
    return window - _interp_radial(radii, profile, rho), clipped


def sample_gff_spectral(spec: GridSpec, seed: int) -> GridField:
    """Approximate whole-plane-GFF draw for large grids, O(n^2 log n).

    Requires n to be a power of two with n >= 64.  The lateral part comes from
    FFT synthesis of the stationary log kernel on a wrap-free enlarged torus
    (its own measured radial part subtracted); the radial part is an exact
    two-sided Brownian motion in t = -log|z - origin|.  Bias against the exact
    sampler is quantified on overlapping grid sizes in the test suite.
    """
    n = spec.n
    if n < 64:
        raise ValidationError(f"spectral sampler needs n >= 64, got {n}")
    if n & (n - 1):
        raise ValidationError(f"spectral sampler needs n to be a power of two, got {n}")
    lat_ss, rad_ss = np.random.SeedSequence(seed).spawn(2)
    lateral, clipped = _spectral_lateral(spec, np.random.default_rng(lat_ss))
    rho = np.abs(spec.cell_centers() - spec.origin)
    t_cell = -np.log(rho.ravel())
    radial = _two_sided_bm_at(t_cell, np.random.default_rng(rad_ss)).reshape(n, n)
    note = _SPECTRAL_NOTE + f"; clipped spectral mass {clipped:.2e}"
    return GridField(spec, lateral + radial, FieldKind.WHOLE_PLANE_GFF,
                     seed=seed, normalization_note=note)


# ---------------------------------------------------------------------------
# quantum cone


def _sample_cone_radial(rng: np.random.Generator, t_pos: np.ndarray,
                        s_neg: np.ndarray, cond_horizon: float, q: float,
                        gamma: float, budget: int = CONE_REJECTION_BUDGET):
    """Radial process A_t of the cone on explicit Euler grids.

    Positive times: A_t = B_t + gamma*t with B a standard BM.  Negative times
    (s = -t): A = Bhat_s + gamma*t where Bhat is a standard BM accepted only if
    Bhat_s + (Q - gamma)*s > 0 at every grid point with s <= cond_horizon.
    Returns (A_pos, A_neg, Bhat, tries).
    """
    b_pos = np.concatenate(
        [[0.0], np.cumsum(np.sqrt(np.diff(t_pos)) * rng.standard_normal(len(t_pos) - 1))])
    a_pos = b_pos + gamma * t_pos

    cond = (s_neg > 0) & (s_neg <= cond_horizon)
    drift_floor = -(q - gamma) * s_neg[cond]
    batch = 256
    tries = 0
    while tries < budget:
        m = min(batch, budget - tries)
        incr = np.sqrt(np.diff(s_neg)) * rng.standard_normal((m, len(s_neg) - 1))
        paths = np.concatenate([np.zeros((m, 1)), np.cumsum(incr, axis=1)], axis=1)
        ok = np.flatnonzero((paths[:, cond] > drift_floor).all(axis=1))
        tries += m
        if len(ok):
            bhat = paths[ok[0]]
            a_neg = bhat + gamma * (-s_neg)
            return a_pos, a_neg, bhat, tries
    raise NumericalError(
        f"negative-time conditioning not met in {budget} tries "
        f"(acceptance rate < {1.0 / budget:.1e})")


def sample_quantum_cone(spec: GridSpec, gamma: float, seed: int) -> GridField:
    """Circle-average embedded gamma-quantum cone field on the grid.

    Radial part: drifted Brownian motion A_t (conditioned on the negative-time
    side by rejection on the simulated horizon); lateral part: lateral part of
    a whole-plane GFF sample (spectral synthesis for n >= 64 powers of two,
    exact sampler otherwise).  A_0 = 0, so the circle-average embedding
    normalization holds by construction.
    """
    if not 0 < gamma < 2:
        raise ValidationError(f"gamma must lie in (0, 2), got {gamma}")
    if not spec.contains_circle(spec.origin, 1.0):
        raise ValidationError("grid must contain the unit circle around its origin")
    q, _ = constants_Q_xi(gamma, 4.0)  # xi unused here; any d > 2 gives the same Q

    lat_ss, rad_ss = np.random.SeedSequence(seed).spawn(2)
    n = spec.n
    if n >= 64 and not (n & (n - 1)):
        lateral, _ = _spectral_lateral(spec, np.random.default_rng(lat_ss))
    else:
        base = sample_gff_exact(spec, child_seed(seed, 0))
        parts = radial_lateral_decompose(base)
        lateral = parts.lateral.values

    rho = np.abs(spec.cell_centers() - spec.origin)
    rho_max = float(rho.max()) + spec.delta
    rho_min = max(float(rho.min()) / 2.0, spec.delta / 8.0)
    t_pos = np.arange(0.0, -math.log(rho_min) + CONE_PATH_DT, CONE_PATH_DT)
    s_neg = np.arange(0.0, math.log(rho_max) + CONE_PATH_DT, CONE_PATH_DT)
    a_pos, a_neg, _, _ = _sample_cone_radial(
        np.random.default_rng(rad_ss), t_pos, s_neg,
        cond_horizon=math.log(spec.extent), q=q, gamma=gamma)

    t_cell = -np.log(rho.ravel())
    radial = np.where(
        t_cell >= 0,
        np.interp(t_cell, t_pos, a_pos),
        np.interp(-t_cell, s_neg, a_neg)).reshape(n, n)
    field = GridField(spec, lateral + radial, FieldKind.QUANTUM_CONE, gamma=gamma,
                      seed=seed)
    # discrete circle-average embedding: anchor the additive constant so the
    # measured unit-circle average vanishes exactly on the lattice (A_0 = 0
    # holds for the ideal path; quadrature smoothing would otherwise leave an
    # O(sqrt(delta)) residual)
    anchor = circle_average(field, spec.origin, 1.0)
    return GridField(spec, field.values - anchor, FieldKind.QUANTUM_CONE,
                     gamma=gamma, seed=seed,
                     normalization_note="quantum cone, circle-average embedding "
                                        "(unit-circle average anchored to 0)")


# ---------------------------------------------------------------------------
# radial/lateral decomposition


@dataclass(frozen=True)
class RadialLateralParts:
    """Tabulated circle-average part and the lateral remainder of a field."""

    radii: np.ndarray
    radial_values: np.ndarray
    lateral: GridField

    def radial_at(self, r) -> np.ndarray:
        return _interp_radial(self.radii, self.radial_values, np.asarray(r, dtype=float))


def radial_lateral_decompose(field: GridField) -> RadialLateralParts:
    """Split a field into its circle-average (radial) and lateral parts.

    The radial part is tabulated on a geometric radius grid covering
    [2*delta, extent - delta] and interpolated per cell (linear in log r);
    outside that annulus the profile is clamped, so cells beyond the
    inscribed circle (grid corners) keep their unresolved radial component
    inside the lateral part.  The lateral part is the exact residual, so
    radial + lateral reconstructs the input to machine precision everywhere.
    """
    spec = field.spec
    r_min, r_max = 2 * spec.delta, spec.extent - spec.delta
    if r_max <= r_min:
        raise ValidationError("grid too small to tabulate an annulus of radii "
                              f"[{r_min}, {spec.extent}]")
    radii = radial_profile_radii(spec.delta, r_min, r_max)
    profile = _measure_radial_profile(field.values, spec, radii)
    rho = np.abs(spec.cell_centers() - spec.origin)
    lateral_values = field.values - _interp_radial(radii, profile, rho)
    lateral = field.with_values(lateral_values, FieldKind.DERIVED,
                                note="lateral part (circle averages removed)")
    return RadialLateralParts(radii, profile, lateral)
