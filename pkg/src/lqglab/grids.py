"""Square-lattice carriers shared by every module.

A grid of ``n x n`` cells with spacing ``delta`` is centered at ``origin``;
cell centers are

    z[j, k] = origin + ((j + 1/2) * delta - extent) + 1j * ((k + 1/2) * delta - extent)

with ``extent = n * delta / 2``.  Index ``j`` runs along the real axis and
``k`` along the imaginary axis; flattened arrays are C-ordered ``(j, k)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class ValidationError(ValueError):
    """Raised when an operation is called outside its domain."""


class NumericalError(RuntimeError):
    """Raised when a numerical procedure fails (factorization, budget, ...)."""


class FieldKind(enum.IntEnum):
    WHOLE_PLANE_GFF = 0
    QUANTUM_CONE = 1
    DERIVED = 2


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the sampling lattice."""

    n: int
    delta: float
    origin: complex = 0j

    def __post_init__(self):
        if self.n < 2:
            raise ValidationError(f"need n >= 2 cells per side, got {self.n}")
        if not self.delta > 0:
            raise ValidationError(f"need delta > 0, got {self.delta}")

    @property
    def extent(self) -> float:
        return self.n * self.delta / 2.0

    def axis_coords(self) -> np.ndarray:
        """1-D coordinates of cell centers along either axis (origin-relative)."""
        return (np.arange(self.n) + 0.5) * self.delta - self.extent

    def cell_centers(self) -> np.ndarray:
        """Complex cell centers, shape (n, n), [j, k] = x-index, y-index."""
        c = self.axis_coords()
        return (self.origin + c[:, None] + 1j * c[None, :])

    def contains_circle(self, z: complex, r: float) -> bool:
        """True if the circle |w - z| = r stays within the cell-center hull."""
        dz = z - self.origin
        half = self.extent - self.delta / 2.0
        return (abs(dz.real) + r <= half) and (abs(dz.imag) + r <= half)

    def nearest_cell(self, z: complex) -> tuple[int, int]:
        dz = z - self.origin
        j = int(round((dz.real + self.extent) / self.delta - 0.5))
        k = int(round((dz.imag + self.extent) / self.delta - 0.5))
        if not (0 <= j < self.n and 0 <= k < self.n):
            raise ValidationError(f"point {z} lies outside the grid")
        return j, k


@dataclass(frozen=True)
class GridField:
    """A sampled real field on a :class:`GridSpec` with provenance."""

    spec: GridSpec
    values: np.ndarray  # shape (n, n), float64
    kind: FieldKind
    gamma: float = float("nan")
    seed: int = 0
    normalization_note: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.spec.n, self.spec.n):
            raise ValidationError(
                f"values shape {v.shape} != grid {(self.spec.n, self.spec.n)}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("field values must be finite")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def with_values(self, values: np.ndarray, kind: FieldKind = FieldKind.DERIVED,
                    note: str = "") -> "GridField":
        return GridField(self.spec, values, kind, self.gamma, self.seed,
                         note or self.normalization_note)


@dataclass(frozen=True)
class CellSet:
    """Boolean membership mask over the cells of a grid."""

    spec: GridSpec
    mask: np.ndarray  # shape (n, n), bool

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.shape != (self.spec.n, self.spec.n):
            raise ValidationError(
                f"mask shape {m.shape} != grid {(self.spec.n, self.spec.n)}")
        m = np.ascontiguousarray(m)
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    def indices(self) -> np.ndarray:
        """Flat indices (j * n + k) of member cells, ascending."""
        return np.flatnonzero(self.mask.ravel())

    def __contains__(self, jk: tuple[int, int]) -> bool:
        return bool(self.mask[jk])


def resample_affine(field: GridField, scale: float, shift: complex,
                    q: float) -> GridField:
    """The field h(scale * . + shift) + q log scale on a spacing-delta/scale grid.

    For the identity map the target lattice coincides with the source and the
    lookup is exact; otherwise the target is offset by a quarter cell along
    the diagonal, so sampling points interleave the source lattice (a genuine
    bilinear resampling) and dyadic-rational region boundaries stay away from
    target cell centers.  Sampling points in the outermost half-cell ring are
    clamped to the source hull.
    """
    import math

    spec = field.spec
    d_new = spec.delta / scale
    identity = math.isclose(scale, 1.0) and abs(shift) == 0
    off = 0j if identity else (d_new / 4) * (1 + 1j)
    new_spec = GridSpec(spec.n, d_new, (spec.origin - shift) / scale + off)
    z_new = new_spec.cell_centers()
    z_src = scale * z_new + shift
    vals = interpolate_bilinear(field.values, spec, z_src.real, z_src.imag)
    return GridField(
        new_spec, vals + q * math.log(scale), FieldKind.DERIVED,
        normalization_note=f"resampled: h({scale}*z + {shift}) + Q log {scale}")


def interpolate_bilinear(field_values: np.ndarray, spec: GridSpec,
                         x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of cell-center values at points (x, y).

    Coordinates are absolute (same frame as ``spec.origin``).  Points must lie
    within the convex hull of the cell centers; edge clamping is half a cell.
    """
    fx = (np.asarray(x) - spec.origin.real + spec.extent) / spec.delta - 0.5
    fy = (np.asarray(y) - spec.origin.imag + spec.extent) / spec.delta - 0.5
    fx = np.clip(fx, 0.0, spec.n - 1.0)
    fy = np.clip(fy, 0.0, spec.n - 1.0)
    j0 = np.minimum(fx.astype(np.int64), spec.n - 2)
    k0 = np.minimum(fy.astype(np.int64), spec.n - 2)
    tx = fx - j0
    ty = fy - k0
    v = field_values
    return ((1 - tx) * (1 - ty) * v[j0, k0]
            + tx * (1 - ty) * v[j0 + 1, k0]
            + (1 - tx) * ty * v[j0, k0 + 1]
            + tx * ty * v[j0 + 1, k0 + 1])
