"""Shared fixtures: small deterministic field ensembles reused across modules."""

import numpy as np
import pytest

from lqglab.grids import GridSpec
from lqglab import gaussian_field as gf

SEED = 20240811


@pytest.fixture(scope="session")
def spec32():
    return GridSpec(32, 4 / 32)


@pytest.fixture(scope="session")
def spec64():
    return GridSpec(64, 4 / 64)


@pytest.fixture(scope="session")
def exact_ensemble_32(spec32):
    """4000 exact GFF draws on the 32x32 grid (shape (4000, 32, 32))."""
    return gf.sample_gff_exact_ensemble(spec32, SEED, 4000)


@pytest.fixture(scope="session")
def exact_ensemble_64(spec64):
    """1500 exact GFF draws on the 64x64 grid."""
    return gf.sample_gff_exact_ensemble(spec64, SEED + 1, 1500)
