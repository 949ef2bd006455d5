"""lqglab: a desk-scale numerical laboratory for Liouville quantum gravity.

Subpackages
-----------
- :mod:`lqglab.gaussian_field` -- GFF / quantum-cone samplers, circle averages
- :mod:`lqglab.gmc`            -- multiplicative-chaos area measures
- :mod:`lqglab.lfpp`           -- weighted-grid first-passage metrics
- :mod:`lqglab.fractal`        -- covering/packing numbers and scaling fits
- :mod:`lqglab.mating`         -- boundary-length processes and mated maps
- :mod:`lqglab.harness`        -- experiment orchestration and persistence
"""

from .grids import (CellSet, FieldKind, GridField, GridSpec, NumericalError,
                    ValidationError)

__version__ = "0.1.0"

__all__ = [
    "CellSet", "FieldKind", "GridField", "GridSpec",
    "NumericalError", "ValidationError", "__version__",
]
