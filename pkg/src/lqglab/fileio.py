"""Binary cache formats.  All integers and floats are little-endian.

LQGF (field):   magic "LQGF", version u16, kind u8, n u32, delta f64,
                origin re/im f64, gamma f64 (NaN when not meaningful),
                seed u64, then n^2 f64 cell values row-major (C order).
LQGM (measure): magic "LQGM", version u16, n u32, delta f64, origin re/im
                f64, gamma f64, eps f64, then n^2 f64 masses row-major.
LQGS (cellset): magic "LQGS", version u16, n u32, run count u32, then
                alternating u32 run lengths of the flattened mask starting
                with a zeros-run (possibly of length 0).
LQGB (LR pair): magic "LQGB", version u16, kappa_prime f64, a f64, dt f64,
                sample count u64, then count pairs (L_i, R_i) interleaved f64.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .gmc import GridMeasure
from .grids import CellSet, FieldKind, GridField, GridSpec, ValidationError
from .mating import BoundaryLengthProcess

__all__ = ["write_field", "read_field", "write_measure", "read_measure",
           "write_cellset", "read_cellset", "write_lr", "read_lr"]

_VERSION = 1


def _expect(cond: bool, message: str):
    if not cond:
        raise ValidationError(message)


def write_field(path, field: GridField):
    spec = field.spec
    with open(path, "wb") as fh:
        fh.write(b"LQGF")
        fh.write(struct.pack("<HBIddddQ", _VERSION,
                             int(field.kind), spec.n, spec.delta,
                             spec.origin.real, spec.origin.imag,
                             field.gamma, field.seed & (2 ** 64 - 1)))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_field(path) -> GridField:
    raw = Path(path).read_bytes()
    _expect(raw[:4] == b"LQGF", "bad magic; not a field cache file")
    header = struct.Struct("<HBIddddQ")
    version, kind, n, delta, ore, oim, gamma, seed = header.unpack_from(raw, 4)
    _expect(version == _VERSION, f"unsupported field-file version {version}")
    values = np.frombuffer(raw, dtype="<f8", count=n * n,
                           offset=4 + header.size).reshape(n, n)
    return GridField(GridSpec(n, delta, complex(ore, oim)),
                     values.astype(np.float64), FieldKind(kind),
                     gamma=gamma, seed=int(seed))


def write_measure(path, measure: GridMeasure):
    spec = measure.spec
    with open(path, "wb") as fh:
        fh.write(b"LQGM")
        fh.write(struct.pack("<HIddddd", _VERSION, spec.n, spec.delta,
                             spec.origin.real, spec.origin.imag,
                             measure.gamma, measure.eps))
        fh.write(np.ascontiguousarray(measure.masses, dtype="<f8").tobytes())


def read_measure(path) -> GridMeasure:
    raw = Path(path).read_bytes()
    _expect(raw[:4] == b"LQGM", "bad magic; not a measure cache file")
    header = struct.Struct("<HIddddd")
    version, n, delta, ore, oim, gamma, eps = header.unpack_from(raw, 4)
    _expect(version == _VERSION, f"unsupported measure-file version {version}")
    masses = np.frombuffer(raw, dtype="<f8", count=n * n,
                           offset=4 + header.size).reshape(n, n)
    return GridMeasure(GridSpec(n, delta, complex(ore, oim)),
                       masses.astype(np.float64), gamma, eps)


def _run_lengths(flat: np.ndarray) -> np.ndarray:
    changes = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], changes, [len(flat)]])
    runs = np.diff(bounds)
    if flat[0]:  # must start with a zeros-run
        runs = np.concatenate([[0], runs])
    return runs.astype(np.uint32)


def write_cellset(path, cells: CellSet):
    flat = cells.mask.ravel().astype(np.uint8)
    runs = _run_lengths(flat)
    with open(path, "wb") as fh:
        fh.write(b"LQGS")
        fh.write(struct.pack("<HII", _VERSION, cells.spec.n, len(runs)))
        fh.write(runs.astype("<u4").tobytes())


def read_cellset(path, spec: GridSpec | None = None) -> CellSet:
    raw = Path(path).read_bytes()
    _expect(raw[:4] == b"LQGS", "bad magic; not a cell-set file")
    version, n, nruns = struct.unpack_from("<HII", raw, 4)
    _expect(version == _VERSION, f"unsupported cell-set version {version}")
    runs = np.frombuffer(raw, dtype="<u4", count=nruns, offset=4 + 10)
    _expect(int(runs.sum()) == n * n, "run lengths do not tile the grid")
    flat = np.zeros(n * n, dtype=bool)
    pos = 0
    for i, run in enumerate(runs):
        if i % 2 == 1:
            flat[pos:pos + run] = True
        pos += int(run)
    if spec is None:
        spec = GridSpec(n, 1.0)
    _expect(spec.n == n, "cell-set grid size does not match the given spec")
    return CellSet(spec, flat.reshape(n, n))


def write_lr(path, process: BoundaryLengthProcess):
    pair = np.empty((len(process.L), 2))
    pair[:, 0] = process.L
    pair[:, 1] = process.R
    with open(path, "wb") as fh:
        fh.write(b"LQGB")
        fh.write(struct.pack("<HdddQ", _VERSION, process.kappa_prime,
                             process.a, process.dt, len(process.L)))
        fh.write(np.ascontiguousarray(pair, dtype="<f8").tobytes())


def read_lr(path) -> BoundaryLengthProcess:
    raw = Path(path).read_bytes()
    _expect(raw[:4] == b"LQGB", "bad magic; not a boundary-length file")
    header = struct.Struct("<HdddQ")
    version, kappa, a, dt, count = header.unpack_from(raw, 4)
    _expect(version == _VERSION, f"unsupported LR-file version {version}")
    pair = np.frombuffer(raw, dtype="<f8", count=2 * count,
                         offset=4 + header.size).reshape(count, 2)
    return BoundaryLengthProcess(kappa, a, dt,
                                 pair[:, 0].astype(np.float64),
                                 pair[:, 1].astype(np.float64))
