"""Seeded Brownian increments on uniform grids, with exact coarsening.

Every increment is a pure function of ``(master_seed, sample_index, k, j)``.
Uniforms come from a Philox counter-based generator keyed by
``(master_seed, sample_index)`` whose counter high word carries the noise
column ``j``; the ``k``-th raw 64-bit output of that stream feeds an
inverse-CDF Gaussian.

Increments are snapped to the lattice ``2**-40``.  Any partial sum of
lattice values below ``2**12`` in magnitude is exact in double precision, so
coarsened increments do not depend on summation order.
"""

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .exceptions import UsageError

GENERATOR_ID = "philox4x64-ndtri-lattice40"
LATTICE = 2.0**-40
_INV_LATTICE = 2.0**40
_U53 = 2.0**-53


@dataclass(frozen=True)
class PathGrid:
    t_end: float
    steps: int

    def __post_init__(self):
        if not self.t_end > 0:
            raise UsageError("t_end must be positive")
        if int(self.steps) != self.steps or self.steps < 1:
            raise UsageError("steps must be a positive integer")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def step(self):
        return self.t_end / self.steps

    @property
    def times(self):
        return np.arange(self.steps + 1) * self.step

    @classmethod
    def dyadic(cls, t_end, exponent):
        """Grid with step ``2**-exponent``; ``t_end`` must be a multiple of it."""
        n = t_end * 2.0**exponent
        if n != int(n) or n < 1:
            raise UsageError(f"t_end={t_end:g} is not a multiple of 2^-{exponent}")
        return cls(float(t_end), int(n))

    def is_coarsenable(self):
        return self.steps & (self.steps - 1) == 0


@dataclass(frozen=True)
class BrownianPath:
    grid: PathGrid
    increments: np.ndarray  # (N, m)
    master_seed: int
    sample_index: int

    @property
    def noise_dim(self):
        return self.increments.shape[1]

    def values(self):
        """``B(t_k)`` for ``k = 0..N`` as an ``(N + 1, m)`` array."""
        out = np.zeros((self.grid.steps + 1, self.noise_dim))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out


def _check_seed(value, what):
    if int(value) != value or not 0 <= value < 2**64:
        raise UsageError(f"{what} must be an integer in [0, 2^64)")
    return int(value)


def _raw_stream(master_seed, sample_index, j, n):
    bitgen = np.random.Philox(key=[master_seed, sample_index], counter=j << 64)
    return bitgen.random_raw(n)


def standard_normals(master_seed, sample_index, steps, noise_dim):
    """``(steps, noise_dim)`` standard normals for one sample."""
    master_seed = _check_seed(master_seed, "master_seed")
    sample_index = _check_seed(sample_index, "sample_index")
    out = np.empty((steps, noise_dim))
    for j in range(noise_dim):
        raw = _raw_stream(master_seed, sample_index, j, steps)
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _U53
        out[:, j] = ndtri(u)
    return out


def _snap(x):
    return np.rint(x * _INV_LATTICE) * LATTICE


def sample_increments(grid, noise_dim, master_seed, sample_indices):
    """Increments for several samples, shape ``(len(sample_indices), N, m)``."""
    if noise_dim < 1:
        raise UsageError("noise_dim must be >= 1")
    scale = np.sqrt(grid.step)
    out = np.empty((len(sample_indices), grid.steps, noise_dim))
    for row, idx in enumerate(sample_indices):
        out[row] = standard_normals(master_seed, idx, grid.steps, noise_dim)
    return _snap(out * scale)


def sample_path(grid, noise_dim, master_seed, sample_index):
    inc = sample_increments(grid, noise_dim, master_seed, [sample_index])[0]
    return BrownianPath(grid, inc, int(master_seed), int(sample_index))


def coarsen_increments(increments, factor, axis=-2):
    """Sum consecutive blocks of ``factor`` increments along ``axis``, left to right."""
    factor = int(factor)
    if factor < 1 or factor & (factor - 1):
        raise UsageError(f"coarsening factor {factor} is not a power of two")
    inc = np.moveaxis(np.asarray(increments), axis, 0)
    n = inc.shape[0]
    if n % factor:
        raise UsageError(f"factor {factor} does not divide {n} steps")
    if factor == 1:
        return np.moveaxis(inc.copy(), 0, axis)
    blocks = inc.reshape((n // factor, factor) + inc.shape[1:])
    acc = blocks[:, 0].copy()
    for i in range(1, factor):
        acc += blocks[:, i]
    return np.moveaxis(acc, 0, axis)


def coarsen(path, factor):
    if path.grid.steps % int(factor):
        raise UsageError(f"factor {factor} does not divide {path.grid.steps} steps")
    grid = PathGrid(path.grid.t_end, path.grid.steps // int(factor))
    return BrownianPath(grid, coarsen_increments(path.increments, factor, axis=0),
                        path.master_seed, path.sample_index)


_HEADER = struct.Struct("<8sdqqQQ")
_MAGIC = b"BMPATH01"


def dump_path(path, fp):
    """Write ``path`` as a little-endian binary record.

    Header: magic, T (f64), N (i64), m (i64), master_seed (u64),
    sample_index (u64); body: N*m f64 values row-major over ``(k, j)``.
    """
    fp.write(_HEADER.pack(_MAGIC, path.grid.t_end, path.grid.steps, path.noise_dim,
                          path.master_seed, path.sample_index))
    fp.write(np.ascontiguousarray(path.increments, dtype="<f8").tobytes())


def load_path(fp):
    magic, t_end, n, m, seed, idx = _HEADER.unpack(fp.read(_HEADER.size))
    if magic != _MAGIC:
        raise UsageError("not a Brownian path dump")
    body = np.frombuffer(fp.read(8 * n * m), dtype="<f8").reshape(n, m)
    return BrownianPath(PathGrid(t_end, n), body.astype(float), seed, idx)
