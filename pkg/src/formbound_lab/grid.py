"""Uniform periodic box grids and spectral helpers shared by all modules."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class BoxGrid:
    """Uniform grid on the box [-L, L)^d with spacing h = 2L/n per axis.

    Nodes sit at x_i = -L + i*h, so the origin is a node when n is even.
    ``boundary`` is grid metadata; the spectral solvers require "periodic".
    """

    d: int
    half_width: float
    n: int
    boundary: str = "periodic"

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        if self.n < 2 or self.n % 2 != 0:
            raise ValueError("n must be even (spectral steps)")
        if self.boundary not in ("periodic", "absorbing"):
            raise ValueError(f"unknown boundary mode {self.boundary!r}")

    @property
    def h(self):
        return 2.0 * self.half_width / self.n

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def size(self):
        return self.n**self.d

    @property
    def cell_volume(self):
        return self.h**self.d

    def axis(self):
        return -self.half_width + self.h * np.arange(self.n)

    def meshes(self):
        return _meshes(self)

    def points(self):
        """All nodes as a (n^d, d) array, row-major."""
        return np.stack([m.ravel() for m in self.meshes()], axis=-1)

    def radii(self):
        return _radii(self)

    def rfft_ksq(self):
        """|xi|^2 multiplier array laid out for rfftn of a grid-shaped field."""
        return _rfft_ksq(self)

    def coarsened(self):
        """The grid on the same box using every other node (spacing 2h)."""
        return BoxGrid(self.d, self.half_width, self.n // 2, self.boundary)

    def interpolate(self, values, pts):
        """Multilinear interpolation of node samples at arbitrary points.

        ``values`` has shape grid.shape (+ trailing component axes); points
        outside the box return 0.  The seam cell [L-h, L) wraps periodically.
        """
        return multilinear_interpolate(values, pts, self.half_width, self.h, self.n)


@lru_cache(maxsize=32)
def _meshes(grid):
    ax = grid.axis()
    return np.meshgrid(*([ax] * grid.d), indexing="ij")


@lru_cache(maxsize=32)
def _radii(grid):
    r2 = np.zeros(grid.shape)
    for m in grid.meshes():
        r2 += m * m
    return np.sqrt(r2)


@lru_cache(maxsize=32)
def _rfft_ksq(grid):
    n, h, d = grid.n, grid.h, grid.d
    full = 2.0 * np.pi * np.fft.fftfreq(n, d=h)
    half = 2.0 * np.pi * np.fft.rfftfreq(n, d=h)
    ksq = np.zeros((n,) * (d - 1) + (half.size,))
    for ax in range(d - 1):
        shape = [1] * d
        shape[ax] = n
        ksq = ksq + (full**2).reshape(shape)
    ksq = ksq + half**2
    return ksq


def rfftn(field, grid):
    return np.fft.rfftn(field, s=grid.shape)


def irfftn(spec, grid):
    return np.fft.irfftn(spec, s=grid.shape)


def spectral_gradient(field, grid):
    """Gradient of a periodic scalar field via FFT; returns (d, *shape)."""
    n, h, d = grid.n, grid.h, grid.d
    spec = rfftn(field, grid)
    full = 2.0 * np.pi * np.fft.fftfreq(n, d=h)
    half = 2.0 * np.pi * np.fft.rfftfreq(n, d=h)
    out = np.empty((d,) + grid.shape)
    for ax in range(d):
        k = half if ax == d - 1 else full
        shape = [1] * d
        shape[ax] = k.size
        out[ax] = irfftn(1j * k.reshape(shape) * spec, grid)
    return out


def multilinear_interpolate(values, pts, half_width, h, n):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    m, d = pts.shape
    comp_shape = values.shape[d:]
    flat_comp = int(np.prod(comp_shape)) if comp_shape else 1
    vals = values.reshape((n,) * d + (flat_comp,))

    inside = np.all(np.abs(pts) <= half_width, axis=1)
    out = np.zeros((m, flat_comp))
    if np.any(inside):
        p = pts[inside]
        s = (p + half_width) / h
        i0 = np.floor(s).astype(np.int64)
        frac = s - i0
        i0 = np.clip(i0, 0, n - 1)
        acc = np.zeros((p.shape[0], flat_comp))
        for corner in range(1 << d):
            w = np.ones(p.shape[0])
            idx = []
            for ax in range(d):
                hi = (corner >> ax) & 1
                w = w * (frac[:, ax] if hi else 1.0 - frac[:, ax])
                idx.append((i0[:, ax] + hi) % n)
            acc += w[:, None] * vals[tuple(idx)]
        out[inside] = acc
    if comp_shape:
        return out.reshape((m,) + comp_shape)
    return out[:, 0]
