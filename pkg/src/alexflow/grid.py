"""Flat torus background: periodic cell-centred grid, quadrature and Laplacians.

Fields are stored as ``(nx, ny)`` arrays, axis 0 running along ``x``.  Cell
``(i, j)`` has its centre at ``((i + 1/2) dx, (j + 1/2) dy)``.  The background
metric is flat, so its Gauss curvature is identically zero.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy import sparse

K_BACKGROUND = 0.0
MIN_CELLS = 8

LAPLACIANS = ("fd5", "spectral")


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class TorusGrid:
    nx: int
    ny: int
    Lx: float = 1.0
    Ly: float = 1.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise GridError("grid dimensions must be integers")
        if self.nx < MIN_CELLS or self.ny < MIN_CELLS:
            raise GridError(f"grid needs at least {MIN_CELLS} cells per side, got {self.nx}x{self.ny}")
        if not (self.Lx > 0 and self.Ly > 0) or not np.isfinite([self.Lx, self.Ly]).all():
            raise GridError(f"side lengths must be positive, got {self.Lx}, {self.Ly}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def dx(self) -> float:
        return self.Lx / self.nx

    @property
    def dy(self) -> float:
        return self.Ly / self.ny

    @property
    def h(self) -> float:
        """Largest grid spacing."""
        return max(self.dx, self.dy)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def area(self) -> float:
        return self.Lx * self.Ly

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-centre coordinates as two ``(nx, ny)`` arrays."""
        x = (np.arange(self.nx) + 0.5) * self.dx
        y = (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(x, y, indexing="ij")

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """Index of the cell containing the point (nearest cell centre)."""
        i = int(np.floor((x % self.Lx) / self.dx)) % self.nx
        j = int(np.floor((y % self.Ly) / self.dy)) % self.ny
        return i, j

    def center_of(self, i: int, j: int) -> tuple[float, float]:
        return ((i + 0.5) * self.dx, (j + 0.5) * self.dy)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        kx = 2 * np.pi * np.fft.fftfreq(self.nx, d=self.dx)
        ky = 2 * np.pi * np.fft.fftfreq(self.ny, d=self.dy)
        return np.meshgrid(kx, ky, indexing="ij")

    @cached_property
    def k2(self) -> np.ndarray:
        """Symbol of ``-Delta`` for the spectral Laplacian."""
        kx, ky = self.wavenumbers
        return kx**2 + ky**2

    @cached_property
    def fd5_symbol(self) -> np.ndarray:
        """Symbol of ``-Delta`` for the 5-point stencil."""
        kx, ky = self.wavenumbers
        return (4 / self.dx**2) * np.sin(kx * self.dx / 2) ** 2 + (4 / self.dy**2) * np.sin(ky * self.dy / 2) ** 2

    def header(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "Lx": self.Lx, "Ly": self.Ly}


def make_grid(nx: int, ny: int, Lx: float = 1.0, Ly: float = 1.0) -> TorusGrid:
    return TorusGrid(nx, ny, float(Lx), float(Ly))


@dataclass(frozen=True)
class ScalarField:
    grid: TorusGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise GridError(f"values have shape {values.shape}, grid is {self.grid.shape}")
        if not np.isfinite(values).all():
            raise GridError("field contains non-finite values")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: TorusGrid, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_function(cls, grid: TorusGrid, fn) -> "ScalarField":
        x, y = grid.coords()
        return cls(grid, np.broadcast_to(fn(x, y), grid.shape))

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def to_json(self) -> dict:
        return {**self.grid.header(), "values": self.values.ravel(order="C").tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "ScalarField":
        grid = make_grid(data["nx"], data["ny"], data["Lx"], data["Ly"])
        values = np.asarray(data["values"], dtype=float).reshape(grid.shape, order="C")
        return cls(grid, values)

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for row in self.values:
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def check_same_grid(*fields: ScalarField) -> TorusGrid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridError("fields live on different grids")
    return grid


def laplacian_array(values: np.ndarray, grid: TorusGrid, method: str = "fd5") -> np.ndarray:
    """Periodic Laplacian of a raw array (no validation, used in inner loops)."""
    if method == "fd5":
        lap = (np.roll(values, 1, axis=0) - 2 * values + np.roll(values, -1, axis=0)) / grid.dx**2
        lap += (np.roll(values, 1, axis=1) - 2 * values + np.roll(values, -1, axis=1)) / grid.dy**2
        return lap
    if method == "spectral":
        return np.fft.ifft2(-grid.k2 * np.fft.fft2(values)).real
    raise GridError(f"unknown Laplacian {method!r}; choose from {LAPLACIANS}")


def laplacian(f: ScalarField, method: str = "fd5") -> ScalarField:
    """Background Laplacian of ``f``.

    ``fd5`` is the second-order 5-point stencil, ``spectral`` the Fourier
    Laplacian.  Both annihilate constants and integrate to zero.
    """
    lap = laplacian_array(f.values, f.grid, method)
    # remove the round-off mean so the discrete divergence theorem holds to machine precision
    lap -= lap.mean()
    return f.with_values(lap)


def integrate(f: ScalarField) -> float:
    """Midpoint quadrature of ``f`` against the background area form."""
    return float(f.grid.cell_area * np.sum(f.values))


def inverse_laplacian_array(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Zero-mean spectral solution of ``Delta u = values - mean(values)``."""
    vhat = np.fft.fft2(values)
    k2 = grid.k2.copy()
    k2[0, 0] = 1.0
    uhat = -vhat / k2
    uhat[0, 0] = 0.0
    return np.fft.ifft2(uhat).real


def heat_smooth_array(values: np.ndarray, grid: TorusGrid, time: float) -> np.ndarray:
    """Convolve with the periodic heat kernel ``exp(time * Delta)``; preserves the mean."""
    return np.fft.ifft2(np.exp(-time * grid.k2) * np.fft.fft2(values)).real


def torus_distance_to(grid: TorusGrid, x0: float, y0: float) -> np.ndarray:
    """Flat periodic distance from ``(x0, y0)`` to every cell centre."""
    x, y = grid.coords()
    ddx = np.abs(x - x0) % grid.Lx
    ddy = np.abs(y - y0) % grid.Ly
    ddx = np.minimum(ddx, grid.Lx - ddx)
    ddy = np.minimum(ddy, grid.Ly - ddy)
    return np.hypot(ddx, ddy)


def restrict(f: ScalarField, factor: int) -> ScalarField:
    """Average ``factor x factor`` blocks onto the coarser grid."""
    g = f.grid
    if g.nx % factor or g.ny % factor:
        raise GridError(f"grid {g.shape} is not divisible by {factor}")
    coarse = make_grid(g.nx // factor, g.ny // factor, g.Lx, g.Ly)
    v = f.values.reshape(coarse.nx, factor, coarse.ny, factor).mean(axis=(1, 3))
    return ScalarField(coarse, v)


@lru_cache(maxsize=8)
def fd5_matrix(grid: TorusGrid) -> sparse.csr_matrix:
    """Sparse 5-point periodic Laplacian acting on row-major flattened fields."""
    idx = np.arange(grid.nx * grid.ny).reshape(grid.shape)
    rows, cols, vals = [idx.ravel()], [idx.ravel()], [np.full(idx.size, -2 / grid.dx**2 - 2 / grid.dy**2)]
    for axis, step2 in ((0, grid.dx**2), (1, grid.dy**2)):
        for shift in (1, -1):
            rows.append(idx.ravel())
            cols.append(np.roll(idx, shift, axis=axis).ravel())
            vals.append(np.full(idx.size, 1 / step2))
    n = idx.size
    return sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
