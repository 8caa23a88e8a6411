"""Signed measures on the torus grid and curvature/area measures of conformal metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .grid import GridError, ScalarField, TorusGrid, laplacian, make_grid, torus_distance_to

LOG_FLOOR = 1e-300

Atom = tuple[tuple[int, int], float]


class MeasureError(ValueError):
    pass


@dataclass(frozen=True)
class SignedMeasure:
    """Absolutely continuous density (w.r.t. the background area) plus point masses.

    Atoms are ``((i, j), mass)`` pairs attached to cell centres and are kept
    exact; nothing here smears them.
    """

    grid: TorusGrid
    density: ScalarField
    atoms: tuple[Atom, ...] = field(default=())

    def __post_init__(self):
        if self.density.grid != self.grid:
            raise MeasureError("density lives on a different grid")
        merged: dict[tuple[int, int], float] = {}
        for (i, j), mass in self.atoms:
            i, j = int(i), int(j)
            if not (0 <= i < self.grid.nx and 0 <= j < self.grid.ny):
                raise MeasureError(f"atom cell {(i, j)} outside grid {self.grid.shape}")
            if not np.isfinite(mass):
                raise MeasureError("atom mass must be finite")
            if (i, j) in merged:
                raise MeasureError(f"duplicate atom cell {(i, j)}")
            merged[(i, j)] = float(mass)
        object.__setattr__(self, "atoms", tuple(sorted(merged.items())))

    @classmethod
    def zero(cls, grid: TorusGrid) -> "SignedMeasure":
        return cls(grid, ScalarField.constant(grid, 0.0))

    @classmethod
    def from_density(cls, density: ScalarField) -> "SignedMeasure":
        return cls(density.grid, density)

    def total(self) -> float:
        return self.grid.cell_area * float(np.sum(self.density.values)) + sum(m for _, m in self.atoms)

    def atom_masses(self) -> list[float]:
        return [m for _, m in self.atoms]

    def scaled(self, c: float) -> "SignedMeasure":
        return SignedMeasure(self.grid, self.density.with_values(c * self.density.values),
                             tuple((ij, c * m) for ij, m in self.atoms))

    def __neg__(self) -> "SignedMeasure":
        return self.scaled(-1.0)

    def __add__(self, other: "SignedMeasure") -> "SignedMeasure":
        if other.grid != self.grid:
            raise MeasureError("measures live on different grids")
        atoms = dict(self.atoms)
        for ij, m in other.atoms:
            atoms[ij] = atoms.get(ij, 0.0) + m
        return SignedMeasure(self.grid, self.density.with_values(self.density.values + other.density.values),
                             tuple(atoms.items()))

    def __sub__(self, other: "SignedMeasure") -> "SignedMeasure":
        return self + (-other)

    def integrate_against(self, phi: np.ndarray) -> float:
        """``∫ phi dm`` for a test function sampled at cell centres."""
        s = self.grid.cell_area * float(np.sum(phi * self.density.values))
        return s + sum(phi[i, j] * m for (i, j), m in self.atoms)

    def density_with_atoms(self) -> np.ndarray:
        """Density with each atom spread over its own cell (a grid-scale delta)."""
        v = np.array(self.density.values)
        for (i, j), m in self.atoms:
            v[i, j] += m / self.grid.cell_area
        return v

    def to_json(self) -> dict:
        return {
            "grid": self.grid.header(),
            "density": self.density.values.ravel().tolist(),
            "atoms": [{"i": i, "j": j, "mass": m} for (i, j), m in self.atoms],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SignedMeasure":
        g = data["grid"]
        grid = make_grid(g["nx"], g["ny"], g["Lx"], g["Ly"])
        density = ScalarField(grid, np.asarray(data["density"], dtype=float).reshape(grid.shape))
        return cls(grid, density, tuple(((a["i"], a["j"]), a["mass"]) for a in data["atoms"]))

    def dumps(self) -> str:
        return json.dumps(self.to_json())


@dataclass(frozen=True)
class CurvatureReport:
    measure: SignedMeasure
    min_density: float
    max_atom: float
    total: float


def curvature_report(m: SignedMeasure) -> CurvatureReport:
    masses = m.atom_masses()
    return CurvatureReport(m, m.density.min(), max(masses) if masses else 0.0, m.total())


def _check_positive(w: ScalarField) -> None:
    if w.min() <= 0:
        raise MeasureError(f"conformal factor must be positive (min {w.min():.3e})")


def _log(w: ScalarField) -> ScalarField:
    return w.with_values(np.log(np.maximum(w.values, LOG_FLOOR)))


def gauss_curvature(w: ScalarField, method: str = "fd5") -> ScalarField:
    """Gauss curvature of ``g = w h``: ``K = -Delta log w / (2 w)`` on the flat torus."""
    _check_positive(w)
    lap = laplacian(_log(w), method).values
    return w.with_values(-lap / (2 * w.values))


def curvature_measure(w: ScalarField, method: str = "fd5") -> SignedMeasure:
    """``K_g dv_g`` written against ``dv_h``: density ``K_g w = -Delta log w / 2``."""
    _check_positive(w)
    lap = laplacian(_log(w), method).values
    return SignedMeasure.from_density(w.with_values(-0.5 * lap))


def area_measure(w: ScalarField) -> SignedMeasure:
    _check_positive(w)
    return SignedMeasure.from_density(w)


def jordan_decompose(m: SignedMeasure) -> tuple[SignedMeasure, SignedMeasure]:
    d = m.density.values
    pos = SignedMeasure(m.grid, m.density.with_values(np.maximum(d, 0.0)),
                        tuple((ij, a) for ij, a in m.atoms if a > 0))
    neg = SignedMeasure(m.grid, m.density.with_values(np.maximum(-d, 0.0)),
                        tuple((ij, -a) for ij, a in m.atoms if a < 0))
    return pos, neg


@lru_cache(maxsize=16)
def weak_test_functions(grid: TorusGrid) -> tuple[np.ndarray, ...]:
    """25 test functions with sup norm and Lipschitz constant at most 1.

    One constant, the cos/sin pairs of the six wave vectors with
    ``0 < |k| <= 2`` (up to sign), and twelve tent functions centred on a
    4 x 3 lattice.
    """
    x, y = grid.coords()
    funcs = [np.ones(grid.shape)]
    for kx, ky in [(1, 0), (0, 1), (1, 1), (1, -1), (2, 0), (0, 2)]:
        phase = 2 * np.pi * (kx * x / grid.Lx + ky * y / grid.Ly)
        lip = 2 * np.pi * np.hypot(kx / grid.Lx, ky / grid.Ly)
        scale = max(1.0, lip)
        funcs.append(np.cos(phase) / scale)
        funcs.append(np.sin(phase) / scale)
    radius = min(grid.Lx, grid.Ly) / 4
    for a in range(4):
        for b in range(3):
            cx, cy = (a + 0.5) * grid.Lx / 4, (b + 0.5) * grid.Ly / 3
            tent = np.maximum(0.0, radius - torus_distance_to(grid, cx, cy))
            funcs.append(tent / max(1.0, radius))
    for f in funcs:
        f.setflags(write=False)
    return tuple(funcs)


def weak_distance(m1: SignedMeasure, m2: SignedMeasure) -> float:
    """Bounded-Lipschitz style distance over the fixed test dictionary."""
    if m1.grid != m2.grid:
        raise GridError("measures live on different grids")
    diff = m1 - m2
    return max(abs(diff.integrate_against(phi)) for phi in weak_test_functions(m1.grid))
