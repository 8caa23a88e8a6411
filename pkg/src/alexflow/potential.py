"""Potentials of zero-mass measures and the singular-surface description.

Sign convention: ``solve_potential(m, V)`` returns ``u`` with
``Delta_h u = m`` (after mollification).  For a conformal metric
``w = exp(2u)`` on the flat torus ``Delta u = -K_g w``, so the measure to
feed in is the *negative* curvature measure, ``m = -d omega``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import ScalarField, TorusGrid, integrate, inverse_laplacian_array, make_grid
from .measures import SignedMeasure, jordan_decompose

CUSP_LIMIT = 2 * math.pi
CUSP_CONDITION = "dμ⁺({x}) < 2π"
EXP_CLAMP = 700.0


class PotentialError(ValueError):
    pass


def _mass_tol(m: SignedMeasure) -> float:
    scale = max(1.0, sum(abs(a) for a in m.atom_masses()) + m.grid.cell_area * float(np.abs(m.density.values).sum()))
    return 1e-10 * scale


def check_cusp_condition(m: SignedMeasure) -> bool:
    """True iff every positive atom of ``m`` carries mass strictly below 2π."""
    pos, _ = jordan_decompose(m)
    return all(mass < CUSP_LIMIT for mass in pos.atom_masses())


@dataclass(frozen=True)
class SingularSurfaceSpec:
    """Curvature measure ``d omega`` (atoms plus density), target volume and lower bound."""

    grid: TorusGrid
    curvature: SignedMeasure
    volume: float
    lower_bound: float = -1.0

    def __post_init__(self):
        if self.curvature.grid != self.grid:
            raise PotentialError("curvature measure lives on a different grid")
        if not self.volume > 0:
            raise PotentialError(f"volume must be positive, got {self.volume}")
        total = self.curvature.total()
        if abs(total) > _mass_tol(self.curvature):
            raise PotentialError(f"total curvature must vanish on the torus, got {total:.3e}")
        for mass in self.curvature.atom_masses():
            if mass <= 0:
                raise PotentialError(f"curvature atoms must be positive, got {mass:.6g}")
            if mass >= CUSP_LIMIT:
                raise PotentialError(f"atom mass {mass:.6g} violates the cusp condition {CUSP_CONDITION}")

    @classmethod
    def from_json(cls, data: dict, grid: TorusGrid | None = None) -> "SingularSurfaceSpec":
        """Build from ``{grid, volume, lower_bound, atoms: [{x, y, mass}], density}``.

        ``density`` is ``"constant_balancing"`` (minus the atom mass spread
        uniformly) or an explicit ``nx * ny`` row-major list.
        """
        if grid is None:
            g = data["grid"]
            grid = make_grid(g["nx"], g["ny"], g.get("Lx", 1.0), g.get("Ly", 1.0))
        atoms: dict[tuple[int, int], float] = {}
        for a in data.get("atoms", []):
            ij = grid.cell_of(a["x"], a["y"])
            if ij in atoms:
                raise PotentialError(f"two atoms snap to the same cell {ij}")
            atoms[ij] = float(a["mass"])
        for mass in atoms.values():
            if mass >= CUSP_LIMIT:
                raise PotentialError(f"atom mass {mass:.6g} violates the cusp condition {CUSP_CONDITION}")
        dens = data.get("density", "constant_balancing")
        if isinstance(dens, str):
            if dens != "constant_balancing":
                raise PotentialError(f"unknown density keyword {dens!r}")
            values = np.full(grid.shape, -sum(atoms.values()) / grid.area)
        else:
            values = np.asarray(dens, dtype=float).reshape(grid.shape)
        measure = SignedMeasure(grid, ScalarField(grid, values), tuple(atoms.items()))
        return cls(grid, measure, float(data["volume"]), float(data.get("lower_bound", -1.0)))

    @classmethod
    def load(cls, path, grid: TorusGrid | None = None) -> "SingularSurfaceSpec":
        return cls.from_json(json.loads(Path(path).read_text()), grid)

    def to_json(self) -> dict:
        atoms = []
        for (i, j), mass in self.curvature.atoms:
            x, y = self.grid.center_of(i, j)
            atoms.append({"x": x, "y": y, "mass": mass})
        return {
            "grid": self.grid.header(),
            "volume": self.volume,
            "lower_bound": self.lower_bound,
            "atoms": atoms,
            "density": self.curvature.density.values.ravel().tolist(),
        }


def one_atom_spec(grid: TorusGrid, mass: float = math.pi, volume: float = 1.0,
                  at=(0.5, 0.5), lower_bound: float = -1.0) -> SingularSurfaceSpec:
    """Single cone point balanced by constant negative curvature."""
    x, y = at[0] * grid.Lx, at[1] * grid.Ly
    return SingularSurfaceSpec.from_json(
        {"volume": volume, "lower_bound": lower_bound, "atoms": [{"x": x, "y": y, "mass": mass}]},
        grid=grid,
    )


@dataclass(frozen=True)
class PotentialField:
    """``u`` with ``Delta u = measure`` (mollified at ``mollification_scale``) and ``∫ e^{2u} = volume``."""

    u: ScalarField
    measure: SignedMeasure
    volume: float
    mollification_scale: float | None = None

    @property
    def w(self) -> ScalarField:
        return self.u.with_values(np.exp(2 * self.u.values))


def _log_volume(values: np.ndarray, cell_area: float) -> float:
    top = float(values.max())
    return 2 * top + math.log(cell_area * float(np.exp(2 * (values - top)).sum()))


def solve_potential(m: SignedMeasure, V: float, mollification_scale: float | None = None) -> PotentialField:
    """Unique potential of the zero-mass measure ``m`` with volume ``V``.

    Atoms are mollified at ``mollification_scale`` first; an atom-carrying
    measure without a scale is rejected.  The curvature implied by ``m`` is
    ``-m`` and must satisfy the cusp condition.
    """
    if not V > 0:
        raise PotentialError(f"volume must be positive, got {V}")
    total = m.total()
    if abs(total) > _mass_tol(m):
        raise PotentialError(f"measure must have zero total mass, got {total:.3e}")
    if not check_cusp_condition(-m):
        raise PotentialError(f"curvature atoms violate the cusp condition {CUSP_CONDITION}")
    if mollification_scale is not None:
        from .approximation import mollify

        source = mollify(m, mollification_scale)
    elif m.atoms:
        raise PotentialError("measure has atoms; pass a mollification_scale")
    else:
        source = m
    grid = m.grid
    u_raw = inverse_laplacian_array(source.density.values, grid)
    c = 0.5 * (math.log(V) - _log_volume(u_raw, grid.cell_area))
    return PotentialField(ScalarField(grid, u_raw + c), source, float(V), mollification_scale)


def volume_of_potential(u: ScalarField) -> float:
    """``∫ e^{2u} dv_h``; exponents above 700 are clamped with a warning."""
    two_u = 2 * u.values
    if two_u.max() > EXP_CLAMP:
        warnings.warn("volume_of_potential: exponent clamped to avoid overflow", RuntimeWarning, stacklevel=2)
        two_u = np.minimum(two_u, EXP_CLAMP)
    return integrate(u.with_values(np.exp(two_u)))
