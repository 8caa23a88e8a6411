"""Smooth approximations of singular surfaces by heat-kernel mollification.

Curvature atoms are smoothed with the periodic heat kernel at time ``eps**2``
and the smoothed measure is fed to the potential solver.  Each member of a
:class:`MollifiedFamily` is a smooth conformal metric with the surface's target volume.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .distance import DistanceMatrix, SamplePointSet, conformal_distance, gh_distortion, uniform_distance
from .grid import ScalarField, heat_smooth_array
from .measures import SignedMeasure, gauss_curvature
from .potential import PotentialField, SingularSurfaceSpec, solve_potential, volume_of_potential

# grid spacing comparisons tolerate this much float noise
_EPS_SLACK = 1e-9


class MollificationError(ValueError):
    pass


def mollify(m: SignedMeasure, eps: float) -> SignedMeasure:
    """Atom-free measure ``exp(eps^2 Delta)`` applied to ``m``; total mass is unchanged."""
    h = m.grid.h
    if not eps >= h * (1 - _EPS_SLACK):
        raise MollificationError(f"mollification scale {eps:.4g} is below grid spacing {h:.4g}")
    smoothed = heat_smooth_array(m.density_with_atoms(), m.grid, eps**2)
    # the spectral convolution keeps the zero mode; restore it bit-for-bit
    smoothed += m.total() / m.grid.area - smoothed.mean()
    return SignedMeasure.from_density(ScalarField(m.grid, smoothed))


@dataclass
class FamilyMember:
    eps: float
    potential: PotentialField
    min_K: float
    volume: float
    distances: DistanceMatrix | None = None
    gh_to_previous: float | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def w(self) -> ScalarField:
        return self.potential.w

    @property
    def diameter(self) -> float | None:
        return None if self.distances is None else self.distances.diameter

    def report(self) -> dict:
        return {
            "eps": self.eps,
            "minK": self.min_K,
            "vol": self.volume,
            "diameter": self.diameter,
            "gh_to_previous": self.gh_to_previous,
            "flags": list(self.flags),
        }


@dataclass
class MollifiedFamily:
    spec: SingularSurfaceSpec
    epsilons: list[float]
    members: list[FamilyMember]

    @property
    def fields(self) -> list[PotentialField]:
        return [m.potential for m in self.members]

    @property
    def ok(self) -> bool:
        return not any(m.flags for m in self.members)

    def report(self) -> list[dict]:
        return [m.report() for m in self.members]

    def dumps(self) -> str:
        return json.dumps(self.report(), indent=2)


def build_family(
    spec: SingularSurfaceSpec,
    epsilons,
    samples: SamplePointSet | None = None,
    curvature_tol: float = 0.05,
) -> MollifiedFamily:
    """Mollify ``spec`` at each scale, solve for the metric and collect diagnostics.

    Members are flagged when ``min K < lower_bound - curvature_tol`` or the
    volume leaves ``[V/2, V]``.
    """
    epsilons = [float(e) for e in epsilons]
    if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise MollificationError("epsilons must be strictly decreasing")
    source = -spec.curvature
    members: list[FamilyMember] = []
    for eps in epsilons:
        pot = solve_potential(source, spec.volume, eps)
        min_K = gauss_curvature(pot.w).min()
        vol = volume_of_potential(pot.u)
        member = FamilyMember(eps, pot, min_K, vol)
        if samples is not None:
            member.distances = conformal_distance(pot.u, samples)
            if members:
                member.gh_to_previous = gh_distortion(members[-1].distances, member.distances)
        if min_K < spec.lower_bound - curvature_tol:
            member.flags.append(f"minK {min_K:.4f} below {spec.lower_bound} - {curvature_tol}")
        volume_slack = 1e-8 * spec.volume
        if not (spec.volume / 2 - volume_slack <= vol <= spec.volume + volume_slack):
            member.flags.append(f"volume {vol:.6g} outside [V/2, V]")
        members.append(member)
    return MollifiedFamily(spec, epsilons, members)


def eps_ladder(spec: SingularSurfaceSpec, multiples=(8, 4, 2)) -> list[float]:
    """Scales expressed as multiples of the grid spacing."""
    return [float(k) * spec.grid.h for k in multiples]


def consecutive_uniform_distances(family: MollifiedFamily) -> list[float]:
    out = []
    for a, b in zip(family.members, family.members[1:]):
        if a.distances is None or b.distances is None:
            raise MollificationError("family was built without a sample set")
        out.append(uniform_distance(a.distances, b.distances))
    return out


def is_decreasing(values, slack: float = 0.0) -> bool:
    """``values[k+1] <= (1 + slack) * values[k]`` for every k."""
    v = np.asarray(values, dtype=float)
    return bool(np.all(v[1:] <= (1 + slack) * v[:-1]))
