import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alexflow.approximation import (
    MollificationError,
    build_family,
    consecutive_uniform_distances,
    eps_ladder,
    is_decreasing,
    mollify,
)
from alexflow.distance import default_samples
from alexflow.grid import ScalarField, make_grid
from alexflow.measures import SignedMeasure, weak_distance
from alexflow.potential import SingularSurfaceSpec, one_atom_spec

G64 = make_grid(64, 64)


def two_atom_spec(grid, volume=16.0):
    return SingularSurfaceSpec.from_json({
        "volume": volume,
        "atoms": [{"x": 0.25, "y": 0.25, "mass": 1.5 * math.pi}, {"x": 0.75, "y": 0.625, "mass": 0.5 * math.pi}],
    }, grid=grid)


def test_mollify_zero_is_zero():
    m = mollify(SignedMeasure.zero(G64), 2 * G64.h)
    assert not m.atoms and np.abs(m.density.values).max() < 1e-15


@given(st.floats(0.05, 2 * math.pi - 1e-3), st.integers(0, 63), st.integers(0, 63), st.floats(1.0, 10.0))
def test_single_atom_mass_is_preserved(omega, i, j, k):
    atom = SignedMeasure(G64, ScalarField.constant(G64, 0.0), (((i, j), omega),))
    m = mollify(atom, k * G64.h)
    assert not m.atoms
    assert m.total() == pytest.approx(omega, rel=1e-13)
    # the Gaussian bump peaks on the atom's cell
    assert np.unravel_index(np.argmax(m.density.values), G64.shape) == (i, j)


@given(st.integers(0, 2**32 - 1))
def test_mass_conservation_on_random_measures(seed):
    rng = np.random.default_rng(seed)
    atoms = tuple(((int(a), int(b)), float(c)) for a, b, c in zip(*rng.integers(0, 64, (2, 3)), rng.normal(size=3)))
    atoms = tuple(dict(atoms).items())
    m = SignedMeasure(G64, ScalarField(G64, rng.normal(size=G64.shape)), atoms)
    assert mollify(m, 3 * G64.h).total() == pytest.approx(m.total(), abs=1e-12)


def test_under_resolved_scale_rejected():
    with pytest.raises(MollificationError):
        mollify(SignedMeasure.zero(G64), 0.5 * G64.h)
    mollify(SignedMeasure.zero(G64), G64.h)


def test_weak_gap_to_atoms_at_least_halves_with_eps():
    g = make_grid(128, 128)
    spec = two_atom_spec(g)
    d = [weak_distance(mollify(spec.curvature, k * g.h), spec.curvature) for k in (8, 4, 2, 1)]
    # smooth symmetric kernel: the decay is quadratic once eps is well below the dictionary scale
    assert all(b <= 0.5 * a for a, b in zip(d, d[1:]))


def test_flat_family_is_constant():
    g = make_grid(32, 32)
    spec = SingularSurfaceSpec.from_json({"volume": 3.0, "atoms": []}, grid=g)
    fam = build_family(spec, eps_ladder(spec), default_samples(g))
    for m in fam.members:
        assert np.allclose(m.w.values, 3.0, rtol=1e-13)
        assert m.min_K == 0.0 and m.volume == pytest.approx(3.0, rel=1e-13)
        assert not m.flags
    assert all(v == pytest.approx(0.0, abs=1e-12) for v in consecutive_uniform_distances(fam))


@pytest.fixture(scope="module")
def cone_family():
    spec = one_atom_spec(G64, mass=math.pi, volume=6.0)
    return spec, build_family(spec, eps_ladder(spec), default_samples(G64))


def test_cone_family_bounds(cone_family):
    spec, fam = cone_family
    assert fam.ok
    assert spec.curvature.density.max() <= 0
    for m in fam.members:
        assert m.volume == pytest.approx(spec.volume, rel=1e-8)
        assert abs(m.potential.measure.total()) <= 1e-10
        bound = -math.pi / (spec.grid.area * m.w.min())
        assert m.min_K >= bound - 0.05


def test_cone_family_diameters_and_gh(cone_family):
    _, fam = cone_family
    diam = [m.diameter for m in fam.members]
    for a, b in zip(diam, diam[1:]):
        assert abs(b - a) <= 0.05 * max(a, b)
    gh = [m.gh_to_previous for m in fam.members[1:]]
    assert gh[1] < gh[0]
    ud = consecutive_uniform_distances(fam)
    assert ud[1] < ud[0]
    assert fam.report()[0]["gh_to_previous"] is None


def test_family_flags_and_validation():
    spec = one_atom_spec(G64, mass=math.pi, volume=1.0)
    fam = build_family(spec, [4 * G64.h])
    assert not fam.ok and "minK" in fam.members[0].flags[0]
    with pytest.raises(MollificationError):
        build_family(spec, [2 * G64.h, 4 * G64.h])


def test_is_decreasing():
    assert is_decreasing([3, 2, 1])
    assert not is_decreasing([3, 2, 2.1])
    assert is_decreasing([3, 2, 2.1], slack=0.1)
