import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alexflow import verification as ver
from alexflow.distance import default_samples
from alexflow.flow import FlowControls, run_flow, uniform_store_times
from alexflow.grid import ScalarField, make_grid
from alexflow.potential import SingularSurfaceSpec, one_atom_spec, solve_potential
from alexflow.verification import (
    MaximumPrincipleError,
    MeshMismatchError,
    VerificationError,
    backward_heat_solve,
    check_estimates,
    coefficient_A,
    default_eta,
    duality_residual,
    duality_terms,
    l1_difference,
    shared_mesh_controls,
    uniqueness_experiment,
)
from helpers import cone_flow, mesh_controls, random_smooth_w

G32 = make_grid(32, 32)
MESH = uniform_store_times(0.01, 0.001)


def flat_traj(c, grid=G32, times=MESH):
    return run_flow(ScalarField.constant(grid, c), FlowControls(t_end=times[-1], store_times=times))


def test_estimates_on_flat_trajectory():
    traj = flat_traj(1.0)
    rep = check_estimates(traj, default_samples(G32))
    assert rep.kappa_fit == 0.0
    assert rep.curvature_lower_ok and rep.volume_window_ok and rep.diameter_ok
    assert rep.distance_comparison_worst_slack == pytest.approx(0.0, abs=1e-12)
    assert rep.distance_comparison_ok(0.0)
    assert all(np.isfinite(v) for v in rep.to_json().values() if isinstance(v, float))


def test_estimates_need_five_states():
    traj = run_flow(ScalarField.constant(G32, 1.0), FlowControls(t_end=0.001, store_times=[0.0005, 0.001]))
    with pytest.raises(VerificationError):
        check_estimates(traj, default_samples(G32))


def test_one_atom_estimates():
    traj = cone_flow(64, 4, 0.0025)
    rep = check_estimates(traj, default_samples(make_grid(64, 64)))
    assert 0 < rep.kappa_fit < 1
    assert rep.curvature_lower_ok
    assert rep.volume_window_ok and rep.diameter_ok
    # the constants needed by each distance inequality are reported alongside kappa_fit
    assert rep.kappa_distance_upper > 0 and rep.kappa_distance_lower > 0


def test_kappa_fit_stable_under_refinement_at_fixed_eps():
    eps, kappas = 0.125, []
    for n in (32, 64, 128):
        g = make_grid(n, n)
        spec = one_atom_spec(g, volume=6.0)
        traj = run_flow(solve_potential(-spec.curvature, 6.0, eps).w, mesh_controls(0.0025))
        kappas.append(check_estimates(traj, default_samples(g)).kappa_fit)
    for a, b in zip(kappas, kappas[1:]):
        assert b <= 1.1 * a


def test_coefficient_A_examples():
    w = random_smooth_w(G32, np.random.default_rng(0))
    assert np.allclose(coefficient_A(w, w).values, 1 / w.values, rtol=1e-15)
    one, e = ScalarField.constant(G32, 1.0), ScalarField.constant(G32, math.e)
    assert np.allclose(coefficient_A(one, e).values, 1 / (math.e - 1), rtol=1e-14)
    assert coefficient_A(one, e).values[0, 0] == pytest.approx(0.58198, abs=1e-5)
    with pytest.raises(VerificationError):
        coefficient_A(one, one.with_values(np.zeros(G32.shape)))


@given(st.integers(0, 2**32 - 1), st.floats(1e-12, 1.0))
def test_coefficient_A_bracket(seed, spread):
    rng = np.random.default_rng(seed)
    a = np.exp(rng.normal(size=G32.shape))
    b = a * np.exp(spread * rng.normal(size=G32.shape))
    A = coefficient_A(ScalarField(G32, a), ScalarField(G32, b)).values
    assert np.all(A >= np.minimum(1 / a, 1 / b)) and np.all(A <= np.maximum(1 / a, 1 / b))


def test_backward_constant_terminal_data():
    A = [(t, ScalarField.constant(G32, 0.7)) for t in [0.0] + MESH]
    sol = backward_heat_solve(A, ScalarField.constant(G32, 1.0), MESH[0], MESH[-1])
    for p in sol.psi:
        assert np.abs(p.values - 1.0).max() < 1e-12


def test_backward_single_mode_matches_discrete_symbol():
    times = [0.0, 0.001, 0.0025, 0.003, 0.005]
    A = [(t, ScalarField.constant(G32, 1.0)) for t in times]
    mode = ScalarField.from_function(G32, lambda x, y: np.cos(2 * np.pi * x) * np.cos(4 * np.pi * y))
    eta = mode.with_values(1 + 0.5 * mode.values)
    sol = backward_heat_solve(A, eta, 0.001, 0.005)
    lam = 4 / G32.dx**2 * math.sin(math.pi * G32.dx) ** 2 + 4 / G32.dy**2 * math.sin(2 * math.pi * G32.dy) ** 2
    factor = 1.0
    for t0, t1 in zip(reversed(times[1:-1]), reversed(times[2:])):
        factor /= 1 + (t1 - t0) * lam
        expected = 1 + 0.5 * factor * mode.values
        assert np.abs(sol.at(t0).values - expected).max() < 1e-11
    assert sol.times == times[1:]


def test_backward_mesh_errors_and_maximum_principle(monkeypatch):
    A = [(t, ScalarField.constant(G32, 1.0)) for t in MESH]
    eta = default_eta(G32)
    with pytest.raises(MeshMismatchError):
        backward_heat_solve(A, eta, 0.0015, MESH[-1])
    with pytest.raises(MeshMismatchError):
        backward_heat_solve(A, eta, MESH[-1], MESH[-1])
    monkeypatch.setattr(ver, "_backward_step", lambda L, A, dt, rhs: rhs * 1.01)
    with pytest.raises(MaximumPrincipleError):
        backward_heat_solve(A, eta, MESH[0], MESH[-1])


def test_l1_examples():
    w = random_smooth_w(G32, np.random.default_rng(1))
    assert l1_difference(w, w) == 0.0
    assert l1_difference(ScalarField.constant(G32, 1.0), ScalarField.constant(G32, 2.0)) == pytest.approx(1.0)


def test_duality_trivial_and_flat_pairs():
    w = random_smooth_w(G32, np.random.default_rng(3))
    traj = run_flow(w, FlowControls(t_end=0.01, store_times=MESH))
    assert duality_residual(traj, traj, default_eta(G32), MESH[0], MESH[-1]) == 0.0
    t1, t2 = flat_traj(1.0), flat_traj(2.0)
    eta = default_eta(G32)
    terms = duality_terms(t1, t2, eta, MESH[0], MESH[-1])
    assert terms.lhs == pytest.approx(float(np.sum(eta.values)) * G32.cell_area, rel=1e-13)
    assert terms.residual <= 1e-10


def test_duality_mesh_mismatch():
    t1 = flat_traj(1.0)
    t2 = flat_traj(2.0, times=uniform_store_times(0.01, 0.002))
    with pytest.raises(MeshMismatchError):
        duality_residual(t1, t2, default_eta(G32), 0.002, 0.01)


def test_smooth_pair_duality_is_small():
    rng = np.random.default_rng(8)
    w1 = random_smooth_w(G32, rng)
    w2 = w1.with_values(w1.values * (1 + 0.05 * random_smooth_w(G32, rng).values))
    t1 = run_flow(w1, FlowControls(t_end=0.01, store_times=MESH))
    t2 = run_flow(w2, FlowControls(t_end=0.01, store_times=MESH))
    terms = duality_terms(t1, t2, default_eta(G32), MESH[0], MESH[-1])
    assert terms.residual <= 1e-2 * terms.l1_at_s
    assert 0 <= terms.backward.min_value and terms.backward.max_value <= default_eta(G32).max()


def test_uniqueness_experiment_trivial_cases():
    g = G32
    samples = default_samples(g)
    controls = FlowControls(t_end=0.004)
    spec = one_atom_spec(g, volume=6.0)
    rep = uniqueness_experiment(spec, [(3 * g.h, 3 * g.h)], controls, samples)
    assert all(v == 0 for *_, v in rep.l1_curve)
    assert all(v == 0 for *_, v in rep.uniform_distance_curve)
    assert all(r == 0 for _, _, _, r, _ in rep.duality_residuals)
    flat = SingularSurfaceSpec.from_json({"volume": 1.0, "atoms": []}, grid=g)
    rep = uniqueness_experiment(flat, [(4 * g.h, 2 * g.h)], controls, samples)
    assert max(v for *_, v in rep.l1_curve) < 1e-13
    assert max(v for *_, v in rep.uniform_distance_curve) < 1e-13
    assert rep.to_json()["max_principle_range"] is not None
    assert rep.curves_csv().splitlines()[0] == "curve,eps1,eps2,t,value"


def test_shared_mesh_controls_has_even_count():
    c = shared_mesh_controls(FlowControls(t_end=0.05), intervals=15)
    assert len(c.store_times) == 16
    assert 0.025 in [round(t, 15) for t in c.store_times]
    assert shared_mesh_controls(c) is c
