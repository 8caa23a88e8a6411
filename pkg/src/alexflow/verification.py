"""Empirical checks of the short-time flow estimates and of the uniqueness mechanism.

The uniqueness argument compares two flows ``w1, w2`` on one chart through the
coefficient ``A = (log w2 - log w1) / (w2 - w1)``.  The difference ``D = w2 - w1``
then solves ``dD/dt = Delta(A D)``, whose adjoint is the backward equation
``dpsi/dt = -A Delta psi``; pairing the two gives the conserved quantity
``∫ D(t) psi(t)``.  :func:`duality_residual` measures how far the discrete
pairing is from conserved.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import diags
from scipy.sparse.linalg import cg

from .distance import DistanceMatrix, SamplePointSet, conformal_distance, uniform_distance
from .flow import FlowControls, FlowTrajectory, run_flow, uniform_store_times
from .grid import GridError, ScalarField, check_same_grid, fd5_matrix, integrate
from .grid import make_grid
from .measures import curvature_measure, gauss_curvature
from .potential import SingularSurfaceSpec, solve_potential


CG_RTOL = 1e-13


class VerificationError(RuntimeError):
    pass


class MaximumPrincipleError(VerificationError):
    pass


class MeshMismatchError(VerificationError):
    pass


# ---------------------------------------------------------------------------
# short-time estimates
# ---------------------------------------------------------------------------


@dataclass
class EstimateReport:
    kappa_fit: float
    curvature_lower_ok: bool
    worst_lower_violation: float
    min_K: float
    diameter_ratio: float
    volume_window_ok: bool
    distance_comparison_worst_slack: float
    distance_upper_worst: float
    distance_lower_worst: float
    # smallest constants for which each distance inequality holds with no slack
    kappa_distance_upper: float
    kappa_distance_lower: float
    max_diameter: float
    times: list[float] = field(default_factory=list)

    def distance_comparison_ok(self, slack_fraction: float = 0.02) -> bool:
        return self.distance_comparison_worst_slack <= slack_fraction * self.max_diameter

    @property
    def diameter_ok(self) -> bool:
        return self.diameter_ratio <= 2.0

    def to_json(self) -> dict:
        out = {k: v for k, v in self.__dict__.items()}
        out["diameter_ok"] = self.diameter_ok
        return out


def _distances(traj: FlowTrajectory, samples: SamplePointSet) -> list[DistanceMatrix]:
    return [conformal_distance(s.w.with_values(0.5 * np.log(s.w.values)), samples) for s in traj.states]


def check_estimates(
    traj: FlowTrajectory,
    samples: SamplePointSet,
    lower_bound: float = -1.0,
    curvature_tol: float = 0.05,
    distances: list[DistanceMatrix] | None = None,
) -> EstimateReport:
    """Measure the curvature envelope, diameter/volume bounds and distance comparison.

    ``kappa_fit`` is ``max_t t * max(K(t), 0)`` over the stored states; the
    distance comparison for stored ``s < t`` is checked with that same
    constant.  Violations are reported, never raised.
    """
    if len(traj.states) < 5:
        raise VerificationError("need at least five stored states")
    times = traj.times
    Ks = [gauss_curvature(s.w) for s in traj.states]
    kappa = max(t * max(K.max(), 0.0) for t, K in zip(times, Ks))
    min_K = min(K.min() for K in Ks)
    worst_lower = min_K - (lower_bound - curvature_tol)

    if distances is None:
        distances = _distances(traj, samples)
    diams = np.array([D.diameter for D in distances])
    vols = np.array([s.volume for s in traj.states])
    V = vols[0]
    volume_ok = bool(np.all((vols >= V / 4) & (vols <= 2 * V)))

    up_worst = lo_worst = -math.inf
    k_up = k_lo = 0.0
    for a in range(len(times)):
        for b in range(a + 1, len(times)):
            s, t = times[a], times[b]
            ds, dt = distances[a].d, distances[b].d
            up_worst = max(up_worst, float(np.max(dt - math.exp(kappa * (t - s)) * ds)))
            lo_worst = max(lo_worst, float(np.max(ds - kappa * (math.sqrt(t) - math.sqrt(s)) - dt)))
            k_lo = max(k_lo, float(np.max(ds - dt)) / (math.sqrt(t) - math.sqrt(s)))
            pos = ds > 0
            if pos.any():
                ratio = float(np.max(dt[pos] / ds[pos]))
                if ratio > 1:
                    k_up = max(k_up, math.log(ratio) / (t - s))
    return EstimateReport(
        kappa_fit=float(kappa),
        curvature_lower_ok=bool(worst_lower >= 0),
        worst_lower_violation=float(min(worst_lower, 0.0)),
        min_K=float(min_K),
        diameter_ratio=float(diams.max() / diams[0]),
        volume_window_ok=volume_ok,
        distance_comparison_worst_slack=float(max(up_worst, lo_worst)),
        distance_upper_worst=float(up_worst),
        distance_lower_worst=float(lo_worst),
        kappa_distance_upper=k_up,
        kappa_distance_lower=k_lo,
        max_diameter=float(diams.max()),
        times=[float(t) for t in times],
    )


# ---------------------------------------------------------------------------
# uniqueness mechanism
# ---------------------------------------------------------------------------


def l1_difference(w1: ScalarField, w2: ScalarField) -> float:
    check_same_grid(w1, w2)
    return integrate(w1.with_values(np.abs(w1.values - w2.values)))


def coefficient_A(w1: ScalarField, w2: ScalarField) -> ScalarField:
    """``(log w2 - log w1) / (w2 - w1)``, with ``2 / (w1 + w2)`` where the two nearly agree."""
    check_same_grid(w1, w2)
    a, b = w1.values, w2.values
    if a.min() <= 0 or b.min() <= 0:
        raise VerificationError("coefficient_A needs positive inputs")
    diff = b - a
    close = np.abs(diff) < 1e-8 * np.maximum(a, b)
    safe = np.where(close, 1.0, diff)
    A = np.where(close, 2.0 / (a + b), (np.log(b) - np.log(a)) / safe)
    # the mean value theorem bracket; round-off may nudge A just outside it
    A = np.clip(A, np.minimum(1 / a, 1 / b), np.maximum(1 / a, 1 / b))
    return w1.with_values(A)


def default_eta(grid) -> ScalarField:
    return ScalarField.from_function(
        grid, lambda x, y: 1 + 0.5 * np.cos(2 * np.pi * x / grid.Lx) * np.cos(2 * np.pi * y / grid.Ly)
    )


@dataclass
class BackwardSolution:
    times: list[float]
    psi: list[ScalarField]
    min_value: float
    max_value: float

    def at(self, t: float) -> ScalarField:
        for tk, p in zip(self.times, self.psi):
            if abs(tk - t) <= 1e-10 * max(1.0, t):
                return p
        raise KeyError(t)


def _backward_step(L, A: np.ndarray, dt: float, rhs: np.ndarray) -> np.ndarray:
    # (I - dt A L) psi = rhs is equivalent to the SPD system (1/A - dt L) psi = rhs / A
    inv_a = 1.0 / A
    op = diags(inv_a) - dt * L
    precond = diags(1.0 / (inv_a + dt * abs(L.diagonal())))
    psi, info = cg(op, rhs * inv_a, x0=rhs, rtol=CG_RTOL, atol=0.0, M=precond, maxiter=10_000)
    if info != 0:
        raise VerificationError(f"backward step did not converge (info={info})")
    return psi


def backward_heat_solve(
    A_fields,
    eta: ScalarField,
    s: float,
    Tprime: float,
    rtol: float = 1e-6,
) -> BackwardSolution:
    """Solve ``dpsi/dt = -A Delta psi`` backwards from ``psi(T') = eta`` to ``s``.

    ``A_fields`` is a sequence of ``(t, A)`` pairs giving the coefficient on
    the time mesh; the mesh points in ``[s, T']`` are used (both ends must be
    mesh points).  On ``[t_k, t_{k+1}]`` the coefficient is frozen at
    ``A(t_k)`` and each step is backward Euler in the 5-point Laplacian,
    ``(I - dt A_k Delta) psi_k = psi_{k+1}``.  Returns ``psi`` at the mesh
    times in increasing order.
    """
    mesh = [(float(t), A) for t, A in A_fields if s * (1 - 1e-12) <= t <= Tprime * (1 + 1e-12)]
    if len(mesh) < 2:
        raise MeshMismatchError("time mesh has fewer than two points in [s, T']")
    if abs(mesh[0][0] - s) > 1e-10 * max(1.0, s) or abs(mesh[-1][0] - Tprime) > 1e-10 * max(1.0, Tprime):
        raise MeshMismatchError("s and T' must be mesh points")
    grid = eta.grid
    L = fd5_matrix(grid)
    psi = [eta.values.ravel()]
    for k in range(len(mesh) - 2, -1, -1):
        (tk, Ak), (tk1, _) = mesh[k], mesh[k + 1]
        if Ak.grid != grid:
            raise GridError("coefficient and terminal data live on different grids")
        psi.append(_backward_step(L, Ak.values.ravel(), tk1 - tk, psi[-1]))
    psi.reverse()
    sup_eta = float(eta.values.max())
    tol = rtol * max(abs(sup_eta), 1e-300)
    lo = min(float(p.min()) for p in psi)
    hi = max(float(p.max()) for p in psi)
    if eta.values.min() >= 0 and (lo < -tol or hi > sup_eta + tol):
        raise MaximumPrincipleError(f"psi left [0, sup eta]: range [{lo:.3e}, {hi:.6g}], sup eta {sup_eta:.6g}")
    fields = [ScalarField(grid, p.reshape(grid.shape)) for p in psi]
    return BackwardSolution([t for t, _ in mesh], fields, lo, hi)


def _shared_mesh(traj1: FlowTrajectory, traj2: FlowTrajectory, s: float, Tprime: float):
    check_same_grid(traj1.states[0].w, traj2.states[0].w)
    pick = lambda tr: [st for st in tr.states if s * (1 - 1e-12) <= st.t <= Tprime * (1 + 1e-12)]
    s1, s2 = pick(traj1), pick(traj2)
    if len(s1) != len(s2) or any(abs(a.t - b.t) > 1e-12 * max(1.0, a.t) for a, b in zip(s1, s2)):
        raise MeshMismatchError("trajectories do not share a stored time mesh on [s, T']")
    return s1, s2


@dataclass
class DualityTerms:
    s: float
    Tprime: float
    lhs: float
    rhs: float
    l1_at_s: float
    backward: BackwardSolution

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)


def duality_terms(traj1: FlowTrajectory, traj2: FlowTrajectory, eta: ScalarField, s: float, Tprime: float) -> DualityTerms:
    s1, s2 = _shared_mesh(traj1, traj2, s, Tprime)
    A_fields = [(a.t, coefficient_A(a.w, b.w)) for a, b in zip(s1, s2)]
    back = backward_heat_solve(A_fields, eta, s, Tprime)
    diff_T = s2[-1].w.values - s1[-1].w.values
    diff_s = s2[0].w.values - s1[0].w.values
    ca = eta.grid.cell_area
    lhs = ca * float(np.sum(diff_T * eta.values))
    rhs = ca * float(np.sum(diff_s * back.psi[0].values))
    return DualityTerms(s, Tprime, lhs, rhs, l1_difference(s1[0].w, s2[0].w), back)


def duality_residual(traj1: FlowTrajectory, traj2: FlowTrajectory, eta: ScalarField, s: float, Tprime: float) -> float:
    """``|∫ (w2 - w1)(T') eta - ∫ (w2 - w1)(s) psi(s)|`` with ``psi`` from :func:`backward_heat_solve`."""
    return duality_terms(traj1, traj2, eta, s, Tprime).residual


@dataclass
class UniquenessReport:
    # (eps1, eps2, t, value) rows
    l1_curve: list[tuple[float, float, float, float]] = field(default_factory=list)
    # (eps1, eps2, s, residual, l1 at s)
    duality_residuals: list[tuple[float, float, float, float, float]] = field(default_factory=list)
    uniform_distance_curve: list[tuple[float, float, float, float]] = field(default_factory=list)
    max_principle_range: tuple[float, float] | None = None

    def value_at(self, curve: str, pair, t: float) -> float:
        for e1, e2, tt, v in getattr(self, curve):
            if (e1, e2) == tuple(pair) and abs(tt - t) <= 1e-10 * max(1.0, t):
                return v
        raise KeyError((curve, pair, t))

    def pairs(self) -> list[tuple[float, float]]:
        seen = []
        for e1, e2, *_ in self.l1_curve:
            if (e1, e2) not in seen:
                seen.append((e1, e2))
        return seen

    def trend_ok(self, t: float) -> bool:
        """Both curves strictly decrease at time ``t`` as ``max(eps1, eps2)`` decreases."""
        pairs = sorted(self.pairs(), key=lambda p: -max(p))
        for curve in ("l1_curve", "uniform_distance_curve"):
            vals = [self.value_at(curve, p, t) for p in pairs]
            if any(b >= a for a, b in zip(vals, vals[1:])):
                return False
        return True

    def to_json(self) -> dict:
        return {
            "l1_curve": [list(r) for r in self.l1_curve],
            "duality_residuals": [list(r) for r in self.duality_residuals],
            "uniform_distance_curve": [list(r) for r in self.uniform_distance_curve],
            "max_principle_range": None if self.max_principle_range is None else list(self.max_principle_range),
        }

    def curves_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["curve", "eps1", "eps2", "t", "value"])
        for name in ("l1_curve", "uniform_distance_curve"):
            for e1, e2, t, v in getattr(self, name):
                writer.writerow([name, repr(e1), repr(e2), repr(t), repr(v)])
        return buf.getvalue()

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def shared_mesh_controls(controls: FlowControls, intervals: int = 20) -> FlowControls:
    """Copy of ``controls`` with an explicit uniform store mesh (even count, so ``T/2`` is on it)."""
    if controls.store_times is not None:
        return controls
    intervals += intervals % 2
    return FlowControls(
        t_end=controls.t_end,
        dt_initial=controls.dt_initial,
        dt_safety=controls.dt_safety,
        store_every=controls.store_every,
        scheme=controls.scheme,
        operator=controls.operator,
        store_times=uniform_store_times(controls.t_end, controls.t_end / intervals),
        dt_max=controls.dt_max,
    )


def flow_from_spec(spec: SingularSurfaceSpec, eps: float, controls: FlowControls) -> FlowTrajectory:
    pot = solve_potential(-spec.curvature, spec.volume, eps)
    return run_flow(pot.w, controls)


def uniqueness_experiment(
    spec: SingularSurfaceSpec,
    eps_pairs,
    controls: FlowControls,
    samples: SamplePointSet,
    eta: ScalarField | None = None,
    distance_times=None,
) -> UniquenessReport:
    """Flow pairs of mollifications of one spec and record how fast they agree.

    For each ``(eps1, eps2)`` the L1 gap is recorded at every stored time,
    the sampled uniform distance at ``distance_times`` (default: ``T/2`` and
    ``T``), and the duality residual between the first positive stored time
    and ``T``.
    """
    controls = shared_mesh_controls(controls)
    eta = eta if eta is not None else default_eta(spec.grid)
    T = controls.t_end
    if distance_times is None:
        distance_times = [T / 2, T]
    report = UniquenessReport()
    lo, hi = math.inf, -math.inf
    cache: dict[float, FlowTrajectory] = {}

    def traj_for(eps: float) -> FlowTrajectory:
        if eps not in cache:
            cache[eps] = flow_from_spec(spec, eps, controls)
        return cache[eps]

    for e1, e2 in eps_pairs:
        e1, e2 = float(e1), float(e2)
        t1, t2 = traj_for(e1), traj_for(e2)
        for a, b in zip(t1.states, t2.states):
            report.l1_curve.append((e1, e2, a.t, l1_difference(a.w, b.w)))
        for t in distance_times:
            a, b = t1.state_at(t), t2.state_at(t)
            d1 = conformal_distance(a.w.with_values(0.5 * np.log(a.w.values)), samples)
            d2 = conformal_distance(b.w.with_values(0.5 * np.log(b.w.values)), samples)
            report.uniform_distance_curve.append((e1, e2, a.t, uniform_distance(d1, d2)))
        s = t1.states[1].t
        terms = duality_terms(t1, t2, eta, s, T)
        report.duality_residuals.append((e1, e2, s, terms.residual, terms.l1_at_s))
        lo, hi = min(lo, terms.backward.min_value), max(hi, terms.backward.max_value)
    if math.isfinite(lo):
        report.max_principle_range = (lo, hi)
    return report


def mollified_pair_l1(spec: SingularSurfaceSpec, e1: float, e2: float) -> float:
    """L1 distance between the initial metrics of two mollifications."""
    w1 = solve_potential(-spec.curvature, spec.volume, e1).w
    w2 = solve_potential(-spec.curvature, spec.volume, e2).w
    return l1_difference(w1, w2)


# ---------------------------------------------------------------------------
# potential round trip
# ---------------------------------------------------------------------------


def band_limited_potential(x, y, Lx: float = 1.0, Ly: float = 1.0):
    """Fixed smooth test potential with a handful of low Fourier modes."""
    a, b = 2 * np.pi * x / Lx, 2 * np.pi * y / Ly
    return 0.3 * np.cos(a) * np.sin(2 * b) + 0.2 * np.sin(a + b) - 0.15 * np.cos(2 * a - b)


def roundtrip_error(n: int, Lx: float = 1.0, Ly: float = 1.0) -> float:
    """Sup error of recovering ``u`` from the curvature measure of ``e^{2u}`` on an ``n x n`` grid."""
    grid = make_grid(n, n, Lx, Ly)
    u = ScalarField.from_function(grid, lambda x, y: band_limited_potential(x, y, Lx, Ly))
    w = u.with_values(np.exp(2 * u.values))
    pot = solve_potential(-curvature_measure(w), integrate(w))
    return float(np.max(np.abs(pot.u.values - u.values)))


def roundtrip_errors(resolutions, Lx: float = 1.0, Ly: float = 1.0) -> list[float]:
    return [roundtrip_error(int(n), Lx, Ly) for n in resolutions]


__all__ = [
    "roundtrip_errors",
    "EstimateReport",
    "UniquenessReport",
    "BackwardSolution",
    "DualityTerms",
    "check_estimates",
    "coefficient_A",
    "backward_heat_solve",
    "duality_terms",
    "duality_residual",
    "l1_difference",
    "uniqueness_experiment",
    "default_eta",
]
