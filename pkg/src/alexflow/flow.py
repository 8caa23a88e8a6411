"""Time integration of the conformal Ricci flow ``dw/dt = Delta log w`` on the flat torus.

The metric is ``g(t) = w(., t) h``.  Since ``dw/dt = -2 K_g w``, the quantity
``exp(-2t) w`` is nonincreasing in time whenever ``K_g >= -1``; this is the
certificate checked by :func:`extract_initial_data`.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.sparse import diags, identity
from scipy.sparse.linalg import spsolve
from scipy.special import logsumexp

from .grid import ScalarField, fd5_matrix, integrate, laplacian_array

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-300
DT_UNDERFLOW = 1e-12
GROWTH = 1.2
SCHEMES = ("explicit", "semi_implicit")
# semi-implicit steps are limited by the relative change they make in log w
SEMI_IMPLICIT_MAX_CHANGE = 0.05


class FlowError(RuntimeError):
    """Integration failure; ``trajectory`` holds what was computed before the abort."""

    def __init__(self, msg: str, trajectory: "FlowTrajectory | None" = None):
        super().__init__(msg)
        self.trajectory = trajectory


class PositivityError(FlowError):
    pass


class MonotonicityError(FlowError):
    pass


@dataclass(frozen=True)
class FlowState:
    t: float
    w: ScalarField

    def __post_init__(self):
        if self.t < 0:
            raise FlowError(f"flow time must be nonnegative, got {self.t}")
        if self.w.min() <= 0:
            raise PositivityError(f"conformal factor lost positivity at t={self.t}")

    @property
    def volume(self) -> float:
        return integrate(self.w)


@dataclass
class FlowControls:
    t_end: float = 0.05
    dt_initial: float = 1e-5
    dt_safety: float = 0.9
    store_every: int = 50
    scheme: str = "explicit"
    operator: str = "fd5"
    # if given, states are stored exactly at these times (store_every is then ignored)
    store_times: list[float] | None = None
    dt_max: float | None = None

    def __post_init__(self):
        if not self.dt_initial > 0:
            raise ValueError("dt_initial must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not 0 < self.dt_safety < 1:
            raise ValueError("dt_safety must lie in (0, 1)")
        if self.store_every < 1:
            raise ValueError("store_every must be at least 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.scheme == "semi_implicit" and self.operator != "fd5":
            raise ValueError("the semi-implicit scheme needs the fd5 operator")
        if self.store_times is not None:
            times = sorted(float(t) for t in self.store_times)
            if times and (times[0] <= 0 or times[-1] > self.t_end * (1 + 1e-12)):
                raise ValueError("store_times must lie in (0, t_end]")
            self.store_times = times


@dataclass
class FlowTrajectory:
    states: list[FlowState] = field(default_factory=list)
    # rows of (t, dt, maxK, minK, vol, minw)
    step_log: list[tuple[float, float, float, float, float, float]] = field(default_factory=list)
    rejected_steps: int = 0

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def grid(self):
        return self.states[0].w.grid

    def final(self) -> FlowState:
        return self.states[-1]

    def state_at(self, t: float, rtol: float = 1e-10) -> FlowState:
        for s in self.states:
            if abs(s.t - t) <= rtol * max(1.0, abs(t)):
                return s
        raise KeyError(f"no stored state at t={t}")

    def append(self, state: FlowState) -> None:
        if self.states and state.t <= self.states[-1].t:
            raise FlowError("trajectory times must increase strictly")
        self.states.append(state)

    def step_log_csv(self, diameters: dict[float, float] | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "dt", "maxK", "minK", "vol", "minw", "diameter_if_sampled"])
        diameters = diameters or {}
        for t, dt, kmax, kmin, vol, wmin in self.step_log:
            d = diameters.get(t)
            writer.writerow([repr(t), repr(dt), repr(kmax), repr(kmin), repr(vol), repr(wmin),
                             "" if d is None else repr(d)])
        return buf.getvalue()

    def export(self, directory, diameters: dict[float, float] | None = None) -> list[Path]:
        """Write numbered state JSON files and ``step_log.csv``; returns the paths written."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for k, s in enumerate(self.states):
            p = out / f"state_{k:04d}.json"
            p.write_text(json.dumps({"t": s.t, **s.w.to_json()}))
            written.append(p)
        p = out / "step_log.csv"
        p.write_text(self.step_log_csv(diameters))
        written.append(p)
        return written


def _curvature(w: np.ndarray, grid, operator: str) -> tuple[np.ndarray, np.ndarray]:
    lap = laplacian_array(np.log(np.maximum(w, LOG_FLOOR)), grid, operator)
    return lap, -lap / (2 * w)


def step(s: FlowState, dt: float, scheme: str = "explicit", operator: str = "fd5") -> FlowState:
    """Advance ``s`` by ``dt``.

    Raises :class:`PositivityError` if the update is not positive; the caller
    is expected to halve ``dt`` and retry.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    grid = s.w.grid
    w = s.w.values
    if scheme == "explicit":
        lap, _ = _curvature(w, grid, operator)
        new = w + dt * lap
    elif scheme == "semi_implicit":
        v = np.log(np.maximum(w, LOG_FLOOR)).ravel()
        L = fd5_matrix(grid)
        coef = np.exp(-v)
        rhs = dt * coef * (L @ v)
        mat = (identity(v.size, format="csr") - dt * diags(coef) @ L).tocsc()
        delta = spsolve(mat, rhs)
        if not np.all(np.isfinite(delta)) or np.abs(delta).max() > 0.5:
            raise PositivityError(f"semi-implicit update too large at t={s.t}, dt={dt:.3e}")
        v_new = v + delta
        # sum(e^v delta) = 0 exactly, so volume only drifts through the O(delta^2) part of exp;
        # a constant shift (never positive, by convexity) removes it
        v_new += logsumexp(v) - logsumexp(v_new)
        new = np.exp(v_new).reshape(grid.shape)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if not np.all(np.isfinite(new)) or new.min() <= 0:
        raise PositivityError(f"positivity lost at t={s.t}, dt={dt:.3e}")
    return FlowState(s.t + dt, s.w.with_values(new))


def stable_dt(w: ScalarField, controls: FlowControls) -> float:
    """Largest step the controller allows for the current state."""
    grid = w.grid
    lap, K = _curvature(w.values, grid, controls.operator)
    if controls.scheme == "explicit":
        inv_h2 = 1 / grid.dx**2 + 1 / grid.dy**2
        if controls.operator == "spectral":
            inv_h2 *= math.pi**2 / 4
        # linearisation around w has diffusivity 1/w
        bound = w.min() / (2 * inv_h2)
        shrinking = lap < 0
        if shrinking.any():
            bound = min(bound, 0.5 * float(np.min(w.values[shrinking] / -lap[shrinking])))
    else:
        rate = 2 * float(np.abs(K).max())
        bound = SEMI_IMPLICIT_MAX_CHANGE / rate if rate > 0 else math.inf
    return controls.dt_safety * bound


def _log_row(state: FlowState, dt: float, operator: str) -> tuple:
    _, K = _curvature(state.w.values, state.w.grid, operator)
    return (state.t, dt, float(K.max()), float(K.min()), state.volume, state.w.min())


def run_flow(w0: ScalarField, controls: FlowControls | None = None) -> FlowTrajectory:
    """Integrate from ``w0`` at ``t = 0`` to ``controls.t_end`` with adaptive steps.

    The initial state, the requested store points and the final state are
    kept.  Each accepted step appends a row to ``step_log``.
    """
    controls = controls or FlowControls()
    traj = FlowTrajectory()
    state = FlowState(0.0, w0)
    traj.append(state)
    traj.step_log.append(_log_row(state, 0.0, controls.operator))
    targets = list(controls.store_times or [])
    if not targets or targets[-1] < controls.t_end:
        targets.append(controls.t_end)
    target_idx = 0
    dt = controls.dt_initial
    accepted = 0
    t_end = controls.t_end
    while state.t < t_end * (1 - 1e-14):
        target = targets[target_idx]
        dt = min(dt, stable_dt(state.w, controls))
        if controls.dt_max is not None:
            dt = min(dt, controls.dt_max)
        hits_target = target - state.t <= dt * (1 + 1e-9)
        trial = target - state.t if hits_target else dt
        try:
            new = step(state, trial, controls.scheme, controls.operator)
        except PositivityError:
            traj.rejected_steps += 1
            dt = 0.5 * trial
            if dt < DT_UNDERFLOW:
                raise FlowError(f"time step underflow at t={state.t:.6g}", traj)
            continue
        if hits_target:
            # land on the store point exactly
            new = FlowState(target, new.w)
            target_idx += 1
        state = new
        accepted += 1
        traj.step_log.append(_log_row(state, trial, controls.operator))
        keep = hits_target if controls.store_times is not None else (accepted % controls.store_every == 0)
        if keep or state.t >= t_end * (1 - 1e-14):
            traj.append(state)
        if not hits_target:
            dt = trial * GROWTH
    if traj.states[-1] is not state:
        traj.append(state)
    log.debug("flow finished: %d steps, %d rejected", accepted, traj.rejected_steps)
    return traj


class InitialData(NamedTuple):
    w0: ScalarField
    u0: ScalarField
    t_min: float
    max_increase: float


def monotone_increase(traj: FlowTrajectory) -> float:
    """Largest relative increase of ``exp(-2t) w`` between consecutive stored states."""
    worst = 0.0
    for a, b in zip(traj.states, traj.states[1:]):
        wa = math.exp(-2 * a.t) * a.w.values
        wb = math.exp(-2 * b.t) * b.w.values
        worst = max(worst, float(np.max((wb - wa) / np.maximum(1.0, wa))))
    return worst


def extract_initial_data(traj: FlowTrajectory, slack: float = 1e-9) -> InitialData:
    """``exp(-2 t_min) w(t_min)`` at the earliest positive stored time, and half its log.

    Raises :class:`MonotonicityError` if ``exp(-2t) w`` increased anywhere
    by more than ``slack`` (relative), which points at a scheme defect or a
    step that was too large.
    """
    if len(traj.states) < 3:
        raise FlowError("need at least three stored states")
    increase = monotone_increase(traj)
    if increase > slack:
        raise MonotonicityError(f"exp(-2t) w increased by {increase:.3e} (slack {slack:.1e})", traj)
    positive = [s for s in traj.states if s.t > 0]
    first = positive[0] if positive else traj.states[0]
    w0 = first.w.with_values(math.exp(-2 * first.t) * first.w.values)
    u0 = w0.with_values(0.5 * np.log(w0.values))
    return InitialData(w0, u0, first.t, increase)


def uniform_store_times(t_end: float, interval: float) -> list[float]:
    """Store points ``interval, 2 interval, ..., t_end`` (last one clipped to ``t_end``)."""
    n = max(1, int(round(t_end / interval)))
    return [t_end * k / n for k in range(1, n + 1)]
