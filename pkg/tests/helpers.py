"""Shared constructions for the test suite (cached so acceptance runs share flows)."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from alexflow.flow import FlowControls, run_flow, uniform_store_times
from alexflow.grid import ScalarField, make_grid
from alexflow.potential import one_atom_spec, solve_potential

CONE_VOLUME = 6.0
T_END = 0.05


def random_smooth_w(grid, rng, modes: int = 3, amplitude: float = 0.4) -> ScalarField:
    """Positive field ``exp(2u)`` with ``u`` a random trigonometric polynomial of low degree."""
    x, y = grid.coords()
    u = np.zeros(grid.shape)
    for kx in range(-modes, modes + 1):
        for ky in range(0, modes + 1):
            if kx == 0 and ky == 0:
                continue
            a, phase = rng.normal(scale=amplitude / (1 + kx * kx + ky * ky)), rng.uniform(0, 2 * math.pi)
            u += a * np.cos(2 * math.pi * (kx * x / grid.Lx + ky * y / grid.Ly) + phase)
    return ScalarField(grid, np.exp(2 * u))


@lru_cache(maxsize=None)
def cone_spec(n: int):
    return one_atom_spec(make_grid(n, n), mass=math.pi, volume=CONE_VOLUME)


def mesh_controls(interval: float, t_end: float = T_END) -> FlowControls:
    return FlowControls(t_end=t_end, store_times=uniform_store_times(t_end, interval))


@lru_cache(maxsize=None)
def cone_flow(n: int, eps_h: float, interval: float):
    spec = cone_spec(n)
    pot = solve_potential(-spec.curvature, spec.volume, eps_h * spec.grid.h)
    return run_flow(pot.w, mesh_controls(interval))
