"""Conformal length distances ``d_{h,u}`` on the grid graph, and comparisons between them."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .grid import ScalarField, TorusGrid

# half of the 16-neighbour stencil; the other half comes from symmetry
STENCIL = ((1, 0), (0, 1), (1, 1), (1, -1), (1, 2), (2, 1), (1, -2), (2, -1))


class DistanceError(ValueError):
    pass


@dataclass(frozen=True)
class SamplePointSet:
    grid: TorusGrid
    points: tuple[tuple[int, int], ...]

    def __post_init__(self):
        pts = tuple((int(i), int(j)) for i, j in self.points)
        if len(set(pts)) != len(pts):
            raise DistanceError("sample points must be distinct")
        if len(pts) < 16:
            raise DistanceError(f"need at least 16 sample points, got {len(pts)}")
        missing = [c for c in quarter_corners(self.grid) if c not in pts]
        if missing:
            raise DistanceError(f"sample set is missing lattice corners {missing}")
        for i, j in pts:
            if not (0 <= i < self.grid.nx and 0 <= j < self.grid.ny):
                raise DistanceError(f"sample point {(i, j)} outside grid")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def flat_indices(self) -> np.ndarray:
        return np.array([i * self.grid.ny + j for i, j in self.points])

    def coordinates(self) -> list[tuple[float, float]]:
        return [self.grid.center_of(i, j) for i, j in self.points]


def quarter_corners(grid: TorusGrid) -> list[tuple[int, int]]:
    hx, hy = grid.nx // 2, grid.ny // 2
    return [(0, 0), (hx, 0), (0, hy), (hx, hy)]


def default_samples(grid: TorusGrid, per_side: int = 6) -> SamplePointSet:
    """Deterministic ``per_side x per_side`` sublattice, plus the four quarter corners."""
    ii = sorted({int(round(k * grid.nx / per_side)) % grid.nx for k in range(per_side)})
    jj = sorted({int(round(k * grid.ny / per_side)) % grid.ny for k in range(per_side)})
    pts = [(i, j) for i in ii for j in jj]
    pts += [c for c in quarter_corners(grid) if c not in pts]
    return SamplePointSet(grid, tuple(pts))


@dataclass(frozen=True)
class DistanceMatrix:
    samples: SamplePointSet
    d: np.ndarray

    @property
    def diameter(self) -> float:
        """Largest sampled distance; a lower bound for the true diameter."""
        return float(self.d.max())

    def to_json(self) -> dict:
        return {
            "grid": self.samples.grid.header(),
            "points": [list(p) for p in self.samples.points],
            "coordinates": [list(c) for c in self.samples.coordinates()],
            "diameter": self.diameter,
            "d": self.d.tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        coords = self.samples.coordinates()
        writer.writerow(["x", "y"] + [f"{x!r};{y!r}" for x, y in coords])
        for (x, y), row in zip(coords, self.d):
            writer.writerow([repr(x), repr(y)] + [repr(float(v)) for v in row])
        return buf.getvalue()


@lru_cache(maxsize=8)
def _graph_structure(grid: TorusGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    idx = np.arange(grid.nx * grid.ny).reshape(grid.shape)
    rows, cols, lengths = [], [], []
    for a, b in STENCIL:
        nb = np.roll(np.roll(idx, -a, axis=0), -b, axis=1)
        rows.append(idx.ravel())
        cols.append(nb.ravel())
        lengths.append(np.full(idx.size, np.hypot(a * grid.dx, b * grid.dy)))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(lengths)


def point_distances(u: ScalarField, sources, targets=None) -> np.ndarray:
    """Shortest-path distances from ``sources`` (cell indices) in the metric ``e^{2u} h``.

    Edge ``(p, q)`` has weight ``|p - q|_h * (e^{u(p)} + e^{u(q)}) / 2``.
    """
    grid = u.grid
    rows, cols, lengths = _graph_structure(grid)
    factor = np.exp(u.values).ravel()
    weights = lengths * 0.5 * (factor[rows] + factor[cols])
    n = grid.nx * grid.ny
    graph = coo_matrix((weights, (rows, cols)), shape=(n, n)).tocsr()
    src = np.array([i * grid.ny + j for i, j in sources])
    dist = dijkstra(graph, directed=False, indices=src)
    if targets is None:
        return dist.reshape(len(src), grid.nx, grid.ny)
    tgt = np.array([i * grid.ny + j for i, j in targets])
    return dist[:, tgt]


def conformal_distance(u: ScalarField, samples: SamplePointSet) -> DistanceMatrix:
    if u.grid != samples.grid:
        raise DistanceError("field and samples live on different grids")
    d = point_distances(u, samples.points, samples.points)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(samples, d)


def _check_same_samples(D1: DistanceMatrix, D2: DistanceMatrix) -> None:
    if D1.samples != D2.samples:
        raise DistanceError("distance matrices use different sample sets")


def uniform_distance(D1: DistanceMatrix, D2: DistanceMatrix) -> float:
    _check_same_samples(D1, D2)
    return float(np.abs(D1.d - D2.d).max())


def gh_distortion(D1: DistanceMatrix, D2: DistanceMatrix) -> float:
    """Half the distortion of the identity correspondence; bounds the sampled GH distance."""
    return 0.5 * uniform_distance(D1, D2)
