"""Training-point samplers on the unit cube and the evaluation lattice."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# one independent generator per consumer, derived from the master seed
STREAMS = ("init_primal", "init_multiplier", "primal", "multiplier", "norm", "ascent")


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(int(seed)).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


@dataclass
class Batch:
    """Interior and boundary samples of (0,1)^d.

    ``aux_interior`` holds further independent interior batches needed by the
    ratio estimators of the eigenvalue families.
    """

    interior: np.ndarray
    boundary: np.ndarray
    face_ids: np.ndarray
    aux_interior: tuple = field(default_factory=tuple)

    @property
    def d(self):
        return self.interior.shape[-1] if self.interior.size else self.boundary.shape[-1]

    @property
    def omega_measure(self):
        return 1.0

    @property
    def gamma_measure(self):
        return 2.0 * self.d


def sample_interior(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. uniform points strictly inside (0,1)^d."""
    x = rng.random((n, d))
    # random() draws from [0, 1); exact zeros are redrawn
    while np.any(x == 0.0):
        zeros = x == 0.0
        x[zeros] = rng.random(int(zeros.sum()))
    return x


def sample_boundary(d: int, n_per_face: int, rng: np.random.Generator):
    """n_per_face uniform points on each of the 2d faces.

    Face ``2 i + s`` is ``{x_i = s}``. Returns (points, face_ids).
    """
    points = sample_interior(d, 2 * d * n_per_face, rng)
    face_ids = np.repeat(np.arange(2 * d), n_per_face)
    axis = face_ids // 2
    points[np.arange(len(points)), axis] = (face_ids % 2).astype(np.float64)
    return points, face_ids


def sample_batch(d, n_interior, n_per_face, rng, n_aux=0) -> Batch:
    interior = sample_interior(d, n_interior, rng)
    aux = tuple(sample_interior(d, n_interior, rng) for _ in range(n_aux))
    boundary, face_ids = sample_boundary(d, n_per_face, rng)
    return Batch(interior, boundary, face_ids, aux)


@dataclass
class Grid:
    """The lattice {ih : 0 <= i <= n}^d with its interior/boundary split."""

    d: int
    n: int
    points: np.ndarray
    interior_mask: np.ndarray
    weights: np.ndarray

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def interior(self):
        return self.points[self.interior_mask]

    @property
    def boundary(self):
        return self.points[~self.interior_mask]

    def lattice_shape(self):
        return (self.n + 1,) * self.d


def grid_points(d: int, h: float) -> Grid:
    """Full lattice with composite-trapezoid quadrature weights.

    Points are ordered C-style with the first coordinate varying slowest.
    """
    if h <= 0:
        raise ConfigError(f"grid spacing must be positive, got {h}", key="grid_h")
    n = int(round(1.0 / h))
    if n < 1 or abs(n * h - 1.0) > 1e-9:
        raise ConfigError(f"1/h must be an integer, got h={h}", key="grid_h")
    axis = np.arange(n + 1) / n
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    points = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    on_boundary = np.any((points == 0.0) | (points == 1.0), axis=-1)
    w1 = np.full(n + 1, 1.0 / n)
    w1[[0, -1]] *= 0.5
    weights = w1
    for _ in range(d - 1):
        weights = np.multiply.outer(weights, w1)
    return Grid(d, n, points, ~on_boundary, weights.reshape(-1))
