"""Map-exploration objective: scalar Kalman filters on a grid of field points.

Each grid point carries a covariance that grows by ``process_noise`` per step
and shrinks with every robot measurement, whose information decays with
distance as a Gaussian RBF. The objective is a smoothed maximum of the final
covariances, so minimizing it spreads the robots over the least-known spots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax


@dataclass(frozen=True, eq=False)
class FieldGrid:
    points: np.ndarray
    P: np.ndarray
    process_noise: float = 0.01
    sigma_meas: float = 1.0
    ell: float = 1.0

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        P = np.broadcast_to(np.asarray(self.P, dtype=float), (len(pts),)).copy()
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "P", P)
        if np.any(P <= 0):
            raise ValueError("grid covariances must be positive")
        if self.process_noise < 0:
            raise ValueError("process_noise must be non-negative")
        if not (self.ell > 0 and self.sigma_meas > 0):
            raise ValueError("ell and sigma_meas must be positive")

    @classmethod
    def over_workspace(cls, lo, hi, shape=(8, 8), P0: float = 1.0, **kwargs) -> "FieldGrid":
        """Regular grid of cell centers; 3-D workspaces get a planar grid at mid height."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        axes = [lo[k] + (np.arange(n) + 0.5) * (hi[k] - lo[k]) / n for k, n in enumerate(shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        if len(lo) == 3 and len(shape) == 2:
            pts = np.hstack([pts, np.full((len(pts), 1), 0.5 * (lo[2] + hi[2]))])
        return cls(pts, np.full(len(pts), float(P0)), **kwargs)

    @property
    def P0(self) -> float:
        return float(np.max(self.P))


def information_gain(q, point, sigma_meas: float = 1.0, ell: float = 1.0):
    """Measurement information at ``point`` from a robot at ``q``."""
    d2 = np.sum((np.asarray(q, dtype=float) - np.asarray(point, dtype=float)) ** 2, axis=-1)
    return np.exp(-d2 / (2.0 * ell * ell)) / (sigma_meas * sigma_meas)


def _info(grid: FieldGrid, positions: np.ndarray):
    """Per-robot information on every grid point: shape ``(robots, points)``."""
    diff = positions[:, None, :] - grid.points[None, :, :]
    g = information_gain(positions[:, None, :], grid.points[None, :, :], grid.sigma_meas, grid.ell)
    return g, diff


def propagate(grid: FieldGrid, trajectories) -> np.ndarray:
    """Covariances after the horizon; measurements are taken at steps ``1..T``."""
    q = np.asarray(trajectories, dtype=float)
    P = grid.P.copy()
    for t in range(1, q.shape[1]):
        g, _ = _info(grid, q[:, t])
        P = P + grid.process_noise
        P = 1.0 / (1.0 / P + g.sum(axis=0))
    return P


def objective_value_and_gradient(grid: FieldGrid, q, tau: float | None = None):
    """Smoothed max of the final covariances and its gradient with respect to ``q``.

    ``tau`` defaults to ``0.05 * P0``.
    """
    q = np.asarray(q, dtype=float)
    if tau is None:
        tau = 0.05 * grid.P0
    T = q.shape[1] - 1
    P = grid.P.copy()
    pre = np.empty((T + 1, len(P)))
    post = np.empty((T + 1, len(P)))
    cache = [None] * (T + 1)
    for t in range(1, T + 1):
        g, diff = _info(grid, q[:, t])
        cache[t] = (g, diff)
        pre[t] = P + grid.process_noise
        P = 1.0 / (1.0 / pre[t] + g.sum(axis=0))
        post[t] = P
    value = float(tau * logsumexp(P / tau))
    grad = np.zeros_like(q)
    bar = softmax(P / tau)
    inv_l2 = 1.0 / grid.ell**2
    for t in range(T, 0, -1):
        g, diff = cache[t]
        bar_I = -bar * post[t] ** 2
        # d g / d q = -g (q - p) / ell^2
        grad[:, t] = -inv_l2 * np.einsum("j,rj,rjk->rk", bar_I, g, diff)
        bar = bar * (post[t] / pre[t]) ** 2
    return value, grad


class ExplorationObjective:
    """Callable ``q -> (value, gradient)`` wrapper used by the ADMM solver."""

    def __init__(self, grid: FieldGrid, tau: float | None = None, weight: float = 1.0):
        self.grid = grid
        self.tau = tau
        self.weight = weight

    def __call__(self, q):
        v, g = objective_value_and_gradient(self.grid, q, self.tau)
        return self.weight * v, self.weight * g


def zero_objective(q):
    return 0.0, np.zeros_like(np.asarray(q, dtype=float))
