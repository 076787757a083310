"""Weighted particle sets and the Gibbs reweighting update.

The update multiplies each weight by exp(-dW * loss_i) and renormalizes.
It is computed in log space with a min-loss shift so large dW * loss never
overflows; the shifted form is mathematically identical because constant
loss offsets cancel in the normalization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .domain import ParameterDomain

VARIANCE_FLOOR_FRACTION = 1e-12  # of squared box width, per dimension


@dataclass
class ParticleSet:
    """m weighted points; weights sum to one."""

    points: np.ndarray    # (m, M)
    weights: np.ndarray   # (m,)
    generation: int = 0

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.points.shape[0] != self.weights.size:
            raise ValueError("points/weights size mismatch")
        if self.points.shape[0] < 2:
            raise ValueError("need at least 2 particles")
        if np.any(self.weights < 0):
            raise ValueError("negative weight")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {self.weights.sum()!r}, not 1")

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def copy(self) -> "ParticleSet":
        return ParticleSet(self.points.copy(), self.weights.copy(), self.generation)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"xi_{j + 1}" for j in range(self.dim)] + ["weight", "generation"])
            for row, wt in zip(self.points, self.weights):
                w.writerow([repr(float(v)) for v in row] + [repr(float(wt)), self.generation])

    @classmethod
    def from_csv(cls, path) -> "ParticleSet":
        with Path(path).open() as fh:
            r = csv.reader(fh)
            header = next(r)
            rows = list(r)
        dim = len(header) - 2
        pts = np.array([[float(v) for v in row[:dim]] for row in rows])
        wts = np.array([float(row[dim]) for row in rows])
        gen = int(rows[0][dim + 1]) if rows else 0
        return cls(pts, wts / wts.sum(), gen)


def log_reweight(log_weights: np.ndarray, losses: np.ndarray, delta_w: float) -> np.ndarray:
    """Normalized log-weights after one Gibbs increment."""
    losses = np.asarray(losses, dtype=float)
    lw = log_weights - delta_w * (losses - losses.min())
    lw -= _logsumexp(lw)
    return lw


def _logsumexp(v: np.ndarray) -> float:
    mx = np.max(v)
    if not np.isfinite(mx):
        raise FloatingPointError("all weights vanished in reweighting")
    return mx + np.log(np.sum(np.exp(v - mx)))


def reweight(particles: ParticleSet, losses: np.ndarray, delta_w: float) -> ParticleSet:
    """Gibbs update of the weights by exp(-delta_w * loss_i); points unchanged."""
    if delta_w < 0:
        raise ValueError("delta_w must be >= 0")
    losses = np.asarray(losses, dtype=float)
    if losses.shape != (particles.m,):
        raise ValueError("one loss value per particle required")
    if not np.all(np.isfinite(losses)) or np.any(losses < 0):
        raise ValueError("losses must be finite and nonnegative")
    with np.errstate(divide="ignore"):
        lw = log_reweight(np.log(particles.weights), losses, delta_w)
    w = np.exp(lw)
    assert w.sum() > 0, "reweighting produced an all-zero weight vector"
    return ParticleSet(particles.points, w / w.sum(), particles.generation)


def ess(weights: np.ndarray) -> float:
    """Effective sample size 1 / sum(w_i^2); in [1, m] for normalized weights."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w**2))


def empirical_moments(particles: ParticleSet, domain: ParameterDomain):
    """Weighted per-dimension mean and variance.

    The variance is floored at a tiny fraction of the squared box width so a
    degenerate particle cloud still yields a usable proposal scale.
    """
    w = particles.weights
    mean = w @ particles.points
    var = w @ (particles.points - mean) ** 2
    floor = VARIANCE_FLOOR_FRACTION * domain.widths**2
    return mean, np.maximum(var, floor)


def kl_reweighted(particles: ParticleSet, losses_exact: np.ndarray,
                  losses_surrogate: np.ndarray, weight: float) -> float:
    """KL(surrogate-reweighted || exact-reweighted) from a common particle set."""
    with np.errstate(divide="ignore"):
        lw0 = np.log(particles.weights)
    lw_exact = log_reweight(lw0, np.asarray(losses_exact, dtype=float), weight)
    lw_surr = log_reweight(lw0, np.asarray(losses_surrogate, dtype=float), weight)
    w_surr = np.exp(lw_surr)
    mask = w_surr > 0
    return float(np.sum(w_surr[mask] * (lw_surr[mask] - lw_exact[mask])))
