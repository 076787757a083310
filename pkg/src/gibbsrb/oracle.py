"""Brute-force tensor-grid posterior for low-dimensional cross checks.

Evaluates exp(-W * loss(xi)) * prior(xi) on a full grid with one
high-fidelity solve per node and normalizes by the trapezoid rule.  Only
feasible for M <= 3; used as the independent reference for the particle
methods.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAX_GRID_NODES = 1_000_000


@dataclass
class GridPosterior:
    axes: list          # per-dimension node arrays
    density: np.ndarray  # normalized density on the tensor grid
    log_unnorm: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.axes)

    def _axis_weights(self, j: int) -> np.ndarray:
        # trapezoid weights for axis j
        x = self.axes[j]
        w = np.empty_like(x)
        w[1:-1] = (x[2:] - x[:-2]) / 2.0
        w[0] = (x[1] - x[0]) / 2.0
        w[-1] = (x[-1] - x[-2]) / 2.0
        return w

    def marginal_density(self, j: int) -> np.ndarray:
        # integrate out every other axis, highest first so indices stay valid
        dens = self.density
        for k in sorted(set(range(self.dim)) - {j}, reverse=True):
            dens = np.tensordot(dens, self._axis_weights(k), axes=([k], [0]))
            if k < j:
                j -= 1
        return dens

    def marginal_cdf(self, j: int):
        """(nodes, cdf) of the j-th marginal, trapezoid-integrated."""
        x = self.axes[j]
        dens = self.marginal_density(j)
        cdf = np.zeros_like(x)
        cdf[1:] = np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(x))
        if cdf[-1] > 0:
            cdf = cdf / cdf[-1]
        return x, cdf

    def mean(self) -> np.ndarray:
        out = np.empty(self.dim)
        for j in range(self.dim):
            x = self.axes[j]
            dens = self.marginal_density(j)
            w = self._axis_weights(j)
            out[j] = np.sum(w * dens * x)
        return out

    def marginal_std(self) -> np.ndarray:
        mu = self.mean()
        out = np.empty(self.dim)
        for j in range(self.dim):
            x = self.axes[j]
            dens = self.marginal_density(j)
            w = self._axis_weights(j)
            out[j] = np.sqrt(max(np.sum(w * dens * (x - mu[j]) ** 2), 0.0))
        return out

    def export_marginal_cdfs(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dimension", "x", "cdf"])
            for j in range(self.dim):
                x, cdf = self.marginal_cdf(j)
                for xv, cv in zip(x, cdf):
                    w.writerow([j + 1, repr(float(xv)), repr(float(cv))])


def grid_posterior(model, domain, weight: float, grid_shape, observations,
                   loss_fn=None) -> GridPosterior:
    """Tensor-grid Gibbs posterior; loss_fn defaults to full-solve losses."""
    grid_shape = tuple(int(g) for g in np.atleast_1d(grid_shape))
    if len(grid_shape) == 1:
        grid_shape = grid_shape * domain.dim
    if len(grid_shape) != domain.dim:
        raise ValueError("grid shape rank != parameter dimension")
    if domain.dim > 3:
        raise ValueError("grid oracle is limited to M <= 3")
    n_nodes = int(np.prod(grid_shape))
    if n_nodes > MAX_GRID_NODES:
        raise ValueError(f"grid too large: {n_nodes} > {MAX_GRID_NODES} nodes")
    if loss_fn is None:
        loss_fn = lambda xi: model.loss(xi, observations)

    axes = [np.linspace(lo, hi, g) for lo, hi, g in
            zip(domain.lower, domain.upper, grid_shape)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])

    log_prior = domain.log_pdf(pts)
    losses = np.array([loss_fn(xi) if np.isfinite(lp) else 0.0
                       for xi, lp in zip(pts, log_prior)])
    log_un = (-weight * losses + log_prior).reshape(grid_shape)

    shift = np.max(log_un)
    dens = np.exp(log_un - shift)
    norm = dens
    for j in reversed(range(len(axes))):
        w = np.empty(grid_shape[j])
        x = axes[j]
        w[1:-1] = (x[2:] - x[:-2]) / 2.0
        w[0] = (x[1] - x[0]) / 2.0
        w[-1] = (x[-1] - x[-2]) / 2.0
        norm = np.tensordot(norm, w, axes=([j], [0]))
    dens = dens / float(norm)
    return GridPosterior(axes=axes, density=dens, log_unnorm=log_un)
