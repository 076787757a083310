"""Parameter domain: box bounds and per-dimension independent priors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class PriorSpec:
    """Independent prior for one parameter dimension on [lower, upper].

    kind 'uniform' ignores (p, q); kind 'beta' is a Beta(p, q) density
    rescaled from [0, 1] to the interval.
    """

    kind: str = "uniform"
    p: float = 1.0
    q: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "beta"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "beta" and (self.p <= 0 or self.q <= 0):
            raise ValueError("beta prior needs p, q > 0")


@dataclass(frozen=True)
class ParameterDomain:
    """Box-bounded parameter space with an analytic per-dimension prior."""

    lower: np.ndarray
    upper: np.ndarray
    priors: tuple[PriorSpec, ...] = field(default=())

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise ValueError("lower/upper must be 1-d arrays of equal length")
        if not np.all(lower < upper):
            raise ValueError("need lower[j] < upper[j] for all j")
        if not self.priors:
            object.__setattr__(self, "priors", tuple(PriorSpec() for _ in lower))
        if len(self.priors) != lower.size:
            raise ValueError("one PriorSpec per dimension required")

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=1)

    def scale(self, points: np.ndarray) -> np.ndarray:
        """Map points into box coordinates in [0, 1]^M."""
        return (np.asarray(points, dtype=float) - self.lower) / self.widths

    def _dists(self):
        out = []
        for spec, lo, w in zip(self.priors, self.lower, self.widths):
            if spec.kind == "uniform":
                out.append(stats.uniform(loc=lo, scale=w))
            else:
                out.append(stats.beta(spec.p, spec.q, loc=lo, scale=w))
        return out

    def log_pdf(self, points: np.ndarray) -> np.ndarray:
        """Log prior density; -inf outside the box."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lp = np.zeros(pts.shape[0])
        inside = self.contains(pts)
        lp[~inside] = -np.inf
        for j, dist in enumerate(self._dists()):
            with np.errstate(divide="ignore"):
                lp[inside] += dist.logpdf(pts[inside, j])
        return lp if points.ndim > 1 else lp[0]

    def pdf(self, points: np.ndarray) -> np.ndarray:
        return np.exp(self.log_pdf(points))

    def marginal_cdf(self, j: int, x: np.ndarray) -> np.ndarray:
        return self._dists()[j].cdf(x)

    def marginal_mean_var(self, j: int) -> tuple[float, float]:
        d = self._dists()[j]
        return float(d.mean()), float(d.var())

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n iid prior draws, shape (n, M)."""
        cols = []
        for spec, lo, w in zip(self.priors, self.lower, self.widths):
            if spec.kind == "uniform":
                cols.append(lo + w * rng.random(n))
            else:
                cols.append(lo + w * rng.beta(spec.p, spec.q, size=n))
        return np.column_stack(cols)


def unit_box(dim: int, priors: tuple[PriorSpec, ...] = ()) -> ParameterDomain:
    return ParameterDomain(np.zeros(dim), np.ones(dim), priors)
