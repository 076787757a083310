"""Empirical verification of the method's distance and error bounds.

The distribution metric used in the analysis takes a supremum over all
test functions bounded by one, which is not computable; ``h_proxy``
maximizes over a finite dictionary instead (coordinate threshold
indicators plus clipped first and second moments).  The dictionary value
lower-bounds the true supremum, so upper-bound claims remain valid tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import ParameterDomain
from .oracle import GridPosterior
from .particles import ParticleSet, kl_reweighted, reweight

THRESHOLDS_PER_DIM = 32
AUDIT_FRACTION = 0.10
ASSUMPTION_SLACK = 1.1
CONCENTRATION_SLACK = 1.1


# --------------------------------------------------------------------------
# dictionary-based proxy for the bounded-test-function metric
# --------------------------------------------------------------------------

def _dictionary(domain: ParameterDomain):
    """Bounded test functions: per-dimension threshold indicators and
    box-scaled first/second monomials clipped to [-1, 1]."""
    fns = []
    for j in range(domain.dim):
        lo, w = domain.lower[j], domain.widths[j]
        for c in np.linspace(lo, lo + w, THRESHOLDS_PER_DIM + 2)[1:-1]:
            fns.append(("ind", j, c))
        fns.append(("lin", j, None))
        fns.append(("sq", j, None))
    return fns


def _apply(fn, points: np.ndarray, domain: ParameterDomain) -> np.ndarray:
    kind, j, c = fn
    if kind == "ind":
        return (points[:, j] <= c).astype(float)
    s = 2.0 * (points[:, j] - domain.lower[j]) / domain.widths[j] - 1.0
    return np.clip(s if kind == "lin" else s**2, -1.0, 1.0)


def _reference_expectation(fn, reference, domain: ParameterDomain) -> float:
    kind, j, c = fn
    if isinstance(reference, ParticleSet):
        return float(reference.weights @ _apply(fn, reference.points, domain))
    if isinstance(reference, GridPosterior):
        x = reference.axes[j]
        dens = reference.marginal_density(j)
        w = reference._axis_weights(j)
        if kind == "ind":
            vals = (x <= c).astype(float)
        else:
            s = 2.0 * (x - domain.lower[j]) / domain.widths[j] - 1.0
            vals = np.clip(s if kind == "lin" else s**2, -1.0, 1.0)
        return float(np.sum(w * dens * vals))
    if reference == "prior":
        if kind == "ind":
            return float(domain.marginal_cdf(j, c))
        mean, var = domain.marginal_mean_var(j)
        lo, w = domain.lower[j], domain.widths[j]
        if kind == "lin":
            return 2.0 * (mean - lo) / w - 1.0
        # E[s^2] for s = 2 (x - lo)/w - 1
        m2 = var + mean**2
        return 4.0 * (m2 - 2 * lo * mean + lo**2) / w**2 - 4.0 * (mean - lo) / w + 1.0
    raise TypeError(f"unsupported reference {type(reference)!r}")


def h_proxy(runs: list[ParticleSet], reference, domain: ParameterDomain) -> float:
    """max over the dictionary of sqrt(mean over runs |rho_run[f] - rho_ref[f]|^2).

    ``reference`` may be a ParticleSet, a GridPosterior, or the string
    'prior' for the analytic prior expectations.
    """
    if not runs:
        raise ValueError("need at least one run")
    worst = 0.0
    for fn in _dictionary(domain):
        ref_val = _reference_expectation(fn, reference, domain)
        sq = [(float(r.weights @ _apply(fn, r.points, domain)) - ref_val) ** 2
              for r in runs]
        worst = max(worst, np.sqrt(np.mean(sq)))
    return float(worst)


# --------------------------------------------------------------------------
# Kolmogorov-Smirnov distances
# --------------------------------------------------------------------------

def _weighted_cdf(points: np.ndarray, weights: np.ndarray):
    order = np.argsort(points, kind="stable")
    x = points[order]
    cw = np.cumsum(weights[order])
    cw /= cw[-1]
    return x, cw


def _eval_step_cdf(x_knots, cdf_vals, x):
    idx = np.searchsorted(x_knots, x, side="right") - 1
    out = np.where(idx >= 0, cdf_vals[np.clip(idx, 0, len(cdf_vals) - 1)], 0.0)
    return out


def ks_distance(particles: ParticleSet, reference, dim: int,
                domain: ParameterDomain | None = None) -> float:
    """Sup distance between the weighted marginal empirical CDF and a
    reference CDF, evaluated over the merged support points.

    ``reference``: GridPosterior, ParticleSet, array of samples, or a
    callable CDF.
    """
    xw, cw = _weighted_cdf(particles.points[:, dim], particles.weights)

    if isinstance(reference, GridPosterior):
        gx, gc = reference.marginal_cdf(dim)
        ref_cdf = lambda x: np.interp(x, gx, gc, left=0.0, right=1.0)
        support = np.concatenate([xw, gx])
        jump_ref = False
    elif isinstance(reference, ParticleSet):
        rx, rc = _weighted_cdf(reference.points[:, dim], reference.weights)
        ref_cdf = lambda x: _eval_step_cdf(rx, rc, x)
        support = np.concatenate([xw, rx])
        jump_ref = True
    elif callable(reference):
        ref_cdf = reference
        support = xw
        jump_ref = False
    else:
        samples = np.asarray(reference, dtype=float)
        col = samples[:, dim] if samples.ndim > 1 else samples
        rx, rc = _weighted_cdf(col, np.full(col.size, 1.0 / col.size))
        ref_cdf = lambda x: _eval_step_cdf(rx, rc, x)
        support = np.concatenate([xw, rx])
        jump_ref = True

    support = np.unique(support)
    left_pts = np.nextafter(support, -np.inf)
    emp = _eval_step_cdf(xw, cw, support)
    emp_left = _eval_step_cdf(xw, cw, left_pts)
    ref = ref_cdf(support)
    ref_left = ref_cdf(left_pts) if jump_ref else ref
    # sup |F - G|: attained at a jump point (right values) or just before
    # one (left limits); for a continuous reference the left pair reduces
    # to the classic |F(x-) - G(x)| term
    gaps = np.maximum(np.abs(emp - ref), np.abs(emp_left - ref_left))
    return float(np.max(gaps))


# --------------------------------------------------------------------------
# per-iteration bound checks over run artifacts
# --------------------------------------------------------------------------

@dataclass
class BoundReport:
    iterations: list = field(default_factory=list)
    passed: bool = True

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(
            {"passed": self.passed, "iterations": self.iterations}, indent=2))


def bound_suite(result, model, observations, seed: int = 0,
                audit_fraction: float = AUDIT_FRACTION) -> BoundReport:
    """Audit an SMC run against the computable bounds.

    Per iteration: (a) exact-vs-surrogate loss gap on an audit subsample
    stays within the refinement threshold (with slack), (b) the KL
    divergence between the surrogate- and exact-reweighted particle sets
    is within 2 * dW * e_observed where e_observed is the audited max gap
    over all particles, (c) the particle cloud concentrates (covariance
    trace non-increasing up to slack).

    Exact losses are recomputed with full solves; every other input comes
    from the stored run history, including the surrogate losses as they
    were at that iteration.
    """
    rng = np.random.default_rng(seed)
    report = BoundReport()
    prev_trace = None
    for rec, start in zip(result.history, result.snapshots[:-1]):
        m = start.m
        losses_surr = rec.losses
        exact = np.array([model.loss(p, observations) for p in start.points])
        gaps = np.abs(exact - losses_surr)
        e_observed = float(np.max(gaps))

        n_audit = max(1, int(round(audit_fraction * m)))
        audit_idx = rng.choice(m, size=n_audit, replace=False)
        audit_gap = float(np.max(gaps[audit_idx]))
        ok_a = (not np.isfinite(rec.e_thre)) or audit_gap <= ASSUMPTION_SLACK * rec.e_thre

        kl = kl_reweighted(start, exact, losses_surr, rec.delta_w)
        kl_bound = 2.0 * rec.delta_w * e_observed
        ok_b = kl <= kl_bound + 1e-12

        trace = float(np.sum(np.var(result.snapshots[rec.t].points, axis=0)))
        ok_c = prev_trace is None or trace <= CONCENTRATION_SLACK * prev_trace
        prev_trace = trace

        row = {"t": rec.t, "delta_w": rec.delta_w, "e_thre": rec.e_thre,
               "audit_gap": audit_gap, "e_observed": e_observed,
               "kl": kl, "kl_bound": kl_bound, "cov_trace": trace,
               "assumption_ok": bool(ok_a), "kl_ok": bool(ok_b),
               "concentration_ok": bool(ok_c)}
        report.iterations.append(row)
        report.passed = report.passed and ok_a and ok_b and ok_c
    return report


def exact_reweighted(start: ParticleSet, model, observations, delta_w: float) -> ParticleSet:
    losses = np.array([model.loss(p, observations) for p in start.points])
    return reweight(start, losses, delta_w)
