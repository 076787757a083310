"""Random-walk Metropolis-Hastings reference sampler.

Targets exp(-W * loss(xi)) * prior(xi) with exact (full-solve) losses; the
workhorse cross-check for the particle results.  The proposal is an
isotropic Gaussian step in box-scaled coordinates.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .seeding import PHASE_MCMC, stream


@dataclass
class ChainResult:
    samples: np.ndarray        # post burn-in, (n_samples, M)
    acceptance_rate: float
    full_solves: int
    out_of_support_proposals: int

    def to_csv(self, path) -> None:
        from pathlib import Path
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"xi_{j + 1}" for j in range(self.samples.shape[1])])
            for row in self.samples:
                w.writerow([repr(float(v)) for v in row])


def run_rwmh(model, observations, weight: float, n_samples: int = 5000,
             burn_in: int = 1000, step_scale: float = 0.1, seed: int = 0,
             start: np.ndarray | None = None) -> ChainResult:
    """Gaussian random-walk MH chain for the tempered target.

    Every in-support proposal costs exactly one full solve; proposals that
    leave the prior support are rejected without touching the model, so
    full solves = 1 (start) + (steps - out-of-support count).
    """
    if weight < 0:
        raise ValueError("weight must be >= 0")
    domain = model.domain
    rng = stream(seed, PHASE_MCMC)
    counters0 = model.counters.snapshot()["full"]

    x = domain.sample(1, rng)[0] if start is None else np.asarray(start, dtype=float)
    loss_x = model.loss(x, observations)
    lp_x = domain.log_pdf(x)
    step = step_scale * domain.widths

    total = n_samples + burn_in
    chain = np.empty((total, domain.dim))
    accepted = 0
    out_of_support = 0
    for i in range(total):
        prop = x + step * rng.standard_normal(domain.dim)
        u = rng.random()
        lp_p = domain.log_pdf(prop)
        if not np.isfinite(lp_p):
            out_of_support += 1
            chain[i] = x
            continue
        loss_p = model.loss(prop, observations)
        log_alpha = -weight * (loss_p - loss_x) + lp_p - lp_x
        with np.errstate(divide="ignore"):
            accept = np.log(u) < log_alpha
        if accept:
            x, loss_x, lp_x = prop, loss_p, lp_p
            accepted += 1
        chain[i] = x

    rate = accepted / total
    if not 0.05 <= rate <= 0.7:
        warnings.warn(f"RWMH acceptance rate {rate:.3f} outside [0.05, 0.7]; "
                      "step scale likely mis-tuned", RuntimeWarning)
    return ChainResult(
        samples=chain[burn_in:],
        acceptance_rate=rate,
        full_solves=model.counters.snapshot()["full"] - counters0,
        out_of_support_proposals=out_of_support,
    )
