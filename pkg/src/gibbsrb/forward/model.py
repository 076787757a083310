"""Affinely parametrized discrete forward models.

A model is A(xi) u = f(xi) with A(xi) = sum_p theta_p(xi) A_p and
f(xi) = sum_q phi_q(xi) f_q, plus an observation matrix mapping the state
to measurement channels and a loss kind tying predictions to data.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

LOSS_KINDS = ("squared_l2", "l1", "l2")


class SolverError(RuntimeError):
    """Singular or broken-down linear solve."""


class SolveCounters:
    """Thread-safe counters for the different kinds of linear solves."""

    def __init__(self):
        self._lock = threading.Lock()
        self.full = 0
        self.sensitivity = 0
        self.stability = 0

    def add(self, kind: str, n: int = 1) -> None:
        with self._lock:
            setattr(self, kind, getattr(self, kind) + n)

    def snapshot(self) -> dict:
        with self._lock:
            return {"full": self.full, "sensitivity": self.sensitivity,
                    "stability": self.stability}


@dataclass
class ForwardModel:
    """Discrete PDE forward map with affine parameter dependence.

    operator_terms[p] pairs with operator_coeffs[p]; likewise for the rhs.
    operator_grads[j][p] is d theta_p / d xi_j (the coefficient maps are
    affine in xi, so these are constants), used for sensitivity solves.
    """

    name: str
    operator_terms: list
    operator_coeffs: list
    rhs_terms: list
    rhs_coeffs: list
    operator_coeff_grads: np.ndarray  # (M, P) constants d theta_p / d xi_j
    rhs_coeff_grads: np.ndarray       # (M, Q)
    obs_matrix: sp.csr_matrix
    loss_kind: str
    domain: "ParameterDomain"
    mesh: dict
    truth_default: np.ndarray
    direct_assemble: Optional[Callable] = None
    obs_names: list = field(default_factory=list)
    counters: SolveCounters = field(default_factory=SolveCounters)
    _lu_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}")
        if self.obs_matrix.shape[1] != self.n_dof:
            raise ValueError("observation matrix column count != dof count")

    @property
    def n_dof(self) -> int:
        return self.operator_terms[0].shape[0]

    @property
    def n_obs(self) -> int:
        return self.obs_matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.domain.dim

    # ----- assembly -----
    def operator_at(self, xi: np.ndarray) -> sp.csc_matrix:
        """A(xi) from the cached affine terms."""
        xi = np.asarray(xi, dtype=float)
        A = self.operator_coeffs[0](xi) * self.operator_terms[0]
        for theta, term in zip(self.operator_coeffs[1:], self.operator_terms[1:]):
            A = A + theta(xi) * term
        return sp.csc_matrix(A)

    def rhs_at(self, xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        f = np.zeros(self.n_dof)
        for phi, term in zip(self.rhs_coeffs, self.rhs_terms):
            f += phi(xi) * term
        return f

    def _factorize(self, xi: np.ndarray):
        key = np.asarray(xi, dtype=float).tobytes()
        hit = self._lu_cache.get("last")
        if hit is not None and hit[0] == key:
            return hit[1]
        try:
            # structurally symmetric FEM/FD matrices: symmetric ordering
            lu = spla.splu(self.operator_at(xi), permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:  # SuperLU signals singularity this way
            raise SolverError(f"operator factorization failed at xi={xi}") from exc
        self._lu_cache["last"] = (key, lu)
        return lu

    # ----- solves -----
    def solve_full(self, xi: np.ndarray) -> np.ndarray:
        """High-fidelity solve of A(xi) u = f(xi); increments the full counter."""
        if not bool(self.domain.contains(np.atleast_2d(xi))[0]):
            raise ValueError(f"xi={xi} outside the parameter box")
        lu = self._factorize(xi)
        f = self.rhs_at(xi)
        u = lu.solve(f)
        resid = np.linalg.norm(f - self.operator_at(xi) @ u)
        if not np.isfinite(resid) or resid > 1e-10 * max(np.linalg.norm(f), 1e-300):
            raise SolverError(f"solver breakdown at xi={xi}: residual {resid:.3e}")
        self.counters.add("full")
        return u

    def solve_sensitivity(self, xi: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Columns du/dxi_j solving A (du/dxi_j) = df/dxi_j - (dA/dxi_j) u.

        Reuses the factorization from the preceding solve_full at xi.
        """
        xi = np.asarray(xi, dtype=float)
        lu = self._factorize(xi)
        rhs = np.zeros((self.n_dof, self.dim))
        for j in range(self.dim):
            for q, g in enumerate(self.rhs_coeff_grads[j]):
                if g != 0.0:
                    rhs[:, j] += g * self.rhs_terms[q]
            for p, g in enumerate(self.operator_coeff_grads[j]):
                if g != 0.0:
                    rhs[:, j] -= g * (self.operator_terms[p] @ u)
        self.counters.add("sensitivity", self.dim)
        return lu.solve(rhs)

    # ----- observation and loss -----
    def observe(self, u: np.ndarray) -> np.ndarray:
        return self.obs_matrix @ u

    def loss_from_prediction(self, predicted: np.ndarray, observations) -> float:
        """Cumulative loss sum_i loss(predicted, d_i) for the model's loss kind."""
        resid = predicted[None, :] - observations.data
        if self.loss_kind == "squared_l2":
            return float(np.sum(resid**2))
        if self.loss_kind == "l1":
            return float(np.sum(np.abs(resid)))
        return float(np.sum(np.linalg.norm(resid, axis=1)))

    def loss(self, xi: np.ndarray, observations) -> float:
        return self.loss_from_prediction(self.observe(self.solve_full(xi)), observations)

    # ----- checks -----
    def check_affine_consistency(self, n_samples: int = 100, seed: int = 0,
                                 tol: float = 1e-12) -> float:
        """Max relative Frobenius gap between direct and affine assembly."""
        if self.direct_assemble is None:
            raise ValueError("model has no direct assembly path")
        rng = np.random.default_rng(seed)
        worst = 0.0
        pts = self.domain.sample(n_samples, rng)
        for xi in pts:
            A_aff = self.operator_at(xi)
            A_dir = self.direct_assemble(xi)
            num = spla.norm(A_aff - A_dir)
            den = spla.norm(A_dir)
            worst = max(worst, num / den)
        if worst > tol:
            raise AssertionError(f"affine reconstruction off by {worst:.3e} > {tol:g}")
        return worst

    def check_invertibility(self, n_samples: int = 5, seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        center = 0.5 * (self.domain.lower + self.domain.upper)
        for xi in [center, *self.domain.sample(n_samples, rng)]:
            self._factorize(xi)

    def observation_operator_norm(self) -> float:
        """Largest singular value of the observation matrix."""
        D = self.obs_matrix
        if min(D.shape) <= 200:
            return float(np.linalg.svd(D.toarray(), compute_uv=False)[0])
        return float(spla.svds(D, k=1, return_singular_vectors=False)[0])
