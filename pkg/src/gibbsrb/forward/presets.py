"""The three built-in forward problems.

adv1d    : 1D advection-diffusion, piecewise-constant advection field with
           two unknown parameters, second-order central finite differences.
adv2d    : 2D advection-diffusion on the unit square, unknown diffusivity
           plus two unknown source magnitudes, bilinear quad FEM.
elast2d  : plane-stress linear elasticity, piecewise-constant Young's
           modulus over 5 layered or 9 block regions, bilinear quad FEM.

All presets produce an affine decomposition A(xi) = sum_p theta_p(xi) A_p,
f(xi) = sum_q phi_q(xi) f_q together with a from-scratch direct assembly
closure used by the consistency checks.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..domain import ParameterDomain, PriorSpec
from .model import ForwardModel

_GP = np.array([-1.0, 1.0]) / np.sqrt(3.0)


def assemble(preset: str, mesh_cfg: dict | None = None) -> ForwardModel:
    """Build a preset model; mesh_cfg overrides the desk-scale defaults."""
    mesh_cfg = dict(mesh_cfg or {})
    if preset == "adv1d":
        model = adv1d(**mesh_cfg)
    elif preset == "adv2d":
        model = adv2d(**mesh_cfg)
    elif preset in ("elast2d_layered", "elast2d"):
        model = elast2d(layout="layered", **mesh_cfg)
    elif preset == "elast2d_inclusion":
        model = elast2d(layout="inclusion", **mesh_cfg)
    else:
        raise ValueError(f"unknown preset {preset!r}")
    model.check_invertibility()
    return model


# --------------------------------------------------------------------------
# 1D advection-diffusion
# --------------------------------------------------------------------------

def adv1d(cells: int = 128, nu: float = 0.1, b1: float = -0.5, b2: float = -0.2,
          obs_points=(0.1, 0.5, 0.9), upwind: bool = False) -> ForwardModel:
    """-nu u'' + b(x) u' = 1 on (0,1), u(0)=u(1)=0.

    b(x) = (b1 + 2 xi_1) on [0, 0.5) and (b2 + 2 xi_2) on [0.5, 1]; a node
    sitting exactly on the jump takes the average of the two pieces, which
    keeps the scheme second order through the kink.
    """
    n = int(cells)
    if n < 4:
        raise ValueError("need at least 4 cells")
    h = 1.0 / n
    x = np.linspace(0.0, 1.0, n + 1)[1:-1]
    m = n - 1

    w_left = np.where(x < 0.5, 1.0, 0.0)
    w_left[np.isclose(x, 0.5)] = 0.5
    w_right = 1.0 - w_left

    diff = sp.diags([-np.ones(m - 1), 2.0 * np.ones(m), -np.ones(m - 1)],
                    [-1, 0, 1]) * (nu / h**2)

    def advection(weights: np.ndarray) -> sp.csr_matrix:
        if upwind:
            # one-sided differences; direction frozen at the box center
            # coefficient sign so the decomposition stays affine in xi
            return sp.diags([-weights[1:] / h, weights / h, np.zeros(m - 1)],
                            [-1, 0, 1]).tocsr()
        return sp.diags([-weights[1:] / (2 * h), np.zeros(m), weights[:-1] / (2 * h)],
                        [-1, 0, 1]).tocsr()

    a_terms = [sp.csr_matrix(diff), advection(w_left), advection(w_right)]
    a_coeffs = [lambda xi: 1.0,
                lambda xi: b1 + 2.0 * xi[0],
                lambda xi: b2 + 2.0 * xi[1]]
    a_grads = np.array([[0.0, 2.0, 0.0],
                        [0.0, 0.0, 2.0]])
    f_terms = [np.ones(m)]
    f_coeffs = [lambda xi: 1.0]
    f_grads = np.zeros((2, 1))

    nodes = np.linspace(0.0, 1.0, n + 1)
    obs = sp.lil_matrix((len(obs_points), m))
    names = []
    for r, xo in enumerate(obs_points):
        j = min(int(np.floor(xo * n)), n - 1)
        t = (xo - nodes[j]) / h
        for node, wgt in ((j, 1.0 - t), (j + 1, t)):
            if 1 <= node <= n - 1 and wgt != 0.0:
                obs[r, node - 1] += wgt
        names.append(f"u(x={xo:g})")

    domain = ParameterDomain(np.zeros(2), np.ones(2))

    def direct(xi):
        bl = b1 + 2.0 * xi[0]
        br = b2 + 2.0 * xi[1]
        c = np.where(x < 0.5, bl, br)
        c[np.isclose(x, 0.5)] = 0.5 * (bl + br)
        if upwind:
            A = sp.diags([-nu / h**2 - c[1:] / h, 2 * nu / h**2 + c / h,
                          -nu / h**2 * np.ones(m - 1)], [-1, 0, 1])
        else:
            A = sp.diags([-nu / h**2 - c[1:] / (2 * h), 2 * nu / h**2 * np.ones(m),
                          -nu / h**2 + c[:-1] / (2 * h)], [-1, 0, 1])
        return sp.csc_matrix(A)

    return ForwardModel(
        name="adv1d",
        operator_terms=a_terms, operator_coeffs=a_coeffs,
        rhs_terms=f_terms, rhs_coeffs=f_coeffs,
        operator_coeff_grads=a_grads, rhs_coeff_grads=f_grads,
        obs_matrix=sp.csr_matrix(obs), loss_kind="squared_l2",
        domain=domain,
        mesh={"kind": "fd1d", "cells": n, "nu": nu, "b1": b1, "b2": b2,
              "obs_points": list(obs_points), "upwind": upwind},
        truth_default=np.array([0.2, 0.7]),
        direct_assemble=direct, obs_names=names,
    )


# --------------------------------------------------------------------------
# Q1 structured-grid machinery shared by the 2D presets
# --------------------------------------------------------------------------

def _grid(nx, ny):
    xn = np.linspace(0.0, 1.0, nx + 1)
    yn = np.linspace(0.0, 1.0, ny + 1)
    X, Y = np.meshgrid(xn, yn, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])  # node id = ix*(ny+1)+iy
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    n00 = ix * (ny + 1) + iy
    elems = np.column_stack([n00.ravel(), (n00 + ny + 1).ravel(),
                             (n00 + ny + 2).ravel(), (n00 + 1).ravel()])
    return nodes, elems


def _shape(gx, gy):
    N = 0.25 * np.array([(1 - gx) * (1 - gy), (1 + gx) * (1 - gy),
                         (1 + gx) * (1 + gy), (1 - gx) * (1 + gy)])
    dN = 0.25 * np.array([[-(1 - gy), -(1 - gx)], [(1 - gy), -(1 + gx)],
                          [(1 + gy), (1 + gx)], [-(1 + gy), (1 - gx)]])
    return N, dN


def _gauss_data(nx, ny):
    hx, hy = 1.0 / nx, 1.0 / ny
    jinv = np.diag([2.0 / hx, 2.0 / hy])
    det = hx * hy / 4.0
    out = []
    for gx in _GP:
        for gy in _GP:
            N, dN = _shape(gx, gy)
            out.append((N, dN @ jinv, det))
    return out


def _interp_rows(points, nodes, nx, ny, free, component=None):
    """Bilinear interpolation rows at arbitrary points, restricted to free dofs.

    component None -> scalar field; 0/1 -> that displacement component of a
    2-dof-per-node vector field.
    """
    hx, hy = 1.0 / nx, 1.0 / ny
    per = 1 if component is None else 2
    D = sp.lil_matrix((len(points), len(nodes) * per))
    for r, (px, py) in enumerate(points):
        ex = min(int(px / hx), nx - 1)
        ey = min(int(py / hy), ny - 1)
        tx = (px - ex * hx) / hx
        ty = (py - ey * hy) / hy
        for dx, dy, w in ((0, 0, (1 - tx) * (1 - ty)), (1, 0, tx * (1 - ty)),
                          (1, 1, tx * ty), (0, 1, (1 - tx) * ty)):
            nid = (ex + dx) * (ny + 1) + (ey + dy)
            col = nid if component is None else 2 * nid + component
            D[r, col] += w
    return sp.csr_matrix(D)[:, free]


def _obs_grid_points(g):
    return [(i / (g + 1), j / (g + 1)) for i in range(1, g + 1) for j in range(1, g + 1)]


# --------------------------------------------------------------------------
# 2D advection-diffusion
# --------------------------------------------------------------------------

_G1 = lambda x, y: np.exp((-(x - 0.25) ** 2 - (y - 0.5) ** 2) / 0.25**2)
_G2 = lambda x, y: np.exp((-(x - 0.75) ** 2 - (y - 0.75) ** 2) / 0.33**2)


def adv2d(nx: int = 32, ny: int | None = None, obs_grid: int = 7) -> ForwardModel:
    """-div(kappa grad u) + v . grad u = f, Dirichlet on the bottom edge.

    kappa = 0.02 + 0.98 xi_1; v = 13 e_x + 9 (-x, y); two Gaussian sources
    with magnitudes 10 xi_2 and 5 xi_3.
    """
    ny = nx if ny is None else ny
    nodes, elems = _grid(nx, ny)
    gauss = _gauss_data(nx, ny)
    xy = nodes[elems]  # (E, 4, 2)
    nE = len(elems)

    K_loc = np.zeros((4, 4))
    C_all = np.zeros((nE, 4, 4))
    f1 = np.zeros(len(nodes))
    f2 = np.zeros(len(nodes))
    for N, G, det in gauss:
        K_loc += (G @ G.T) * det
        P = np.einsum("a,eak->ek", N, xy)  # gauss point per element
        v = np.column_stack([13.0 - 9.0 * P[:, 0], 9.0 * P[:, 1]])
        adv = np.einsum("bk,ek->eb", G, v)
        C_all += det * np.einsum("a,eb->eab", N, adv)
        np.add.at(f1, elems, det * 10.0 * _G1(P[:, 0], P[:, 1])[:, None] * N)
        np.add.at(f2, elems, det * 5.0 * _G2(P[:, 0], P[:, 1])[:, None] * N)

    rows = np.repeat(elems, 4, axis=1).ravel()
    cols = np.tile(elems, (1, 4)).ravel()
    nn = len(nodes)
    K_full = sp.coo_matrix((np.tile(K_loc.ravel(), nE), (rows, cols)),
                           shape=(nn, nn)).tocsr()
    C_full = sp.coo_matrix((C_all.ravel(), (rows, cols)), shape=(nn, nn)).tocsr()

    free = np.where(nodes[:, 1] > 0)[0]  # clamp y = 0
    K = K_full[np.ix_(free, free)]
    C = C_full[np.ix_(free, free)]

    pts = _obs_grid_points(obs_grid)
    obs = _interp_rows(pts, nodes, nx, ny, free)

    a_terms = [sp.csr_matrix(K), sp.csr_matrix(C)]
    a_coeffs = [lambda xi: 0.02 + 0.98 * xi[0], lambda xi: 1.0]
    a_grads = np.array([[0.98, 0.0], [0.0, 0.0], [0.0, 0.0]])
    f_terms = [f1[free], f2[free]]
    f_coeffs = [lambda xi: xi[1], lambda xi: xi[2]]
    f_grads = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

    domain = ParameterDomain(np.zeros(3), np.ones(3),
                             (PriorSpec("beta", 1, 2), PriorSpec("beta", 3, 1),
                              PriorSpec("beta", 3, 1)))

    def direct(xi):
        # single element-level assembly with kappa baked in
        vals = ((0.02 + 0.98 * xi[0]) * K_loc[None, :, :] + C_all).ravel()
        A = sp.coo_matrix((vals, (rows, cols)), shape=(nn, nn)).tocsc()
        return A[np.ix_(free, free)]

    return ForwardModel(
        name="adv2d",
        operator_terms=a_terms, operator_coeffs=a_coeffs,
        rhs_terms=f_terms, rhs_coeffs=f_coeffs,
        operator_coeff_grads=a_grads, rhs_coeff_grads=f_grads,
        obs_matrix=obs, loss_kind="l1",
        domain=domain,
        mesh={"kind": "q1", "nx": nx, "ny": ny, "obs_grid": obs_grid},
        truth_default=np.array([0.1, 0.7, 0.5]),
        direct_assemble=direct,
        obs_names=[f"u({px:g},{py:g})" for px, py in pts],
    )


# --------------------------------------------------------------------------
# plane-stress elasticity
# --------------------------------------------------------------------------

def _region_ids(nodes, elems, layout):
    mids = nodes[elems].mean(axis=1)
    if layout == "layered":
        return np.minimum((mids[:, 1] * 5).astype(int), 4), 5
    bx = np.minimum((mids[:, 0] * 3).astype(int), 2)
    by = np.minimum((mids[:, 1] * 3).astype(int), 2)
    return 3 * by + bx, 9


def elast2d(nx: int = 32, ny: int | None = None, obs_grid: int = 9,
            layout: str = "layered", poisson: float = 0.3,
            traction: float = 1.0) -> ForwardModel:
    """Plane-stress elasticity, clamped bottom edge, uniform downward
    traction on the top edge; unknown Young's modulus per region."""
    if layout not in ("layered", "inclusion"):
        raise ValueError("layout must be 'layered' or 'inclusion'")
    ny = nx if ny is None else ny
    nodes, elems = _grid(nx, ny)
    gauss = _gauss_data(nx, ny)
    region, n_regions = _region_ids(nodes, elems, layout)

    # unit-modulus plane-stress element stiffness (same for every element)
    D1 = (1.0 / (1.0 - poisson**2)) * np.array(
        [[1.0, poisson, 0.0], [poisson, 1.0, 0.0], [0.0, 0.0, (1.0 - poisson) / 2.0]])
    K_loc = np.zeros((8, 8))
    for N, G, det in gauss:
        B = np.zeros((3, 8))
        B[0, 0::2] = G[:, 0]
        B[1, 1::2] = G[:, 1]
        B[2, 0::2] = G[:, 1]
        B[2, 1::2] = G[:, 0]
        K_loc += (B.T @ D1 @ B) * det

    edofs = np.empty((len(elems), 8), dtype=int)
    edofs[:, 0::2] = 2 * elems
    edofs[:, 1::2] = 2 * elems + 1
    nn2 = 2 * len(nodes)

    a_terms_full = []
    for r in range(n_regions):
        sel = edofs[region == r]
        rows = np.repeat(sel, 8, axis=1).ravel()
        cols = np.tile(sel, (1, 8)).ravel()
        vals = np.tile(K_loc.ravel(), len(sel))
        a_terms_full.append(sp.coo_matrix((vals, (rows, cols)), shape=(nn2, nn2)).tocsr())

    # downward traction on the top edge, consistent nodal loads
    load = np.zeros(nn2)
    hx = 1.0 / nx
    top = [ix * (ny + 1) + ny for ix in range(nx + 1)]
    for a, b in zip(top[:-1], top[1:]):
        for nid in (a, b):
            load[2 * nid + 1] += -traction * hx / 2.0

    bottom = np.array([ix * (ny + 1) for ix in range(nx + 1)])
    fixed = np.concatenate([2 * bottom, 2 * bottom + 1])
    free = np.setdiff1d(np.arange(nn2), fixed)

    a_terms = [sp.csr_matrix(M[np.ix_(free, free)]) for M in a_terms_full]

    def make_coeff(r):
        return lambda xi: xi[r]

    a_coeffs = [make_coeff(r) for r in range(n_regions)]
    a_grads = np.eye(n_regions)
    f_terms = [load[free]]
    f_coeffs = [lambda xi: 1.0]
    f_grads = np.zeros((n_regions, 1))

    pts = _obs_grid_points(obs_grid)
    obs = _interp_rows(pts, nodes, nx, ny, free, component=1)

    domain = ParameterDomain(np.full(n_regions, 0.1), np.full(n_regions, 10.0),
                             tuple(PriorSpec("beta", 1, 3) for _ in range(n_regions)))
    if layout == "layered":
        truth = np.array([1.0, 2.0, 4.0, 2.0, 1.0])
    else:
        truth = np.ones(9)
        truth[4] = 5.0

    all_rows = np.repeat(edofs, 8, axis=1).ravel()
    all_cols = np.tile(edofs, (1, 8)).ravel()

    def direct(xi):
        # element-by-element assembly with the modulus baked in, so this
        # path does not reuse the precomputed per-region matrices
        vals = (np.asarray(xi)[region][:, None, None] * K_loc).ravel()
        A = sp.coo_matrix((vals, (all_rows, all_cols)), shape=(nn2, nn2)).tocsc()
        return A[np.ix_(free, free)]

    return ForwardModel(
        name=f"elast2d_{layout}",
        operator_terms=a_terms, operator_coeffs=a_coeffs,
        rhs_terms=f_terms, rhs_coeffs=f_coeffs,
        operator_coeff_grads=a_grads, rhs_coeff_grads=f_grads,
        obs_matrix=obs, loss_kind="l2",
        domain=domain,
        mesh={"kind": "q1_elast", "nx": nx, "ny": ny, "obs_grid": obs_grid,
              "layout": layout, "poisson": poisson, "traction": traction},
        truth_default=truth,
        direct_assemble=direct,
        obs_names=[f"uy({px:g},{py:g})" for px, py in pts],
    )
