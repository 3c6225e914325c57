"""Doubling functionals: the derivative direction replaced by an independent
copy b of the driver.

For fixed w the order-n functional is a polynomial of degree n in the
b-increments. Three routes are implemented and cross-checked:

* Riemann-Stieltjes values through the derivative recursion (direction b);
* coefficient extraction (gradient and quadratic form in b-increment
  coordinates) through the variation-of-constants kernels, giving exact
  Gaussian moments with no Monte Carlo;
* the rough-path route: a chain of rough integrals along the joint lift of
  (w, b), whose first level must agree with the RS values.

Forward-sensitivity ODEs give the gradient and Hessian of the increment map
w -> y(m)_t; Hilbert-Schmidt norms in the projected Cameron-Martin
coordinates are cross-checked against the chaos moments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .covariance import increment_covariance
from .derivative_constants import constants_table
from .errors import DomainError, NumericalError
from .flow import solve_flow_dense, solve_rde
from .grid import DyadicGrid, SampledPath
from .lift_engine import DEFECT_TOL
from .malliavin import derivative_recursion
from .oneform import OneForm
from .rough_integral import rough_integral
from .roughpath import lift_piecewise_linear
from .sampling import GaussianSample
from .vectorfields import VectorFieldSystem

REFINE_EXTRA = 3
HESSIAN_SYM_TOL = 1e-6


# ---------------------------------------------------------------- RS values


def _xi_values_level(w, b, vf, y0, n_max, refine_extra, substep_target):
    w_fine = w.refine(refine_extra)
    b_fine = b.refine(refine_extra)
    flow = solve_flow_dense(w_fine, vf, y0, substep_target=substep_target)
    vals = derivative_recursion(w_fine, b_fine, vf, flow, n_max)
    return vals[:, :: 1 << refine_extra]


def xi_values_rs(
    w: SampledPath,
    b: SampledPath,
    vf: VectorFieldSystem,
    y0,
    n_max: int,
    refine_extra: int = REFINE_EXTRA,
    substep_target: float = 0.02,
    richardson: bool = True,
) -> np.ndarray:
    """Riemann-Stieltjes values of the doubling functionals at grid times,
    shape (n_max, n_nodes, e): the derivative recursion run with direction b,
    Richardson-extrapolated across two sampling levels."""
    if n_max > 3:
        raise DomainError("chaos functionals capped at order 3")
    coarse = _xi_values_level(w, b, vf, y0, n_max, refine_extra, substep_target)
    if not richardson:
        return coarse
    fine = _xi_values_level(w, b, vf, y0, n_max, refine_extra + 1, substep_target)
    return (4.0 * fine - coarse) / 3.0


def xi_batch_rs(
    w: SampledPath,
    b_increments: np.ndarray,
    vf: VectorFieldSystem,
    y0,
    n_max: int = 2,
    refine_extra: int = REFINE_EXTRA,
    substep_target: float = 0.02,
    richardson: bool = True,
) -> np.ndarray:
    """Order 1..n_max functional values at t = 1 for a batch of b-increment
    arrays of shape (B, 2^m, d); returns (B, n_max, e). Vectorized trapezoid
    evaluation of the recursion, the Monte Carlo engine over b."""
    if n_max > 2:
        raise DomainError("batched evaluation implemented for n <= 2")
    if richardson:
        coarse = xi_batch_rs(w, b_increments, vf, y0, n_max, refine_extra,
                             substep_target, richardson=False)
        fine = xi_batch_rs(w, b_increments, vf, y0, n_max, refine_extra + 1,
                           substep_target, richardson=False)
        return (4.0 * fine - coarse) / 3.0
    b_increments = np.asarray(b_increments, dtype=float)
    B = b_increments.shape[0]
    w_fine = w.refine(refine_extra)
    ys, Js, Ks = solve_flow_dense(w_fine, vf, y0, substep_target=substep_target)
    k = 1 << refine_extra
    db = np.repeat(b_increments, k, axis=1) / k                   # (B, N-1, d)
    w_vals = w_fine.values if w_fine.values.ndim == 2 else w_fine.values[:, None]
    dw = np.diff(w_vals, axis=0)

    P = np.einsum("Nij,Nja->Nia", Ks, vf(ys))                     # K sigma(y)
    avg_P = 0.5 * (P[:-1] + P[1:])
    inc1 = np.einsum("nia,Bna->Bni", avg_P, db)
    psi1 = np.concatenate(
        [np.zeros((B, 1, vf.e)), np.cumsum(inc1, axis=1)], axis=1
    )
    xi1 = np.einsum("Nij,BNj->BNi", Js, psi1)
    out = np.empty((B, n_max, vf.e))
    out[:, 0] = xi1[:, -1]
    if n_max == 2:
        T2 = np.einsum("Nij,Njakl->Niakl", Ks, vf.grad(2, ys))
        T1 = np.einsum("Nij,Njak->Niak", Ks, vf.grad(1, ys))
        q_w = np.einsum("Niakl,BNk,BNl->BNia", T2, xi1, xi1)
        q_b = 2.0 * np.einsum("Niak,BNk->BNia", T1, xi1)
        inc2 = np.einsum("Bnia,na->Bni", 0.5 * (q_w[:, :-1] + q_w[:, 1:]), dw)
        inc2 += np.einsum("Bnia,Bna->Bni", 0.5 * (q_b[:, :-1] + q_b[:, 1:]), db)
        psi2 = np.sum(inc2, axis=1)
        out[:, 1] = np.einsum("ij,Bj->Bi", Js[-1], psi2)
    return out


# -------------------------------------------------------- coefficient route


def _bump_increments(coarse: DyadicGrid, fine: DyadicGrid) -> np.ndarray:
    """Increment over each fine cell of the unit bump of each coarse cell:
    1/2^extra inside, 0 outside. Shape (n_fine_cells, n_coarse_cells)."""
    k = 1 << (fine.level - coarse.level)
    n_c = coarse.n_cells
    out = np.zeros((n_c * k, n_c))
    for lam in range(n_c):
        out[lam * k:(lam + 1) * k, lam] = 1.0 / k
    return out


def xi_coefficients(
    w: SampledPath,
    vf: VectorFieldSystem,
    y0,
    n_max: int = 2,
    t: float = 1.0,
    refine_extra: int = REFINE_EXTRA,
    substep_target: float = 0.02,
    richardson: bool = True,
):
    """Coefficients of b -> Xi_n in b-increment coordinates at time t.

    Returns (g, A): the order-1 functional is linear with gradient g of shape
    (Lambda, e), Lambda = d 2^m in cell-major, component-minor order; the
    order-2 functional is the quadratic form Delta_b^T A[i] Delta_b per output
    component, A of shape (e, Lambda, Lambda), symmetric; A is None when
    n_max == 1. The tent-concentrated coordinates carry the largest sampling
    bias, so two levels are Richardson-combined by default.
    """
    if richardson:
        g0, A0 = xi_coefficients(w, vf, y0, n_max, t, refine_extra,
                                 substep_target, richardson=False)
        g1_, A1 = xi_coefficients(w, vf, y0, n_max, t, refine_extra + 1,
                                  substep_target, richardson=False)
        g = (4.0 * g1_ - g0) / 3.0
        A = None if A0 is None else (4.0 * A1 - A0) / 3.0
        return g, A
    coarse = w.grid
    node_t = coarse.index_of(t)
    w_fine = w.refine(refine_extra)
    fine = w_fine.grid
    kf = 1 << refine_extra
    fine_t = node_t * kf
    ys, Js, Ks = solve_flow_dense(w_fine, vf, y0, substep_target=substep_target)
    d, e = vf.d, vf.e
    n_lam = coarse.n_cells * d
    slopes = _bump_increments(coarse, fine)                       # (n_fine, cells)

    P = np.einsum("Nij,Nja->Nia", Ks, vf(ys))
    avg_P = 0.5 * (P[:-1] + P[1:])
    inc = np.einsum("nia,nc->ncai", avg_P, slopes)                # (n_fine, cells, d, e)
    psi = np.zeros((fine.n_nodes, coarse.n_cells, d, e))
    np.cumsum(inc, axis=0, out=psi[1:])
    N_paths = np.einsum("Nij,Ncaj->Ncai", Js, psi).reshape(fine.n_nodes, n_lam, e)
    g = N_paths[fine_t].copy()

    if n_max == 1:
        return g, None

    w_vals = w_fine.values if w_fine.values.ndim == 2 else w_fine.values[:, None]
    dw = np.diff(w_vals, axis=0)
    dw_t = dw[:fine_t]
    T2 = np.einsum("Nij,Njakl->Niakl", Ks, vf.grad(2, ys))
    T1 = np.einsum("Nij,Njak->Niak", Ks, vf.grad(1, ys))

    # trapezoid node weights for the dw pairing, truncated at t
    wts = np.zeros((fine.n_nodes, d))
    wts[:fine_t] += 0.5 * dw_t
    wts[1:fine_t + 1] += 0.5 * dw_t
    M2 = np.einsum("Niakl,Na->Nikl", T2, wts)                     # (N, e, e, e)
    part1 = np.einsum("Nikl,NLk,NMl->iLM", M2, N_paths, N_paths)

    # db pairing: 2 K grad sigma <N_lam> against the mu bump
    Q1 = np.einsum("Niak,NLk->NLia", T1, N_paths)                 # (N, Lam, e, d)
    avg_Q1 = 0.5 * (Q1[:-1] + Q1[1:])
    slopes_t = slopes.copy()
    slopes_t[fine_t:] = 0.0
    part2 = 2.0 * np.einsum("nLia,nc->iLca", avg_Q1, slopes_t).reshape(e, n_lam, n_lam)

    A_raw = part1 + part2
    A = 0.5 * (A_raw + np.swapaxes(A_raw, 1, 2))
    # the recursion closes with J_t acting on the output component
    A = np.einsum("ij,jLM->iLM", Js[fine_t], A)
    return g, A


# ------------------------------------------------------- forward sensitivity


def flow_sensitivities(
    w: SampledPath,
    vf: VectorFieldSystem,
    y0,
    order: int = 1,
    t: float = 1.0,
    refine_extra: int = REFINE_EXTRA,
    substep_target: float = 0.05,
):
    """Gradient (and Hessian for order 2) of the increment map
    Delta_w -> y(m)_t by forward-sensitivity ODEs along the driver.

    Returns (g, A): g of shape (Lambda, e); A of shape (e, Lambda, Lambda)
    over all ordered coordinate pairs (symmetry is a numerical diagnostic,
    not imposed), or None for order 1.
    """
    if order > 2:
        raise DomainError("sensitivities implemented to order 2")
    coarse = w.grid
    node_t = coarse.index_of(t)
    w_fine = w.refine(refine_extra)
    fine = w_fine.grid
    kf = 1 << refine_extra
    fine_t = node_t * kf
    d, e = vf.d, vf.e
    n_lam = coarse.n_cells * d
    slopes = _bump_increments(coarse, fine)                       # (n_fine, cells)
    w_vals = w_fine.values if w_fine.values.ndim == 2 else w_fine.values[:, None]
    inc = np.diff(w_vals, axis=0)

    y = np.asarray(y0, dtype=float).copy()
    Z = np.zeros((n_lam, e))
    Z2 = np.zeros((n_lam, n_lam, e)) if order >= 2 else None

    def rhs(y_loc, Z_loc, Z2_loc, delta, bump):
        # bump: (cells,) increments of the coordinate tents over this substep
        s = vf(y_loc)                                             # (e, d)
        g1 = vf.grad(1, y_loc)                                    # (e, d, e)
        M = np.einsum("iak,a->ik", g1, delta)
        dy = s @ delta
        force = np.einsum("ia,c->cai", s, bump).reshape(n_lam, e)
        dZ = Z_loc @ M.T + force
        if Z2_loc is None:
            return dy, dZ, None
        g2 = vf.grad(2, y_loc)
        quad = np.einsum("iakl,a,Lk,Ml->LMi", g2, delta, Z_loc, Z_loc)
        cross = np.einsum("iak,Mk,c->caMi", g1, Z_loc, bump).reshape(n_lam, n_lam, e)
        dZ2 = (
            np.einsum("ik,LMk->LMi", M, Z2_loc)
            + quad
            + cross
            + np.swapaxes(cross, 0, 1)
        )
        return dy, dZ, dZ2

    for cell in range(fine_t):
        delta = inc[cell]
        bump = slopes[cell]
        nsub = max(1, int(np.ceil(np.linalg.norm(delta) / substep_target)))
        dsub = delta / nsub
        bsub = bump / nsub
        for _ in range(nsub):
            k1 = rhs(y, Z, Z2, dsub, bsub)
            k2 = rhs(y + 0.5 * k1[0], Z + 0.5 * k1[1],
                     None if Z2 is None else Z2 + 0.5 * k1[2], dsub, bsub)
            k3 = rhs(y + 0.5 * k2[0], Z + 0.5 * k2[1],
                     None if Z2 is None else Z2 + 0.5 * k2[2], dsub, bsub)
            k4 = rhs(y + k3[0], Z + k3[1],
                     None if Z2 is None else Z2 + k3[2], dsub, bsub)
            y = y + (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]) / 6.0
            Z = Z + (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]) / 6.0
            if Z2 is not None:
                Z2 = Z2 + (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]) / 6.0

    # cross-component expansion: coordinate (cell, comp) forces column comp;
    # the integration above treats bump per cell with all components, so the
    # gradient rows interleave cell-major, component-minor already.
    g = Z
    if order == 1:
        return g, None
    A = np.transpose(Z2, (2, 0, 1))
    return g, A


# ---------------------------------------------------------------- rough route


@dataclass(frozen=True)
class ChaosFunctional:
    """Order-n doubling functional: values at grid times plus the polynomial
    coefficient data in b-increment coordinates (n <= 2)."""

    order: int
    level: int
    grid: DyadicGrid
    values: np.ndarray = field(repr=False)            # (n_nodes, e)
    gradient: Optional[np.ndarray] = field(default=None, repr=False)
    hessian: Optional[np.ndarray] = field(default=None, repr=False)

    def at_time(self, t: float) -> np.ndarray:
        return self.values[self.grid.index_of(t)]


def xi_chaos(
    w: SampledPath,
    b: SampledPath,
    vf: VectorFieldSystem,
    y0,
    n_max: int = 2,
    p: float = 2.5,
    tol: float = DEFECT_TOL,
    refine_extra: int = REFINE_EXTRA,
) -> list:
    """Functionals through the rough-path route: the chain of rough integrals
    along the joint lift of (w, b), extending the path by one integral block
    and one Jacobian-multiplied block per order.

    The first level of each functional block is the rough-path realization of
    the Riemann-Stieltjes recursion; coefficient data (n <= 2) is attached
    from the variation-of-constants kernels.
    """
    from .chaos_forms import BlockLayout, MatrixActionForm, RecursionIntegrandForm

    if n_max > 3:
        raise DomainError("chaos functionals capped at order 3")
    d, e = vf.d, vf.e
    if w.grid.level != b.grid.level:
        raise DomainError("w and b must share a grid")
    wv = w.values if w.values.ndim == 2 else w.values[:, None]
    bv = b.values if b.values.ndim == 2 else b.values[:, None]
    joint = SampledPath(w.grid, np.concatenate([wv, bv], axis=1))
    x0 = lift_piecewise_linear(joint, p)
    aug = solve_rde(x0, vf, y0, tol=tol)
    path = aug.path
    layout = BlockLayout(
        [("w", d), ("b", d), ("y", e), ("J", e * e), ("K", e * e)]
    )
    xi_slices = []
    for n in range(1, n_max + 1):
        form_i = RecursionIntegrandForm(layout, vf, n)
        path = rough_integral(form_i, path, tol=tol)
        layout = layout.extended(f"i{n}", e)
        form_x = MatrixActionForm(layout, "J", f"i{n}", e)
        path = rough_integral(form_x, path, tol=tol)
        layout = layout.extended(f"xi{n}", e)
        xi_slices.append(layout.sl(f"xi{n}"))

    g, A = (None, None)
    if n_max <= 2:
        g, A = xi_coefficients(w, vf, y0, n_max=min(n_max, 2), refine_extra=refine_extra)
    out = []
    for n in range(1, n_max + 1):
        vals = path.node_values[:, xi_slices[n - 1]]
        out.append(
            ChaosFunctional(
                order=n,
                level=w.grid.level,
                grid=w.grid,
                values=vals,
                gradient=g if n == 1 else None,
                hessian=A if n == 2 else None,
            )
        )
    return out


# ---------------------------------------------------------------- HS report


@dataclass(frozen=True)
class HSNormReport:
    m: int
    n: int
    t: float
    hs_norm: float
    chaos_mean: float
    chaos_var: float
    oracle_gap: float

    def to_record(self) -> dict:
        return {
            "m": self.m, "n": self.n, "t": self.t, "hs_norm": self.hs_norm,
            "chaos_mean": self.chaos_mean, "chaos_var": self.chaos_var,
            "oracle_gap": self.oracle_gap,
        }


def export_hs_reports_json(reports, fname: str) -> None:
    with open(fname, "w") as fh:
        json.dump([r.to_record() for r in reports], fh)


def hs_norm(
    sample: GaussianSample,
    n: int,
    t: float,
    vf: VectorFieldSystem,
    y0,
    refine_extra: int = REFINE_EXTRA,
    substep_target: float = 0.008,
) -> HSNormReport:
    """Hilbert-Schmidt norm of the order-n derivative of y(m)_t in projected
    Cameron-Martin coordinates, cross-checked against the exact Gaussian
    moments of the doubling functional.

    order 1: |Q^(1/2) g| with E_b[Xi_1^2] = g_chaos^T Q g_chaos as the check.
    order 2: |Q^(1/2) A Q^(1/2)|_HS with E_b[Xi_2] = tr(A Q) and
    Var_b[Xi_2] = 2 |Q^(1/2) A Q^(1/2)|_HS^2.
    """
    if n > 2:
        raise DomainError("HS norms implemented for n <= 2")
    w = sample.path("w")
    Q = increment_covariance(sample.model, sample.grid)
    Qhat = np.kron(Q, np.eye(sample.model.dim))
    extra = refine_extra + 1 if n == 1 else refine_extra
    sub = min(substep_target, 0.002) if n == 1 else substep_target
    g_sens, A_sens = flow_sensitivities(
        w, vf, y0, order=n, t=t, refine_extra=extra, substep_target=sub
    )
    g_chaos, A_chaos = xi_coefficients(
        w, vf, y0, n_max=n, t=t, refine_extra=extra, substep_target=sub
    )

    if n == 1:
        sens_sq = float(np.einsum("Li,LM,Mi->", g_sens, Qhat, g_sens))
        chaos_sq = float(np.einsum("Li,LM,Mi->", g_chaos, Qhat, g_chaos))
        return HSNormReport(
            m=sample.grid.level, n=1, t=t,
            hs_norm=float(np.sqrt(sens_sq)),
            chaos_mean=0.0,
            chaos_var=chaos_sq,
            oracle_gap=abs(sens_sq - chaos_sq),
        )

    sym_defect = float(np.max(np.abs(A_sens - np.swapaxes(A_sens, 1, 2))))
    if sym_defect > HESSIAN_SYM_TOL:
        raise NumericalError(f"Hessian symmetrization defect {sym_defect:.3e}")
    A_sym = 0.5 * (A_sens + np.swapaxes(A_sens, 1, 2))
    lam, U = np.linalg.eigh(Qhat)
    lam = np.clip(lam, 0.0, None)
    root = U @ np.diag(np.sqrt(lam)) @ U.T
    hs_sq = 0.0
    var_chaos = 0.0
    mean_sens = np.zeros(vf.e)
    mean_chaos = np.zeros(vf.e)
    for i in range(vf.e):
        mid_sens = root @ A_sym[i] @ root
        mid_chaos = root @ A_chaos[i] @ root
        hs_sq += float(np.sum(mid_sens**2))
        var_chaos += 2.0 * float(np.sum(mid_chaos**2))
        mean_sens[i] = float(np.trace(A_sym[i] @ Qhat))
        mean_chaos[i] = float(np.trace(A_chaos[i] @ Qhat))
    var_sens = 2.0 * hs_sq
    gap = max(abs(var_sens - var_chaos), float(np.max(np.abs(mean_sens - mean_chaos))))
    return HSNormReport(
        m=sample.grid.level, n=2, t=t,
        hs_norm=float(np.sqrt(hs_sq)),
        chaos_mean=float(mean_chaos[0]) if vf.e == 1 else float(np.linalg.norm(mean_chaos)),
        chaos_var=var_chaos,
        oracle_gap=gap,
    )
