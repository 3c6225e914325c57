"""Joint-lift engine: extend a rough path by an integral block or an RDE
solution block through compensated local models.

Per grid cell the driver is split dyadically (each rough path carries a
refiner that produces sub-cell data, exact for straight segments); on every
sub-cell the new block's increment is the step-3 Euler contraction of the
driver tensors with the coefficient and its total derivatives, and the joint
signature blocks are filled by loading the driver tensors with the
coefficient matrix plus first-order corrections. Sub-division deepens until
the combined cell tensors stop moving, so accuracy is tolerance-driven rather
than scheme-fixed; exceeding the depth cap raises with the residual.

Local models always use level-3 driver data internally (every refiner
provides it), which keeps the per-sub-cell defect at fourth order in the
sub-increment; outputs store level 3 only when the roughness requires it.

Index conventions (D = driver dim, E = new block dim):
    F[e,a]        coefficient of dx^a in dY^e at the sub-cell start
    G2[e,a,b]     total derivative along letter a of the coefficient of b,
                  contracted with X2[a,b]
    G3[e,a,b,c]   second total derivative, contracted with X3[a,b,c]
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, NumericalError
from .oneform import OneForm
from .roughpath import LocalPatch, RoughPathGrid
from .tensor_ops import chen_combine

DEFECT_TOL = 1e-10
MAX_REFINE_DEPTH = 12
BLOWUP_GUARD = 1e9


class OneFormStage:
    """dY = f(xi) dx along the driver's own position xi."""

    def __init__(self, form: OneForm):
        self.form = form
        self.out_dim = form.dim_out

    def coeff(self, xi, y):
        F = self.form(xi)
        g1 = self.form.grad(1, xi)                      # [e, b, k]
        G2 = np.einsum("eba->eab", g1)
        g2 = self.form.grad(2, xi)                      # [e, c, k1, k2]
        G3 = np.einsum("ecab->eabc", g2)
        return F, G2, G3


class FieldStage:
    """dY = W(Y) dx for a state-dependent coefficient with derivatives.

    `field` provides w(Y) -> (E, D), dw(Y) -> (E, D, E) and
    d2w(Y) -> (E, D, E, E).
    """

    def __init__(self, field):
        self.field = field
        self.out_dim = field.state_dim

    def coeff(self, xi, y):
        F = self.field.w(y)
        dW = self.field.dw(y)                           # [e, b, k]
        G2 = np.einsum("ebk,ka->eab", dW, F)
        d2W = self.field.d2w(y)                         # [e, c, k, l]
        G3 = np.einsum("eckl,kb,la->eabc", d2W, F, F) + np.einsum(
            "eck,kbl,la->eabc", dW, dW, F
        )
        return F, G2, G3


def _joint_subcell(X1, X2, X3, F, G2, G3):
    """Signature tensors of the pair (x, Y) over one sub-cell."""
    D = X1.shape[0]
    E = F.shape[0]
    Dz = D + E
    G2f = G2.reshape(E, D * D)
    dY = F @ X1 + G2f @ X2.ravel() + G3.reshape(E, -1) @ X3.ravel()
    Z1 = np.concatenate([X1, dY])

    lam = np.empty((Dz, D))
    lam[:D] = np.eye(D)
    lam[D:] = F
    Z2 = lam @ X2 @ lam.T
    # first-order corrections keep the sub-cell defect at fourth order;
    # X3r ravels the trailing index pair, swp swaps the first two indices
    X3r = X3.reshape(D, D * D)
    swp = np.swapaxes(X3, 0, 1).reshape(D, D * D)
    CR = (X3r + swp) @ G2f.T                           # G2[e,a,b] (X3[.,a,b] + X3[a,.,b])
    C = G2f @ X3.reshape(D * D, D)                     # G2[e,a,b] X3[a,b,.]
    Z2[:D, D:] += CR
    Z2[D:, :D] += C
    Z2[D:, D:] += C @ F.T + F @ CR
    T1 = (X3.reshape(D * D, D) @ lam.T).reshape(D, D, Dz)
    T2 = np.tensordot(lam, T1, axes=(1, 1))            # [q, a, r]
    Z3 = np.tensordot(lam, T2, axes=(1, 1))            # [p, q, r]
    return Z1, Z2, Z3, dY


def _run_cell(patch: LocalPatch, stage, y_start, t_hint):
    """Step through one cell at the patch's resolution; returns sub-node
    states, per-sub-cell joint tensors and their Chen combination."""
    k = patch.lvl1.shape[0]
    E = len(y_start)
    states = np.empty((k + 1, E))
    states[0] = y_start
    tensors = []
    combined = None
    y = y_start
    for j in range(k):
        F, G2, G3 = stage.coeff(patch.values[j], y)
        Z1, Z2, Z3, dY = _joint_subcell(
            patch.lvl1[j], patch.lvl2[j], patch.lvl3[j], F, G2, G3
        )
        tensors.append((Z1, Z2, Z3))
        combined = (Z1, Z2, Z3) if combined is None else chen_combine(combined, (Z1, Z2, Z3))
        y = y + dY
        if np.max(np.abs(y)) > BLOWUP_GUARD:
            raise NumericalError(f"state blow-up beyond {BLOWUP_GUARD:g} near t = {t_hint:.6g}")
        states[j + 1] = y
    return states, tensors, combined


def _defect(cur, prev, mode):
    if mode == "state":
        a1, b1 = cur[0], prev[0]
        scale = max(1.0, float(np.max(np.abs(a1))))
        return float(np.max(np.abs(a1 - b1))) / scale
    ds = 0.0
    for a, b in zip(cur, prev):
        scale = max(1.0, float(np.max(np.abs(a))))
        ds = max(ds, float(np.max(np.abs(a - b))) / scale)
    return ds


class _ChainRefiner:
    """Recomputes converged sub-cell data of a constructed path on demand."""

    def __init__(self, base: RoughPathGrid, stage, start_states, cell_depths, tol):
        self.base = base
        self.stage = stage
        self.start_states = start_states      # (n_cells, E) converged cell-start states
        self.cell_depths = cell_depths
        self.tol = tol
        self._cache = {}

    def _computed(self, cell: int, depth: int):
        cached = self._cache.get(cell)
        if cached is None or cached[0] < depth:
            patch = self.base.refiner.refine(cell, depth)
            t_hint = self.base.grid.times[cell]
            states, tensors, _ = _run_cell(patch, self.stage, self.start_states[cell], t_hint)
            cached = (depth, states, tensors)
            self._cache[cell] = cached
        return cached

    def refine(self, cell: int, depth: int) -> LocalPatch:
        stored_depth, states, tensors = self._computed(
            cell, max(depth, self.cell_depths[cell])
        )
        step = 1 << (stored_depth - depth)
        k_out = 1 << depth
        D = self.base.dim + self.stage.out_dim
        lvl1 = np.empty((k_out, D))
        lvl2 = np.empty((k_out, D, D))
        lvl3 = np.empty((k_out, D, D, D))
        for i in range(k_out):
            acc = tensors[i * step]
            for j in range(1, step):
                acc = chen_combine(acc, tensors[i * step + j])
            lvl1[i], lvl2[i], lvl3[i] = acc
        base_vals = self.base.refiner.refine(cell, depth).values
        values = np.concatenate([base_vals, states[::step]], axis=1)
        return LocalPatch(values, lvl1, lvl2, lvl3)


def extend_path(
    base: RoughPathGrid,
    stage,
    y0,
    defect_mode: str = "tensors",
    tol: float = DEFECT_TOL,
    max_depth: int = MAX_REFINE_DEPTH,
) -> RoughPathGrid:
    """Joint lift (base, Y) where dY = coeff . d(base), with per-cell dyadic
    refinement until the local defect falls below tol."""
    if base.refiner is None:
        raise DomainError("base rough path carries no refiner; cannot integrate along it")
    n = base.grid.n_cells
    E = stage.out_dim
    y0 = np.asarray(y0, dtype=float)
    Dz = base.dim + E
    keep3 = base.top_level >= 3

    start_states = np.empty((n, E))
    cell_depths = np.zeros(n, dtype=int)
    out1 = np.empty((n, Dz))
    out2 = np.empty((n, Dz, Dz))
    out3 = np.empty((n, Dz, Dz, Dz)) if keep3 else None

    # cells of a constructed base already needed a known depth; starting the
    # ladder there avoids re-running the whole upstream chain at depths that
    # cannot resolve this cell anyway
    base_depths = getattr(base.refiner, "cell_depths", None)

    y = y0.copy()
    for cell in range(n):
        start_states[cell] = y
        t_hint = base.grid.times[cell]
        prev = None
        converged = None
        resid = np.inf
        depth = int(base_depths[cell]) if base_depths is not None else 0
        while depth <= max_depth:
            patch = base.refiner.refine(cell, depth)
            states, tensors, combined = _run_cell(patch, stage, y, t_hint)
            if prev is not None:
                resid = _defect(combined, prev, defect_mode)
                if resid <= tol:
                    # keep the deeper evaluation, record the shallower depth
                    # as sufficient (downstream hints must not ratchet up)
                    converged = (depth - 1, states, combined)
                    break
            prev = combined
            depth += 1
        if converged is None:
            raise NumericalError(
                f"cell {cell} did not converge after depth {max_depth} "
                f"(residual defect {resid:.3e})"
            )
        depth, states, combined = converged
        cell_depths[cell] = depth
        out1[cell], out2[cell] = combined[0], combined[1]
        if keep3:
            out3[cell] = combined[2]
        y = states[-1]

    refiner = _ChainRefiner(base, stage, start_states, cell_depths, tol)
    return RoughPathGrid(
        base.grid, base.p, out1, out2, out3,
        basepoint=np.concatenate([base.basepoint, y0]),
        refiner=refiner,
    )
