"""Directional derivatives of the flow by variation of constants.

The order-n derivative along h solves a linear equation whose inhomogeneity
collects lower-order derivatives against the driver and against h; variation
of constants turns it into J times a cumulative pairing integral. All
pairings run through the Young machinery on a dyadically refined grid (at
piecewise-linear level every object has bounded variation), and the
recursion's combinatorial constants come from the symbolic table, which
derive_constants cross-validates against finite differences before use.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .derivative_constants import MAX_ORDER, ConstantsTable, constants_table
from .errors import DomainError, ModelError, RegularityError
from .flow import solve_flow_dense
from .grid import DyadicGrid, SampledPath
from .roughpath import RoughPathGrid
from .vectorfields import VectorFieldSystem, polynomial_field
from .young import young_integral

REFINE_EXTRA = 4
_EINSUM_LETTERS = "klmn"


def _bracket(vf: VectorFieldSystem, l: int, y_path: np.ndarray, args: Sequence[np.ndarray]):
    """grad^l sigma(y) < args..., . > as an (N, e, d) path."""
    if l == 0:
        return vf(y_path)
    g = vf.grad(l, y_path)
    letters = _EINSUM_LETTERS[:l]
    spec = (
        "Nia" + letters + "," + ",".join(f"N{c}" for c in letters) + "->Nia"
    )
    return np.einsum(spec, g, *args)


@dataclass(frozen=True)
class DerivativeStack:
    """Directional derivatives D_h^n y at grid times, order 1..n_max."""

    grid: DyadicGrid
    n_max: int
    values: np.ndarray = field(repr=False)        # (n_max, n_nodes, e)
    tables: tuple = ()
    eval_level: int = 0

    def order(self, n: int) -> np.ndarray:
        if not (1 <= n <= self.n_max):
            raise DomainError(f"order {n} outside 1..{self.n_max}")
        return self.values[n - 1]

    def at_time(self, n: int, t: float) -> np.ndarray:
        return self.order(n)[self.grid.index_of(t)]


def _as_sampled(w) -> SampledPath:
    if isinstance(w, SampledPath):
        return w
    if isinstance(w, RoughPathGrid):
        return SampledPath(w.grid, w.node_values)
    raise DomainError(f"unsupported driver object {type(w)!r}")


def derivative_recursion(
    w_fine: SampledPath,
    h_fine: SampledPath,
    vf: VectorFieldSystem,
    flow: tuple,
    n_max: int,
) -> np.ndarray:
    """Run the recursion on an already-refined grid with precomputed flow
    (y, J, K) node arrays; returns (n_max, N+1, e)."""
    ys, Js, Ks = flow
    grid = w_fine.grid
    w_vals = w_fine.values if w_fine.values.ndim == 2 else w_fine.values[:, None]
    h_vals = h_fine.values if h_fine.values.ndim == 2 else h_fine.values[:, None]
    N = grid.n_nodes
    e = vf.e
    derivs = np.zeros((n_max, N, e))

    def young(vals, against):
        out = young_integral(
            SampledPath(grid, vals), SampledPath(grid, against), q=1.0, p=1.0
        )
        return out.values

    for n in range(1, n_max + 1):
        table = constants_table(n)
        integrand_w = np.zeros((N, e, vf.d))
        for tup, c in table.dw_terms.items():
            args = [derivs[i - 1] for i in tup]
            integrand_w += c * _bracket(vf, len(tup), ys, args)
        integrand_h = np.zeros((N, e, vf.d))
        for tup, c in table.dh_terms.items():
            args = [derivs[i - 1] for i in tup]
            integrand_h += c * _bracket(vf, len(tup), ys, args)
        psi = np.zeros((N, e))
        if table.dw_terms:
            kmw = np.einsum("Nij,Nja->Nia", Ks, integrand_w)
            psi = psi + young(kmw, w_vals)
        kmh = np.einsum("Nij,Nja->Nia", Ks, integrand_h)
        psi = psi + young(kmh, h_vals)
        derivs[n - 1] = np.einsum("Nij,Nj->Ni", Js, psi)
    return derivs


def recursion_at_level(w_path, h, vf, y0, n_max, refine_extra, substep_target):
    """Recursion values restricted back to the coarse grid, one sampling level."""
    w_fine = w_path.refine(refine_extra)
    h_fine = h.refine(refine_extra)
    flow = solve_flow_dense(w_fine, vf, y0, substep_target=substep_target)
    derivs = derivative_recursion(w_fine, h_fine, vf, flow, n_max)
    return derivs[:, :: 1 << refine_extra]


def directional_derivative(
    w,
    vf: VectorFieldSystem,
    y0,
    h: SampledPath,
    n_max: int,
    q: float = 1.0,
    p: float = 2.5,
    refine_extra: int = REFINE_EXTRA,
    substep_target: float = 0.02,
    richardson: bool = True,
) -> DerivativeStack:
    """D_h^n y along the piecewise-linear driver, n = 1..n_max.

    The driver w may be a SampledPath or a lifted rough path (its level-1
    nodes are used); h must live on the same grid. The declared regularities
    (p for the driver, q for h) must satisfy 1/p + 1/q > 1; the computation
    itself runs at piecewise-linear level on a refined grid. The pairing
    sums carry a sampling bias of order 4^(-refine) whose constant is largest
    for tent-concentrated directions, so by default the recursion is run at
    two sampling levels and Richardson-extrapolated across them.
    """
    w_path = _as_sampled(w)
    if n_max > MAX_ORDER:
        raise DomainError(f"n_max capped at {MAX_ORDER}")
    if 1.0 / p + 1.0 / q <= 1.0:
        raise RegularityError(f"complementary regularity violated: 1/{p} + 1/{q} <= 1")
    if h.grid.level != w_path.grid.level:
        raise DomainError("h must be sampled on the driver grid")
    if vf.order < n_max + 1:
        raise DomainError(
            f"vector field provides derivatives to order {vf.order}, recursion "
            f"order {n_max} needs {n_max + 1}"
        )
    coarse = recursion_at_level(w_path, h, vf, y0, n_max, refine_extra, substep_target)
    if richardson:
        fine = recursion_at_level(w_path, h, vf, y0, n_max, refine_extra + 1, substep_target)
        values = (4.0 * fine - coarse) / 3.0
        eval_level = w_path.grid.level + refine_extra + 1
    else:
        values = coarse
        eval_level = w_path.grid.level + refine_extra
    return DerivativeStack(
        grid=w_path.grid,
        n_max=n_max,
        values=values,
        tables=tuple(constants_table(k) for k in range(1, n_max + 1)),
        eval_level=eval_level,
    )


def polarized_derivative(
    w,
    vf: VectorFieldSystem,
    y0,
    hs: Sequence[SampledPath],
    t: float = 1.0,
    **kwargs,
) -> np.ndarray:
    """Off-diagonal D^n y_t <h_1, ..., h_n> via the polarization identity
    over subset sums; symmetric in its arguments by construction."""
    n = len(hs)
    if n > 3:
        raise DomainError("polarization implemented for n <= 3")
    w_path = _as_sampled(w)
    total = np.zeros(vf.e)
    for r in range(1, n + 1):
        for combo in itertools.combinations(range(n), r):
            h_sum = SampledPath(
                w_path.grid, np.sum([hs[i].values for i in combo], axis=0)
            )
            stack = directional_derivative(w_path, vf, y0, h_sum, n_max=n, **kwargs)
            total += (-1.0) ** (n - r) * stack.at_time(n, t)
    return total / math.factorial(n)


def derive_constants(n: int, rtol: float = 1e-3):
    """Constants of the recursion to order n, cross-validated: plugging the
    table into the recursion must reproduce finite-difference derivatives on
    a cubic-coefficient scalar field. Validation failure is a hard error."""
    if not (1 <= n <= MAX_ORDER):
        raise DomainError(f"constants provided for orders 1..{MAX_ORDER}")
    tables = [constants_table(k) for k in range(1, n + 1)]

    vf = polynomial_field(
        1, 1, {(0, 0): {(0,): 0.3, (1,): 0.2, (2,): 0.08, (3,): 0.02}},
        name="cubic-validation", order=MAX_ORDER + 1,
    )
    grid = DyadicGrid(6)
    w = SampledPath(grid, np.sin(2.1 * grid.times) + 0.5 * grid.times)
    h = SampledPath(grid, 0.8 * grid.times - 0.3 * np.sin(grid.times))
    stack = directional_derivative(w, vf, [0.1], h, n_max=n, refine_extra=4)

    eps_by_order = {1: 1e-4, 2: 1e-3, 3: 5e-3, 4: 2e-2}

    def flow_end(eps):
        shifted = SampledPath(grid, w.values + eps * h.values)
        ys, _, _ = solve_flow_dense(shifted, vf, [0.1], substep_target=0.01)
        return ys[-1, 0]

    for k in range(1, n + 1):
        eps = eps_by_order[k]
        if k == 1:
            fd = (flow_end(eps) - flow_end(-eps)) / (2 * eps)
        elif k == 2:
            fd = (flow_end(eps) - 2 * flow_end(0.0) + flow_end(-eps)) / eps**2
        elif k == 3:
            fd = (
                flow_end(2 * eps) - 2 * flow_end(eps) + 2 * flow_end(-eps) - flow_end(-2 * eps)
            ) / (2 * eps**3)
        else:
            fd = (
                flow_end(2 * eps) - 4 * flow_end(eps) + 6 * flow_end(0.0)
                - 4 * flow_end(-eps) + flow_end(-2 * eps)
            ) / eps**4
        got = stack.at_time(k, 1.0)[0]
        if abs(got - fd) > rtol * max(abs(fd), 1e-8):
            raise ModelError(
                f"constants validation failed at order {k}: recursion {got:.6g} "
                f"vs finite difference {fd:.6g}"
            )
    return tables
