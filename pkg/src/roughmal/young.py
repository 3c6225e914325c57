"""Young integration of grid paths under complementary regularity.

The integral of f against g is the limit of left-point Riemann-Stieltjes sums;
we evaluate the sums on dyadic refinements of the common grid (both paths are
piecewise linear between their nodes) and Richardson-extrapolate across levels,
which reproduces the limit exactly for piecewise-linear data and converges by
Young's theorem whenever 1/p + 1/q > 1.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, RegularityError
from .grid import SampledPath

MAX_REFINE = 6
DEFAULT_TOL = 1e-12


def _pair_increment(avg_f: np.ndarray, dg: np.ndarray) -> np.ndarray:
    """Contract integrand values with driver increments: scalar*scalar,
    (E,D)x(D) matrix action, or (D)x(D) dot product, cellwise."""
    if avg_f.ndim == 1 and dg.ndim == 1:
        return avg_f * dg
    if avg_f.ndim == 2 and dg.ndim == 2:
        return np.einsum("nd,nd->n", avg_f, dg)
    if avg_f.ndim == 3 and dg.ndim == 2:
        return np.einsum("ned,nd->ne", avg_f, dg)
    raise DomainError(f"unsupported integrand/driver shapes {avg_f.shape} / {dg.shape}")


def _left_sums(fv: np.ndarray, gv: np.ndarray, depth: int) -> np.ndarray:
    """Cumulative left-point sums per base cell after dyadic in-cell refinement.

    fv, gv are node values on the base grid; the in-cell values come from the
    piecewise-linear interpretation of the data.
    """
    k = 1 << depth
    n = fv.shape[0] - 1
    fracs = np.arange(k) / k

    dg = (gv[1:] - gv[:-1])  # (n, ...)
    per_cell = None
    for i, lam in enumerate(fracs):
        f_left = (1 - lam) * fv[:-1] + lam * fv[1:]
        inc = _pair_increment(f_left, dg / k)
        per_cell = inc if per_cell is None else per_cell + inc
    return per_cell


def young_integral(
    f: SampledPath,
    g: SampledPath,
    q: float,
    p: float,
    tol: float = DEFAULT_TOL,
    max_refine: int = MAX_REFINE,
) -> SampledPath:
    """t -> int_0^t f dg on the common grid of f and g.

    q and p are the declared variation exponents of f and g; the pairing is
    refused when 1/p + 1/q <= 1 rather than silently diverging.
    """
    if 1.0 / p + 1.0 / q <= 1.0:
        raise RegularityError(f"complementary regularity violated: 1/{p} + 1/{q} <= 1")
    if f.grid.level != g.grid.level:
        raise DomainError("paths must share a grid")
    fv, gv = f.values, g.values

    prev = _left_sums(fv, gv, 0)
    value = None
    for depth in range(1, max_refine + 1):
        cur = _left_sums(fv, gv, depth)
        extrapolated = 2.0 * cur - prev
        if value is not None and np.max(np.abs(extrapolated - value)) <= tol * max(
            1.0, float(np.max(np.abs(value)))
        ):
            value = extrapolated
            break
        value = extrapolated
        prev = cur

    out = np.zeros((fv.shape[0],) + value.shape[1:])
    np.cumsum(value, axis=0, out=out[1:])
    return SampledPath(g.grid, out)
