"""Covariance models for the driving Gaussian process and their 2D rho-variation.

Supported kinds are standard Brownian motion and fractional Brownian motion
with Hurst index in (1/4, 1]. Everything lives on the fixed horizon [0,1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError
from .grid import DyadicGrid

BROWNIAN = "Brownian"
FRACTIONAL = "FractionalBrownian"


@dataclass(frozen=True)
class CovarianceModel:
    """One-dimensional covariance of each driver component.

    rho is the 2D-variation exponent 1/(2H) clamped to >= 1; for H >= 1/2 the
    covariance has finite 1-variation so rho = 1.
    """

    kind: str = BROWNIAN
    hurst: float = 0.5
    dim: int = 1

    def __post_init__(self):
        if self.kind not in (BROWNIAN, FRACTIONAL):
            raise DomainError(f"unknown covariance kind {self.kind!r}")
        if self.kind == BROWNIAN:
            object.__setattr__(self, "hurst", 0.5)
        if not (0.25 < self.hurst <= 1.0):
            raise DomainError(f"hurst must lie in (1/4, 1], got {self.hurst}")
        if self.dim < 1:
            raise DomainError("dim must be >= 1")

    @property
    def rho(self) -> float:
        return max(1.0, 1.0 / (2.0 * self.hurst))

    def __call__(self, s, t):
        return covariance_eval(self, s, t)


def covariance_eval(model: CovarianceModel, s, t):
    """R(s,t) = E[w^1_s w^1_t]; accepts scalars or broadcastable arrays in [0,1]."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < -1e-15) or np.any(s > 1 + 1e-15) or np.any(t < -1e-15) or np.any(t > 1 + 1e-15):
        raise DomainError("covariance arguments must lie in [0,1]")
    if model.kind == BROWNIAN:
        out = np.minimum(s, t)
    else:
        h2 = 2.0 * model.hurst
        out = 0.5 * (np.abs(s) ** h2 + np.abs(t) ** h2 - np.abs(t - s) ** h2)
    return out if out.ndim else float(out)


def increment_covariance(model: CovarianceModel, grid: DyadicGrid) -> np.ndarray:
    """Covariance matrix Q_m of the one-dimensional increments over grid cells.

    Q[i,j] is the rectangular increment of R over cell_i x cell_j; for
    Brownian motion this is mesh * Id.
    """
    t = grid.times
    R = covariance_eval(model, t[:, None], t[None, :])
    return R[1:, 1:] - R[:-1, 1:] - R[1:, :-1] + R[:-1, :-1]


def _rect_increments(R: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Rectangular increments of the node matrix R over the sub-partitions rows/cols."""
    B = R[np.ix_(rows, cols)]
    return np.diff(np.diff(B, axis=0), axis=1)


def _row_dp(f: np.ndarray) -> tuple[float, list[int]]:
    """Max of sum f[a_k, a_{k+1}] over increasing chains 0 = a_0 < ... < a_M = n."""
    n = f.shape[0] - 1
    V = np.full(n + 1, -np.inf)
    V[0] = 0.0
    arg = np.zeros(n + 1, dtype=int)
    for j in range(1, n + 1):
        cand = V[:j] + f[:j, j]
        k = int(np.argmax(cand))
        V[j] = cand[k]
        arg[j] = k
    chain = [n]
    while chain[-1] != 0:
        chain.append(int(arg[chain[-1]]))
    return float(V[n]), chain[::-1]


def _pair_objective(R: np.ndarray, rows: np.ndarray, cols: np.ndarray, rho: float) -> float:
    return float(np.sum(np.abs(_rect_increments(R, rows, cols)) ** rho))


def _best_rows_given_cols(R: np.ndarray, cols: np.ndarray, rho: float):
    """Exact optimum over row sub-partitions for fixed columns (the objective is
    additive over row cells, so an O(n^2) chain DP is exact)."""
    C = np.diff(R[:, cols], axis=1)          # (n+1, #col cells)
    f = np.sum(np.abs(C[None, :, :] - C[:, None, :]) ** rho, axis=-1)
    val, chain = _row_dp(f)
    return val, np.asarray(chain, dtype=int)


@dataclass(frozen=True)
class RhoVariationResult:
    value: float
    rho: float
    regime: str                       # "exact" or "lower_bound"
    rows: np.ndarray = field(repr=False)
    cols: np.ndarray = field(repr=False)


# exact enumeration of one axis is affordable up to this grid level
EXACT_RHO_LEVEL = 4


def rho_variation_2d(
    model: CovarianceModel,
    grid: DyadicGrid,
    rho: Optional[float] = None,
    warm_start=None,
) -> RhoVariationResult:
    """2D rho-variation of the covariance over sub-partitions of the grid.

    Exact for level <= 4 (exhaustive enumeration of column partitions with an
    exact row DP for each); a multi-start alternating-DP lower bound above
    that. `warm_start` may carry a (rows, cols) index pair, e.g. the optimizer
    of a coarser level mapped onto this grid, which makes values chain
    monotonically under refinement.
    """
    if rho is None:
        rho = model.rho
    if rho < 1.0:
        raise DomainError(f"rho must be >= 1, got {rho}")
    t = grid.times
    R = covariance_eval(model, t[:, None], t[None, :])
    n = grid.n_cells
    full = np.arange(n + 1)

    if grid.level <= EXACT_RHO_LEVEL:
        best = (-np.inf, None, None)
        interior = n - 1
        for mask in range(1 << interior):
            cols = [0]
            m = mask
            for i in range(1, n):
                if m & 1:
                    cols.append(i)
                m >>= 1
            cols.append(n)
            cols = np.asarray(cols, dtype=int)
            val, rows = _best_rows_given_cols(R, cols, rho)
            if val > best[0]:
                best = (val, rows, cols)
        value, rows, cols = best
        return RhoVariationResult(value ** (1.0 / rho), rho, "exact", rows, cols)

    starts = [(full, full)]
    for k in (1, 2):
        coarse = full[:: 1 << k]
        if coarse[-1] != n:
            coarse = np.append(coarse, n)
        starts.append((coarse, coarse))
    if warm_start is not None:
        starts.append((np.asarray(warm_start[0], dtype=int), np.asarray(warm_start[1], dtype=int)))

    best = (-np.inf, full, full)
    for rows0, cols0 in starts:
        rows, cols = rows0, cols0
        val = _pair_objective(R, rows, cols, rho)
        for _ in range(20):
            v1, rows = _best_rows_given_cols(R, cols, rho)
            v2, cols = _best_rows_given_cols(R.T, rows, rho)
            if v2 <= val * (1 + 1e-12):
                val = max(val, v2)
                break
            val = v2
        if val > best[0]:
            best = (val, rows, cols)
    value, rows, cols = best
    return RhoVariationResult(value ** (1.0 / rho), rho, "lower_bound", rows, cols)
