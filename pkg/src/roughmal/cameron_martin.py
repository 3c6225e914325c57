"""Finite-dimensional Cameron-Martin coordinates of the projected driver.

The level-m piecewise-linear projection of the Gaussian process is a function
of finitely many increments with covariance Q_m, so its Cameron-Martin space
is R^(d 2^m) with the inner product <u, v> = u^T Q_m^{-1} v on increment
vectors (pseudo-inverse on the range when Q_m is singular).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .covariance import CovarianceModel, increment_covariance
from .errors import DomainError
from .grid import DyadicGrid, SampledPath

RANGE_RTOL = 1e-10


@dataclass(frozen=True)
class CameronMartinCoords:
    """Inner-product data plus the embedding parameters (p, q) of hypothesis use."""

    model: CovarianceModel
    grid: DyadicGrid
    p: float
    q: float
    Q: np.ndarray = field(repr=False, default=None)
    _eig: tuple = field(repr=False, default=None)

    def __post_init__(self):
        Q = increment_covariance(self.model, self.grid)
        lam, U = np.linalg.eigh(Q)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "_eig", (lam, U))

    @property
    def dim(self) -> int:
        return self.model.dim * self.grid.n_cells

    def norm(self, h) -> float:
        return cm_norm(self, h)

    def inner(self, h, k) -> float:
        """Polarization of the squared norm; inf stays inf."""
        nhk = cm_norm_sq(self, _increments_of(self, h) + _increments_of(self, k))
        nh = cm_norm_sq(self, _increments_of(self, h))
        nk = cm_norm_sq(self, _increments_of(self, k))
        return 0.5 * (nhk - nh - nk)

    def measure_embedding_constant(self, q: float = None, n_probe: int = 64, seed: int = 0) -> float:
        """Largest observed ratio ||h||_{q-var} / ||h||_H over random CM elements.

        A measured lower bound on the operator norm of the injection into
        q-variation paths, not an assumed constant.
        """
        if q is None:
            q = self.q
        rng = np.random.default_rng(seed)
        lam, U = self._eig
        best = 0.0
        for _ in range(n_probe):
            c = rng.standard_normal((self.grid.n_cells, self.model.dim))
            # h ranges over the CM space: increments delta = Q c per component
            delta = self.Q @ c
            path = np.zeros((self.grid.n_nodes, self.model.dim))
            np.cumsum(delta, axis=0, out=path[1:])
            qv = _q_variation(path, q)
            nrm = np.sqrt(cm_norm_sq(self, delta))
            if nrm > 0:
                best = max(best, qv / nrm)
        return best


def _increments_of(coords: CameronMartinCoords, h) -> np.ndarray:
    """Accepts a SampledPath on the same grid or a raw increment array (n,) or (n,d)."""
    if isinstance(h, SampledPath):
        if h.grid.level != coords.grid.level:
            raise DomainError("h must live on the coordinate grid")
        inc = h.increments()
    else:
        inc = np.asarray(h, dtype=float)
    if inc.ndim == 1:
        inc = inc[:, None]
    if inc.shape != (coords.grid.n_cells, coords.model.dim):
        raise DomainError(
            f"increment array has shape {inc.shape}, expected "
            f"({coords.grid.n_cells}, {coords.model.dim})"
        )
    return inc


def cm_norm_sq(coords: CameronMartinCoords, increments: np.ndarray) -> float:
    """delta^T Q_m^+ delta summed over components; inf outside the range of Q_m."""
    lam, U = coords._eig
    tol = RANGE_RTOL * max(lam[-1], 0.0)
    proj = U.T @ increments                     # (n_cells, d)
    small = lam <= tol
    if np.any(small):
        resid = np.linalg.norm(proj[small])
        scale = np.linalg.norm(increments)
        if resid > 1e-9 * max(scale, 1.0):
            return float("inf")
        proj = proj[~small]
        lam = lam[~small]
    return float(np.sum(proj**2 / lam[:, None]))


def cm_norm(coords: CameronMartinCoords, h) -> float:
    """Cameron-Martin norm of the projected element; the increment map is an isometry."""
    return float(np.sqrt(cm_norm_sq(coords, _increments_of(coords, h))))


def _q_variation(path: np.ndarray, q: float) -> float:
    """q-variation of a vector path over its own nodes (O(n^2) chain DP)."""
    n = path.shape[0] - 1
    diffs = np.linalg.norm(path[None, :, :] - path[:, None, :], axis=-1)
    cost = diffs**q
    V = np.zeros(n + 1)
    for j in range(1, n + 1):
        V[j] = np.max(V[:j] + cost[:j, j])
    return float(V[n] ** (1.0 / q))


def default_q(hurst: float) -> float:
    """Config default for the complementary-regularity exponent q.

    q = 1 for H >= 1/2 (the Cameron-Martin paths have bounded variation);
    below 1/2 the embedding exponent is taken slightly above 1/(H + 1/2).
    """
    if hurst >= 0.5:
        return 1.0
    return 1.0 / (hurst + 0.5) + 0.01
