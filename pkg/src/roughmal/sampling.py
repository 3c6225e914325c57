"""Exact Gaussian sampling of driver increments on dyadic grids.

Sampling is counter-based (numpy Philox keyed by the master seed and a
stream index), so the driver w and its independent copy b come from disjoint
sub-streams and every draw is reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .covariance import BROWNIAN, CovarianceModel, increment_covariance
from .errors import DomainError, ModelError
from .grid import DyadicGrid, SampledPath

MAX_SAMPLE_LEVEL = 14
CHOLESKY_JITTER = 1e-12

W_STREAM = 0
B_STREAM = 1


def _generator(seed: int, stream: int) -> np.random.Generator:
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def increment_factor(model: CovarianceModel, grid: DyadicGrid) -> np.ndarray:
    """Lower-triangular factor L with L L^T = Q_m, jittered if needed."""
    if model.kind == BROWNIAN:
        return np.sqrt(grid.mesh) * np.eye(grid.n_cells)
    Q = increment_covariance(model, grid)
    try:
        return np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(Q + CHOLESKY_JITTER * np.eye(Q.shape[0]))
    except np.linalg.LinAlgError:
        lam_min = float(np.linalg.eigvalsh(Q)[0])
        raise ModelError(
            f"increment covariance is not numerically PSD even with jitter "
            f"{CHOLESKY_JITTER:g}; smallest eigenvalue {lam_min:.3e}"
        )


@dataclass(frozen=True)
class GaussianSample:
    """Driver increments (and optionally those of the independent copy b)."""

    model: CovarianceModel
    grid: DyadicGrid
    seed: int
    increments_w: np.ndarray = field(repr=False)
    increments_b: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def has_copy(self) -> bool:
        return self.increments_b is not None

    def path(self, which: str = "w") -> SampledPath:
        """Cumulative-sum path of one stream, started at 0."""
        if which == "w":
            inc = self.increments_w
        elif which == "b":
            if self.increments_b is None:
                raise DomainError("sample was drawn without the independent copy")
            inc = self.increments_b
        else:
            raise DomainError(f"unknown stream {which!r}")
        vals = np.zeros((self.grid.n_nodes, self.model.dim))
        np.cumsum(inc, axis=0, out=vals[1:])
        return SampledPath(self.grid, vals)

    def doubled_path(self) -> SampledPath:
        """The 2d-dimensional path (w, b) on the common grid."""
        if self.increments_b is None:
            raise DomainError("sample was drawn without the independent copy")
        w = self.path("w").values
        b = self.path("b").values
        return SampledPath(self.grid, np.concatenate([w, b], axis=1))


def sample_gaussian(
    model: CovarianceModel,
    grid: DyadicGrid,
    seed: int,
    with_copy: bool = False,
) -> GaussianSample:
    """Draw increments with exact joint law N(0, Q_m) per component.

    Components are i.i.d.; w uses sub-stream 0 of the master seed and the
    independent copy b uses sub-stream 1.
    """
    if grid.level > MAX_SAMPLE_LEVEL:
        raise DomainError(f"grid level {grid.level} exceeds the desk-scale guard {MAX_SAMPLE_LEVEL}")
    L = increment_factor(model, grid)
    n, d = grid.n_cells, model.dim

    def draw(stream: int) -> np.ndarray:
        z = _generator(seed, stream).standard_normal((n, d))
        return L @ z

    inc_w = draw(W_STREAM)
    inc_b = draw(B_STREAM) if with_copy else None
    return GaussianSample(model, grid, seed, inc_w, inc_b)


def sample_increments_batch(
    model: CovarianceModel,
    grid: DyadicGrid,
    seeds: np.ndarray,
    stream: int = W_STREAM,
) -> np.ndarray:
    """Increments for many master seeds at once, shape (n_seeds, n_cells, d).

    Each seed reproduces exactly what sample_gaussian would draw for the
    same stream.
    """
    if grid.level > MAX_SAMPLE_LEVEL:
        raise DomainError(f"grid level {grid.level} exceeds the desk-scale guard {MAX_SAMPLE_LEVEL}")
    L = increment_factor(model, grid)
    n, d = grid.n_cells, model.dim
    out = np.empty((len(seeds), n, d))
    for i, s in enumerate(seeds):
        z = _generator(int(s), stream).standard_normal((n, d))
        out[i] = L @ z
    return out


def piecewise_linear_path(sample: GaussianSample, eval_grid: DyadicGrid, which: str = "w") -> SampledPath:
    """Evaluate the piecewise-linear path w(m) on a grid at least as fine.

    Exact at the coarse nodes; refuses a coarser evaluation grid.
    """
    if eval_grid.level < sample.grid.level:
        raise DomainError(
            f"eval grid level {eval_grid.level} is coarser than sample level {sample.grid.level}"
        )
    return sample.path(which).refine(eval_grid.level - sample.grid.level)


def export_path_csv(path: SampledPath, fname: str) -> None:
    """CSV with header t,component_1..component_d, 17 significant digits."""
    vals = path.values
    if vals.ndim == 1:
        vals = vals[:, None]
    d = vals.shape[1]
    header = "t," + ",".join(f"component_{i + 1}" for i in range(d))
    with open(fname, "w") as fh:
        fh.write(header + "\n")
        for t, row in zip(path.times, vals):
            fh.write(",".join(f"{x:.17g}" for x in (t, *row)) + "\n")
