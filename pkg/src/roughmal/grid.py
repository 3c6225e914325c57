"""Dyadic grids on [0,1] and piecewise-linear sampled paths."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class DyadicGrid:
    """Dyadic partition of [0,1] with nodes l * 2^-level, 0 <= l <= 2^level."""

    level: int

    def __post_init__(self):
        if self.level < 0:
            raise DomainError(f"grid level must be >= 0, got {self.level}")

    @property
    def n_cells(self) -> int:
        return 1 << self.level

    @property
    def n_nodes(self) -> int:
        return self.n_cells + 1

    @property
    def mesh(self) -> float:
        return 0.5 ** self.level

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_nodes) * self.mesh

    def index_of(self, t: float) -> int:
        """Node index of a grid-aligned time; error if t is not a node."""
        x = t / self.mesh
        k = int(round(x))
        if not (0 <= k <= self.n_cells) or abs(x - k) > 1e-12:
            raise DomainError(f"t={t} is not a node of the level-{self.level} grid")
        return k


@dataclass(frozen=True)
class SampledPath:
    """A path known at dyadic grid nodes, interpreted piecewise linearly.

    values has shape (n_nodes,) for scalar paths or (n_nodes, d) for
    d-dimensional ones; trailing shapes beyond one axis are allowed for
    matrix-valued integrands.
    """

    grid: DyadicGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[0] != self.grid.n_nodes:
            raise DomainError(
                f"values first axis {v.shape[0]} != node count {self.grid.n_nodes}"
            )
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return 1 if self.values.ndim == 1 else int(np.prod(self.values.shape[1:]))

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def refine(self, extra_levels: int) -> "SampledPath":
        """Linear interpolation onto a grid `extra_levels` finer. Exact at old nodes."""
        if extra_levels < 0:
            raise DomainError("extra_levels must be >= 0")
        if extra_levels == 0:
            return self
        fine = DyadicGrid(self.grid.level + extra_levels)
        k = 1 << extra_levels
        v = self.values
        frac = (np.arange(k) / k).reshape((k,) + (1,) * (v.ndim - 1))
        # per coarse cell: left*(1-frac) + right*frac, then append the final node
        left = v[:-1][:, None] if v.ndim == 1 else v[:-1][:, None, ...]
        right = v[1:][:, None] if v.ndim == 1 else v[1:][:, None, ...]
        filled = left * (1.0 - frac) + right * frac
        out = np.concatenate([filled.reshape((-1,) + v.shape[1:]), v[-1:][...]], axis=0)
        return SampledPath(fine, out)

    def restrict(self, coarser_level: int) -> "SampledPath":
        """Keep every 2^(level - coarser_level)-th node."""
        if coarser_level > self.grid.level:
            raise DomainError("restrict target must be coarser")
        step = 1 << (self.grid.level - coarser_level)
        return SampledPath(DyadicGrid(coarser_level), self.values[::step])

    def value_at(self, t: float) -> np.ndarray:
        """Piecewise-linear evaluation at an arbitrary time in [0,1]."""
        if not (0.0 <= t <= 1.0):
            raise DomainError(f"t={t} outside [0,1]")
        x = t / self.grid.mesh
        k = min(int(x), self.grid.n_cells - 1)
        frac = x - k
        return (1.0 - frac) * self.values[k] + frac * self.values[k + 1]
