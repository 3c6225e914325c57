"""Geometric rough paths stored per grid cell, with Chen reconstruction,
p-variation dynamic programming, the intrinsic control and the greedy
threshold partition.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import DomainError
from .grid import DyadicGrid, SampledPath
from .tensor_ops import chen_combine, segment_signature

P_MIN, P_MAX = 2.0, 4.0


class LocalPatch(NamedTuple):
    """Sub-cell data at dyadic depth k: 2^k sub-cells of one grid cell."""

    values: np.ndarray            # (2^k + 1, D) absolute path values
    lvl1: np.ndarray              # (2^k, D)
    lvl2: np.ndarray              # (2^k, D, D)
    lvl3: Optional[np.ndarray]    # (2^k, D, D, D) or None


class _SegmentRefiner:
    """Exact dyadic splitting of straight-segment cells.

    Patches always carry level-3 tensors: the engine's local models use them
    for their third-order corrections even when the stored path is truncated
    at level 2.
    """

    def __init__(self, node_values: np.ndarray):
        self.node_values = node_values

    def refine(self, cell: int, depth: int) -> LocalPatch:
        k = 1 << depth
        v0 = self.node_values[cell]
        v1 = self.node_values[cell + 1]
        frac = np.arange(k + 1)[:, None] / k
        values = v0 * (1 - frac) + v1 * frac
        delta = (v1 - v0) / k
        l1, l2, l3 = segment_signature(delta, 3)
        lvl1 = np.broadcast_to(l1, (k,) + l1.shape).copy()
        lvl2 = np.broadcast_to(l2, (k,) + l2.shape).copy()
        lvl3 = np.broadcast_to(l3, (k,) + l3.shape).copy()
        return LocalPatch(values, lvl1, lvl2, lvl3)


class RoughPathGrid:
    """Tensor levels 1..L of a geometric rough path over the cells of a dyadic grid.

    Values over arbitrary grid pairs are reconstructed through Chen's identity
    from cached prefix signatures. Instances are immutable after construction
    and all queries are read-only.
    """

    def __init__(self, grid: DyadicGrid, p: float, lvl1, lvl2, lvl3=None,
                 basepoint=None, refiner=None):
        if not (P_MIN <= p < P_MAX):
            raise DomainError(f"roughness p must lie in [2,4), got {p}")
        self.grid = grid
        self.p = float(p)
        self.top_level = int(math.floor(p))
        self.lvl1 = np.asarray(lvl1, dtype=float)
        self.lvl2 = np.asarray(lvl2, dtype=float)
        self.lvl3 = None if lvl3 is None else np.asarray(lvl3, dtype=float)
        if self.top_level >= 3 and self.lvl3 is None:
            raise DomainError("p >= 3 requires level-3 tensors")
        self.dim = self.lvl1.shape[1]
        n = grid.n_cells
        if self.lvl1.shape != (n, self.dim) or self.lvl2.shape != (n, self.dim, self.dim):
            raise DomainError("tensor arrays do not match the grid")
        self.basepoint = np.zeros(self.dim) if basepoint is None else np.asarray(basepoint, float)
        self.node_values = np.concatenate(
            [self.basepoint[None, :], self.basepoint[None, :] + np.cumsum(self.lvl1, axis=0)]
        )
        self.refiner = refiner
        self._prefix = None
        self._cost_cache = {}

    # -- reconstruction ----------------------------------------------------

    def _prefixes(self):
        if self._prefix is None:
            n, D = self.grid.n_cells, self.dim
            P1 = np.zeros((n + 1, D))
            np.cumsum(self.lvl1, axis=0, out=P1[1:])
            terms2 = self.lvl2 + np.einsum("na,nb->nab", P1[:-1], self.lvl1)
            P2 = np.zeros((n + 1, D, D))
            np.cumsum(terms2, axis=0, out=P2[1:])
            if self.lvl3 is not None:
                terms3 = (
                    self.lvl3
                    + np.einsum("na,nbc->nabc", P1[:-1], self.lvl2)
                    + np.einsum("nab,nc->nabc", P2[:-1], self.lvl1)
                )
                P3 = np.zeros((n + 1, D, D, D))
                np.cumsum(terms3, axis=0, out=P3[1:])
            else:
                P3 = None
            self._prefix = (P1, P2, P3)
        return self._prefix

    def tensors_over(self, a: int, b: int):
        """Signature tensors over [t_a, t_b] (node indices, a <= b)."""
        if not (0 <= a <= b <= self.grid.n_cells):
            raise DomainError("node indices out of range")
        P1, P2, P3 = self._prefixes()
        x1 = P1[b] - P1[a]
        x2 = P2[b] - P2[a] - np.outer(P1[a], x1)
        if P3 is None:
            return x1, x2, None
        x3 = (
            P3[b] - P3[a]
            - np.einsum("a,bc->abc", P1[a], x2)
            - np.einsum("ab,c->abc", P2[a], x1)
        )
        return x1, x2, x3

    def index_of(self, t: float) -> int:
        return self.grid.index_of(t)

    def project(self, idx: Sequence[int]) -> "RoughPathGrid":
        """Coordinate projection (a rough path over the selected components)."""
        idx = np.asarray(idx, dtype=int)
        l3 = self.lvl3[:, idx][:, :, idx][:, :, :, idx] if self.lvl3 is not None else None
        return RoughPathGrid(
            self.grid, self.p,
            self.lvl1[:, idx],
            self.lvl2[:, idx][:, :, idx],
            l3,
            basepoint=self.basepoint[idx],
        )

    # -- variation machinery -------------------------------------------------

    def _cost_matrix(self, level: int) -> np.ndarray:
        """|x^level_{a,b}|^(p/level) for all node pairs a < b (vectorized, cached)."""
        if level in self._cost_cache:
            return self._cost_cache[level]
        P1, P2, P3 = self._prefixes()
        n = self.grid.n_cells
        X1 = P1[None, :, :] - P1[:, None, :]
        if level == 1:
            nrm = np.linalg.norm(X1, axis=-1)
        elif level == 2:
            X2 = P2[None, :, :, :] - P2[:, None, :, :] - np.einsum("ac,abd->abcd", P1, X1)
            nrm = np.linalg.norm(X2.reshape(n + 1, n + 1, -1), axis=-1)
        elif level == 3:
            X2 = P2[None, :, :, :] - P2[:, None, :, :] - np.einsum("ac,abd->abcd", P1, X1)
            X3 = (
                P3[None, :, :, :, :] - P3[:, None, :, :, :]
                - np.einsum("ac,abde->abcde", P1, X2)
                - np.einsum("acd,abe->abcde", P2, X1)
            )
            nrm = np.linalg.norm(X3.reshape(n + 1, n + 1, -1), axis=-1)
        else:
            raise DomainError(f"level {level} not carried by this path")
        out = nrm ** (self.p / level)
        self._cost_cache[level] = out
        return out


def lift_piecewise_linear(path: SampledPath, p: float) -> RoughPathGrid:
    """Exact lift of a piecewise-linear path: each cell carries the signature
    of its straight segment."""
    if not (P_MIN <= p < P_MAX):
        raise DomainError(f"roughness p must lie in [2,4), got {p}")
    top = int(math.floor(p))
    vals = path.values if path.values.ndim == 2 else path.values[:, None]
    inc = np.diff(vals, axis=0)
    lvl1 = inc
    lvl2 = 0.5 * np.einsum("na,nb->nab", inc, inc)
    lvl3 = np.einsum("na,nb,nc->nabc", inc, inc, inc) / 6.0 if top >= 3 else None
    return RoughPathGrid(
        path.grid, p, lvl1, lvl2, lvl3,
        basepoint=vals[0],
        refiner=_SegmentRefiner(vals),
    )


def _dp_max(cost: np.ndarray, lo: int, hi: int) -> float:
    """max over chains lo = a_0 < ... < a_M = hi of sum cost[a_k, a_{k+1}]."""
    if hi <= lo:
        return 0.0
    V = np.empty(hi - lo + 1)
    V[0] = 0.0
    for j in range(1, hi - lo + 1):
        V[j] = np.max(V[:j] + cost[lo:lo + j, lo + j])
    return float(V[-1])


def p_variation(x: RoughPathGrid, level: int, s: float = 0.0, t: float = 1.0) -> float:
    """p/level-variation of the level-`level` piece over the grid-aligned [s,t].

    Exact supremum over sub-partitions of grid points via O(n^2) DP; a
    degenerate interval gives 0.
    """
    if level > x.top_level or level < 1:
        raise DomainError(f"level must be in 1..{x.top_level}")
    a, b = x.index_of(s), x.index_of(t)
    if b <= a:
        return 0.0
    cost = x._cost_matrix(level)
    return _dp_max(cost, a, b) ** (level / x.p)


def control_omega(x: RoughPathGrid, s: float = 0.0, t: float = 1.0) -> float:
    """Intrinsic control: sum over levels of the p/i-variation raised to p/i."""
    a, b = x.index_of(s), x.index_of(t)
    if b <= a:
        return 0.0
    return sum(_dp_max(x._cost_matrix(i), a, b) for i in range(1, x.top_level + 1))


@dataclass(frozen=True)
class ControlEvaluation:
    """Control values for a batch of grid intervals plus the exponent table p/i."""

    intervals: tuple
    omegas: np.ndarray = field(repr=False)
    exponents: tuple = ()


def evaluate_control(x: RoughPathGrid, intervals) -> ControlEvaluation:
    omegas = np.array([control_omega(x, s, t) for (s, t) in intervals])
    exponents = tuple(x.p / i for i in range(1, x.top_level + 1))
    return ControlEvaluation(tuple(intervals), omegas, exponents)


@dataclass(frozen=True)
class GreedyPartition:
    """Greedy threshold stops: omega(tau_i, t) < alpha strictly before tau_{i+1}."""

    alpha: float
    taus: np.ndarray = field(repr=False)   # grid times, starts at 0, ends at 1
    n_alpha: int = 0

    def __post_init__(self):
        if self.alpha <= 0:
            raise DomainError("alpha must be positive")


def greedy_n_alpha(x: RoughPathGrid, alpha: float) -> GreedyPartition:
    """Greedy partition: tau_{i+1} is the first grid point with
    omega(tau_i, .) >= alpha, capped at 1; N_alpha counts stops before 1."""
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    n = x.grid.n_cells
    costs = [x._cost_matrix(i) for i in range(1, x.top_level + 1)]
    times = x.grid.times
    taus = [0.0]
    base = 0
    while base < n:
        size = n - base + 1
        V = [np.zeros(size) for _ in costs]
        stop = None
        for j in range(1, size):
            omega = 0.0
            for lv, cost in enumerate(costs):
                Vl = V[lv]
                Vl[j] = np.max(Vl[:j] + cost[base:base + j, base + j])
                omega += Vl[j]
            if omega >= alpha:
                stop = base + j
                break
        if stop is None or stop == n:
            break
        taus.append(float(times[stop]))
        base = stop
    taus.append(1.0)
    return GreedyPartition(alpha=alpha, taus=np.asarray(taus), n_alpha=len(taus) - 2)


def roughpath_to_json(x: RoughPathGrid) -> str:
    cells = []
    for k in range(x.grid.n_cells):
        cell = {"l1": x.lvl1[k].tolist(), "l2": x.lvl2[k].tolist()}
        if x.lvl3 is not None:
            cell["l3"] = x.lvl3[k].tolist()
        cells.append(cell)
    doc = {
        "dimension": x.dim,
        "p": x.p,
        "level": x.top_level,
        "grid_m": x.grid.level,
        "cells": cells,
    }
    return json.dumps(doc)


def roughpath_from_json(doc: str) -> RoughPathGrid:
    data = json.loads(doc)
    lvl3 = None
    if data["level"] >= 3:
        lvl3 = np.array([c["l3"] for c in data["cells"]])
    return RoughPathGrid(
        DyadicGrid(data["grid_m"]),
        data["p"],
        np.array([c["l1"] for c in data["cells"]]),
        np.array([c["l2"] for c in data["cells"]]),
        lvl3,
    )


def export_roughpath_json(x: RoughPathGrid, fname: str) -> None:
    with open(fname, "w") as fh:
        fh.write(roughpath_to_json(x))
