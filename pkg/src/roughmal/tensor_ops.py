"""Truncated tensor algebra over intervals: Chen products, inverses, segment signatures.

Interval tensors are (level1, level2, level3) triples with level3 = None when
the rough path is truncated at level 2. Shapes are (D,), (D,D), (D,D,D).
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError


def zero_tensors(dim: int, top_level: int):
    lvl3 = np.zeros((dim, dim, dim)) if top_level >= 3 else None
    return np.zeros(dim), np.zeros((dim, dim)), lvl3


def segment_signature(delta: np.ndarray, top_level: int):
    """Exact signature of a straight segment with increment delta."""
    d1 = np.asarray(delta, dtype=float)
    d2 = 0.5 * np.outer(d1, d1)
    if top_level >= 3:
        d3 = np.einsum("a,b,c->abc", d1, d1, d1) / 6.0
    else:
        d3 = None
    return d1, d2, d3


def chen_combine(a, b):
    """Chen product of adjacent interval tensors: [s,u] * [u,t] -> [s,t]."""
    a1, a2, a3 = a
    b1, b2, b3 = b
    if (a3 is None) != (b3 is None):
        raise DomainError("operands carry different tensor levels")
    c1 = a1 + b1
    c2 = a2 + b2 + a1[:, None] * b1[None, :]
    if a3 is None:
        return c1, c2, None
    c3 = a3 + b3 + a1[:, None, None] * b2[None, :, :] + a2[:, :, None] * b1[None, None, :]
    return c1, c2, c3


def chen_inverse(a):
    """Group inverse: chen_combine(a, chen_inverse(a)) is the identity."""
    a1, a2, a3 = a
    i1 = -a1
    i2 = -a2 + np.outer(a1, a1)
    if a3 is None:
        return i1, i2, None
    i3 = (
        -a3
        + np.einsum("ab,c->abc", a2, a1)
        + np.einsum("a,bc->abc", a1, a2)
        - np.einsum("a,b,c->abc", a1, a1, a1)
    )
    return i1, i2, i3


def chen_fold(tensors):
    """Chen product of a sequence of adjacent interval tensors."""
    it = iter(tensors)
    acc = next(it)
    for t in it:
        acc = chen_combine(acc, t)
    return acc


def tensor_norms(t) -> tuple:
    """Frobenius norm of each level."""
    return tuple(float(np.linalg.norm(x)) for x in t if x is not None)


def symmetrize2(x2: np.ndarray) -> np.ndarray:
    return 0.5 * (x2 + x2.T)


def project_tensors(t, idx: np.ndarray):
    """Restrict each level to a coordinate subset (linear projection of the path)."""
    a1, a2, a3 = t
    p1 = a1[idx]
    p2 = a2[np.ix_(idx, idx)]
    p3 = a3[np.ix_(idx, idx, idx)] if a3 is not None else None
    return p1, p2, p3
