"""Combinatorial constants of the higher-order directional-derivative recursion.

Differentiating dy^eps = sigma(y^eps) d(w + eps h) n times in eps at 0 and
collecting terms gives, for each non-decreasing tuple (i_1 <= ... <= i_l),
an integer coefficient. We generate them by literal symbolic bookkeeping:
a term "grad^l sigma < y^(i_1), ..., y^(i_l) >" is keyed by its sorted tuple,
and one eps-derivative maps it to the chain-rule term (tuple with 1 appended)
plus the product-rule terms (one entry bumped). Iterating from the empty
tuple produces the n-th derivative of sigma(y^eps) exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

from .errors import DomainError

Tuples = Dict[Tuple[int, ...], int]

MAX_ORDER = 4


def _differentiate_terms(terms: Tuples) -> Tuples:
    out: Tuples = {}
    for tup, coeff in terms.items():
        # chain rule: a new first-order derivative slot
        key = tuple(sorted(tup + (1,)))
        out[key] = out.get(key, 0) + coeff
        # product rule: bump each existing slot
        for j in range(len(tup)):
            bumped = list(tup)
            bumped[j] += 1
            key = tuple(sorted(bumped))
            out[key] = out.get(key, 0) + coeff
    return out


def sigma_derivative_terms(k: int) -> Tuples:
    """Terms of d^k/d eps^k [sigma(y^eps)] at eps = 0, keyed by the sorted
    tuple of derivative orders appearing in the bracket."""
    terms: Tuples = {(): 1}
    for _ in range(k):
        terms = _differentiate_terms(terms)
    return terms


@dataclass(frozen=True)
class ConstantsTable:
    """Coefficients of the order-n recursion.

    dw_terms: tuples (i_1 <= ... <= i_l) with l >= 2 and sum = n; the l = 1
    tuple (n,) is the homogeneous part that variation of constants absorbs
    into the Jacobian pair and is therefore excluded.
    dh_terms: tuples with sum = n - 1 (the empty tuple at n = 1 is the bare
    sigma(y) dh term).
    """

    order: int
    dw_terms: Tuples
    dh_terms: Tuples


def constants_table(n: int) -> ConstantsTable:
    if not (1 <= n <= MAX_ORDER):
        raise DomainError(f"constants provided for orders 1..{MAX_ORDER}, got {n}")
    dw = {t: c for t, c in sigma_derivative_terms(n).items() if len(t) >= 2}
    dh = {t: n * c for t, c in sigma_derivative_terms(n - 1).items()}
    return ConstantsTable(n, dw, dh)
