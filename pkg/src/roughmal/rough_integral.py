"""Rough integration of polynomial-growth one-forms: the map
x -> (x, int f(x) dx) as a geometric rough path over the direct sum."""

from __future__ import annotations

import numpy as np

from .errors import DomainError
from .lift_engine import DEFECT_TOL, MAX_REFINE_DEPTH, OneFormStage, extend_path
from .oneform import OneForm
from .roughpath import RoughPathGrid


def rough_integral(
    form: OneForm,
    x: RoughPathGrid,
    tol: float = DEFECT_TOL,
    max_depth: int = MAX_REFINE_DEPTH,
) -> RoughPathGrid:
    """Joint lift (x, int f(x) dx) over R^(D+E).

    The first level extends the Riemann-Stieltjes integral along
    piecewise-linear drivers; each cell is refined dyadically until the local
    defect of multiplicativity drops below tol, and a cell that fails to
    converge raises NumericalError with the residual.
    """
    if form.dim_in != x.dim:
        raise DomainError(f"one-form input dim {form.dim_in} != driver dim {x.dim}")
    return extend_path(
        x,
        OneFormStage(form),
        np.zeros(form.dim_out),
        defect_mode="tensors",
        tol=tol,
        max_depth=max_depth,
    )
