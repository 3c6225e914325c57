"""One-forms f: R^D -> Mat(E, D) with analytic derivative callbacks.

Derivative conventions: grad j of f has shape (E, D, D, ..., D) with j trailing
axes, entry [e, a, k1, ..., kj] = d^j f[e,a] / dxi_{k1} ... dxi_{kj}. Callbacks
are validated against central finite differences at construction; a failed
validation aborts with ModelError before anything downstream can consume the
wrong derivatives.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ModelError

PROBE_COUNT = 32
PROBE_SCALE = 3.0
VALIDATION_RTOL = 1e-5
FD_STEP = 1e-5


def _fd_gradient(fun: Callable, xi: np.ndarray, step: float) -> np.ndarray:
    """Central difference of an array-valued function, derivative axis last."""
    base = np.asarray(fun(xi))
    out = np.empty(base.shape + (len(xi),))
    for k in range(len(xi)):
        e = np.zeros_like(xi)
        e[k] = step
        out[..., k] = (np.asarray(fun(xi + e)) - np.asarray(fun(xi - e))) / (2 * step)
    return out


def validate_derivative_chain(
    funs: Sequence[Callable],
    dim: int,
    rng: np.random.Generator,
    rtol: float = VALIDATION_RTOL,
    n_probe: int = PROBE_COUNT,
    scale: float = PROBE_SCALE,
    what: str = "one-form",
) -> None:
    """Check that funs[j+1] is the gradient of funs[j] at random probe points."""
    probes = scale * rng.standard_normal((n_probe, dim))
    for j in range(len(funs) - 1):
        worst = 0.0
        for xi in probes:
            fd = _fd_gradient(funs[j], xi, FD_STEP)
            an = np.asarray(funs[j + 1](xi))
            scale_j = max(np.max(np.abs(fd)), np.max(np.abs(an)), 1.0)
            worst = max(worst, float(np.max(np.abs(fd - an))) / scale_j)
        if worst > rtol:
            raise ModelError(
                f"{what}: order-{j + 1} derivative callback disagrees with finite "
                f"differences (relative defect {worst:.2e} > {rtol:g})"
            )


class OneForm:
    """Polynomial-growth integrand with validated analytic derivatives.

    Parameters
    ----------
    fun : xi -> (E, D) coefficient matrix.
    grads : sequence of callbacks for grad^1 f, grad^2 f, ... (at least up to
        the top tensor level of the rough paths it will meet, usually L+1).
    growth : declared constant c with |grad^j f(xi)| <= c (1 + |xi|)^c.
    """

    def __init__(self, fun, grads, dim_in: int, dim_out: int, growth: float = 1.0,
                 validate: bool = True, seed: int = 2024):
        self.fun = fun
        self.grads = list(grads)
        self.dim_in = int(dim_in)
        self.dim_out = int(dim_out)
        self.growth = float(growth)
        if validate:
            rng = np.random.default_rng(seed)
            validate_derivative_chain([fun, *self.grads], self.dim_in, rng)

    @property
    def order(self) -> int:
        return len(self.grads)

    def __call__(self, xi: np.ndarray) -> np.ndarray:
        return np.asarray(self.fun(xi), dtype=float)

    def grad(self, j: int, xi: np.ndarray) -> np.ndarray:
        if not (1 <= j <= len(self.grads)):
            raise ModelError(f"derivative order {j} not provided (have {len(self.grads)})")
        return np.asarray(self.grads[j - 1](xi), dtype=float)


def constant_form(A: np.ndarray) -> OneForm:
    """f(xi) = A, all derivatives vanish."""
    A = np.asarray(A, dtype=float)
    E, D = A.shape
    zero1 = np.zeros((E, D, D))
    zero2 = np.zeros((E, D, D, D))
    zero3 = np.zeros((E, D, D, D, D))
    return OneForm(
        lambda xi: A,
        [lambda xi: zero1, lambda xi: zero2, lambda xi: zero3],
        D, E,
        growth=float(np.max(np.abs(A))) + 1.0,
        validate=False,
    )


def identity_form(D: int) -> OneForm:
    return constant_form(np.eye(D))


def linear_form(T: np.ndarray, validate: bool = False) -> OneForm:
    """f(xi)[e,a] = sum_k T[e,a,k] xi[k]."""
    T = np.asarray(T, dtype=float)
    E, D, _ = T.shape
    zero2 = np.zeros((E, D, D, D))
    zero3 = np.zeros((E, D, D, D, D))
    return OneForm(
        lambda xi: np.einsum("eak,k->ea", T, xi),
        [lambda xi: T, lambda xi: zero2, lambda xi: zero3],
        D, E,
        growth=float(np.max(np.abs(T))) + 1.0,
        validate=validate,
    )


def stack_forms(forms: Sequence[OneForm]) -> OneForm:
    """Vertical concatenation: integrate several E_i-valued forms at once."""
    D = forms[0].dim_in
    if any(f.dim_in != D for f in forms):
        raise ModelError("stacked forms must share the input dimension")
    E = sum(f.dim_out for f in forms)
    depth = min(f.order for f in forms)

    def fun(xi):
        return np.concatenate([f(xi) for f in forms], axis=0)

    def make_grad(j):
        def g(xi):
            return np.concatenate([f.grad(j, xi) for f in forms], axis=0)
        return g

    return OneForm(fun, [make_grad(j) for j in range(1, depth + 1)], D, E,
                   growth=max(f.growth for f in forms), validate=False)
