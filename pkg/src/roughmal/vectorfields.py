"""Coefficient vector fields sigma = [V_1 .. V_d] with analytic derivatives.

grad(l, y) has shape (e, d) + (e,)*l with entry [i, a, k1, ..., kl] equal to
the l-th partial of sigma[i, a] in the state coordinates. All callbacks accept
a batch axis in front of the state vector. Derivatives are validated against
finite differences at construction.

Presets are registered by name; trigonometric entries carry closed-form
derivatives of every order via the quarter-period phase shift, polynomial
entries by exponent bookkeeping, so high-order recursions never meet an
inexact callback.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ModelError
from .oneform import validate_derivative_chain

DEFAULT_ORDER = 5


class VectorFieldSystem:
    """sigma: R^e -> Mat(e, d) assembled from the columns V_1..V_d."""

    def __init__(self, d: int, e: int, sigma: Callable, grads: Sequence[Callable],
                 name: str = "", m_bound: float = math.inf, validate: bool = True,
                 seed: int = 77):
        self.d = int(d)
        self.e = int(e)
        self.sigma = sigma
        self.grads = list(grads)
        self.name = name
        self.m_bound = float(m_bound)
        if validate:
            rng = np.random.default_rng(seed)
            validate_derivative_chain(
                [sigma, *self.grads], self.e, rng, what=f"vector field {name or '<anon>'}"
            )

    @property
    def order(self) -> int:
        return len(self.grads)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(self.sigma(y), dtype=float)

    def grad(self, l: int, y: np.ndarray) -> np.ndarray:
        if l == 0:
            return self(y)
        if not (1 <= l <= len(self.grads)):
            raise ModelError(f"derivative order {l} not provided for {self.name!r}")
        return np.asarray(self.grads[l - 1](y), dtype=float)

    def doubled(self) -> "VectorFieldSystem":
        """Coefficients for the doubled driver (w, b): zero columns on the b block."""
        d = self.d

        def sigma2(y):
            s = np.asarray(self.sigma(y), dtype=float)
            z = np.zeros(s.shape)
            return np.concatenate([s, z], axis=-1)

        def make_grad(l):
            def g(y, l=l):
                arr = np.asarray(self.grads[l - 1](y), dtype=float)
                # driver axis sits right after the e-axis: (..., e, d, e, ..., e)
                pad_shape = list(arr.shape)
                ax = arr.ndim - 1 - l
                pad_shape[ax] = d
                return np.concatenate([arr, np.zeros(pad_shape)], axis=ax)
            return g

        return VectorFieldSystem(
            2 * d, self.e, sigma2, [make_grad(l) for l in range(1, self.order + 1)],
            name=f"{self.name}+zero", m_bound=self.m_bound, validate=False,
        )


# ---------------------------------------------------------------- builders


class _TrigEntry:
    """c * sin(k . y + phase) + const; every derivative is a phase shift."""

    def __init__(self, c=0.0, k=None, phase=0.0, const=0.0, e=1):
        self.c = float(c)
        self.k = np.zeros(e) if k is None else np.asarray(k, dtype=float)
        self.phase = float(phase)
        self.const = float(const)

    def value(self, y):
        return self.c * np.sin(y @ self.k + self.phase) + self.const

    def deriv(self, l, y):
        s = np.sin(y @ self.k + self.phase + l * np.pi / 2.0)
        kprod = self.k
        for _ in range(l - 1):
            kprod = np.multiply.outer(kprod, self.k)
        return self.c * np.multiply.outer(s, kprod) if l > 0 else self.value(y)


def trig_field(d: int, e: int, entries, name: str = "", order: int = DEFAULT_ORDER,
               m_bound: float = None) -> VectorFieldSystem:
    """entries[i][a] is a _TrigEntry (or list of them) for sigma[i,a]."""
    table = [[ent if isinstance(ent, list) else [ent] for ent in row] for row in entries]

    def sigma(y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape[:-1] + (e, d))
        for i in range(e):
            for a in range(d):
                for ent in table[i][a]:
                    out[..., i, a] += ent.value(y)
        return out

    def make_grad(l):
        def g(y, l=l):
            y = np.asarray(y, dtype=float)
            out = np.zeros(y.shape[:-1] + (e, d) + (e,) * l)
            for i in range(e):
                for a in range(d):
                    for ent in table[i][a]:
                        out[(Ellipsis, i, a) + (slice(None),) * l] += ent.deriv(l, y)
            return out
        return g

    if m_bound is None:
        amp = sum(abs(ent.c) + abs(ent.const) for row in table for cell in row for ent in cell)
        kmax = max(
            (float(np.linalg.norm(ent.k)) for row in table for cell in row for ent in cell),
            default=0.0,
        )
        m_bound = sum(amp * max(kmax, 1.0) ** j for j in range(order + 1))
    return VectorFieldSystem(d, e, sigma, [make_grad(l) for l in range(1, order + 1)],
                             name=name, m_bound=m_bound)


def linear_field(T: np.ndarray, A0: np.ndarray = None, name: str = "",
                 order: int = DEFAULT_ORDER) -> VectorFieldSystem:
    """sigma(y) = A0 + T . y with T of shape (e, d, e); linear growth."""
    T = np.asarray(T, dtype=float)
    e, d, _ = T.shape
    A0 = np.zeros((e, d)) if A0 is None else np.asarray(A0, dtype=float)

    def sigma(y):
        y = np.asarray(y, dtype=float)
        return A0 + np.einsum("iak,...k->...ia", T, y)

    def make_grad(l):
        def g(y, l=l):
            y = np.asarray(y, dtype=float)
            shape = y.shape[:-1] + (e, d) + (e,) * l
            if l == 1:
                return np.broadcast_to(T, shape).copy()
            return np.zeros(shape)
        return g

    return VectorFieldSystem(d, e, sigma, [make_grad(l) for l in range(1, order + 1)],
                             name=name, m_bound=math.inf)


def polynomial_field(d: int, e: int, coeffs, name: str = "",
                     order: int = DEFAULT_ORDER) -> VectorFieldSystem:
    """coeffs[(i, a)] is a dict {exponent tuple: coefficient} over y powers."""

    def entry_deriv(expnt, coeff, partial):
        # differentiate y^expnt by the multi-index count `partial`
        expnt = list(expnt)
        c = coeff
        for k in partial:
            if expnt[k] == 0:
                return 0.0, None
            c *= expnt[k]
            expnt[k] -= 1
        return c, tuple(expnt)

    def sigma(y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape[:-1] + (e, d))
        for (i, a), terms in coeffs.items():
            for expnt, c in terms.items():
                mono = np.ones(y.shape[:-1])
                for k, pw in enumerate(expnt):
                    if pw:
                        mono = mono * y[..., k] ** pw
                out[..., i, a] += c * mono
        return out

    def make_grad(l):
        def g(y, l=l):
            y = np.asarray(y, dtype=float)
            out = np.zeros(y.shape[:-1] + (e, d) + (e,) * l)
            for (i, a), terms in coeffs.items():
                for partial in itertools.product(range(e), repeat=l):
                    for expnt, c in terms.items():
                        cd, ex = entry_deriv(expnt, c, partial)
                        if ex is None:
                            continue
                        mono = np.ones(y.shape[:-1])
                        for k, pw in enumerate(ex):
                            if pw:
                                mono = mono * y[..., k] ** pw
                        out[(Ellipsis, i, a) + partial] += cd * mono
            return out
        return g

    return VectorFieldSystem(d, e, sigma, [make_grad(l) for l in range(1, order + 1)],
                             name=name, m_bound=math.inf)


def constant_field(A: np.ndarray, name: str = "constant",
                   order: int = DEFAULT_ORDER) -> VectorFieldSystem:
    A = np.asarray(A, dtype=float)
    e, d = A.shape
    T = np.zeros((e, d, e))
    vf = linear_field(T, A0=A, name=name, order=order)
    vf.m_bound = float(np.sum(np.abs(A)))
    return vf


# ---------------------------------------------------------------- presets


def _preset_constant_scalar():
    return constant_field(np.array([[0.8]]), name="constant-scalar")


def _preset_linear_scalar():
    return linear_field(np.ones((1, 1, 1)), name="linear-scalar")


def _preset_sin_scalar():
    return trig_field(
        1, 1, [[_TrigEntry(c=1.0, k=[1.0], const=2.0)]], name="sin-scalar"
    )


def _preset_skew_rotation():
    T = np.zeros((2, 1, 2))
    T[0, 0, 1] = -1.0
    T[1, 0, 0] = 1.0
    return linear_field(T, name="skew-rotation")


def _preset_poly_2d():
    coeffs = {
        (0, 0): {(0, 0): 0.3, (0, 1): -0.2, (1, 1): 0.1},
        (1, 0): {(0, 0): 0.2, (1, 0): 0.1, (0, 2): -0.15},
    }
    return polynomial_field(1, 2, coeffs, name="poly-2d")


def _preset_noncommuting_2d():
    ent = _TrigEntry
    entries = [
        [ent(c=1.0, k=[0.0, 1.0], const=2.0), ent(c=1.0, k=[1.0, 1.0], phase=np.pi / 2)],
        [ent(c=1.0, k=[1.0, 0.0], phase=np.pi / 2), ent(c=1.0, k=[1.0, 0.0], const=2.0)],
    ]
    return trig_field(2, 2, entries, name="noncommuting-2d")


_PRESETS = {
    "constant-scalar": _preset_constant_scalar,
    "linear-scalar": _preset_linear_scalar,
    "sin-scalar": _preset_sin_scalar,
    "skew-rotation": _preset_skew_rotation,
    "poly-2d": _preset_poly_2d,
    "noncommuting-2d": _preset_noncommuting_2d,
}


def preset_field(name: str) -> VectorFieldSystem:
    if name not in _PRESETS:
        raise DomainError(f"unknown vector field preset {name!r}; have {sorted(_PRESETS)}")
    return _PRESETS[name]()


def preset_names():
    return sorted(_PRESETS)
