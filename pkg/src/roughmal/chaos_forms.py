"""One-forms over the augmented rough path that realize the functional
recursion as a chain of rough integrals.

The ambient space carries named blocks (w, b, y, J, K, then alternating
integral and functional blocks). Each recursion step integrates

    K { sum C  grad^l sigma(y) < Xi_..., dw >  +  sum C' grad^l sigma(y) < Xi_..., db > }

which is a polynomial-growth one-form reading the y, K and Xi blocks and
loading the w and b columns; the subsequent step multiplies by the Jacobian
through d(J I) = dJ . I + J . dI, a bilinear form on the J and I blocks.
Analytic first and second derivatives are assembled blockwise (the bracket
grad^l sigma is symmetric in its state slots, so slot bookkeeping reduces to
multiplicities) and validated against finite differences at construction.
"""

from __future__ import annotations

import numpy as np

from .derivative_constants import constants_table
from .oneform import OneForm
from .vectorfields import VectorFieldSystem


class BlockLayout:
    """Named contiguous blocks of the ambient coordinate space."""

    def __init__(self, blocks):
        self.names = []
        self.slices = {}
        start = 0
        for name, size in blocks:
            self.names.append(name)
            self.slices[name] = slice(start, start + size)
            start += size
        self.dim = start

    def sl(self, name) -> slice:
        return self.slices[name]

    def extended(self, name, size) -> "BlockLayout":
        blocks = [(n, self.slices[n].stop - self.slices[n].start) for n in self.names]
        return BlockLayout(blocks + [(name, size)])


def _bracket_free(vf: VectorFieldSystem, l: int, y, filled, free: int):
    """grad^l sigma(y) with len(filled) state slots contracted and `free`
    slots left open; shape (e, d) + (e,)*free. Valid by symmetry of the slots."""
    g = vf.grad(l, y)
    for v in filled:
        g = np.tensordot(g, v, axes=([2], [0]))
    return g


class RecursionIntegrandForm(OneForm):
    """The order-n integrand: loads w-columns with the dw terms and b-columns
    with the db terms, premultiplied by K."""

    def __init__(self, layout: BlockLayout, vf: VectorFieldSystem, n: int,
                 validate: bool = True, seed: int = 99):
        self.layout = layout
        self.vf = vf
        self.n = n
        table = constants_table(n)
        # (coefficient, tuple of orders, target block)
        self.terms = [(c, tup, "w") for tup, c in table.dw_terms.items()]
        self.terms += [(c, tup, "b") for tup, c in table.dh_terms.items()]
        super().__init__(
            self._fun, [self._grad1, self._grad2], layout.dim, vf.e,
            growth=float(vf.e + vf.d + n), validate=validate, seed=seed,
        )

    # -- reads ---------------------------------------------------------

    def _read(self, xi):
        lay, e = self.layout, self.vf.e
        y = xi[lay.sl("y")]
        K = xi[lay.sl("K")].reshape(e, e)
        xis = {}
        for i in range(1, self.n):
            xis[i] = xi[lay.sl(f"xi{i}")]
        return y, K, xis

    def _args(self, xis, tup):
        return [xis[i] for i in tup]

    # -- value ---------------------------------------------------------

    def _fun(self, xi):
        lay, vf = self.layout, self.vf
        y, K, xis = self._read(xi)
        out = np.zeros((vf.e, lay.dim))
        for c, tup, target in self.terms:
            B = _bracket_free(vf, len(tup), y, self._args(xis, tup), 0)
            out[:, lay.sl(target)] += c * (K @ B)
        return out

    # -- first derivative ------------------------------------------------

    def _grad1(self, xi):
        lay, vf = self.layout, self.vf
        e, D = vf.e, lay.dim
        y, K, xis = self._read(xi)
        out = np.zeros((e, D, D))
        sly, slK = lay.sl("y"), lay.sl("K")
        for c, tup, target in self.terms:
            l = len(tup)
            args = self._args(xis, tup)
            col = lay.sl(target)
            # d/dy: one extra state slot
            By = _bracket_free(vf, l + 1, y, args, 1)            # (e, d, e)
            out[:, col, sly] += c * np.einsum("ij,jam->iam", K, By)
            # d/dK[p,q]: delta_{i p} B[q, a]
            B = _bracket_free(vf, l, y, args, 0)                 # (e, d)
            dK = np.einsum("ip,qa->iapq", np.eye(e), B).reshape(e, vf.d, e * e)
            out[:, col, slK] += c * dK
            # d/dXi_i: multiplicity times the bracket with one slot freed
            for i in sorted(set(tup)):
                mult = tup.count(i)
                rest = list(tup)
                rest.remove(i)
                Bi = _bracket_free(vf, l, y, self._args(xis, rest), 1)
                out[:, col, lay.sl(f"xi{i}")] += c * mult * np.einsum(
                    "ij,jar->iar", K, Bi
                )
        return out

    # -- second derivative -----------------------------------------------

    def _grad2(self, xi):
        lay, vf = self.layout, self.vf
        e, d, D = vf.e, vf.d, lay.dim
        y, K, xis = self._read(xi)
        out = np.zeros((e, D, D, D))
        sly, slK = lay.sl("y"), lay.sl("K")
        eye = np.eye(e)
        for c, tup, target in self.terms:
            l = len(tup)
            args = self._args(xis, tup)
            col = lay.sl(target)
            # (y, y)
            Byy = _bracket_free(vf, l + 2, y, args, 2)
            out[:, col, sly, sly] += c * np.einsum("ij,jamn->iamn", K, Byy)
            # (y, K) and (K, y)
            By = _bracket_free(vf, l + 1, y, args, 1)
            out[:, col, sly, slK] += c * np.einsum("ip,qam->iampq", eye, By).reshape(
                e, d, e, e * e
            )
            out[:, col, slK, sly] += c * np.einsum("ip,qam->iapqm", eye, By).reshape(
                e, d, e * e, e
            )
            for i in sorted(set(tup)):
                mult = tup.count(i)
                rest = list(tup)
                rest.remove(i)
                sli = lay.sl(f"xi{i}")
                # (y, Xi_i) both orders
                Byi = _bracket_free(vf, l + 1, y, self._args(xis, rest), 2)
                blk = c * mult * np.einsum("ij,jamr->iamr", K, Byi)
                out[:, col, sly, sli] += blk
                out[:, col, sli, sly] += np.swapaxes(blk, 2, 3)
                # (K, Xi_i) both orders
                Bi = _bracket_free(vf, l, y, self._args(xis, rest), 1)
                kxi = c * mult * np.einsum("ip,qar->iarpq", eye, Bi).reshape(
                    e, d, e, e * e
                )
                out[:, col, sli, slK] += kxi
                out[:, col, slK, sli] += np.swapaxes(kxi, 2, 3).reshape(e, d, e * e, e)
                # (Xi_i, Xi_j) ordered pairs
                for j in sorted(set(rest)):
                    mult_j = rest.count(j)
                    rest2 = list(rest)
                    rest2.remove(j)
                    Bij = _bracket_free(vf, l, y, self._args(xis, rest2), 2)
                    out[:, col, sli, lay.sl(f"xi{j}")] += c * mult * mult_j * np.einsum(
                        "ij,jars->iars", K, Bij
                    )
        return out


class MatrixActionForm(OneForm):
    """d(J I) = dJ . I + J . dI as a bilinear one-form on the named blocks."""

    def __init__(self, layout: BlockLayout, m_block: str, v_block: str, e: int,
                 validate: bool = True, seed: int = 98):
        self.layout = layout
        self.m_block = m_block
        self.v_block = v_block
        self.e = e
        super().__init__(
            self._fun, [self._grad1, self._grad2], layout.dim, e,
            growth=2.0, validate=validate, seed=seed,
        )

    def _fun(self, xi):
        lay, e = self.layout, self.e
        J = xi[lay.sl(self.m_block)].reshape(e, e)
        I = xi[lay.sl(self.v_block)]
        out = np.zeros((e, lay.dim))
        # dJ[p,q] columns: delta_{i p} I[q]
        out[:, lay.sl(self.m_block)] = np.einsum(
            "ip,q->ipq", np.eye(e), I
        ).reshape(e, e * e)
        out[:, lay.sl(self.v_block)] = J
        return out

    def _grad1(self, xi):
        lay, e = self.layout, self.e
        out = np.zeros((e, lay.dim, lay.dim))
        slJ, slI = lay.sl(self.m_block), lay.sl(self.v_block)
        eye = np.eye(e)
        # d/dI[r] of the J-columns: delta_{ip} delta_{qr}
        dI = np.einsum("ip,qr->ipqr", eye, eye).reshape(e, e * e, e)
        out[:, slJ, slI] = dI
        # d/dJ[p,q] of the I-columns: delta_{ip} delta_{(col q') q}
        dJ = np.einsum("ip,aq->iapq", eye, eye).reshape(e, e, e * e)
        out[:, slI, slJ] = dJ
        return out

    def _grad2(self, xi):
        return np.zeros((self.e, self.layout.dim, self.layout.dim, self.layout.dim))
