"""Matrix-valued affine expressions over a flat decision vector.

An expression of shape (r, c) is ``const + reshape(coef @ x, (r, c))`` with
row-major vectorization. ``coef`` is a sparse (r*c, nx) matrix; ``nx`` may be
smaller than the owning problem's variable count, missing columns are zero.
"""
from __future__ import annotations

from numbers import Number
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp


def _pad(coef: sp.spmatrix, width: int) -> sp.csr_matrix:
    if coef.shape[1] == width:
        return coef.tocsr()
    if coef.shape[1] > width:
        raise ValueError("coefficient wider than requested width")
    coef = coef.tocoo()
    return sp.csr_matrix((coef.data, (coef.row, coef.col)), shape=(coef.shape[0], width))


def _transpose_perm(r: int, c: int) -> np.ndarray:
    # new[j*r + i] = old[i*c + j]
    return np.arange(r * c).reshape(r, c).T.ravel()


class AffineExpr:
    __array_priority__ = 100  # make ndarray @ expr dispatch to __rmatmul__

    def __init__(self, const: np.ndarray, coef: Optional[sp.spmatrix] = None, nx: int = 0):
        const = np.atleast_2d(np.asarray(const, dtype=float))
        self.const = const
        r, c = const.shape
        if coef is None:
            coef = sp.csr_matrix((r * c, nx))
        if coef.shape[0] != r * c:
            raise ValueError(f"coefficient rows {coef.shape[0]} != {r * c}")
        self.coef = coef.tocsr()

    @property
    def shape(self) -> tuple[int, int]:
        return self.const.shape

    @property
    def nx(self) -> int:
        return self.coef.shape[1]

    @property
    def T(self) -> "AffineExpr":
        r, c = self.shape
        perm = _transpose_perm(r, c)
        return AffineExpr(self.const.T.copy(), self.coef[perm, :])

    @staticmethod
    def lift(other, shape=None) -> "AffineExpr":
        if isinstance(other, AffineExpr):
            return other
        if isinstance(other, Number):
            if shape is None:
                return AffineExpr(np.array([[float(other)]]))
            return AffineExpr(np.full(shape, float(other)))
        return AffineExpr(np.asarray(other, dtype=float))

    def _binary(self, other, sign: float) -> "AffineExpr":
        other = AffineExpr.lift(other, self.shape)
        if other.shape != self.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        w = max(self.nx, other.nx)
        return AffineExpr(self.const + sign * other.const, _pad(self.coef, w) + sign * _pad(other.coef, w))

    def __add__(self, other):
        return self._binary(other, 1.0)

    def __radd__(self, other):
        return self._binary(other, 1.0)

    def __sub__(self, other):
        return self._binary(other, -1.0)

    def __rsub__(self, other):
        return (-self)._binary(other, 1.0)

    def __neg__(self):
        return AffineExpr(-self.const, -self.coef)

    def __mul__(self, other):
        if not isinstance(other, Number):
            raise TypeError("only scalar multiplication is supported; use @")
        return AffineExpr(float(other) * self.const, float(other) * self.coef)

    __rmul__ = __mul__

    def __matmul__(self, R):
        R = np.atleast_2d(np.asarray(R, dtype=float))
        r, c = self.shape
        if R.shape[0] != c:
            raise ValueError(f"cannot multiply {self.shape} by {R.shape}")
        op = sp.kron(sp.identity(r, format="csr"), sp.csr_matrix(R.T), format="csr")
        return AffineExpr(self.const @ R, op @ self.coef)

    def __rmatmul__(self, L):
        L = np.atleast_2d(np.asarray(L, dtype=float))
        r, c = self.shape
        if L.shape[1] != r:
            raise ValueError(f"cannot multiply {L.shape} by {self.shape}")
        op = sp.kron(sp.csr_matrix(L), sp.identity(c, format="csr"), format="csr")
        return AffineExpr(L @ self.const, op @ self.coef)

    def congruence(self, T: np.ndarray) -> "AffineExpr":
        """T^T E T, computed on the nonzero coefficient columns only."""
        T = np.asarray(T, dtype=float)
        r, c = self.shape
        if r != c or T.shape[0] != r:
            raise ValueError("congruence needs a square expression and a compatible T")
        k = T.shape[1]
        const = T.T @ self.const @ T
        coef = self.coef.tocsc()
        cols = np.flatnonzero(np.diff(coef.indptr))
        if cols.size == 0:
            return AffineExpr(const, sp.csr_matrix((k * k, self.nx)))
        dense = coef[:, cols].toarray().reshape(r, c, cols.size)
        out = np.einsum("ia,ijq,jb->abq", T, dense, T, optimize=True).reshape(k * k, cols.size)
        out[np.abs(out) < 1e-300] = 0.0
        rows, qs = np.nonzero(out)
        new = sp.csr_matrix((out[rows, qs], (rows, cols[qs])), shape=(k * k, self.nx))
        return AffineExpr(const, new)

    def times(self, E: np.ndarray) -> "AffineExpr":
        """Scalar (1x1) expression times a constant matrix."""
        if self.shape != (1, 1):
            raise ValueError("times() needs a scalar expression")
        E = np.atleast_2d(np.asarray(E, dtype=float))
        return AffineExpr(self.const[0, 0] * E, sp.csr_matrix(E.reshape(-1, 1)) @ self.coef)

    def sym(self) -> "AffineExpr":
        return 0.5 * (self + self.T)

    def trace(self) -> "AffineExpr":
        r, c = self.shape
        if r != c:
            raise ValueError("trace of a non-square expression")
        idx = np.arange(r) * (c + 1)
        row = sp.csr_matrix((np.ones(r), (np.zeros(r, dtype=int), idx)), shape=(1, r * c))
        return AffineExpr(np.array([[np.trace(self.const)]]), row @ self.coef)

    def sum(self) -> "AffineExpr":
        r, c = self.shape
        row = sp.csr_matrix(np.ones((1, r * c)))
        return AffineExpr(np.array([[self.const.sum()]]), row @ self.coef)

    def __getitem__(self, key) -> "AffineExpr":
        r, c = self.shape
        idx = np.arange(r * c).reshape(r, c)[key]
        idx = np.atleast_2d(idx)
        return AffineExpr(self.const[key].reshape(idx.shape), self.coef[idx.ravel(), :])

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        v = self.coef @ x[: self.nx] if self.nx else np.zeros(self.const.size)
        return self.const + np.asarray(v).reshape(self.shape)

    def is_symmetric(self, tol: float = 0.0) -> bool:
        if self.shape[0] != self.shape[1]:
            return False
        if np.max(np.abs(self.const - self.const.T), initial=0.0) > tol:
            return False
        d = self.coef - self.T.coef
        return d.nnz == 0 or np.max(np.abs(d.data)) <= tol

    def __repr__(self) -> str:
        return f"AffineExpr(shape={self.shape}, nx={self.nx}, nnz={self.coef.nnz})"


def bmat(blocks: Sequence[Sequence]) -> AffineExpr:
    """Block assembly; entries may be expressions, arrays, scalars 0 or None."""
    nbr = len(blocks)
    nbc = len(blocks[0])
    heights = [None] * nbr
    widths = [None] * nbc
    for i, row in enumerate(blocks):
        if len(row) != nbc:
            raise ValueError("ragged block matrix")
        for j, b in enumerate(row):
            if b is None or (isinstance(b, Number) and b == 0):
                continue
            shp = b.shape if isinstance(b, AffineExpr) else np.atleast_2d(np.asarray(b)).shape
            if heights[i] is None:
                heights[i] = shp[0]
            elif heights[i] != shp[0]:
                raise ValueError(f"block row {i} height mismatch")
            if widths[j] is None:
                widths[j] = shp[1]
            elif widths[j] != shp[1]:
                raise ValueError(f"block column {j} width mismatch")
    if any(h is None for h in heights) or any(w is None for w in widths):
        raise ValueError("every block row and column needs one sized entry")
    R, C = sum(heights), sum(widths)
    roff = np.concatenate([[0], np.cumsum(heights)])
    coff = np.concatenate([[0], np.cumsum(widths)])
    const = np.zeros((R, C))
    nx = 0
    rows, cols, vals = [], [], []
    for i, row in enumerate(blocks):
        for j, b in enumerate(row):
            if b is None or (isinstance(b, Number) and b == 0):
                continue
            e = AffineExpr.lift(b)
            h, w = e.shape
            const[roff[i]:roff[i] + h, coff[j]:coff[j] + w] = e.const
            if e.coef.nnz:
                cc = e.coef.tocoo()
                bi, bj = np.divmod(cc.row, w)
                rows.append((roff[i] + bi) * C + coff[j] + bj)
                cols.append(cc.col)
                vals.append(cc.data)
            nx = max(nx, e.nx)
    if rows:
        coef = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(R * C, nx)
        )
    else:
        coef = sp.csr_matrix((R * C, nx))
    return AffineExpr(const, coef)


def block_diag(*blocks) -> AffineExpr:
    k = len(blocks)
    grid = [[blocks[i] if i == j else None for j in range(k)] for i in range(k)]
    return bmat(grid)


def hstack(items) -> AffineExpr:
    return bmat([list(items)])


def vstack(items) -> AffineExpr:
    return bmat([[it] for it in items])
