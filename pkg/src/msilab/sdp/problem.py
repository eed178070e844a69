"""Solver-agnostic LMI problems."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .expr import AffineExpr

PSD, PD, NSD, ND, EQ = "psd", "pd", "nsd", "nd", "eq"
STRICT = (PD, ND)
KINDS = (PSD, PD, NSD, ND, EQ)


@dataclass
class Variable:
    name: str
    shape: tuple[int, int]
    offset: int
    size: int
    symmetric: bool = False
    nonneg: bool = False


@dataclass
class Constraint:
    expr: AffineExpr
    kind: str
    name: str
    eps: float = 0.0
    counted: bool = True  # False for scale normalizations, left out of the table-style counts

    def oriented(self) -> AffineExpr:
        """The expression whose positive semidefiniteness is required."""
        return -self.expr if self.kind in (NSD, ND) else self.expr

    @property
    def strict(self) -> bool:
        return self.kind in STRICT


def _sym_basis(n: int, offset: int) -> sp.csr_matrix:
    rows, cols = [], []
    k = offset
    for i in range(n):
        for j in range(i, n):
            rows.append(i * n + j)
            cols.append(k)
            if i != j:
                rows.append(j * n + i)
                cols.append(k)
            k += 1
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n * n, offset + n * (n + 1) // 2))


class LmiProblem:
    """Decision variables, tagged affine matrix constraints and an optional linear objective.

    Strict constraints are kept strict here; how they become conic constraints
    is decided by the solver (margin maximization or a fixed ``eps`` shift).
    """

    def __init__(self, name: str = "lmi", eps: float = 1e-8, scale: float = 1.0):
        self.name = name
        self.eps = float(eps)
        self.scale = float(scale)
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.objective: Optional[AffineExpr] = None
        self.nvars = 0
        self.info: dict = {}

    # variables -----------------------------------------------------------
    def _register(self, name, shape, size, symmetric=False, nonneg=False) -> Variable:
        if any(v.name == name for v in self.variables):
            raise ValueError(f"duplicate variable name {name!r}")
        var = Variable(name, shape, self.nvars, size, symmetric, nonneg)
        self.variables.append(var)
        self.nvars += size
        return var

    def symmetric(self, name: str, n: int) -> AffineExpr:
        var = self._register(name, (n, n), n * (n + 1) // 2, symmetric=True)
        return AffineExpr(np.zeros((n, n)), _sym_basis(n, var.offset))

    def matrix(self, name: str, r: int, c: int) -> AffineExpr:
        var = self._register(name, (r, c), r * c)
        coef = sp.csr_matrix(
            (np.ones(r * c), (np.arange(r * c), var.offset + np.arange(r * c))), shape=(r * c, self.nvars)
        )
        return AffineExpr(np.zeros((r, c)), coef)

    def vector(self, name: str, k: int, nonneg: bool = False) -> AffineExpr:
        """Column vector of k scalars."""
        var = self._register(name, (k, 1), k, nonneg=nonneg)
        coef = sp.csr_matrix((np.ones(k), (np.arange(k), var.offset + np.arange(k))), shape=(k, self.nvars))
        return AffineExpr(np.zeros((k, 1)), coef)

    def scalar(self, name: str, nonneg: bool = False) -> AffineExpr:
        return self.vector(name, 1, nonneg=nonneg)

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    # constraints ---------------------------------------------------------
    def add(self, expr: AffineExpr, kind: str, name: Optional[str] = None, eps: Optional[float] = None,
            counted: bool = True):
        if kind not in KINDS:
            raise ValueError(f"unknown constraint kind {kind!r}")
        expr = AffineExpr.lift(expr)
        if kind != EQ:
            r, c = expr.shape
            if r != c:
                raise ValueError(f"matrix inequality {name!r} is not square: {expr.shape}")
            mag = max(1.0, np.abs(expr.const).max(initial=0.0),
                      np.abs(expr.coef.data).max(initial=0.0))
            if not expr.is_symmetric(tol=1e-10 * mag):
                raise ValueError(f"matrix inequality {name!r} is not symmetric")
            expr = expr.sym()  # drop rounding asymmetry from congruences
        if eps is None:
            eps = self.eps * self.scale if kind in STRICT else 0.0
        con = Constraint(expr, kind, name or f"c{len(self.constraints)}", float(eps), counted)
        self.constraints.append(con)
        return con

    def psd(self, expr, name=None):
        return self.add(expr, PSD, name)

    def pd(self, expr, name=None, eps=None):
        return self.add(expr, PD, name, eps)

    def nsd(self, expr, name=None, counted=True):
        return self.add(expr, NSD, name, counted=counted)

    def nd(self, expr, name=None, eps=None):
        return self.add(expr, ND, name, eps)

    def eq(self, expr, name=None):
        return self.add(expr, EQ, name)

    def minimize(self, expr: AffineExpr) -> None:
        expr = AffineExpr.lift(expr)
        if expr.shape != (1, 1):
            raise ValueError("objective must be scalar")
        self.objective = expr

    # accounting ----------------------------------------------------------
    @property
    def n_scalar_variables(self) -> int:
        return self.nvars

    @property
    def n_constraints(self) -> int:
        return len(self.constraints) + sum(1 for v in self.variables if v.nonneg)

    def table_counts(self) -> tuple[int, int]:
        """(decision variables, constraints) with every matrix variable counted as r*c
        entries, each nonnegative scalar as one constraint and normalizations left out."""
        nv = sum(v.shape[0] * v.shape[1] for v in self.variables)
        nc = sum(1 for c in self.constraints if c.counted)
        nc += sum(v.size for v in self.variables if v.nonneg)
        return nv, nc

    def dump(self, stream=None) -> str:
        """Text dump: one section per constraint with (row, col, var, coefficient) triplets."""
        out = io.StringIO()
        out.write(f"problem {self.name} nvars={self.nvars} eps={self.eps * self.scale:.3e}\n")
        for v in self.variables:
            flag = " sym" if v.symmetric else ""
            flag += " nonneg" if v.nonneg else ""
            out.write(f"var {v.name} shape={v.shape[0]}x{v.shape[1]} offset={v.offset} size={v.size}{flag}\n")
        if self.objective is not None:
            coo = self.objective.coef.tocoo()
            out.write(f"objective const={self.objective.const[0, 0]!r}\n")
            for k, val in zip(coo.col, coo.data):
                out.write(f"  x{k} {val!r}\n")
        for con in self.constraints:
            r, c = con.expr.shape
            out.write(f"constraint {con.name} kind={con.kind} size={r}x{c} eps={con.eps:.3e}\n")
            nz = np.argwhere(con.expr.const != 0)
            for i, j in nz:
                out.write(f"  {i} {j} const {con.expr.const[i, j]!r}\n")
            coo = con.expr.coef.tocoo()
            for row, k, val in zip(coo.row, coo.col, coo.data):
                i, j = divmod(int(row), c)
                out.write(f"  {i} {j} x{k} {val!r}\n")
        text = out.getvalue()
        if stream is not None:
            stream.write(text)
        return text


@dataclass
class SolveOutcome:
    status: str  # feasible | infeasible | numerical_failure
    x: Optional[np.ndarray]
    max_violation: float
    solve_time: float
    backend: str
    backend_status: str = ""
    margin: Optional[float] = None
    objective: Optional[float] = None
    min_eigs: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"

    def value(self, expr: AffineExpr) -> np.ndarray:
        if self.x is None:
            raise ValueError("no assignment available")
        return expr.value(self.x)
