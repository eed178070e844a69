"""Conic backend adapters.

Every adapter receives the same canonical data

    minimize c @ x   subject to   A @ x + s = b,   s in K

where K is a product of a zero cone, a nonnegative cone and PSD cones in
that order, the PSD slices being vectorized triangles in the backend's own
ordering (``tri_order``). Off-diagonal triangle entries carry the usual
sqrt(2) factor so that the inner product is preserved.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

SQRT2 = np.sqrt(2.0)


@dataclass
class ConeDims:
    zero: int
    nonneg: int
    psd: list


@dataclass
class BackendResult:
    status: str  # solved | almost_solved | infeasible | unbounded | failed
    x: np.ndarray | None
    raw_status: str
    objective: float | None = None


def triangle_indices(n: int, order: str) -> list[tuple[int, int]]:
    if order == "upper_colmajor":
        return [(i, j) for j in range(n) for i in range(j + 1)]
    if order == "lower_colmajor":
        return [(i, j) for j in range(n) for i in range(j, n)]
    raise ValueError(order)


def svec_operator(n: int, order: str) -> sp.csr_matrix:
    """Map the row-major vec of an n x n matrix to its scaled triangle (symmetrizing)."""
    rows, cols, vals = [], [], []
    for k, (i, j) in enumerate(triangle_indices(n, order)):
        if i == j:
            rows.append(k)
            cols.append(i * n + i)
            vals.append(1.0)
        else:
            rows += [k, k]
            cols += [i * n + j, j * n + i]
            vals += [SQRT2 / 2, SQRT2 / 2]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n * (n + 1) // 2, n * n))


class ClarabelBackend:
    name = "clarabel"
    tri_order = "upper_colmajor"

    def __init__(self, **settings):
        self.settings = settings

    def solve(self, c, A, b, dims: ConeDims) -> BackendResult:
        import clarabel

        cones = []
        if dims.zero:
            cones.append(clarabel.ZeroConeT(dims.zero))
        if dims.nonneg:
            cones.append(clarabel.NonnegativeConeT(dims.nonneg))
        cones += [clarabel.PSDTriangleConeT(k) for k in dims.psd]
        st = clarabel.DefaultSettings()
        st.verbose = False
        for key, val in self.settings.items():
            setattr(st, key, val)
        nx = A.shape[1]
        P = sp.csc_matrix((nx, nx))
        sol = clarabel.DefaultSolver(P, np.asarray(c, float), sp.csc_matrix(A), np.asarray(b, float), cones, st).solve()
        raw = str(sol.status)
        key = raw.split(".")[-1]
        mapping = {
            "Solved": "solved",
            "AlmostSolved": "almost_solved",
            "PrimalInfeasible": "infeasible",
            "AlmostPrimalInfeasible": "infeasible",
            "DualInfeasible": "unbounded",
            "AlmostDualInfeasible": "unbounded",
        }
        status = mapping.get(key, "failed")
        x = np.array(sol.x) if len(sol.x) == nx else None
        if x is not None and not np.all(np.isfinite(x)):
            x = None
        return BackendResult(status, x, key, float(sol.obj_val) if status in ("solved", "almost_solved") else None)


class ScsBackend:
    name = "scs"
    tri_order = "lower_colmajor"

    def __init__(self, **settings):
        self.settings = {"eps_abs": 1e-9, "eps_rel": 1e-9, "max_iters": 200000}
        self.settings.update(settings)

    def solve(self, c, A, b, dims: ConeDims) -> BackendResult:
        import scs

        data = {"A": sp.csc_matrix(A), "b": np.asarray(b, float), "c": np.asarray(c, float)}
        cone = {"z": dims.zero, "l": dims.nonneg, "s": list(dims.psd)}
        solver = scs.SCS(data, cone, verbose=False, **self.settings)
        sol = solver.solve()
        raw = sol["info"]["status"]
        if raw == "solved":
            status = "solved"
        elif raw == "solved_inaccurate":
            status = "almost_solved"
        elif raw.startswith("infeasible"):
            status = "infeasible"
        elif raw.startswith("unbounded"):
            status = "unbounded"
        else:
            status = "failed"
        x = np.asarray(sol["x"]) if status in ("solved", "almost_solved") else None
        obj = float(sol["info"]["pobj"]) if x is not None else None
        return BackendResult(status, x, raw, obj)


BACKENDS = {"clarabel": ClarabelBackend, "scs": ScsBackend}


def get_backend(name: str, **settings):
    try:
        return BACKENDS[name.lower()](**settings)
    except KeyError:
        raise ValueError(f"unknown solver backend {name!r}; available: {sorted(BACKENDS)}") from None
