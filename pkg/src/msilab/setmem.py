"""Two-step baseline: set-membership identification to a parameter box, then
vertex-wise model-based circle-criterion checks with one common certificate."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .core import Controller, DataRecord, InputError, build_data_matrices, has_full_column_rank
from .sdp import LmiProblem, SolveOptions, bmat, solve

log = logging.getLogger(__name__)

LP_TOL = 1e-9
VERTEX_CAP = 2 ** 20


@dataclass
class ParamBox:
    """Entry-wise bounds on [A B]."""

    lower: np.ndarray
    upper: np.ndarray
    n: int = field(init=False)
    m: int = field(init=False)

    def __post_init__(self):
        self.lower = np.atleast_2d(np.asarray(self.lower, float))
        self.upper = np.atleast_2d(np.asarray(self.upper, float))
        if self.lower.shape != self.upper.shape:
            raise InputError("box bounds have different shapes")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise InputError("box must be finite")
        if np.any(self.lower > self.upper + LP_TOL):
            raise InputError("box lower bound exceeds upper bound")
        self.n = self.lower.shape[0]
        self.m = self.lower.shape[1] - self.n
        if self.m < 1:
            raise InputError("box must have n x (n+m) entries with m >= 1")

    @property
    def widths(self) -> np.ndarray:
        return np.maximum(self.upper - self.lower, 0.0)

    @property
    def n_vertices(self) -> int:
        return 2 ** self.lower.size

    def contains(self, A, B, tol: float = 1e-7) -> bool:
        AB = np.hstack([np.atleast_2d(A), np.atleast_2d(B)])
        return bool(np.all(AB >= self.lower - tol) and np.all(AB <= self.upper + tol))

    def vertices(self):
        """Binary counting over entries in row-major order; bit k picks the upper bound of entry k."""
        lo, hi = self.lower.ravel(), self.upper.ravel()
        for bits in itertools.product((0, 1), repeat=lo.size):
            b = np.array(bits, dtype=bool)
            yield np.where(b, hi, lo).reshape(self.lower.shape)


def identify_box(rec: DataRecord, Bd, d_bar: float) -> ParamBox:
    """Tightest box around all [A B] consistent with the data under |d_i(t)| <= d_bar.

    One LP per entry and direction over (vec [A B], D) subject to
    X+ - A X - B U = Bd D and -d_bar <= D <= d_bar.
    """
    Bd = np.atleast_2d(np.asarray(Bd, float))
    if d_bar < 0:
        raise InputError("d_bar must be nonnegative")
    dm = build_data_matrices(rec)
    n, N = dm.X.shape
    m = dm.U.shape[0]
    if Bd.shape[0] != n or not has_full_column_rank(Bd):
        raise InputError("Bd must have n rows and full column rank")
    nd = Bd.shape[1]
    Z = np.vstack([dm.X, dm.U])  # (n+m, N)
    k = n + m
    n_th, n_d = n * k, nd * N
    # row-major theta: theta[i*k + j] = [A B][i, j]; vec of residual (i, t) -> i*N + t
    A_th = sp.kron(sp.identity(n), sp.csr_matrix(Z.T))
    # Bd D, D row-major: D[l, t] -> l*N + t
    A_d = sp.kron(sp.csr_matrix(Bd), sp.identity(N))
    A_eq = sp.hstack([A_th, A_d], format="csc")
    b_eq = dm.Xp.ravel()
    bounds = [(None, None)] * n_th + [(-d_bar, d_bar)] * n_d
    lower = np.empty(n_th)
    upper = np.empty(n_th)
    for e in range(n_th):
        for sign, out in ((1.0, lower), (-1.0, upper)):
            c = np.zeros(n_th + n_d)
            c[e] = sign
            res = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs",
                          options={"primal_feasibility_tolerance": LP_TOL, "dual_feasibility_tolerance": LP_TOL})
            if res.status == 2:
                raise InputError("data are inconsistent with the noise bound d_bar")
            if res.status == 3:
                raise InputError("parameter set is unbounded; data are not persistently exciting")
            if not res.success:
                raise InputError(f"set-membership LP failed: {res.message}")
            out[e] = sign * res.fun
    return ParamBox(lower.reshape(n, k), upper.reshape(n, k))


def build_box_lmi(box: ParamBox, ctrl: Controller, h_bar: int, vertex_cap: int = VERTEX_CAP) -> LmiProblem:
    if h_bar < 1:
        raise InputError("h_bar must be positive")
    K = np.atleast_2d(ctrl.K)
    if K.shape != (box.m, box.n):
        raise InputError(f"K has shape {K.shape}, expected {(box.m, box.n)}")
    if box.n_vertices > vertex_cap:
        raise InputError("dimension too large for baseline")
    n = box.n
    g = h_bar * (h_bar - 1) / 2.0
    p = LmiProblem(f"setmem h={h_bar}")
    Q = p.symmetric("Q", n)
    X = p.symmetric("X", n)
    p.pd(Q, "Q>0")
    p.pd(X, "X>0")
    I, Z = np.eye(n), np.zeros((n, n))
    E1, E2 = np.hstack([I, Z]), np.hstack([Z, I])
    top = -(E1.T @ Q @ E1) - (E2.T @ X @ E2)
    for i, V in enumerate(box.vertices()):
        # Schur form of the circle LMI: affine in [A B], so vertex checks cover the box
        Acl, BK = V[:, :n] + V[:, n:] @ K, V[:, n:] @ K
        R = np.hstack([Acl, BK])
        if g > 0:
            S = np.hstack([I - Acl, -BK])
            M = bmat([[top, R.T @ Q, g * (S.T @ X)],
                      [Q @ R, -Q, None],
                      [g * (X @ S), None, -g * X]])
        else:
            M = bmat([[top, R.T @ Q], [Q @ R, -Q]])
        p.nd(M.sym(), f"vertex{i}")
    # scale normalization, not counted among the certificate constraints
    p.nsd(Q - np.eye(n), "Q<=I", counted=False)
    p.nsd(X - np.eye(n), "X<=I", counted=False)
    p.info.update(Q=Q, X=X, lmi_count=2 + box.n_vertices)
    return p


def analyze_box(box: ParamBox, ctrl: Controller, h_bar: int, opts: SolveOptions | None = None,
                vertex_cap: int = VERTEX_CAP) -> bool:
    """True iff one (Q, X) satisfies the circle-criterion LMI at every box vertex."""
    p = build_box_lmi(box, ctrl, h_bar, vertex_cap)
    out = solve(p, opts)
    if out.status == "numerical_failure":
        log.warning("set-membership check at h=%d: numerical failure", h_bar)
    return out.feasible


def box_constraint_count(n: int, m: int) -> int:
    return 2 + 2 ** (n * (n + m))
