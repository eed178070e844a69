"""Disturbance multiplier cones and the system multipliers they induce on [A B].

A disturbance matrix D (n_d x N) is admissible when

    [D^T; I]^T P_d [D^T; I] >= 0   for every P_d in the cone.

Pushing this through x+ = A x + B u + Bd d with the data gives a quadratic
constraint on [A B] whose multiplier is M P_d M^T, M = [-X 0; -U 0; X+ Bd].
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .core import InputError, has_full_column_rank
from .sdp import AffineExpr, LmiProblem

KINDS = ("diagonal", "quadratic")
QMI_TOL = 1e-7


@dataclass(frozen=True)
class MultiplierClass:
    """Cone of disturbance multipliers for N samples of an n_d-dimensional disturbance.

    ``quadratic`` is tau * [[Qd, Sd], [Sd^T, Rd]] with tau > 0 (defaults Qd = -I,
    Sd = 0, Rd = d_bar^2 N I); ``diagonal`` is [[-diag(p), 0], [0, sum(p) d_bar^2 I]]
    with p >= 0, one weight per sample.
    """

    kind: str
    d_bar: float
    N: int
    n_d: int = 1
    Qd: Optional[np.ndarray] = None
    Sd: Optional[np.ndarray] = None
    Rd: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"multiplier kind must be one of {KINDS}, got {self.kind!r}")
        if self.d_bar < 0:
            raise InputError("d_bar must be nonnegative")
        if self.N < 1 or self.n_d < 1:
            raise InputError("N and n_d must be positive")
        if self.kind == "quadratic":
            Qd = -np.eye(self.N) if self.Qd is None else np.asarray(self.Qd, float)
            Sd = np.zeros((self.N, self.n_d)) if self.Sd is None else np.asarray(self.Sd, float)
            Rd = self.d_bar ** 2 * self.N * np.eye(self.n_d) if self.Rd is None else np.asarray(self.Rd, float)
            if Qd.shape != (self.N, self.N) or Sd.shape != (self.N, self.n_d) or Rd.shape != (self.n_d, self.n_d):
                raise InputError("quadratic multiplier blocks have inconsistent shapes")
            if np.linalg.eigvalsh(0.5 * (Qd + Qd.T))[-1] >= 0:
                raise InputError("Qd must be negative definite")
            object.__setattr__(self, "Qd", Qd)
            object.__setattr__(self, "Sd", Sd)
            object.__setattr__(self, "Rd", Rd)

    @property
    def c_d(self) -> int:
        """Number of scalar decision variables in the cone."""
        return 1 if self.kind == "quadratic" else self.N

    @property
    def size(self) -> int:
        return self.N + self.n_d

    def generators(self) -> list[np.ndarray]:
        """Matrices G_k with P_d = sum_k w_k G_k, w >= 0."""
        if self.kind == "quadratic":
            return [np.block([[self.Qd, self.Sd], [self.Sd.T, self.Rd]])]
        gens = []
        for i in range(self.N):
            G = np.zeros((self.size, self.size))
            G[i, i] = -1.0
            G[self.N:, self.N:] = self.d_bar ** 2 * np.eye(self.n_d)
            gens.append(G)
        return gens


def instantiate(base: MultiplierClass, weights) -> np.ndarray:
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    if base.kind == "quadratic":
        if w.size != 1 or w[0] <= 0:
            raise InputError("quadratic multiplier needs a single positive weight tau")
        return w[0] * base.generators()[0]
    if w.size != base.N:
        raise InputError(f"diagonal multiplier needs {base.N} weights, got {w.size}")
    if np.any(w < 0):
        raise InputError("diagonal multiplier weights must be nonnegative")
    if not np.any(w > 0):
        raise InputError("diagonal multiplier weights must not all vanish")
    P = np.zeros((base.size, base.size))
    P[: base.N, : base.N] = -np.diag(w)
    P[base.N:, base.N:] = w.sum() * base.d_bar ** 2 * np.eye(base.n_d)
    return P


def bordered_data(Xp: np.ndarray, X: np.ndarray, U: np.ndarray, Bd_eff: np.ndarray) -> np.ndarray:
    """[-X 0; -U 0; X+ Bd]."""
    n, N = X.shape
    k = U.shape[0]
    nd = Bd_eff.shape[1]
    if Xp.shape != (n, N) or U.shape[1] != N or Bd_eff.shape[0] != n:
        raise InputError("data matrices and Bd have inconsistent shapes")
    return np.block([[-X, np.zeros((n, nd))], [-U, np.zeros((k, nd))], [Xp, Bd_eff]])


def _unpack(data):
    if hasattr(data, "Xhp"):
        return data.Xhp, data.Xh, data.Uh
    return data.Xp, data.X, data.U


def lift_multiplier(data, Pd: np.ndarray, Bd_eff: np.ndarray) -> np.ndarray:
    """P_AB = M Pd M^T for the bordered data matrix M."""
    M = bordered_data(*_unpack(data), np.asarray(Bd_eff, float))
    Pd = np.asarray(Pd, float)
    if Pd.shape != (M.shape[1], M.shape[1]):
        raise InputError(f"Pd has shape {Pd.shape}, expected {(M.shape[1], M.shape[1])}")
    return M @ Pd @ M.T


def lifted_bd(Bd: np.ndarray, h: int) -> np.ndarray:
    """Disturbance input of the h-step model: Bd itself for h = 1, identity afterwards."""
    Bd = np.asarray(Bd, float)
    return Bd if h == 1 else np.eye(Bd.shape[0])


def least_squares_model(Xp, X, U) -> np.ndarray:
    """Theta = X+ [X; U]^+, the least-squares estimate of [A B]."""
    return Xp @ np.linalg.pinv(np.vstack([X, U]))


def system_multiplier(prob: LmiProblem, name: str, base: MultiplierClass, Xp, X, U, Bd_eff,
                      kappa: float = 1.0) -> tuple[AffineExpr, AffineExpr]:
    """Add cone weights to `prob` and return (P_AB expression, weight vector).

    Weights are scaled as p = kappa * w so that w stays O(1) even when the
    certificate needs very large multipliers (noise-free data).
    """
    M = bordered_data(Xp, X, U, np.asarray(Bd_eff, float))
    gens = base.generators()
    k = M.shape[0]
    if base.kind == "diagonal":
        W = M[:, : base.N]
        bb = M[:, base.N:] @ M[:, base.N:].T
        # column i: kappa * (-w_i w_i^T + d_bar^2 bb^T)
        outer = -np.einsum("ai,bi->abi", W, W).reshape(k * k, base.N)
        outer += (base.d_bar ** 2) * bb.reshape(k * k, 1)
        coefs = kappa * outer
    else:
        coefs = np.column_stack([kappa * (M @ G @ M.T).ravel() for G in gens])
    w = prob.vector(name, base.c_d, nonneg=True)
    off = prob.variable(name).offset
    coefs[np.abs(coefs) < 1e-300] = 0.0
    coef = sp.csr_matrix(coefs)
    coef = sp.hstack([sp.csr_matrix((k * k, off)), coef], format="csr")
    return AffineExpr(np.zeros((k, k)), coef), w


def weights_to_Pd(base: MultiplierClass, w: np.ndarray, kappa: float = 1.0) -> np.ndarray:
    w = np.maximum(np.asarray(w, float).ravel(), 0.0) * kappa
    if base.kind == "quadratic":
        return w[0] * base.generators()[0]
    P = np.zeros((base.size, base.size))
    P[: base.N, : base.N] = -np.diag(w)
    P[base.N:, base.N:] = w.sum() * base.d_bar ** 2 * np.eye(base.n_d)
    return P


def qmi_value(P_AB: np.ndarray, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """[A^T; B^T; I]^T P_AB [A^T; B^T; I]."""
    V = np.vstack([np.asarray(A).T, np.asarray(B).T, np.eye(A.shape[0])])
    return V.T @ P_AB @ V


def disturbance_residual(data, Bd: np.ndarray, A: np.ndarray, B: np.ndarray):
    """Least-squares D with Bd D ~ X+ - A X - B U, and the out-of-range residual."""
    Xp, X, U = _unpack(data)
    R = Xp - A @ X - B @ U
    D, *_ = np.linalg.lstsq(Bd, R, rcond=None)
    return D, R - Bd @ D, R


def is_consistent(data, mult: MultiplierClass, Bd: np.ndarray, A: np.ndarray, B: np.ndarray) -> bool:
    """Membership of [A B] in the data-consistent set under a per-sample 2-norm bound."""
    Bd = np.asarray(Bd, float)
    if not has_full_column_rank(Bd):
        raise InputError("Bd must have full column rank")
    D, off_range, R = disturbance_residual(data, Bd, np.asarray(A, float), np.asarray(B, float))
    tol = 1e-8 * (1.0 + np.linalg.norm(R))
    if np.linalg.norm(off_range) > tol:
        return False
    if mult.kind == "diagonal":
        return bool(np.all(np.linalg.norm(D, axis=0) <= mult.d_bar + tol))
    # quadratic: evaluate the defining form against the cone generator
    V = np.vstack([D.T, np.eye(D.shape[0])])
    G = mult.generators()[0]
    return bool(np.linalg.eigvalsh(V.T @ G @ V)[0] >= -QMI_TOL * (1.0 + np.abs(G).max()))
