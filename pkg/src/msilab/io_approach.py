"""Robust input/output engine.

The sampled closed loop is written as an LTI system in feedback with the
sawtooth delay operator e(t) = sum_{i=t-tau(t)}^{t-1} y(i), y(t) = x(t) - x(t+1),
whose l2 gain is at most sqrt(h(h-1)/2). Stability then follows from a
circle-criterion type LMI (model-based), or from its robust counterpart over all
[A B] consistent with the data (S-procedure with a data multiplier).

Data-driven LMIs are solved after an exact congruence: the multiplier channel
r (in R^{n+m}) is replaced by Theta^T (v1 - v2) + beta r, where Theta is the
least-squares [A B]. This leaves feasibility untouched and removes the
ill-conditioning caused by the large multiplier weights that (nearly)
noise-free data require.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Controller, DataMatrices, DataRecord, InputError, LinearPlant, build_data_matrices
from .multipliers import MultiplierClass, least_squares_model, system_multiplier, weights_to_Pd, lift_multiplier
from .sdp import LmiProblem, SolveOptions, bmat, block_diag, solve

log = logging.getLogger(__name__)

BETA = 1e-2
KAPPA = 1e4


# delay operator ---------------------------------------------------------------

def delay_gain_bound(h_bar: int) -> float:
    if h_bar < 1:
        raise InputError("h_bar must be positive")
    return float(np.sqrt(h_bar * (h_bar - 1) / 2.0))


@dataclass(frozen=True)
class DelayOperatorSpec:
    h_bar: int

    @property
    def gain_bound(self) -> float:
        return delay_gain_bound(self.h_bar)

    def multiplier(self, X: np.ndarray) -> np.ndarray:
        """Pi = diag(h(h-1)/2 X, -X)."""
        g = self.h_bar * (self.h_bar - 1) / 2.0
        Z = np.zeros_like(X)
        return np.block([[g * X, Z], [Z, -X]])


def _sample_starts(h_seq, T: int) -> np.ndarray:
    """t_k(t) for t = 0..T-1."""
    inst = np.concatenate([[0], np.cumsum(h_seq)])
    return inst[np.searchsorted(inst, np.arange(T), side="right") - 1]


def apply_delay(y: np.ndarray, h_seq) -> np.ndarray:
    """(Delta y)(t) for a (T, n) signal and a sampling sequence covering T."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    T = y.shape[0]
    if int(np.sum(h_seq)) < T:
        raise InputError("sampling sequence does not cover the signal")
    C = np.vstack([np.zeros((1, y.shape[1])), np.cumsum(y, axis=0)])  # C[t] = sum_{i<t} y(i)
    tk = _sample_starts(h_seq, T)
    return C[np.arange(T)] - C[tk]


def empirical_gain(h_bar: int, trials: int = 10_000, signal_len: int = 60, seed: int = 0, n: int = 1) -> float:
    """Largest observed ||Delta y|| / ||y|| over random schedules and random signals.

    Half of the signals are Gaussian, half are constant per hold interval with
    random sign, which is the shape that drives the ratio towards the bound.
    """
    if trials < 1:
        raise InputError("trials must be positive")
    if h_bar == 1:
        return 0.0
    rng = np.random.default_rng(seed)
    T = signal_len
    H = rng.integers(1, h_bar + 1, size=(trials, T))
    H[: max(1, trials // 10)] = h_bar  # periodic holds at the bound
    inst = np.cumsum(H, axis=1)
    marks = np.zeros((trials, T + 1), dtype=bool)
    marks[:, 0] = True
    rows, cols = np.nonzero(inst < T)
    marks[rows, inst[rows, cols]] = True
    t_idx = np.arange(T)
    tk = np.maximum.accumulate(np.where(marks[:, :T], t_idx, 0), axis=1)

    y = rng.standard_normal((trials, T, n))
    half = trials // 2
    block_id = np.cumsum(marks[:, :T], axis=1) - 1
    signs = rng.choice([-1.0, 1.0], size=(trials, T))
    const = np.take_along_axis(signs, block_id, axis=1)
    y[half:] = const[half:, :, None] * np.abs(rng.standard_normal((trials - half, 1, n)))

    C = np.concatenate([np.zeros((trials, 1, n)), np.cumsum(y, axis=1)], axis=1)
    e = C[:, :T] - np.take_along_axis(C, tk[:, :, None], axis=1)
    ratio = np.linalg.norm(e.reshape(trials, -1), axis=1) / np.linalg.norm(y.reshape(trials, -1), axis=1)
    return float(ratio.max())


# certificates -------------------------------------------------------------------

@dataclass
class IoCertificate:
    h_bar: int
    S: np.ndarray
    Xinv: np.ndarray
    P_AB: np.ndarray
    weights: np.ndarray
    margin: float
    F: Optional[np.ndarray] = None
    K: Optional[np.ndarray] = None
    Gamma: Optional[np.ndarray] = None
    gamma: Optional[float] = None
    stats: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"h_bar": self.h_bar, "S": self.S.tolist(), "Xinv": self.Xinv.tolist(), "margin": self.margin}
        if self.K is not None:
            out["K"] = self.K.tolist()
        if self.gamma is not None:
            out["gamma"] = self.gamma
        return out


@dataclass
class ModelBasedResult:
    feasible: bool
    Q: Optional[np.ndarray]
    X: Optional[np.ndarray]
    margin: Optional[float]
    status: str
    stats: dict = field(default_factory=dict)


def _stats(p: LmiProblem, out) -> dict:
    return {"n_vars": p.n_scalar_variables, "n_constraints": p.n_constraints,
            "solve_time": out.solve_time, "status": out.status, "margin": out.margin}


# model-based -------------------------------------------------------------------

def model_based_outer(A: np.ndarray, B: np.ndarray, K: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    Acl, BK = A + B @ K, B @ K
    I, Z = np.eye(n), np.zeros((n, n))
    return np.block([[Acl, BK], [I, Z], [I - Acl, -BK], [Z, I]])


def model_based_value(A, B, K, h_bar: int, Q: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Left-hand side of the circle-criterion LMI at fixed (Q, X)."""
    g = h_bar * (h_bar - 1) / 2.0
    L = model_based_outer(A, B, K)
    mid = np.block([
        [Q, 0 * Q, 0 * Q, 0 * Q], [0 * Q, -Q, 0 * Q, 0 * Q],
        [0 * Q, 0 * Q, g * X, 0 * Q], [0 * Q, 0 * Q, 0 * Q, -X],
    ])
    return L.T @ mid @ L


def build_model_based_lmi(plant: LinearPlant, ctrl: Controller, h_bar: int) -> LmiProblem:
    ctrl.check(plant)
    if h_bar < 1:
        raise InputError("h_bar must be positive")
    n = plant.n
    g = h_bar * (h_bar - 1) / 2.0
    p = LmiProblem(f"io-model h={h_bar}")
    Q = p.symmetric("Q", n)
    X = p.symmetric("X", n)
    L = model_based_outer(plant.A, plant.B, ctrl.K)
    mid = block_diag(Q, -Q, g * X, -X)
    M = (L.T @ mid) @ L
    p.pd(Q, "Q>0")
    p.pd(X, "X>0")
    p.nd(M.sym(), "circle")
    # the LMI is homogeneous; fix the scale
    p.nsd(Q - np.eye(n), "Q<=I", counted=False)
    p.nsd(X - np.eye(n), "X<=I", counted=False)
    p.info.update(Q=Q, X=X)
    return p


def model_based_analyze(plant: LinearPlant, ctrl: Controller, h_bar: int, opts: SolveOptions | None = None) -> ModelBasedResult:
    p = build_model_based_lmi(plant, ctrl, h_bar)
    out = solve(p, opts)
    st = _stats(p, out)
    if not out.feasible:
        return ModelBasedResult(False, None, None, out.margin, out.status, st)
    return ModelBasedResult(True, out.value(p.info["Q"]), out.value(p.info["X"]), out.margin, out.status, st)


# data-driven analysis ------------------------------------------------------------

def data_outer(K: np.ndarray) -> np.ndarray:
    """Outer factor of the data-driven LMI; columns (v1, v2, r) of sizes (n, n, n+m)."""
    m, n = K.shape
    I, Z = np.eye(n), np.zeros((n, n))
    Zr = np.zeros((n, n + m))
    return np.block([
        [Z, I, np.hstack([I, K.T])],
        [I, Z, Zr],
        [Z, Z, np.hstack([Z, K.T])],
        [Z, I, Zr],
        [np.zeros((n + m, n)), np.zeros((n + m, n)), np.eye(n + m)],
        [I, -I, Zr],
    ])


def data_congruence(Theta: np.ndarray, beta: float) -> np.ndarray:
    """T: (v1, v2, r) -> (v1, v2, Theta^T (v1 - v2) + beta r)."""
    n, k = Theta.shape
    I, Z = np.eye(n), np.zeros((n, n))
    return np.block([
        [I, Z, np.zeros((n, k))],
        [Z, I, np.zeros((n, k))],
        [Theta.T, -Theta.T, beta * np.eye(k)],
    ])


def _as_matrices(data) -> DataMatrices:
    if isinstance(data, DataRecord):
        return build_data_matrices(data)
    return data


def _check_io_inputs(dm: DataMatrices, mult: MultiplierClass, Bd: np.ndarray, h_bar: int):
    if h_bar < 2:
        raise InputError("the input/output engine needs h_bar >= 2; h_bar = 1 is the periodic case")
    if mult.N != dm.N:
        raise InputError(f"multiplier built for N={mult.N}, data has N={dm.N}")
    if Bd.shape != (dm.X.shape[0], mult.n_d):
        raise InputError(f"Bd has shape {Bd.shape}, expected {(dm.X.shape[0], mult.n_d)}")


def data_lmi_value(K, h_bar, S, Xinv, P_AB) -> np.ndarray:
    """Data-driven analysis LMI in original coordinates at fixed values."""
    c = 2.0 / (h_bar * (h_bar - 1))
    n = S.shape[0]
    Z = np.zeros((n, n))
    k = P_AB.shape[0]
    mid = np.block([
        [S, Z, Z, Z, np.zeros((n, k))],
        [Z, -S, Z, Z, np.zeros((n, k))],
        [Z, Z, Xinv, Z, np.zeros((n, k))],
        [Z, Z, Z, -c * Xinv, np.zeros((n, k))],
        [np.zeros((k, 4 * n)), P_AB],
    ])
    L = data_outer(K)
    return L.T @ mid @ L


def build_analysis_lmi(data, mult: MultiplierClass, Bd, ctrl: Controller, h_bar: int,
                       beta: float = BETA, kappa: float = KAPPA) -> LmiProblem:
    dm = _as_matrices(data)
    Bd = np.asarray(Bd, float)
    _check_io_inputs(dm, mult, Bd, h_bar)
    K = ctrl.K
    n = dm.X.shape[0]
    if K.shape != (dm.U.shape[0], n):
        raise InputError(f"K has shape {K.shape}, expected {(dm.U.shape[0], n)}")
    c = 2.0 / (h_bar * (h_bar - 1))
    p = LmiProblem(f"io-data h={h_bar}")
    S = p.symmetric("S", n)
    Xi = p.symmetric("Xinv", n)
    P_AB, w = system_multiplier(p, "p", mult, dm.Xp, dm.X, dm.U, Bd, kappa)
    mid = block_diag(S, -S, Xi, -c * Xi, P_AB)
    Theta = least_squares_model(dm.Xp, dm.X, dm.U)
    LT = data_outer(K) @ data_congruence(Theta, beta)
    M = ((LT.T @ mid) @ LT).sym()
    p.pd(S, "S>0")
    p.pd(Xi, "Xinv>0")
    p.nd(M, "robust-circle")
    p.nsd(S - np.eye(n), "S<=I", counted=False)
    p.nsd(Xi - np.eye(n), "Xinv<=I", counted=False)
    p.info.update(S=S, Xinv=Xi, P_AB=P_AB, w=w, kappa=kappa, beta=beta, Theta=Theta)
    return p


def analyze(data, mult: MultiplierClass, Bd, ctrl: Controller, h_bar: int,
            opts: SolveOptions | None = None, beta: float = BETA, kappa: float = KAPPA) -> Optional[IoCertificate]:
    """Robust stability certificate for all [A B] consistent with the data, or None."""
    p = build_analysis_lmi(data, mult, Bd, ctrl, h_bar, beta, kappa)
    out = solve(p, opts)
    if out.status == "numerical_failure":
        log.warning("io analysis at h=%d: numerical failure, treated as not certified", h_bar)
    if not out.feasible:
        return None
    w = out.value(p.info["w"]).ravel()
    return IoCertificate(
        h_bar=h_bar,
        S=out.value(p.info["S"]),
        Xinv=out.value(p.info["Xinv"]),
        P_AB=out.value(p.info["P_AB"]),
        weights=kappa * w,
        margin=float(out.margin),
        K=np.array(ctrl.K),
        stats=_stats(p, out),
    )


# design ------------------------------------------------------------------------

def _design_blocks(h_bar, S, F, P_AB, n, m):
    """Four-block design LMI (before congruence); Schur block -S/2 last."""
    hh = h_bar * (h_bar - 1)
    k = n + m
    Q_AB = P_AB[:k, :k]
    S_AB = P_AB[:k, k:]
    R_AB = P_AB[k:, k:]
    SF = bmat([[S], [F]])
    top33 = bmat([[S, F.T], [F, np.zeros((m, m))]])
    row4 = bmat([[np.zeros((n, n)), F.T]])
    return bmat([
        [R_AB - S, (-R_AB).T, S_AB.T, None],
        [-R_AB, ((hh - 2) / hh) * S + R_AB, (SF - S_AB).T, None],
        [S_AB, SF - S_AB, top33 + Q_AB, row4.T],
        [None, None, row4, -0.5 * S],
    ])


def build_design_lmi(data, mult: MultiplierClass, Bd, h_bar: int, beta: float = BETA, kappa: float = KAPPA,
                     performance: Optional[dict] = None) -> LmiProblem:
    dm = _as_matrices(data)
    Bd = np.asarray(Bd, float)
    _check_io_inputs(dm, mult, Bd, h_bar)
    n, m = dm.X.shape[0], dm.U.shape[0]
    p = LmiProblem(f"io-design h={h_bar}")
    S = p.symmetric("S", n)
    F = p.matrix("F", m, n)
    P_AB, w = system_multiplier(p, "p", mult, dm.Xp, dm.X, dm.U, Bd, kappa)
    M = _design_blocks(h_bar, S, F, P_AB, n, m)
    if performance is not None:
        # -S -> Bd Bd^T - S in the state-channel block of the middle matrix
        shift = np.zeros(M.shape)
        shift[:n, :n] = Bd @ Bd.T
        M = M + shift
    Theta = least_squares_model(dm.Xp, dm.X, dm.U)
    T = block_diag(data_congruence(Theta, beta), np.eye(n)).const
    M = M.sym().congruence(T)
    p.pd(S, "S>0")
    p.nd(M, "design")
    if performance is None:
        p.nsd(S - np.eye(n), "S<=I", counted=False)
    else:
        Cp, Dp, gamma = performance["Cp"], performance["Dp"], performance["gamma"]
        q = Cp.shape[0]
        G = p.symmetric("Gamma", q)
        CS = Cp @ S + Dp @ F
        p.pd(bmat([[G, CS], [CS.T, S]]).sym(), "h2-coupling")
        p.pd(gamma ** 2 - G.trace(), "trace<gamma^2")
        p.info.update(Gamma=G)
    p.info.update(S=S, F=F, P_AB=P_AB, w=w, kappa=kappa, beta=beta, Theta=Theta)
    return p


def _design_result(p, out, h_bar, kappa, gamma=None):
    S = out.value(p.info["S"])
    F = out.value(p.info["F"])
    if np.linalg.cond(S) > 1e12:
        log.warning("design at h=%d: ill-conditioned S, rejected", h_bar)
        return None
    K = np.linalg.solve(S.T, F.T).T  # F S^{-1}
    cert = IoCertificate(
        h_bar=h_bar, S=S, Xinv=S.copy(), P_AB=out.value(p.info["P_AB"]),
        weights=kappa * out.value(p.info["w"]).ravel(), margin=float(out.margin),
        F=F, K=K, stats=_stats(p, out),
    )
    if gamma is not None:
        cert.Gamma = out.value(p.info["Gamma"])
        cert.gamma = float(gamma)
    return Controller(K), cert


def design(data, mult: MultiplierClass, Bd, h_bar: int, opts: SolveOptions | None = None,
           beta: float = BETA, kappa: float = KAPPA):
    """Joint search for K = F S^{-1} and a certificate with Xinv = S."""
    p = build_design_lmi(data, mult, Bd, h_bar, beta, kappa)
    out = solve(p, opts)
    if not out.feasible:
        return None
    return _design_result(p, out, h_bar, kappa)


def design_with_h2(data, mult: MultiplierClass, Bd, h_bar: int, Cp, Dp, gamma: float,
                   opts: SolveOptions | None = None, beta: float = BETA, kappa: float = KAPPA):
    """Design with an additional H2 bound gamma on the channel d -> Cp x + Dp u."""
    dm = _as_matrices(data)
    Cp = np.atleast_2d(np.asarray(Cp, float))
    Dp = np.atleast_2d(np.asarray(Dp, float))
    n, m = dm.X.shape[0], dm.U.shape[0]
    if Cp.shape[1] != n or Dp.shape != (Cp.shape[0], m):
        raise InputError("Cp must be q x n and Dp q x m")
    if not np.isfinite(gamma):
        return design(dm, mult, Bd, h_bar, opts, beta, kappa)
    if gamma <= 0:
        return None
    p = build_design_lmi(dm, mult, Bd, h_bar, beta, kappa, performance={"Cp": Cp, "Dp": Dp, "gamma": gamma})
    out = solve(p, opts)
    if not out.feasible:
        return None
    return _design_result(p, out, h_bar, kappa, gamma)


def min_h2_gamma(data, mult, Bd, h_bar, Cp, Dp, lo: float = 1e-3, hi: float = 1e3, rel_tol: float = 1e-2,
                 opts: SolveOptions | None = None) -> Optional[float]:
    """Bisection (in log scale) for the smallest certified H2 level."""
    if design_with_h2(data, mult, Bd, h_bar, Cp, Dp, hi, opts) is None:
        return None
    while hi / lo > 1 + rel_tol:
        mid = np.sqrt(lo * hi)
        if design_with_h2(data, mult, Bd, h_bar, Cp, Dp, mid, opts) is None:
            lo = mid
        else:
            hi = mid
    return float(hi)


# proof-chain cross-checks ---------------------------------------------------------

def primal_middle(h_bar: int, Q: np.ndarray, X: np.ndarray) -> np.ndarray:
    """diag(Q, -Q, g X, -X) with g = h(h-1)/2."""
    g = h_bar * (h_bar - 1) / 2.0
    Z = np.zeros_like(Q)
    return np.block([[Q, Z, Z, Z], [Z, -Q, Z, Z], [Z, Z, g * X, Z], [Z, Z, Z, -X]])


def dual_middle(h_bar: int, S: np.ndarray, Xinv: np.ndarray) -> np.ndarray:
    """diag(S, -S, Xinv, -c Xinv) with c = 2/(h(h-1)), the state/delay part of the data LMI."""
    c = 2.0 / (h_bar * (h_bar - 1))
    Z = np.zeros_like(S)
    return np.block([[S, Z, Z, Z], [Z, -S, Z, Z], [Z, Z, Xinv, Z], [Z, Z, Z, -c * Xinv]])


def dual_signature(n: int) -> np.ndarray:
    """J = diag([[0, I], [-I, 0]], [[0, I], [-I, 0]]); the dual middle is J^T (-W^-1) J."""
    I, Z = np.eye(n), np.zeros((n, n))
    Jp = np.block([[Z, I], [-I, Z]])
    return np.block([[Jp, np.zeros((2 * n, 2 * n))], [np.zeros((2 * n, 2 * n)), Jp]])


def restricted_dual_outer(A, B, K) -> np.ndarray:
    """Data-side outer factor (first four block rows) on the subspace r = [A B]^T (v1 - v2).

    Its range is the J-orthogonal complement of the model-based outer factor.
    """
    n = A.shape[0]
    AB = np.hstack([A, B])
    I, Z = np.eye(n), np.zeros((n, n))
    T = np.vstack([np.hstack([I, Z]), np.hstack([Z, I]), np.hstack([AB.T, -AB.T])])
    return (data_outer(np.atleast_2d(K)) @ T)[: 4 * n]


def dualized_value(cert: IoCertificate, A, B, K) -> np.ndarray:
    """Circle-criterion LMI at Q = S^{-1}, X = Xinv^{-1} for a given [A B]; must be negative definite."""
    return model_based_value(A, B, K, cert.h_bar, np.linalg.inv(cert.S), np.linalg.inv(cert.Xinv))


def design_schur_gap(cert: IoCertificate, h_bar: int) -> float:
    """Entry-wise gap between the Schur complement of the design LMI and the analysis LMI at Xinv = S."""
    n = cert.S.shape[0]
    m = cert.F.shape[0]
    M = _design_blocks(h_bar, cert.S, cert.F, cert.P_AB, n, m).const
    k = M.shape[0] - n
    A11, A12, A22 = M[:k, :k], M[:k, k:], M[k:, k:]
    schur = A11 - A12 @ np.linalg.solve(A22, A12.T)
    ref = data_lmi_value(cert.K, h_bar, cert.S, cert.S, cert.P_AB)
    return float(np.abs(schur - ref).max())


def raw_margin(cert: IoCertificate) -> float:
    """Largest eigenvalue of the analysis LMI in original (unconditioned) coordinates."""
    return float(np.linalg.eigvalsh(data_lmi_value(cert.K, cert.h_bar, cert.S, cert.Xinv, cert.P_AB))[-1])
