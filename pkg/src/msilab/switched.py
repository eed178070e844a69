"""Switched-systems engine.

Between sampling instants the closed loop is x(t_{k+1}) = Phi_{h_k} x(t_k) with
Phi_h = A^h + [A^{h-1}B ... B][K; ...; K]. Stability for all h_k <= h_bar follows
from a switched Lyapunov condition over all pairs (h, j). Without a model, each
lifted pair [A^h B^h] is known only through lifted data and a disturbance bound
that grows with h; the bound is built recursively from data-driven estimates of
sigma_max(A^h).
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Controller, DataRecord, InputError, LinearPlant, build_lifted_matrices, stack_gain
from .multipliers import MultiplierClass, least_squares_model, lifted_bd, system_multiplier
from .sdp import LmiProblem, SolveOptions, bmat, block_diag, solve

log = logging.getLogger(__name__)

BETA = 1e-2
KAPPA = 1e4
COND_MAX = 1e12


class LiftError(RuntimeError):
    """The h = 1 singular-value SDP has no solution."""


def data_fingerprint(rec: DataRecord) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(rec.states).tobytes())
    h.update(np.ascontiguousarray(rec.inputs).tobytes())
    return h.hexdigest()[:16]


@dataclass
class LiftedParametrization:
    """Per-level disturbance bounds d_h and singular-value bounds sigma_h (index h-1)."""

    d_bar: float
    kind: str
    N: int
    Bd: np.ndarray
    d_bars: list = field(default_factory=list)
    sigmas: list = field(default_factory=list)
    sdp_sigmas: list = field(default_factory=list)  # None where the SDP had no solution
    fingerprint: str = ""

    @property
    def h_max(self) -> int:
        return len(self.sigmas)

    @property
    def sigma_Bd(self) -> float:
        return float(np.linalg.svd(self.Bd, compute_uv=False)[0])

    def multiplier(self, h: int) -> MultiplierClass:
        if h > len(self.d_bars):
            raise InputError(f"level h={h} not computed (have {len(self.d_bars)})")
        nd = self.Bd.shape[1] if h == 1 else self.Bd.shape[0]
        return MultiplierClass(self.kind, self.d_bars[h - 1], self.N - h + 1, nd)

    def next_d_bar(self) -> float:
        return (1.0 + float(np.sum(self.sigmas))) * self.sigma_Bd * self.d_bar

    def to_json(self) -> dict:
        return {
            "d_bar": self.d_bar, "kind": self.kind, "N": self.N, "Bd": self.Bd.tolist(),
            "d_bars": self.d_bars, "sigmas": self.sigmas, "sdp_sigmas": self.sdp_sigmas,
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LiftedParametrization":
        try:
            return cls(float(obj["d_bar"]), obj["kind"], int(obj["N"]), np.array(obj["Bd"], float),
                       list(obj["d_bars"]), list(obj["sigmas"]), list(obj["sdp_sigmas"]), obj.get("fingerprint", ""))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed lift state: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path) -> "LiftedParametrization":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read lift state {path}: {exc}") from None

    def compatible(self, rec: DataRecord, Bd, d_bar: float, kind: str) -> bool:
        return (self.fingerprint == data_fingerprint(rec) and self.kind == kind and self.N == rec.N
                and np.isclose(self.d_bar, d_bar, rtol=0, atol=0) and np.array_equal(self.Bd, np.asarray(Bd, float)))


def lifted_congruence(Theta: np.ndarray, beta: float) -> np.ndarray:
    """(r, v) -> (Theta^T v + beta r, v) for r in R^{n+hm}, v in R^n."""
    n, k = Theta.shape
    return np.block([[beta * np.eye(k), Theta.T], [np.zeros((n, k)), np.eye(n)]])


def build_singular_value_lmi(rec: DataRecord, Bd, mult: MultiplierClass, h: int,
                             beta: float = BETA, kappa: float = KAPPA) -> LmiProblem:
    """min s subject to A^h (A^h)^T <= s I for every lifted pair consistent with the data."""
    L = build_lifted_matrices(rec, h)
    n = L.Xh.shape[0]
    k = n + L.Uh.shape[0]
    Bd_h = lifted_bd(Bd, h)
    p = LmiProblem(f"sigma h={h}")
    s2 = p.scalar("sigma2", nonneg=True)
    P, w = system_multiplier(p, "p", mult, L.Xhp, L.Xh, L.Uh, Bd_h, kappa)
    base = np.zeros((k + n, k + n))
    base[:n, :n] = -np.eye(n)
    E = np.zeros((k + n, k + n))
    E[k:, k:] = np.eye(n)
    Theta = least_squares_model(L.Xhp, L.Xh, L.Uh)
    T = lifted_congruence(Theta, beta)
    p.psd((base - P + s2.times(E)).congruence(T), "sigma-bound")
    p.minimize(s2)
    p.info.update(P_AB=P, w=w, base=base, k=k)
    return p


def singular_value_sdp(rec: DataRecord, Bd, mult: MultiplierClass, h: int, opts: SolveOptions | None = None,
                       beta: float = BETA, kappa: float = KAPPA) -> Optional[float]:
    """Squared singular-value bound of A^h from the lifted data, or None when the SDP has no solution."""
    p = build_singular_value_lmi(rec, Bd, mult, h, beta, kappa)
    P, base, k = p.info["P_AB"], p.info["base"], p.info["k"]
    out = solve(p, opts)
    if out.x is None or out.status == "infeasible":
        return None
    # exact smallest s for the returned multiplier (Schur complement on the [A B] block)
    Mp = base - out.value(P)
    Mab, Mabc, Mcc = Mp[:k, :k], Mp[:k, k:], Mp[k:, k:]
    lam = np.linalg.eigvalsh(Mab)
    if lam[0] <= 1e-10 * max(1.0, abs(lam[-1])):
        return None
    s = float(np.linalg.eigvalsh(Mabc.T @ np.linalg.solve(Mab, Mabc) - Mcc)[-1])
    return max(s, 0.0)


def run_algorithm1(rec: DataRecord, Bd, d_bar: float, h_bar: int, mult_kind: str = "diagonal",
                   state: Optional[LiftedParametrization] = None, opts: SolveOptions | None = None,
                   beta: float = BETA, kappa: float = KAPPA) -> LiftedParametrization:
    """Recursive lifted disturbance and singular-value bounds for h = 1..h_bar.

    An existing compatible `state` is extended instead of recomputed.
    """
    Bd = np.asarray(Bd, float)
    if h_bar < 1 or h_bar > rec.N:
        raise InputError(f"h_bar must lie in [1, N={rec.N}], got {h_bar}")
    if Bd.shape[0] != rec.n:
        raise InputError("Bd row count does not match the state dimension")
    if state is not None and not state.compatible(rec, Bd, d_bar, mult_kind):
        log.warning("stored lift state does not match the data or settings; recomputing")
        state = None
    if state is None:
        state = LiftedParametrization(float(d_bar), mult_kind, rec.N, Bd, fingerprint=data_fingerprint(rec))
    while state.h_max < h_bar:
        h = state.h_max + 1
        state.d_bars.append(float(d_bar) if h == 1 else state.next_d_bar())
        mult = state.multiplier(h)
        s2 = singular_value_sdp(rec, Bd, mult, h, opts, beta, kappa)
        state.sdp_sigmas.append(None if s2 is None else float(np.sqrt(s2)))
        if h == 1:
            if s2 is None:
                state.d_bars.pop()
                state.sdp_sigmas.pop()
                raise LiftError("singular-value bound unavailable: the h=1 SDP has no solution")
            sigma = float(np.sqrt(s2))
        else:
            fallback = state.sigmas[0] * state.sigmas[h - 2]
            sigma = fallback if s2 is None else min(float(np.sqrt(s2)), fallback)
        state.sigmas.append(sigma)
    return state


# certificates -----------------------------------------------------------------------

@dataclass
class SwitchedCertificate:
    h_bar: int
    S: list
    G: list
    margin: float
    F: Optional[np.ndarray] = None
    K: Optional[np.ndarray] = None
    weights: dict = field(default_factory=dict)  # (h, j) -> multiplier weights
    stats: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"h_bar": self.h_bar, "margin": self.margin, "S": [s.tolist() for s in self.S],
               "G": [g.tolist() for g in self.G]}
        if self.K is not None:
            out["K"] = self.K.tolist()
        return out


def build_Mhj(S_h: np.ndarray, G_h: np.ndarray, S_j: np.ndarray, K: np.ndarray, h: int) -> np.ndarray:
    """QMI matrix of the pair (h, j) in the variable [A^h B^h]^T stacked over I."""
    n = S_h.shape[0]
    Kh = stack_gain(np.atleast_2d(K), h)
    D = G_h + G_h.T - S_h
    if np.linalg.eigvalsh(0.5 * (D + D.T))[0] <= 0:
        raise InputError("G + G^T - S must be positive definite")
    if np.linalg.cond(D) > COND_MAX:
        raise InputError("G + G^T - S is too ill-conditioned to invert")
    J = np.vstack([np.eye(n), Kh])  # [I; K_h]
    core = G_h @ np.linalg.solve(D, G_h.T)
    k = J.shape[0]
    M = np.zeros((k + n, k + n))
    M[:k, :k] = -J @ core @ J.T
    M[k:, k:] = S_j
    return M


def grid_block(S_h, G_h, S_j, KG, hm: int, n: int, P=None):
    """Four-block grid LMI; KG is the stacked input block (K_h G_h or [F; ...; F])."""
    Z = np.zeros
    out = bmat([
        [G_h + G_h.T - S_h, G_h.T, KG.T, Z((n, n))],
        [G_h, Z((n, n)), Z((n, hm)), Z((n, n))],
        [KG, Z((hm, n)), Z((hm, hm)), Z((hm, n))],
        [Z((n, n)), Z((n, n)), Z((n, hm)), S_j],
    ])
    if P is not None:
        out = out - bmat([[Z((n, n)), None], [None, P]])
    return out


def build_grid_lmi(rec: DataRecord, Bd, lift: LiftedParametrization, h_bar: int, K=None,
                beta: float = BETA, kappa: float = KAPPA) -> LmiProblem:
    n, m = rec.n, rec.m
    design_mode = K is None
    p = LmiProblem(f"switched-{'design' if design_mode else 'analysis'} h={h_bar}")
    S = [p.symmetric(f"S{h}", n) for h in range(1, h_bar + 1)]
    if design_mode:
        Gc = p.matrix("G", n, n)
        G = [Gc] * h_bar
        F = p.matrix("F", m, n)
    else:
        G = [p.matrix(f"G{h}", n, n) for h in range(1, h_bar + 1)]
    weights = {}
    for h in range(1, h_bar + 1):
        L = build_lifted_matrices(rec, h)
        Bd_h = lifted_bd(Bd, h)
        mult = lift.multiplier(h)
        Theta = least_squares_model(L.Xhp, L.Xh, L.Uh)
        T = block_diag(np.eye(n), lifted_congruence(Theta, beta)).const
        KG = bmat([[F]] * h) if design_mode else (stack_gain(K, h) @ G[h - 1])
        p.pd((G[h - 1] + G[h - 1].T - S[h - 1]).sym(), f"GGS{h}")
        for j in range(1, h_bar + 1):
            P, w = system_multiplier(p, f"p{h},{j}", mult, L.Xhp, L.Xh, L.Uh, Bd_h, kappa)
            weights[(h, j)] = w
            blk = grid_block(S[h - 1], G[h - 1], S[j - 1], KG, h * m, n, P)
            p.pd(blk.sym().congruence(T), f"grid{h},{j}")
    for h in range(1, h_bar + 1):
        p.pd(S[h - 1], f"S{h}>0")
        p.nsd(S[h - 1] - np.eye(n), f"S{h}<=I", counted=False)
    p.info.update(S=S, G=G, w=weights, kappa=kappa)
    if design_mode:
        p.info["F"] = F
    return p


def _prepare(rec, Bd, d_bar, h_bar, mult_kind, lift, opts):
    if h_bar < 1:
        raise InputError("h_bar must be positive")
    if h_bar > rec.N:
        raise InputError(f"h_bar={h_bar} exceeds the data length N={rec.N}")
    return run_algorithm1(rec, Bd, d_bar, h_bar, mult_kind, lift, opts)


def analyze(rec: DataRecord, Bd, d_bar: float, ctrl: Controller, h_bar: int, mult_kind: str = "diagonal",
            lift: Optional[LiftedParametrization] = None, opts: SolveOptions | None = None,
            beta: float = BETA, kappa: float = KAPPA) -> Optional[SwitchedCertificate]:
    Bd = np.asarray(Bd, float)
    K = np.atleast_2d(ctrl.K)
    if K.shape != (rec.m, rec.n):
        raise InputError(f"K has shape {K.shape}, expected {(rec.m, rec.n)}")
    lift = _prepare(rec, Bd, d_bar, h_bar, mult_kind, lift, opts)
    p = build_grid_lmi(rec, Bd, lift, h_bar, K, beta, kappa)
    out = solve(p, opts)
    if out.status == "numerical_failure":
        log.warning("switched analysis at h=%d: numerical failure, treated as not certified", h_bar)
    if not out.feasible:
        return None
    return _certificate(p, out, h_bar, K=K)


def design(rec: DataRecord, Bd, d_bar: float, h_bar: int, mult_kind: str = "diagonal",
           lift: Optional[LiftedParametrization] = None, opts: SolveOptions | None = None,
           beta: float = BETA, kappa: float = KAPPA):
    """Common G and K = F G^{-1}; returns (Controller, certificate) or None."""
    Bd = np.asarray(Bd, float)
    lift = _prepare(rec, Bd, d_bar, h_bar, mult_kind, lift, opts)
    p = build_grid_lmi(rec, Bd, lift, h_bar, None, beta, kappa)
    out = solve(p, opts)
    if not out.feasible:
        return None
    F = out.value(p.info["F"])
    G = out.value(p.info["G"][0])
    if np.linalg.cond(G) > COND_MAX:
        log.warning("switched design at h=%d: ill-conditioned G, rejected", h_bar)
        return None
    K = np.linalg.solve(G.T, F.T).T
    cert = _certificate(p, out, h_bar, K=K)
    cert.F = F
    return Controller(K), cert


def _certificate(p, out, h_bar, K) -> SwitchedCertificate:
    kappa = p.info["kappa"]
    S = [out.value(s) for s in p.info["S"]]
    G = [out.value(g) for g in p.info["G"]]
    for h in range(h_bar):
        D = G[h] + G[h].T - S[h]
        if np.linalg.cond(D) > COND_MAX:
            log.warning("G+G^T-S ill-conditioned at h=%d; certificate rejected", h + 1)
            return None
    w = {key: kappa * out.value(v).ravel() for key, v in p.info["w"].items()}
    stats = {"n_vars": p.n_scalar_variables, "n_constraints": p.n_constraints,
             "solve_time": out.solve_time, "status": out.status, "margin": out.margin}
    return SwitchedCertificate(h_bar, S, G, float(out.margin), K=np.array(K), weights=w, stats=stats)


# model-based baseline ------------------------------------------------------------------

@dataclass
class SwitchedModelResult:
    feasible: bool
    S: Optional[list]
    G: Optional[list]
    margin: Optional[float]
    status: str
    stats: dict = field(default_factory=dict)


def switched_lyapunov_block(S_h, G_h, S_j, Phi_h):
    """[[G + G^T - S_h, (Phi G)^T], [Phi G, S_j]]."""
    PG = Phi_h @ G_h
    return bmat([[G_h + G_h.T - S_h, PG.T], [PG, S_j]])


def build_model_based_lmi(plant: LinearPlant, ctrl: Controller, h_bar: int) -> LmiProblem:
    ctrl.check(plant)
    n = plant.n
    p = LmiProblem(f"switched-model h={h_bar}")
    S = [p.symmetric(f"S{h}", n) for h in range(1, h_bar + 1)]
    G = [p.matrix(f"G{h}", n, n) for h in range(1, h_bar + 1)]
    for h in range(1, h_bar + 1):
        Phi = plant.transition(ctrl.K, h)
        # implied by the pair blocks; stated on its own to mirror the data-driven problem
        p.pd((G[h - 1] + G[h - 1].T - S[h - 1]).sym(), f"GGS{h}")
        for j in range(1, h_bar + 1):
            p.pd(switched_lyapunov_block(S[h - 1], G[h - 1], S[j - 1], Phi).sym(), f"pair{h},{j}")
    for h in range(h_bar):
        p.pd(S[h], f"S{h + 1}>0")
        p.nsd(S[h] - np.eye(n), f"S{h + 1}<=I", counted=False)
    p.info.update(S=S, G=G)
    return p


def model_based_analyze(plant: LinearPlant, ctrl: Controller, h_bar: int,
                        opts: SolveOptions | None = None) -> SwitchedModelResult:
    p = build_model_based_lmi(plant, ctrl, h_bar)
    out = solve(p, opts)
    stats = {"n_vars": p.n_scalar_variables, "n_constraints": p.n_constraints,
             "solve_time": out.solve_time, "status": out.status, "margin": out.margin}
    if not out.feasible:
        return SwitchedModelResult(False, None, None, out.margin, out.status, stats)
    return SwitchedModelResult(True, [out.value(s) for s in p.info["S"]], [out.value(g) for g in p.info["G"]],
                               out.margin, out.status, stats)
