"""Experiment data, aperiodically sampled closed-loop simulation and MSI falsification."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Controller, DataRecord, InputError, LinearPlant, SamplingSchedule

EIG_TOL = 1e-9
DEFAULT_DEPTH = 6
CHUNK = 2 ** 16  # products held in memory per expansion step
NORM_BISECTIONS = 30


@dataclass(frozen=True)
class NoiseSpec:
    d_bar: float = 0.0
    law: str = "uniform_box"
    seed: int = 0

    def __post_init__(self):
        if self.d_bar < 0:
            raise InputError("d_bar must be nonnegative")
        if self.law != "uniform_box":
            raise InputError(f"unsupported noise law {self.law!r}")


def generate_data(plant: LinearPlant, noise: NoiseSpec, N: int, input_range=(-1.0, 1.0), x0=None,
                  H_info: Optional[float] = None) -> DataRecord:
    """Simulate x(t+1) = A x + B u + Bd d with uniform inputs and box-bounded noise.

    Draw order from the seeded generator: x0 (when not given), inputs, disturbance.
    """
    if N < 1:
        raise InputError("N must be at least 1")
    lo, hi = map(float, input_range)
    rng = np.random.default_rng(noise.seed)
    if x0 is None:
        x0 = rng.uniform(-1.0, 1.0, plant.n)
    x0 = np.asarray(x0, dtype=float).reshape(plant.n)
    u = rng.uniform(lo, hi, (N, plant.m))
    d = rng.uniform(-noise.d_bar, noise.d_bar, (N, plant.n_d)) if noise.d_bar > 0 else np.zeros((N, plant.n_d))
    x = np.empty((N + 1, plant.n))
    x[0] = x0
    for t in range(N):
        x[t + 1] = plant.A @ x[t] + plant.B @ u[t] + plant.Bd @ d[t]
    return DataRecord(x, u, d_bar=noise.d_bar, seed=noise.seed, H_info=H_info, disturbance=d)


def simulate_closed_loop(plant: LinearPlant, ctrl: Controller, schedule: SamplingSchedule, x0, T: int) -> np.ndarray:
    """Zero-order hold of u(t_k) = K x(t_k); returns the (T+1, n) state trajectory."""
    ctrl.check(plant)
    if not schedule.covers(T):
        raise InputError("schedule does not cover the horizon")
    x = np.empty((T + 1, plant.n))
    x[0] = np.asarray(x0, dtype=float)
    t = 0
    for h in schedule.h_seq:
        u = ctrl.K @ x[t]
        for _ in range(h):
            if t >= T:
                return x
            x[t + 1] = plant.A @ x[t] + plant.B @ u
            t += 1
    return x


def transitions(plant: LinearPlant, K: np.ndarray, h_bar: int) -> list[np.ndarray]:
    """Phi_h = A^h + B^h K for h = 1..h_bar (index h-1)."""
    return [plant.transition(K, h) for h in range(1, h_bar + 1)]


@dataclass(frozen=True)
class FalsifierWitness:
    h_bar: int
    sequence: tuple[int, ...]
    product_spectral_radius: float

    def to_json(self) -> dict:
        return {"h_bar": self.h_bar, "sequence": list(self.sequence),
                "product_spectral_radius": self.product_spectral_radius}

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)


def _batch_rho(P: np.ndarray) -> np.ndarray:
    if P.shape[1] == 2:
        tr = P[:, 0, 0] + P[:, 1, 1]
        det = P[:, 0, 0] * P[:, 1, 1] - P[:, 0, 1] * P[:, 1, 0]
        disc = np.sqrt((0.25 * tr * tr - det).astype(complex))
        return np.maximum(np.abs(0.5 * tr + disc), np.abs(0.5 * tr - disc))
    return np.abs(np.linalg.eigvals(P)).max(axis=1)


def _contraction_norm(phis: np.ndarray) -> np.ndarray:
    """T such that max_i ||T Phi_i T^-1|| is close to its infimum over quadratic norms.

    Log-scale bisection on gamma for P > 0 with Phi_i^T P Phi_i <= gamma^2 P; T = chol(P)^T.
    Falls back to the identity when the solver gives nothing usable.
    """
    from .sdp import LmiProblem, solve

    n = phis.shape[1]
    lo = max(float(_batch_rho(phis).max()), 1e-12)
    hi = max(float(np.linalg.norm(phis, 2, axis=(1, 2)).max()), lo)
    best = np.eye(n)
    for _ in range(NORM_BISECTIONS):
        if hi / lo < 1.0 + 1e-3:
            break
        g = float(np.sqrt(lo * hi))
        p = LmiProblem("contraction norm")
        P = p.symmetric("P", n)
        p.pd(P, "P>0")
        p.nsd(P - np.eye(n), "P<=I")
        for i, F in enumerate(phis):
            p.nd((F.T @ P @ F - g * g * P).sym(), f"c{i}")
        out = solve(p)
        if out.feasible:
            try:
                best = np.linalg.cholesky(out.value(P)).T
                hi = g
                continue
            except np.linalg.LinAlgError:
                pass
        lo = g
    return best


def falsify_msi(plant: LinearPlant, ctrl: Controller, h_bar: int, max_depth: int = DEFAULT_DEPTH,
                eig_tol: float = EIG_TOL) -> Optional[FalsifierWitness]:
    """Exhaustive search for a switching sequence whose product has spectral radius >= 1.

    Sequences are visited by increasing length, then in lexicographic order with
    larger holds first. A product's spectral radius is invariant under cyclic
    rotation, so only sequences that start with their largest element are formed.
    Products are formed in a similarity-transformed basis T Phi T^-1 whose norm
    contracts as much as a quadratic norm allows; a prefix is dropped once its
    norm times the largest possible continuation norm falls below 1 - eig_tol,
    and when every single factor already contracts there is nothing to search.
    """
    if max_depth < 1:
        raise InputError("max_depth must be at least 1")
    ctrl.check(plant)
    phis0 = np.array(transitions(plant, ctrl.K, h_bar))
    thresh = 1.0 - eig_tol
    T = _contraction_norm(phis0)
    phis = T @ phis0 @ np.linalg.inv(T)
    norms = np.linalg.norm(phis, 2, axis=(1, 2))
    if norms.max() < thresh:
        return None

    for depth in range(1, max_depth + 1):
        for a in range(h_bar, 0, -1):
            hit = _search_rooted(phis, norms, a, depth, thresh)
            if hit is not None:
                return FalsifierWitness(h_bar, hit, witness_radius(plant, ctrl.K, hit))
    return None


def _search_rooted(phis, norms, a, depth, thresh):
    """First sequence of exactly `depth` entries, starting with a and with entries <= a, that
    reaches the threshold; prefixes are expanded depth-first in bounded chunks."""
    allowed = np.arange(a, 0, -1)  # descending holds
    c = float(norms[:a].max())
    k = len(allowed)
    step = max(1, CHUNK // k)

    def expand(P, seqs, level):
        if level == depth:
            rho = _batch_rho(P)
            idx = np.flatnonzero(rho >= thresh)
            return None if idx.size == 0 else tuple(int(s) for s in seqs[idx[0]])
        keep = np.linalg.norm(P, 2, axis=(1, 2)) * c ** (depth - level) >= thresh
        P, seqs = P[keep], seqs[keep]
        for i in range(0, len(P), step):
            Pc, sc = P[i:i + step], seqs[i:i + step]
            # children of each prefix in descending order of s: Phi_s @ P
            Q = np.einsum("sij,pjk->psik", phis[allowed - 1], Pc).reshape(-1, *Pc.shape[1:])
            sq = np.hstack([np.repeat(sc, k, axis=0), np.tile(allowed, len(sc))[:, None]])
            hit = expand(Q, sq, level + 1)
            if hit is not None:
                return hit
        return None

    return expand(phis[a - 1][None], np.array([[a]]), 1)


def witness_radius(plant: LinearPlant, K: np.ndarray, sequence) -> float:
    """Spectral radius of Phi_{s_L} ... Phi_{s_1}, recomputed from scratch."""
    P = np.eye(plant.n)
    for h in sequence:
        P = plant.transition(K, h) @ P
    return float(np.abs(np.linalg.eigvals(P)).max())
