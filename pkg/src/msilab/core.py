"""Shared domain types: plants, controllers, schedules, trajectories and data matrices.

Matrices follow the snapshot-per-column convention: column ``t`` of a data
matrix holds the measurement taken at time ``t``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

RANK_TOL = 1e-10


class InputError(ValueError):
    """Raised for malformed or dimensionally inconsistent inputs."""


def _as_matrix(a, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise InputError(f"{name} must be a matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def has_full_column_rank(M: np.ndarray, rank_tol: float = RANK_TOL) -> bool:
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return False
    return bool(s[-1] > rank_tol * s[0]) and M.shape[0] >= M.shape[1]


@dataclass(frozen=True)
class LinearPlant:
    """x(t+1) = A x(t) + B u(t) + Bd d(t)."""

    A: np.ndarray
    B: np.ndarray
    Bd: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        Bd = _as_matrix(self.Bd, "Bd")
        n = A.shape[0]
        if A.shape != (n, n):
            raise InputError(f"A must be square, got {A.shape}")
        if B.shape[0] != n or Bd.shape[0] != n:
            raise InputError("B and Bd must have as many rows as A")
        if not has_full_column_rank(Bd):
            raise InputError("Bd must have full column rank")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Bd", Bd)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def n_d(self) -> int:
        return self.Bd.shape[1]

    def lifted(self, h: int) -> tuple[np.ndarray, np.ndarray]:
        """Return A^h and the lifted input matrix [A^{h-1}B ... AB B]."""
        blocks = []
        P = np.eye(self.n)
        for _ in range(h):
            blocks.append(P @ self.B)
            P = self.A @ P
        return P, np.hstack(blocks[::-1])

    def transition(self, K: np.ndarray, h: int) -> np.ndarray:
        """Sampled closed-loop map over a hold of length h: A^h + sum_i A^i B K."""
        Ah, Bh = self.lifted(h)
        return Ah + Bh @ np.vstack([K] * h)

    def to_json(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "Bd": self.Bd.tolist(),
            "n": self.n,
            "m": self.m,
            "n_d": self.n_d,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LinearPlant":
        try:
            plant = cls(obj["A"], obj["B"], obj["Bd"])
        except KeyError as exc:
            raise InputError(f"plant JSON is missing field {exc}") from None
        for key, val in (("n", plant.n), ("m", plant.m), ("n_d", plant.n_d)):
            if key in obj and int(obj[key]) != val:
                raise InputError(f"plant JSON field {key}={obj[key]} disagrees with matrices ({val})")
        return plant


@dataclass(frozen=True)
class Controller:
    K: np.ndarray

    def __post_init__(self):
        K = np.array(self.K, dtype=float)
        if K.ndim == 1:
            K = K.reshape(1, -1)
        K.setflags(write=False)
        object.__setattr__(self, "K", K)

    def check(self, plant: LinearPlant) -> None:
        if self.K.shape != (plant.m, plant.n):
            raise InputError(f"K has shape {self.K.shape}, expected {(plant.m, plant.n)}")

    @classmethod
    def parse(cls, text: str, m: int = 1) -> "Controller":
        """Parse a comma separated gain, rows separated by ';'."""
        try:
            rows = [[float(v) for v in row.split(",")] for row in text.split(";") if row.strip()]
        except ValueError:
            raise InputError(f"cannot parse gain {text!r}") from None
        K = np.array(rows)
        if len(rows) == 1 and m > 1:
            K = K.reshape(m, -1)
        return cls(K)


@dataclass(frozen=True)
class SamplingSchedule:
    h_seq: tuple[int, ...]
    h_bar: int

    def __post_init__(self):
        seq = tuple(int(h) for h in self.h_seq)
        if self.h_bar < 1:
            raise InputError("h_bar must be positive")
        if any(h < 1 or h > self.h_bar for h in seq):
            raise InputError(f"sampling intervals must lie in [1, {self.h_bar}]")
        object.__setattr__(self, "h_seq", seq)

    @classmethod
    def random(cls, h_bar: int, horizon: int, rng: np.random.Generator) -> "SamplingSchedule":
        seq = []
        total = 0
        while total < horizon:
            h = int(rng.integers(1, h_bar + 1))
            seq.append(h)
            total += h
        return cls(tuple(seq), h_bar)

    @property
    def instants(self) -> np.ndarray:
        """t_0 = 0, t_{k+1} = t_k + h_k."""
        return np.concatenate([[0], np.cumsum(self.h_seq)]).astype(int)

    def covers(self, T: int) -> bool:
        return int(self.instants[-1]) >= T

    def delay(self, T: int) -> np.ndarray:
        """Sawtooth tau(t) = t - t_k for t = 0..T-1."""
        tau = np.empty(T, dtype=int)
        t = 0
        for h in self.h_seq:
            for i in range(h):
                if t >= T:
                    return tau
                tau[t] = i
                t += 1
        if t < T:
            raise InputError("schedule does not cover the horizon")
        return tau


@dataclass(frozen=True)
class DataRecord:
    """One measured trajectory: states x(0..N) and inputs u(0..N-1)."""

    states: np.ndarray  # (N+1, n)
    inputs: np.ndarray  # (N, m)
    d_bar: float = 0.0
    seed: int = 0
    H_info: Optional[float] = None
    disturbance: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        x = np.array(self.states, dtype=float)
        u = np.array(self.inputs, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if u.ndim == 1:
            u = u.reshape(-1, 1)
        if u.shape[0] < 1:
            raise InputError("need at least one input sample (N >= 1)")
        if x.shape[0] != u.shape[0] + 1:
            raise InputError(f"expected {u.shape[0] + 1} states for {u.shape[0]} inputs, got {x.shape[0]}")
        if self.d_bar < 0:
            raise InputError("d_bar must be nonnegative")
        x.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "inputs", u)

    @property
    def N(self) -> int:
        return self.inputs.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def m(self) -> int:
        return self.inputs.shape[1]

    def to_csv(self, path) -> None:
        n, m = self.n, self.m
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)])
            for t in range(self.N + 1):
                u = [repr(float(v)) for v in self.inputs[t]] if t < self.N else [""] * m
                w.writerow([t] + [repr(float(v)) for v in self.states[t]] + u)

    @classmethod
    def from_csv(cls, path, d_bar: float = 0.0, seed: int = 0) -> "DataRecord":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise InputError(f"{path}: empty trajectory file")
        header = rows[0]
        xcols = [i for i, name in enumerate(header) if name.startswith("x")]
        ucols = [i for i, name in enumerate(header) if name.startswith("u")]
        if not header or header[0] != "t" or not xcols or not ucols:
            raise InputError(f"{path}: header must be t,x1..xn,u1..um")
        body = rows[1:]
        try:
            x = [[float(r[i]) for i in xcols] for r in body]
            u = [[float(r[i]) for i in ucols] for r in body[:-1]]
        except (ValueError, IndexError):
            raise InputError(f"{path}: malformed numeric field") from None
        if any(r[i].strip() for r in body[-1:] for i in ucols):
            raise InputError(f"{path}: final row must have empty input fields")
        return cls(np.array(x), np.array(u).reshape(len(u), len(ucols)), d_bar=d_bar, seed=seed)


@dataclass(frozen=True)
class DataMatrices:
    Xp: np.ndarray
    X: np.ndarray
    U: np.ndarray

    @property
    def N(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class LiftedDataMatrices:
    h: int
    Xhp: np.ndarray
    Xh: np.ndarray
    Uh: np.ndarray

    @property
    def N_h(self) -> int:
        return self.Xh.shape[1]


def build_data_matrices(rec: DataRecord) -> DataMatrices:
    x = rec.states.T
    return DataMatrices(Xp=x[:, 1:].copy(), X=x[:, :-1].copy(), U=rec.inputs.T.copy())


def build_lifted_matrices(rec: DataRecord, h: int) -> LiftedDataMatrices:
    N = rec.N
    if h < 1:
        raise InputError("lift h must be positive")
    if h > N:
        raise InputError(f"insufficient data for lift h={h} (N={N})")
    x = rec.states.T
    u = rec.inputs.T
    Nh = N - h + 1
    Uh = np.vstack([u[:, i:i + Nh] for i in range(h)])
    return LiftedDataMatrices(h=h, Xhp=x[:, h:].copy(), Xh=x[:, :Nh].copy(), Uh=Uh)


def load_plant(path) -> LinearPlant:
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read plant JSON {path}: {exc}") from None
    return LinearPlant.from_json(obj)


def load_matrix(path) -> np.ndarray:
    """Read a matrix from JSON: either a bare nested list or an object with key 'Bd'."""
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read matrix JSON {path}: {exc}") from None
    if isinstance(obj, dict):
        obj = obj.get("Bd", obj.get("matrix"))
    return _as_matrix(obj, str(path))


def benchmark_plant() -> LinearPlant:
    """Discretized benchmark plant (H = 0.1 s) with disturbance on the first state."""
    return LinearPlant(
        A=[[1.0, 0.0995], [0.0, 0.9900]],
        B=[[0.0005], [0.0100]],
        Bd=[[0.01], [0.0]],
    )


BENCHMARK_GAIN = Controller(np.array([[-3.75, -11.5]]))


def stack_gain(K: np.ndarray, h: int) -> np.ndarray:
    return np.vstack([K] * h)


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if M.size else 0.0


def column_stack(vectors: Sequence[np.ndarray]) -> np.ndarray:
    return np.column_stack([np.asarray(v, dtype=float) for v in vectors])
