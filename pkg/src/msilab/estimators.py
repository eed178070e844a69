"""scikit-learn style wrappers around the MSI search.

``fit`` takes one trajectory and runs the search; ``predict`` maps gains to
their certified MSI on the fitted data. The wrappers hold no state beyond the
data and the last report, so they clone and grid-search like any estimator.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import Controller, DataRecord, InputError
from .harness import make_engine, search_msi
from .sdp import SolveOptions


def check_trajectory(X, y=None, d_bar: float = 0.0) -> DataRecord:
    """Accept a DataRecord, or states (N+1, n) with inputs (N, m) as ``y``."""
    if isinstance(X, DataRecord):
        return X
    if y is None:
        raise InputError("inputs y are required when X is a state array")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InputError("trajectory contains NaN or inf")
    return DataRecord(X, y, d_bar=d_bar)


def check_gain(K, n: int, m: int) -> Controller:
    ctrl = K if isinstance(K, Controller) else Controller(np.asarray(K, dtype=float))
    if ctrl.K.shape != (m, n):
        raise InputError(f"gain has shape {ctrl.K.shape}, expected {(m, n)}")
    return ctrl


class MsiEstimator(BaseEstimator):
    """Certified MSI of a given gain (``mode='analyze'``) or of a designed gain."""

    def __init__(self, Bd=None, d_bar=0.0, method="io", mode="analyze", K=None, multiplier="diagonal",
                 h_cap=30, strategy="exponential", backend="clarabel"):
        self.Bd = Bd
        self.d_bar = d_bar
        self.method = method
        self.mode = mode
        self.K = K
        self.multiplier = multiplier
        self.h_cap = h_cap
        self.strategy = strategy
        self.backend = backend

    def _engine(self, rec, K):
        if self.Bd is None:
            raise InputError("Bd is required")
        return make_engine(self.method, self.mode, rec=rec, Bd=self.Bd, d_bar=self.d_bar, ctrl=K,
                           mult_kind=self.multiplier, opts=SolveOptions(backend=self.backend))

    def fit(self, X, y=None):
        rec = check_trajectory(X, y, self.d_bar)
        K = None if self.K is None else check_gain(self.K, rec.n, rec.m)
        self.report_ = search_msi(self._engine(rec, K), min(self.h_cap, rec.N), self.strategy)
        self.data_ = rec
        self.h_msi_ = self.report_.h_msi
        self.gain_ = None if self.report_.K is None else np.array(self.report_.K)
        return self

    def predict(self, gains) -> np.ndarray:
        """Certified MSI of each gain in ``gains`` on the fitted data."""
        check_is_fitted(self, "data_")
        rec = self.data_
        out = []
        for K in gains:
            eng = make_engine(self.method, "analyze", rec=rec, Bd=self.Bd, d_bar=self.d_bar,
                              ctrl=check_gain(K, rec.n, rec.m), mult_kind=self.multiplier,
                              opts=SolveOptions(backend=self.backend))
            out.append(search_msi(eng, min(self.h_cap, rec.N), self.strategy).h_msi)
        return np.array(out, dtype=int)

    def score(self, X=None, y=None) -> float:
        check_is_fitted(self, "h_msi_")
        return float(self.h_msi_)
