"""Problem -> canonical conic data -> backend -> independent re-verification."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .backends import ConeDims, get_backend, svec_operator
from .expr import _pad
from .problem import EQ, LmiProblem, SolveOutcome

log = logging.getLogger(__name__)

POST_TOL = 1e-7
INFEAS_TOL = 1e-7


@dataclass
class SolveOptions:
    backend: str = "clarabel"
    mode: str = "auto"  # auto | margin | fixed
    t_cap: float = 1.0
    post_tol: float = POST_TOL
    infeas_tol: float = INFEAS_TOL
    settings: dict | None = None
    trace: list | None = None  # when set, solve() appends a summary of every call


def _canonical(p: LmiProblem, tri_order: str, margin: bool, t_cap: float):
    nx = p.nvars + (1 if margin else 0)
    it = p.nvars  # index of the margin variable t
    c = np.zeros(nx)
    if margin:
        c[it] = -1.0
    elif p.objective is not None:
        c[: p.objective.nx] = p.objective.coef.toarray().ravel()

    zA, zb, lA, lb, sA, sb, psd = [], [], [], [], [], [], []
    for con in p.constraints:
        e = con.oriented()
        coef = _pad(e.coef, nx)
        if con.kind == EQ:
            zA.append(coef)
            zb.append(-e.const.ravel())
            continue
        k = e.shape[0]
        S = svec_operator(k, tri_order)
        eye = S @ np.eye(k).ravel()
        const = e.const.ravel()
        A = -(S @ coef)
        b = S @ const
        if con.strict:
            if margin:
                A = A + sp.csr_matrix((eye, (np.arange(k * (k + 1) // 2), np.full(eye.size, it))), shape=A.shape)
            else:
                b = b - 2.0 * con.eps * eye
        sA.append(A)
        sb.append(b)
        psd.append(k)
    for v in p.variables:
        if v.nonneg:
            idx = v.offset + np.arange(v.size)
            lA.append(sp.csr_matrix((-np.ones(v.size), (np.arange(v.size), idx)), shape=(v.size, nx)))
            lb.append(np.zeros(v.size))
    if margin:
        lA.append(sp.csr_matrix(([1.0], ([0], [it])), shape=(1, nx)))
        lb.append(np.array([t_cap]))
    blocks = zA + lA + sA
    A = sp.vstack(blocks, format="csc") if blocks else sp.csc_matrix((0, nx))
    b = np.concatenate(zb + lb + sb) if blocks else np.zeros(0)
    dims = ConeDims(sum(x.shape[0] for x in zA), sum(x.shape[0] for x in lA), psd)
    return c, A, b, dims


def verify(p: LmiProblem, x: np.ndarray, post_tol: float = POST_TOL):
    """Return (ok, margin, max_violation, min_eigs) at assignment x, by dense eigenvalues."""
    ok = True
    margin = np.inf
    viol = 0.0
    eigs = {}
    for con in p.constraints:
        F = con.oriented().value(x)
        scale = max(1.0, float(np.abs(F).max(initial=0.0)))
        if con.kind == EQ:
            err = float(np.abs(F).max(initial=0.0))
            viol = max(viol, err)
            ok &= err <= post_tol * scale
            continue
        lam = float(np.linalg.eigvalsh(0.5 * (F + F.T))[0])
        eigs[con.name] = lam
        if con.strict:
            margin = min(margin, lam)
            viol = max(viol, con.eps - lam)
            ok &= lam >= con.eps
        else:
            viol = max(viol, -lam)
            ok &= lam >= -post_tol * scale
    for v in p.variables:
        if v.nonneg:
            lo = float(x[v.offset:v.offset + v.size].min())
            viol = max(viol, -lo)
            ok &= lo >= -post_tol
    return bool(ok), (None if margin == np.inf else float(margin)), max(0.0, float(viol)), eigs


def solve(p: LmiProblem, opts: SolveOptions | None = None, **kw) -> SolveOutcome:
    opts = opts or SolveOptions(**kw)
    out = _solve(p, opts)
    if opts.trace is not None:
        nv, nc = p.table_counts()
        opts.trace.append({"problem": p.name, "status": out.status, "solve_time": out.solve_time,
                           "n_vars": p.n_scalar_variables, "n_constraints": p.n_constraints,
                           "table_vars": nv, "table_constraints": nc, "margin": out.margin})
    return out


def _solve(p: LmiProblem, opts: SolveOptions) -> SolveOutcome:
    """Solve and independently re-verify.

    Without an objective, strict constraints are handled by maximizing a common
    margin t (capped at ``t_cap``); the problem is feasible iff the verified
    margin reaches each constraint's eps. With an objective, strict constraints
    are shifted by 2*eps and re-verified at eps.
    """
    backend = get_backend(opts.backend, **(opts.settings or {}))
    if p.nvars == 0:
        # nothing to optimize: the verdict is the eigenvalue check itself
        x = np.zeros(0)
        ok, margin, viol, eigs = verify(p, x, opts.post_tol)
        return SolveOutcome("feasible" if ok else "infeasible", x, viol, 0.0, backend.name, "constant", margin, None, eigs)
    has_strict = any(c.strict for c in p.constraints)
    margin_mode = opts.mode == "margin" or (opts.mode == "auto" and p.objective is None and has_strict)
    c, A, b, dims = _canonical(p, backend.tri_order, margin_mode, opts.t_cap)

    t0 = time.perf_counter()
    try:
        res = backend.solve(c, A, b, dims)
    except Exception as exc:  # backend crashes are numerical failures, never certificates
        log.warning("backend %s raised %s on %s", backend.name, exc, p.name)
        return SolveOutcome("numerical_failure", None, np.inf, time.perf_counter() - t0, backend.name, repr(exc))
    elapsed = time.perf_counter() - t0

    if res.x is None:
        status = "infeasible" if res.status == "infeasible" else "numerical_failure"
        if status == "numerical_failure":
            log.warning("backend %s returned %s on %s", backend.name, res.raw_status, p.name)
        return SolveOutcome(status, None, np.inf, elapsed, backend.name, res.raw_status)

    x = res.x[: p.nvars]
    ok, margin, viol, eigs = verify(p, x, opts.post_tol)
    obj = float(p.objective.value(x)[0, 0]) if p.objective is not None else None
    if ok:
        status = "feasible"
    elif res.status == "infeasible":
        status = "infeasible"
    elif res.status in ("solved", "almost_solved") and margin_mode:
        # optimal margin does not reach eps: infeasible unless the non-strict part broke down
        nonstrict_ok, _, _, _ = verify(_without_strict(p), x, opts.post_tol)
        status = "infeasible" if nonstrict_ok else "numerical_failure"
    elif res.status == "solved" and viol > opts.infeas_tol:
        status = "infeasible"
    else:
        status = "numerical_failure"
    if status == "numerical_failure":
        log.warning("unverified solution on %s (backend %s, violation %.2e)", p.name, res.raw_status, viol)
    return SolveOutcome(status, x, viol, elapsed, backend.name, res.raw_status, margin, obj, eigs)


def _without_strict(p: LmiProblem) -> LmiProblem:
    q = LmiProblem(p.name, p.eps, p.scale)
    q.variables, q.nvars = p.variables, p.nvars
    q.constraints = [c for c in p.constraints if not c.strict]
    return q
