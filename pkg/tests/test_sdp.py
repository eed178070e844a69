import numpy as np
import pytest

from msilab.sdp import LmiProblem, SolveOptions, bmat, block_diag, solve, verify


def _lyapunov(A):
    n = A.shape[0]
    p = LmiProblem("lyap")
    P = p.symmetric("P", n)
    p.pd(P, "P>0")
    p.nd((A.T @ P @ A - P).sym(), "decrease")
    p.nsd(P - np.eye(n), "P<=I", counted=False)
    return p, P


@pytest.mark.parametrize("backend", ["clarabel", "scs"])
def test_lyapunov_feasibility_matches_spectral_radius(backend, rng):
    for _ in range(6):
        A = rng.standard_normal((3, 3))
        rho = np.abs(np.linalg.eigvals(A)).max()
        for target in (0.8, 1.2):
            As = A * target / rho
            p, P = _lyapunov(As)
            out = solve(p, SolveOptions(backend=backend, settings={"eps_abs": 1e-9, "eps_rel": 1e-9}
                                        if backend == "scs" else None))
            assert out.status != "numerical_failure" or backend == "scs"
            if out.status == "numerical_failure":
                continue
            assert out.feasible == (target < 1.0)
            if out.feasible:
                Pv = out.value(P)
                assert np.linalg.eigvalsh(Pv)[0] > 0
                assert np.linalg.eigvalsh(As.T @ Pv @ As - Pv)[-1] < 0


def test_certificates_are_reverified():
    p, P = _lyapunov(0.5 * np.eye(2))
    out = solve(p)
    assert out.feasible and out.margin >= p.eps
    ok, margin, viol, eigs = verify(p, out.x)
    assert ok and set(eigs) == {"P>0", "decrease", "P<=I"}
    ok, *_ = verify(p, np.zeros_like(out.x))
    assert not ok


def test_objective_mode():
    p = LmiProblem("trace")
    P = p.symmetric("P", 3)
    p.psd(P - np.eye(3))
    p.minimize(P.trace())
    out = solve(p)
    assert out.feasible and out.objective == pytest.approx(3.0, abs=1e-6)


def test_expression_algebra(rng):
    p = LmiProblem()
    X = p.matrix("X", 2, 3)
    S = p.symmetric("S", 2)
    x = rng.standard_normal(p.nvars)
    Xv, Sv = X.value(x), S.value(x)
    assert np.allclose(Sv, Sv.T)
    L = rng.standard_normal((4, 2))
    assert np.allclose((L @ X).value(x), L @ Xv)
    assert np.allclose(X.T.value(x), Xv.T)
    M = bmat([[S, X], [X.T, None]])
    assert M.shape == (5, 5)
    T = rng.standard_normal((5, 5))
    assert np.allclose(M.congruence(T).value(x), T.T @ M.value(x) @ T, atol=1e-12)
    assert np.allclose(block_diag(S, -S).value(x), np.block([[Sv, 0 * Sv], [0 * Sv, -Sv]]))
    assert (2.0 * S - S).value(x) == pytest.approx(Sv)
    assert S.trace().value(x)[0, 0] == pytest.approx(np.trace(Sv))


def test_constraint_validation():
    p = LmiProblem()
    X = p.matrix("X", 2, 2)
    with pytest.raises(ValueError, match="not symmetric"):
        p.pd(X)
    with pytest.raises(ValueError, match="not square"):
        p.pd(p.matrix("Y", 2, 3))
    with pytest.raises(ValueError, match="duplicate"):
        p.symmetric("X", 2)
    with pytest.raises(ValueError):
        p.add(X + X.T, "bogus")


def test_counts_skip_normalizations():
    p, _ = _lyapunov(0.5 * np.eye(2))
    assert p.n_scalar_variables == 3 and p.n_constraints == 3
    assert p.table_counts() == (4, 2)
    q = LmiProblem()
    q.vector("w", 5, nonneg=True)
    assert q.table_counts() == (5, 5)


def test_constant_problem():
    p = LmiProblem()
    p.pd(bmat([[np.eye(2)]]), "I>0")
    assert solve(p).feasible
    q = LmiProblem()
    q.pd(bmat([[-np.eye(2)]]), "-I>0")
    assert not solve(q).feasible


def test_trace_records_solves():
    trace = []
    p, _ = _lyapunov(0.5 * np.eye(2))
    solve(p, SolveOptions(trace=trace))
    assert trace[0]["status"] == "feasible" and trace[0]["table_vars"] == 4
