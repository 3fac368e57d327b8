import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st
from scipy import sparse

from haarwave.krylov import (METHODS, BreakdownError, ConvergenceError, ILUFactorizationError,
                             LinearSolver, LinearSystem, SolverConfig, apply_preconditioned,
                             ilu0_factor, relative_residual, solve, to_storage)

KRYLOV = ("gmres", "cgs", "bicg", "bicgstab")


def diag_dominant(n, seed, symmetric=False):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1, 1, (n, n))
    if symmetric:
        A = 0.5 * (A + A.T)
    A += np.diag(np.abs(A).sum(axis=1) + 1.0)
    return A, rng.uniform(-1, 1, n)


def laplacian(n):
    return sparse.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).toarray()


@pytest.mark.parametrize("method", METHODS)
def test_identity(method):
    b = np.arange(1.0, 6.0)
    rep = solve(LinearSystem(np.eye(5), b), SolverConfig(method=method, preconditioner="none"))
    assert np.allclose(rep.x, b)
    assert rep.iterations <= 1


@pytest.mark.parametrize("method", METHODS)
@pytest.mark.parametrize("pc", ["none", "ilu0"])
def test_two_by_two(method, pc):
    rep = solve(LinearSystem(np.array([[4.0, 1.0], [1.0, 3.0]]), np.array([1.0, 2.0])),
                SolverConfig(method=method, preconditioner=pc, tol=1e-12))
    assert np.allclose(rep.x, [1 / 11, 7 / 11], atol=1e-12)
    assert rep.iterations <= 2


def test_methods_agree_on_spd_system():
    A, b = diag_dominant(50, 0, symmetric=True)
    xs = [solve(LinearSystem(A, b), SolverConfig(method=m, preconditioner="none", tol=1e-12)).x
          for m in KRYLOV]
    for x in xs[1:]:
        assert np.max(np.abs(x - xs[0])) < 1e-8


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 64), st.integers(0, 10_000), st.sampled_from(KRYLOV),
       st.sampled_from(["none", "ilu0"]))
def test_krylov_matches_dense_lu(n, seed, method, pc):
    A, b = diag_dominant(n, seed)
    cfg = SolverConfig(method=method, preconditioner=pc, tol=1e-10)
    rep = solve(LinearSystem(A, b), cfg)
    assert np.max(np.abs(rep.x - sla.lu_solve(sla.lu_factor(A), b))) < 1e-7
    # residual contract: the reported residual is recomputed
    res = relative_residual(A, rep.x, b)
    assert res <= cfg.tol * (1 + 1e-12)
    assert abs(res - rep.final_residual) < 1e-10


def test_ilu_diagonal():
    A = np.diag([2.0, 3.0, 5.0])
    L, U = ilu0_factor(A)
    assert np.allclose(L, np.eye(3))
    assert np.allclose(U, A)


def test_ilu_dense_equals_lu():
    A = np.array([[4.0, 1.0, 2.0], [1.0, 5.0, 1.0], [2.0, 1.0, 6.0]])
    L, U = ilu0_factor(A)
    P, L_ref, U_ref = sla.lu(A)
    assert np.allclose(P, np.eye(3))  # no pivoting needed for this matrix
    assert np.allclose(L, L_ref) and np.allclose(U, U_ref)


@pytest.mark.parametrize("as_sparse", [False, True])
def test_ilu_tridiagonal_pattern(as_sparse):
    A = laplacian(8)
    L, U = ilu0_factor(sparse.csr_matrix(A) if as_sparse else A)
    LU = (L @ U).toarray() if sparse.issparse(L) else L @ U
    mask = A != 0
    assert np.allclose((LU - A)[mask], 0.0, atol=1e-13)


def test_ilu_sparse_equals_dense_on_random_pattern():
    A = sparse.random(40, 40, density=0.1, random_state=4).toarray()
    A += np.diag(np.abs(A).sum(axis=1) + 1.0)
    Ld, Ud = ilu0_factor(A)
    Ls, Us = ilu0_factor(sparse.csr_matrix(A))
    assert np.allclose(Ld, Ls.toarray()) and np.allclose(Ud, Us.toarray())


def test_ilu_zero_pivot_names_row():
    A = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]])
    with pytest.raises(ILUFactorizationError) as exc:
        ilu0_factor(A)
    assert exc.value.row == 1


def test_apply_preconditioned():
    A, _ = diag_dominant(6, 1)
    v = np.arange(6.0)
    ident = lambda x: x  # noqa: E731
    assert np.allclose(apply_preconditioned(A, ident, v), A @ v)
    assert np.allclose(apply_preconditioned(np.eye(6), ident, v), v)
    assert np.allclose(apply_preconditioned(A, ident, np.zeros(6)), 0.0)


def test_zero_rhs_and_warm_start():
    A, b = diag_dominant(10, 2)
    s = LinearSolver(A, SolverConfig())
    assert s.solve(np.zeros(10)).iterations == 0
    x = s.solve(b).x
    assert s.solve(b, x0=x).iterations == 0


def test_convergence_error_carries_best_iterate():
    A, b = diag_dominant(30, 5)
    A[np.arange(30), np.arange(30)] *= np.linspace(1e-6, 1e3, 30)
    with pytest.raises(ConvergenceError) as exc:
        solve(LinearSystem(A, b), SolverConfig(method="gmres", preconditioner="none", max_iter=3,
                                                 restart=2, tol=1e-14))
    err = exc.value
    assert err.iterations == 3 and err.x is not None and np.isfinite(err.residual)


def test_bicg_breakdown_reported():
    # skew matrix: the shadow residual is orthogonal to A p at the first step
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    b = np.array([1.0, 0.0])
    with pytest.raises((BreakdownError, ConvergenceError)) as exc:
        solve(LinearSystem(A, b), SolverConfig(method="bicg", preconditioner="none"))
    assert exc.value.iterations >= 0


def test_system_validation():
    with pytest.raises(ValueError):
        LinearSystem(np.ones((2, 3)), np.ones(2))
    with pytest.raises(ValueError):
        LinearSystem(np.eye(2), np.ones(3))
    with pytest.raises(ValueError):
        LinearSystem(np.array([[1.0, np.nan], [0.0, 1.0]]), np.ones(2))
    with pytest.raises(ValueError):
        SolverConfig(method="jacobi")
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iter=0)


def test_storage_switch():
    assert isinstance(to_storage(sparse.identity(8)), np.ndarray)
    assert sparse.issparse(to_storage(sparse.identity(5000)))


@pytest.mark.parametrize("method", KRYLOV)
def test_sparse_path(method):
    n = 200
    A = sparse.csr_matrix(laplacian(n) + np.eye(n))
    b = np.ones(n)
    rep = solve(LinearSystem(A, b), SolverConfig(method=method, tol=1e-10))
    ref = sparse.linalg.spsolve(A.tocsc(), b)
    assert np.max(np.abs(rep.x - ref)) < 1e-7
