import numpy as np
import pytest
from scipy import sparse

from graphfield.assembly import operator_matrix
from graphfield.cholesky import NotSPDError, SparseCholesky
from graphfield.graph import tadpole_graph
from graphfield.mesh import build_mesh


@pytest.fixture
def operator():
    mesh = build_mesh(tadpole_graph(), 0.05)
    L, c = operator_matrix(mesh, 2.0)
    return L


def test_solve_matches_dense(operator):
    rng = np.random.default_rng(0)
    F = SparseCholesky(operator)
    b = rng.standard_normal(operator.shape[0])
    x = F.solve(b)
    assert np.allclose(operator @ x, b, atol=1e-10)
    B = rng.standard_normal((operator.shape[0], 4))
    assert np.allclose(operator @ F.solve(B), B, atol=1e-10)


def test_logdet(operator):
    F = SparseCholesky(operator)
    _, ld = np.linalg.slogdet(operator.toarray())
    assert F.logdet() == pytest.approx(ld, rel=1e-12)


def test_selected_inverse_diag(operator):
    F = SparseCholesky(operator)
    dense = np.diag(np.linalg.inv(operator.toarray()))
    assert np.abs(F.selected_inverse_diag() - dense).max() < 1e-12


def test_selected_inverse_matches_dense_on_pattern():
    rng = np.random.default_rng(2)
    A = sparse.random(50, 50, density=0.08, random_state=rng)
    A = sparse.csr_matrix(A + A.T + 30 * sparse.eye(50))
    F = SparseCholesky(A)
    Z = F.selected_inverse()
    inv = np.linalg.inv(A.toarray())[F.perm][:, F.perm]
    L = sparse.csc_matrix((F.Lx, F.Li, F.Lp), shape=(50, 50))
    pattern = (abs(L) + abs(L.T)).toarray() > 0
    np.fill_diagonal(pattern, True)
    assert np.abs((Z - inv)[pattern]).max() < 1e-12


def test_inverse_entries_with_forced_pattern(operator):
    n = operator.shape[0]
    rows = np.array([0, 1, 2])
    cols = np.array([n - 1, n - 2, n - 3])
    F = SparseCholesky(operator, extra_pattern=(rows, cols))
    inv = np.linalg.inv(operator.toarray())
    got = F.inverse_entries(rows, cols)
    assert np.allclose(got, inv[rows, cols], atol=1e-13)


def test_not_spd_raises():
    A = sparse.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(NotSPDError):
        SparseCholesky(A)


def test_sampling_backsolve_covariance():
    rng = np.random.default_rng(4)
    M = rng.standard_normal((6, 6))
    A = sparse.csr_matrix(M @ M.T + 6 * np.eye(6))
    F = SparseCholesky(A)
    Z = rng.standard_normal((6, 400_000))
    X = F.sample_backsolve(Z)
    emp = X @ X.T / Z.shape[1]
    assert np.abs(emp - np.linalg.inv(A.toarray())).max() < 5e-3


def test_natural_ordering():
    A = sparse.diags([2.0] * 5) + sparse.diags([-0.9] * 4, 1) + sparse.diags([-0.9] * 4, -1)
    F = SparseCholesky(sparse.csr_matrix(A), order="natural")
    assert np.array_equal(F.perm, np.arange(5))
    assert np.allclose(F.solve(np.ones(5)), np.linalg.solve(A.toarray(), np.ones(5)))
