import numpy as np
import pytest
import scipy.sparse as sp

from oseenlg.assembly import assemble_stiffness
from oseenlg.errors import SolverConvergenceError
from oseenlg.fe_space import build_space, dof_integrals
from oseenlg.linalg import CgResult, DeflationVector, SparseSym, cg_solve
from oseenlg.mesh import build_unit_square_mesh


def test_identity_one_iteration():
    A = SparseSym(sp.eye(5, format="csr"))
    b = np.array([3.0, -1.0, 0.5, 2.0, 7.0])
    res = cg_solve(A, b, tol=1e-12)
    assert np.allclose(res.x, b, atol=1e-14)
    assert res.iterations == 1


def test_hand_solved_2x2():
    A = SparseSym(np.array([[4.0, 1.0], [1.0, 3.0]]))
    res = cg_solve(A, np.array([1.0, 2.0]), tol=1e-14)
    assert np.allclose(res.x, [1.0 / 11.0, 7.0 / 11.0], atol=1e-12)


def test_zero_rhs_returns_zero():
    A = SparseSym(np.array([[4.0, 1.0], [1.0, 3.0]]))
    res = cg_solve(A, np.zeros(2))
    assert np.array_equal(res.x, np.zeros(2))
    assert res.iterations == 0


def test_deflated_neumann_solve():
    mesh = build_unit_square_mesh(2)
    space = build_space(mesh, 1, "zero_mean")
    A = assemble_stiffness(space)
    m = dof_integrals(space)
    rng = np.random.default_rng(5)
    y = rng.standard_normal(space.n_dofs)
    y -= (m @ y) / m.sum()          # zero-mean reference solution
    b = A.matvec(y)
    res = cg_solve(A, b, tol=1e-13, deflate=DeflationVector(m))
    assert np.abs(res.x - y).max() < 1e-8
    assert abs(m @ res.x) <= 1e-10 * np.linalg.norm(res.x)


def test_deflation_vector_validates_total():
    with pytest.raises(ValueError):
        DeflationVector(np.array([0.5, 0.1]))  # sums to 0.6, not the domain area


def test_nonconvergence_carries_history():
    mesh = build_unit_square_mesh(8)
    space = build_space(mesh, 1, "zero_boundary")
    A = assemble_stiffness(space)
    free = space.free_dofs
    Aff = SparseSym(A.csr[free][:, free])
    b = np.ones(Aff.n)
    with pytest.raises(SolverConvergenceError) as err:
        cg_solve(Aff, b, tol=1e-14, max_iter=2, precond="none")
    assert len(err.value.residual_history) > 0


def test_symmetry_assertion():
    bad = np.array([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        SparseSym(bad)
    with pytest.raises(ValueError):
        SparseSym(np.ones((2, 3)))


def test_energy_monotone_in_debug_mode():
    rng = np.random.default_rng(17)
    G = rng.standard_normal((30, 30))
    A = SparseSym(G @ G.T + 30 * np.eye(30))
    b = rng.standard_normal(30)
    res = cg_solve(A, b, tol=1e-12, debug=True)
    h = np.array(res.energy_history)
    assert len(h) == res.iterations  # one entry per iteration, none for x0 = 0
    assert h[0] < 0.0  # first iterate already below the zero start
    assert (np.diff(h) <= 1e-10 * (1 + np.abs(h[:-1]))).all()


def test_determinism():
    rng = np.random.default_rng(23)
    G = rng.standard_normal((40, 40))
    A = SparseSym(G @ G.T + 40 * np.eye(40))
    b = rng.standard_normal(40)
    x1 = cg_solve(A, b, tol=1e-11).x
    x2 = cg_solve(A, b, tol=1e-11).x
    assert np.array_equal(x1, x2)


def test_jacobi_beats_plain_cg_on_scaled_system():
    # badly scaled diagonal: Jacobi should cut the iteration count
    n = 60
    diag = np.logspace(0, 4, n)
    A = SparseSym(sp.diags(diag).tocsr())
    b = np.ones(n)
    plain = cg_solve(A, b, tol=1e-10, precond="none")
    jac = cg_solve(A, b, tol=1e-10, precond="jacobi")
    assert jac.iterations <= 2
    assert jac.iterations < plain.iterations


def test_dump_coordinate_format(tmp_path):
    A = SparseSym(np.array([[2.0, -1.0], [-1.0, 2.0]]))
    path = tmp_path / "mat.txt"
    A.dump(path)
    entries = {}
    for line in path.read_text().splitlines():
        i, j, v = line.split()
        entries[(int(i), int(j))] = float(v)
    assert entries[(0, 0)] == 2.0
    assert entries[(0, 1)] == -1.0
    assert len(entries) == 4


def test_result_reports_true_residual():
    rng = np.random.default_rng(2)
    G = rng.standard_normal((25, 25))
    A = SparseSym(G @ G.T + 25 * np.eye(25))
    b = rng.standard_normal(25)
    res = cg_solve(A, b, tol=1e-10)
    true = np.linalg.norm(b - A.matvec(res.x)) / np.linalg.norm(b)
    assert isinstance(res, CgResult)
    assert res.relative_residual <= 1e-10
    assert abs(res.relative_residual - true) < 1e-12
