import numpy as np
import pytest

from oseenlg.assembly import LoadAssembler, triangle_rule
from oseenlg.fe_space import (ScalarSpace, build_space, dof_integrals,
                              eval_basis, evaluate_scalar, interpolate_vector,
                              lagrange_interpolate, physical_points,
                              scaled_weights, shape_values)
from oseenlg.mesh import build_unit_square_mesh


def test_dimensions_p1_p2():
    mesh = build_unit_square_mesh(2)
    s1 = build_space(mesh, 1)
    assert s1.n_dofs == 9
    assert len(s1.boundary_dofs) == 8
    s2 = build_space(mesh, 2)
    assert s2.n_dofs == 25  # (2N+1)^2


@pytest.mark.parametrize("N", [1, 3, 7])
def test_p2_dimension_formula(N):
    mesh = build_unit_square_mesh(N)
    assert build_space(mesh, 2).n_dofs == (2 * N + 1) ** 2


def test_degenerate_n1_zero_boundary():
    # N=1 has no interior vertex; the space builds with zero free DOFs
    mesh = build_unit_square_mesh(1)
    space = build_space(mesh, 1, "zero_boundary")
    assert space.n_dofs == 4
    assert len(space.free_dofs) == 0


def test_unsupported_degree():
    mesh = build_unit_square_mesh(2)
    with pytest.raises(ValueError):
        build_space(mesh, 3)


def test_nodal_basis_property():
    mesh = build_unit_square_mesh(2)
    nodes = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0],
                      [0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])
    for degree, nb in ((1, 3), (2, 6)):
        vals = shape_values(degree, nodes[:nb])
        assert np.allclose(vals, np.eye(nb), atol=1e-14)


def test_partition_of_unity_and_gradient_sum():
    mesh = build_unit_square_mesh(3)
    rng = np.random.default_rng(3)
    bary = rng.dirichlet([1, 1, 1], size=50)
    for degree in (1, 2):
        space = build_space(mesh, degree)
        vals = shape_values(degree, bary)
        assert np.abs(vals.sum(axis=0) - 1.0).max() < 1e-13
        for k in (0, mesh.n_triangles // 2):
            for lam in bary[:5]:
                v, g = eval_basis(space, k, lam)
                assert abs(v.sum() - 1.0) < 1e-13
                assert np.abs(g.sum(axis=0)).max() < 1e-10


def test_interpolate_linear_p1():
    mesh = build_unit_square_mesh(2)
    space = build_space(mesh, 1)
    f = lagrange_interpolate(space, lambda x: x[:, 0])
    assert np.allclose(f.coefficients, mesh.vertices[:, 0], atol=1e-15)


def test_p2_reproduces_quadratics():
    mesh = build_unit_square_mesh(3)
    space = build_space(mesh, 2)
    f = lagrange_interpolate(space, lambda x: x[:, 0] ** 2 - 0.5 * x[:, 0] * x[:, 1])
    rng = np.random.default_rng(11)
    pts = rng.random((40, 2))
    got = evaluate_scalar(f, pts)
    want = pts[:, 0] ** 2 - 0.5 * pts[:, 0] * pts[:, 1]
    assert np.abs(got - want).max() < 1e-12


def _l2_interpolation_error(N: int) -> float:
    mesh = build_unit_square_mesh(N)
    space = build_space(mesh, 2)
    exact = lambda x: np.sin(np.pi * x[:, 0]) ** 2 * np.sin(2 * np.pi * x[:, 1])
    f = lagrange_interpolate(space, exact)
    rule = triangle_rule(9)
    pts = physical_points(mesh, rule.points)
    wts = scaled_weights(mesh, rule.weights)
    vals = shape_values(2, rule.points)
    fh = np.einsum("iq,mi->mq", vals, f.coefficients[space.element_dofs])
    fe = exact(pts.reshape(-1, 2)).reshape(fh.shape)
    return float(np.sqrt(np.sum(wts * (fh - fe) ** 2)))


def test_p2_interpolation_order_three():
    errs = [_l2_interpolation_error(N) for N in (4, 8, 16)]
    eoc = np.log(errs[0] / errs[2]) / np.log(4.0)
    assert 2.6 <= eoc <= 3.4, (errs, eoc)


def test_zero_mean_interpolation():
    mesh = build_unit_square_mesh(4)
    space = build_space(mesh, 1, "zero_mean")
    f = lagrange_interpolate(space, lambda x: x[:, 0] + 3.0)
    m = dof_integrals(space)
    assert abs(m @ f.coefficients) < 1e-14


def test_interpolate_rejects_non_finite():
    mesh = build_unit_square_mesh(2)
    space = build_space(mesh, 1)

    def bad(x):
        out = x[:, 0].copy()
        out[3] = np.nan
        return out

    with pytest.raises(ValueError) as err:
        lagrange_interpolate(space, bad)
    assert "DOF 3" in str(err.value)


def test_deterministic_numbering():
    mesh = build_unit_square_mesh(4)
    a = build_space(mesh, 2)
    b = build_space(mesh, 2)
    assert np.array_equal(a.element_dofs, b.element_dofs)
    assert np.array_equal(a.dof_coordinates, b.dof_coordinates)


def test_element_dofs_conforming():
    # shared edge midpoint carries the same global DOF in both elements
    mesh = build_unit_square_mesh(3)
    space = build_space(mesh, 2)
    seen = {}
    for k in range(mesh.n_triangles):
        for i, d in enumerate(space.element_dofs[k]):
            key = tuple(np.round(space.dof_coordinates[d], 14))
            seen.setdefault(key, set()).add(d)
    assert all(len(s) == 1 for s in seen.values())


def test_boundary_dofs_are_on_the_boundary():
    mesh = build_unit_square_mesh(4)
    for degree in (1, 2):
        space = build_space(mesh, degree, "zero_boundary")
        xy = space.dof_coordinates[space.boundary_dofs]
        on = (np.abs(xy) < 1e-12) | (np.abs(xy - 1.0) < 1e-12)
        assert on.any(axis=1).all()
        inner = np.setdiff1d(np.arange(space.n_dofs), space.boundary_dofs)
        xi = space.dof_coordinates[inner]
        assert (xi > 1e-12).all() and (xi < 1 - 1e-12).all()


def test_dof_integrals_match_constant_load():
    mesh = build_unit_square_mesh(3)
    for degree in (1, 2):
        space = build_space(mesh, degree)
        m = dof_integrals(space)
        assert abs(m.sum() - 1.0) < 1e-14
        load = LoadAssembler(space, degree=4).scalar_load(lambda x: np.ones(len(x)))
        assert np.abs(m - load).max() < 1e-15


def test_interpolate_vector_shape_and_values():
    mesh = build_unit_square_mesh(2)
    space = build_space(mesh, 2)
    f = interpolate_vector(space, lambda x, t: np.stack([x[:, 0], -x[:, 1]], axis=1), t=0.5)
    assert f.components.shape == (space.n_dofs, 2)
    assert f.time_label == 0.5
    assert np.allclose(f.components[:, 0], space.dof_coordinates[:, 0])
