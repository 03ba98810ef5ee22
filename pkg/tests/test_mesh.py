import numpy as np
import pytest

from oseenlg.errors import DomainError
from oseenlg.mesh import (TriMesh, barycentric_coordinates, build_unit_square_mesh,
                          load_mesh, locate_point, save_mesh)


def test_smallest_mesh():
    mesh = build_unit_square_mesh(1)
    assert mesh.n_vertices == 4
    assert mesh.n_triangles == 2
    assert abs(mesh.element_areas.sum() - 1.0) < 1e-15


def test_counts_and_mesh_size_n16():
    mesh = build_unit_square_mesh(16)
    assert mesh.n_vertices == 289
    assert mesh.n_triangles == 512
    assert abs(mesh.mesh_size - np.sqrt(2.0) / 16.0) < 1e-15
    assert mesh.mesh_size == mesh.element_diameters.max()


@pytest.mark.parametrize("N", [1, 2, 3, 5, 8, 13, 16, 32])
def test_total_area_is_one(N):
    mesh = build_unit_square_mesh(N)
    assert abs(mesh.element_areas.sum() - 1.0) < 1e-12
    assert (mesh.element_areas > 0).all()


def test_conformity_edge_counts():
    # every interior edge belongs to exactly two triangles, boundary edges to one
    mesh = build_unit_square_mesh(6)
    edge_count = {}
    for tri in mesh.triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            edge_count[key] = edge_count.get(key, 0) + 1
    assert set(edge_count.values()) <= {1, 2}
    onb = mesh.boundary_vertex_flags
    for (a, b), cnt in edge_count.items():
        if cnt == 1:
            assert onb[a] and onb[b]


def test_boundary_flags_n2():
    mesh = build_unit_square_mesh(2)
    assert mesh.boundary_vertex_flags.sum() == 8
    assert mesh.n_vertices == 9


@pytest.mark.parametrize("N", [1, 2, 4, 8, 16])
def test_locate_every_centroid(N):
    mesh = build_unit_square_mesh(N)
    centroids = mesh.element_coords.mean(axis=1)
    for k, c in enumerate(centroids):
        tri, lam = locate_point(mesh, c)
        assert tri == k
        assert np.allclose(lam, 1.0 / 3.0, atol=1e-12)


def test_locate_tie_break_on_shared_vertex():
    mesh = build_unit_square_mesh(2)
    # (0.5, 0.5) is the central lattice vertex; pick the smallest incident index
    tri, lam = locate_point(mesh, np.array([0.5, 0.5]))
    vid = 4  # index 1*(2+1)+1
    incident = [k for k, t in enumerate(mesh.triangles) if vid in t]
    assert tri == min(incident)
    assert abs(lam.sum() - 1.0) < 1e-12
    assert lam.min() >= 0.0


def test_locate_outside_raises_and_names_point():
    mesh = build_unit_square_mesh(2)
    with pytest.raises(DomainError) as err:
        locate_point(mesh, np.array([1.5, 0.5]))
    assert "1.5" in str(err.value)


def test_locate_accepts_boundary_within_tolerance():
    mesh = build_unit_square_mesh(4)
    tri, lam = locate_point(mesh, np.array([1.0 + 5e-13, 0.25]))
    assert lam.min() >= 0.0
    assert abs(lam.sum() - 1.0) < 1e-12


def test_barycentric_coordinates_roundtrip():
    mesh = build_unit_square_mesh(3)
    rng = np.random.default_rng(42)
    for k in rng.integers(0, mesh.n_triangles, size=10):
        coords = mesh.element_coords[k]
        lam = rng.dirichlet([1.0, 1.0, 1.0])
        x = lam @ coords
        back = barycentric_coordinates(coords, x)
        assert np.allclose(back, lam, atol=1e-12)


def test_vertex_to_triangles_consistent():
    mesh = build_unit_square_mesh(4)
    for v, tris in enumerate(mesh.vertex_to_triangles):
        for k in tris:
            assert v in mesh.triangles[k]
    # reverse direction
    for k, tri in enumerate(mesh.triangles):
        for v in tri:
            assert k in mesh.vertex_to_triangles[v]


def test_rejects_bad_n():
    with pytest.raises(ValueError):
        build_unit_square_mesh(0)


def test_deterministic_construction():
    a = build_unit_square_mesh(5)
    b = build_unit_square_mesh(5)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.triangles, b.triangles)


def test_rejects_clockwise_triangle():
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    cw = np.array([[0, 3, 1], [1, 3, 2]])  # first triple winds clockwise
    with pytest.raises(ValueError):
        TriMesh(vertices, cw)


def test_save_load_roundtrip(tmp_path):
    mesh = build_unit_square_mesh(3)
    path = tmp_path / "mesh.txt"
    save_mesh(mesh, path)
    back = load_mesh(path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.array_equal(back.boundary_vertex_flags, mesh.boundary_vertex_flags)
    header = path.read_text().splitlines()[0]
    assert header == f"vertices {mesh.n_vertices} triangles {mesh.n_triangles}"
