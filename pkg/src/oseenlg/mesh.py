"""Conforming triangulations of the unit square and fast point location.

The mesh generator splits each of the N x N sub-squares along the diagonal
from its lower-left to its upper-right corner, giving a deterministic,
reproducible triangulation with 2*N^2 congruent CCW triangles. Point location
uses a uniform background grid of cells, each holding the triangles whose
bounding box overlaps it, followed by a barycentric containment test; queries
are O(1) on this mesh family.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError

#: absolute tolerance for "inside the domain" / "inside a triangle" decisions
INSIDE_TOL = 1e-12


class TriMesh:
    """Immutable conforming triangular mesh of the closed unit square.

    Attributes:
        vertices: (n_vertices, 2) float64 vertex coordinates.
        triangles: (n_triangles, 3) int64 vertex indices, CCW orientation.
        boundary_vertex_flags: (n_vertices,) bool, True for vertices on the boundary.
        element_areas: (n_triangles,) float64 triangle areas.
        element_diameters: (n_triangles,) float64 longest edge per triangle.
        mesh_size: max of element_diameters.
        vertex_to_triangles: tuple of int64 arrays, triangles incident to each vertex.
    """

    def __init__(self, vertices, triangles, grid_n: int | None = None):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError("vertices must be an (n, 2) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ValueError("triangles must be an (m, 3) array")

        coords = vertices[triangles]  # (m, 3, 2)
        e1 = coords[:, 1] - coords[:, 0]
        e2 = coords[:, 2] - coords[:, 0]
        signed = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        if np.any(signed <= 0.0):
            bad = int(np.argmin(signed))
            raise ValueError(
                f"triangle {bad} has non-positive signed area {signed[bad]:.3e}; "
                "triangles must be CCW and non-degenerate"
            )
        total = signed.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mesh does not cover the unit square: total area {total!r}")

        self.vertices = vertices
        self.triangles = triangles
        self.element_areas = signed
        # longest edge of each triangle
        d01 = np.linalg.norm(coords[:, 1] - coords[:, 0], axis=1)
        d12 = np.linalg.norm(coords[:, 2] - coords[:, 1], axis=1)
        d20 = np.linalg.norm(coords[:, 0] - coords[:, 2], axis=1)
        self.element_diameters = np.maximum(np.maximum(d01, d12), d20)
        self.mesh_size = float(self.element_diameters.max())

        on_x = (vertices[:, 0] <= INSIDE_TOL) | (vertices[:, 0] >= 1.0 - INSIDE_TOL)
        on_y = (vertices[:, 1] <= INSIDE_TOL) | (vertices[:, 1] >= 1.0 - INSIDE_TOL)
        self.boundary_vertex_flags = on_x | on_y

        incidence: list[list[int]] = [[] for _ in range(len(vertices))]
        for t, (a, b, c) in enumerate(triangles):
            incidence[a].append(t)
            incidence[b].append(t)
            incidence[c].append(t)
        self.vertex_to_triangles = tuple(np.asarray(ts, dtype=np.int64) for ts in incidence)

        self._element_coords = coords
        if grid_n is None:
            grid_n = max(1, int(round(math.sqrt(len(triangles) / 2.0))))
        self._grid_n = int(grid_n)
        self._grid_offsets, self._grid_items = self._build_grid(coords, self._grid_n)

        for arr in (self.vertices, self.triangles, self.element_areas,
                    self.element_diameters, self.boundary_vertex_flags,
                    self._element_coords, self._grid_offsets, self._grid_items):
            arr.flags.writeable = False

    @staticmethod
    def _build_grid(coords, grid_n):
        pad = INSIDE_TOL
        lo = np.clip(np.floor((coords.min(axis=1) - pad) * grid_n).astype(np.int64), 0, grid_n - 1)
        hi = np.clip(np.floor((coords.max(axis=1) + pad) * grid_n).astype(np.int64), 0, grid_n - 1)
        cells: list[list[int]] = [[] for _ in range(grid_n * grid_n)]
        for t in range(len(coords)):
            for cy in range(lo[t, 1], hi[t, 1] + 1):
                base = cy * grid_n
                for cx in range(lo[t, 0], hi[t, 0] + 1):
                    cells[base + cx].append(t)
        offsets = np.zeros(grid_n * grid_n + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([len(c) for c in cells])
        items = np.fromiter((t for c in cells for t in c), dtype=np.int64, count=int(offsets[-1]))
        return offsets, items

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def element_coords(self):
        """(m, 3, 2) physical coordinates of each triangle's vertices."""
        return self._element_coords

    def grid_candidates(self, x: float, y: float):
        """Triangles registered in the background-grid cell containing (x, y)."""
        n = self._grid_n
        cx = min(n - 1, max(0, int(x * n)))
        cy = min(n - 1, max(0, int(y * n)))
        c = cy * n + cx
        return self._grid_items[self._grid_offsets[c]:self._grid_offsets[c + 1]]


def build_unit_square_mesh(N: int) -> TriMesh:
    """Build the structured triangulation of [0,1]^2 with N subdivisions per side.

    Each sub-square is split along its lower-left to upper-right diagonal. The
    result has (N+1)^2 vertices and 2*N^2 triangles and is identical across
    calls for a fixed N.
    """
    if not isinstance(N, (int, np.integer)) or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    N = int(N)
    side = np.linspace(0.0, 1.0, N + 1)
    xx, yy = np.meshgrid(side, side, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])  # index = j*(N+1) + i

    tris = np.empty((2 * N * N, 3), dtype=np.int64)
    t = 0
    for j in range(N):
        for i in range(N):
            ll = j * (N + 1) + i
            lr = ll + 1
            ul = ll + (N + 1)
            ur = ul + 1
            tris[t] = (ll, lr, ur)
            tris[t + 1] = (ll, ur, ul)
            t += 2
    return TriMesh(vertices, tris, grid_n=N)


def barycentric_coordinates(coords, x):
    """Barycentric coordinates of point x w.r.t. a triangle given as (3, 2) coords."""
    d1 = coords[1] - coords[0]
    d2 = coords[2] - coords[0]
    r = x - coords[0]
    det = d1[0] * d2[1] - d1[1] * d2[0]
    l1 = (r[0] * d2[1] - d2[0] * r[1]) / det
    l2 = (d1[0] * r[1] - r[0] * d1[1]) / det
    return np.array([1.0 - l1 - l2, l1, l2])


def locate_point(mesh: TriMesh, x, tol: float = INSIDE_TOL):
    """Find the triangle containing x and the barycentric coordinates there.

    Points on shared edges or vertices resolve to the smallest triangle index.
    Barycentric coordinates in [-tol, 0) are clamped to 0 and the triple is
    renormalized to sum to 1.

    Raises:
        DomainError: if x lies outside [0,1]^2 by more than tol.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (2,):
        raise ValueError("x must be a 2D point")
    if (x < -tol).any() or (x > 1.0 + tol).any():
        raise DomainError(f"point ({x[0]!r}, {x[1]!r}) lies outside the unit square")
    xc = np.clip(x, 0.0, 1.0)

    candidates = mesh.grid_candidates(xc[0], xc[1])
    hit = _scan(mesh, candidates, xc, tol)
    if hit is None:
        # Rounding near a grid-cell boundary: fall back to a full scan, which
        # preserves the smallest-index tie-break.
        hit = _scan(mesh, range(mesh.n_triangles), xc, tol)
    if hit is None:
        raise DomainError(f"point ({x[0]!r}, {x[1]!r}) not located in any triangle")
    return hit


def _scan(mesh, triangle_indices, x, tol):
    coords = mesh.element_coords
    for t in triangle_indices:
        lam = barycentric_coordinates(coords[t], x)
        if lam.min() >= -tol:
            lam = np.maximum(lam, 0.0)
            lam /= lam.sum()
            return int(t), lam
    return None


def locate_points(mesh: TriMesh, points, tol: float = INSIDE_TOL):
    """Vectorized wrapper around locate_point for an (n, 2) array of points."""
    points = np.asarray(points, dtype=np.float64)
    idx = np.empty(len(points), dtype=np.int64)
    bary = np.empty((len(points), 3))
    for i, p in enumerate(points):
        idx[i], bary[i] = locate_point(mesh, p, tol)
    return idx, bary


def save_mesh(mesh: TriMesh, path) -> None:
    """Write the mesh in the plain-text exchange format.

    Header line `vertices <n> triangles <m>`, then one vertex per line
    (`x y boundary_flag`), then one triangle per line (three 0-based indices).
    """
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"vertices {mesh.n_vertices} triangles {mesh.n_triangles}\n")
        for (x, y), flag in zip(mesh.vertices, mesh.boundary_vertex_flags):
            fh.write(f"{float(x)!r} {float(y)!r} {int(flag)}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")


def load_mesh(path) -> TriMesh:
    """Read a mesh written by save_mesh. Derived data is rebuilt, not trusted."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "vertices" or header[2] != "triangles":
            raise ValueError(f"malformed mesh header in {path}")
        nv, nt = int(header[1]), int(header[3])
        vertices = np.empty((nv, 2))
        for i in range(nv):
            parts = fh.readline().split()
            vertices[i] = (float(parts[0]), float(parts[1]))
        triangles = np.empty((nt, 3), dtype=np.int64)
        for i in range(nt):
            triangles[i] = [int(p) for p in fh.readline().split()]
    return TriMesh(vertices, triangles)
