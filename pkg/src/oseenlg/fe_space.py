"""Lagrange P1/P2 scalar spaces on triangles, with constraint metadata.

Degrees of freedom are vertex values (P1) or vertex plus edge-midpoint values
(P2). Per element the local order is the three vertices followed by the three
midpoints opposite each vertex, so local basis 3 sits on the edge between
local vertices 1 and 2. Spaces carry one of three constraints: `none`,
`zero_boundary` (Dirichlet rows eliminated at solve time through `free_dofs`),
or `zero_mean` (enforced weakly by solver deflation and by mean subtraction
after interpolation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .mesh import TriMesh, locate_point

CONSTRAINTS = ("none", "zero_boundary", "zero_mean")


class ScalarSpace:
    """A scalar Lagrange finite element space over a TriMesh.

    Attributes:
        mesh: the underlying TriMesh.
        degree: polynomial degree, 1 or 2.
        constraint: one of `none`, `zero_boundary`, `zero_mean`.
        dof_coordinates: (n_dofs, 2) nodal points.
        element_dofs: (n_triangles, 3 or 6) global DOF indices per element.
        boundary_dofs: sorted int64 array of DOFs on the boundary.
        free_dofs: complement of boundary_dofs for `zero_boundary`, else all DOFs.
    """

    def __init__(self, mesh: TriMesh, degree: int, constraint: str = "none"):
        if degree not in (1, 2):
            raise ValueError(f"unsupported degree {degree!r}; only 1 and 2 are available")
        if constraint not in CONSTRAINTS:
            raise ValueError(f"unknown constraint {constraint!r}; expected one of {CONSTRAINTS}")
        self.mesh = mesh
        self.degree = int(degree)
        self.constraint = constraint

        nv = mesh.n_vertices
        if degree == 1:
            self.dof_coordinates = mesh.vertices
            self.element_dofs = mesh.triangles
        else:
            # Edges keyed by sorted vertex pairs, numbered in lexicographic order
            # so the global numbering is independent of element traversal order.
            pairs = set()
            for a, b, c in mesh.triangles:
                pairs.add((min(a, b), max(a, b)))
                pairs.add((min(b, c), max(b, c)))
                pairs.add((min(a, c), max(a, c)))
            edges = sorted(pairs)
            edge_index = {e: nv + i for i, e in enumerate(edges)}
            midpoints = 0.5 * (mesh.vertices[[e[0] for e in edges]]
                               + mesh.vertices[[e[1] for e in edges]])
            self.dof_coordinates = np.vstack([mesh.vertices, midpoints])
            dofs = np.empty((mesh.n_triangles, 6), dtype=np.int64)
            for t, (a, b, c) in enumerate(mesh.triangles):
                dofs[t, 0:3] = (a, b, c)
                dofs[t, 3] = edge_index[(min(b, c), max(b, c))]
                dofs[t, 4] = edge_index[(min(a, c), max(a, c))]
                dofs[t, 5] = edge_index[(min(a, b), max(a, b))]
            self.element_dofs = dofs

        xy = self.dof_coordinates
        on_boundary = ((xy[:, 0] <= 1e-12) | (xy[:, 0] >= 1.0 - 1e-12)
                       | (xy[:, 1] <= 1e-12) | (xy[:, 1] >= 1.0 - 1e-12))
        self.boundary_dofs = np.flatnonzero(on_boundary).astype(np.int64)
        if constraint == "zero_boundary":
            self.free_dofs = np.flatnonzero(~on_boundary).astype(np.int64)
        else:
            self.free_dofs = np.arange(len(xy), dtype=np.int64)

        for arr in (self.dof_coordinates, self.element_dofs, self.boundary_dofs, self.free_dofs):
            arr.flags.writeable = False

    @property
    def n_dofs(self) -> int:
        return len(self.dof_coordinates)

    @property
    def n_local(self) -> int:
        return 3 if self.degree == 1 else 6


def build_space(mesh: TriMesh, degree: int, constraint: str = "none") -> ScalarSpace:
    """Construct a P1 or P2 space on `mesh` with the given constraint."""
    return ScalarSpace(mesh, degree, constraint)


@dataclass
class ScalarField:
    """Coefficient vector over a ScalarSpace."""
    space: ScalarSpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.coefficients.shape != (self.space.n_dofs,):
            raise ValueError("coefficient vector length does not match the space")

    def copy(self) -> "ScalarField":
        return ScalarField(self.space, self.coefficients.copy())


@dataclass
class VectorField:
    """Two coefficient vectors over a shared ScalarSpace, stored as (n_dofs, 2).

    Column a holds the coefficients of velocity component a.
    """
    space: ScalarSpace
    components: np.ndarray
    time_label: float | None = field(default=None)

    def __post_init__(self):
        self.components = np.asarray(self.components, dtype=np.float64)
        if self.components.shape != (self.space.n_dofs, 2):
            raise ValueError("components must have shape (n_dofs, 2)")

    def copy(self) -> "VectorField":
        return VectorField(self.space, self.components.copy(), self.time_label)


# ----------------------------------------------------------------------------
# Basis evaluation
# ----------------------------------------------------------------------------

def shape_values(degree: int, bary) -> np.ndarray:
    """Shape function values at barycentric points; returns (n_local, n_points)."""
    lam = np.atleast_2d(np.asarray(bary, dtype=np.float64))
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    if degree == 1:
        return np.stack([l0, l1, l2])
    return np.stack([
        l0 * (2.0 * l0 - 1.0),
        l1 * (2.0 * l1 - 1.0),
        l2 * (2.0 * l2 - 1.0),
        4.0 * l1 * l2,
        4.0 * l0 * l2,
        4.0 * l0 * l1,
    ])


def grad_lambda(mesh: TriMesh):
    """Gradients of the barycentric coordinates, (m, 3, 2), constant per element."""
    coords = mesh.element_coords
    g = np.empty((mesh.n_triangles, 3, 2))
    for i in range(3):
        d = coords[:, (i + 2) % 3] - coords[:, (i + 1) % 3]
        g[:, i, 0] = -d[:, 1]
        g[:, i, 1] = d[:, 0]
    g /= (2.0 * mesh.element_areas)[:, None, None]
    return g


def shape_gradients(space: ScalarSpace, bary) -> np.ndarray:
    """Physical shape function gradients at barycentric points, (m, n_local, nq, 2)."""
    lam = np.atleast_2d(np.asarray(bary, dtype=np.float64))
    gl = grad_lambda(space.mesh)  # (m, 3, 2)
    m, nq = space.mesh.n_triangles, len(lam)
    if space.degree == 1:
        return np.broadcast_to(gl[:, :, None, :], (m, 3, nq, 2)).copy()
    out = np.empty((m, 6, nq, 2))
    for i in range(3):
        # vertex function: (4*lam_i - 1) * grad(lam_i)
        out[:, i] = gl[:, i, None, :] * (4.0 * lam[None, :, i, None] - 1.0)
        j, k = (i + 1) % 3, (i + 2) % 3
        # midpoint opposite vertex i: 4*(lam_k*grad(lam_j) + lam_j*grad(lam_k))
        out[:, 3 + i] = 4.0 * (gl[:, j, None, :] * lam[None, :, k, None]
                               + gl[:, k, None, :] * lam[None, :, j, None])
    return out


def eval_basis(space: ScalarSpace, triangle_index: int, bary):
    """Values and physical gradients of the local shape functions at one point.

    Args:
        triangle_index: element to evaluate on.
        bary: barycentric coordinates (lam0, lam1, lam2), nonnegative, summing to 1.

    Returns:
        (values, gradients): arrays of shape (n_local,) and (n_local, 2).
    """
    lam = np.asarray(bary, dtype=np.float64)
    vals = shape_values(space.degree, lam[None, :])[:, 0]
    gl = grad_lambda(space.mesh)[triangle_index]  # (3, 2)
    if space.degree == 1:
        return vals, gl.copy()
    grads = np.empty((6, 2))
    for i in range(3):
        grads[i] = (4.0 * lam[i] - 1.0) * gl[i]
        j, k = (i + 1) % 3, (i + 2) % 3
        grads[3 + i] = 4.0 * (lam[k] * gl[j] + lam[j] * gl[k])
    return vals, grads


def physical_points(mesh: TriMesh, bary) -> np.ndarray:
    """Map barycentric points to physical coordinates on every element, (m, nq, 2)."""
    lam = np.atleast_2d(np.asarray(bary, dtype=np.float64))
    return np.einsum("qi,mid->mqd", lam, mesh.element_coords)


def scaled_weights(mesh: TriMesh, weights) -> np.ndarray:
    """Quadrature weights times element area, (m, nq)."""
    w = np.asarray(weights, dtype=np.float64)
    return mesh.element_areas[:, None] * w[None, :]


# ----------------------------------------------------------------------------
# Interpolation and evaluation
# ----------------------------------------------------------------------------

def dof_integrals(space: ScalarSpace) -> np.ndarray:
    """Integrals of the global basis functions over the domain.

    Closed forms on straight triangles: each P1 vertex function integrates to
    |K|/3 per incident element; P2 vertex functions integrate to zero and P2
    midpoint functions to |K|/3 per incident element.
    """
    m = np.zeros(space.n_dofs)
    areas = space.mesh.element_areas
    if space.degree == 1:
        for i in range(3):
            np.add.at(m, space.element_dofs[:, i], areas / 3.0)
    else:
        for i in range(3, 6):
            np.add.at(m, space.element_dofs[:, i], areas / 3.0)
    return m


def lagrange_interpolate(space: ScalarSpace, f, t: float | None = None) -> ScalarField:
    """Nodal interpolation of f onto the space.

    Args:
        f: callable evaluated as f(points, t) (or f(points) when t is None)
           on an (n, 2) array, returning (n,) values.
        t: optional time passed through to f.

    For a `zero_mean` space the discrete mean is subtracted afterwards.

    Raises:
        ValueError: if f is non-finite at some DOF (the DOF is named).
    """
    pts = space.dof_coordinates
    vals = np.asarray(f(pts) if t is None else f(pts, t), dtype=np.float64)
    if vals.shape != (space.n_dofs,):
        raise ValueError(f"interpolated values have shape {vals.shape}, expected ({space.n_dofs},)")
    finite = np.isfinite(vals)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise ValueError(f"function is not finite at DOF {bad} located at {pts[bad]}")
    if space.constraint == "zero_mean":
        m = dof_integrals(space)
        vals = vals - (m @ vals) / m.sum()
    return ScalarField(space, vals)


def interpolate_vector(space: ScalarSpace, f, t: float | None = None) -> VectorField:
    """Componentwise nodal interpolation of a vector-valued f(points, t) -> (n, 2)."""
    pts = space.dof_coordinates
    vals = np.asarray(f(pts) if t is None else f(pts, t), dtype=np.float64)
    if vals.shape != (space.n_dofs, 2):
        raise ValueError(f"interpolated values have shape {vals.shape}, expected ({space.n_dofs}, 2)")
    if not np.isfinite(vals).all():
        bad = int(np.flatnonzero(~np.isfinite(vals).all(axis=1))[0])
        raise ValueError(f"function is not finite at DOF {bad} located at {pts[bad]}")
    return VectorField(space, vals, time_label=t)


def evaluate_scalar(f: ScalarField, points) -> np.ndarray:
    """Pointwise values of a scalar field, via point location. Test-scale helper."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    out = np.empty(len(points))
    for i, p in enumerate(points):
        tri, lam = locate_point(f.space.mesh, p)
        vals = shape_values(f.space.degree, lam[None, :])[:, 0]
        out[i] = vals @ f.coefficients[f.space.element_dofs[tri]]
    return out


def evaluate_vector(f: VectorField, points) -> np.ndarray:
    """Pointwise values of a vector field, (n, 2)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    out = np.empty((len(points), 2))
    for i, p in enumerate(points):
        tri, lam = locate_point(f.space.mesh, p)
        vals = shape_values(f.space.degree, lam[None, :])[:, 0]
        out[i] = vals @ f.components[f.space.element_dofs[tri]]
    return out
