"""Backward characteristics and exact integration of the advected term.

The convecting velocity is replaced by its piecewise-linear nodal interpolant
w_h, so the one-step backward map X1(x) = x - dt * w_h(x) is affine on each
element and maps triangles to straight-sided triangles. The advected load
vector

    r_i = int_Omega (field o X1)(x) * phi_i(x) dx

is then computed exactly: on each test element K the image triangle X1(K) is
clipped against the mesh triangles it overlaps (Sutherland-Hodgman), each
convex intersection piece is fan-triangulated, and a quadrature rule exact for
the piecewise-polynomial integrand is applied, pulling points back through the
affine map (barycentric coordinates with respect to the image triangle equal
those of the preimage in K). A quadrature-only fallback mode integrates the
composed field with a plain per-element rule instead; it is deliberately
inexact for generic fields (the composed integrand has gradient kinks along
preimages of mesh edges) and exists to demonstrate why rough quadrature of
the advected term degrades the scheme.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import GeometryConsistencyError, HypothesisViolationError
from .fe_space import ScalarSpace, VectorField, shape_values
from .mesh import TriMesh, locate_point
from .assembly import triangle_rule

logger = logging.getLogger(__name__)

#: intersection pieces below this area are discarded as degenerate slivers
SLIVER_AREA = 1e-16

#: tolerated mismatch between clipped piece areas and the mapped element area
AREA_DEFECT_TOL = 1e-10


@dataclass
class LinearizedVelocity:
    """Piecewise-linear (P1) nodal interpolant of a convecting velocity.

    Attributes:
        p1_space: the P1 space the nodal values live on.
        values: (n_vertices, 2) nodal velocity values.
        gradients: (m, 2, 2) constant per-element gradients, entry [e, a, b] =
            d w_a / d x_b on element e.
        lipschitz_seminorm: max over elements of the Frobenius norm of the
            gradient (the W^{1,inf} seminorm of w_h).
        time_label: optional sampling time.
    """
    p1_space: ScalarSpace
    values: np.ndarray
    gradients: np.ndarray
    lipschitz_seminorm: float
    time_label: float | None = None

    @property
    def mesh(self) -> TriMesh:
        return self.p1_space.mesh


@dataclass
class ClippedCell:
    """One convex intersection piece X1(K) n K', kept for inspection/debugging."""
    parent_index: int
    source_index: int
    polygon: np.ndarray        # (n_vertices, 2), CCW, n_vertices <= 7
    sub_triangles: np.ndarray  # (n_vertices - 2, 3, 2) fan triangulation

    @property
    def area(self) -> float:
        x, y = self.polygon[:, 0], self.polygon[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def build_linearized_velocity(w, t: float, mesh: TriMesh,
                              p1_space: ScalarSpace | None = None) -> LinearizedVelocity:
    """P1 interpolation of w(., t) at the mesh vertices.

    Raises:
        HypothesisViolationError: if w does not vanish on the boundary vertices
            (beyond 1e-12), which the method requires.
    """
    if p1_space is None:
        p1_space = ScalarSpace(mesh, 1, "none")
    values = np.asarray(w(mesh.vertices, t), dtype=np.float64)
    if values.shape != (mesh.n_vertices, 2):
        raise ValueError(f"w returned shape {values.shape}, expected ({mesh.n_vertices}, 2)")
    bmax = np.abs(values[mesh.boundary_vertex_flags]).max() if mesh.boundary_vertex_flags.any() else 0.0
    if bmax > 1e-12:
        raise HypothesisViolationError(
            f"convecting velocity must vanish on the boundary; max boundary value {bmax:.3e}")
    return _from_nodal_values(p1_space, values, t)


def _from_nodal_values(p1_space: ScalarSpace, values: np.ndarray,
                       t: float | None = None) -> LinearizedVelocity:
    """Assemble per-element gradients and the Lipschitz seminorm from nodal data."""
    from .fe_space import grad_lambda
    gl = grad_lambda(p1_space.mesh)                       # (m, 3, 2)
    nodal = values[p1_space.mesh.triangles]               # (m, 3, 2) per-vertex w
    grads = np.einsum("mia,mib->mab", nodal, gl)          # [e, a, b] = d w_a / d x_b
    frob = np.sqrt(np.einsum("mab,mab->m", grads, grads))
    lip = float(frob.max()) if len(frob) else 0.0
    return LinearizedVelocity(p1_space, values, grads, lip, t)


def check_time_step(wh: LinearizedVelocity, dt: float, warn: bool = True) -> float:
    """Validate dt against the backward map; returns dt * |w_h|_{1,inf}.

    dt * |w_h|_{1,inf} < 1 is the textbook sufficient condition for the map to
    be a bijection of the domain, but it is conservative. When it fails, the
    exact criterion for the piecewise-affine map is consulted instead: with
    w_h = 0 on the boundary, the map fixes the boundary pointwise, and it is
    then bijective if and only if every element Jacobian is positive (degree
    argument). Only a nonpositive Jacobian is a hard error. Above 1/4 the
    Jacobian is no longer guaranteed to stay within [1/2, 3/2]; that is only
    warned about, since the scheme remains usable there.
    """
    margin = dt * wh.lipschitz_seminorm
    if margin >= 1.0:
        jmin = float(element_jacobians(wh, dt).min())
        if jmin <= 1e-12:
            raise HypothesisViolationError(
                f"dt * |w_h|_(1,inf) = {margin:.4f} >= 1 and the minimum element "
                f"Jacobian is {jmin:.3e}: the backward map degenerates; reduce "
                "the time step")
        if warn:
            logger.warning("dt * |w_h|_(1,inf) = %.4f >= 1; the map is still "
                           "bijective (min element Jacobian %.3f) but all norm-"
                           "based guarantees are void", margin, jmin)
    elif warn and margin > 0.25:
        logger.warning("dt * |w_h|_(1,inf) = %.4f exceeds 1/4; Jacobian bounds "
                       "[1/2, 3/2] are not guaranteed this step", margin)
    return margin


def element_jacobians(wh: LinearizedVelocity, dt: float) -> np.ndarray:
    """det(I - dt * grad w_h) per element, constant on each element."""
    G = wh.gradients
    return ((1.0 - dt * G[:, 0, 0]) * (1.0 - dt * G[:, 1, 1])
            - dt * G[:, 0, 1] * dt * G[:, 1, 0])


def foot_triangles(wh: LinearizedVelocity, dt: float) -> np.ndarray:
    """Images of all element vertex triples under X1, (m, 3, 2).

    Exact for P1 velocities: X1 maps each vertex to itself minus dt times its
    nodal value.
    """
    mesh = wh.mesh
    return mesh.element_coords - dt * wh.values[mesh.triangles]


def map_x1(wh: LinearizedVelocity, dt: float, points):
    """Apply the backward map X1(x) = x - dt * w_h(x) to points.

    Returns:
        (mapped, jacobians): mapped points clamped to the closed unit square
        (rounding tolerance 1e-12), and the per-element Jacobian determinants.

    Raises:
        HypothesisViolationError: if dt * |w_h|_(1,inf) >= 1.
        GeometryConsistencyError: if a mapped point leaves the domain by more
            than rounding allows (the map should be onto the domain).
    """
    check_time_step(wh, dt)
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    mesh = wh.mesh
    mapped = np.empty_like(points)
    tris = mesh.triangles
    for i, p in enumerate(points):
        tri, lam = locate_point(mesh, p)
        wval = lam @ wh.values[tris[tri]]
        mapped[i] = p - dt * wval
    excess = max(float((-mapped).max(initial=0.0)), float((mapped - 1.0).max(initial=0.0)))
    if excess > 1e-9:
        raise GeometryConsistencyError(
            f"backward map left the domain by {excess:.3e}; hypothesis checks "
            "should have prevented this")
    np.clip(mapped, 0.0, 1.0, out=mapped)
    return mapped, element_jacobians(wh, dt)


# ----------------------------------------------------------------------------
# Jitted geometry kernel
# ----------------------------------------------------------------------------

@njit(cache=True)
def _clip_against_triangle(subject, n_subject, tri, buf_a, buf_b):
    """Sutherland-Hodgman clip of a convex CCW polygon against a CCW triangle.

    Points exactly on a clip edge count as inside. The result is written into
    buf_a; the return value is its vertex count (0 if the intersection is
    empty or degenerate).
    """
    n_in = n_subject
    for i in range(n_in):
        buf_a[i, 0] = subject[i, 0]
        buf_a[i, 1] = subject[i, 1]
    for e in range(3):
        ax = tri[e, 0]
        ay = tri[e, 1]
        ex = tri[(e + 1) % 3, 0] - ax
        ey = tri[(e + 1) % 3, 1] - ay
        n_out = 0
        for i in range(n_in):
            sx = buf_a[i, 0]
            sy = buf_a[i, 1]
            j = i + 1
            if j == n_in:
                j = 0
            tx = buf_a[j, 0]
            ty = buf_a[j, 1]
            ds = ex * (sy - ay) - ey * (sx - ax)
            dt_ = ex * (ty - ay) - ey * (tx - ax)
            if ds >= 0.0:
                buf_b[n_out, 0] = sx
                buf_b[n_out, 1] = sy
                n_out += 1
                if dt_ < 0.0:
                    c = ds / (ds - dt_)
                    buf_b[n_out, 0] = sx + c * (tx - sx)
                    buf_b[n_out, 1] = sy + c * (ty - sy)
                    n_out += 1
            elif dt_ >= 0.0:
                c = ds / (ds - dt_)
                buf_b[n_out, 0] = sx + c * (tx - sx)
                buf_b[n_out, 1] = sy + c * (ty - sy)
                n_out += 1
        n_in = n_out
        for i in range(n_in):
            buf_a[i, 0] = buf_b[i, 0]
            buf_a[i, 1] = buf_b[i, 1]
        if n_in < 3:
            return 0
    return n_in


@njit(cache=True, inline="always")
def _bary2(px, py, ax, ay, bx, by, cx, cy):
    """Last two barycentric coordinates of (px, py) in triangle (a, b, c)."""
    det = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
    l1 = ((px - ax) * (cy - ay) - (cx - ax) * (py - ay)) / det
    l2 = ((bx - ax) * (py - ay) - (px - ax) * (by - ay)) / det
    return l1, l2


@njit(cache=True, inline="always")
def _shape_vals(degree, l0, l1, l2, out):
    if degree == 1:
        out[0] = l0
        out[1] = l1
        out[2] = l2
        return 3
    out[0] = l0 * (2.0 * l0 - 1.0)
    out[1] = l1 * (2.0 * l1 - 1.0)
    out[2] = l2 * (2.0 * l2 - 1.0)
    out[3] = 4.0 * l1 * l2
    out[4] = 4.0 * l0 * l2
    out[5] = 4.0 * l0 * l1
    return 6


@njit(cache=True)
def _composed_rhs_kernel(tri_xy, foot_xy, jac, dofs_field, coeffs, deg_field,
                         dofs_test, deg_test, grid_n, grid_off, grid_items,
                         qp, qw, rhs, defect, counts):
    """Accumulate int (field o X1) * phi_i over all test elements.

    Serial and in fixed element order, so results are bit-reproducible.
    """
    m = tri_xy.shape[0]
    nq = qp.shape[0]
    stamp = np.full(m, -1, np.int64)
    cand = np.empty(m, np.int64)
    buf_a = np.empty((16, 2))
    buf_b = np.empty((16, 2))
    vals_f = np.empty(6)
    vals_t = np.empty(6)
    for K in range(m):
        xmin = foot_xy[K, 0, 0]
        xmax = xmin
        ymin = foot_xy[K, 0, 1]
        ymax = ymin
        for v in range(1, 3):
            x = foot_xy[K, v, 0]
            y = foot_xy[K, v, 1]
            if x < xmin:
                xmin = x
            if x > xmax:
                xmax = x
            if y < ymin:
                ymin = y
            if y > ymax:
                ymax = y
        i0 = int((xmin - 1e-12) * grid_n)
        i1 = int((xmax + 1e-12) * grid_n)
        j0 = int((ymin - 1e-12) * grid_n)
        j1 = int((ymax + 1e-12) * grid_n)
        if i0 < 0:
            i0 = 0
        if j0 < 0:
            j0 = 0
        if i1 > grid_n - 1:
            i1 = grid_n - 1
        if j1 > grid_n - 1:
            j1 = grid_n - 1
        nc = 0
        for cy in range(j0, j1 + 1):
            base = cy * grid_n
            for cx in range(i0, i1 + 1):
                c = base + cx
                for k in range(grid_off[c], grid_off[c + 1]):
                    tr = grid_items[k]
                    if stamp[tr] != K:
                        stamp[tr] = K
                        cand[nc] = tr
                        nc += 1
        # insertion sort: fixed accumulation order regardless of grid layout
        for a_ in range(1, nc):
            key = cand[a_]
            b_ = a_ - 1
            while b_ >= 0 and cand[b_] > key:
                cand[b_ + 1] = cand[b_]
                b_ -= 1
            cand[b_ + 1] = key

        fx0 = foot_xy[K, 0, 0]
        fy0 = foot_xy[K, 0, 1]
        fx1 = foot_xy[K, 1, 0]
        fy1 = foot_xy[K, 1, 1]
        fx2 = foot_xy[K, 2, 0]
        fy2 = foot_xy[K, 2, 1]
        target = 0.5 * ((fx1 - fx0) * (fy2 - fy0) - (fx2 - fx0) * (fy1 - fy0))
        inv_j = 1.0 / jac[K]
        area_sum = 0.0
        npieces = 0
        for ci in range(nc):
            S = cand[ci]
            n_poly = _clip_against_triangle(foot_xy[K], 3, tri_xy[S], buf_a, buf_b)
            if n_poly < 3:
                continue
            parea = 0.0
            for i in range(n_poly):
                j = i + 1
                if j == n_poly:
                    j = 0
                parea += buf_a[i, 0] * buf_a[j, 1] - buf_a[j, 0] * buf_a[i, 1]
            parea *= 0.5
            if parea < SLIVER_AREA:
                continue
            area_sum += parea
            npieces += 1
            sx0 = tri_xy[S, 0, 0]
            sy0 = tri_xy[S, 0, 1]
            sx1 = tri_xy[S, 1, 0]
            sy1 = tri_xy[S, 1, 1]
            sx2 = tri_xy[S, 2, 0]
            sy2 = tri_xy[S, 2, 1]
            for f in range(1, n_poly - 1):
                x0 = buf_a[0, 0]
                y0 = buf_a[0, 1]
                x1 = buf_a[f, 0]
                y1 = buf_a[f, 1]
                x2 = buf_a[f + 1, 0]
                y2 = buf_a[f + 1, 1]
                a2 = 0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))
                if a2 <= SLIVER_AREA:
                    continue
                for q in range(nq):
                    yx = qp[q, 0] * x0 + qp[q, 1] * x1 + qp[q, 2] * x2
                    yy = qp[q, 0] * y0 + qp[q, 1] * y1 + qp[q, 2] * y2
                    mu1, mu2 = _bary2(yx, yy, sx0, sy0, sx1, sy1, sx2, sy2)
                    nf = _shape_vals(deg_field, 1.0 - mu1 - mu2, mu1, mu2, vals_f)
                    ux = 0.0
                    uy = 0.0
                    for i in range(nf):
                        d = dofs_field[S, i]
                        ux += vals_f[i] * coeffs[d, 0]
                        uy += vals_f[i] * coeffs[d, 1]
                    # barycentric w.r.t. the image triangle = preimage coordinates in K
                    la1, la2 = _bary2(yx, yy, fx0, fy0, fx1, fy1, fx2, fy2)
                    nt = _shape_vals(deg_test, 1.0 - la1 - la2, la1, la2, vals_t)
                    wfac = a2 * qw[q] * inv_j
                    for i in range(nt):
                        d = dofs_test[K, i]
                        rhs[d, 0] += wfac * ux * vals_t[i]
                        rhs[d, 1] += wfac * uy * vals_t[i]
        defect[K] = abs(area_sum - target)
        counts[K] = npieces


# ----------------------------------------------------------------------------
# Public integration entry points
# ----------------------------------------------------------------------------

def integrate_composed_term(field: VectorField, wh: LinearizedVelocity, dt: float,
                            test_space: ScalarSpace, method: str = "clipping",
                            quad_degree: int | None = None,
                            return_stats: bool = False):
    """Load vector of the advected field against the test space basis.

    Args:
        field: the transported FE vector field (typically the projected velocity).
        wh: linearized convecting velocity defining X1.
        dt: time step.
        test_space: space providing the test functions (per component).
        method: `clipping` (exact, default) or `quadrature` (inexact fallback
            evaluating the composed field at per-element quadrature points via
            point location; order controlled by quad_degree, default 11).
        return_stats: also return a dict with per-element piece counts and the
            worst area defect (clipping mode only).

    Returns:
        (n_test_dofs, 2) array of integrals, and optionally the stats dict.

    Raises:
        GeometryConsistencyError: if the clipped pieces of some element fail to
            tile its image triangle to within 1e-10 in area.
    """
    mesh = test_space.mesh
    if field.space.mesh is not mesh or wh.mesh is not mesh:
        raise ValueError("field, velocity, and test space must share one mesh")
    check_time_step(wh, dt, warn=False)

    if method == "clipping":
        jac = element_jacobians(wh, dt)
        feet = foot_triangles(wh, dt)
        rule = triangle_rule(max(field.space.degree + test_space.degree, 1))
        rhs = np.zeros((test_space.n_dofs, 2))
        defect = np.zeros(mesh.n_triangles)
        counts = np.zeros(mesh.n_triangles, dtype=np.int64)
        _composed_rhs_kernel(
            mesh.element_coords, feet, jac,
            field.space.element_dofs, field.components, field.space.degree,
            test_space.element_dofs, test_space.degree,
            mesh._grid_n, mesh._grid_offsets, mesh._grid_items,
            rule.points, rule.weights, rhs, defect, counts)
        worst = int(np.argmax(defect))
        if defect[worst] > AREA_DEFECT_TOL:
            raise GeometryConsistencyError(
                f"clipped pieces of element {worst} mismatch its mapped area by "
                f"{defect[worst]:.3e} (tolerance {AREA_DEFECT_TOL:.0e})")
        if return_stats:
            return rhs, {"max_area_defect": float(defect.max()),
                         "piece_counts": counts,
                         "mapped_area": float((jac * mesh.element_areas).sum())}
        return rhs

    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}; use 'clipping' or 'quadrature'")

    rule = triangle_rule(quad_degree if quad_degree is not None else 11)
    from .fe_space import physical_points, scaled_weights
    pts = physical_points(mesh, rule.points)          # (m, nq, 2)
    wts = scaled_weights(mesh, rule.weights)          # (m, nq)
    lam = rule.points
    nodal_w = wh.values[mesh.triangles]               # (m, 3, 2)
    w_at_q = np.einsum("qi,mia->mqa", lam, nodal_w)
    mapped = pts - dt * w_at_q
    np.clip(mapped, 0.0, 1.0, out=mapped)

    vals_test = shape_values(test_space.degree, lam)  # (nbt, nq)
    fvals = np.empty(mapped.shape)
    edofs_f = field.space.element_dofs
    for e in range(mesh.n_triangles):
        for q in range(lam.shape[0]):
            tri, mu = locate_point(mesh, mapped[e, q])
            sv = shape_values(field.space.degree, mu[None, :])[:, 0]
            fvals[e, q] = sv @ field.components[edofs_f[tri]]
    contrib = np.einsum("mq,mqc,iq->mic", wts, fvals, vals_test)
    rhs = np.empty((test_space.n_dofs, 2))
    flat = test_space.element_dofs.ravel()
    for c in range(2):
        rhs[:, c] = np.bincount(flat, weights=contrib[:, :, c].ravel(),
                                minlength=test_space.n_dofs)
    if return_stats:
        return rhs, {}
    return rhs


def clipped_cells(wh: LinearizedVelocity, dt: float,
                  parents=None) -> list[ClippedCell]:
    """Explicit intersection pieces for inspection; same geometry as the kernel.

    Args:
        parents: iterable of test element indices (default: all elements).
    """
    check_time_step(wh, dt, warn=False)
    mesh = wh.mesh
    feet = foot_triangles(wh, dt)
    coords = mesh.element_coords
    jac = element_jacobians(wh, dt)
    if parents is None:
        parents = range(mesh.n_triangles)
    buf_a = np.empty((16, 2))
    buf_b = np.empty((16, 2))
    cells: list[ClippedCell] = []
    for K in parents:
        foot = feet[K]
        lo = np.clip(np.floor((foot.min(axis=0) - 1e-12) * mesh._grid_n).astype(int),
                     0, mesh._grid_n - 1)
        hi = np.clip(np.floor((foot.max(axis=0) + 1e-12) * mesh._grid_n).astype(int),
                     0, mesh._grid_n - 1)
        seen: set[int] = set()
        for cy in range(lo[1], hi[1] + 1):
            for cx in range(lo[0], hi[0] + 1):
                c = cy * mesh._grid_n + cx
                seen.update(mesh._grid_items[mesh._grid_offsets[c]:mesh._grid_offsets[c + 1]].tolist())
        area_sum = 0.0
        for S in sorted(seen):
            n_poly = _clip_against_triangle(foot, 3, coords[S], buf_a, buf_b)
            if n_poly < 3:
                continue
            poly = buf_a[:n_poly].copy()
            x, y = poly[:, 0], poly[:, 1]
            area = 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
            if area < SLIVER_AREA:
                continue
            area_sum += area
            fans = np.stack([np.stack([poly[0], poly[f], poly[f + 1]])
                             for f in range(1, n_poly - 1)])
            cells.append(ClippedCell(int(K), int(S), poly, fans))
        target = jac[K] * mesh.element_areas[K]
        if abs(area_sum - target) > AREA_DEFECT_TOL:
            raise GeometryConsistencyError(
                f"clipped pieces of element {K} mismatch its mapped area by "
                f"{abs(area_sum - target):.3e}")
    return cells


def dump_clipped_cells(cells: list[ClippedCell], path) -> None:
    """Write pieces as line-delimited text: parent source x0 y0 x1 y1 ..."""
    with open(path, "w", encoding="ascii") as fh:
        for cell in cells:
            coords = " ".join(repr(float(v)) for v in cell.polygon.ravel())
            fh.write(f"{cell.parent_index} {cell.source_index} {coords}\n")
