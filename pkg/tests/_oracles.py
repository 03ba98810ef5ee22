"""Independent reference implementations used only by the test suite.

The composed-term oracle below recomputes the advected load vector with a
completely different toolchain (shapely/GEOS polygon intersection, fan
triangulation in Python, explicit barycentric transport) so that agreement
with the production kernel is meaningful evidence rather than a tautology.
"""

import numpy as np
from shapely import STRtree
from shapely.geometry import Polygon

from oseenlg.assembly import triangle_rule
from oseenlg.characteristics import foot_triangles
from oseenlg.fe_space import shape_values


def _bary_coords(points, tri):
    """Barycentric coordinates of (n, 2) points w.r.t. a 3x2 triangle."""
    v0, v1, v2 = tri
    T = np.column_stack([v1 - v0, v2 - v0])
    lam = np.linalg.solve(T, (points - v0).T).T
    return np.column_stack([1.0 - lam[:, 0] - lam[:, 1], lam[:, 0], lam[:, 1]])


def composed_term_oracle(field, wh, dt, test_space, quad_degree=11):
    """Integrals of field(X1(x)) against test basis functions, via GEOS.

    For each parent element K the image X1(K) is intersected with every
    overlapping source element using shapely, each intersection is fanned into
    triangles, and the integrand is evaluated with a high-order rule. The
    pullback to K uses the fact that affine maps preserve barycentric
    coordinates, so the test functions are evaluated at the barycentric
    coordinates of the quadrature point w.r.t. the image triangle.
    """
    mesh = test_space.mesh
    rule = triangle_rule(quad_degree)
    qb = rule.points            # (nq, 3) barycentric
    qw = rule.weights           # sums to 1

    feet = foot_triangles(wh, dt)
    grads = wh.gradients
    jac = (1.0 - dt * grads[:, 0, 0]) * (1.0 - dt * grads[:, 1, 1]) \
        - dt * dt * grads[:, 0, 1] * grads[:, 1, 0]

    source_polys = [Polygon(mesh.element_coords[t]) for t in range(mesh.n_triangles)]
    tree = STRtree(source_polys)
    f_space = field.space
    rhs = np.zeros((test_space.n_dofs, 2))

    def add_polygon(coords, K, src):
        """Fan-triangulate one convex piece and accumulate its quadrature."""
        for j in range(1, len(coords) - 1):
            tri = np.array([coords[0], coords[j], coords[j + 1]])
            e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
            area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
            if area < 1e-16:
                continue
            pts = qb @ tri                                   # (nq, 2)
            mu_src = _bary_coords(pts, mesh.element_coords[src])
            fv = shape_values(f_space.degree, mu_src)        # (nb_f, nq)
            f_at = field.components[f_space.element_dofs[src]].T @ fv  # (2, nq)
            mu_img = _bary_coords(pts, feet[K])
            tv = shape_values(test_space.degree, mu_img)     # (nb_t, nq)
            w = area * qw / jac[K]
            contrib = np.einsum("q,iq,cq->ic", w, tv, f_at)
            np.add.at(rhs, test_space.element_dofs[K], contrib)

    for K in range(mesh.n_triangles):
        foot_poly = Polygon(feet[K])
        for src in tree.query(foot_poly):
            piece = foot_poly.intersection(source_polys[int(src)])
            if piece.is_empty or piece.area < 1e-15:
                continue
            if piece.geom_type == "Polygon":
                parts = [piece]
            elif piece.geom_type in ("MultiPolygon", "GeometryCollection"):
                parts = [g for g in piece.geoms if g.geom_type == "Polygon"]
            else:
                continue
            for g in parts:
                add_polygon(np.asarray(g.exterior.coords)[:-1], K, int(src))
    return rhs
