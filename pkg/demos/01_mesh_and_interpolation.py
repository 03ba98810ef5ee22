"""
Meshes, point location, and Lagrange interpolation
==================================================

Builds the structured unit-square triangulation at a few resolutions,
locates arbitrary points inside it, and measures how fast the P1 and P2
interpolants of a smooth function converge.
"""

import numpy as np

from oseenlg import (build_space, build_unit_square_mesh, lagrange_interpolate,
                     locate_point, triangle_rule, physical_points,
                     scaled_weights, shape_values)

# Every mesh divides each side into N segments and each small square into
# two triangles along the main diagonal.
for N in (2, 8, 32):
    mesh = build_unit_square_mesh(N)
    print(f"N={N:3d}: {mesh.n_vertices:5d} vertices, "
          f"{mesh.n_triangles:5d} triangles, h={mesh.mesh_size:.4f}")

# Point location returns the containing triangle and barycentric coordinates.
mesh = build_unit_square_mesh(8)
for point in ([0.5, 0.5], [0.125, 0.03], [1.0, 1.0]):
    tri, lam = locate_point(mesh, np.asarray(point))
    print(f"point {point} -> triangle {tri}, barycentric {np.round(lam, 3)}")


def bump(x):
    return np.sin(np.pi * x[:, 0]) * np.sin(2 * np.pi * x[:, 1])


# Interpolate the bump on both element types and integrate the squared
# mismatch with a rule that is much more accurate than either space.
print("\ninterpolation error, L2 norm:")
print(f"{'N':>4} {'P1':>12} {'P2':>12}")
rule = triangle_rule(9)
previous = None
for N in (4, 8, 16, 32):
    mesh = build_unit_square_mesh(N)
    pts = physical_points(mesh, rule.points)
    wts = scaled_weights(mesh, rule.weights)
    exact = bump(pts.reshape(-1, 2)).reshape(wts.shape)
    errs = []
    for degree in (1, 2):
        space = build_space(mesh, degree)
        f_h = lagrange_interpolate(space, bump)
        vals = shape_values(degree, rule.points)
        approx = np.einsum("iq,mi->mq", vals, f_h.coefficients[space.element_dofs])
        errs.append(np.sqrt(np.sum(wts * (approx - exact) ** 2)))
    line = f"{N:>4} {errs[0]:12.3e} {errs[1]:12.3e}"
    if previous is not None:
        rates = [np.log2(p / e) for p, e in zip(previous, errs)]
        line += f"   rates {rates[0]:.2f} / {rates[1]:.2f}"
    previous = errs
    print(line)

print("\nP1 halves the error by 4x per refinement, P2 by 8x.")
