"""Quadrature rules and assembly of all bilinear forms of the scheme.

Assembled operators (all with exact quadrature, the integrands being
polynomials on straight triangles):

* mass matrix (phi_i, phi_j),
* stiffness nu * (grad phi_i, grad phi_j),
* pressure-gradient coupling B_a with (B_a)[i,j] = int (d q_j / d x_a) phi_i,
  which also serves the transposed pairing (u_a, d q / d x_a),
* the pressure stabilization s0(p, q) = sum_K h_K^{2k} sum_{|alpha|=k}
  (D^alpha p, D^alpha q)_K, and
* the stabilized Stokes projection system, solved once as an initializer via
  CG on the pressure Schur complement.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi, roots_legendre

from .errors import SolverConvergenceError
from .fe_space import (ScalarField, ScalarSpace, VectorField, dof_integrals,
                       grad_lambda, physical_points, scaled_weights,
                       shape_gradients, shape_values)
from .linalg import DeflationVector, LinearOperator, SparseSym, cg_solve

logger = logging.getLogger(__name__)


# ----------------------------------------------------------------------------
# Quadrature on the reference triangle
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Symmetric or product quadrature rule in barycentric coordinates.

    Weights sum to 1; an integral over a triangle K is |K| * sum(w_q * f(x_q)).
    """
    degree_exact: int
    points: np.ndarray   # (nq, 3) barycentric
    weights: np.ndarray  # (nq,)

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=np.float64))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        if abs(self.weights.sum() - 1.0) > 1e-14:
            raise ValueError(f"quadrature weights sum to {self.weights.sum()!r}, expected 1")


def _sym3(a: float, b: float, w: float):
    """The three cyclic points of a (a, b, b) orbit with a common weight."""
    return [((a, b, b), w), ((b, a, b), w), ((b, b, a), w)]


# Classic symmetric rules; weights are in the sum-to-one convention.
_D4 = (_sym3(0.816847572980459, 0.091576213509771, 0.109951743655322)
       + _sym3(0.108103018168070, 0.445948490915965, 0.223381589678011))
_D5 = ([((1 / 3, 1 / 3, 1 / 3), 0.225)]
       + _sym3(0.059715871789770, 0.470142064105115, 0.132394152788506)
       + _sym3(0.797426985353087, 0.101286507323456, 0.125939180544827))

_FIXED_RULES = {
    1: [((1 / 3, 1 / 3, 1 / 3), 1.0)],
    2: _sym3(2 / 3, 1 / 6, 1 / 3),
    4: _D4,
    5: _D5,
}


def _conical_rule(degree: int) -> QuadratureRule:
    """Gauss-Jacobi x Gauss-Legendre product rule, exact to the given degree.

    The triangle integral is written as int_0^1 (1-u) int_0^1 f(u, (1-u) s) ds du,
    so an n-point Jacobi(1,0) rule in u times an n-point Legendre rule in s is
    exact for total degree 2n - 1.
    """
    n = (degree + 2) // 2
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    u = 0.5 * (xj + 1.0)
    wu = wj / 4.0                      # so that sum wu * g(u) = int_0^1 (1-u) g(u) du
    xl, wl = roots_legendre(n)
    s = 0.5 * (xl + 1.0)
    ws = wl / 2.0
    pts = []
    wts = []
    for ui, wui in zip(u, wu):
        for sj, wsj in zip(s, ws):
            v = (1.0 - ui) * sj
            pts.append((1.0 - ui - v, ui, v))
            wts.append(wui * wsj)
    w = np.asarray(wts)
    w = w / w.sum()  # raw weights sum to the reference area 1/2; normalize to 1
    return QuadratureRule(2 * n - 1, np.asarray(pts), w)


def triangle_rule(degree: int) -> QuadratureRule:
    """Return a rule exact for polynomials of (at least) the requested degree.

    Degrees 1, 2, 4, 5 use fixed symmetric tables; a degree-3 request is served
    by the degree-4 rule; higher degrees use the conical product construction.
    """
    if not isinstance(degree, (int, np.integer)) or degree < 1:
        raise ValueError(f"quadrature degree must be a positive integer, got {degree!r}")
    degree = int(degree)
    if degree == 3:
        degree = 4
    if degree in _FIXED_RULES:
        entries = _FIXED_RULES[degree]
        pts = np.asarray([e[0] for e in entries])
        wts = np.asarray([e[1] for e in entries])
        return QuadratureRule(degree, pts, wts)
    if degree > 60:
        raise ValueError(f"quadrature degree {degree} is unreasonably large")
    return _conical_rule(degree)


def reference_moment(a: int, b: int, c: int) -> float:
    """Exact value of sum_q w_q * l0^a l1^b l2^c for any rule of sufficient degree.

    From int_K l0^a l1^b l2^c = 2 |K| a! b! c! / (a+b+c+2)!.
    """
    return 2.0 * math.factorial(a) * math.factorial(b) * math.factorial(c) \
        / math.factorial(a + b + c + 2)


# ----------------------------------------------------------------------------
# Matrix assembly
# ----------------------------------------------------------------------------

def _scatter_square(n: int, elem_dofs: np.ndarray, local: np.ndarray) -> SparseSym:
    m, nb, _ = local.shape
    rows = np.broadcast_to(elem_dofs[:, :, None], (m, nb, nb))
    cols = np.broadcast_to(elem_dofs[:, None, :], (m, nb, nb))
    coo = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))
    return SparseSym(coo)


def assemble_mass(space: ScalarSpace) -> SparseSym:
    """L2 mass matrix; symmetric positive definite on the unconstrained space."""
    rule = triangle_rule(2 * space.degree)
    vals = shape_values(space.degree, rule.points)  # (nb, nq)
    base = np.einsum("q,iq,jq->ij", rule.weights, vals, vals)
    local = space.mesh.element_areas[:, None, None] * base[None, :, :]
    return _scatter_square(space.n_dofs, space.element_dofs, local)


def assemble_stiffness(space: ScalarSpace, coefficient: float = 1.0) -> SparseSym:
    """coefficient * (grad phi_i, grad phi_j); SPSD with constants in the kernel."""
    rule = triangle_rule(max(2 * (space.degree - 1), 1))
    grads = shape_gradients(space, rule.points)  # (m, nb, nq, 2)
    local = np.einsum("q,miqd,mjqd->mij", rule.weights, grads, grads)
    local *= coefficient * space.mesh.element_areas[:, None, None]
    return _scatter_square(space.n_dofs, space.element_dofs, local)


def assemble_pressure_gradient(v_space: ScalarSpace, q_space: ScalarSpace):
    """Coupling matrices B_1, B_2 with (B_a)[i,j] = int (d q_j / d x_a) * phi_i.

    B_a applied to pressure coefficients gives the (grad p, v) pairing per
    velocity component; B_a^T applied to a velocity component gives
    (u_a, d q / d x_a). Returns two CSR matrices of shape (dim V, dim Q).
    """
    if v_space.mesh is not q_space.mesh:
        raise ValueError("velocity and pressure spaces live on different meshes")
    rule = triangle_rule(max(v_space.degree + q_space.degree - 1, 1))
    vals_v = shape_values(v_space.degree, rule.points)          # (nbv, nq)
    grads_q = shape_gradients(q_space, rule.points)             # (m, nbq, nq, 2)
    local = np.einsum("q,iq,mjqa->mija", rule.weights, vals_v, grads_q)
    local *= v_space.mesh.element_areas[:, None, None, None]
    m, nbv, nbq, _ = local.shape
    rows = np.broadcast_to(v_space.element_dofs[:, :, None], (m, nbv, nbq)).ravel()
    cols = np.broadcast_to(q_space.element_dofs[:, None, :], (m, nbv, nbq)).ravel()
    shape = (v_space.n_dofs, q_space.n_dofs)
    B1 = sp.coo_matrix((local[..., 0].ravel(), (rows, cols)), shape=shape).tocsr()
    B2 = sp.coo_matrix((local[..., 1].ravel(), (rows, cols)), shape=shape).tocsr()
    B1.sum_duplicates()
    B2.sum_duplicates()
    return B1, B2


def assemble_stabilization(q_space: ScalarSpace, k: int | None = None) -> SparseSym:
    """The pressure stabilization form s0 as a matrix.

    For k = 1 this is sum_K h_K^2 (grad p, grad q)_K (constants in the kernel);
    for k = 2 it is sum_K h_K^4 sum over second-derivative multi-indices
    (2,0), (1,1), (0,2), each counted once. Second derivatives of P2 functions
    are constant per element, so the element integral is closed-form.
    """
    if k is None:
        k = q_space.degree
    if k > 2:
        raise ValueError(f"stabilization order k={k} is unsupported (max 2)")
    if k != q_space.degree:
        raise ValueError(f"stabilization order k={k} must match the space degree "
                         f"{q_space.degree}")
    mesh = q_space.mesh
    areas = mesh.element_areas
    hK = mesh.element_diameters
    if k == 1:
        gl = grad_lambda(mesh)  # (m, 3, 2), constant gradients
        local = np.einsum("mid,mjd->mij", gl, gl)
        local *= (hK ** 2 * areas)[:, None, None]
        return _scatter_square(q_space.n_dofs, q_space.element_dofs, local)

    gl = grad_lambda(mesh)
    m = mesh.n_triangles
    # Rows of second derivatives (D20, D11, D02) for the 6 local P2 functions.
    D = np.empty((m, 6, 3))
    for i in range(3):
        g = gl[:, i]
        D[:, i, 0] = 4.0 * g[:, 0] * g[:, 0]
        D[:, i, 1] = 4.0 * g[:, 0] * g[:, 1]
        D[:, i, 2] = 4.0 * g[:, 1] * g[:, 1]
        j, kk = (i + 1) % 3, (i + 2) % 3
        gj, gk = gl[:, j], gl[:, kk]
        D[:, 3 + i, 0] = 8.0 * gj[:, 0] * gk[:, 0]
        D[:, 3 + i, 1] = 4.0 * (gj[:, 0] * gk[:, 1] + gj[:, 1] * gk[:, 0])
        D[:, 3 + i, 2] = 8.0 * gj[:, 1] * gk[:, 1]
    local = np.einsum("mia,mja->mij", D, D)
    local *= (hK ** 4 * areas)[:, None, None]
    return _scatter_square(q_space.n_dofs, q_space.element_dofs, local)


# ----------------------------------------------------------------------------
# Right-hand-side assembly
# ----------------------------------------------------------------------------

class LoadAssembler:
    """Precomputed tables for repeated (f, phi_i) integrations on one space."""

    def __init__(self, space: ScalarSpace, degree: int = 9):
        self.space = space
        rule = triangle_rule(degree)
        self.points = physical_points(space.mesh, rule.points)     # (m, nq, 2)
        self.weights = scaled_weights(space.mesh, rule.weights)    # (m, nq)
        self.values = shape_values(space.degree, rule.points)      # (nb, nq)
        self._flat_points = self.points.reshape(-1, 2)
        self._flat_dofs = space.element_dofs.ravel()

    def scalar_load(self, f, t: float | None = None) -> np.ndarray:
        """Vector with entries int f(x, t) * phi_i(x) dx."""
        fv = np.asarray(f(self._flat_points) if t is None else f(self._flat_points, t))
        fv = fv.reshape(self.weights.shape)
        contrib = np.einsum("mq,mq,iq->mi", self.weights, fv, self.values)
        return np.bincount(self._flat_dofs, weights=contrib.ravel(),
                           minlength=self.space.n_dofs)

    def vector_load(self, f, t: float | None = None) -> np.ndarray:
        """(n_dofs, 2) array with entries int f_a(x, t) * phi_i(x) dx."""
        fv = np.asarray(f(self._flat_points) if t is None else f(self._flat_points, t))
        fv = fv.reshape(self.weights.shape + (2,))
        contrib = np.einsum("mq,mqc,iq->mic", self.weights, fv, self.values)
        out = np.empty((self.space.n_dofs, 2))
        for c in range(2):
            out[:, c] = np.bincount(self._flat_dofs, weights=contrib[:, :, c].ravel(),
                                    minlength=self.space.n_dofs)
        return out


# ----------------------------------------------------------------------------
# Stokes projection
# ----------------------------------------------------------------------------

def solve_stokes_projection(u_star, grad_u_star, p_star, v_space: ScalarSpace,
                            q_space: ScalarSpace, nu: float, delta0: float,
                            t: float = 0.0, cg_tol: float = 1e-11,
                            div_u_star=None):
    """Discrete stabilized Stokes projection of a smooth pair (u*, p*).

    Solves, for all discrete test pairs (v, q) with v vanishing on the boundary,

        nu (grad U, grad v) - (P, div v) = nu (grad u*, grad v) - (p*, div v)
        -(div U, q) - delta0 * s0(P, q)  = -(div u*, q)

    by CG on the pressure Schur complement with nested velocity solves. The
    right-hand sides use order-9 quadrature of the closed-form data. Returns
    (VectorField, ScalarField, info dict); the pressure has zero discrete mean
    and the assembled block residual is verified to be below 1e-9 relative.

    Args:
        u_star: callable (points, t) -> (n, 2).
        grad_u_star: callable (points, t) -> (n, 2, 2), entry [i, a, b] = d u_a / d x_b.
        p_star: callable (points, t) -> (n,).
        div_u_star: optional callable; defaults to the trace of grad_u_star.
    """
    if v_space.mesh is not q_space.mesh:
        raise ValueError("velocity and pressure spaces live on different meshes")
    if v_space.degree == q_space.degree and delta0 <= 0.0:
        raise ValueError("equal-order velocity/pressure requires delta0 > 0")

    free = v_space.free_dofs
    if len(free) == 0:
        raise ValueError("velocity space has no unconstrained DOFs")
    A = assemble_stiffness(v_space, coefficient=nu)
    A_ff = SparseSym(A.csr[free][:, free])
    B1, B2 = assemble_pressure_gradient(v_space, q_space)
    Bf = (B1[free], B2[free])
    S0 = assemble_stabilization(q_space) if delta0 > 0.0 else None
    m_vec = DeflationVector(dof_integrals(q_space))

    # Right-hand sides by order-9 quadrature of the closed-form data.
    rule = triangle_rule(9)
    pts = physical_points(v_space.mesh, rule.points)
    wts = scaled_weights(v_space.mesh, rule.weights)
    flat = pts.reshape(-1, 2)
    gu = np.asarray(grad_u_star(flat, t)).reshape(wts.shape + (2, 2))
    pv = np.asarray(p_star(flat, t)).reshape(wts.shape)
    grads_v = shape_gradients(v_space, rule.points)  # (m, nbv, nq, 2)
    # G_a[i] = int nu * grad u*_a . grad phi_i - p* d phi_i / d x_a
    contrib = nu * np.einsum("mq,mqab,miqb->mia", wts, gu, grads_v) \
        - np.einsum("mq,mq,miqa->mia", wts, pv, grads_v)
    G = np.empty((v_space.n_dofs, 2))
    flat_dofs = v_space.element_dofs.ravel()
    for a in range(2):
        G[:, a] = np.bincount(flat_dofs, weights=contrib[:, :, a].ravel(),
                              minlength=v_space.n_dofs)
    if div_u_star is None:
        div_u_star = lambda x, tt: np.trace(np.asarray(grad_u_star(x, tt)), axis1=-2, axis2=-1)
    q_load = LoadAssembler(q_space, degree=9)
    g = -q_load.scalar_load(div_u_star, t)

    # Inner solves run two orders tighter than the outer target, floored at
    # the smallest relative residual CG reliably reaches in double precision.
    # That floor grows with the stiffness conditioning, roughly like sqrt(n).
    eps = float(np.finfo(np.float64).eps)
    inner_tol = max(cg_tol * 1e-2, 50.0 * math.sqrt(A_ff.n) * eps)
    inner_iters = 0

    def inv_A(rhs):
        nonlocal inner_iters
        res = cg_solve(A_ff, rhs, tol=inner_tol, precond="jacobi")
        inner_iters += res.iterations
        return res.x

    def schur_apply(p):
        out = np.zeros_like(p)
        for a in range(2):
            out += Bf[a].T @ inv_A(Bf[a] @ p)
        if S0 is not None:
            out += delta0 * S0.matvec(p)
        return out

    rhs_S = -g.copy()
    for a in range(2):
        rhs_S += Bf[a].T @ inv_A(G[free, a])
    schur = LinearOperator(q_space.n_dofs, schur_apply)
    outer = cg_solve(schur, rhs_S, tol=cg_tol, precond="none", deflate=m_vec)
    P = outer.x

    U = np.zeros((v_space.n_dofs, 2))
    for a in range(2):
        U[free, a] = inv_A(G[free, a] - Bf[a] @ P)

    # Verify the assembled block residual directly.
    res_sq = 0.0
    scale_sq = float(np.linalg.norm(g) ** 2)
    for a in range(2):
        r = A_ff.matvec(U[free, a]) + Bf[a] @ P - G[free, a]
        res_sq += float(r @ r)
        scale_sq += float(G[free, a] @ G[free, a])
    rc = -g.copy()
    for a in range(2):
        rc += Bf[a].T @ U[free, a]
    if S0 is not None:
        rc -= delta0 * S0.matvec(P)
    rc -= rc.sum() / len(rc)  # residual modulo the pressure constant
    res_sq += float(rc @ rc)
    rel_res = math.sqrt(res_sq) / math.sqrt(scale_sq) if scale_sq > 0.0 else math.sqrt(res_sq)
    if rel_res > 1e-9:
        raise SolverConvergenceError(
            f"Stokes projection block residual {rel_res:.3e} exceeds 1e-9")

    info = {"outer_iterations": outer.iterations, "inner_iterations": inner_iters,
            "relative_residual": rel_res}
    logger.debug("stokes projection: %s", info)
    return (VectorField(v_space, U, time_label=t),
            ScalarField(q_space, P),
            info)
