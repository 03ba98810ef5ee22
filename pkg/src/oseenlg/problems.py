"""Manufactured test problem and discrete error accumulation.

The built-in problem is a divergence-free velocity vanishing on the boundary
of the unit square together with a zero-mean pressure, both with nontrivial
time dependence:

    u1(x, t) =  (1 + sin(pi t)) * sin(pi x1)^2 * sin(2 pi x2)
    u2(x, t) = -(1 + sin(pi t)) * sin(2 pi x1) * sin(pi x2)^2
    p(x, t)  = -cos(pi x2) + 0.5 * cos(4 pi (t + x1))

The convecting field is w = u, and the body force f is whatever makes (u, p)
solve u_t + (w . grad) u - nu Lap u + grad p = f, assembled from hand-written
derivatives below. All evaluators are vectorized over an (n, 2) array of
points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import triangle_rule
from .fe_space import (ScalarField, ScalarSpace, VectorField, physical_points,
                       scaled_weights, shape_gradients, shape_values)

PI = np.pi


class ManufacturedProblem:
    """Closed-form Oseen data with solution known everywhere.

    Args:
        nu: viscosity (stored; the force term depends on it).
    """

    def __init__(self, nu: float):
        if nu <= 0:
            raise ValueError(f"viscosity must be positive, got {nu}")
        self.nu = float(nu)

    # -- velocity and its derivatives -----------------------------------

    @staticmethod
    def _g(t: float) -> float:
        return 1.0 + np.sin(PI * t)

    def u(self, x, t: float) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        g = self._g(t)
        s1, s2 = np.sin(PI * x[:, 0]), np.sin(PI * x[:, 1])
        out = np.empty_like(x)
        out[:, 0] = g * s1 * s1 * np.sin(2 * PI * x[:, 1])
        out[:, 1] = -g * np.sin(2 * PI * x[:, 0]) * s2 * s2
        return out

    def w(self, x, t: float) -> np.ndarray:
        return self.u(x, t)

    def u0(self, x) -> np.ndarray:
        return self.u(x, 0.0)

    def u_t(self, x, t: float) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        gdot = PI * np.cos(PI * t)
        s1, s2 = np.sin(PI * x[:, 0]), np.sin(PI * x[:, 1])
        out = np.empty_like(x)
        out[:, 0] = gdot * s1 * s1 * np.sin(2 * PI * x[:, 1])
        out[:, 1] = -gdot * np.sin(2 * PI * x[:, 0]) * s2 * s2
        return out

    def grad_u(self, x, t: float) -> np.ndarray:
        """(n, 2, 2) array with entry [., a, b] = d u_a / d x_b."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        g = self._g(t)
        x1, x2 = x[:, 0], x[:, 1]
        s1, s2 = np.sin(PI * x1), np.sin(PI * x2)
        sin2x1, sin2x2 = np.sin(2 * PI * x1), np.sin(2 * PI * x2)
        cos2x1, cos2x2 = np.cos(2 * PI * x1), np.cos(2 * PI * x2)
        G = np.empty((len(x), 2, 2))
        G[:, 0, 0] = g * PI * sin2x1 * sin2x2
        G[:, 0, 1] = 2 * PI * g * s1 * s1 * cos2x2
        G[:, 1, 0] = -2 * PI * g * cos2x1 * s2 * s2
        G[:, 1, 1] = -g * PI * sin2x1 * sin2x2
        return G

    def laplace_u(self, x, t: float) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        g = self._g(t)
        x1, x2 = x[:, 0], x[:, 1]
        s1, s2 = np.sin(PI * x1), np.sin(PI * x2)
        sin2x1, sin2x2 = np.sin(2 * PI * x1), np.sin(2 * PI * x2)
        cos2x1, cos2x2 = np.cos(2 * PI * x1), np.cos(2 * PI * x2)
        out = np.empty_like(x)
        out[:, 0] = 2 * PI ** 2 * g * (cos2x1 * sin2x2 - 2 * s1 * s1 * sin2x2)
        out[:, 1] = 2 * PI ** 2 * g * (2 * sin2x1 * s2 * s2 - sin2x1 * cos2x2)
        return out

    def div_u(self, x, t: float) -> np.ndarray:
        G = self.grad_u(x, t)
        return G[:, 0, 0] + G[:, 1, 1]

    # -- pressure --------------------------------------------------------

    def p(self, x, t: float) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return -np.cos(PI * x[:, 1]) + 0.5 * np.cos(4 * PI * (t + x[:, 0]))

    def grad_p(self, x, t: float) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.empty_like(x)
        out[:, 0] = -2 * PI * np.sin(4 * PI * (t + x[:, 0]))
        out[:, 1] = PI * np.sin(PI * x[:, 1])
        return out

    # -- force -----------------------------------------------------------

    def f(self, x, t: float) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        G = self.grad_u(x, t)
        wv = self.u(x, t)
        conv = np.einsum("nab,nb->na", G, wv)
        return self.u_t(x, t) + conv - self.nu * self.laplace_u(x, t) + self.grad_p(x, t)

    def eval_exact(self, name: str, x, t: float) -> np.ndarray:
        table = {"u": self.u, "p": self.p, "w": self.w, "f": self.f,
                 "grad_u": self.grad_u, "u_t": self.u_t, "grad_p": self.grad_p,
                 "laplace_u": self.laplace_u, "div_u": self.div_u}
        if name not in table:
            raise KeyError(f"unknown exact quantity {name!r}; "
                           f"one of {sorted(table)}")
        return table[name](x, t)


class ZeroProblem:
    """All-zero data; the discrete solution must stay identically zero.

    Shares the evaluator interface of ManufacturedProblem so it can drive
    the scheme in fixed-point tests.
    """

    def __init__(self, nu: float = 1.0):
        self.nu = float(nu)

    @staticmethod
    def _zeros_like(x, ncomp: int = 2):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.zeros((len(x), ncomp)) if ncomp > 1 else np.zeros(len(x))

    def u(self, x, t: float):
        return self._zeros_like(x)

    def w(self, x, t: float):
        return self._zeros_like(x)

    def f(self, x, t: float):
        return self._zeros_like(x)

    def u0(self, x):
        return self._zeros_like(x)

    def p(self, x, t: float):
        return self._zeros_like(x, 1)

    def grad_u(self, x, t: float):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.zeros((len(x), 2, 2))

    def div_u(self, x, t: float):
        return self._zeros_like(x, 1)


@dataclass
class ErrorReport:
    """Relative discretization errors accumulated over a run.

    E_linf_l2_u: max over time levels (including the initial one) of the
        velocity L2 error, divided by the same norm of the exact solution.
    E_l2_h10_u: discrete l2-in-time H1-seminorm error of the velocity
        (levels n >= 1), relative.
    E_l2_l2_p: discrete l2-in-time L2 error of the pressure (levels n >= 1),
        relative.
    """
    E_linf_l2_u: float
    E_l2_h10_u: float
    E_l2_l2_p: float
    u_linf_l2_exact: float
    u_l2_h10_exact: float
    p_l2_l2_exact: float
    n_levels: int

    def as_dict(self) -> dict:
        return {"E_linf_l2_u": self.E_linf_l2_u,
                "E_l2_h10_u": self.E_l2_h10_u,
                "E_l2_l2_p": self.E_l2_l2_p}


class ErrorAccumulator:
    """Streaming computation of the three relative error norms.

    Time levels are fed one by one. Level 0 participates only in the
    max-in-time velocity norm; the l2-in-time sums start at level 1, each
    weighted by dt. Numerator and denominator of every relative error are
    accumulated with the same rule, so the ratios are insensitive to the
    time grid's endpoints. Spatial integrals use a quadrature rule of
    degree 9 throughout.
    """

    def __init__(self, problem: ManufacturedProblem, v_space: ScalarSpace,
                 q_space: ScalarSpace, dt: float):
        self.problem = problem
        self.dt = float(dt)
        mesh = v_space.mesh
        if q_space.mesh is not mesh:
            raise ValueError("velocity and pressure spaces must share one mesh")
        rule = triangle_rule(9)
        self._pts = physical_points(mesh, rule.points)        # (m, nq, 2)
        self._wts = scaled_weights(mesh, rule.weights)        # (m, nq)
        self._flat = self._pts.reshape(-1, 2)
        self._vals_v = shape_values(v_space.degree, rule.points)   # (nbv, nq)
        self._vals_q = shape_values(q_space.degree, rule.points)
        self._grads_v = shape_gradients(v_space, rule.points)      # (m, nbv, nq, 2)
        self._vdofs = v_space.element_dofs
        self._qdofs = q_space.element_dofs
        self._max_u_err2 = 0.0
        self._max_u_exact2 = 0.0
        self._sum_h1_err2 = 0.0
        self._sum_h1_exact2 = 0.0
        self._sum_p_err2 = 0.0
        self._sum_p_exact2 = 0.0
        self.n_levels = 0

    def _fields_at_quadrature(self, u: VectorField, p: ScalarField):
        uc = u.components[self._vdofs]                    # (m, nbv, 2)
        uh = np.einsum("iq,mic->mqc", self._vals_v, uc)
        gh = np.einsum("miqb,mic->mqcb", self._grads_v, uc)
        ph = np.einsum("iq,mi->mq", self._vals_q, p.coefficients[self._qdofs])
        return uh, gh, ph

    def add_level(self, n: int, t: float, u: VectorField, p: ScalarField) -> None:
        uh, gh, ph = self._fields_at_quadrature(u, p)
        self._accumulate_values(n, t, uh, gh, ph)

    def _accumulate_values(self, n: int, t: float, uh, gh, ph) -> None:
        """Core accumulation on quadrature-point values; split out for testing."""
        m, nq = self._wts.shape
        ue = self.problem.u(self._flat, t).reshape(m, nq, 2)
        ge = self.problem.grad_u(self._flat, t).reshape(m, nq, 2, 2)
        pe = self.problem.p(self._flat, t).reshape(m, nq)

        du2 = float(np.einsum("mq,mqc->", self._wts, (uh - ue) ** 2))
        ue2 = float(np.einsum("mq,mqc->", self._wts, ue ** 2))
        self._max_u_err2 = max(self._max_u_err2, du2)
        self._max_u_exact2 = max(self._max_u_exact2, ue2)

        if n >= 1:
            dg2 = float(np.einsum("mq,mqcb->", self._wts, (gh - ge) ** 2))
            ge2 = float(np.einsum("mq,mqcb->", self._wts, ge ** 2))
            dp2 = float(np.einsum("mq,mq->", self._wts, (ph - pe) ** 2))
            pe2 = float(np.einsum("mq,mq->", self._wts, pe ** 2))
            self._sum_h1_err2 += self.dt * dg2
            self._sum_h1_exact2 += self.dt * ge2
            self._sum_p_err2 += self.dt * dp2
            self._sum_p_exact2 += self.dt * pe2
        self.n_levels += 1

    def report(self) -> ErrorReport:
        if self.n_levels == 0:
            raise RuntimeError("no time levels accumulated")

        def rel(num2: float, den2: float) -> float:
            den = np.sqrt(den2)
            return float(np.sqrt(num2) / den) if den > 0 else float(np.sqrt(num2))

        return ErrorReport(
            E_linf_l2_u=rel(self._max_u_err2, self._max_u_exact2),
            E_l2_h10_u=rel(self._sum_h1_err2, self._sum_h1_exact2),
            E_l2_l2_p=rel(self._sum_p_err2, self._sum_p_exact2),
            u_linf_l2_exact=float(np.sqrt(self._max_u_exact2)),
            u_l2_h10_exact=float(np.sqrt(self._sum_h1_exact2)),
            p_l2_l2_exact=float(np.sqrt(self._sum_p_exact2)),
            n_levels=self.n_levels,
        )
