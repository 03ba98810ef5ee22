"""Three-stage projection time stepper with characteristic advection.

Each step advances (u_tilde, p) by:

  Stage 2 (momentum): per velocity component, solve
      [(1/dt) M + nu A]_ff  u_tilde_f = (1/dt) (advected term) - B p_now + load(f)
  restricted to the homogeneous-Dirichlet velocity space.

  Stage 3 (pressure): solve the singular-but-deflated SPD system
      [A_p + (delta0/dt) S0] p_next = A_p p_now + (1/dt) B^T u_tilde
  and shift the result to zero weighted mean.

  Stage 1 (projection): the end-of-step velocity u = u_tilde - dt grad(p_next
  - p_now) lives outside the velocity FE space and is never materialized; what
  the next advection step needs is its L2 projection back onto that space,
      M_ff (u_proj)_f = [M u_tilde - dt B (p_next - p_now)]_f,
  computed here at the end of the step so the state always carries it.

All three matrices are constant in time and factor-free (CG solves only); they
are assembled once per mesh/parameter combination.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import (LoadAssembler, assemble_mass, assemble_pressure_gradient,
                       assemble_stabilization, assemble_stiffness,
                       solve_stokes_projection)
from .characteristics import (build_linearized_velocity, check_time_step,
                              element_jacobians, integrate_composed_term)
from .errors import ConfigError
from .fe_space import (ScalarField, ScalarSpace, VectorField, dof_integrals,
                       interpolate_vector, lagrange_interpolate)
from .linalg import DeflationVector, SparseSym, cg_solve
from .mesh import TriMesh
from .problems import ErrorAccumulator, ErrorReport, ManufacturedProblem

logger = logging.getLogger(__name__)

DIAG_HEADER = ("n,t,cg_iters_s1,cg_iters_s2a,cg_iters_s2b,cg_iters_s3,"
               "div_residual,jac_min,jac_max,u_l2")

INIT_MODES = ("lagrange", "stokes_projection")


@dataclass(frozen=True)
class SchemeParams:
    """Discretization parameters: degrees (k velocity, l pressure),
    stabilization weight, viscosity, and time grid."""
    k: int
    l: int
    delta0: float
    nu: float
    dt: float
    T: float
    cg_tol: float = 1e-10
    init_mode: str = "lagrange"
    composed_method: str = "clipping"
    quad_degree: int | None = None

    def __post_init__(self):
        if self.k not in (1, 2) or self.l not in (1, 2):
            raise ConfigError(f"polynomial degrees must be 1 or 2, got k={self.k}, l={self.l}")
        if self.l > self.k:
            raise ConfigError(f"pressure degree l={self.l} above velocity degree k={self.k} "
                              "is not supported")
        if self.delta0 < 0:
            raise ConfigError(f"stabilization parameter must be >= 0, got {self.delta0}")
        if self.k == self.l and self.delta0 == 0:
            raise ConfigError(f"equal-order pair ({self.k},{self.l}) requires a positive "
                              "stabilization parameter")
        if self.nu <= 0:
            raise ConfigError(f"viscosity must be positive, got {self.nu}")
        if self.dt <= 0:
            raise ConfigError(f"time step must be positive, got {self.dt}")
        if self.T < 0:
            raise ConfigError(f"final time must be >= 0, got {self.T}")
        if self.cg_tol <= 0:
            raise ConfigError(f"cg_tol must be positive, got {self.cg_tol}")
        if self.init_mode not in INIT_MODES:
            raise ConfigError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")
        if self.composed_method not in ("clipping", "quadrature"):
            raise ConfigError(f"composed_method must be 'clipping' or 'quadrature', "
                              f"got {self.composed_method!r}")

    @property
    def n_steps(self) -> int:
        return int(np.floor(self.T / self.dt + 1e-12))

    def label(self) -> str:
        return f"scheme({self.k},{self.l},{self.delta0:g})"


@dataclass
class SchemeState:
    """Discrete state after step n: tentative velocity, two pressure levels,
    and the projected end-of-step velocity the next advection uses."""
    n: int
    t: float
    u_tilde: VectorField
    p_now: ScalarField
    p_prev: ScalarField
    u_proj: VectorField


@dataclass
class StepDiagnostics:
    n: int
    t: float
    cg_iters_s1: int
    cg_iters_s2a: int
    cg_iters_s2b: int
    cg_iters_s3: int
    div_residual: float
    jac_min: float
    jac_max: float
    u_l2: float
    div_scale: float = 0.0
    p_mean: float = 0.0
    cfl_margin: float = 0.0

    def csv_row(self) -> str:
        return (f"{self.n},{float(self.t)!r},{self.cg_iters_s1},{self.cg_iters_s2a},"
                f"{self.cg_iters_s2b},{self.cg_iters_s3},{float(self.div_residual)!r},"
                f"{float(self.jac_min)!r},{float(self.jac_max)!r},{float(self.u_l2)!r}")


class OseenScheme:
    """Assembles the time-independent matrices once and advances the state.

    Attributes of interest after construction: v_space (velocity, homogeneous
    Dirichlet), q_space (pressure, zero weighted mean), p1_space (for the
    linearized convecting velocity).
    """

    def __init__(self, mesh: TriMesh, params: SchemeParams):
        self.mesh = mesh
        self.params = params
        self.v_space = ScalarSpace(mesh, params.k, "zero_boundary")
        self.q_space = ScalarSpace(mesh, params.l, "zero_mean")
        self.p1_space = ScalarSpace(mesh, 1, "none")
        free = self.v_space.free_dofs
        self.free = free

        self.mass = assemble_mass(self.v_space)
        self.stiff = assemble_stiffness(self.v_space)
        M_ff = self.mass.csr[free][:, free]
        A_ff = self.stiff.csr[free][:, free]
        self.mass_ff = SparseSym(M_ff)
        self.stage2_matrix = SparseSym(M_ff / params.dt + params.nu * A_ff)

        self.pressure_stiff = assemble_stiffness(self.q_space)
        self.stab = assemble_stabilization(self.q_space, k=params.l)
        self.stage3_matrix = SparseSym(
            self.pressure_stiff.csr + (params.delta0 / params.dt) * self.stab.csr)
        self.B1, self.B2 = assemble_pressure_gradient(self.v_space, self.q_space)
        self.deflation = DeflationVector(dof_integrals(self.q_space))
        self.load = LoadAssembler(self.v_space, degree=9)

    # -- initialization ---------------------------------------------------

    def initialize(self, problem: ManufacturedProblem) -> SchemeState:
        params = self.params
        if params.init_mode == "lagrange":
            u0 = interpolate_vector(self.v_space, problem.u, t=0.0)
            u0.components[self.v_space.boundary_dofs] = 0.0
            p0 = lagrange_interpolate(self.q_space, problem.p, t=0.0)
        else:
            u0, p0, _ = solve_stokes_projection(
                problem.u, problem.grad_u, problem.p, self.v_space, self.q_space,
                params.nu, params.delta0, t=0.0,
                cg_tol=min(params.cg_tol, 1e-11), div_u_star=problem.div_u)
        u0.time_label = 0.0
        return SchemeState(n=0, t=0.0, u_tilde=u0, p_now=p0, p_prev=p0.copy(),
                           u_proj=u0.copy())

    # -- single step -------------------------------------------------------

    def step(self, state: SchemeState, problem: ManufacturedProblem):
        """Advance from level n to n + 1; returns (new_state, StepDiagnostics)."""
        params = self.params
        dt = params.dt
        t_now = state.t
        t_next = t_now + dt
        free = self.free

        wh = build_linearized_velocity(problem.w, t_now, self.mesh, self.p1_space)
        margin = check_time_step(wh, dt)
        jac = element_jacobians(wh, dt)

        composed = integrate_composed_term(
            state.u_proj, wh, dt, self.v_space, method=params.composed_method,
            quad_degree=params.quad_degree)

        load_next = self.load.vector_load(problem.f, t=t_next)
        grad_p = np.stack([self.B1 @ state.p_now.coefficients,
                           self.B2 @ state.p_now.coefficients], axis=1)
        rhs2 = composed / dt - grad_p + load_next

        u_next = np.zeros((self.v_space.n_dofs, 2))
        s2_iters = [0, 0]
        for a in range(2):
            res = cg_solve(self.stage2_matrix, rhs2[free, a], tol=params.cg_tol)
            u_next[free, a] = res.x
            s2_iters[a] = res.iterations
        u_tilde_next = VectorField(self.v_space, u_next, time_label=t_next)

        div_u = self.B1.T @ u_next[:, 0] + self.B2.T @ u_next[:, 1]
        rhs3 = self.pressure_stiff.matvec(state.p_now.coefficients) + div_u / dt
        res3 = cg_solve(self.stage3_matrix, rhs3, tol=params.cg_tol,
                        deflate=self.deflation)
        p_next = ScalarField(self.q_space, res3.x)

        # the projection residual of the divergence equation, recomputed
        # directly: B^T u_tilde - dt A_p (p_next - p_now) - delta0 S0 p_next
        div_residual = dt * float(np.linalg.norm(
            rhs3 - self.stage3_matrix.matvec(p_next.coefficients)))
        div_scale = (dt * float(np.linalg.norm(
            self.pressure_stiff.matvec(state.p_now.coefficients)))
            + float(np.linalg.norm(div_u)))

        # stage 1 for the state the next step will advect: L2 projection of
        # u_tilde - dt grad(p_next - p_now) back onto the velocity space
        dp = p_next.coefficients - state.p_now.coefficients
        rhs1 = (self.mass.csr @ u_next
                - dt * np.stack([self.B1 @ dp, self.B2 @ dp], axis=1))
        u_proj = np.zeros_like(u_next)
        s1_iters = 0
        for a in range(2):
            res = cg_solve(self.mass_ff, rhs1[free, a], tol=params.cg_tol)
            u_proj[free, a] = res.x
            s1_iters += res.iterations
        u_proj_next = VectorField(self.v_space, u_proj, time_label=t_next)

        u_l2 = float(np.sqrt(np.einsum("ic,ic->", u_next, self.mass.csr @ u_next)))
        p_mean = float(self.deflation.m @ p_next.coefficients)

        diag = StepDiagnostics(
            n=state.n + 1, t=t_next, cg_iters_s1=s1_iters,
            cg_iters_s2a=s2_iters[0], cg_iters_s2b=s2_iters[1],
            cg_iters_s3=res3.iterations, div_residual=div_residual,
            jac_min=float(jac.min()), jac_max=float(jac.max()), u_l2=u_l2,
            div_scale=div_scale, p_mean=p_mean, cfl_margin=margin)
        new_state = SchemeState(n=state.n + 1, t=t_next, u_tilde=u_tilde_next,
                                p_now=p_next, p_prev=state.p_now, u_proj=u_proj_next)
        return new_state, diag


def run(problem: ManufacturedProblem, params: SchemeParams, mesh: TriMesh,
        diag_path=None, accumulate: bool = True):
    """Time-march the scheme to T and accumulate error norms.

    Returns:
        (final state, ErrorReport or None, list of StepDiagnostics).
    """
    t0 = time.perf_counter()
    engine = OseenScheme(mesh, params)
    state = engine.initialize(problem)
    n_steps = params.n_steps

    acc = None
    if accumulate:
        acc = ErrorAccumulator(problem, engine.v_space, engine.q_space, params.dt)
        acc.add_level(0, 0.0, state.u_tilde, state.p_now)

    diag_file = open(diag_path, "w", encoding="ascii") if diag_path else None
    if diag_file:
        diag_file.write(DIAG_HEADER + "\n")
    diagnostics: list[StepDiagnostics] = []
    try:
        for _ in range(n_steps):
            state, diag = engine.step(state, problem)
            diagnostics.append(diag)
            if acc is not None:
                acc.add_level(state.n, state.t, state.u_tilde, state.p_now)
            if diag_file:
                diag_file.write(diag.csv_row() + "\n")
    finally:
        if diag_file:
            diag_file.close()

    report: ErrorReport | None = acc.report() if acc is not None else None
    logger.info("%s N_T=%d done in %.2fs", params.label(), n_steps,
                time.perf_counter() - t0)
    return state, report, diagnostics
