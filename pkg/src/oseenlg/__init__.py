"""Pressure-stabilized projection solver with characteristic advection
for the transient Oseen problem on the unit square.

The public surface: meshes and FE spaces, assembly of the sparse operators,
the exact advected-term integrator, the three-stage time stepper, the
manufactured test problem, and the study/CLI harness.
"""

from .errors import (ConfigError, DomainError, GeometryConsistencyError,
                     HypothesisViolationError, OseenLGError,
                     SolverConvergenceError)
from .mesh import (TriMesh, build_unit_square_mesh, load_mesh, locate_point,
                   save_mesh)
from .fe_space import (ScalarField, ScalarSpace, VectorField, build_space,
                       dof_integrals, evaluate_scalar, evaluate_vector,
                       interpolate_vector, lagrange_interpolate,
                       physical_points, scaled_weights, shape_gradients,
                       shape_values)
from .linalg import CgResult, DeflationVector, SparseSym, cg_solve
from .assembly import (LoadAssembler, QuadratureRule, assemble_mass,
                       assemble_pressure_gradient, assemble_stabilization,
                       assemble_stiffness, solve_stokes_projection,
                       triangle_rule)
from .characteristics import (ClippedCell, LinearizedVelocity,
                              build_linearized_velocity, check_time_step,
                              clipped_cells, dump_clipped_cells,
                              element_jacobians, foot_triangles,
                              integrate_composed_term, map_x1)
from .problems import ErrorAccumulator, ErrorReport, ManufacturedProblem, ZeroProblem
from .scheme import OseenScheme, SchemeParams, SchemeState, StepDiagnostics, run
from .harness import (EocTable, StudyConfig, cli_main, parse_config_file,
                      run_study, run_verify_suite, time_step_for)

__version__ = "0.1.0"

__all__ = [
    "OseenLGError", "ConfigError", "DomainError", "GeometryConsistencyError",
    "HypothesisViolationError", "SolverConvergenceError",
    "TriMesh", "build_unit_square_mesh", "save_mesh", "load_mesh", "locate_point",
    "ScalarSpace", "ScalarField", "VectorField", "build_space",
    "lagrange_interpolate", "interpolate_vector", "evaluate_scalar", "evaluate_vector",
    "physical_points", "scaled_weights", "shape_values", "shape_gradients",
    "dof_integrals",
    "SparseSym", "DeflationVector", "CgResult", "cg_solve",
    "QuadratureRule", "triangle_rule", "assemble_mass", "assemble_stiffness",
    "assemble_pressure_gradient", "assemble_stabilization", "LoadAssembler",
    "solve_stokes_projection",
    "LinearizedVelocity", "ClippedCell", "build_linearized_velocity", "map_x1",
    "integrate_composed_term", "clipped_cells", "dump_clipped_cells",
    "foot_triangles", "element_jacobians", "check_time_step",
    "ManufacturedProblem", "ZeroProblem", "ErrorAccumulator", "ErrorReport",
    "SchemeParams", "SchemeState", "StepDiagnostics", "OseenScheme", "run",
    "StudyConfig", "EocTable", "time_step_for", "parse_config_file",
    "run_study", "run_verify_suite", "cli_main",
    "__version__",
]
