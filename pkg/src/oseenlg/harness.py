"""Convergence-study driver, structural verification suite, and CLI.

Single runs and studies report the three relative error norms per mesh level
in CSV form (one file per scheme/viscosity combination), together with an
experimental-order-of-convergence summary and a gnuplot script for log-log
error plots. The `verify` subcommand runs the structural property suite:
checks that need no reference data and must hold for any correct build.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import logging
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import (assemble_mass, assemble_stabilization,
                       assemble_stiffness, reference_moment, triangle_rule)
from .characteristics import (build_linearized_velocity, element_jacobians,
                              foot_triangles, integrate_composed_term)
from .errors import ConfigError, OseenLGError
from .fe_space import (ScalarSpace, VectorField, dof_integrals,
                       lagrange_interpolate, shape_values)
from .linalg import DeflationVector, cg_solve
from .mesh import build_unit_square_mesh
from .problems import ErrorReport, ManufacturedProblem, ZeroProblem
from .scheme import SchemeParams, run

logger = logging.getLogger(__name__)

CSV_HEADER = "N,h,dt,E_linf_l2_u,E_l2_h10_u,E_l2_l2_p,runtime_s"

DEFAULT_N_LIST = (8, 16, 32)
FULL_N_LIST = (16, 23, 32, 45, 64)

_DT_RULE_RE = re.compile(r"^(h2|h(/(\d+))?)$")


def time_step_for(rule: str, N: int) -> float:
    """Time step from a mesh-resolution rule, with h = 1/N.

    `h2` means dt = h^2; `h/D` means dt = h/D for a positive integer D;
    bare `h` is `h/1`.
    """
    m = _DT_RULE_RE.match(rule.strip())
    if not m:
        raise ConfigError(f"unrecognized dt rule {rule!r}; use 'h2' or 'h/<divisor>'")
    h = 1.0 / N
    if m.group(1) == "h2":
        return h * h
    divisor = int(m.group(3)) if m.group(3) else 1
    if divisor < 1:
        raise ConfigError(f"dt rule divisor must be positive, got {divisor}")
    return h / divisor


@dataclass
class StudyConfig:
    """Full description of a convergence study; deterministic, no seeds."""
    schemes: list = field(default_factory=lambda: [(2, 1, 0.0)])
    nus: list = field(default_factory=lambda: [1.0])
    N_list: list = field(default_factory=lambda: list(DEFAULT_N_LIST))
    dt_rule: str = "h2"
    T: float = 1.0
    init_mode: str = "lagrange"
    out_dir: str = "."
    cg_tol: float = 1e-10
    composed_method: str = "clipping"
    workers: int = 1

    def __post_init__(self):
        for trip in self.schemes:
            if len(trip) != 3:
                raise ConfigError(f"scheme entry {trip!r} is not a (k, l, delta0) triple")
            k, l, d0 = int(trip[0]), int(trip[1]), float(trip[2])
            if k not in (1, 2) or l not in (1, 2) or l > k:
                raise ConfigError(f"unsupported degree pair ({k},{l})")
            if k == l and d0 <= 0:
                raise ConfigError(f"equal-order pair ({k},{l}) requires delta0 > 0")
            if d0 < 0:
                raise ConfigError(f"delta0 must be >= 0, got {d0}")
        if not self.schemes:
            raise ConfigError("scheme list is empty")
        if not self.nus:
            raise ConfigError("viscosity list is empty")
        for nu in self.nus:
            if nu <= 0:
                raise ConfigError(f"viscosity must be positive, got {nu}")
        if not self.N_list:
            raise ConfigError("N list is empty")
        if any(n <= 0 for n in self.N_list):
            raise ConfigError(f"N values must be positive, got {self.N_list}")
        if list(self.N_list) != sorted(set(self.N_list)):
            raise ConfigError(f"N list must be strictly increasing, got {self.N_list}")
        if self.T <= 0:
            raise ConfigError(f"final time must be positive, got {self.T}")
        coarsest_dt = time_step_for(self.dt_rule, min(self.N_list))
        if coarsest_dt > self.T:
            raise ConfigError(
                f"dt rule {self.dt_rule!r} gives dt = {coarsest_dt:g} > T = {self.T:g} "
                f"at N = {min(self.N_list)}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")


@dataclass
class StudyRow:
    N: int
    h: float
    dt: float
    report: ErrorReport | None
    runtime_s: float
    failure: str | None = None

    def csv_row(self) -> str:
        if self.report is None:
            errs = "nan,nan,nan"
        else:
            errs = (f"{float(self.report.E_linf_l2_u)!r},{float(self.report.E_l2_h10_u)!r},"
                    f"{float(self.report.E_l2_l2_p)!r}")
        return f"{self.N},{float(self.h)!r},{float(self.dt)!r},{errs},{self.runtime_s:.3f}"


NORM_KEYS = ("E_linf_l2_u", "E_l2_h10_u", "E_l2_l2_p")


@dataclass
class EocTable:
    """Error rows for one (scheme, viscosity) combination, with slopes."""
    scheme: tuple
    nu: float
    rows: list

    def label(self) -> str:
        k, l, d0 = self.scheme
        return f"scheme({k},{l},{d0:g}) nu={self.nu:g}"

    def _series(self, norm: str):
        pts = []
        for row in self.rows:
            if row.report is not None:
                pts.append((row.h, getattr(row.report, norm)))
        return pts

    def pairwise_eoc(self, norm: str) -> list:
        """Slopes between consecutive successful rows."""
        pts = self._series(norm)
        out = []
        for (h0, e0), (h1, e1) in zip(pts, pts[1:]):
            if e0 > 0 and e1 > 0:
                out.append(np.log(e0 / e1) / np.log(h0 / h1))
            else:
                out.append(float("nan"))
        return out

    def aggregate_eoc(self, norm: str) -> float:
        """Endpoint slope across the whole successful range."""
        pts = self._series(norm)
        if len(pts) < 2:
            return float("nan")
        (h0, e0), (h1, e1) = pts[0], pts[-1]
        if e0 <= 0 or e1 <= 0:
            return float("nan")
        return float(np.log(e0 / e1) / np.log(h0 / h1))


def _slug(x: float) -> str:
    return f"{x:g}".replace(".", "p").replace("-", "m").replace("+", "")


def _one_run(scheme: tuple, nu: float, N: int, config: StudyConfig,
             diag_path=None) -> StudyRow:
    k, l, d0 = scheme
    h = 1.0 / N
    dt = time_step_for(config.dt_rule, N)
    t0 = time.perf_counter()
    try:
        params = SchemeParams(k=int(k), l=int(l), delta0=float(d0), nu=float(nu),
                              dt=dt, T=config.T, cg_tol=config.cg_tol,
                              init_mode=config.init_mode,
                              composed_method=config.composed_method)
        mesh = build_unit_square_mesh(N)
        _, report, _ = run(ManufacturedProblem(float(nu)), params, mesh,
                           diag_path=diag_path)
        return StudyRow(N, h, dt, report, time.perf_counter() - t0)
    except (OseenLGError, ValueError) as exc:
        logger.error("run %s nu=%g N=%d failed: %s", scheme, nu, N, exc)
        return StudyRow(N, h, dt, None, time.perf_counter() - t0,
                        failure=f"{type(exc).__name__}: {exc}")


def run_study(config: StudyConfig, write_files: bool = True) -> list[EocTable]:
    """Execute all (scheme, nu, N) combinations and emit CSV/EOC/plot files.

    Failed runs keep their row (errors as nan) with the reason stored; the
    study continues. Rows are ordered by the config regardless of the worker
    count used to compute them.
    """
    jobs = [(scheme, nu, N)
            for scheme in config.schemes for nu in config.nus for N in config.N_list]
    results: dict = {}
    if config.workers == 1:
        for job in jobs:
            results[job] = _one_run(*job, config)
    else:
        with concurrent.futures.ThreadPoolExecutor(config.workers) as pool:
            futures = {pool.submit(_one_run, *job, config): job for job in jobs}
            for fut in concurrent.futures.as_completed(futures):
                results[futures[fut]] = fut.result()

    tables = []
    for scheme in config.schemes:
        for nu in config.nus:
            rows = [results[(scheme, nu, N)] for N in config.N_list]
            tables.append(EocTable(tuple(scheme), float(nu), rows))

    if write_files:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_names = []
        for table in tables:
            k, l, d0 = table.scheme
            name = f"study_k{int(k)}l{int(l)}d{_slug(float(d0))}_nu{_slug(table.nu)}.csv"
            csv_names.append((name, table))
            with open(out / name, "w", encoding="ascii") as fh:
                fh.write(CSV_HEADER + "\n")
                for row in table.rows:
                    fh.write(row.csv_row() + "\n")
        _write_eoc_summary(out / "eoc_summary.txt", tables)
        _write_plot_script(out / "plot.gp", csv_names)
    return tables


def _write_eoc_summary(path: Path, tables: list[EocTable]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for table in tables:
            fh.write(f"{table.label()}\n")
            for norm in NORM_KEYS:
                pair = ", ".join(f"{v:.3f}" for v in table.pairwise_eoc(norm)) or "-"
                fh.write(f"  {norm}: pairwise EOC [{pair}] "
                         f"aggregate {table.aggregate_eoc(norm):.3f}\n")
            for row in table.rows:
                if row.failure:
                    fh.write(f"  N={row.N} FAILED: {row.failure}\n")
            fh.write("\n")


def _write_plot_script(path: Path, csv_names: list) -> None:
    lines = [
        "set datafile separator ','",
        "set logscale xy",
        "set xlabel 'h'",
        "set ylabel 'relative error'",
        "set key left top",
    ]
    plots = []
    for name, table in csv_names:
        for col, norm in zip((4, 5, 6), NORM_KEYS):
            plots.append(f"'{name}' using 2:{col} with linespoints "
                         f"title '{table.label()} {norm}'")
    lines.append("plot \\\n  " + ", \\\n  ".join(plots))
    lines.append("pause -1")
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


# ----------------------------------------------------------------------------
# Config file
# ----------------------------------------------------------------------------

def parse_config_file(path) -> StudyConfig:
    """Flat `key = value` format; '#' starts a comment.

    Keys: schemes (semicolon-separated `k l delta0` triples), nu (list),
    N (list), dt_rule, T, init, out, cg_tol, method, workers.
    """
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    kwargs: dict = {}
    for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            _apply_config_key(kwargs, key, value)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{p}:{lineno}: {exc}") from exc
    return StudyConfig(**kwargs)


def _split_list(value: str) -> list[str]:
    return [tok for tok in re.split(r"[,\s]+", value.strip()) if tok]


def _apply_config_key(kwargs: dict, key: str, value: str) -> None:
    if key == "schemes":
        triples = []
        for part in value.split(";"):
            toks = _split_list(part)
            if len(toks) != 3:
                raise ConfigError(f"scheme entry {part.strip()!r} is not 'k l delta0'")
            triples.append((int(toks[0]), int(toks[1]), float(toks[2])))
        kwargs["schemes"] = triples
    elif key == "nu":
        kwargs["nus"] = [float(tok) for tok in _split_list(value)]
    elif key == "N":
        kwargs["N_list"] = [int(tok) for tok in _split_list(value)]
    elif key == "dt_rule":
        kwargs["dt_rule"] = value
    elif key == "T":
        kwargs["T"] = float(value)
    elif key == "init":
        kwargs["init_mode"] = value
    elif key == "out":
        kwargs["out_dir"] = value
    elif key == "cg_tol":
        kwargs["cg_tol"] = float(value)
    elif key == "method":
        kwargs["composed_method"] = value
    elif key == "workers":
        kwargs["workers"] = int(value)
    else:
        raise ConfigError(f"unknown config key {key!r}")


# ----------------------------------------------------------------------------
# Structural verification suite
# ----------------------------------------------------------------------------

def _check_quadrature_moments() -> None:
    for degree in (1, 2, 3, 4, 5, 7, 9, 11):
        rule = triangle_rule(degree)
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                c = degree - a - b
                got = float(np.sum(rule.weights * rule.points[:, 0] ** a
                                   * rule.points[:, 1] ** b * rule.points[:, 2] ** c))
                want = reference_moment(a, b, c)
                assert abs(got - want) <= 5e-14, \
                    f"degree {degree} moment ({a},{b},{c}): {got!r} vs {want!r}"


def _check_matrix_structure() -> None:
    mesh = build_unit_square_mesh(8)
    rng = np.random.default_rng(12345)
    for degree in (1, 2):
        space = ScalarSpace(mesh, degree, "none")
        M = assemble_mass(space)       # constructor asserts symmetry
        A = assemble_stiffness(space)
        S = assemble_stabilization(space, k=degree)
        for _ in range(5):
            x = rng.standard_normal(space.n_dofs)
            assert x @ M.matvec(x) > 0, "mass matrix not positive definite"
            assert x @ A.matvec(x) >= -1e-12, "stiffness matrix not positive semidefinite"
            assert x @ S.matvec(x) >= -1e-12, "stabilization matrix not positive semidefinite"


def _check_stabilization_kernel() -> None:
    mesh = build_unit_square_mesh(8)
    for degree in (1, 2):
        space = ScalarSpace(mesh, degree, "none")
        S = assemble_stabilization(space, k=degree)
        scale = max(abs(S.csr).max(), 1e-30)
        ones = np.ones(space.n_dofs)
        assert np.abs(S.matvec(ones)).max() <= 1e-12 * space.n_dofs * scale, \
            f"constants not in the degree-{degree} stabilization kernel"
        if degree == 2:
            lin = lagrange_interpolate(space, lambda x: 1.0 + 2.0 * x[:, 0] - x[:, 1])
            assert np.abs(S.matvec(lin.coefficients)).max() <= 1e-10 * scale, \
                "global linears not in the degree-2 stabilization kernel"
        quad = lagrange_interpolate(space, lambda x: x[:, 0] ** 2)
        if degree == 2:
            assert float(quad.coefficients @ S.matvec(quad.coefficients)) > 1e-8, \
                "x^2 unexpectedly in the stabilization kernel"


def _check_partition_of_unity() -> None:
    bary = np.array([[1 / 3, 1 / 3, 1 / 3], [0.2, 0.5, 0.3], [0.0, 0.7, 0.3],
                     [1.0, 0.0, 0.0], [0.05, 0.05, 0.9]])
    for degree in (1, 2):
        sums = shape_values(degree, bary).sum(axis=0)
        assert np.abs(sums - 1.0).max() <= 1e-14, \
            f"degree-{degree} shape functions do not sum to one"


def _check_deflated_cg() -> None:
    mesh = build_unit_square_mesh(8)
    space = ScalarSpace(mesh, 1, "zero_mean")
    A = assemble_stiffness(space)
    m = dof_integrals(space)
    rng = np.random.default_rng(7)
    y = rng.standard_normal(space.n_dofs)
    b = A.matvec(y)                       # compatible by construction
    res = cg_solve(A, b, tol=1e-12, deflate=DeflationVector(m))
    bnorm = np.linalg.norm(b)
    assert np.linalg.norm(b - A.matvec(res.x)) <= 1e-10 * bnorm, "deflated CG residual too large"
    assert abs(m @ res.x) <= 1e-12 * np.linalg.norm(res.x), "deflated CG mean constraint violated"


def _check_zero_fixed_point() -> None:
    params = SchemeParams(k=2, l=1, delta0=0.0, nu=1.0, dt=0.25, T=1.0)
    mesh = build_unit_square_mesh(4)
    state, _, diags = run(ZeroProblem(), params, mesh, accumulate=False)
    assert state.n == 4
    assert np.abs(state.u_tilde.components).max() <= 1e-12, "zero data did not stay zero (velocity)"
    assert np.abs(state.p_now.coefficients).max() <= 1e-12, "zero data did not stay zero (pressure)"
    assert all(d.div_residual <= 1e-12 for d in diags)


def _check_clipping_area() -> None:
    mesh = build_unit_square_mesh(8)
    dt = 1.0 / 64.0
    problem = ManufacturedProblem(1.0)
    wh = build_linearized_velocity(problem.w, 0.0, mesh)
    space = ScalarSpace(mesh, 2, "zero_boundary")
    fld = VectorField(space, np.ones((space.n_dofs, 2)))
    _, stats = integrate_composed_term(fld, wh, dt, space, return_stats=True)
    assert stats["max_area_defect"] <= 1e-10, \
        f"clipped pieces missed area by {stats['max_area_defect']:.2e}"
    jac = element_jacobians(wh, dt)
    feet = foot_triangles(wh, dt)
    x, y = feet[:, :, 0], feet[:, :, 1]
    shoelace = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0])
                      - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    assert np.abs(jac * mesh.element_areas - shoelace).max() <= 1e-12, \
        "Jacobian formula disagrees with mapped-triangle areas"


VERIFY_CHECKS = (
    ("quadrature moments", _check_quadrature_moments),
    ("matrix symmetry and positivity", _check_matrix_structure),
    ("stabilization kernel", _check_stabilization_kernel),
    ("partition of unity", _check_partition_of_unity),
    ("deflated CG constraints", _check_deflated_cg),
    ("zero-data fixed point", _check_zero_fixed_point),
    ("clipping area conservation", _check_clipping_area),
)


def run_verify_suite(out=print) -> int:
    """Run the structural property suite; returns the number of failures."""
    failures = 0
    for name, check in VERIFY_CHECKS:
        try:
            check()
        except Exception as exc:  # noqa: BLE001 - report, do not abort the suite
            failures += 1
            out(f"FAIL - {name}: {exc}")
        else:
            out(f"ok   - {name}")
    return failures


# ----------------------------------------------------------------------------
# CLI
# ----------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oseenlg",
        description="Projection-based characteristic solver for the transient "
                    "Oseen problem on the unit square")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="single simulation at one resolution")
    p_run.add_argument("--k", type=int, required=True, help="velocity degree (1 or 2)")
    p_run.add_argument("--l", type=int, required=True, help="pressure degree (1 or 2)")
    p_run.add_argument("--delta0", type=float, required=True, help="stabilization weight")
    p_run.add_argument("--nu", type=float, required=True, help="viscosity")
    p_run.add_argument("--N", type=int, required=True, help="mesh resolution (h = 1/N)")
    p_run.add_argument("--dt-rule", default="h2", help="time-step rule: h2 or h/<divisor>")
    p_run.add_argument("--T", type=float, default=1.0, help="final time")
    p_run.add_argument("--init", default="lagrange", choices=("lagrange", "stokes_projection"))
    p_run.add_argument("--out", default=".", help="output directory")
    p_run.add_argument("--diag", default=None, help="write per-step diagnostics CSV here")
    p_run.add_argument("--cg-tol", type=float, default=1e-10)
    p_run.add_argument("--method", default="clipping", choices=("clipping", "quadrature"),
                       help="advected-term integration method")

    p_study = sub.add_parser("study", help="convergence study from a config file")
    p_study.add_argument("config", help="flat key = value config file")
    p_study.add_argument("--full", action="store_true",
                         help="override the N list with the large reference set")

    sub.add_parser("verify", help="run the structural property suite")
    return parser


def cli_main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    if args.command == "verify":
        return 1 if run_verify_suite() else 0

    if args.command == "study":
        try:
            config = parse_config_file(args.config)
            if args.full:
                logger.warning("running the full N list %s; the largest levels "
                               "take a long time", list(FULL_N_LIST))
                config = StudyConfig(**{**config.__dict__, "N_list": list(FULL_N_LIST)})
            tables = run_study(config)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        failed = [row for t in tables for row in t.rows if row.failure]
        for t in tables:
            print(t.label())
            for norm in NORM_KEYS:
                print(f"  {norm}: aggregate EOC {t.aggregate_eoc(norm):.3f}")
        if failed:
            for row in failed:
                print(f"failed: N={row.N}: {row.failure}", file=sys.stderr)
            return 1
        return 0

    # single run
    try:
        config = StudyConfig(schemes=[(args.k, args.l, args.delta0)], nus=[args.nu],
                             N_list=[args.N], dt_rule=args.dt_rule, T=args.T,
                             init_mode=args.init, out_dir=args.out,
                             cg_tol=args.cg_tol, composed_method=args.method)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.diag:
        Path(args.diag).parent.mkdir(parents=True, exist_ok=True)
    row = _one_run((args.k, args.l, args.delta0), args.nu, args.N, config,
                   diag_path=args.diag)
    name = (f"run_k{args.k}l{args.l}d{_slug(args.delta0)}_nu{_slug(args.nu)}"
            f"_N{args.N}.csv")
    with open(out / name, "w", encoding="ascii") as fh:
        fh.write(CSV_HEADER + "\n")
        fh.write(row.csv_row() + "\n")
    if row.failure:
        print(f"run failed: {row.failure}", file=sys.stderr)
        return 1
    rep = row.report
    print(f"N={row.N} dt={row.dt:g} E_linf_l2_u={rep.E_linf_l2_u:.6e} "
          f"E_l2_h10_u={rep.E_l2_h10_u:.6e} E_l2_l2_p={rep.E_l2_l2_p:.6e} "
          f"({row.runtime_s:.1f}s)")
    return 0


def main() -> None:
    sys.exit(cli_main())
