"""Sparse symmetric matrices and a deterministic preconditioned CG solver.

The solver supports Jacobi preconditioning and an optional mean-zero deflation
for consistent singular systems whose kernel is the constant vector (discrete
Neumann pressure problems). Deflation works by orthogonally projecting the
right-hand side and the preconditioned residuals onto the complement of the
constants, which keeps the operator SPD on the solve subspace; afterwards the
solution is shifted along the kernel so that its weighted mean m^T x vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import SolverConvergenceError


class SparseSym:
    """Square sparse matrix asserted symmetric at construction.

    Storage is CSR with the full pattern; symmetry is checked, not exploited.
    """

    def __init__(self, matrix, symmetry_tol: float = 1e-12):
        csr = sp.csr_matrix(matrix)
        if csr.shape[0] != csr.shape[1]:
            raise ValueError(f"matrix is not square: shape {csr.shape}")
        scale = abs(csr).max() if csr.nnz else 0.0
        asym = abs(csr - csr.T)
        worst = asym.max() if asym.nnz else 0.0
        if worst > symmetry_tol * (1.0 + scale):
            raise ValueError(f"matrix is not symmetric: max |A - A^T| entry {worst:.3e}")
        csr.sum_duplicates()
        csr.sort_indices()
        self.csr = csr
        self.symmetry_tol = symmetry_tol

    @classmethod
    def from_coo(cls, n: int, rows, cols, values, symmetry_tol: float = 1e-12) -> "SparseSym":
        coo = sp.coo_matrix((values, (rows, cols)), shape=(n, n))
        return cls(coo, symmetry_tol)

    @property
    def n(self) -> int:
        return self.csr.shape[0]

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.csr @ x

    def diagonal(self) -> np.ndarray:
        return self.csr.diagonal()

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def dump(self, path) -> None:
        """Write nonzeros in coordinate text format, one `i j value` per line."""
        coo = self.csr.tocoo()
        with open(path, "w", encoding="ascii") as fh:
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {float(v)!r}\n")


class LinearOperator:
    """Matrix-free operator exposing the interface cg_solve needs (n, matvec)."""

    def __init__(self, n: int, matvec):
        self.n = n
        self._matvec = matvec

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self._matvec(x)


@dataclass
class DeflationVector:
    """Weights m_i = integral of basis function i; realizes the zero-mean constraint.

    The weights must sum to the domain measure (1 for the unit square).
    """
    m: np.ndarray
    domain_measure: float = 1.0

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=np.float64)
        total = self.m.sum()
        if abs(total - self.domain_measure) > 1e-12 * max(1.0, self.domain_measure):
            raise ValueError(
                f"deflation weights sum to {total!r}, expected {self.domain_measure!r}"
            )


@dataclass
class CgResult:
    x: np.ndarray
    iterations: int
    relative_residual: float
    energy_history: list = field(default_factory=list)


def cg_solve(A, b, tol: float = 1e-10, max_iter: int | None = None,
             precond: str = "jacobi", deflate: DeflationVector | None = None,
             debug: bool = False) -> CgResult:
    """Preconditioned conjugate gradients for SPD (or deflated SPSD) systems.

    Args:
        A: object with attributes n and matvec; `jacobi` additionally needs diagonal().
        b: right-hand side.
        tol: relative residual target ||b - A x|| <= tol * ||b||.
        max_iter: iteration cap, default 10 * n.
        precond: `jacobi` or `none`.
        deflate: if given, A is treated as singular with kernel = constants; b is
            projected for compatibility and the result satisfies m^T x = 0.
        debug: record the CG energy functional x^T A x / 2 - b^T x per iteration.

    Returns:
        CgResult with the solution, iteration count, and the final true
        relative residual (recomputed from b - A x, not the CG recursion).

    Raises:
        SolverConvergenceError: on stagnation past max_iter or non-finite values.
    """
    b = np.asarray(b, dtype=np.float64)
    n = A.n
    if b.shape != (n,):
        raise ValueError(f"rhs has shape {b.shape}, expected ({n},)")
    if max_iter is None:
        max_iter = 10 * n
    if n == 0:
        raise ValueError("cannot solve an empty system (no unconstrained DOFs)")

    if precond == "jacobi":
        diag = A.diagonal()
        if (diag <= 0).any():
            raise ValueError("jacobi preconditioning requires a positive diagonal")
        inv_diag = 1.0 / diag
        apply_m = lambda r: inv_diag * r
    elif precond == "none":
        apply_m = lambda r: r
    else:
        raise ValueError(f"unknown preconditioner {precond!r}")

    if deflate is not None:
        b = b - (b.sum() / n)  # compatibility: remove the kernel component
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return CgResult(np.zeros(n), 0, 0.0)

    def project(v):
        if deflate is not None:
            v = v - (v.sum() / n)
        return v

    x = np.zeros(n)
    history: list[float] = []
    energy: list[float] = []
    total_iters = 0
    # Outer restarts guard against drift between the recursive and true residuals.
    for _restart in range(3):
        r = b - A.matvec(x) if total_iters else b.copy()
        r = project(r)
        z = project(apply_m(r))
        p = z.copy()
        rz = float(r @ z)
        converged = False
        while total_iters < max_iter:
            Ap = A.matvec(p)
            pAp = float(p @ Ap)
            if not np.isfinite(pAp) or pAp <= 0.0:
                raise SolverConvergenceError(
                    f"CG breakdown: p^T A p = {pAp!r} at iteration {total_iters}",
                    residual_history=history)
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            total_iters += 1
            res = float(np.linalg.norm(r)) / b_norm
            history.append(res)
            if debug:
                energy.append(0.5 * float(x @ A.matvec(x)) - float(b @ x))
            if not np.isfinite(res):
                raise SolverConvergenceError(
                    f"CG diverged: non-finite residual at iteration {total_iters}",
                    residual_history=history)
            if res <= tol:
                converged = True
                break
            z = project(apply_m(r))
            rz_new = float(r @ z)
            beta = rz_new / rz
            p = z + beta * p
            rz = rz_new
        true_res = float(np.linalg.norm(project(b - A.matvec(x)))) / b_norm
        if true_res <= tol:
            break
        if not converged:
            raise SolverConvergenceError(
                f"CG did not converge in {total_iters} iterations "
                f"(relative residual {true_res:.3e}, target {tol:.1e})",
                residual_history=history)
    else:
        raise SolverConvergenceError(
            f"CG true residual stagnated at {true_res:.3e} after restarts "
            f"(target {tol:.1e})", residual_history=history)

    if deflate is not None:
        # Shift along the kernel (constants) to enforce the weighted zero mean.
        x -= (deflate.m @ x) / deflate.m.sum()
    return CgResult(x, total_iters, true_res, energy)
