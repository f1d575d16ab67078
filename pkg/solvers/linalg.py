"""Sparse and dense kernels, direct factorizations and preconditioned MINRES"""

import logging
import math
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, splu

from errors import BreakdownError, FactorizationError, NotSPDError, ParameterError

logger = logging.getLogger(__name__)

SparseMatrix = sp.csr_matrix
Operator = Union[Callable[[np.ndarray], np.ndarray], LinearOperator, sp.spmatrix, np.ndarray]

DEFAULT_TOL = 1e-7
# true residual may exceed the recurred one by this factor at declared convergence
TRUE_RESIDUAL_SLACK = 10.0


def as_csr(A: Any) -> sp.csr_matrix:
    """Compressed-row copy with summed duplicates and sorted column indices"""
    matrix = sp.csr_matrix(A, dtype=float)
    matrix.sum_duplicates()
    matrix.sort_indices()
    return matrix


def is_symmetric(A: sp.spmatrix, rtol: float = 1e-12) -> bool:
    if A.shape[0] != A.shape[1]:
        return False
    scale = abs(A).max() if A.nnz else 0.0
    if scale == 0.0:
        return True
    return bool(abs(A - A.T).max() <= rtol * scale)


def spmv(A: sp.spmatrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if A.shape[1] != x.shape[0]:
        raise ParameterError(f"cannot multiply {A.shape} matrix with vector of length {x.shape[0]}")
    return np.asarray(A @ x)


class Factorization:
    """Reusable sparse LU factorization (SuperLU, partial pivoting)"""

    def __init__(self, lu: Any, shape: tuple[int, int]):
        self._lu = lu
        self.shape = shape

    @property
    def row_permutation(self) -> np.ndarray:
        return np.asarray(self._lu.perm_r)

    @property
    def column_permutation(self) -> np.ndarray:
        return np.asarray(self._lu.perm_c)

    @property
    def fill_nnz(self) -> int:
        return int(self._lu.L.nnz + self._lu.U.nnz)

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.shape[0]:
            raise ParameterError(f"right-hand side has {b.shape[0]} rows, expected {self.shape[0]}")
        return np.asarray(self._lu.solve(b))


def sparse_factorize(A: sp.spmatrix, pivot_tol: float = 1e-14) -> Factorization:
    if A.shape[0] != A.shape[1]:
        raise ParameterError(f"cannot factorize non-square matrix of shape {A.shape}")
    matrix = sp.csc_matrix(A, dtype=float)
    matrix.eliminate_zeros()
    if np.any(np.diff(sp.csr_matrix(matrix).indptr) == 0):
        raise FactorizationError("matrix has an all-zero row")
    try:
        lu = splu(matrix)
    except RuntimeError as exc:
        raise FactorizationError(str(exc)) from exc
    pivots = np.abs(lu.U.diagonal())
    if pivots.min() <= pivot_tol * max(pivots.max(), 1.0):
        raise FactorizationError(f"numerically singular pivot {pivots.min():.3e}")
    logger.debug("factorized %s matrix, fill nnz %d", A.shape, lu.L.nnz + lu.U.nnz)
    return Factorization(lu, A.shape)


def dense_cholesky(C: np.ndarray, symmetry_rtol: float = 1e-10) -> np.ndarray:
    """Lower Cholesky factor ``L`` with ``L @ L.T == C``"""
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ParameterError(f"Cholesky needs a square matrix, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise NotSPDError("matrix has non-finite entries")
    scale = np.abs(C).max() if C.size else 0.0
    if scale and np.abs(C - C.T).max() > symmetry_rtol * scale:
        raise NotSPDError("matrix is not symmetric")
    try:
        return np.asarray(scipy.linalg.cholesky(C, lower=True))
    except np.linalg.LinAlgError as exc:
        raise NotSPDError(f"non-positive pivot: {exc}") from exc


def cholesky_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``L^-T (L^-1 b)`` for a lower factor ``L``"""
    y = scipy.linalg.solve_triangular(L, b, lower=True)
    return np.asarray(scipy.linalg.solve_triangular(L, y, lower=True, trans="T"))


def as_operator(op: Optional[Operator]) -> Callable[[np.ndarray], np.ndarray]:
    if op is None:
        return lambda x: x
    if isinstance(op, LinearOperator):
        return op.matvec
    if sp.issparse(op) or isinstance(op, np.ndarray):
        return lambda x: np.asarray(op @ x)
    if callable(op):
        return op
    raise ParameterError(f"cannot use {type(op).__name__} as a linear operator")


def apply_columns(
    apply: Callable[[np.ndarray], np.ndarray], X: np.ndarray, workers: int = 1
) -> np.ndarray:
    """Apply a vector operator to every column of ``X``.

    Columns are independent so the result does not depend on ``workers``.
    """
    X = np.asarray(X, dtype=float)
    n_columns = X.shape[1]
    if n_columns == 0:
        return np.zeros((X.shape[0], 0))
    first = np.asarray(apply(np.ascontiguousarray(X[:, 0])))
    result = np.empty((first.shape[0], n_columns))
    result[:, 0] = first
    if workers <= 1 or n_columns == 1:
        for j in range(1, n_columns):
            result[:, j] = apply(np.ascontiguousarray(X[:, j]))
        return result

    def run(j: int) -> None:
        result[:, j] = apply(np.ascontiguousarray(X[:, j]))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(run, range(1, n_columns)))
    return result


@dataclass
class MinresReport:
    """Convergence history of one MINRES run.

    ``relative_residuals`` are recurred Euclidean norms ``|r_k| / |b|``;
    ``preconditioned_residuals`` are the recurred ``P^-1``-norms
    ``|r_k|_{P^-1} / |b|_{P^-1}``, which MINRES minimizes and which never
    increase.
    """

    iterations: int = 0
    relative_residuals: list[float] = field(default_factory=list)
    preconditioned_residuals: list[float] = field(default_factory=list)
    converged: bool = False
    true_relative_residual: float = math.nan


def minres(
    apply_A: Operator,
    apply_Pinv: Optional[Operator],
    b: np.ndarray,
    x0: Optional[np.ndarray] = None,
    tol: float = DEFAULT_TOL,
    maxit: Optional[int] = None,
) -> tuple[np.ndarray, MinresReport]:
    """Preconditioned MINRES stopping on the Euclidean and the preconditioned residual.

    The iterates minimize the ``P^-1``-norm of the residual over the
    preconditioned Krylov space. The iteration stops once the recurred
    residual satisfies both ``|r_k| <= tol |b|`` and
    ``|r_k|_{P^-1} <= tol |b|_{P^-1}``, and the true Euclidean residual is
    within ``TRUE_RESIDUAL_SLACK * tol``. Without convergence the iterate
    with the smallest recurred Euclidean residual is returned.
    """
    if tol <= 0.0:
        raise ParameterError(f"tolerance must be positive, got {tol}")
    A = as_operator(apply_A)
    Pinv = as_operator(apply_Pinv)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if maxit is None:
        maxit = 2 * n
    report = MinresReport()

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        report.relative_residuals.append(0.0)
        report.preconditioned_residuals.append(0.0)
        report.converged = True
        report.true_relative_residual = 0.0
        return np.zeros(n), report

    r = b - A(x) if x0 is not None else b.copy()
    relative = float(np.linalg.norm(r)) / b_norm
    report.relative_residuals.append(relative)
    if relative == 0.0:
        report.preconditioned_residuals.append(0.0)
        report.converged = True
        report.true_relative_residual = 0.0
        return x, report

    y = Pinv(r)
    beta1_sq = float(np.dot(r, y))
    if beta1_sq <= 0.0:
        raise BreakdownError(
            f"preconditioned residual norm squared is {beta1_sq:.3e} for a nonzero residual"
        )
    beta1 = math.sqrt(beta1_sq)
    b_pnorm = beta1 if x0 is None else math.sqrt(max(float(np.dot(b, Pinv(b))), 0.0))
    if b_pnorm == 0.0:
        raise BreakdownError("preconditioned norm of the right-hand side vanishes")
    preconditioned = beta1 / b_pnorm
    report.preconditioned_residuals.append(preconditioned)
    if relative <= tol and preconditioned <= tol:
        report.converged = True
        report.true_relative_residual = relative
        return x, report

    r1 = r.copy()
    r2 = r.copy()
    old_beta = 0.0
    beta = beta1
    dbar = 0.0
    epsilon = 0.0
    phibar = beta1
    cs = -1.0
    sn = 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    Aw = np.zeros(n)
    Aw2 = np.zeros(n)
    best_x = x.copy()
    best_relative = relative

    for iteration in range(1, maxit + 1):
        v = y / beta
        Av = A(v)
        y = Av.copy()
        if iteration >= 2:
            y -= (beta / old_beta) * r1
        alpha = float(np.dot(v, y))
        y -= (alpha / beta) * r2
        r1 = r2
        r2 = y
        y = Pinv(r2)
        old_beta = beta
        beta_sq = float(np.dot(r2, y))
        indefinite = beta_sq < 0.0
        beta = 0.0 if indefinite else math.sqrt(beta_sq)

        # QR update of the Lanczos tridiagonal by a plane rotation
        old_epsilon = epsilon
        delta = cs * dbar + sn * alpha
        gbar = sn * dbar - cs * alpha
        epsilon = sn * beta
        dbar = -cs * beta
        gamma = math.hypot(gbar, beta)
        if gamma == 0.0:
            raise BreakdownError(f"singular Lanczos tridiagonal at iteration {iteration}")
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2, w = w2, w, (v - old_epsilon * w2 - delta * w) / gamma
        Aw1, Aw2, Aw = Aw2, Aw, (Av - old_epsilon * Aw2 - delta * Aw) / gamma
        del w1, Aw1
        x += phi * w
        r -= phi * Aw

        relative = float(np.linalg.norm(r)) / b_norm
        report.iterations = iteration
        report.relative_residuals.append(relative)
        preconditioned = abs(phibar) / b_pnorm
        report.preconditioned_residuals.append(preconditioned)
        logger.debug(
            "minres %4d  |r|/|b| = %.3e  |r|_P/|b|_P = %.3e", iteration, relative, preconditioned
        )
        if relative < best_relative:
            best_relative = relative
            best_x = x.copy()

        exhausted = beta == 0.0
        if (relative <= tol and preconditioned <= tol) or exhausted:
            true_r = b - A(x)
            true_relative = float(np.linalg.norm(true_r)) / b_norm
            if true_relative <= TRUE_RESIDUAL_SLACK * tol:
                report.converged = True
                report.true_relative_residual = true_relative
                return x, report
            if exhausted:
                if indefinite:
                    raise BreakdownError("preconditioner is not positive definite")
                raise BreakdownError(
                    f"Krylov space exhausted with relative residual {true_relative:.3e}"
                )
            logger.debug("recurred residual drifted, restarting from the true residual")
            r = true_r

    true_relative = float(np.linalg.norm(b - A(best_x))) / b_norm
    report.true_relative_residual = true_relative
    logger.warning(
        "minres did not converge in %d iterations, relative residual %.3e", maxit, true_relative
    )
    return best_x, report
