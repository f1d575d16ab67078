"""Strategies computing one Gauss-Newton update"""

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from errors import ParameterError
from fem.mixed import MixedSystem
from inversion.saddle import (
    LaplacePreconditioner,
    SaddleOperator,
    WoodburyPreconditioner,
    assemble_gn_rhs,
    build_woodbury_preconditioner,
    capacitance_cholesky,
)
from solvers.amg import AmgConfig, AmgHierarchy, amg_setup
from solvers.linalg import (
    DEFAULT_TOL,
    Factorization,
    MinresReport,
    apply_columns,
    cholesky_solve,
    minres,
    sparse_factorize,
)

logger = logging.getLogger(__name__)


@dataclass
class StepResult:
    delta_m: np.ndarray
    report: Optional[MinresReport] = None
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def minres_iterations(self) -> Optional[int]:
        return self.report.iterations if self.report is not None else None

    @property
    def converged(self) -> bool:
        return self.report.converged if self.report is not None else True


def data_sensitivities(
    factorization: Factorization, J: np.ndarray, K: int, workers: int = 1
) -> np.ndarray:
    """``H = S^-1 J^T = -P2 A^-1 [0; J^T]`` from sparse solves with the mixed Laplacian"""

    def solve_column(column: np.ndarray) -> np.ndarray:
        rhs = np.concatenate([np.zeros(K), column])
        return -factorization.solve(rhs)[K:]

    return apply_columns(solve_column, J.T, workers)


def direct_step(
    factorization: Factorization,
    J: np.ndarray,
    m: np.ndarray,
    m_ref: np.ndarray,
    g: np.ndarray,
    g_obs: np.ndarray,
    beta: float,
    workers: int = 1,
    timings: Optional[dict[str, float]] = None,
) -> np.ndarray:
    """Update from the capacitance system.

    Solves ``C y = J (m - m_ref) - (g - g_obs)`` with ``C = I + (1/beta) J H``
    and returns ``dm = -(m - m_ref) + (1/beta) H y``.
    """
    if not beta > 0.0:
        raise ParameterError(f"regularization parameter beta must be positive, got {beta}")
    M, N = J.shape
    K = factorization.shape[0] - N
    if K < 0 or len(m) != N or len(g) != M or len(g_obs) != M:
        raise ParameterError("direct step received inconsistent shapes")
    timings = timings if timings is not None else {}

    start = time.perf_counter()
    H = data_sensitivities(factorization, J, K, workers)
    timings["t_H"] = time.perf_counter() - start

    start = time.perf_counter()
    C = np.eye(M) + (J @ H) / beta
    timings["t_C"] = time.perf_counter() - start

    start = time.perf_counter()
    L = capacitance_cholesky(C)
    timings["t_chol"] = time.perf_counter() - start

    deviation = np.asarray(m) - np.asarray(m_ref)
    y = cholesky_solve(L, J @ deviation - (np.asarray(g) - np.asarray(g_obs)))
    return np.asarray(-deviation + (H @ y) / beta)


def minres_step(
    operator: SaddleOperator,
    apply_Pinv: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    tol: float = DEFAULT_TOL,
    maxit: Optional[int] = None,
) -> tuple[np.ndarray, MinresReport]:
    """MINRES from a zero initial guess; returns the update block of the solution"""
    maxit = maxit if maxit is not None else 2 * (operator.K + operator.N)
    solution, report = minres(operator.apply, apply_Pinv, rhs, tol=tol, maxit=maxit)
    if not report.converged:
        logger.warning(
            "MINRES did not reach tolerance %.1e in %d iterations", tol, report.iterations
        )
    return solution[operator.K :], report


def minres_step_woodbury(
    operator: SaddleOperator,
    preconditioner: WoodburyPreconditioner,
    rhs: np.ndarray,
    tol: float = DEFAULT_TOL,
    maxit: Optional[int] = None,
) -> tuple[np.ndarray, MinresReport]:
    """MINRES on the saddle system preconditioned with the Woodbury Schur approximation"""
    return minres_step(operator, preconditioner.apply, rhs, tol, maxit)


def minres_step_laplace(
    operator: SaddleOperator,
    preconditioner: LaplacePreconditioner,
    rhs: np.ndarray,
    tol: float = DEFAULT_TOL,
    maxit: Optional[int] = None,
) -> tuple[np.ndarray, MinresReport]:
    """MINRES on the saddle system with the AMG Laplacian alone as Schur block"""
    return minres_step(operator, preconditioner.apply, rhs, tol, maxit)


class StepStrategy:
    """Base class for the Gauss-Newton linear solve strategies"""

    name = ""

    def __init__(self, beta: float, workers: int = 1):
        if not beta > 0.0:
            raise ParameterError(f"regularization parameter beta must be positive, got {beta}")
        self.beta = beta
        self.workers = workers
        self.mixed: Optional[MixedSystem] = None

    def prepare(self, mixed: MixedSystem) -> None:
        """One-time setup before the nonlinear iteration"""
        self.mixed = mixed

    def compute_step(
        self,
        m: np.ndarray,
        m_ref: np.ndarray,
        g: np.ndarray,
        g_obs: np.ndarray,
        J: np.ndarray,
    ) -> StepResult:
        raise NotImplementedError

    def _require_mixed(self) -> MixedSystem:
        if self.mixed is None:
            raise ParameterError(f"{type(self).__name__}.prepare must run before compute_step")
        return self.mixed


class DirectStep(StepStrategy):
    """Sparse factorization of the mixed Laplacian plus a dense capacitance solve"""

    name = "direct"

    def __init__(self, beta: float, workers: int = 1):
        super().__init__(beta, workers)
        self.factorization: Optional[Factorization] = None

    def prepare(self, mixed: MixedSystem) -> None:
        super().prepare(mixed)
        self.factorization = sparse_factorize(mixed.saddle_matrix())

    def compute_step(
        self,
        m: np.ndarray,
        m_ref: np.ndarray,
        g: np.ndarray,
        g_obs: np.ndarray,
        J: np.ndarray,
    ) -> StepResult:
        self._require_mixed()
        assert self.factorization is not None
        timings: dict[str, float] = {}
        start = time.perf_counter()
        delta_m = direct_step(
            self.factorization, J, m, m_ref, g, g_obs, self.beta, self.workers, timings
        )
        timings["t_norm"] = time.perf_counter() - start
        return StepResult(delta_m, None, timings)


class _MinresStrategy(StepStrategy):
    def __init__(
        self,
        beta: float,
        workers: int = 1,
        tol: float = DEFAULT_TOL,
        maxit: Optional[int] = None,
        amg_config: Optional[AmgConfig] = None,
    ):
        super().__init__(beta, workers)
        self.tol = tol
        self.maxit = maxit
        self.amg_config = amg_config or AmgConfig()
        self.amg: Optional[AmgHierarchy] = None

    def prepare(self, mixed: MixedSystem) -> None:
        super().prepare(mixed)
        self.amg = amg_setup(mixed.lumped_schur(), self.amg_config)


class WoodburyMinresStep(_MinresStrategy):
    """MINRES preconditioned by the Laplace-Woodbury preconditioner"""

    name = "woodbury"

    def compute_step(
        self,
        m: np.ndarray,
        m_ref: np.ndarray,
        g: np.ndarray,
        g_obs: np.ndarray,
        J: np.ndarray,
    ) -> StepResult:
        mixed = self._require_mixed()
        assert self.amg is not None
        start = time.perf_counter()
        preconditioner = build_woodbury_preconditioner(
            mixed.q_diagonal_inverse, self.amg, J, self.beta, self.workers
        )
        operator = SaddleOperator(mixed.Q, mixed.D, J, self.beta)
        rhs = assemble_gn_rhs(m, m_ref, g, g_obs, J, mixed.D, self.beta)
        delta_m, report = minres_step_woodbury(operator, preconditioner, rhs, self.tol, self.maxit)
        timings = dict(preconditioner.timings)
        timings["t_norm"] = time.perf_counter() - start
        return StepResult(delta_m, report, timings)


class LaplaceMinresStep(_MinresStrategy):
    """MINRES preconditioned by the lumped Laplace preconditioner alone"""

    name = "laplace"

    def compute_step(
        self,
        m: np.ndarray,
        m_ref: np.ndarray,
        g: np.ndarray,
        g_obs: np.ndarray,
        J: np.ndarray,
    ) -> StepResult:
        mixed = self._require_mixed()
        assert self.amg is not None
        start = time.perf_counter()
        preconditioner = LaplacePreconditioner(mixed.q_diagonal_inverse, self.amg)
        operator = SaddleOperator(mixed.Q, mixed.D, J, self.beta)
        rhs = assemble_gn_rhs(m, m_ref, g, g_obs, J, mixed.D, self.beta)
        delta_m, report = minres_step_laplace(operator, preconditioner, rhs, self.tol, self.maxit)
        return StepResult(delta_m, report, {"t_norm": time.perf_counter() - start})


STRATEGIES: dict[str, type[StepStrategy]] = {
    DirectStep.name: DirectStep,
    WoodburyMinresStep.name: WoodburyMinresStep,
    LaplaceMinresStep.name: LaplaceMinresStep,
}
