"""Algebraic multigrid approximate inverse for the lumped Schur complement"""

import logging
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
import pyamg
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from errors import ParameterError
from solvers.linalg import Factorization, apply_columns, as_csr, is_symmetric, sparse_factorize

logger = logging.getLogger(__name__)

VCYCLE = "vcycle"
EXACT = "exact"
AMG_MODES = (VCYCLE, EXACT)


@dataclass(frozen=True)
class AmgConfig:
    mode: str = VCYCLE
    max_coarse: int = 64
    max_levels: int = 10
    jacobi_omega: float = 2.0 / 3.0

    @classmethod
    def from_dict(cls, config: dict[str, Any]) -> "AmgConfig":
        amg_config = cls(
            mode=str(config.get("mode", VCYCLE)),
            max_coarse=int(config.get("max_coarse", 64)),
            max_levels=int(config.get("max_levels", 10)),
            jacobi_omega=float(config.get("jacobi_omega", 2.0 / 3.0)),
        )
        amg_config.validate()
        return amg_config

    def validate(self) -> None:
        if self.mode not in AMG_MODES:
            raise ParameterError(f"AMG mode must be one of {AMG_MODES}, got '{self.mode}'")
        if self.max_coarse < 1 or self.max_levels < 1:
            raise ParameterError("AMG max_coarse and max_levels must be positive")
        if not 0.0 < self.jacobi_omega < 1.0:
            raise ParameterError(f"Jacobi damping must lie in (0, 1), got {self.jacobi_omega}")


class AmgHierarchy:
    """Smoothed-aggregation hierarchy applied as one fixed symmetric V-cycle.

    In ``exact`` mode the V-cycle is replaced by a sparse direct solve of the
    finest matrix, which serves as a reference inverse.
    """

    def __init__(
        self,
        matrix: sp.csr_matrix,
        config: AmgConfig,
        solver: Optional[Any] = None,
        factorization: Optional[Factorization] = None,
    ):
        self.matrix = matrix
        self.config = config
        self._solver = solver
        self._factorization = factorization
        self._preconditioner: Optional[LinearOperator] = (
            solver.aspreconditioner(cycle="V") if solver is not None else None
        )

    @property
    def mode(self) -> str:
        return self.config.mode

    @property
    def n(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def level_matrices(self) -> list[sp.csr_matrix]:
        if self._solver is None:
            return [self.matrix]
        return [sp.csr_matrix(level.A) for level in self._solver.levels]

    @property
    def prolongations(self) -> list[sp.csr_matrix]:
        if self._solver is None:
            return []
        return [sp.csr_matrix(level.P) for level in self._solver.levels[:-1]]

    @property
    def restrictions(self) -> list[sp.csr_matrix]:
        if self._solver is None:
            return []
        return [sp.csr_matrix(level.R) for level in self._solver.levels[:-1]]

    @property
    def smoother_diagonals(self) -> list[np.ndarray]:
        return [np.asarray(A.diagonal()) for A in self.level_matrices]

    @property
    def level_sizes(self) -> list[int]:
        return [A.shape[0] for A in self.level_matrices]

    @property
    def operator_complexity(self) -> float:
        return sum(A.nnz for A in self.level_matrices) / max(self.matrix.nnz, 1)

    def galerkin_error(self) -> float:
        """Largest relative deviation of a coarse matrix from ``R A P``"""
        worst = 0.0
        matrices = self.level_matrices
        levels = zip(matrices, matrices[1:], self.prolongations, self.restrictions)
        for fine, coarse, P, R in levels:
            triple = sp.csr_matrix(R @ fine @ P)
            scale = max(abs(triple).max(), 1e-300)
            worst = max(worst, float(abs(coarse - triple).max()) / scale)
        return worst

    def apply(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if r.shape != (self.n,):
            raise ParameterError(f"vector of length {r.shape[0]} does not match AMG size {self.n}")
        if not np.any(r):
            return np.zeros(self.n)
        if self._factorization is not None:
            return self._factorization.solve(r)
        assert self._preconditioner is not None
        return np.asarray(self._preconditioner.matvec(r)).ravel()

    def apply_columns(self, R: np.ndarray, workers: int = 1) -> np.ndarray:
        return apply_columns(self.apply, R, workers)

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator((self.n, self.n), matvec=self.apply, dtype=float)


def amg_setup(S_hat: sp.spmatrix, config: Optional[AmgConfig] = None) -> AmgHierarchy:
    config = config or AmgConfig()
    config.validate()
    matrix = as_csr(S_hat)
    if matrix.shape[0] != matrix.shape[1]:
        raise ParameterError(f"AMG needs a square matrix, got shape {matrix.shape}")
    if not is_symmetric(matrix):
        raise ParameterError("AMG input matrix is not symmetric")
    if np.any(matrix.diagonal() <= 0.0):
        raise ParameterError("AMG input matrix has a non-positive diagonal entry")

    if config.mode == EXACT:
        logger.debug("AMG exact mode: sparse factorization of %d x %d", *matrix.shape)
        return AmgHierarchy(matrix, config, factorization=sparse_factorize(matrix))

    smoother = ("jacobi", {"omega": config.jacobi_omega, "iterations": 1, "withrho": False})
    solver = pyamg.smoothed_aggregation_solver(
        matrix,
        symmetry="symmetric",
        presmoother=smoother,
        postsmoother=smoother,
        max_levels=config.max_levels,
        max_coarse=config.max_coarse,
        coarse_solver="splu",
        keep=False,
    )
    hierarchy = AmgHierarchy(matrix, config, solver=solver)
    logger.debug(
        "AMG hierarchy: level sizes %s, operator complexity %.2f",
        hierarchy.level_sizes,
        hierarchy.operator_complexity,
    )
    return hierarchy


def amg_apply(hierarchy: AmgHierarchy, r: np.ndarray) -> np.ndarray:
    return hierarchy.apply(r)
