"""Gauss-Newton saddle-point operator, right-hand side and block preconditioners.

The unknown is ``[zeta; dm]`` with the flux ``zeta`` in the RT0 space (length
K) and the update ``dm`` cellwise constant (length N). The operator is
``[[Q, D^T], [D, -(1/beta) J^T J]]``.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from errors import NotSPDError, ParameterError
from solvers.amg import AmgHierarchy
from solvers.linalg import cholesky_solve, dense_cholesky

logger = logging.getLogger(__name__)

GOLDEN_RATIO = (1.0 + 5.0**0.5) / 2.0


def _check_beta(beta: float) -> None:
    if not beta > 0.0:
        raise ParameterError(f"regularization parameter beta must be positive, got {beta}")


class SaddleOperator:
    """Matrix-free ``A_beta,m``; with ``J = None`` it is the mixed Laplacian"""

    def __init__(
        self, Q: sp.spmatrix, D: sp.spmatrix, J: Optional[np.ndarray] = None, beta: float = 1.0
    ):
        _check_beta(beta)
        if D.shape[1] != Q.shape[0]:
            raise ParameterError(f"non-conforming shapes Q {Q.shape} and D {D.shape}")
        if J is not None and J.shape[1] != D.shape[0]:
            raise ParameterError(f"Jacobian has {J.shape[1]} columns, expected {D.shape[0]}")
        self.Q = sp.csr_matrix(Q)
        self.D = sp.csr_matrix(D)
        self.DT = sp.csr_matrix(D.T)
        self.J = J
        self.beta = beta

    @property
    def K(self) -> int:
        return int(self.Q.shape[0])

    @property
    def N(self) -> int:
        return int(self.D.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        n = self.K + self.N
        return (n, n)

    def apply(self, x: np.ndarray) -> np.ndarray:
        zeta, dm = x[: self.K], x[self.K :]
        top = self.Q @ zeta + self.DT @ dm
        bottom = self.D @ zeta
        if self.J is not None:
            bottom = bottom - (self.J.T @ (self.J @ dm)) / self.beta
        return np.concatenate([top, bottom])

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self.apply, dtype=float)

    def to_dense(self) -> np.ndarray:
        A = sp.bmat([[self.Q, self.DT], [self.D, None]]).toarray()
        if self.J is not None:
            A[self.K :, self.K :] -= self.J.T @ self.J / self.beta
        return np.asarray(A)


def assemble_gn_rhs(
    m: np.ndarray,
    m_ref: np.ndarray,
    g: np.ndarray,
    g_obs: np.ndarray,
    J: np.ndarray,
    D: sp.spmatrix,
    beta: float,
) -> np.ndarray:
    """``[-D^T (m - m_ref); (1/beta) J^T (g - g_obs)]``"""
    _check_beta(beta)
    N, K = D.shape
    if len(m) != N or len(m_ref) != N:
        raise ParameterError(f"model vectors must have length {N}")
    if J.shape != (len(g), N) or len(g_obs) != len(g):
        raise ParameterError(
            f"Jacobian {J.shape} does not match {len(g)} responses, "
            f"{len(g_obs)} observations and {N} cells"
        )
    top = -(D.T @ (np.asarray(m) - np.asarray(m_ref)))
    bottom = J.T @ (np.asarray(g) - np.asarray(g_obs)) / beta
    return np.concatenate([top, bottom])


def exact_schur_complement(Q: sp.spmatrix, D: sp.spmatrix) -> np.ndarray:
    """Dense ``D Q^-1 D^T`` for small instances"""
    Q_dense = Q.toarray()
    D_dense = D.toarray()
    return np.asarray(D_dense @ scipy.linalg.solve(Q_dense, D_dense.T, assume_a="pos"))


def ideal_preconditioner(
    Q: sp.spmatrix, D: sp.spmatrix, J: Optional[np.ndarray] = None, beta: float = 1.0
) -> np.ndarray:
    """Dense ``diag(Q, S)``, or ``diag(Q, S + (1/beta) J^T J)`` when ``J`` is given"""
    _check_beta(beta)
    S = exact_schur_complement(Q, D)
    if J is not None:
        S = S + J.T @ J / beta
    return np.asarray(scipy.linalg.block_diag(Q.toarray(), S))


class DenseInverse:
    """Inverse of a dense SPD matrix applied through its Cholesky factor"""

    def __init__(self, P: np.ndarray):
        self.L = dense_cholesky(P)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        return cholesky_solve(self.L, y)


def preconditioned_spectrum(A: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Eigenvalues of ``P^-1 A`` from the symmetric-definite pencil ``(A, P)``"""
    return np.asarray(scipy.linalg.eigh(A, P, eigvals_only=True))


def inclusion_distance(eigenvalues: np.ndarray) -> float:
    """Largest distance of an eigenvalue from ``[-1, -1/phi] U [1, phi]``"""
    lam = np.asarray(eigenvalues)
    lower = np.clip(lam, -1.0, -1.0 / GOLDEN_RATIO)
    upper = np.clip(lam, 1.0, GOLDEN_RATIO)
    distance = np.minimum(np.abs(lam - lower), np.abs(lam - upper))
    return float(distance.max()) if len(distance) else 0.0


class LaplacePreconditioner:
    """``diag(diag(Q)^-1, S_hat^-1)`` with one AMG V-cycle for ``S_hat``"""

    def __init__(self, q_diagonal_inverse: np.ndarray, amg: AmgHierarchy):
        self.q_diagonal_inverse = np.asarray(q_diagonal_inverse, dtype=float)
        self.amg = amg

    @property
    def K(self) -> int:
        return len(self.q_diagonal_inverse)

    def apply(self, y: np.ndarray) -> np.ndarray:
        return np.concatenate(
            [self.q_diagonal_inverse * y[: self.K], self.amg.apply(y[self.K :])]
        )


def capacitance_cholesky(C: np.ndarray) -> np.ndarray:
    """Cholesky factor of the capacitance matrix, retrying once on its symmetric part"""
    try:
        return dense_cholesky(C)
    except NotSPDError as exc:
        logger.warning("capacitance Cholesky failed (%s), retrying symmetrized", exc)
        return dense_cholesky(0.5 * (C + C.T))


@dataclass
class WoodburyPreconditioner:
    """Lumped-Laplace preconditioner updated by the data term through the Woodbury formula.

    The Schur block applies
    ``S_hat^-1 - (1/beta) H_hat C^-1 H_hat^T`` with ``H_hat = S_hat^-1 J^T``
    and ``C = I + (1/beta) J H_hat = L L^T``.
    """

    q_diagonal_inverse: np.ndarray
    amg: AmgHierarchy
    H_hat: np.ndarray
    L: np.ndarray
    beta: float
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.q_diagonal_inverse)

    @property
    def M(self) -> int:
        return int(self.H_hat.shape[1])

    def apply(self, y: np.ndarray) -> np.ndarray:
        y1, y2 = y[: self.K], y[self.K :]
        correction = self.H_hat @ cholesky_solve(self.L, self.H_hat.T @ y2)
        return np.concatenate(
            [self.q_diagonal_inverse * y1, self.amg.apply(y2) - correction / self.beta]
        )

    def capacitance(self) -> np.ndarray:
        return np.asarray(self.L @ self.L.T)


def build_woodbury_preconditioner(
    q_diagonal_inverse: np.ndarray,
    amg: AmgHierarchy,
    J: np.ndarray,
    beta: float,
    workers: int = 1,
) -> WoodburyPreconditioner:
    _check_beta(beta)
    if J.shape[1] != amg.n:
        raise ParameterError(f"Jacobian has {J.shape[1]} columns, AMG size is {amg.n}")
    start = time.perf_counter()
    H_hat = amg.apply_columns(J.T, workers)
    t_H = time.perf_counter() - start

    start = time.perf_counter()
    C = np.eye(J.shape[0]) + (J @ H_hat) / beta
    t_C = time.perf_counter() - start

    start = time.perf_counter()
    L = capacitance_cholesky(C)
    t_chol = time.perf_counter() - start
    logger.debug("Woodbury preconditioner: M=%d, t_H=%.3fs t_C=%.3fs", J.shape[0], t_H, t_C)
    return WoodburyPreconditioner(
        np.asarray(q_diagonal_inverse, dtype=float),
        amg,
        H_hat,
        L,
        beta,
        {"t_H": t_H, "t_C": t_C, "t_chol": t_chol},
    )


def apply_woodbury_preconditioner(
    preconditioner: WoodburyPreconditioner, y: np.ndarray
) -> np.ndarray:
    """Block-diagonal application of the Laplace-Woodbury preconditioner to ``y``"""
    return preconditioner.apply(y)
