"""Outer Gauss-Newton loop with a damped update and per-step records"""

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np

from errors import FactorizationError, ParameterError, SolverError
from fem.forward import ResponseJacobian, evaluate_response_and_jacobian
from fem.mixed import MixedSystem, RegularizationEnergy, assemble_mixed
from geometry.mesh import Mesh
from geometry.survey import Survey
from inversion.steps import DirectStep, LaplaceMinresStep, StepStrategy, WoodburyMinresStep
from models.model_vector import ModelVector
from solvers.amg import AmgConfig
from solvers.linalg import DEFAULT_TOL

logger = logging.getLogger(__name__)

DIRECT = "direct"
WOODBURY_MINRES = "woodbury"
LAPLACE_MINRES = "laplace"
ALGORITHMS = (DIRECT, WOODBURY_MINRES, LAPLACE_MINRES)


@dataclass(frozen=True)
class GnConfig:
    """Gauss-Newton settings.

    ``minres_maxit = None`` means ``2 (K + N)``. ``max_backtracks`` bounds the
    step halvings of the damped update; ``0`` takes every full step.
    """

    beta: float = 0.1
    max_outer_steps: int = 2
    minres_tol: float = DEFAULT_TOL
    minres_maxit: Optional[int] = None
    algorithm: str = WOODBURY_MINRES
    misfit_reduction: Optional[float] = None
    max_backtracks: int = 10
    workers: int = 1

    @classmethod
    def from_dict(cls, config: dict[str, Any]) -> "GnConfig":
        maxit = config.get("minres_maxit")
        reduction = config.get("misfit_reduction")
        gn_config = cls(
            beta=float(config.get("beta", 0.1)),
            max_outer_steps=int(config.get("max_outer_steps", 2)),
            minres_tol=float(config.get("minres_tol", DEFAULT_TOL)),
            minres_maxit=int(maxit) if maxit is not None else None,
            algorithm=str(config.get("algorithm", WOODBURY_MINRES)),
            misfit_reduction=float(reduction) if reduction is not None else None,
            max_backtracks=int(config.get("max_backtracks", 10)),
            workers=int(config.get("workers", 1)),
        )
        gn_config.validate()
        return gn_config

    def validate(self) -> None:
        if not self.beta > 0.0:
            raise ParameterError(f"beta must be positive, got {self.beta}")
        if self.max_outer_steps < 1:
            raise ParameterError(f"max_outer_steps must be positive, got {self.max_outer_steps}")
        if not self.minres_tol > 0.0:
            raise ParameterError(f"minres_tol must be positive, got {self.minres_tol}")
        if self.minres_maxit is not None and self.minres_maxit < 1:
            raise ParameterError(f"minres_maxit must be positive, got {self.minres_maxit}")
        if self.algorithm not in ALGORITHMS:
            raise ParameterError(f"algorithm must be one of {ALGORITHMS}, got '{self.algorithm}'")
        if self.misfit_reduction is not None and not 0.0 < self.misfit_reduction < 1.0:
            raise ParameterError(
                f"misfit_reduction must lie in (0, 1), got {self.misfit_reduction}"
            )
        if self.max_backtracks < 0:
            raise ParameterError(f"max_backtracks must be non-negative, got {self.max_backtracks}")
        if self.workers < 1:
            raise ParameterError(f"workers must be positive, got {self.workers}")


@dataclass
class InversionProblem:
    mesh: Mesh
    survey: Survey
    g_obs: np.ndarray
    m_ref: ModelVector
    m_start: Optional[ModelVector] = None
    neumann_tags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        self.g_obs = np.asarray(self.g_obs, dtype=float)
        if len(self.g_obs) != self.survey.M:
            raise ParameterError(
                f"{len(self.g_obs)} observations for a survey of {self.survey.M} configurations"
            )
        if len(self.m_ref) != self.mesh.n_cells:
            raise ParameterError("reference model does not match the mesh")
        if self.m_start is not None and len(self.m_start) != self.mesh.n_cells:
            raise ParameterError("starting model does not match the mesh")


@dataclass
class StepRecord:
    """One outer step.

    ``misfit`` is ``|g(m) - g_obs|`` before the update and ``updated_misfit``
    after it; ``objective`` is the regularized objective before the update.
    """

    step: int
    misfit: float
    minres_iters: Optional[int] = None
    converged: bool = True
    relative_residual: Optional[float] = None
    t_H: Optional[float] = None
    t_C: Optional[float] = None
    t_chol: Optional[float] = None
    t_norm: Optional[float] = None
    objective: Optional[float] = None
    step_length: float = 1.0
    updated_misfit: Optional[float] = None
    residual_history: list[float] = field(default_factory=list)
    preconditioned_history: list[float] = field(default_factory=list)

    def to_dict(self, include_history: bool = False) -> dict[str, Any]:
        data = asdict(self)
        if not include_history:
            data.pop("residual_history")
            data.pop("preconditioned_history")
        return data


@dataclass
class GnReport:
    algorithm: str
    K: int
    N: int
    M: int
    steps: list[StepRecord] = field(default_factory=list)
    final_misfit: float = float("nan")
    stopped_early: bool = False
    stagnated: bool = False

    @property
    def misfits(self) -> list[float]:
        return [step.misfit for step in self.steps] + [self.final_misfit]

    def to_dict(self) -> dict[str, Any]:
        return {
            "algorithm": self.algorithm,
            "K": self.K,
            "N": self.N,
            "M": self.M,
            "final_misfit": self.final_misfit,
            "stopped_early": self.stopped_early,
            "stagnated": self.stagnated,
            "steps": [step.to_dict() for step in self.steps],
        }


def make_strategy(config: GnConfig, amg_config: Optional[AmgConfig] = None) -> StepStrategy:
    if config.algorithm == DIRECT:
        return DirectStep(config.beta, config.workers)
    minres_class = WoodburyMinresStep if config.algorithm == WOODBURY_MINRES else LaplaceMinresStep
    return minres_class(
        config.beta, config.workers, config.minres_tol, config.minres_maxit, amg_config
    )


def _misfit(g: np.ndarray, g_obs: np.ndarray) -> float:
    return float(np.linalg.norm(g - g_obs))


class Objective:
    """``|g(m) - g_obs|^2 / beta + (m - m_ref)^T S (m - m_ref)`` with ``S = D Q^-1 D^T``"""

    def __init__(
        self, energy: RegularizationEnergy, g_obs: np.ndarray, m_ref: np.ndarray, beta: float
    ):
        self.energy = energy
        self.g_obs = g_obs
        self.m_ref = m_ref
        self.beta = beta

    def __call__(self, m: np.ndarray, g: np.ndarray) -> float:
        return _misfit(g, self.g_obs) ** 2 / self.beta + self.energy(m - self.m_ref)


def damped_update(
    problem: InversionProblem,
    objective: Objective,
    m: np.ndarray,
    current: float,
    delta_m: np.ndarray,
    max_backtracks: int,
) -> Optional[tuple[np.ndarray, ResponseJacobian, float, float]]:
    """First of ``m + dm, m + dm/2, ...`` that does not raise the objective.

    A trial whose forward problem cannot be factorized counts as a rejection.
    Returns ``(m, response, step_length, objective)``, or ``None`` once
    ``max_backtracks`` halvings found no decrease. With ``max_backtracks = 0``
    the full step is taken unconditionally.
    """
    step_length = 1.0
    for _ in range(max_backtracks + 1):
        trial = m + step_length * delta_m
        try:
            response = evaluate_response_and_jacobian(
                problem.mesh, ModelVector(trial), problem.survey
            )
        except (FactorizationError, SolverError) as exc:
            if max_backtracks == 0:
                raise
            logger.debug("step length %g rejected: %s", step_length, exc)
        else:
            value = objective(trial, response.g)
            if max_backtracks == 0 or value <= current:
                return trial, response, step_length, value
            logger.debug("step length %g raises the objective to %.6e", step_length, value)
        step_length *= 0.5
    return None


def gauss_newton(
    problem: InversionProblem,
    config: GnConfig,
    amg_config: Optional[AmgConfig] = None,
    mixed: Optional[MixedSystem] = None,
) -> tuple[ModelVector, GnReport]:
    """Damped Gauss-Newton updates for ``max_outer_steps`` steps.

    The mixed Laplacian factorization or the AMG hierarchy is set up once
    before the loop. Each update ``m <- m + a dm`` takes the largest
    ``a = 2^-k`` that does not raise the regularized objective, so a full step is
    kept whenever it already does. The loop ends early when no halving helps
    (``stagnated``) or, with ``misfit_reduction`` set, once the misfit falls
    below that fraction of the initial misfit.
    """
    config.validate()
    mixed = mixed or assemble_mixed(problem.mesh, problem.neumann_tags)
    strategy = make_strategy(config, amg_config)
    setup_start = time.perf_counter()
    strategy.prepare(mixed)
    logger.info(
        "Gauss-Newton (%s): K=%d N=%d M=%d beta=%g, setup %.2fs",
        config.algorithm,
        mixed.K,
        mixed.N,
        problem.survey.M,
        config.beta,
        time.perf_counter() - setup_start,
    )

    m_ref = problem.m_ref.m
    m = (problem.m_start or problem.m_ref).m.copy()
    objective = Objective(mixed.regularization_energy(), problem.g_obs, m_ref, config.beta)
    report = GnReport(config.algorithm, mixed.K, mixed.N, problem.survey.M)
    response = evaluate_response_and_jacobian(problem.mesh, ModelVector(m), problem.survey)
    initial_misfit = _misfit(response.g, problem.g_obs)
    current = objective(m, response.g)

    for step in range(1, config.max_outer_steps + 1):
        misfit = _misfit(response.g, problem.g_obs)
        if (
            config.misfit_reduction is not None
            and step > 1
            and misfit <= config.misfit_reduction * initial_misfit
        ):
            report.stopped_early = True
            break
        result = strategy.compute_step(m, m_ref, response.g, problem.g_obs, response.J)
        if not np.all(np.isfinite(result.delta_m)):
            raise SolverError(f"non-finite model update in Gauss-Newton step {step}")
        record = StepRecord(
            step=step,
            misfit=misfit,
            minres_iters=result.minres_iterations,
            converged=result.converged,
            t_H=result.timings.get("t_H"),
            t_C=result.timings.get("t_C"),
            t_chol=result.timings.get("t_chol"),
            t_norm=result.timings.get("t_norm"),
            objective=current,
        )
        if result.report is not None:
            record.relative_residual = result.report.true_relative_residual
            record.residual_history = list(result.report.relative_residuals)
            record.preconditioned_history = list(result.report.preconditioned_residuals)
        report.steps.append(record)

        update = damped_update(
            problem, objective, m, current, result.delta_m, config.max_backtracks
        )
        if update is None:
            record.step_length = 0.0
            record.updated_misfit = misfit
            report.stagnated = True
            logger.warning(
                "step %d: no decrease of the objective after %d halvings, stopping",
                step,
                config.max_backtracks,
            )
            break
        m, response, record.step_length, current = update
        record.updated_misfit = _misfit(response.g, problem.g_obs)
        logger.info(
            "step %d: misfit %.6e -> %.6e, step length %g, MINRES iterations %s, |dm| %.3e",
            step,
            misfit,
            record.updated_misfit,
            record.step_length,
            record.minres_iters if record.minres_iters is not None else "-",
            float(np.linalg.norm(result.delta_m)),
        )

    report.final_misfit = _misfit(response.g, problem.g_obs)
    logger.info("final misfit %.6e after %d steps", report.final_misfit, len(report.steps))
    return ModelVector(m), report
