"""Configuration-driven orchestration of meshing, forward modeling and inversion"""

import logging
import time
from dataclasses import dataclass, replace
from typing import Any, Optional

import numpy as np

from errors import DofCapExceeded, ErtError, ParameterError
from fem.forward import synthetic_observations
from fem.mixed import assemble_mixed
from gauss_newton import ALGORITHMS, GnConfig, GnReport, InversionProblem, gauss_newton
from geometry.mesh import Mesh, MeshGrading, build_half_disk_mesh, build_rectangle_mesh
from geometry.survey import Survey, pole_dipole_survey
from inversion.saddle import (
    GOLDEN_RATIO,
    SaddleOperator,
    ideal_preconditioner,
    inclusion_distance,
    preconditioned_spectrum,
)
from models.model_vector import ModelSettings, ModelVector, checkerboard_model, homogeneous_model
from models.reports import BENCH_COLUMNS
from settings import load_config, section, thread_count
from solvers.amg import AmgConfig

logger = logging.getLogger(__name__)


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    K: int
    N: int
    M: int
    beta: float
    distance: float
    tolerance: float = 1e-8

    @property
    def passed(self) -> bool:
        return self.distance <= self.tolerance

    def to_dict(self) -> dict[str, Any]:
        return {
            "K": self.K,
            "N": self.N,
            "M": self.M,
            "beta": self.beta,
            "phi": GOLDEN_RATIO,
            "min_eigenvalue": float(self.eigenvalues.min()),
            "max_eigenvalue": float(self.eigenvalues.max()),
            "inclusion_distance": self.distance,
            "passed": self.passed,
        }


class ErtWorkflow:
    """Wires mesh, survey, forward model and inversion from one configuration"""

    def __init__(self, config_path: Optional[str] = None, config: Optional[dict[str, Any]] = None):
        self.config = config if config is not None else load_config(config_path)
        mesh_config = section(self.config, "mesh")
        self.radius = float(mesh_config.get("radius", 80.0))
        self.n_electrodes = int(mesh_config.get("n_electrodes", 17))
        self.extent = tuple(float(v) for v in mesh_config.get("extent", (-50.0, 50.0)))
        self.grading = MeshGrading.from_dict(mesh_config.get("grading") or {})
        self.dimension = int(section(self.config, "survey").get("dimension", 2))
        self.model_settings = ModelSettings.from_dict(section(self.config, "model"))
        self.gn_config = GnConfig.from_dict(
            {"workers": thread_count(), **section(self.config, "gauss_newton")}
        )
        self.amg_config = AmgConfig.from_dict(section(self.config, "amg"))
        self.spectrum_config = section(self.config, "spectrum")
        self.bench_config = section(self.config, "bench")

    def build_mesh(self, n_electrodes: Optional[int] = None) -> Mesh:
        return build_half_disk_mesh(
            self.radius, n_electrodes or self.n_electrodes, self.extent, self.grading
        )

    def build_survey(self, n_electrodes: Optional[int] = None) -> Survey:
        return pole_dipole_survey(n_electrodes or self.n_electrodes, self.extent, self.dimension)

    def reference_model(self, mesh: Mesh) -> ModelVector:
        return homogeneous_model(mesh.n_cells, self.model_settings.background_resistivity)

    def true_model(self, mesh: Mesh, survey: Survey) -> ModelVector:
        return checkerboard_model(mesh, survey.electrode_positions, self.model_settings)

    def forward(self, mesh: Mesh, survey: Survey, true_model: ModelVector) -> np.ndarray:
        start = time.perf_counter()
        g_obs = synthetic_observations(mesh, true_model, survey)
        logger.info(
            "synthetic data: %d configurations on the refined mesh in %.2fs",
            survey.M,
            time.perf_counter() - start,
        )
        return g_obs

    def invert(
        self,
        mesh: Mesh,
        survey: Survey,
        g_obs: np.ndarray,
        gn_config: Optional[GnConfig] = None,
        m_ref: Optional[ModelVector] = None,
    ) -> tuple[ModelVector, GnReport]:
        problem = InversionProblem(mesh, survey, g_obs, m_ref or self.reference_model(mesh))
        return gauss_newton(problem, gn_config or self.gn_config, self.amg_config)

    def bench(
        self,
        electrodes: Optional[list[int]] = None,
        algorithms: Optional[list[str]] = None,
        gn_config: Optional[GnConfig] = None,
    ) -> list[dict[str, Any]]:
        """Inversions over electrode counts and algorithms; failures become rows, not exceptions"""
        electrodes = electrodes or list(self.bench_config.get("electrodes", [17, 33, 65]))
        algorithms = algorithms or list(self.bench_config.get("algorithms", ALGORITHMS[1:]))
        base = gn_config or self.gn_config
        rows: list[dict[str, Any]] = []
        for n_electrodes in electrodes:
            try:
                mesh = self.build_mesh(n_electrodes)
                survey = self.build_survey(n_electrodes)
                g_obs = self.forward(mesh, survey, self.true_model(mesh, survey))
            except ErtError as exc:
                logger.error("bench setup for %d electrodes failed: %s", n_electrodes, exc)
                rows.extend(self._failed_row(n_electrodes, algo, exc) for algo in algorithms)
                continue
            for algorithm in algorithms:
                config = replace(base, algorithm=algorithm)
                try:
                    _, report = self.invert(mesh, survey, g_obs, config)
                except ErtError as exc:
                    logger.error("bench run %s/%d failed: %s", algorithm, n_electrodes, exc)
                    rows.append(self._failed_row(n_electrodes, algorithm, exc))
                    continue
                for step in report.steps:
                    rows.append(
                        {
                            "nele": n_electrodes,
                            "N": report.N,
                            "M": report.M,
                            "MN": report.M * report.N,
                            "algorithm": algorithm,
                            "step": step.step,
                            "n_iter": "" if step.minres_iters is None else step.minres_iters,
                            "misfit": repr(step.misfit),
                            "updated_misfit": (
                                "" if step.updated_misfit is None else repr(step.updated_misfit)
                            ),
                            "step_length": repr(step.step_length),
                            "t_H": "" if step.t_H is None else repr(step.t_H),
                            "t_C": "" if step.t_C is None else repr(step.t_C),
                            "t_chol": "" if step.t_chol is None else repr(step.t_chol),
                            "t_norm": "" if step.t_norm is None else repr(step.t_norm),
                            "status": "ok" if step.converged else "not_converged",
                        }
                    )
        return rows

    @staticmethod
    def _failed_row(n_electrodes: int, algorithm: str, exc: Exception) -> dict[str, Any]:
        row: dict[str, Any] = {column: "" for column in BENCH_COLUMNS}
        row.update(nele=n_electrodes, algorithm=algorithm, status=f"failed: {exc}")
        return row

    def spectrum(
        self,
        nx: int = 6,
        nz: int = 6,
        n_measurements: Optional[int] = None,
        beta: Optional[float] = None,
        seed: Optional[int] = None,
        dof_cap: Optional[int] = None,
    ) -> SpectrumResult:
        """Eigenvalues of the ideally preconditioned operator on a small rectangle mesh.

        ``n_measurements = 0`` drops the data term, leaving the unperturbed
        mixed Laplacian with its three-point spectrum.
        """
        n_measurements = int(
            self.spectrum_config.get("n_measurements", 5)
            if n_measurements is None
            else n_measurements
        )
        beta = float(self.spectrum_config.get("beta", 1.0) if beta is None else beta)
        seed = int(self.spectrum_config.get("seed", 0) if seed is None else seed)
        dof_cap = int(self.spectrum_config.get("dof_cap", 500) if dof_cap is None else dof_cap)
        if n_measurements < 0:
            raise ParameterError(f"number of measurements must be >= 0, got {n_measurements}")
        if not beta > 0.0:
            raise ParameterError(f"beta must be positive, got {beta}")

        mixed = assemble_mixed(build_rectangle_mesh(nx, nz))
        if mixed.K + mixed.N > dof_cap:
            raise DofCapExceeded(
                f"{mixed.K + mixed.N} degrees of freedom exceed the dense limit of {dof_cap}"
            )
        rng = np.random.default_rng(seed)
        J = rng.standard_normal((n_measurements, mixed.N)) if n_measurements else None
        A = SaddleOperator(mixed.Q, mixed.D, J, beta).to_dense()
        P = ideal_preconditioner(mixed.Q, mixed.D, J, beta)
        eigenvalues = np.sort(preconditioned_spectrum(A, P))
        result = SpectrumResult(
            eigenvalues, mixed.K, mixed.N, n_measurements, beta, inclusion_distance(eigenvalues)
        )
        logger.info(
            "spectrum: %d eigenvalues in [%.6f, %.6f], inclusion distance %.2e",
            len(eigenvalues),
            eigenvalues.min(),
            eigenvalues.max(),
            result.distance,
        )
        return result
