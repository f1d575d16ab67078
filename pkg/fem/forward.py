"""Piecewise-linear forward model of stationary current flow and its Jacobian.

The potential solves ``-div(sigma grad u) = delta_A`` with ``u = 0`` on the
FAR boundary and a natural no-flux condition on the SURFACE. Electrodes are
mesh vertices, so a unit point source is the canonical nodal load.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from errors import ParameterError, SolverError
from geometry.mesh import FAR, Mesh, refine_uniform
from geometry.survey import Survey
from models.model_vector import ModelVector, prolong_to_refined
from solvers.linalg import Factorization, sparse_factorize

logger = logging.getLogger(__name__)

ELIMINATED = -1


def basis_gradients(mesh: Mesh) -> np.ndarray:
    """Cellwise constant gradients of the three hat functions, shape ``(N, 3, 2)``"""
    points = mesh.vertices[mesh.cells]
    opposite = np.roll(points, -2, axis=1) - np.roll(points, -1, axis=1)
    # counterclockwise rotation of the opposite edge, scaled by 1 / (2 |T|)
    rotated = np.stack([-opposite[:, :, 1], opposite[:, :, 0]], axis=2)
    return rotated / (2.0 * mesh.cell_areas)[:, None, None]


def assemble_stiffness(mesh: Mesh, sigma: np.ndarray) -> sp.csr_matrix:
    gradients = basis_gradients(mesh)
    weights = (sigma * mesh.cell_areas)[:, None, None]
    local = np.einsum("cid,cjd->cij", gradients, gradients) * weights
    rows = np.repeat(mesh.cells, 3, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, 3)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_vertices, mesh.n_vertices))
    return sp.csr_matrix(K)


class ForwardSystem:
    """Stiffness matrix with the grounded boundary eliminated and a cached factorization"""

    def __init__(self, mesh: Mesh, model: ModelVector):
        if len(model) != mesh.n_cells:
            raise ParameterError(f"model has {len(model)} cells, mesh has {mesh.n_cells}")
        self.mesh = mesh
        self.model = model
        self.sigma = model.sigma

        grounded = np.zeros(mesh.n_vertices, dtype=bool)
        grounded[mesh.boundary_nodes(FAR)] = True
        if grounded.all() or not grounded.any():
            raise ParameterError("forward problem needs a nonempty grounded boundary")
        self.free_nodes = np.flatnonzero(~grounded)
        self.dof_map = np.full(mesh.n_vertices, ELIMINATED, dtype=np.int64)
        self.dof_map[self.free_nodes] = np.arange(len(self.free_nodes))

        full = assemble_stiffness(mesh, self.sigma)
        self.matrix = sp.csr_matrix(full[self.free_nodes][:, self.free_nodes])
        self._factorization: Optional[Factorization] = None

    @property
    def factorization(self) -> Factorization:
        if self._factorization is None:
            self._factorization = sparse_factorize(self.matrix)
        return self._factorization

    def solve(self, load: np.ndarray) -> np.ndarray:
        """Potentials at all vertices for nodal loads given per vertex (one column per load)"""
        load = np.asarray(load, dtype=float)
        reduced = self.factorization.solve(load[self.free_nodes])
        if not np.all(np.isfinite(reduced)):
            raise SolverError("forward solve produced non-finite potentials")
        u = np.zeros((self.mesh.n_vertices,) + load.shape[1:])
        u[self.free_nodes] = reduced
        return u

    def unit_pole_loads(self, nodes: np.ndarray) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.int64)
        if np.any(self.dof_map[nodes] == ELIMINATED):
            raise ParameterError("source electrode lies on the grounded boundary")
        loads = np.zeros((self.mesh.n_vertices, len(nodes)))
        loads[nodes, np.arange(len(nodes))] = 1.0
        return loads


def assemble_forward(mesh: Mesh, model: ModelVector) -> ForwardSystem:
    return ForwardSystem(mesh, model)


def solve_unit_pole(system: ForwardSystem, electrode: int) -> np.ndarray:
    return system.solve(system.unit_pole_loads(np.array([electrode]))[:, 0])


@dataclass
class ResponseJacobian:
    """Apparent resistivities ``g`` (ohm m) and their derivatives ``J`` w.r.t. ``m``"""

    g: np.ndarray
    J: np.ndarray

    @property
    def M(self) -> int:
        return len(self.g)


def electrode_nodes_for(mesh: Mesh, survey: Survey) -> np.ndarray:
    """Mesh vertices of the survey electrodes, checked against their positions"""
    if len(mesh.electrode_nodes) != survey.n_electrodes:
        raise ParameterError(
            f"mesh has {len(mesh.electrode_nodes)} electrode nodes, survey has "
            f"{survey.n_electrodes} electrodes"
        )
    coordinates = mesh.vertices[mesh.electrode_nodes]
    tolerance = 1e-9 * mesh.diameter
    expected = np.column_stack([survey.electrode_positions, np.zeros(survey.n_electrodes)])
    if np.abs(coordinates - expected).max() > tolerance:
        raise ParameterError("survey electrode positions do not coincide with mesh electrode nodes")
    return np.asarray(mesh.electrode_nodes)


def evaluate_response_and_jacobian(
    mesh: Mesh, model: ModelVector, survey: Survey, system: Optional[ForwardSystem] = None
) -> ResponseJacobian:
    """Responses and adjoint Jacobian from one pole solve per used electrode.

    For configuration ``i`` with transmitter potential ``v_T = u_A - u_B`` and
    receiver potential ``v_R = u_M - u_N``,
    ``J[i, c] = -k_i sigma_c |T_c| grad v_T . grad v_R`` and ``g = -J 1``.
    """
    system = system or assemble_forward(mesh, model)
    nodes = electrode_nodes_for(mesh, survey)
    used = survey.used_electrodes()
    potentials = system.solve(system.unit_pole_loads(nodes[used]))
    column_of = {int(e): j for j, e in enumerate(used)}

    gradients = basis_gradients(mesh)
    # (cells, 2, used electrodes)
    potential_gradients = np.einsum("cid,cie->cde", gradients, potentials[mesh.cells])
    weights = system.sigma * mesh.cell_areas

    J = np.empty((survey.M, mesh.n_cells))
    for i, config in enumerate(survey.configs):
        grad_T = potential_gradients[:, :, column_of[config.iA]].copy()
        if not config.pole_at_infinity:
            grad_T -= potential_gradients[:, :, column_of[config.iB]]
        grad_R = (
            potential_gradients[:, :, column_of[config.iM]]
            - potential_gradients[:, :, column_of[config.iN]]
        )
        J[i] = -config.k * weights * np.einsum("cd,cd->c", grad_T, grad_R)
    g = -J.sum(axis=1)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(J))):
        raise SolverError("non-finite responses or Jacobian")
    logger.debug("evaluated %d responses on %d cells", survey.M, mesh.n_cells)
    return ResponseJacobian(g, J)


def synthetic_observations(mesh: Mesh, true_model: ModelVector, survey: Survey) -> np.ndarray:
    """Responses of the true model computed on the once uniformly refined mesh"""
    fine_mesh = refine_uniform(mesh)
    fine_model = prolong_to_refined(true_model)
    return evaluate_response_and_jacobian(fine_mesh, fine_model, survey).g


def save_observations(path: Union[str, Path], g_obs: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["index", "g_obs"])
        for index, value in enumerate(np.asarray(g_obs, dtype=float)):
            writer.writerow([index, repr(float(value))])


def load_observations(path: Union[str, Path]) -> np.ndarray:
    with open(path, newline="") as f:
        rows = sorted(csv.DictReader(f), key=lambda row: int(row["index"]))
    return np.array([float(row["g_obs"]) for row in rows])
