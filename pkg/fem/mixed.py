"""Lowest-order Raviart-Thomas / piecewise-constant mixed discretization.

The flux space is RT0 with one degree of freedom per edge, normalized to a
unit normal flux across the edge. The global normal of an edge ``(lo, hi)``
is its tangent ``hi - lo`` rotated clockwise, which is the outward normal of
the cell that traverses the edge from ``lo`` to ``hi``. Edges on the
Neumann part of the regularization boundary carry no degree of freedom.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from errors import AssemblyError, ParameterError
from geometry.mesh import BOUNDARY_TAGS, Mesh
from solvers.linalg import sparse_factorize

logger = logging.getLogger(__name__)

CONSTRAINED = -1


class MixedSpaces:
    """RT0 x dP0 degrees of freedom on a mesh.

    ``neumann_tags`` selects the boundary tags where the normal flux is
    prescribed to vanish; the remaining boundary is the Dirichlet part and
    must not be empty.
    """

    def __init__(self, mesh: Mesh, neumann_tags: Sequence[str] = ()):
        unknown = set(neumann_tags) - set(BOUNDARY_TAGS)
        if unknown:
            raise ParameterError(f"unknown boundary tags {sorted(unknown)}")
        self.mesh = mesh
        self.neumann_tags = tuple(neumann_tags)

        constrained = np.zeros(mesh.n_edges, dtype=bool)
        for tag in self.neumann_tags:
            constrained[mesh.edges_with_tag(tag)] = True
        if constrained[mesh.boundary_edges].all():
            raise ParameterError("the Dirichlet part of the regularization boundary is empty")

        edge_dof_map = np.full(mesh.n_edges, CONSTRAINED, dtype=np.int64)
        edge_dof_map[~constrained] = np.arange(int((~constrained).sum()))
        edge_dof_map.setflags(write=False)
        self.edge_dof_map = edge_dof_map

    @property
    def K(self) -> int:
        return int((self.edge_dof_map != CONSTRAINED).sum())

    @property
    def N(self) -> int:
        return self.mesh.n_cells

    @property
    def n_dofs(self) -> int:
        return self.K + self.N


def local_mass_matrices(mesh: Mesh) -> np.ndarray:
    """Per-cell 3x3 RT0 mass matrices in the cells' local edge order.

    With ``psi_i = s_i (x - P_i) / (2 |T|)`` for the edge opposite ``P_i`` and
    ``s_i`` the cell's orientation sign, the integrals follow exactly from
    ``int lambda_k lambda_l = |T| (1 + delta_kl) / 12``.
    """
    points = mesh.vertices[mesh.cells]
    areas = mesh.cell_areas
    # offsets[c, i, k] = P_k - P_i
    offsets = points[:, None, :, :] - points[:, :, None, :]
    sums = offsets.sum(axis=2)
    integrals = (
        np.einsum("cid,cjd->cij", sums, sums) + np.einsum("cikd,cjkd->cij", offsets, offsets)
    ) * (areas / 12.0)[:, None, None]
    signs = mesh.cell_edge_signs.astype(float)
    scale = signs[:, :, None] * signs[:, None, :] / (4.0 * areas**2)[:, None, None]
    return np.asarray(integrals * scale)


def assemble_Q(spaces: MixedSpaces) -> sp.csr_matrix:
    mesh = spaces.mesh
    local = local_mass_matrices(mesh)
    dofs = spaces.edge_dof_map[mesh.cell_edges]
    rows = np.repeat(dofs, 3, axis=1).ravel()
    cols = np.tile(dofs, (1, 3)).ravel()
    values = local.reshape(len(dofs), 9).ravel()
    keep = (rows != CONSTRAINED) & (cols != CONSTRAINED)
    Q = sp.coo_matrix((values[keep], (rows[keep], cols[keep])), shape=(spaces.K, spaces.K))
    return sp.csr_matrix(Q)


def assemble_D(spaces: MixedSpaces) -> sp.csr_matrix:
    """Cellwise divergence: entry ``(c, e)`` is the outward flux sign of edge ``e``"""
    mesh = spaces.mesh
    dofs = spaces.edge_dof_map[mesh.cell_edges].ravel()
    cells = np.repeat(np.arange(mesh.n_cells), 3)
    signs = mesh.cell_edge_signs.ravel().astype(float)
    keep = dofs != CONSTRAINED
    D = sp.coo_matrix((signs[keep], (cells[keep], dofs[keep])), shape=(spaces.N, spaces.K))
    return sp.csr_matrix(D)


def assemble_lumped_schur(Q: sp.spmatrix, D: sp.spmatrix) -> sp.csr_matrix:
    """``D diag(Q)^-1 D^T``"""
    if Q.shape[0] != Q.shape[1] or D.shape[1] != Q.shape[0]:
        raise ParameterError(f"non-conforming shapes Q {Q.shape} and D {D.shape}")
    diagonal = np.asarray(Q.diagonal())
    if np.any(diagonal <= 0.0):
        raise AssemblyError("mass matrix has a non-positive diagonal entry (degenerate cell)")
    S_hat = sp.csr_matrix(D @ sp.diags(1.0 / diagonal) @ D.T)
    S_hat.sort_indices()
    return S_hat


def saddle_matrix(Q: sp.spmatrix, D: sp.spmatrix) -> sp.csr_matrix:
    """Mixed Laplacian ``[[Q, D^T], [D, 0]]``"""
    return sp.csr_matrix(sp.bmat([[Q, D.T], [D, None]], format="csr"))


@dataclass
class MixedSystem:
    spaces: MixedSpaces
    Q: sp.csr_matrix
    D: sp.csr_matrix

    @property
    def K(self) -> int:
        return self.spaces.K

    @property
    def N(self) -> int:
        return self.spaces.N

    @property
    def q_diagonal_inverse(self) -> np.ndarray:
        return 1.0 / np.asarray(self.Q.diagonal())

    def lumped_schur(self) -> sp.csr_matrix:
        return assemble_lumped_schur(self.Q, self.D)

    def saddle_matrix(self) -> sp.csr_matrix:
        return saddle_matrix(self.Q, self.D)

    def regularization_energy(self) -> "RegularizationEnergy":
        return RegularizationEnergy(self)


class RegularizationEnergy:
    """``d -> d^T D Q^-1 D^T d`` with ``Q`` factorized once"""

    def __init__(self, system: MixedSystem):
        self.D = system.D
        self._factorization = sparse_factorize(system.Q)

    def __call__(self, d: np.ndarray) -> float:
        d = np.asarray(d, dtype=float)
        if d.shape != (self.D.shape[0],):
            raise ParameterError(f"cell function of length {len(d)}, expected {self.D.shape[0]}")
        flux_load = self.D.T @ d
        return float(flux_load @ self._factorization.solve(flux_load))


def assemble_mixed(mesh: Mesh, neumann_tags: Sequence[str] = ()) -> MixedSystem:
    spaces = MixedSpaces(mesh, neumann_tags)
    system = MixedSystem(spaces, assemble_Q(spaces), assemble_D(spaces))
    logger.debug("mixed system: K=%d flux dofs, N=%d cells", system.K, system.N)
    return system
