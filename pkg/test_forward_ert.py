import math
import os
import tempfile
import unittest

import numpy as np

from errors import ParameterError
from fem.forward import (
    ForwardSystem,
    assemble_forward,
    assemble_stiffness,
    basis_gradients,
    electrode_nodes_for,
    evaluate_response_and_jacobian,
    load_observations,
    save_observations,
    solve_unit_pole,
    synthetic_observations,
)
from geometry.mesh import FAR, build_half_disk_mesh, build_rectangle_mesh, refine_uniform
from geometry.survey import pole_dipole_survey
from models.model_vector import (
    ModelSettings,
    ModelVector,
    checkerboard_model,
    homogeneous_model,
)

RADIUS = 80.0
EXTENT = (-50.0, 50.0)
BACKGROUND = 3500.0


class TestStiffness(unittest.TestCase):
    def setUp(self) -> None:
        self.mesh = build_rectangle_mesh(3, 2, width=1.5, height=1.0)

    def test_gradients_reproduce_linear_functions(self) -> None:
        gradients = basis_gradients(self.mesh)
        np.testing.assert_allclose(gradients.sum(axis=1), 0.0, atol=1e-12)
        values = 2.0 * self.mesh.vertices[:, 0] - 0.5 * self.mesh.vertices[:, 1] + 1.0
        reconstructed = np.einsum("cid,ci->cd", gradients, values[self.mesh.cells])
        np.testing.assert_allclose(reconstructed, np.tile([2.0, -0.5], (self.mesh.n_cells, 1)))

    def test_stiffness_symmetric_with_constant_kernel(self) -> None:
        sigma = np.linspace(0.5, 2.0, self.mesh.n_cells)
        K = assemble_stiffness(self.mesh, sigma)
        self.assertLess(abs(K - K.T).max(), 1e-14)
        np.testing.assert_allclose(K @ np.ones(self.mesh.n_vertices), 0.0, atol=1e-12)

    def test_energy_of_linear_potential(self) -> None:
        """Test u = x gives energy sigma * area for constant conductivity"""
        K = assemble_stiffness(self.mesh, np.full(self.mesh.n_cells, 2.0))
        x = self.mesh.vertices[:, 0]
        self.assertAlmostEqual(float(x @ (K @ x)), 2.0 * 1.5, places=12)


class TestForwardSystem(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.mesh = build_half_disk_mesh(RADIUS, 17, EXTENT)
        cls.survey = pole_dipole_survey(17, EXTENT)
        cls.model = homogeneous_model(cls.mesh.n_cells, BACKGROUND)
        cls.system = assemble_forward(cls.mesh, cls.model)

    def test_grounded_nodes_eliminated(self) -> None:
        far = self.mesh.boundary_nodes(FAR)
        self.assertTrue(np.all(self.system.dof_map[far] == -1))
        self.assertEqual(len(self.system.free_nodes), self.mesh.n_vertices - len(far))

    def test_pole_solution(self) -> None:
        electrode = int(self.mesh.electrode_nodes[8])
        u = solve_unit_pole(self.system, electrode)
        np.testing.assert_array_equal(u[self.mesh.boundary_nodes(FAR)], 0.0)
        residual = self.system.matrix @ u[self.system.free_nodes]
        expected = np.zeros(len(self.system.free_nodes))
        expected[self.system.dof_map[electrode]] = 1.0
        np.testing.assert_allclose(residual, expected, atol=1e-10)

    def test_pole_reciprocity(self) -> None:
        """Test u_p(q) = u_q(p) for every pair of electrodes"""
        nodes = np.asarray(self.mesh.electrode_nodes)
        potentials = self.system.solve(self.system.unit_pole_loads(nodes))
        transfer = potentials[nodes]
        np.testing.assert_allclose(transfer, transfer.T, rtol=1e-10)

    def test_measurement_reciprocity(self) -> None:
        """Test swapping transmitter and receivers leaves every voltage unchanged"""
        nodes = np.asarray(self.mesh.electrode_nodes)
        u = self.system.solve(self.system.unit_pole_loads(nodes))
        for config in self.survey.configs:
            A, M, N = nodes[config.iA], nodes[config.iM], nodes[config.iN]
            forward = u[M, config.iA] - u[N, config.iA]
            swapped = u[A, config.iM] - u[A, config.iN]
            self.assertAlmostEqual(swapped / forward, 1.0, delta=1e-10)

    def test_doubling_conductivity_halves_potential(self) -> None:
        electrode = int(self.mesh.electrode_nodes[8])
        u = solve_unit_pole(self.system, electrode)
        doubled = assemble_forward(self.mesh, self.model.shifted(math.log(2.0)))
        np.testing.assert_allclose(
            solve_unit_pole(doubled, electrode), 0.5 * u, rtol=1e-10, atol=1e-14
        )

    def test_source_on_grounded_boundary(self) -> None:
        far_node = self.mesh.boundary_nodes(FAR)[0]
        with self.assertRaises(ParameterError):
            self.system.unit_pole_loads(np.array([far_node]))

    def test_model_size_mismatch(self) -> None:
        with self.assertRaises(ParameterError):
            ForwardSystem(self.mesh, ModelVector(np.zeros(3)))


class TestResponseAndJacobian(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.mesh = build_half_disk_mesh(RADIUS, 17, EXTENT)
        cls.survey = pole_dipole_survey(17, EXTENT)
        cls.model = checkerboard_model(cls.mesh, cls.survey.electrode_positions, ModelSettings())
        cls.response = evaluate_response_and_jacobian(cls.mesh, cls.model, cls.survey)

    def test_shapes(self) -> None:
        self.assertEqual(self.response.M, 46)
        self.assertEqual(self.response.J.shape, (46, self.mesh.n_cells))

    def test_response_is_jacobian_row_sum(self) -> None:
        np.testing.assert_allclose(self.response.g, -self.response.J.sum(axis=1), rtol=1e-12)

    def test_jacobian_matches_finite_differences(self) -> None:
        """Test the adjoint columns of the five most sensitive cells against central differences"""
        epsilon = 1e-3
        column_norms = np.linalg.norm(self.response.J, axis=0)
        for cell in np.argsort(column_norms)[-5:]:
            with self.subTest(cell=int(cell)):
                step = np.zeros(self.mesh.n_cells)
                step[cell] = epsilon
                plus = evaluate_response_and_jacobian(
                    self.mesh, self.model.shifted(step), self.survey
                )
                minus = evaluate_response_and_jacobian(
                    self.mesh, self.model.shifted(-step), self.survey
                )
                difference = (plus.g - minus.g) / (2.0 * epsilon)
                error = np.linalg.norm(difference - self.response.J[:, cell]) / column_norms[cell]
                self.assertLessEqual(error, 1e-5)

    def test_conductivity_scaling(self) -> None:
        """Test a uniform shift of m scales every response and sensitivity by exp(-shift)"""
        shifted = evaluate_response_and_jacobian(self.mesh, self.model.shifted(0.7), self.survey)
        np.testing.assert_allclose(shifted.g, math.exp(-0.7) * self.response.g, rtol=1e-9)
        scale = np.abs(self.response.J).max()
        np.testing.assert_allclose(
            shifted.J, math.exp(-0.7) * self.response.J, rtol=1e-9, atol=1e-12 * scale
        )

    def test_sensitivity_concentrated_under_array(self) -> None:
        """Test at least 99% of every row's |J| lies within twice the array length of its center"""
        homogeneous = homogeneous_model(self.mesh.n_cells, BACKGROUND)
        J = evaluate_response_and_jacobian(self.mesh, homogeneous, self.survey).J
        positions = self.survey.electrode_positions
        center = np.array([0.5 * (positions[0] + positions[-1]), 0.0])
        array_length = positions[-1] - positions[0]
        distances = np.linalg.norm(self.mesh.cell_centroids - center, axis=1)
        near = distances <= 2.0 * array_length
        mass = np.abs(J)
        fractions = mass[:, near].sum(axis=1) / mass.sum(axis=1)
        self.assertTrue(np.all(fractions >= 0.99))

    def test_survey_must_match_mesh(self) -> None:
        with self.assertRaises(ParameterError):
            electrode_nodes_for(self.mesh, pole_dipole_survey(17, (-40.0, 40.0)))
        with self.assertRaises(ParameterError):
            electrode_nodes_for(self.mesh, pole_dipole_survey(33, EXTENT))


class TestHomogeneousCalibration(unittest.TestCase):
    def test_apparent_resistivity_of_homogeneous_ground(self) -> None:
        """Test every interior configuration recovers the background resistivity within 15%"""
        coarse = build_half_disk_mesh(RADIUS, 17, EXTENT)
        survey = pole_dipole_survey(17, EXTENT)

        # electrodes at least five spacings from either end of the array
        interior = range(5, survey.n_electrodes - 5)
        configs = [
            i
            for i, config in enumerate(survey.configs)
            if {config.iA, config.iM, config.iN} <= set(interior)
        ]
        self.assertEqual(len(configs), 6)
        for name, mesh in (("coarse", coarse), ("refined", refine_uniform(coarse))):
            model = homogeneous_model(mesh.n_cells, BACKGROUND)
            g = evaluate_response_and_jacobian(mesh, model, survey).g
            self.assertTrue(np.all(g > 0.0))
            for index in configs:
                with self.subTest(mesh=name, config=index):
                    self.assertGreaterEqual(g[index] / BACKGROUND, 0.85)
                    self.assertLessEqual(g[index] / BACKGROUND, 1.15)


class TestSyntheticObservations(unittest.TestCase):
    def test_refined_data_close_to_coarse_response(self) -> None:
        mesh = build_half_disk_mesh(RADIUS, 17, EXTENT)
        survey = pole_dipole_survey(17, EXTENT)
        model = checkerboard_model(mesh, survey.electrode_positions, ModelSettings())
        g_obs = synthetic_observations(mesh, model, survey)
        g = evaluate_response_and_jacobian(mesh, model, survey).g
        self.assertEqual(len(g_obs), survey.M)
        self.assertFalse(np.allclose(g_obs, g, rtol=1e-6))
        self.assertLess(float(np.median(np.abs(g_obs / g - 1.0))), 0.2)

    def test_observations_csv(self) -> None:
        g_obs = np.array([3500.25, 3612.5, 1.0 / 3.0])
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "obs.csv")
            save_observations(path, g_obs)
            loaded = load_observations(path)
        np.testing.assert_array_equal(loaded, g_obs)


if __name__ == "__main__":
    unittest.main()
