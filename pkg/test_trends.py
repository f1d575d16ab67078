"""Iteration-count trends of the MINRES variants on the half-disk problems.

The scaling and 33-electrode regularization sweeps run full inversions and
take minutes; deselect them with ``pytest -m "not slow"``. The 17-electrode
regularization sweep is fast and always runs.
"""

import unittest
from collections import defaultdict
from typing import Any

import pytest

from gauss_newton import LAPLACE_MINRES, WOODBURY_MINRES, GnConfig
from workflow import ErtWorkflow

ELECTRODES = [17, 33, 65]
BETAS = [1e-3, 1e-2, 1e-1, 1.0, 10.0]


def _iterations(rows: list[dict[str, Any]], algorithm: str) -> dict[int, dict[int, int]]:
    """``{step: {nele: n_iter}}`` for one algorithm"""
    table: dict[int, dict[int, int]] = defaultdict(dict)
    for row in rows:
        if row["algorithm"] == algorithm and row["n_iter"] != "":
            table[row["step"]][row["nele"]] = int(row["n_iter"])
    return table


def _beta_sweep(n_electrodes: int) -> dict[str, list[int]]:
    """First-step MINRES iterations per algorithm over ``BETAS``"""
    workflow = ErtWorkflow(config={"output": {"console_logging": False}})
    mesh = workflow.build_mesh(n_electrodes)
    survey = workflow.build_survey(n_electrodes)
    g_obs = workflow.forward(mesh, survey, workflow.true_model(mesh, survey))
    iterations: dict[str, list[int]] = {}
    for algorithm in (WOODBURY_MINRES, LAPLACE_MINRES):
        counts = []
        for beta in BETAS:
            config = GnConfig(beta=beta, max_outer_steps=1, minres_tol=1e-7, algorithm=algorithm)
            _, report = workflow.invert(mesh, survey, g_obs, config)
            counts.append(report.steps[0].minres_iters)
        iterations[algorithm] = counts
    return iterations


class RegularizationRobustness:
    iterations: dict[str, list[int]]

    def test_woodbury_insensitive_to_beta(self) -> None:
        counts = self.iterations[WOODBURY_MINRES]
        self.assertLessEqual(max(counts), 2 * min(counts))  # type: ignore[attr-defined]

    def test_laplace_degrades_as_beta_shrinks(self) -> None:
        counts = self.iterations[LAPLACE_MINRES]
        for smaller_beta, larger_beta in zip(counts, counts[1:]):
            self.assertGreaterEqual(smaller_beta, larger_beta)  # type: ignore[attr-defined]


class TestRegularizationRobustnessSmall(RegularizationRobustness, unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.iterations = _beta_sweep(17)


@pytest.mark.slow
class TestRegularizationRobustness(RegularizationRobustness, unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.iterations = _beta_sweep(33)


@pytest.mark.slow
class TestScalingTrends(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.workflow = ErtWorkflow(config={"output": {"console_logging": False}})
        config = GnConfig(beta=0.1, max_outer_steps=2, minres_tol=1e-7)
        cls.rows = cls.workflow.bench(ELECTRODES, [WOODBURY_MINRES, LAPLACE_MINRES], config)
        cls.woodbury = _iterations(cls.rows, WOODBURY_MINRES)
        cls.laplace = _iterations(cls.rows, LAPLACE_MINRES)

    def test_all_runs_complete(self) -> None:
        self.assertEqual(len(self.rows), len(ELECTRODES) * 2 * 2)
        self.assertFalse(any(row["status"].startswith("failed") for row in self.rows))
        self.assertTrue(
            all(row["status"] == "ok" for row in self.rows if row["algorithm"] == WOODBURY_MINRES)
        )

    def test_woodbury_iterations_small(self) -> None:
        for step in (1, 2):
            for n_electrodes in ELECTRODES:
                self.assertLessEqual(self.woodbury[step][n_electrodes], 40)

    def test_woodbury_iterations_independent_of_size(self) -> None:
        for step, counts in self.woodbury.items():
            with self.subTest(step=step):
                self.assertLessEqual(max(counts.values()), 2 * min(counts.values()))

    def test_laplace_iterations_grow_with_size(self) -> None:
        for step, counts in self.laplace.items():
            with self.subTest(step=step):
                ordered = [counts[n] for n in ELECTRODES]
                self.assertEqual(ordered, sorted(set(ordered)))
                self.assertGreaterEqual(counts[65], 2 * counts[17])
                for n_electrodes in ELECTRODES:
                    self.assertGreater(counts[n_electrodes], self.woodbury[step][n_electrodes])

    def test_misfit_decreases(self) -> None:
        for row in self.rows:
            with self.subTest(algorithm=row["algorithm"], nele=row["nele"], step=row["step"]):
                self.assertLess(float(row["updated_misfit"]), float(row["misfit"]))
                self.assertGreater(float(row["step_length"]), 0.0)


if __name__ == "__main__":
    unittest.main()
