import unittest

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import aslinearoperator

from errors import BreakdownError, FactorizationError, NotSPDError, ParameterError
from solvers.linalg import (
    TRUE_RESIDUAL_SLACK,
    apply_columns,
    as_csr,
    as_operator,
    cholesky_solve,
    dense_cholesky,
    is_symmetric,
    minres,
    sparse_factorize,
    spmv,
)


def laplacian_1d(n: int) -> sp.csr_matrix:
    return as_csr(sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]))


class TestSparseKernels(unittest.TestCase):
    def test_as_csr_sums_duplicates(self) -> None:
        coo = sp.coo_matrix(([1.0, 2.0, 3.0], ([0, 0, 1], [1, 1, 0])), shape=(2, 2))
        matrix = as_csr(coo)
        self.assertEqual(matrix.nnz, 2)
        self.assertEqual(matrix[0, 1], 3.0)

    def test_is_symmetric(self) -> None:
        self.assertTrue(is_symmetric(laplacian_1d(5)))
        self.assertFalse(is_symmetric(as_csr(np.array([[1.0, 2.0], [0.0, 1.0]]))))
        self.assertFalse(is_symmetric(as_csr(np.ones((2, 3)))))

    def test_spmv(self) -> None:
        A = laplacian_1d(4)
        np.testing.assert_allclose(spmv(A, np.ones(4)), [1.0, 0.0, 0.0, 1.0])
        with self.assertRaises(ParameterError):
            spmv(A, np.ones(3))

    def test_as_operator(self) -> None:
        A = laplacian_1d(3)
        x = np.array([1.0, 2.0, 3.0])
        expected = A @ x
        for op in (A, A.toarray(), aslinearoperator(A), lambda v: A @ v):
            np.testing.assert_allclose(as_operator(op)(x), expected)
        np.testing.assert_array_equal(as_operator(None)(x), x)
        with self.assertRaises(ParameterError):
            as_operator("not an operator")  # type: ignore[arg-type]

    def test_apply_columns_independent_of_workers(self) -> None:
        rng = np.random.default_rng(3)
        X = rng.standard_normal((6, 9))
        A = rng.standard_normal((4, 6))

        def apply(x: np.ndarray) -> np.ndarray:
            return A @ x

        serial = apply_columns(apply, X, workers=1)
        threaded = apply_columns(apply, X, workers=4)
        np.testing.assert_array_equal(serial, threaded)
        np.testing.assert_allclose(serial, A @ X)
        self.assertEqual(apply_columns(apply, np.zeros((6, 0))).shape, (6, 0))


class TestSparseFactorization(unittest.TestCase):
    def test_solve(self) -> None:
        A = laplacian_1d(20)
        x_true = np.linspace(-1.0, 1.0, 20)
        factorization = sparse_factorize(A)
        np.testing.assert_allclose(factorization.solve(A @ x_true), x_true, rtol=1e-10)
        self.assertEqual(sorted(factorization.row_permutation.tolist()), list(range(20)))
        self.assertGreaterEqual(factorization.fill_nnz, A.nnz)

    def test_solve_multiple_right_hand_sides(self) -> None:
        A = laplacian_1d(10)
        X = np.arange(30.0).reshape(10, 3)
        np.testing.assert_allclose(sparse_factorize(A).solve(A @ X), X, rtol=1e-10, atol=1e-10)

    def test_indefinite_saddle_matrix(self) -> None:
        """Test the pivoting LU handles a symmetric indefinite block matrix"""
        Q = sp.identity(3)
        B = as_csr(np.array([[1.0, -1.0, 0.0], [0.0, 1.0, -1.0]]))
        A = sp.bmat([[Q, B.T], [B, None]], format="csr")
        x_true = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        np.testing.assert_allclose(sparse_factorize(A).solve(A @ x_true), x_true, rtol=1e-10)

    def test_zero_row(self) -> None:
        A = as_csr(np.array([[1.0, 0.0], [0.0, 0.0]]))
        with self.assertRaises(FactorizationError):
            sparse_factorize(A)

    def test_singular(self) -> None:
        A = as_csr(np.array([[1.0, 1.0], [1.0, 1.0]]))
        with self.assertRaises(FactorizationError):
            sparse_factorize(A)

    def test_wrong_rhs_length(self) -> None:
        with self.assertRaises(ParameterError):
            sparse_factorize(laplacian_1d(4)).solve(np.ones(5))


class TestDenseCholesky(unittest.TestCase):
    def test_factor_and_solve(self) -> None:
        rng = np.random.default_rng(0)
        G = rng.standard_normal((5, 5))
        C = np.eye(5) + G @ G.T
        L = dense_cholesky(C)
        np.testing.assert_allclose(L @ L.T, C, rtol=1e-12)
        self.assertTrue(np.allclose(L, np.tril(L)))
        b = rng.standard_normal(5)
        np.testing.assert_allclose(C @ cholesky_solve(L, b), b, rtol=1e-10)

    def test_not_symmetric(self) -> None:
        with self.assertRaises(NotSPDError):
            dense_cholesky(np.array([[2.0, 1.0], [0.0, 2.0]]))

    def test_indefinite(self) -> None:
        with self.assertRaises(NotSPDError):
            dense_cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_non_finite(self) -> None:
        with self.assertRaises(NotSPDError):
            dense_cholesky(np.array([[np.nan, 0.0], [0.0, 1.0]]))


class TestMinres(unittest.TestCase):
    def test_spd_system(self) -> None:
        A = laplacian_1d(30)
        b = np.ones(30)
        x, report = minres(A, None, b, tol=1e-10)
        self.assertTrue(report.converged)
        self.assertLessEqual(report.iterations, 30)
        self.assertLessEqual(report.true_relative_residual, TRUE_RESIDUAL_SLACK * 1e-10)
        np.testing.assert_allclose(A @ x, b, atol=1e-8)

    def test_symmetric_indefinite_system(self) -> None:
        A = np.array([[4.0, 1.0, 0.0], [1.0, -3.0, 1.0], [0.0, 1.0, 2.0]])
        x_true = np.array([1.0, 0.1, 0.2])
        x, report = minres(A, None, A @ x_true, tol=1e-12)
        self.assertTrue(report.converged)
        self.assertLessEqual(report.iterations, 3)
        np.testing.assert_allclose(x, x_true, atol=1e-10)

    def test_exact_preconditioner_converges_in_one_iteration(self) -> None:
        A = laplacian_1d(25)
        inverse = np.linalg.inv(A.toarray())
        _, report = minres(A, inverse, np.arange(25.0), tol=1e-10)
        self.assertTrue(report.converged)
        self.assertEqual(report.iterations, 1)

    def test_diagonal_preconditioner(self) -> None:
        d = np.linspace(1.0, 1e4, 50)
        A = sp.diags(d) + 0.1 * laplacian_1d(50)
        b = np.ones(50)
        _, plain = minres(A, None, b, tol=1e-8)
        _, jacobi = minres(A, lambda r: r / A.diagonal(), b, tol=1e-8)
        self.assertTrue(jacobi.converged)
        self.assertLess(jacobi.iterations, plain.iterations)

    def test_preconditioned_residuals_never_increase(self) -> None:
        rng = np.random.default_rng(1)
        G = rng.standard_normal((40, 40))
        A = G + G.T
        _, report = minres(A, None, rng.standard_normal(40), tol=1e-9)
        history = np.array(report.preconditioned_residuals)
        self.assertTrue(np.all(np.diff(history) <= 1e-12))
        self.assertEqual(len(report.relative_residuals), report.iterations + 1)

    def test_badly_scaled_blocks_need_preconditioned_convergence(self) -> None:
        """Test a small block hidden by a huge one is still solved accurately"""
        big, small = 5, 40
        A = sp.block_diag([1e8 * sp.identity(big), laplacian_1d(small)], format="csr")
        b = np.concatenate([1e8 * np.ones(big), np.ones(small)])
        inverse_diagonal = 1.0 / A.diagonal()
        x, report = minres(A, lambda r: inverse_diagonal * r, b, tol=1e-8)
        self.assertTrue(report.converged)
        self.assertLessEqual(report.preconditioned_residuals[-1], 1e-8)
        self.assertLessEqual(report.relative_residuals[-1], 1e-8)
        expected = np.linalg.solve(laplacian_1d(small).toarray(), np.ones(small))
        error = np.linalg.norm(x[big:] - expected) / np.linalg.norm(expected)
        self.assertLess(error, 1e-4)
        np.testing.assert_allclose(x[:big], 1.0, rtol=1e-6)

    def test_initial_guess_measures_against_right_hand_side(self) -> None:
        A = laplacian_1d(20)
        b = np.ones(20)
        x, report = minres(A, None, b, x0=np.full(20, 5.0), tol=1e-10)
        self.assertTrue(report.converged)
        self.assertAlmostEqual(
            report.preconditioned_residuals[0],
            float(np.linalg.norm(b - A @ np.full(20, 5.0)) / np.linalg.norm(b)),
            places=12,
        )
        np.testing.assert_allclose(A @ x, b, atol=1e-8)

    def test_iteration_cap_returns_best_iterate(self) -> None:
        A = sp.diags(np.linspace(1.0, 100.0, 60))
        b = np.ones(60)
        x, report = minres(A, None, b, tol=1e-12, maxit=4)
        self.assertFalse(report.converged)
        self.assertEqual(report.iterations, 4)
        self.assertAlmostEqual(
            report.true_relative_residual,
            float(np.linalg.norm(b - A @ x) / np.linalg.norm(b)),
            places=12,
        )
        self.assertLess(report.true_relative_residual, 1.0)

    def test_zero_right_hand_side(self) -> None:
        x, report = minres(laplacian_1d(5), None, np.zeros(5))
        np.testing.assert_array_equal(x, np.zeros(5))
        self.assertTrue(report.converged)
        self.assertEqual(report.iterations, 0)

    def test_initial_guess(self) -> None:
        A = laplacian_1d(10)
        x_true = np.arange(10.0)
        x, report = minres(A, None, A @ x_true, x0=x_true)
        self.assertEqual(report.iterations, 0)
        np.testing.assert_array_equal(x, x_true)

    def test_indefinite_preconditioner_breaks_down(self) -> None:
        with self.assertRaises(BreakdownError):
            minres(laplacian_1d(5), lambda r: -r, np.ones(5))

    def test_invalid_tolerance(self) -> None:
        with self.assertRaises(ParameterError):
            minres(laplacian_1d(5), None, np.ones(5), tol=0.0)


if __name__ == "__main__":
    unittest.main()
