import numpy as np
import pytest
from scipy.optimize import rosen, rosen_der

from jensen_fsim.errors import NumericFailure
from jensen_fsim.optim import bfgs


def quad(A, b):
    return lambda x: (0.5 * x @ A @ x - b @ x, A @ x - b)


class TestBfgs:
    def test_quadratic_minimum(self):
        rng = np.random.default_rng(0)
        M = rng.standard_normal((6, 6))
        A = M @ M.T + np.eye(6)
        b = rng.standard_normal(6)
        res = bfgs(quad(A, b), np.zeros(6), rel_tol=0, grad_tol=1e-12)
        assert res.converged
        np.testing.assert_allclose(res.x, np.linalg.solve(A, b), atol=1e-8)

    def test_rosenbrock(self):
        res = bfgs(lambda x: (rosen(x), rosen_der(x)), np.array([-1.2, 1.0]), rel_tol=0,
                   grad_tol=1e-10)
        assert res.converged
        np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-6)

    def test_restart_never_increases(self):
        fg = lambda x: (rosen(x), rosen_der(x))  # noqa: E731
        first = bfgs(fg, np.array([-1.0, 2.0, 0.5]), rel_tol=1e-4)
        second = bfgs(fg, first.x, rel_tol=1e-4)
        assert second.fun <= first.fun + 1e-12

    def test_iteration_cap(self):
        res = bfgs(lambda x: (rosen(x), rosen_der(x)), np.array([-1.2, 1.0]), max_iter=3)
        assert not res.converged
        assert res.status == "max-iter"
        assert res.n_iter == 3

    def test_non_finite_start(self):
        with pytest.raises(NumericFailure):
            bfgs(lambda x: (np.nan, np.zeros_like(x)), np.zeros(2))

    def test_stationary_start(self):
        res = bfgs(quad(np.eye(3), np.zeros(3)), np.zeros(3))
        assert res.converged and res.status == "gradient" and res.n_iter == 1
