"""Jensen Effect estimates and max-|t| tests over a grid of smoothing parameters.

The Jensen Effect of a fitted link is mean_i g(E_i) - g(mean E). For a penalized
spline fit it is linear in Y, delta = u Y, so the standardized statistics
t = delta / (sigma ||u||) form a Gaussian process over the grid with
correlation <u_i, u_j> / (||u_i|| ||u_j||). The critical value for max |t| is
simulated from that process.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._linalg import PenalizedLS
from .basis import eval_basis, penalty_root
from .errors import (
    DegenerateFunctionalError,
    FsimError,
    InvalidArgumentError,
    InvalidCorrelationError,
    SurfaceInvalidError,
)
from .fsim import FitOptions, PlsProblem, coef_covariance, warm_start_grid
from .smoothing import select_lambda_gcv, sigma_hat

ALTERNATIVES = ("two-sided", "greater", "less")
# weight vectors shorter than this carry no usable signal (the fit is numerically linear)
_MIN_U_NORM = 1e-13
# sigma_hat below this fraction of max|Y| is rounding noise from an exact fit
_EXACT_FIT_RTOL = 1e-10
MAX_FAILED_FRACTION = 0.2


@dataclass(frozen=True, eq=False)
class JensenSurface:
    test: str
    lambda_g: np.ndarray
    lambda_beta: np.ndarray
    delta: np.ndarray
    sd: np.ndarray
    t: np.ndarray
    valid: np.ndarray
    A: np.ndarray
    T_obs: float
    crit: float
    alpha: float
    n_null_draws: int
    seed: int
    reject: bool
    sign_summary: str
    sigma_used: float
    gcv_cell: Optional[int]
    alternative: str = "two-sided"
    failed: dict = field(default_factory=dict)
    shape: tuple = ()

    @property
    def m(self):
        return self.delta.size

    @property
    def significant(self):
        return self.valid & (_directional(self.t, self.alternative) > self.crit)

    def argmax_delta(self):
        return _nan_arg(self.delta, self.valid, np.argmax)

    def argmin_delta(self):
        return _nan_arg(self.delta, self.valid, np.argmin)


def _nan_arg(values, valid, fn):
    if not np.any(valid):
        return None
    idx = np.flatnonzero(valid)
    return int(idx[fn(values[idx])])


def _directional(t, alternative):
    t = np.asarray(t, dtype=float)
    if alternative == "two-sided":
        return np.abs(t)
    if alternative == "greater":
        return t
    if alternative == "less":
        return -t
    raise InvalidArgumentError(f"alternative must be one of {ALTERNATIVES}")


def jensen_contrast(n):
    """The (n+1)-vector a = (1/n, ..., 1/n, -1)."""
    a = np.full(n + 1, 1.0 / n)
    a[-1] = -1.0
    return a


def delta_weights_t1(E, basis, lam, R=None):
    """Row vector u with delta_hat = u @ Y for the smoothing-spline fit of Y on E."""
    E = np.asarray(E, dtype=float).ravel()
    if R is None:
        R = penalty_root(basis, 2)
    Phi = eval_basis(basis, E)
    Phi_plus = np.vstack([Phi, eval_basis(basis, [E.mean()])])
    b = jensen_contrast(E.size) @ Phi_plus
    return PenalizedLS(Phi, R, float(lam)).weights(b)


def null_correlation(U):
    """Correlation matrix of the rows of ``U`` (unit diagonal, symmetric)."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    norms = np.linalg.norm(U, axis=1)
    if np.any(norms <= 0) or not np.all(np.isfinite(norms)):
        raise DegenerateFunctionalError("a weight vector has zero norm; delta is identically zero")
    V = U / norms[:, None]
    A = V @ V.T
    A = 0.5 * (A + A.T)
    np.fill_diagonal(A, 1.0)
    return A


def _psd_root(A, tol=1e-8):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidCorrelationError("correlation matrix must be square")
    if not np.allclose(A, A.T, atol=1e-10):
        raise InvalidCorrelationError("correlation matrix is not symmetric")
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    if w.min() < -tol:
        raise InvalidCorrelationError(f"correlation matrix has eigenvalue {w.min():.3g} < -{tol:g}")
    return V * np.sqrt(np.clip(w, 0.0, None))


def null_max_draws(A, n_draws, seed, alternative="two-sided"):
    """Simulated values of max_k |t_k| (or the one-sided max) under t ~ N(0, A)."""
    root = _psd_root(A)
    rng = np.random.default_rng([int(seed), 1])
    Z = rng.standard_normal((int(n_draws), root.shape[1])) @ root.T
    return _directional(Z, alternative).max(axis=1)


def simulate_max_null(A, n_draws=5000, alpha=0.05, seed=0, alternative="two-sided"):
    """Critical value: the (1 - alpha) quantile of the simulated null maximum."""
    if n_draws < 1000:
        raise InvalidArgumentError("n_draws must be >= 1000")
    if not 0 < alpha < 1:
        raise InvalidArgumentError("alpha must lie in (0, 1)")
    return float(np.quantile(null_max_draws(A, n_draws, seed, alternative), 1.0 - alpha))


def sign_summary(delta):
    delta = np.asarray(delta, dtype=float)
    delta = delta[np.isfinite(delta)]
    if delta.size and np.all(delta > 0):
        return "all-positive"
    if delta.size and np.all(delta < 0):
        return "all-negative"
    return "mixed"


def _finish(test, lg, lb, delta, sd, U, valid, sigma, gcv_cell, alpha, n_draws, seed,
            alternative, failed, shape):
    if alternative not in ALTERNATIVES:
        raise InvalidArgumentError(f"alternative must be one of {ALTERNATIVES}")
    if not np.any(valid):
        raise SurfaceInvalidError("no valid grid cells")
    t = np.full(delta.size, np.nan)
    t[valid] = delta[valid] / sd[valid]
    A = null_correlation(U[valid])
    crit = simulate_max_null(A, n_draws, alpha, seed, alternative)
    T_obs = float(np.max(_directional(t[valid], alternative)))
    return JensenSurface(
        test=test, lambda_g=lg, lambda_beta=lb, delta=delta, sd=sd, t=t, valid=valid, A=A,
        T_obs=T_obs, crit=crit, alpha=float(alpha), n_null_draws=int(n_draws), seed=int(seed),
        reject=bool(T_obs > crit), sign_summary=sign_summary(delta[valid]),
        sigma_used=float(sigma), gcv_cell=gcv_cell, alternative=alternative,
        failed=failed, shape=shape,
    )


def jensen_test_t1(E, Y, basis, lambda_grid, alpha=0.05, n_draws=5000, seed=0,
                   alternative="two-sided"):
    """Max-|t| test with a known index E.

    sigma is estimated once, at the GCV-selected lambda, and reused in every cell.
    Cells whose weight vector is numerically zero are excluded and listed in ``failed``.
    """
    E = np.asarray(E, dtype=float).ravel()
    Y = np.asarray(Y, dtype=float).ravel()
    grid = np.asarray(lambda_grid, dtype=float).ravel()
    if grid.size == 0:
        raise InvalidArgumentError("empty lambda grid")
    R = penalty_root(basis, 2)
    lam_gcv, gfit = select_lambda_gcv(E, Y, basis, grid, R=R)
    sigma = sigma_hat(gfit)
    gcv_cell = int(np.flatnonzero(grid == lam_gcv)[0])
    U = np.vstack([delta_weights_t1(E, basis, lam, R) for lam in grid])
    norms = np.linalg.norm(U, axis=1)
    valid = norms > _MIN_U_NORM
    delta = U @ Y
    sd = sigma * norms
    failed = {int(k): "weight vector numerically zero" for k in np.flatnonzero(~valid)}
    if sigma <= _EXACT_FIT_RTOL * max(float(np.max(np.abs(Y))), 1e-300):
        # exact fit at the GCV lambda (up to rounding): no noise scale to standardize by
        valid[:] = False
        failed = {k: "sigma_hat is zero" for k in range(grid.size)}
        return JensenSurface(
            test="t1", lambda_g=grid, lambda_beta=np.full(grid.size, np.nan), delta=delta,
            sd=sd, t=np.full(grid.size, np.nan), valid=valid, A=np.eye(0), T_obs=0.0,
            crit=float("nan"), alpha=float(alpha), n_null_draws=int(n_draws), seed=int(seed),
            reject=False, sign_summary=sign_summary(delta), sigma_used=0.0, gcv_cell=gcv_cell,
            alternative=alternative, failed=failed, shape=(grid.size,),
        )
    return _finish("t1", grid, np.full(grid.size, np.nan), delta, sd, U, valid, sigma,
                   gcv_cell, alpha, n_draws, seed, alternative, failed, (grid.size,))


def _fsim_contrast(fit):
    s = np.clip(fit.index, -fit.S_range, fit.S_range)
    Phi = eval_basis(fit.g_basis, s)
    b = jensen_contrast(fit.n) @ np.vstack([Phi, eval_basis(fit.g_basis, [fit.index_bar])])
    return b, Phi


def delta_hat_fsim(fit, sigma=None):
    """``(delta, sd)`` for one fitted single index model.

    sd uses the d-block of the sandwich covariance, scaled by ``sigma`` (default:
    the fit's ``sigma_hat``).
    """
    b, _ = _fsim_contrast(fit)
    delta = float(b @ fit.d)
    K1 = fit.g_basis.n_basis
    cov_d = coef_covariance(fit, sigma)[:K1, :K1]
    var = float(b @ cov_d @ b)
    if not var > 1e-28:
        raise DegenerateFunctionalError(f"sd of delta is {np.sqrt(max(var, 0.0)):.3g}")
    return delta, float(np.sqrt(var))


def delta_weights_fsim(fit, R_g=None):
    """Linearized weights u with delta ~ u @ Y at this fit's index values."""
    b, Phi = _fsim_contrast(fit)
    if R_g is None:
        R_g = penalty_root(fit.g_basis, 2)
    return PenalizedLS(Phi, R_g, fit.lambda_g).weights(b)


def jensen_test_fsim(ds, bases, lambda_g_grid, lambda_beta_grid, alpha=0.05, n_draws=5000,
                     seed=0, opts=None, alternative="two-sided", grid=None):
    """Max-|t| test for the functional single index model over a (lambda_g x lambda_beta) lattice.

    Cells are flattened row-major (lambda_g outer). Failed, clamped or non-converged
    fits are excluded; more than 20% excluded cells raise :class:`SurfaceInvalidError`.
    A precomputed :class:`FsimGrid` may be passed as ``grid``.
    """
    opts = opts or FitOptions()
    if grid is None:
        grid = warm_start_grid(ds, bases, lambda_g_grid, lambda_beta_grid, opts)
    n_g, n_b = grid.shape
    m = n_g * n_b
    lg = np.repeat(grid.lambda_g, n_b)
    lb = np.tile(grid.lambda_beta, n_g)
    delta = np.full(m, np.nan)
    sd = np.full(m, np.nan)
    U = np.zeros((m, ds.n))
    valid = np.zeros(m, dtype=bool)
    failed = {}
    R_g = penalty_root(bases[0], 2)
    for (i, j), fit in grid.cells():
        k = i * n_b + j
        if fit is None:
            failed[k] = grid.errors.get((i, j), "fit failed")
            continue
        if fit.n_clamped:
            failed[k] = f"{fit.n_clamped} index value(s) clamped in the final fit"
            continue
        if not fit.converged:
            failed[k] = "optimizer did not converge"
            continue
        try:
            delta[k], sd[k] = delta_hat_fsim(fit, grid.sigma_gcv)
            U[k] = delta_weights_fsim(fit, R_g)
        except FsimError as exc:
            failed[k] = f"{type(exc).__name__}: {exc}"
            continue
        if np.linalg.norm(U[k]) <= _MIN_U_NORM:
            failed[k] = "weight vector numerically zero"
            continue
        valid[k] = True
    if len(failed) > MAX_FAILED_FRACTION * m:
        raise SurfaceInvalidError(f"{len(failed)} of {m} grid cells failed: {failed}")
    gcv_cell = None if grid.gcv_cell is None else grid.gcv_cell[0] * n_b + grid.gcv_cell[1]
    return _finish("t2", lg, lb, delta, sd, U, valid, grid.sigma_gcv, gcv_cell, alpha,
                   n_draws, seed, alternative, failed, (n_g, n_b))
