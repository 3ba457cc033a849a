"""Penalized linear smoothing of scalar pairs in a basis, with GCV and residual-variance estimates."""

from dataclasses import dataclass

import numpy as np

from ._linalg import PenalizedLS
from .basis import eval_basis, penalty_root
from .errors import DegenerateSmootherError, InvalidArgumentError


@dataclass(frozen=True, eq=False)
class SmoothFit:
    basis: object
    lam: float
    coef: np.ndarray
    x: np.ndarray
    y: np.ndarray
    fitted: np.ndarray
    hat_trace: float
    hat_trace2: float
    rss: float

    @property
    def n(self):
        return self.x.size

    @property
    def df_res(self):
        return self.n - 2.0 * self.hat_trace + self.hat_trace2

    def __call__(self, points, deriv=0):
        return eval_basis(self.basis, points, deriv) @ self.coef


def fit_smooth(x, y, basis, lam, R=None):
    """Penalized least-squares fit ``coef = (Phi'Phi + lam P)^-1 Phi'y``.

    ``P`` is the second-derivative penalty of ``basis``. ``R`` is its root from
    :func:`~jensen_fsim.basis.penalty_root`; pass it in when fitting many smoothing
    parameters to avoid recomputing it.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise InvalidArgumentError(f"length mismatch: {x.size} points vs {y.size} responses")
    if x.size < 2:
        raise InvalidArgumentError("need at least two observations")
    lam = float(lam)
    if not 0 <= lam < np.inf:
        raise InvalidArgumentError("lambda must be finite and >= 0")
    if R is None:
        R = penalty_root(basis, 2)
    Phi = eval_basis(basis, x)
    pls = PenalizedLS(Phi, R, lam)
    coef = pls.coef(y)
    fitted = Phi @ coef
    tr1, tr2 = pls.hat_traces()
    resid = y - fitted
    return SmoothFit(
        basis=basis,
        lam=lam,
        coef=coef,
        x=x,
        y=y,
        fitted=fitted,
        hat_trace=tr1,
        hat_trace2=tr2,
        rss=float(resid @ resid),
    )


def smoother_matrix(fit, R=None):
    """The n x n hat matrix mapping responses to fitted values."""
    if R is None:
        R = penalty_root(fit.basis, 2)
    return PenalizedLS(eval_basis(fit.basis, fit.x), R, fit.lam).smoother()


def gcv_score(rss, hat_trace, n):
    denom = (n - hat_trace) / n
    if not denom > 0:
        raise DegenerateSmootherError(f"tr(S) = {hat_trace:.6g} >= n = {n}; GCV undefined")
    return (rss / n) / denom**2


def gcv(fit):
    return gcv_score(fit.rss, fit.hat_trace, fit.n)


def residual_df(n, hat_trace, hat_trace2):
    return n - 2.0 * hat_trace + hat_trace2


def sigma_from_rss(rss, df_res):
    if not df_res > 0:
        raise DegenerateSmootherError(f"residual degrees of freedom {df_res:.6g} <= 0")
    return float(np.sqrt(rss / df_res))


def sigma_hat(fit):
    return sigma_from_rss(fit.rss, fit.df_res)


def select_lambda_gcv(x, y, basis, lambda_grid, R=None):
    """Grid search for the GCV-minimizing smoothing parameter.

    Returns ``(lam, fit)``. Exact ties go to the larger lambda; grid points whose
    smoother is degenerate are skipped.
    """
    grid = np.unique(np.asarray(lambda_grid, dtype=float).ravel())[::-1]
    if grid.size == 0:
        raise InvalidArgumentError("empty lambda grid")
    if np.any(grid < 0):
        raise InvalidArgumentError("lambda values must be >= 0")
    if R is None:
        R = penalty_root(basis, 2)
    best = None
    for lam in grid:
        fit = fit_smooth(x, y, basis, lam, R=R)
        try:
            score = gcv(fit)
        except DegenerateSmootherError:
            continue
        if best is None or score < best[0]:
            best = (score, lam, fit)
    if best is None:
        raise DegenerateSmootherError("every lambda in the grid gives a degenerate smoother")
    return float(best[1]), best[2]
