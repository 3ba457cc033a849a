"""Dense BFGS with a Wolfe line search and explicit restart support."""

from dataclasses import dataclass
import warnings

import numpy as np
from scipy.optimize import line_search


from .errors import NumericFailure


@dataclass
class BfgsResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    n_eval: int
    converged: bool
    status: str


class _Memo:
    """Caches the last (x, f, g) so separate f / fprime calls cost one evaluation."""

    def __init__(self, fg):
        self.fg = fg
        self.x = None
        self.f = None
        self.g = None
        self.n_eval = 0

    def __call__(self, x):
        if self.x is None or not np.array_equal(x, self.x):
            f, g = self.fg(x)
            self.n_eval += 1
            self.x = np.array(x, copy=True)
            self.f, self.g = float(f), g
        return self.f, self.g


def _backtrack(memo, x, f, g, p, alpha):
    slope = float(g @ p)
    for _ in range(60):
        fn, _ = memo(x + alpha * p)
        if np.isfinite(fn) and fn <= f + 1e-4 * alpha * slope:
            return alpha
        alpha *= 0.5
    return None


def bfgs(fg, x0, rel_tol=1e-10, grad_tol=1e-8, max_iter=2000):
    """Minimize ``f`` given ``fg(x) -> (f, grad)``, starting from the identity Hessian.

    Stops when the relative objective decrease of an accepted step falls below
    ``rel_tol`` or when ``|grad| < grad_tol * (1 + |f|)``. A restart is simply a
    second call from the returned ``x``.
    """
    memo = _Memo(fg)
    value = lambda z: memo(z)[0]  # noqa: E731
    gradient = lambda z: memo(z)[1]  # noqa: E731

    x = np.array(x0, dtype=float)
    f, g = memo(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericFailure("non-finite objective at the starting point", last_x=None)
    n = x.size
    Hinv = np.eye(n)
    identity = True
    status = "max-iter"
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm < grad_tol * (1.0 + abs(f)):
            status, converged = "gradient", True
            break
        p = -Hinv @ g
        if not float(p @ g) < 0:
            Hinv, identity = np.eye(n), True
            p = -g
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            alpha = line_search(value, gradient, x, p, gfk=g, old_fval=f, maxiter=20)[0]
        if alpha is None or not np.isfinite(memo(x + alpha * p)[0]):
            alpha = _backtrack(memo, x, f, g, p, min(1.0, 1.0 / gnorm) if identity else 1.0)
        if alpha is None:
            if not identity:
                Hinv, identity = np.eye(n), True
                continue
            status, converged = "no-progress", True
            break
        x_new = x + alpha * p
        f_new, g_new = memo(x_new)
        if not np.isfinite(f_new) or not np.all(np.isfinite(g_new)):
            raise NumericFailure("non-finite objective during optimization", last_x=x)
        s = x_new - x
        y = g_new - g
        decrease = (f - f_new) / max(abs(f), 1e-300)
        x, f, g = x_new, f_new, g_new
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            if identity:
                Hinv = np.eye(n) * (sy / float(y @ y))
                identity = False
            rho = 1.0 / sy
            Hy = Hinv @ y
            Hinv = (Hinv - rho * (np.outer(s, Hy) + np.outer(Hy, s))
                    + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s))
        if decrease < rel_tol:
            status, converged = "objective", True
            break
    return BfgsResult(x=x, fun=f, grad=g, n_iter=it, n_eval=memo.n_eval,
                      converged=converged, status=status)
