"""Penalized-spline functional single index model.

    Y_i = g(int X_i(t) beta(t) dt) + eps_i,   g(s) = phi(s)'d,   beta(t) = psi(t)'c

fitted by minimizing

    RSS + lambda_g d'P_g d + lambda_beta c'P_beta c + sum_i excess_i

with BFGS over the raw ``(d, c)`` vector. ``c`` is rescaled to ||beta|| = 1 and
sign-fixed so that beta(a) >= 0 inside every objective evaluation; index values
beyond the g-domain [-S, S] are clamped to the end point and the excess is added
to the objective.
"""

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from ._linalg import PenalizedLS, jittered_inverse
from .basis import (
    eval_basis,
    eval_basis_pair,
    inner_product_matrix,
    make_bspline_basis,
    penalty_matrix,
    penalty_root,
)
from .errors import (
    DegenerateDataError,
    FsimError,
    InvalidArgumentError,
    NumericFailure,
)
from .optim import bfgs
from .smoothing import gcv_score, residual_df, sigma_from_rss


@dataclass(frozen=True, eq=False)
class FsimDataset:
    """``n`` scalar responses and ``n`` curves sampled on a shared increasing grid."""

    t_grid: np.ndarray
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_grid, dtype=float).ravel()
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float).ravel()
        if t.size < 2 or np.any(np.diff(t) <= 0):
            raise InvalidArgumentError("t_grid must be strictly increasing with >= 2 points")
        if X.shape != (Y.size, t.size):
            raise InvalidArgumentError(f"X has shape {X.shape}, expected ({Y.size}, {t.size})")
        if Y.size < 10:
            raise InvalidArgumentError(f"need n >= 10 observations, got {Y.size}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise InvalidArgumentError("missing or non-finite values in X or Y")
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self):
        return self.Y.size

    def with_response(self, Y):
        return FsimDataset(self.t_grid, self.X, Y)


class FsimBases(NamedTuple):
    g_basis: object
    beta_basis: object


class IndexRange(NamedTuple):
    S: float
    pca_score: float
    norm_bound: float
    active: str


@dataclass(frozen=True)
class FitOptions:
    rel_tol: float = 1e-10
    grad_tol: float = 1e-8
    max_iter: int = 2000
    restart: bool = True
    # "profile": BFGS over c with d solved in closed form; "joint": BFGS over (d, c)
    method: str = "profile"
    # closed-form refit of d at the current c between and after the BFGS runs
    polish_d: bool = True


@dataclass(frozen=True, eq=False)
class FsimFit:
    c: np.ndarray
    d: np.ndarray
    lambda_g: float
    lambda_beta: float
    g_basis: object
    beta_basis: object
    Psi: np.ndarray
    Y: np.ndarray
    index: np.ndarray
    index_bar: float
    S_range: float
    sigma_hat: float
    objective: float
    converged: bool
    n_restarts_used: int
    n_iter: int
    n_clamped: int
    rss: float
    hat_trace: float
    hat_trace2: float
    gcv: float
    sigma_own: float

    @property
    def n(self):
        return self.Y.size

    @property
    def fitted(self):
        return self.g(np.clip(self.index, -self.S_range, self.S_range))

    def g(self, s, deriv=0):
        return eval_basis(self.g_basis, s, deriv) @ self.d

    def beta(self, t, deriv=0):
        return eval_basis(self.beta_basis, t, deriv) @ self.c

    @property
    def flagged(self):
        return self.n_clamped > 0 or not self.converged


def trapezoid_weights(t):
    t = np.asarray(t, dtype=float)
    w = np.zeros_like(t)
    dt = np.diff(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def functional_design(ds, beta_basis):
    """Psi[i, j] = trapezoid integral of X_i(t) psi_j(t) over the sample grid."""
    lo, hi = beta_basis.domain
    tol = 1e-9 * beta_basis.width
    if ds.t_grid[0] < lo - tol or ds.t_grid[-1] > hi + tol:
        raise InvalidArgumentError(
            f"t_grid [{ds.t_grid[0]:g}, {ds.t_grid[-1]:g}] outside basis domain [{lo:g}, {hi:g}]"
        )
    w = trapezoid_weights(ds.t_grid)
    return ds.X @ (w[:, None] * eval_basis(beta_basis, ds.t_grid))


def index_range(ds):
    """Half-width S of the g-domain.

    The leading principal component is taken from the trapezoid Gram matrix of the
    (uncentered) curves and S_pca is the largest absolute score on it. Because
    |int X_i beta| <= ||X_i|| for unit-norm beta, S is widened to max_i ||X_i||
    whenever that bound is larger; ``active`` records which bound was used.
    """
    if ds.n < 2:
        raise InvalidArgumentError("need at least two curves")
    w = trapezoid_weights(ds.t_grid)
    G = ds.X @ (w[:, None] * ds.X.T)
    norms = np.sqrt(np.clip(np.diag(G), 0.0, None))
    if not norms.max() > 0:
        raise InvalidArgumentError("all curves are identically zero")
    evals, evecs = np.linalg.eigh(G)
    lead = max(evals[-1], 0.0)
    scores = np.sqrt(lead) * evecs[:, -1]
    pca = float(np.max(np.abs(scores)))
    norm_bound = float(norms.max())
    if norm_bound > pca:
        return IndexRange(norm_bound, pca, norm_bound, "norm")
    return IndexRange(pca, pca, norm_bound, "pca")


def index_clamp(s, S):
    """Clamp an index value to [-S, S]; returns ``(clamped, excess)``."""
    if not S > 0:
        raise InvalidArgumentError("S must be positive")
    s = float(s)
    clamped = min(max(s, -S), S)
    return clamped, max(abs(s) - S, 0.0)


def make_fsim_bases(ds, beta_basis, n_g=25, order_g=6):
    """g basis on [-S, S] with S from :func:`index_range`, paired with ``beta_basis``."""
    S = index_range(ds).S
    return FsimBases(make_bspline_basis((-S, S), n_g, order_g), beta_basis)


class PlsProblem:
    """Objective and gradient of the penalized least squares criterion for one dataset.

    Design matrices and penalties are computed once; :meth:`at` rebinds the
    smoothing parameters without recomputing them.
    """

    def __init__(self, Y, bases, lambda_g=0.0, lambda_beta=0.0, cache=None):
        g_basis, beta_basis = bases
        lo, hi = g_basis.domain
        if not np.isclose(lo, -hi, rtol=1e-12, atol=0):
            raise InvalidArgumentError("g basis domain must be symmetric [-S, S]")
        if lambda_g < 0 or lambda_beta < 0:
            raise InvalidArgumentError("smoothing parameters must be >= 0")
        self.Y = np.asarray(Y, dtype=float)
        self.bases = FsimBases(g_basis, beta_basis)
        self.g_basis, self.beta_basis = g_basis, beta_basis
        self.S = float(hi)
        self.lambda_g = float(lambda_g)
        self.lambda_beta = float(lambda_beta)
        self._cache = cache
        self.Psi = cache["Psi"]
        self.P_g = cache["P_g"]
        self.P_beta = cache["P_beta"]
        self.R_g = cache["R_g"]
        self.R_beta = cache["R_beta"]
        self.G_beta = cache["G_beta"]
        self.psi_a = cache["psi_a"]
        self.K1 = g_basis.n_basis
        self.K2 = beta_basis.n_basis
        if self.Psi.shape != (self.Y.size, self.K2):
            raise InvalidArgumentError("design matrix does not match responses / beta basis")

    @classmethod
    def from_design(cls, Y, Psi, bases, lambda_g=0.0, lambda_beta=0.0):
        g_basis, beta_basis = bases
        cache = {
            "Psi": np.asarray(Psi, dtype=float),
            "P_g": penalty_matrix(g_basis, 2),
            "P_beta": penalty_matrix(beta_basis, 2),
            "R_g": penalty_root(g_basis, 2),
            "R_beta": penalty_root(beta_basis, 2),
            "G_beta": inner_product_matrix(beta_basis, beta_basis),
            "psi_a": eval_basis(beta_basis, [beta_basis.domain[0]])[0],
        }
        return cls(Y, bases, lambda_g, lambda_beta, cache)

    @classmethod
    def from_dataset(cls, ds, bases, lambda_g=0.0, lambda_beta=0.0):
        return cls.from_design(ds.Y, functional_design(ds, bases[1]), bases, lambda_g, lambda_beta)

    def at(self, lambda_g, lambda_beta):
        return PlsProblem(self.Y, self.bases, lambda_g, lambda_beta, self._cache)

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        return theta[: self.K1], theta[self.K1:]

    def pack(self, c, d):
        return np.concatenate([np.asarray(d, float), np.asarray(c, float)])

    def normalize(self, c):
        """Return ``(c_unit, norm, sign)``: ||beta|| = 1 and beta(a) >= 0."""
        c = np.asarray(c, dtype=float)
        nu2 = float(c @ self.G_beta @ c)
        if not nu2 > 0 or not np.isfinite(nu2):
            raise InvalidArgumentError("beta coefficients are zero; cannot normalize")
        nu = np.sqrt(nu2)
        sign = 1.0 if float(self.psi_a @ c) >= 0 else -1.0
        return sign * c / nu, nu, sign

    def index_of(self, c_unit):
        raw = self.Psi @ c_unit
        return raw, np.clip(raw, -self.S, self.S)

    def value(self, theta):
        d, c = self.split(theta)
        cu, _, _ = self.normalize(c)
        raw, s = self.index_of(cu)
        excess = np.maximum(np.abs(raw) - self.S, 0.0)
        r = self.Y - eval_basis(self.g_basis, s) @ d
        rd, rc = self.R_g @ d, self.R_beta @ cu
        return float(r @ r + self.lambda_g * rd @ rd + self.lambda_beta * rc @ rc + excess.sum())

    def value_and_grad(self, theta):
        d, c = self.split(theta)
        cu, nu, sign = self.normalize(c)
        raw, s = self.index_of(cu)
        clamped = np.abs(raw) > self.S
        excess = np.where(clamped, np.abs(raw) - self.S, 0.0)
        B0, B1 = eval_basis_pair(self.g_basis, s)
        r = self.Y - B0 @ d
        # penalties through their roots: P = R'R
        rd, rc = self.R_g @ d, self.R_beta @ cu
        Pd = self.R_g.T @ rd
        Pc = self.R_beta.T @ rc
        f = float(r @ r + self.lambda_g * rd @ rd + self.lambda_beta * rc @ rc + excess.sum())
        grad_d = -2.0 * B0.T @ r + 2.0 * self.lambda_g * Pd
        # clamped points: g is evaluated at the end point (no c dependence); excess has slope sign(raw)
        w_i = np.where(clamped, np.sign(raw), -2.0 * r * (B1 @ d))
        grad_cu = self.Psi.T @ w_i + 2.0 * self.lambda_beta * Pc
        unit = cu * sign  # c / nu
        grad_c = (sign / nu) * (grad_cu - self.G_beta @ unit * float(unit @ grad_cu))
        return f, np.concatenate([grad_d, grad_c])

    def profile_value_and_grad(self, c):
        """Objective and gradient over c alone, with d at its closed-form optimum.

        By the envelope theorem the gradient is the partial c-gradient at that d.
        """
        cu, nu, sign = self.normalize(c)
        raw, s = self.index_of(cu)
        clamped = np.abs(raw) > self.S
        excess = np.where(clamped, np.abs(raw) - self.S, 0.0)
        B0, B1 = eval_basis_pair(self.g_basis, s)
        d = PenalizedLS(B0, self.R_g, self.lambda_g).coef(self.Y)
        r = self.Y - B0 @ d
        rd, rc = self.R_g @ d, self.R_beta @ cu
        Pc = self.R_beta.T @ rc
        f = float(r @ r + self.lambda_g * rd @ rd + self.lambda_beta * rc @ rc + excess.sum())
        w_i = np.where(clamped, np.sign(raw), -2.0 * r * (B1 @ d))
        grad_cu = self.Psi.T @ w_i + 2.0 * self.lambda_beta * Pc
        unit = cu * sign
        grad_c = (sign / nu) * (grad_cu - self.G_beta @ unit * float(unit @ grad_cu))
        return f, grad_c

    def best_d(self, c_unit):
        """Closed-form minimizer over d with the index held fixed."""
        _, s = self.index_of(c_unit)
        return PenalizedLS(eval_basis(self.g_basis, s), self.R_g, self.lambda_g).coef(self.Y)


def pls_objective(c, d, ds, bases, lambda_g, lambda_beta):
    prob = PlsProblem.from_dataset(ds, bases, lambda_g, lambda_beta)
    return prob.value(prob.pack(c, d))


def pls_gradient(c, d, ds, bases, lambda_g, lambda_beta):
    """Gradient of :func:`pls_objective` over the raw ``(d, c)`` vector (d first)."""
    prob = PlsProblem.from_dataset(ds, bases, lambda_g, lambda_beta)
    return prob.value_and_grad(prob.pack(c, d))[1]


def line_coefficients(g_basis, intercept, slope):
    """Coefficients of s -> intercept + slope * s in ``g_basis`` (exact for B-splines of order >= 2)."""
    lo, hi = g_basis.domain
    grid = np.linspace(lo, hi, 4 * g_basis.n_basis + 1)
    d, *_ = np.linalg.lstsq(eval_basis(g_basis, grid), intercept + slope * grid, rcond=None)
    return d


def _init_linear(prob):
    Psi, Y = prob.Psi, prob.Y
    Pc = Psi - Psi.mean(axis=0)
    Yc = Y - Y.mean()
    rhs = Pc.T @ Yc
    if not np.any(np.abs(rhs) > 1e-14 * max(1.0, np.abs(Pc).max() * np.abs(Y).max() * Y.size)):
        raise DegenerateDataError("functional linear regression gives a zero coefficient function")
    c0 = PenalizedLS(Pc, prob.R_beta, prob.lambda_beta).coef(Yc)
    try:
        cu, _, _ = prob.normalize(c0)
    except InvalidArgumentError as exc:
        raise DegenerateDataError(str(exc)) from None
    _, s = prob.index_of(cu)
    slope, intercept = np.polyfit(s, Y, 1)
    return cu, line_coefficients(prob.g_basis, intercept, slope)


def init_linear(ds, bases, lambda_beta):
    """Starting values: c from penalized functional linear regression, d an exact line in s."""
    return _init_linear(PlsProblem.from_dataset(ds, bases, 0.0, lambda_beta))


def _smoother_pieces(prob, cu, d):
    """Z = [Phi, diag(g'(s)) Psi] and the expected Hessian H at a fitted point."""
    raw, s = prob.index_of(cu)
    B0, B1 = eval_basis_pair(prob.g_basis, s)
    slope = np.where(np.abs(raw) > prob.S, 0.0, B1 @ d)
    Z = np.hstack([B0, slope[:, None] * prob.Psi])
    H = Z.T @ Z
    H[: prob.K1, : prob.K1] += prob.lambda_g * prob.P_g
    H[prob.K1:, prob.K1:] += prob.lambda_beta * prob.P_beta
    return Z, H


def _assemble_fit(prob, theta, converged, n_iter):
    d, c = prob.split(theta)
    cu, _, _ = prob.normalize(c)
    theta = prob.pack(cu, d)
    raw, s = prob.index_of(cu)
    r = prob.Y - eval_basis(prob.g_basis, s) @ d
    rss = float(r @ r)
    Z, H = _smoother_pieces(prob, cu, d)
    Hinv = jittered_inverse(H)
    F = Hinv @ (Z.T @ Z)
    tr1 = float(np.trace(F))
    tr2 = float(np.sum(F * F.T))
    n = prob.Y.size
    try:
        gcv = gcv_score(rss, tr1, n)
    except FsimError:
        gcv = float("inf")
    try:
        sig = sigma_from_rss(rss, residual_df(n, tr1, tr2))
    except FsimError:
        sig = float("nan")
    return FsimFit(
        c=cu, d=np.array(d), lambda_g=prob.lambda_g, lambda_beta=prob.lambda_beta,
        g_basis=prob.g_basis, beta_basis=prob.beta_basis, Psi=prob.Psi, Y=prob.Y,
        index=raw, index_bar=float(raw.mean()), S_range=prob.S, sigma_hat=sig,
        objective=prob.value(theta), converged=bool(converged), n_restarts_used=1,
        n_iter=int(n_iter), n_clamped=int(np.sum(np.abs(raw) > prob.S)), rss=rss,
        hat_trace=tr1, hat_trace2=tr2, gcv=gcv, sigma_own=sig,
    )


def _polish(prob, theta, f):
    d, c = prob.split(theta)
    cu, _, _ = prob.normalize(c)
    cand = prob.pack(cu, prob.best_d(cu))
    fc = prob.value(cand)
    return (cand, fc) if fc <= f else (theta, f)


def _fit_problem(prob, init, opts):
    if init is None:
        c0, d0 = _init_linear(prob)
    else:
        c0, d0 = init
        c0, _, _ = prob.normalize(c0)
    theta = prob.pack(c0, d0)
    f0 = prob.value(theta)
    if not np.isfinite(f0):
        raise NumericFailure("non-finite objective at the initial value", last_x=theta)
    if opts.method == "profile":
        return _fit_profile(prob, c0, opts)
    if opts.method != "joint":
        raise InvalidArgumentError(f"unknown optimization method {opts.method!r}")
    res = bfgs(prob.value_and_grad, theta, opts.rel_tol, opts.grad_tol, opts.max_iter)
    theta, f, converged, n_iter = res.x, res.fun, res.converged, res.n_iter
    if opts.polish_d:
        theta, f = _polish(prob, theta, f)
    if opts.restart:
        # fresh BFGS run: approximate Hessian back to the identity
        res2 = bfgs(prob.value_and_grad, theta, opts.rel_tol, opts.grad_tol, opts.max_iter)
        if res2.fun <= f:
            theta, f = res2.x, res2.fun
        converged, n_iter = res2.converged, n_iter + res2.n_iter
        if opts.polish_d:
            theta, f = _polish(prob, theta, f)
    return _assemble_fit(prob, theta, converged, n_iter)


def _fit_profile(prob, c0, opts):
    fg = prob.profile_value_and_grad
    res = bfgs(fg, c0, opts.rel_tol, opts.grad_tol, opts.max_iter)
    c, f, converged, n_iter = res.x, res.fun, res.converged, res.n_iter
    if opts.restart:
        cu, _, _ = prob.normalize(c)
        res2 = bfgs(fg, cu, opts.rel_tol, opts.grad_tol, opts.max_iter)
        if res2.fun <= f:
            c, f = res2.x, res2.fun
        converged, n_iter = res2.converged, n_iter + res2.n_iter
    cu, _, _ = prob.normalize(c)
    return _assemble_fit(prob, prob.pack(cu, prob.best_d(cu)), converged, n_iter)


def fit_fsim(ds, bases, lambda_g, lambda_beta, init=None, opts=None, problem=None):
    """Fit at one ``(lambda_g, lambda_beta)``.

    ``init`` is an optional ``(c, d)`` pair; by default :func:`init_linear` is used.
    """
    opts = opts or FitOptions()
    if problem is None:
        problem = PlsProblem.from_dataset(ds, bases)
    prob = problem.at(lambda_g, lambda_beta)
    return _fit_problem(prob, init, opts)


@dataclass(frozen=True, eq=False)
class FsimGrid:
    """Fits over a rectangular (lambda_g x lambda_beta) lattice, row-major in lambda_g."""

    lambda_g: np.ndarray
    lambda_beta: np.ndarray
    fits: list  # shape (n_g, n_beta); None where the fit failed
    errors: dict
    first_pass_objective: np.ndarray
    n_sweeps: int
    gcv_cell: Optional[tuple]
    sigma_gcv: float

    @property
    def shape(self):
        return (self.lambda_g.size, self.lambda_beta.size)

    def cells(self):
        for i in range(self.lambda_g.size):
            for j in range(self.lambda_beta.size):
                yield (i, j), self.fits[i][j]

    def objective(self):
        out = np.full(self.shape, np.nan)
        for (i, j), fit in self.cells():
            if fit is not None:
                out[i, j] = fit.objective
        return out


def _neighbours(i, j, shape):
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if (di or dj) and 0 <= i + di < shape[0] and 0 <= j + dj < shape[1]:
                yield i + di, j + dj


def warm_start_grid(ds, bases, lambda_g_grid, lambda_beta_grid, opts=None,
                    tol=0.01, max_sweeps=10, problem=None):
    """Fit every lattice cell, then re-fit from the 8 neighbouring solutions until stable.

    The first pass starts each cell from :func:`init_linear`. Each sweep re-fits every
    cell from each neighbour whose solution changed in the previous sweep (re-fitting
    from an unchanged neighbour would reproduce an earlier result) and keeps the
    lowest objective. Sweeps stop once the largest relative improvement is below
    ``tol`` or after ``max_sweeps``. Cells whose fit raises are recorded in ``errors``.
    """
    opts = opts or FitOptions()
    lg = np.asarray(lambda_g_grid, dtype=float).ravel()
    lb = np.asarray(lambda_beta_grid, dtype=float).ravel()
    shape = (lg.size, lb.size)
    base = problem if problem is not None else PlsProblem.from_dataset(ds, bases)
    probs = [[base.at(lg[i], lb[j]) for j in range(shape[1])] for i in range(shape[0])]
    fits = [[None] * shape[1] for _ in range(shape[0])]
    errors = {}
    first = np.full(shape, np.nan)
    for i in range(shape[0]):
        for j in range(shape[1]):
            try:
                fits[i][j] = _fit_problem(probs[i][j], None, opts)
                first[i, j] = fits[i][j].objective
            except FsimError as exc:
                errors[(i, j)] = f"{type(exc).__name__}: {exc}"

    changed = {(i, j) for i in range(shape[0]) for j in range(shape[1]) if fits[i][j] is not None}
    n_sweeps = 0
    while changed and n_sweeps < max_sweeps and shape != (1, 1):
        n_sweeps += 1
        snapshot = [row[:] for row in fits]
        new_changed = set()
        worst = 0.0
        for i in range(shape[0]):
            for j in range(shape[1]):
                for (a, b) in _neighbours(i, j, shape):
                    src = snapshot[a][b]
                    if (a, b) not in changed or src is None:
                        continue
                    try:
                        cand = _fit_problem(probs[i][j], (src.c, src.d), opts)
                    except FsimError:
                        continue
                    cur = fits[i][j]
                    if cur is None or cand.objective < cur.objective:
                        if cur is not None:
                            worst = max(worst, (cur.objective - cand.objective)
                                        / max(abs(cur.objective), 1e-300))
                        else:
                            worst = np.inf
                            errors.pop((i, j), None)
                        fits[i][j] = cand
                        new_changed.add((i, j))
        changed = new_changed
        if worst < tol:
            break

    gcv_cell, sigma_gcv = None, float("nan")
    best = np.inf
    for i in range(shape[0]):
        for j in range(shape[1]):
            fit = fits[i][j]
            if fit is not None and fit.gcv < best:
                best, gcv_cell = fit.gcv, (i, j)
    if gcv_cell is not None:
        sigma_gcv = fits[gcv_cell[0]][gcv_cell[1]].sigma_own
        fits = [[None if f is None else replace(f, sigma_hat=sigma_gcv) for f in row]
                for row in fits]
    return FsimGrid(lg, lb, fits, errors, first, n_sweeps, gcv_cell, sigma_gcv)


def _problem_for(fit):
    return PlsProblem.from_design(fit.Y, fit.Psi, (fit.g_basis, fit.beta_basis),
                                  fit.lambda_g, fit.lambda_beta)


def coef_covariance(fit, sigma=None):
    """Sandwich covariance sigma^2 H^-1 Z'Z H^-1 of the stacked ``(d, c)`` coefficients."""
    sigma = fit.sigma_hat if sigma is None else float(sigma)
    prob = _problem_for(fit)
    Z, H = _smoother_pieces(prob, fit.c, fit.d)
    Hinv = jittered_inverse(H)
    cov = sigma**2 * Hinv @ (Z.T @ Z) @ Hinv
    return 0.5 * (cov + cov.T)


def fsim_smoother_matrix(fit):
    """Approximate smoother matrix Z H^-1 Z' at the fitted coefficients."""
    prob = _problem_for(fit)
    Z, H = _smoother_pieces(prob, fit.c, fit.d)
    S = Z @ jittered_inverse(H) @ Z.T
    return 0.5 * (S + S.T)


def fsim_gcv(fit):
    return gcv_score(fit.rss, fit.hat_trace, fit.n)


def fsim_sigma_hat(fit):
    return sigma_from_rss(fit.rss, residual_df(fit.n, fit.hat_trace, fit.hat_trace2))
