"""Simulation designs, link functions, rejection-rate and power studies, curvature metrics."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
import logging
import math
from typing import NamedTuple, Optional

import numpy as np

from .basis import eval_basis, make_bspline_basis, make_fourier_basis
from .errors import FsimError, InvalidArgumentError
from .fsim import (
    FitOptions,
    FsimDataset,
    PlsProblem,
    fit_fsim,
    line_coefficients,
    make_fsim_bases,
    trapezoid_weights,
)

log = logging.getLogger(__name__)

LINK_NAMES = ("exp_pos", "exp_neg", "neg_square", "linear", "power_family")


@dataclass(frozen=True)
class LinkSpec:
    name: str
    eta: float = 0.0

    def __post_init__(self):
        if self.name not in LINK_NAMES:
            raise InvalidArgumentError(f"unknown link {self.name!r}; choose from {LINK_NAMES}")

    def __call__(self, s, deriv=0):
        s = np.asarray(s, dtype=float)
        if self.name == "exp_pos":
            return np.exp(s)
        if self.name == "exp_neg":
            return (-1.0) ** deriv * np.exp(-s)
        if self.name == "neg_square":
            return [-s * s, -2.0 * s, np.full_like(s, -2.0)][deriv] if deriv < 3 else np.zeros_like(s)
        if self.name == "linear":
            return [s, np.ones_like(s)][deriv] if deriv < 2 else np.zeros_like(s)
        # s + eta * exp(-s)
        base = self.eta * (-1.0) ** deriv * np.exp(-s)
        if deriv == 0:
            return s + base
        if deriv == 1:
            return 1.0 + base
        return base

    @property
    def label(self):
        return f"{self.name}(eta={self.eta:g})" if self.name == "power_family" else self.name


def _rng(seed, stream=0):
    return np.random.default_rng([int(seed), int(stream)])


# ---------------------------------------------------------------------------
# data generators


class SimData(NamedTuple):
    X: np.ndarray
    E: np.ndarray
    Y: np.ndarray
    beta: np.ndarray


def gen_sim_data(n, link, sigma, seed, p=5):
    """Single index design: p uniform covariates on [-0.5, 0.5], beta = 1/sqrt(p)."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    rng = _rng(seed)
    X = rng.uniform(-0.5, 0.5, size=(n, p))
    beta = np.full(p, 1.0 / math.sqrt(p))
    E = X @ beta
    Y = link(E) + sigma * rng.standard_normal(n)
    return SimData(X, E, Y, beta)


FSIM_N_BASIS = 25
FSIM_GRID_POINTS = 201
FSIM_C_PRINTED = (0.0, 1.0, 1.0, 0.5)


def fsim_true_coefficients(n_basis=FSIM_N_BASIS):
    c = np.zeros(n_basis)
    c[: len(FSIM_C_PRINTED)] = FSIM_C_PRINTED
    return c / np.linalg.norm(c)


class FsimSimData(NamedTuple):
    dataset: FsimDataset
    index: np.ndarray
    beta_basis: object
    c_true: np.ndarray
    xi: np.ndarray


def gen_fsim_data(n, link, sigma, seed, n_basis=FSIM_N_BASIS, n_grid=FSIM_GRID_POINTS):
    """Functional design: X = sum_k xi_k psi_k, xi_k ~ N(0, exp(-(k-1)/12)), unit-norm beta."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    rng = _rng(seed)
    basis = make_fourier_basis((0.0, 1.0), n_basis)
    sd = np.exp(-np.arange(n_basis) / 12.0) ** 0.5
    xi = rng.standard_normal((n, n_basis)) * sd
    t = np.linspace(0.0, 1.0, n_grid)
    X = xi @ eval_basis(basis, t).T
    c = fsim_true_coefficients(n_basis)
    index = xi @ c
    Y = link(index) + sigma * rng.standard_normal(n)
    return FsimSimData(FsimDataset(t, X, Y), index, basis, c, xi)


CURVATURE_GAMMA = (1.0, 0.5, 0.25, 0.125)
CURVATURE_C = tuple(math.sqrt(2.0) * v for v in
                     (1 / math.sqrt(12), 1 / math.sqrt(12), 1 / math.sqrt(6), 1 / math.sqrt(6)))


class CurvatureData(NamedTuple):
    dataset: FsimDataset
    index: np.ndarray
    beta_basis: object
    c_true: np.ndarray
    noise_var: float


def gen_appendixA_data(n, link, seed, n_grid=FSIM_GRID_POINTS, n_beta_basis=9):
    """Curvature demonstration design: X_i(t) = t + sum_k xi_ik eta_k(t).

    eta_1..eta_4 are the unit-norm sin/cos harmonics at frequencies 1 and 2, which are
    functions 2..5 of the Fourier basis returned as ``beta_basis``. The noise variance
    is one tenth of the empirical variance of g over the sample.
    """
    if n < 2:
        raise InvalidArgumentError("n must be >= 2")
    rng = _rng(seed)
    basis = make_fourier_basis((0.0, 1.0), n_beta_basis)
    t = np.linspace(0.0, 1.0, n_grid)
    harmonics = eval_basis(basis, t)[:, 1:5]
    xi = rng.standard_normal((n, 4)) * np.sqrt(CURVATURE_GAMMA)
    X = t[None, :] + xi @ harmonics.T
    c = np.zeros(n_beta_basis)
    c[1:5] = CURVATURE_C
    # int t * beta(t) dt, exactly, for the mean curve mu(t) = t
    w = np.array([-1.0 / (2 * np.pi), 0.0, -1.0 / (4 * np.pi), 0.0]) * math.sqrt(2.0)
    index = float(w @ np.asarray(CURVATURE_C)) + xi @ np.asarray(CURVATURE_C)
    gvals = link(index)
    noise_var = 0.1 * float(np.var(gvals))
    Y = gvals + math.sqrt(noise_var) * rng.standard_normal(n)
    return CurvatureData(FsimDataset(t, X, Y), index, basis, c, noise_var)


# ---------------------------------------------------------------------------
# studies


def log_grid(spec):
    """``(log10_lo, log10_hi, num)`` -> geometric grid of smoothing parameters."""
    lo, hi, num = spec
    if int(num) < 1:
        raise InvalidArgumentError("grid needs at least one point")
    return np.logspace(float(lo), float(hi), int(num))


DESIGNS = ("sim", "fsim", "appendixA")


@dataclass(frozen=True)
class StudyConfig:
    design: str
    n: int = 100
    sigma: float = 0.1
    link: LinkSpec = LinkSpec("exp_pos")
    n_reps: int = 200
    base_seed: int = 0
    n_null_draws: int = 5000
    alpha: float = 0.05
    alternative: str = "two-sided"
    # sim design: one lambda grid; functional designs: lambda_g x lambda_beta lattice
    log10_lambda: tuple = (-8.0, 4.0, 41)
    log10_lambda_g: tuple = (-5.0, -1.0, 5)
    log10_lambda_beta: tuple = (-7.0, -3.0, 5)
    n_g_basis: int = 25
    g_order: int = 6
    exclude_failures: bool = False

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise InvalidArgumentError(f"design must be one of {DESIGNS}")
        if self.n_reps < 1:
            raise InvalidArgumentError("n_reps must be >= 1")
        if self.sigma < 0:
            raise InvalidArgumentError("sigma must be >= 0")
        if self.n < 10:
            raise InvalidArgumentError("n must be >= 10")

    def seed(self, r):
        return self.base_seed + r

    def to_dict(self):
        d = asdict(self)
        d["link"] = {"name": self.link.name, "eta": self.link.eta}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["link"] = LinkSpec(**d["link"])
        for key in ("log10_lambda", "log10_lambda_g", "log10_lambda_beta"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def replicate_data(cfg, seed):
    """Generate one replicate of the configured design."""
    if cfg.design == "sim":
        return gen_sim_data(cfg.n, cfg.link, cfg.sigma, seed)
    if cfg.design == "fsim":
        return gen_fsim_data(cfg.n, cfg.link, cfg.sigma, seed)
    return gen_appendixA_data(cfg.n, cfg.link, seed)


def sim_g_basis(E, cfg):
    """Link basis for the known-index test, spanning the observed index range."""
    return make_bspline_basis((float(np.min(E)), float(np.max(E))), cfg.n_g_basis, cfg.g_order)


def replicate_surface(cfg, seed, opts=None):
    """Run the configured Jensen test on one replicate; returns ``(data, surface, extra)``."""
    from .jensen import jensen_test_fsim, jensen_test_t1

    data = replicate_data(cfg, seed)
    if cfg.design == "sim":
        surf = jensen_test_t1(data.E, data.Y, sim_g_basis(data.E, cfg), log_grid(cfg.log10_lambda),
                              cfg.alpha, cfg.n_null_draws, seed, cfg.alternative)
        return data, surf, None
    from .fsim import warm_start_grid

    ds = data.dataset
    bases = make_fsim_bases(ds, data.beta_basis, cfg.n_g_basis, cfg.g_order)
    grid = warm_start_grid(ds, bases, log_grid(cfg.log10_lambda_g),
                           log_grid(cfg.log10_lambda_beta), opts)
    surf = jensen_test_fsim(ds, bases, grid.lambda_g, grid.lambda_beta, cfg.alpha,
                            cfg.n_null_draws, seed, opts, cfg.alternative, grid=grid)
    return data, surf, grid


def _run_one(args):
    cfg, r = args
    seed = cfg.seed(r)
    rec = {"replicate": r, "seed": seed}
    try:
        _, surf, grid = replicate_surface(cfg, seed)
    except FsimError as exc:
        rec.update(reject=False, failed=True, error=f"{type(exc).__name__}: {exc}")
        return rec
    rec.update(
        reject=surf.reject, failed=False, T_obs=surf.T_obs, crit=surf.crit,
        sigma_used=surf.sigma_used, sign_summary=surf.sign_summary,
        gcv_cell=surf.gcv_cell, n_failed_cells=len(surf.failed),
    )
    if grid is not None:
        rec["n_sweeps"] = grid.n_sweeps
    return rec


def _map(fn, items, jobs):
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=int(jobs)) as pool:
        return list(pool.map(fn, items))


@dataclass
class StudyResult:
    config: StudyConfig
    rate: float
    n_reject: int
    n_used: int
    n_failed: int
    per_seed: list = field(default_factory=list)

    def to_dict(self):
        return {"config": self.config.to_dict(), "rate": self.rate, "n_reject": self.n_reject,
                "n_used": self.n_used, "n_failed": self.n_failed, "per_seed": self.per_seed}


def run_rejection_study(cfg, jobs=1):
    """Rejection rate of the Jensen test over ``cfg.n_reps`` replicates (seeds base_seed + r).

    Failed replicates count as non-rejections unless ``cfg.exclude_failures``.
    """
    per_seed = _map(_run_one, [(cfg, r) for r in range(cfg.n_reps)], jobs)
    n_failed = sum(rec["failed"] for rec in per_seed)
    n_reject = sum(rec["reject"] for rec in per_seed)
    n_used = cfg.n_reps - n_failed if cfg.exclude_failures else cfg.n_reps
    rate = n_reject / n_used if n_used else float("nan")
    if n_failed:
        log.warning("%d of %d replicates failed", n_failed, cfg.n_reps)
    return StudyResult(cfg, rate, n_reject, n_used, n_failed, per_seed)


def run_power_curve(cfg, eta_grid, jobs=1):
    """One rejection study per eta with link s + eta * exp(-s); rows of (eta, rate, n_reps, n, sigma)."""
    etas = [float(e) for e in eta_grid]
    if not etas:
        raise InvalidArgumentError("empty eta grid")
    if any(b < a for a, b in zip(etas, etas[1:])):
        raise InvalidArgumentError("eta grid must be nondecreasing")
    rows, studies = [], []
    for eta in etas:
        res = run_rejection_study(replace(cfg, link=LinkSpec("power_family", eta)),
                                  jobs)
        rows.append({"eta": eta, "rate": res.rate, "n_reps": cfg.n_reps, "n": cfg.n,
                     "sigma": cfg.sigma})
        studies.append(res)
    return rows, studies


def parse_range(text):
    """``lo:hi:step`` (inclusive of hi up to rounding) or a comma list -> list of floats."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        lo, hi, step = (float(v) for v in text.split(":"))
        if step <= 0:
            raise InvalidArgumentError("step must be positive")
        if hi < lo:
            return []
        k = int(math.floor((hi - lo) / step + 1e-9))
        return [round(lo + i * step, 12) for i in range(k + 1)]
    return [float(v) for v in text.split(",") if v.strip()]


# ---------------------------------------------------------------------------
# sigma diagnostics


def _sigma_one(args):
    from .smoothing import fit_smooth, gcv, select_lambda_gcv, sigma_hat
    from .basis import penalty_root

    cfg, r = args
    seed = cfg.seed(r)
    rec = {"replicate": r, "seed": seed}
    try:
        if cfg.design == "sim":
            data = replicate_data(cfg, seed)
            basis = sim_g_basis(data.E, cfg)
            R = penalty_root(basis, 2)
            grid = log_grid(cfg.log10_lambda)
            fits = [fit_smooth(data.E, data.Y, basis, lam, R) for lam in grid]
            lam_gcv, gfit = select_lambda_gcv(data.E, data.Y, basis, grid, R)
            rec.update(lambda_grid=grid.tolist(), sigma_curve=[sigma_hat(f) for f in fits],
                       gcv_curve=[gcv(f) for f in fits], lambda_gcv=float(lam_gcv),
                       sigma_gcv=sigma_hat(gfit), failed=False)
        else:
            from .fsim import warm_start_grid

            data = replicate_data(cfg, seed)
            ds = data.dataset
            bases = make_fsim_bases(ds, data.beta_basis, cfg.n_g_basis, cfg.g_order)
            grid = warm_start_grid(ds, bases, log_grid(cfg.log10_lambda_g),
                                   log_grid(cfg.log10_lambda_beta))
            i, j = grid.gcv_cell
            rec.update(lambda_g_gcv=float(grid.lambda_g[i]), lambda_beta_gcv=float(grid.lambda_beta[j]),
                       sigma_gcv=grid.sigma_gcv, failed=False)
    except FsimError as exc:
        rec.update(failed=True, error=f"{type(exc).__name__}: {exc}")
    return rec


def run_sigma_check(cfg, jobs=1):
    """Per-replicate sigma_hat at the GCV choice (and the full sigma_hat(lambda) curve for ``sim``)."""
    return _map(_sigma_one, [(cfg, r) for r in range(cfg.n_reps)], jobs)


# ---------------------------------------------------------------------------
# curvature metrics


def rse(beta_hat, beta_true, t_grid):
    """Root integrated squared error of a coefficient function, minimized over its sign."""
    bh = np.asarray(beta_hat, dtype=float)
    bt = np.asarray(beta_true, dtype=float)
    w = trapezoid_weights(t_grid)
    return float(min(np.sqrt(w @ (bh - bt) ** 2), np.sqrt(w @ (bh + bt) ** 2)))


def rase_k(fit, link, true_index, k):
    """Root mean squared error of the k-th derivative of g-hat at the fitted index values."""
    if k not in (0, 1, 2):
        raise InvalidArgumentError("k must be 0, 1 or 2")
    s_hat = np.clip(fit.index, -fit.S_range, fit.S_range)
    err = fit.g(s_hat, k) - link(np.asarray(true_index, dtype=float), k)
    return float(np.sqrt(np.mean(err**2)))


CURVATURE_SEED = 1
CURVATURE_LOG10_LAMBDA_G = (-6.0, 0.0, 4)
CURVATURE_LOG10_LAMBDA_BETA = (-6.0, -2.0, 3)


def _gcv_fit(prob, lg, lb, init, opts):
    from .fsim import _fit_problem

    best = None
    for a in lg:
        for b in lb:
            try:
                fit = _fit_problem(prob.at(a, b), init, opts)
            except FsimError:
                continue
            if best is None or fit.gcv < best.gcv:
                best = fit
    if best is None:
        raise FsimError("no smoothing parameter pair produced a fit")
    return best


def curvature_demo(seed=CURVATURE_SEED, n=100, link=LinkSpec("exp_neg"),
                   log10_lambda_g=CURVATURE_LOG10_LAMBDA_G,
                   log10_lambda_beta=CURVATURE_LOG10_LAMBDA_BETA, n_g_basis=25, g_order=6,
                   n_beta_basis=9):
    """Fit one curvature-demonstration instance from two starting points and compare.

    Starts are (i) the true coefficient function and (ii) equal coefficients on every
    basis function, each followed by a joint BFGS fit at the GCV-selected smoothing
    parameters. Returns a JSON-ready report.
    """
    data = gen_appendixA_data(n, link, seed, n_beta_basis=n_beta_basis)
    ds = data.dataset
    bases = make_fsim_bases(ds, data.beta_basis, n_g_basis, g_order)
    prob = PlsProblem.from_dataset(ds, bases)
    opts = FitOptions(method="joint")
    lg, lb = log_grid(log10_lambda_g), log_grid(log10_lambda_beta)
    t = ds.t_grid
    beta_true = eval_basis(data.beta_basis, t) @ data.c_true
    starts = {
        "truth": data.c_true,
        "equal": np.ones(data.beta_basis.n_basis),
    }
    report = {"seed": int(seed), "n": int(n), "link": link.label, "noise_var": data.noise_var,
              "lambda_g_grid": lg.tolist(), "lambda_beta_grid": lb.tolist(), "fits": {}}
    s_lo, s_hi = float(np.min(data.index)), float(np.max(data.index))
    s_eval = np.linspace(s_lo, s_hi, 201)
    g2 = {}
    for name, c0 in starts.items():
        cu, _, _ = prob.normalize(c0)
        init = (cu, prob.at(lg[0], lb[0]).best_d(cu))
        fit = _gcv_fit(prob, lg, lb, init, opts)
        g2[name] = fit.g(np.clip(s_eval, -fit.S_range, fit.S_range), 2)
        report["fits"][name] = {
            "lambda_g": fit.lambda_g, "lambda_beta": fit.lambda_beta,
            "objective": fit.objective, "c_norm": float(np.linalg.norm(fit.c)),
            "RSE": rse(fit.beta(t), beta_true, t),
            "RASE0": rase_k(fit, link, data.index, 0),
            "RASE1": rase_k(fit, link, data.index, 1),
            "RASE2": rase_k(fit, link, data.index, 2),
            "sup_abs_g2": float(np.max(np.abs(g2[name]))),
            "c": fit.c.tolist(),
        }
    report["sup_diff_g2"] = float(np.max(np.abs(g2["truth"] - g2["equal"])))
    report["s_range"] = [s_lo, s_hi]
    return report
