"""Field records to a functional dataset.

Irregular environment series are smoothed per site (cubic B-splines, 21 knots
per year, GCV), split wherever sampling stops for more than 180 days. Responses
are per-day density changes between consecutive visits less than 100 days
apart, and each is paired with the smoothed environment over the preceding
60-day window, projected onto the coefficient-function basis.
"""

import csv
from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .basis import eval_basis, make_bspline_basis, penalty_root
from .errors import (
    DegenerateSmootherError,
    EmptyDatasetError,
    InvalidArgumentError,
    OutOfDomainError,
    SchemaError,
)
from .fsim import FsimDataset, trapezoid_weights
from .smoothing import fit_smooth, select_lambda_gcv

log = logging.getLogger(__name__)

DAYS_PER_YEAR = 365.25
SEGMENT_GAP = 180.0
RESPONSE_GAP = 100.0
WINDOW = 60.0
SMOOTH_LAMBDA_GRID = np.logspace(-2, 8, 41)
BETA_N_BASIS = 12
BETA_ORDER = 6
G_N_BASIS = 25
G_ORDER = 4
LOG10_LAMBDA_G = (-6.0, 2.0, 5)
LOG10_LAMBDA_BETA = (-2.0, 6.0, 5)


@dataclass(frozen=True, eq=False)
class IrregularSeries:
    site_id: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        v = np.asarray(self.values, dtype=float).ravel()
        if t.shape != v.shape:
            raise InvalidArgumentError("times and values differ in length")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise InvalidArgumentError(f"site {self.site_id!r}: non-finite time or value")
        if np.any(np.diff(t) <= 0):
            raise InvalidArgumentError(f"site {self.site_id!r}: times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.times.size


@dataclass(frozen=True, eq=False)
class SmoothedSeries:
    """Piecewise smoothed series; evaluation outside every segment raises."""

    site_id: str
    segments: tuple  # of (lo, hi, SmoothFit)

    @property
    def support(self):
        return [(lo, hi) for lo, hi, _ in self.segments]

    def segment_of(self, lo, hi):
        """Index of the segment containing [lo, hi], or None."""
        for k, (a, b, _) in enumerate(self.segments):
            if a <= lo and hi <= b:
                return k
        return None

    def __call__(self, times):
        t = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.empty(t.size)
        done = np.zeros(t.size, dtype=bool)
        for a, b, fit in self.segments:
            inside = (t >= a) & (t <= b) & ~done
            if np.any(inside):
                out[inside] = fit(t[inside])
                done |= inside
        if not np.all(done):
            raise OutOfDomainError(
                f"site {self.site_id!r}: {int(np.sum(~done))} time(s) outside the smoothed support,"
                f" e.g. {t[~done][0]:g}"
            )
        return out


def split_segments(times, max_gap=SEGMENT_GAP):
    """Index arrays of runs whose consecutive gaps are at most ``max_gap``."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        return []
    cuts = np.flatnonzero(np.diff(times) > max_gap) + 1
    return np.split(np.arange(times.size), cuts)


def segment_basis(lo, hi, knots_per_year=21, order=4):
    n_knots = max(2, math.ceil(knots_per_year * (hi - lo) / DAYS_PER_YEAR) + 1)
    return make_bspline_basis((lo, hi), n_knots + order - 2, order)


def smooth_series(s, knots_per_year=21, lambda_grid=None, max_gap=SEGMENT_GAP, order=4):
    """Penalized cubic spline per contiguous segment with lambda chosen by GCV."""
    grid = SMOOTH_LAMBDA_GRID if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    segments = []
    for idx in split_segments(s.times, max_gap):
        t, v = s.times[idx], s.values[idx]
        # the second-derivative penalty leaves lines unpenalized: two points are the minimum
        if t.size < 2:
            log.warning("site %r: segment at t=%g has %d point(s); skipped", s.site_id, t[0], t.size)
            continue
        basis = segment_basis(t[0], t[-1], knots_per_year, order)
        R = penalty_root(basis, 2)
        try:
            _, fit = select_lambda_gcv(t, v, basis, grid, R)
        except DegenerateSmootherError:
            # too few points for GCV: the heaviest smoothing (nearly a line) interpolates them
            fit = fit_smooth(t, v, basis, float(np.max(grid)), R)
        segments.append((float(t[0]), float(t[-1]), fit))
    return SmoothedSeries(s.site_id, tuple(segments))


def build_responses(density, max_gap=RESPONSE_GAP, log_density=False):
    """Per-day changes between consecutive visits strictly closer than ``max_gap`` days.

    Returns ``(times, Y)`` where ``times`` are the earlier visit of each pair.
    """
    t, d = density.times, density.values
    if log_density:
        if np.any(d <= 0):
            raise InvalidArgumentError(f"site {density.site_id!r}: log needs positive densities")
        d = np.log(d)
    gaps = np.diff(t)
    keep = gaps < max_gap
    Y = np.diff(d)[keep] / gaps[keep]
    return t[:-1][keep], Y


def extract_histories(env, obs_times, window=WINDOW, grid_step=1.0):
    """Environment over ``[s - window, s]`` on a regular grid, oldest value first.

    Returns ``(H, kept)``: one row per covered observation time and the boolean mask
    of which ``obs_times`` were kept. Uncovered windows are dropped and logged.
    """
    obs = np.asarray(obs_times, dtype=float).ravel()
    n_steps = int(round(window / grid_step))
    if not np.isclose(n_steps * grid_step, window):
        raise InvalidArgumentError("window must be a whole number of grid steps")
    offsets = np.linspace(-window, 0.0, n_steps + 1)
    rows, kept = [], np.zeros(obs.size, dtype=bool)
    for k, s in enumerate(obs):
        if env.segment_of(s - window, s) is None:
            log.info("site %r: window ending at t=%g not covered by one smoothed segment; dropped",
                     env.site_id, s)
            continue
        rows.append(env(s + offsets))
        kept[k] = True
    H = np.array(rows).reshape(len(rows), n_steps + 1)
    return H, kept


def default_beta_basis(window=WINDOW):
    return make_bspline_basis((0.0, window), BETA_N_BASIS, BETA_ORDER)


def project_histories(H, t_grid, beta_basis):
    """Least-squares projection onto ``beta_basis`` in the trapezoid inner product.

    Returns ``(coef, X)`` with X the projected curves back on ``t_grid``.
    """
    Psi = eval_basis(beta_basis, t_grid)
    w = trapezoid_weights(t_grid)
    G = Psi.T @ (w[:, None] * Psi)
    coef = np.linalg.solve(G, Psi.T @ (w[:, None] * np.atleast_2d(H).T)).T
    return coef, coef @ Psi.T


@dataclass(frozen=True, eq=False)
class AssembledDataset:
    dataset: FsimDataset
    provenance: list
    beta_basis: object
    coef: np.ndarray
    g_basis_spec: dict = field(default_factory=lambda: {"n_basis": G_N_BASIS, "order": G_ORDER})
    log10_lambda_g: tuple = LOG10_LAMBDA_G
    log10_lambda_beta: tuple = LOG10_LAMBDA_BETA


def assemble_dataset(sites, beta_basis=None, window=WINDOW, log_density=False,
                     knots_per_year=21, smooth_lambda_grid=None):
    """Pool every site's (history, response) pairs into one dataset.

    ``sites`` is a sequence of ``(density, env)`` :class:`IrregularSeries` pairs.
    """
    beta_basis = beta_basis or default_beta_basis(window)
    t_grid = np.linspace(0.0, window, int(round(window)) + 1)
    rows, Ys, prov = [], [], []
    for density, env in sites:
        if density.site_id != env.site_id:
            raise InvalidArgumentError(f"site mismatch: {density.site_id!r} vs {env.site_id!r}")
        smooth = smooth_series(env, knots_per_year, smooth_lambda_grid)
        times, Y = build_responses(density, log_density=log_density)
        H, kept = extract_histories(smooth, times, window)
        rows.append(H)
        Ys.append(Y[kept])
        prov.extend((density.site_id, float(s)) for s in times[kept])
    if not prov:
        raise EmptyDatasetError("no response has a fully covered history window")
    H = np.vstack(rows)
    coef, X = project_histories(H, t_grid, beta_basis)
    ds = FsimDataset(t_grid, X, np.concatenate(Ys))
    return AssembledDataset(ds, prov, beta_basis, coef)


# ---------------------------------------------------------------------------
# CSV input


def read_series_csv(path, value_column):
    """Read ``site_id, time_days, <value_column>`` rows into one series per site.

    Rows are sorted by time within each site; duplicate times are a schema error.
    """
    required = ("site_id", "time_days", value_column)
    by_site = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file, expected header {','.join(required)}")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}; header is {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            site = (row["site_id"] or "").strip()
            if not site:
                raise SchemaError(f"{path}:{lineno}: column site_id is empty")
            vals = []
            for col in ("time_days", value_column):
                try:
                    x = float(row[col])
                except (TypeError, ValueError):
                    raise SchemaError(f"{path}:{lineno}: column {col} is not a number: {row[col]!r}") from None
                if not math.isfinite(x):
                    raise SchemaError(f"{path}:{lineno}: column {col} is not finite")
                vals.append(x)
            by_site.setdefault(site, []).append((vals[0], vals[1], lineno))
    out = {}
    for site, recs in by_site.items():
        recs.sort()
        for a, b in zip(recs, recs[1:]):
            if a[0] == b[0]:
                raise SchemaError(f"{path}:{b[2]}: duplicate time_days {b[0]:g} for site {site!r}")
        out[site] = IrregularSeries(site, [r[0] for r in recs], [r[1] for r in recs])
    return out


def write_series_csv(path, series, value_column):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["site_id", "time_days", value_column])
        for s in series:
            for t, v in zip(s.times, s.values):
                w.writerow([s.site_id, repr(float(t)), repr(float(v))])


def pair_sites(densities, envs):
    """Match density and environment series by site id (sites lacking either are skipped)."""
    common = sorted(set(densities) & set(envs))
    for site in sorted(set(densities) ^ set(envs)):
        log.warning("site %r has only one of the two series; skipped", site)
    return [(densities[s], envs[s]) for s in common]


# ---------------------------------------------------------------------------
# synthetic field data


def synthetic_site(seed, site_id="synthetic", years=8, visit_step=7.0, env_step=3.0,
                   growth=None, noise_sd=0.1, measurement_sd=0.2):
    """One seasonal site whose growth is a known function of mean window temperature.

    True temperature is a seasonal cycle plus a per-year offset and a few random
    multi-week oscillations, so windows ending on the same calendar day differ between
    years. It is measured (with ``measurement_sd`` noise) every ``env_step`` days from
    mid April to late September; densities are visited every ``visit_step`` days over
    the same season with (d_{i+1} - d_i) / gap = growth(mean true temperature over the
    60 preceding days) + N(0, noise_sd^2). Returns ``(density, env)`` series.
    """
    rng = np.random.default_rng([int(seed), 2])
    growth = growth or (lambda m: np.exp((m - 15.0) / 5.0))
    periods = np.array([13.0, 29.0, 47.0])
    amps = 1.5 * rng.standard_normal((years, periods.size))
    phases = rng.uniform(0, 2 * np.pi, (years, periods.size))
    offsets_y = 1.5 * rng.standard_normal(years)

    def temperature(t, y):
        wave = np.sin(2 * np.pi * t[:, None] / periods + phases[y]) @ amps[y]
        return 15.0 - 10.0 * np.cos(2 * np.pi * (t - 15.0) / DAYS_PER_YEAR) + offsets_y[y] + wave

    window = np.linspace(-WINDOW, 0.0, int(WINDOW) + 1)
    w = trapezoid_weights(window) / WINDOW
    env_t, env_v, vis_t, rates = [], [], [], []
    for y in range(years):
        start, stop = y * DAYS_PER_YEAR + 100.0, y * DAYS_PER_YEAR + 270.0
        te = np.arange(start, stop + 1e-9, env_step)
        tv = np.arange(start + WINDOW + 5.0, stop - 5.0, visit_step)
        env_t.append(te)
        env_v.append(temperature(te, y) + measurement_sd * rng.standard_normal(te.size))
        means = np.array([w @ temperature(s + window, y) for s in tv])
        vis_t.append(tv)
        rates.append(growth(means) + noise_sd * rng.standard_normal(tv.size))
    vis_t, rates = np.concatenate(vis_t), np.concatenate(rates)
    dens = np.empty(vis_t.size)
    dens[0] = 10.0
    dens[1:] = dens[0] + np.cumsum(rates[:-1] * np.diff(vis_t))
    return (IrregularSeries(site_id, vis_t, dens),
            IrregularSeries(site_id, np.concatenate(env_t), np.concatenate(env_v)))
