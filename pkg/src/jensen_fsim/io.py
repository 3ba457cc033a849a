"""File formats: dataset / fit / surface JSON, tidy CSV tables, run manifests."""

import csv
import hashlib
import json
import math

import numpy as np

from .basis import basis_from_description, eval_basis, make_bspline_basis
from .errors import SchemaError
from .fsim import FsimDataset

DATASET_FORMAT = "jensen-fsim-dataset"


def _clean(obj):
    """JSON-ready copy: arrays to lists, numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj):
    return json.dumps(_clean(obj), indent=1, sort_keys=False) + "\n"


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x)) if math.isfinite(float(x)) else "nan"
    return str(x)


def write_csv(path, columns, rows):
    """Rows are dicts (or sequences in column order); floats are written with repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            vals = [row[c] for c in columns] if isinstance(row, dict) else list(row)
            w.writerow([_fmt(v) for v in vals])


def read_csv(path):
    """Read a CSV written by :func:`write_csv`; numeric fields come back as floats."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rec = {}
            for k, v in row.items():
                try:
                    rec[k] = float(v)
                except ValueError:
                    rec[k] = v
            out.append(rec)
    return out


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# datasets


def dataset_to_dict(ds, provenance=None, beta_basis=None, g_basis_spec=None,
                    log10_lambda_g=None, log10_lambda_beta=None):
    d = {"format": DATASET_FORMAT, "version": 1, "t_grid": ds.t_grid, "X": ds.X, "Y": ds.Y}
    if provenance is not None:
        d["provenance"] = [{"site_id": s, "time_days": t} for s, t in provenance]
    if beta_basis is not None:
        d["beta_basis"] = beta_basis.describe()
    if g_basis_spec is not None:
        d["g_basis"] = dict(g_basis_spec)
    if log10_lambda_g is not None:
        d["log10_lambda_g"] = list(log10_lambda_g)
    if log10_lambda_beta is not None:
        d["log10_lambda_beta"] = list(log10_lambda_beta)
    return d


def write_dataset(path, assembled):
    write_json(path, dataset_to_dict(
        assembled.dataset, assembled.provenance, assembled.beta_basis, assembled.g_basis_spec,
        assembled.log10_lambda_g, assembled.log10_lambda_beta))


class LoadedDataset:
    """A dataset file plus the fitting recommendations stored alongside it."""

    def __init__(self, raw, path="<dataset>"):
        if raw.get("format") != DATASET_FORMAT:
            raise SchemaError(f"{path}: not a dataset file (format={raw.get('format')!r})")
        for key in ("t_grid", "X", "Y"):
            if key not in raw:
                raise SchemaError(f"{path}: missing field {key!r}")
        try:
            self.dataset = FsimDataset(np.array(raw["t_grid"], dtype=float),
                                       np.array(raw["X"], dtype=float),
                                       np.array(raw["Y"], dtype=float))
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{path}: {exc}") from None
        t = self.dataset.t_grid
        self.beta_basis = (basis_from_description(raw["beta_basis"]) if "beta_basis" in raw
                           else make_bspline_basis((t[0], t[-1]), 12, 6))
        self.g_basis_spec = raw.get("g_basis", {"n_basis": 25, "order": 4})
        self.log10_lambda_g = tuple(raw.get("log10_lambda_g", (-6.0, 2.0, 5)))
        self.log10_lambda_beta = tuple(raw.get("log10_lambda_beta", (-2.0, 6.0, 5)))
        self.provenance = [(p["site_id"], p["time_days"]) for p in raw.get("provenance", [])]


def read_dataset(path):
    try:
        raw = read_json(path)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    return LoadedDataset(raw, path)


# ---------------------------------------------------------------------------
# fits and surfaces


def fit_to_dict(fit, n_plot=101):
    lo, hi = float(np.min(fit.index)), float(np.max(fit.index))
    lo, hi = max(lo, -fit.S_range), min(hi, fit.S_range)
    s = np.linspace(lo, hi, n_plot)
    a, b = fit.beta_basis.domain
    t = np.linspace(a, b, n_plot)
    return {
        "lambda_g": fit.lambda_g, "lambda_beta": fit.lambda_beta,
        "c": fit.c, "d": fit.d,
        "g_basis": fit.g_basis.describe(), "beta_basis": fit.beta_basis.describe(),
        "index": fit.index, "index_bar": fit.index_bar, "S_range": fit.S_range,
        "sigma_hat": fit.sigma_hat, "sigma_own": fit.sigma_own, "objective": fit.objective,
        "rss": fit.rss, "hat_trace": fit.hat_trace, "gcv": fit.gcv,
        "converged": fit.converged, "n_iter": fit.n_iter, "n_clamped": fit.n_clamped,
        "flagged": fit.flagged,
        "curves": {"s": s, "g": fit.g(s), "g2": fit.g(s, 2), "t": t, "beta": fit.beta(t)},
    }


SURFACE_COLUMNS = ("cell", "lambda_g", "lambda_beta", "delta", "sd", "t", "significant", "valid")


def surface_rows(surf):
    sig = surf.significant
    for k in range(surf.m):
        yield {"cell": k, "lambda_g": surf.lambda_g[k], "lambda_beta": surf.lambda_beta[k],
               "delta": surf.delta[k], "sd": surf.sd[k], "t": surf.t[k],
               "significant": bool(sig[k]), "valid": bool(surf.valid[k])}


def surface_envelope(surf):
    def cell(k):
        if k is None:
            return None
        return {"cell": k, "lambda_g": surf.lambda_g[k], "lambda_beta": surf.lambda_beta[k],
                "delta": surf.delta[k]}

    return {
        "test": surf.test, "T_obs": surf.T_obs, "crit": surf.crit, "alpha": surf.alpha,
        "alternative": surf.alternative, "reject": surf.reject, "seed": surf.seed,
        "n_null_draws": surf.n_null_draws, "sigma_used": surf.sigma_used,
        "sign_summary": surf.sign_summary, "grid_shape": list(surf.shape),
        "flattening": "row-major, lambda_g outer",
        "gcv_cell": cell(surf.gcv_cell), "argmax_delta": cell(surf.argmax_delta()),
        "argmin_delta": cell(surf.argmin_delta()),
        "failed_cells": {str(k): v for k, v in sorted(surf.failed.items())},
        "A": surf.A,
    }


def write_surface(prefix, surf):
    """``<prefix>.csv`` (one row per cell) and ``<prefix>.json`` (decision envelope)."""
    write_csv(f"{prefix}.csv", SURFACE_COLUMNS, surface_rows(surf))
    write_json(f"{prefix}.json", surface_envelope(surf))
