"""Command-line front end. Every subcommand writes plot-ready CSV/JSON plus a manifest.

Exit codes: 0 success, 1 runtime failure, 2 usage or input-schema error.
"""

import argparse
from datetime import datetime, timezone
import logging
import os
import sys

import numpy as np

from . import __version__
from .errors import FsimError, InvalidArgumentError, SchemaError
from . import io

log = logging.getLogger("jensen_fsim")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _grid_spec(text):
    """``lo:hi:num`` in log10 units."""
    try:
        lo, hi, num = text.split(":")
        spec = (float(lo), float(hi), int(num))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI:NUM (log10 units), got {text!r}") from None
    if spec[2] < 1:
        raise argparse.ArgumentTypeError("NUM must be >= 1")
    return spec


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


# (dest, flag, type, default, help); default None means "required" when listed in REQUIRED
STUDY_OPTS = [
    ("design", "--design", str, None, "sim | fsim | appendixA"),
    ("link", "--link", str, "exp_pos", "exp_pos | exp_neg | neg_square | linear | power_family"),
    ("eta", "--eta", float, 0.0, "eta of the power_family link"),
    ("n", "--n", int, 100, "sample size"),
    ("sigma", "--sigma", float, 0.1, "noise standard deviation"),
    ("reps", "--reps", int, 200, "number of replicates"),
    ("seed", "--seed", int, None, "base seed; replicate r uses seed + r"),
    ("lambda_grid", "--lambda-grid", _grid_spec, (-8.0, 4.0, 41), "known-index grid, log10 LO:HI:NUM"),
    ("lambda_g_grid", "--lambda-g-grid", _grid_spec, (-5.0, -1.0, 5), "lambda_g grid, log10 LO:HI:NUM"),
    ("lambda_beta_grid", "--lambda-beta-grid", _grid_spec, (-7.0, -3.0, 5),
     "lambda_beta grid, log10 LO:HI:NUM"),
    ("null_draws", "--null-draws", int, 5000, "null Gaussian draws for the critical value"),
    ("alpha", "--alpha", float, 0.05, "significance level"),
    ("alternative", "--alternative", str, "two-sided", "two-sided | greater | less"),
    ("exclude_failures", "--exclude-failures", _bool, False,
     "drop failed replicates from the rate denominator"),
    ("jobs", "--jobs", int, 1, "worker processes"),
    ("out", "--out", str, None, "output directory"),
]

SUBCOMMANDS = {
    "simulate": {"opts": STUDY_OPTS, "required": ("design", "seed", "out")},
    "power": {"opts": STUDY_OPTS + [("eta_grid", "--eta-grid", str, "0:1.2:0.3", "LO:HI:STEP or comma list")],
              "required": ("design", "seed", "out")},
    "sigma-check": {"opts": STUDY_OPTS, "required": ("design", "seed", "out")},
    "ingest": {"opts": [
        ("density", "--density", str, None, "density CSV (site_id,time_days,density)"),
        ("env", "--env", str, None, "environment CSV (site_id,time_days,value)"),
        ("out", "--out", str, None, "dataset JSON (or directory with --per-site)"),
        ("window", "--window", float, 60.0, "history window in days"),
        ("log_density", "--log-density", _bool, False, "log-transform densities first"),
        ("per_site", "--per-site", _bool, False, "one dataset per site instead of pooling"),
        ("knots_per_year", "--knots-per-year", int, 21, "smoothing knots per year"),
    ], "required": ("density", "env", "out")},
    "fit": {"opts": [
        ("data", "--data", str, None, "dataset JSON"),
        ("lambda_g", "--lambda-g", float, None, "fixed lambda_g (else GCV over the grid)"),
        ("lambda_beta", "--lambda-beta", float, None, "fixed lambda_beta (else GCV over the grid)"),
        ("lambda_g_grid", "--lambda-g-grid", _grid_spec, None, "override dataset lambda_g grid"),
        ("lambda_beta_grid", "--lambda-beta-grid", _grid_spec, None, "override dataset lambda_beta grid"),
        ("out", "--out", str, None, "fit JSON"),
    ], "required": ("data", "out")},
    "test": {"opts": [
        ("data", "--data", str, None, "dataset JSON"),
        ("seed", "--seed", int, None, "seed for the null simulation"),
        ("lambda_g_grid", "--lambda-g-grid", _grid_spec, None, "override dataset lambda_g grid"),
        ("lambda_beta_grid", "--lambda-beta-grid", _grid_spec, None, "override dataset lambda_beta grid"),
        ("null_draws", "--null-draws", int, 5000, "null Gaussian draws"),
        ("alpha", "--alpha", float, 0.05, "significance level"),
        ("alternative", "--alternative", str, "two-sided", "two-sided | greater | less"),
        ("out", "--out", str, None, "output directory"),
    ], "required": ("data", "seed", "out")},
    "curvature-demo": {"opts": [
        ("seed", "--seed", int, None, "data seed"),
        ("out", "--out", str, None, "report JSON"),
    ], "required": ("seed", "out")},
}


def read_config_file(path):
    """Flat ``key = value`` lines; ``#`` starts a comment; keys use dashes or underscores.

    A ``.json`` path is read as a run manifest and its resolved config is reused.
    """
    conf = {}
    if path.endswith(".json"):
        try:
            raw = io.read_json(path)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read manifest: {exc}") from None
        if not isinstance(raw, dict) or not isinstance(raw.get("config"), dict):
            raise UsageError(f"{path}: not a run manifest")
        return {k: v for k, v in raw["config"].items() if v is not None}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            conf[key.lstrip("-").replace("-", "_")] = value
    return conf


def build_parser():
    parser = argparse.ArgumentParser(
        prog="jensen-fsim",
        description="Jensen Effect tests for (functional) single index models.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name, spec in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"{name} subcommand")
        p.add_argument("--config", help="flat key = value file; command-line flags take precedence")
        p.add_argument("-v", "--verbose", action="store_true")
        for dest, flag, typ, default, help_ in spec["opts"]:
            shown = "required" if dest in spec["required"] else f"default {default}"
            p.add_argument(flag, dest=dest, type=typ, default=None, help=f"{help_} ({shown})")
    return parser


def resolve(args):
    """Merge flags > config file > defaults and check required options."""
    spec = SUBCOMMANDS[args.command]
    conf = read_config_file(args.config) if args.config else {}
    known = {dest for dest, *_ in spec["opts"]}
    unknown = sorted(set(conf) - known)
    if unknown:
        raise UsageError(f"unknown config key(s) for {args.command}: {unknown}")
    out = {}
    for dest, flag, typ, default, _ in spec["opts"]:
        value = getattr(args, dest)
        if value is None and dest in conf:
            raw = conf[dest]
            try:
                value = tuple(raw) if isinstance(raw, list) else typ(raw) if isinstance(raw, str) else raw
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config key {dest}: {exc}") from None
        if value is None:
            value = default
        if value is None and dest in spec["required"]:
            raise UsageError(f"{flag} is required")
        out[dest] = value
    return out


def _study_config(cfg):
    from .simgen import LINK_NAMES, LinkSpec, StudyConfig

    if cfg["link"] not in LINK_NAMES:
        raise UsageError(f"--link must be one of {LINK_NAMES}")
    if cfg["alternative"] not in ("two-sided", "greater", "less"):
        raise UsageError("--alternative must be two-sided, greater or less")
    try:
        return StudyConfig(
            design=cfg["design"], n=cfg["n"], sigma=cfg["sigma"],
            link=LinkSpec(cfg["link"], cfg["eta"]), n_reps=cfg["reps"], base_seed=cfg["seed"],
            n_null_draws=cfg["null_draws"], alpha=cfg["alpha"], alternative=cfg["alternative"],
            log10_lambda=tuple(cfg["lambda_grid"]), log10_lambda_g=tuple(cfg["lambda_g_grid"]),
            log10_lambda_beta=tuple(cfg["lambda_beta_grid"]),
            exclude_failures=cfg["exclude_failures"],
        )
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from None


STUDY_COLUMNS = ("design", "link", "eta", "n", "sigma", "n_reps", "rate", "n_reject", "n_used",
                 "n_failed")


def _study_row(res):
    c = res.config
    return {"design": c.design, "link": c.link.name, "eta": c.link.eta, "n": c.n, "sigma": c.sigma,
            "n_reps": c.n_reps, "rate": res.rate, "n_reject": res.n_reject, "n_used": res.n_used,
            "n_failed": res.n_failed}


def cmd_simulate(cfg):
    from .simgen import run_rejection_study

    scfg = _study_config(cfg)
    if cfg["null_draws"] < 1000:
        raise UsageError("--null-draws must be >= 1000")
    res = run_rejection_study(scfg, jobs=cfg["jobs"])
    os.makedirs(cfg["out"], exist_ok=True)
    io.write_csv(os.path.join(cfg["out"], "rates.csv"), STUDY_COLUMNS, [_study_row(res)])
    io.write_json(os.path.join(cfg["out"], "per_seed.json"), res.to_dict())
    print(f"rate = {res.rate:.4f} ({res.n_reject}/{res.n_used}, {res.n_failed} failed)")
    return [os.path.join(cfg["out"], f) for f in ("rates.csv", "per_seed.json")], {}


def cmd_power(cfg):
    from .simgen import parse_range, run_power_curve

    scfg = _study_config(cfg)
    try:
        etas = parse_range(cfg["eta_grid"])
    except (InvalidArgumentError, ValueError) as exc:
        raise UsageError(f"--eta-grid: {exc}") from None
    if not etas:
        raise UsageError("--eta-grid is empty")
    if any(b < a for a, b in zip(etas, etas[1:])):
        raise UsageError("--eta-grid must be nondecreasing")
    rows, studies = run_power_curve(scfg, etas, jobs=cfg["jobs"])
    os.makedirs(cfg["out"], exist_ok=True)
    io.write_csv(os.path.join(cfg["out"], "power.csv"), ("eta", "rate", "n_reps", "n", "sigma"), rows)
    io.write_json(os.path.join(cfg["out"], "per_seed.json"), [s.to_dict() for s in studies])
    for r in rows:
        print(f"eta = {r['eta']:g}: rate = {r['rate']:.4f}")
    return [os.path.join(cfg["out"], f) for f in ("power.csv", "per_seed.json")], {}


def cmd_sigma_check(cfg):
    from .simgen import run_sigma_check

    scfg = _study_config(cfg)
    recs = run_sigma_check(scfg, jobs=cfg["jobs"])
    os.makedirs(cfg["out"], exist_ok=True)
    rows = [{"replicate": r["replicate"], "seed": r["seed"], "failed": r["failed"],
             "sigma_gcv": r.get("sigma_gcv", float("nan")),
             "lambda_gcv": r.get("lambda_gcv", float("nan")),
             "lambda_g_gcv": r.get("lambda_g_gcv", float("nan")),
             "lambda_beta_gcv": r.get("lambda_beta_gcv", float("nan"))} for r in recs]
    files = [os.path.join(cfg["out"], "sigma_gcv.csv")]
    io.write_csv(files[0], ("replicate", "seed", "failed", "sigma_gcv", "lambda_gcv", "lambda_g_gcv",
                            "lambda_beta_gcv"), rows)
    if scfg.design == "sim":
        curves = [{"replicate": r["replicate"], "lambda": lam, "sigma_hat": s, "gcv": g}
                  for r in recs if not r["failed"]
                  for lam, s, g in zip(r["lambda_grid"], r["sigma_curve"], r["gcv_curve"])]
        files.append(os.path.join(cfg["out"], "sigma_curves.csv"))
        io.write_csv(files[-1], ("replicate", "lambda", "sigma_hat", "gcv"), curves)
    sig = np.array([r["sigma_gcv"] for r in rows if not r["failed"]])
    if sig.size:
        print(f"sigma_hat at GCV: median {np.median(sig):.4f}, "
              f"IQR [{np.quantile(sig, 0.25):.4f}, {np.quantile(sig, 0.75):.4f}] (true {scfg.sigma:g})")
    return files, {}


def cmd_ingest(cfg):
    from .ingest import assemble_dataset, pair_sites, read_series_csv

    dens = read_series_csv(cfg["density"], "density")
    env = read_series_csv(cfg["env"], "value")
    sites = pair_sites(dens, env)
    if not sites:
        raise SchemaError("no site appears in both input files")
    inputs = {p: io.sha256_file(p) for p in (cfg["density"], cfg["env"])}
    kw = dict(window=cfg["window"], log_density=cfg["log_density"],
              knots_per_year=cfg["knots_per_year"])
    files = []
    if cfg["per_site"]:
        os.makedirs(cfg["out"], exist_ok=True)
        for pair in sites:
            a = assemble_dataset([pair], **kw)
            path = os.path.join(cfg["out"], f"dataset_{pair[0].site_id}.json")
            io.write_dataset(path, a)
            files.append(path)
            print(f"{pair[0].site_id}: n = {a.dataset.n}")
    else:
        a = assemble_dataset(sites, **kw)
        io.write_dataset(cfg["out"], a)
        files.append(cfg["out"])
        print(f"pooled {len(sites)} site(s): n = {a.dataset.n}")
    return files, inputs


def _dataset_and_bases(cfg):
    from .fsim import make_fsim_bases

    ld = io.read_dataset(cfg["data"])
    spec = ld.g_basis_spec
    bases = make_fsim_bases(ld.dataset, ld.beta_basis, int(spec["n_basis"]), int(spec["order"]))
    lg = cfg.get("lambda_g_grid") or ld.log10_lambda_g
    lb = cfg.get("lambda_beta_grid") or ld.log10_lambda_beta
    return ld, bases, lg, lb


def cmd_fit(cfg):
    from .fsim import fit_fsim, warm_start_grid
    from .simgen import log_grid

    ld, bases, lg, lb = _dataset_and_bases(cfg)
    inputs = {cfg["data"]: io.sha256_file(cfg["data"])}
    fixed = (cfg["lambda_g"], cfg["lambda_beta"])
    if (fixed[0] is None) != (fixed[1] is None):
        raise UsageError("give both --lambda-g and --lambda-beta, or neither")
    if fixed[0] is not None:
        fit = fit_fsim(ld.dataset, bases, fixed[0], fixed[1])
        selected = "fixed"
    else:
        grid = warm_start_grid(ld.dataset, bases, log_grid(lg), log_grid(lb))
        if grid.gcv_cell is None:
            raise FsimError("every grid cell failed")
        fit = grid.fits[grid.gcv_cell[0]][grid.gcv_cell[1]]
        selected = "gcv"
    out = io.fit_to_dict(fit)
    out["selection"] = selected
    io.write_json(cfg["out"], out)
    print(f"fit at lambda_g = {fit.lambda_g:g}, lambda_beta = {fit.lambda_beta:g} ({selected}); "
          f"objective {fit.objective:.6g}, sigma_hat {fit.sigma_hat:.4g}")
    return [cfg["out"]], inputs


def cmd_test(cfg):
    from .jensen import jensen_test_fsim
    from .simgen import log_grid

    if cfg["null_draws"] < 1000:
        raise UsageError("--null-draws must be >= 1000")
    if cfg["alternative"] not in ("two-sided", "greater", "less"):
        raise UsageError("--alternative must be two-sided, greater or less")
    ld, bases, lg, lb = _dataset_and_bases(cfg)
    inputs = {cfg["data"]: io.sha256_file(cfg["data"])}
    surf = jensen_test_fsim(ld.dataset, bases, log_grid(lg), log_grid(lb), cfg["alpha"],
                            cfg["null_draws"], cfg["seed"], alternative=cfg["alternative"])
    os.makedirs(cfg["out"], exist_ok=True)
    prefix = os.path.join(cfg["out"], "surface")
    io.write_surface(prefix, surf)
    print(f"T = {surf.T_obs:.4f}, crit = {surf.crit:.4f}, reject = {surf.reject}, "
          f"sign = {surf.sign_summary}")
    return [prefix + ".csv", prefix + ".json"], inputs


def cmd_curvature_demo(cfg):
    from .simgen import curvature_demo

    report = curvature_demo(cfg["seed"])
    io.write_json(cfg["out"], report)
    for name, f in report["fits"].items():
        print(f"{name:>6}: RSE {f['RSE']:.4f}  RASE0 {f['RASE0']:.4f}  RASE1 {f['RASE1']:.4f}  "
              f"RASE2 {f['RASE2']:.4f}  sup|g''| {f['sup_abs_g2']:.4f}")
    return [cfg["out"]], {}


COMMANDS = {
    "simulate": cmd_simulate, "power": cmd_power, "sigma-check": cmd_sigma_check,
    "ingest": cmd_ingest, "fit": cmd_fit, "test": cmd_test, "curvature-demo": cmd_curvature_demo,
}


def _manifest_path(cfg):
    out = cfg["out"]
    if os.path.isdir(out):
        return os.path.join(out, "manifest.json")
    return os.path.splitext(out)[0] + ".manifest.json"


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("jensen-fsim: error: a subcommand is required", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = datetime.now(timezone.utc).isoformat()
    try:
        cfg = resolve(args)
        files, inputs = COMMANDS[args.command](cfg)
    except (UsageError, SchemaError) as exc:
        print(f"jensen-fsim {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FsimError, OSError) as exc:
        print(f"jensen-fsim {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    manifest = {
        "subcommand": args.command, "config": cfg, "artifact_version": __version__,
        "inputs": inputs, "outputs": files, "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    io.write_json(_manifest_path(cfg), manifest)
    return EXIT_OK


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
