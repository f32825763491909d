"""Command-line entry point: ``effdid <command> [options]``.

Structured results go to ``--output`` (default stdout) as JSON lines with
sorted keys; a human-readable summary goes to stderr.  Wall-clock timings
are written only to the ``--timings`` sidecar, so repeated runs produce
byte-identical result files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .bounds import PAIR_NAMES, PAIRS, bound_ordering, delta_closed_form, efficiency_bound_mc
from .crossfit import crossfit
from .data import (ScoreVariant, Setting, check_pair, read_cross_section_csv, read_panel_csv,
                   read_period_csv, write_cross_section_csv, write_panel_csv)
from .dgp import DgpSpec, generate, oracle_for
from .errors import ConfigError, EffDidError, IncompatiblePair, UsageError, all_categories
from .harness import ExperimentSpec, paired_variance_gap, run_experiment, run_placebo, variance_sign_test
from .nuisance.learners import DEFAULT_EPS, LearnerPair
from .scores import estimate

THREADS_ENV = "EFFDID_THREADS"
DEFAULTS = {"folds": 2, "seed": 0, "eps": DEFAULT_EPS, "learner": "ensemble",
            "variant": "efficient", "n_mc": 1_000_000, "n": 2000}

RECORD_FIELDS = """\
record fields (one JSON object per line, keys sorted):
  estimate   theta, se, n, setting, variant, diag_* (mean_psi_b, min/max_propensity,
             folds, seed, eps, cell or group shares, source)
  simulate   kind=summary: estimator, n, R, theta_true, mean_estimate, bias,
             bias_mc_se, sd, mean_se, coverage, degenerate_coverage;
             kind=paired_gap: a, b, n, gap, mc_se, R;
             kind=sign_test: a, b, n, wins, R, p_value
  bounds     kind=bound: setting, variant, bound, mc_se, n_mc, seed;
             kind=delta: pair, closed_form, closed_form_se, from_bounds,
             from_bounds_se, bound_a, bound_b, n_mc, seed
  placebo    estimate fields plus kind=placebo, earlier, later, significant
  generate   kind=generate: path, n, setting, seed, theta_true
  errors     kind=error: error (category), message, exit_code, context fields
"""


def _exit_codes() -> str:
    lines = ["exit codes:", "  0   success"]
    for cls in all_categories():
        if cls.__name__ == "EffDidError":
            continue
        lines.append(f"  {cls.exit_code:<3d} {cls.category}")
    lines.append("  1   unexpected internal error")
    return "\n".join(lines)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    epilog = RECORD_FIELDS + "\n" + _exit_codes() + (
        f"\n\nconfiguration: --config FILE.json holds the same keys as the long flags"
        f" (dashes as underscores) plus 'dgp', 'learner' and 'experiment' objects;"
        f" flags override file values.  {THREADS_ENV} sets the default --threads.")
    parser = _Parser(prog="effdid", description="Efficient DiD estimation, simulation and bounds.",
                     epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"effdid {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def common(p):
        p.add_argument("--config", type=Path, help="JSON configuration file")
        p.add_argument("--output", type=Path, help="result file (default stdout)")
        p.add_argument("--timings", type=Path, help="write wall-clock timings here")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help=f"worker cap (default ${THREADS_ENV} or 1)")
        p.add_argument("--quiet", action="store_true", help="no summary on stderr")

    def model(p):
        p.add_argument("--setting", choices=[s.value for s in Setting])
        p.add_argument("--variant", choices=[v.value for v in ScoreVariant])
        p.add_argument("--learner", help="learner preset: parametric, lasso, forest, ensemble")
        p.add_argument("--folds", type=int, help="cross-fitting folds K (default 2)")
        p.add_argument("--eps", type=float, help="propensity clipping floor (default 0.01)")

    fmt = argparse.RawDescriptionHelpFormatter
    p = sub.add_parser("estimate", help="estimate the ATET on a CSV file", formatter_class=fmt,
                       description="CSV header: y,d,t,x1..xp (cross-section) or y0,y1,d,x1..xp (panel).")
    common(p)
    model(p)
    p.add_argument("--data", type=Path)
    p.add_argument("--fit-redundant", action="store_true",
                   help="also fit regressions that cancel out of the score")

    p = sub.add_parser("simulate", help="run a Monte Carlo experiment from a config file")
    common(p)
    p.add_argument("--replications", type=int)
    p.add_argument("--sample-sizes", type=int, nargs="+")

    p = sub.add_parser("bounds", help="efficiency bounds and closed-form differences")
    common(p)
    p.add_argument("--setting", choices=[s.value for s in Setting], help="bound of this setting")
    p.add_argument("--variant", choices=[v.value for v in ScoreVariant])
    p.add_argument("--pair", choices=PAIR_NAMES, help="closed-form difference")
    p.add_argument("--ordering", help="comma-separated chain, e.g. cs1,cs2,cs4,cs5")
    p.add_argument("--dgp-setting", choices=[s.value for s in Setting])
    p.add_argument("--rho", type=float, help="panel error correlation of the DGP")
    p.add_argument("--n-mc", type=int)

    p = sub.add_parser("placebo", help="placebo test on pre-period data", formatter_class=fmt,
                       description="CSV header: y,d,period,x1..xp with integer period labels.")
    common(p)
    model(p)
    p.add_argument("--data", type=Path)
    p.add_argument("--later", type=int, nargs="+", help="period labels treated as pseudo T=1")
    p.add_argument("--level", type=float)

    p = sub.add_parser("generate", help="draw a synthetic dataset to CSV")
    common(p)
    p.add_argument("--dgp-setting", choices=[s.value for s in Setting])
    p.add_argument("--n", type=int)
    p.add_argument("--rho", type=float)
    return parser


# -- configuration -----------------------------------------------------------------


def load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", path=str(path)) from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}", path=str(path)) from None
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    return raw


def _get(args, cfg, key, default=None):
    v = getattr(args, key, None)
    if v is not None and v is not False:
        return v
    if key in cfg:
        return cfg[key]
    return DEFAULTS.get(key, default)


def _threads(args, cfg) -> int:
    v = _get(args, cfg, "threads")
    if v is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                v = int(env)
            except ValueError:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    v = 1 if v is None else int(v)
    if v < 1:
        raise UsageError(f"--threads must be at least 1, got {v}")
    return v


def _pair(args, cfg):
    setting = _get(args, cfg, "setting")
    if setting is None:
        raise UsageError("--setting is required")
    try:
        return check_pair(setting, _get(args, cfg, "variant"))
    except IncompatiblePair as err:
        raise UsageError(str(err), **err.context) from None


def _learners(args, cfg):
    raw = args.learner if args.learner is not None else cfg.get("learner", DEFAULTS["learner"])
    return LearnerPair.from_config(raw)


def _dgp(args, cfg, fallback=None) -> DgpSpec:
    raw = dict(cfg.get("dgp", {}))
    setting = getattr(args, "dgp_setting", None) or raw.pop("setting", None) or fallback
    raw.pop("setting", None)
    if setting is None:
        raise UsageError("--dgp-setting is required")
    for key in ("n", "rho", "seed"):
        v = getattr(args, key, None)
        if v is not None:
            raw[key] = v
    try:
        return DgpSpec.from_dict({"setting": setting, **raw})
    except TypeError as err:
        raise ConfigError(f"bad dgp configuration: {err}") from None


# -- commands ------------------------------------------------------------------------


def _read_data(path, setting):
    if path is None:
        raise UsageError("--data is required")
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"data file not found: {path}", path=str(path))
    return read_panel_csv(path) if setting.is_panel else read_cross_section_csv(path)


def cmd_estimate(args, cfg, threads):
    setting, variant = _pair(args, cfg)
    data = _read_data(_get(args, cfg, "data"), setting)
    nu = crossfit(data, setting, variant, _learners(args, cfg), k=int(_get(args, cfg, "folds")),
                  seed=int(_get(args, cfg, "seed")), eps=float(_get(args, cfg, "eps")),
                  fit_redundant=bool(_get(args, cfg, "fit_redundant", False)))
    res = estimate(data, nu, setting, variant)
    lo, hi = res.conf_int()
    summary = (f"{setting.value}/{variant.value}: theta = {res.theta_hat:.6g} (se {res.std_error:.4g}),"
               f" 95% CI [{lo:.4g}, {hi:.4g}], n = {res.n}")
    return [res.to_record()], summary


def cmd_simulate(args, cfg, threads):
    raw = cfg.get("experiment", cfg)
    raw = {k: v for k, v in raw.items() if k in ("dgp", "estimators", "replications", "sample_sizes",
                                                    "level", "seed")}
    if args.replications is not None:
        raw["replications"] = args.replications
    if args.sample_sizes:
        raw["sample_sizes"] = args.sample_sizes
    if args.seed is not None:
        raw["seed"] = args.seed
    if "dgp" not in raw or "estimators" not in raw:
        raise UsageError("simulate needs --config with 'dgp' and 'estimators'")
    spec = ExperimentSpec.from_dict(raw)
    report = run_experiment(spec, workers=threads)
    records = report.records()
    for a, b in cfg.get("compare", []):
        for n in spec.sample_sizes:
            records.append(paired_variance_gap(report, a, b, n).to_record())
            records.append(variance_sign_test(report, a, b, n).to_record())
    return records, report.table(), report.timing_records()


def cmd_bounds(args, cfg, threads):
    n_mc = int(_get(args, cfg, "n_mc"))
    seed = int(_get(args, cfg, "seed"))
    modes = [m for m in ("setting", "pair", "ordering") if _get(args, cfg, m) is not None]
    if len(modes) != 1:
        raise UsageError("bounds needs exactly one of --setting, --pair, --ordering")
    mode = modes[0]
    if mode == "setting":
        setting, variant = _pair(args, cfg)
        oracle = oracle_for(_dgp(args, cfg, setting.value))
        rep = efficiency_bound_mc(setting, oracle, n_mc, seed, variant, workers=threads)
        return [rep.to_record()], f"bound {setting.value}/{variant.value}: {rep.bound_estimate:.6g} (mc se {rep.mc_std_error:.3g})"
    if mode == "pair":
        pair = _get(args, cfg, "pair")
        if pair not in PAIRS:
            raise UsageError(f"unknown pair {pair!r}")
        oracle = oracle_for(_dgp(args, cfg, PAIRS[pair].b[0].value))
        rep = delta_closed_form(pair, oracle, n_mc, seed, workers=threads)
        return [rep.to_record()], (f"{pair}: closed form {rep.delta_closed_form:.6g} vs bounds "
                                   f"{rep.delta_from_bounds:.6g} (combined se {rep.combined_se:.3g})")
    chain = [s.strip() for s in str(_get(args, cfg, "ordering")).split(",") if s.strip()]
    try:
        chain = [Setting.parse(s) for s in chain]
    except EffDidError as err:
        raise UsageError(str(err)) from None
    if not chain:
        raise UsageError("--ordering needs at least one setting")
    oracle = oracle_for(_dgp(args, cfg, chain[-1].value))
    rep = bound_ordering(oracle, chain, n_mc, seed, workers=threads)
    records = [{"kind": "bound", "setting": s, "variant": "efficient", "bound": b, "mc_se": e,
                "n_mc": n_mc, "seed": seed} for s, b, e in zip(rep.settings, rep.bounds, rep.ses)]
    records += [d.to_record() for d in rep.deltas + rep.gaps]
    lines = [f"bound {s}: {b:.6g} (mc se {e:.3g})" for s, b, e in zip(rep.settings, rep.bounds, rep.ses)]
    lines.append(f"strictly decreasing: {rep.strictly_decreasing()}; closed forms agree: {rep.all_agree()}")
    return records, "\n".join(lines)


def cmd_placebo(args, cfg, threads):
    setting, variant = _pair(args, cfg) if _get(args, cfg, "setting") else (Setting.CS1, ScoreVariant.EFFICIENT)
    path = _get(args, cfg, "data")
    if path is None:
        raise UsageError("--data is required")
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"data file not found: {path}", path=str(path))
    later = _get(args, cfg, "later")
    if not later:
        raise UsageError("--later is required (labels of the later pseudo-period)")
    y, d, period, x = read_period_csv(path)
    res = run_placebo(y, d, period, x, later, setting, variant, _learners(args, cfg),
                      k=int(_get(args, cfg, "folds")), seed=int(_get(args, cfg, "seed")),
                      eps=float(_get(args, cfg, "eps")), level=float(_get(args, cfg, "level", 0.95)))
    r = res.result
    verdict = "common trend rejected" if res.significant else "no evidence against a common trend"
    return [res.to_record()], (f"placebo theta = {r.theta_hat:.6g} (se {r.std_error:.4g},"
                               f" p = {r.p_value(0.0):.3g}): {verdict}")


def cmd_generate(args, cfg, threads):
    spec = _dgp(args, cfg)
    path = _get(args, cfg, "output")
    if path is None:
        raise UsageError("generate needs --output FILE.csv")
    data, oracle = generate(spec)
    writer = write_panel_csv if spec.setting.is_panel else write_cross_section_csv
    writer(data, Path(path))
    rec = {"kind": "generate", "path": str(path), "n": spec.n, "setting": spec.setting.value,
           "seed": spec.seed, "theta_true": oracle.theta}
    return [rec], f"wrote {spec.n} rows of a {spec.setting.value} DGP to {path}", None, True


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "bounds": cmd_bounds,
            "placebo": cmd_placebo, "generate": cmd_generate}


def format_records(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def _error_record(err: EffDidError) -> dict:
    rec = {"kind": "error"}
    rec.update(err.record())
    rec["exit_code"] = err.exit_code
    return rec


def main(argv=None) -> int:
    parser = build_parser()
    stdout, stderr = sys.stdout, sys.stderr
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(stderr)
            raise UsageError("a command is required")
        cfg = load_config(args.config)
        threads = _threads(args, cfg)
        start = time.perf_counter()
        out = COMMANDS[args.command](args, cfg, threads)
        elapsed = time.perf_counter() - start
        records, summary = out[0], out[1]
        timing = out[2] if len(out) > 2 else None
        stdout_only = len(out) > 3 and out[3]
        text = format_records(records)
        if args.output is not None and not stdout_only:
            Path(args.output).write_text(text)
        else:
            stdout.write(text)
        if args.timings is not None:
            side = {"command": args.command, "elapsed_seconds": elapsed}
            if timing:
                side["estimators"] = timing
            Path(args.timings).write_text(json.dumps(side, sort_keys=True) + "\n")
        if not args.quiet:
            print(summary, file=stderr)
        return 0
    except EffDidError as err:
        stdout.write(format_records([_error_record(err)]))
        print(f"error [{err.category}]: {err}", file=stderr)
        return err.exit_code
    except OSError as err:
        cfg_err = ConfigError(f"{type(err).__name__}: {err}")
        stdout.write(format_records([_error_record(cfg_err)]))
        print(f"error [{cfg_err.category}]: {cfg_err}", file=stderr)
        return cfg_err.exit_code
