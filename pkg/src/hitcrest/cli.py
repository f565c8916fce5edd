"""Command-line front end: simulate, fit, study, density, report.

Exit codes: 0 success, 1 validation or parse error, 2 fit did not converge,
3 study failure.
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import warnings
from dataclasses import replace

import numpy as np

from .config import ConfigError, RunConfig, load_config, parse_grid
from .inference import NotConvergedError, fit, identifiability_report, outcome_summary, wald_interval
from .model import SeriesControl, TruncationError, outcome_density
from .simulation import HorizonError, simulate_arrays
from .study import (
    StudyConfig,
    StudyFailure,
    _table_text,
    curve_export,
    joint_export,
    model_curves,
    run_study,
    write_atomic,
    write_study,
)

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_STUDY = 0, 1, 2, 3
DENSITY_KINDS = ("outcome", "hazard", "survival", "marginal", "joint", "diagonal")


class DataError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the validation code rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def read_observations(path, variant):
    """Read ``y,delta`` CSV; ``#`` lines are skipped, errors name the line."""
    ys, deltas = [], []
    allowed = variant.deltas
    with open(path, newline="") as fh:
        header_seen = False
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            cells = [c.strip() for c in row]
            if not header_seen:
                if cells != ["y", "delta"]:
                    raise DataError(f"{path}:{lineno}: expected header 'y,delta', got {','.join(cells)!r}")
                header_seen = True
                continue
            if len(cells) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 fields, got {len(cells)}")
            try:
                y = float(cells[0])
            except ValueError:
                raise DataError(f"{path}:{lineno}: y is not a number: {cells[0]!r}") from None
            if not (math.isfinite(y) and y >= 0):
                raise DataError(f"{path}:{lineno}: y must be finite and >= 0, got {cells[0]!r}")
            try:
                delta = int(cells[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: delta is not an integer: {cells[1]!r}") from None
            if delta not in allowed:
                raise DataError(f"{path}:{lineno}: delta={delta} is not valid under "
                                f"Model {variant.value} (allowed {allowed})")
            ys.append(y)
            deltas.append(delta)
    if not header_seen:
        raise DataError(f"{path}: missing header 'y,delta'")
    if not ys:
        raise DataError(f"{path}: no observations")
    return np.array(ys), np.array(deltas, dtype=np.int64)


def write_observations(path, y, delta):
    write_atomic(path, _table_text(["y", "delta"], ((float(a), int(b)) for a, b in zip(y, delta))))


def _resolved_path(out: str) -> str:
    if os.path.isdir(out):
        return os.path.join(out, "resolved.cfg")
    return out + ".resolved.cfg"


def _write_resolved(cfg: RunConfig, out: str):
    write_atomic(_resolved_path(out), cfg.to_text())


def _threads(args) -> int:
    value = args.threads if args.threads is not None else os.environ.get("HITCREST_THREADS", 1)
    try:
        value = int(value)
    except ValueError:
        raise ConfigError(f"thread count must be an integer, got {value!r}") from None
    if value < 1:
        raise ConfigError(f"thread count must be >= 1, got {value}")
    return value


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "epsilon", None) is not None:
        try:
            cfg.control = replace(cfg.control, epsilon=args.epsilon)
            SeriesControl(args.epsilon, cfg.control.hard_cap)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if getattr(args, "seed", None) is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {args.seed}")
        cfg.fit_seed = cfg.simulate_seed = cfg.study_seed = args.seed
    if getattr(args, "n", None) is not None:
        if args.n < 1:
            raise ConfigError(f"--n must be a positive integer, got {args.n}")
        cfg.simulate_n = args.n
    return cfg


# ------------------------------------------------------------- commands

def cmd_simulate(cfg: RunConfig, out: str) -> int:
    if cfg.simulate_n is None:
        raise ConfigError("sample size missing: pass --n or set simulate.n")
    y, delta = simulate_arrays(cfg.spec, cfg.simulate_n, cfg.simulate_seed)
    write_observations(out, y, delta)
    _write_resolved(cfg, out)
    return EXIT_OK


def fit_report(cfg: RunConfig, result) -> str:
    report = identifiability_report(cfg.spec.family_x, cfg.spec.family_z, cfg.spec.variant,
                                    cfg.spec.x, cfg.spec.z)
    lines = [f"converged = {str(result.converged).lower()}",
             f"message = {result.message}",
             f"n_obs = {result.n_obs}",
             f"loglik = {result.loglik!r}",
             f"loglik_total = {result.loglik * result.n_obs!r}",
             f"at_boundary = {str(result.at_boundary).lower()}",
             f"n_penalized = {result.n_penalized}",
             f"gradient_norm = {result.gradient_norm!r}",
             f"condition_number = {result.condition_number!r}"]
    for i, name in enumerate(result.param_names):
        lines.append(f"theta.{name} = {float(result.theta_hat[i])!r}")
        if result.std_errors is not None:
            lines.append(f"se.{name} = {float(result.std_errors[i])!r}")
            try:
                lo, hi = wald_interval(result, i, 0.95)
                lines.append(f"wald95.{name} = {lo!r}, {hi!r}")
            except NotConvergedError:
                pass
    for key, value in report.as_dict().items():
        text = str(value).lower() if isinstance(value, bool) else value
        lines.append(f"identifiability.{key} = {text}")
    for key, value in outcome_summary(result.spec).items():
        lines.append(f"predicted.{key} = {value!r}")
    return "\n".join(lines) + "\n"


def cmd_fit(cfg: RunConfig, data: str, out: str) -> int:
    y, delta = read_observations(data, cfg.spec.variant)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = fit(cfg.spec, (y, delta), seed=cfg.fit_seed, control=cfg.control, **cfg.fit_options)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    write_atomic(out, fit_report(cfg, result))
    if result.covariance is not None:
        names = result.param_names
        rows = ([name] + [float(v) for v in row] for name, row in zip(names, result.covariance))
        write_atomic(out + ".cov.csv", _table_text(["parameter"] + names, rows))
    _write_resolved(cfg, out)
    if not result.converged:
        print(f"fit did not converge: {result.message}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_study(cfg: RunConfig, out: str, threads: int) -> int:
    study_cfg = StudyConfig(cfg.spec, cfg.sample_sizes, cfg.n_replicates, cfg.t_grid,
                            cfg.study_seed, fit_options=cfg.fit_options, control=cfg.control)
    os.makedirs(out, exist_ok=True)
    _write_resolved(cfg, out)
    try:
        result = run_study(study_cfg, threads=threads)
    except StudyFailure as exc:
        if exc.result is not None:
            write_study(exc.result, out)
        print(f"study failed: {exc}", file=sys.stderr)
        return EXIT_STUDY
    write_study(result, out)
    return EXIT_OK


def cmd_density(cfg: RunConfig, what: str, grid, out: str) -> int:
    if what not in DENSITY_KINDS:
        raise ConfigError(f"unknown density {what!r}; choose from {', '.join(DENSITY_KINDS)}")
    spec, control = cfg.spec, cfg.control
    if grid.size and (np.any(grid < 0) or np.any(np.diff(grid) <= 0)):
        raise ConfigError("grid must be nonnegative and strictly increasing")
    if what == "joint":
        joint_export(spec, grid, out, control)
    else:
        empty = grid.size == 0
        if what == "outcome":
            curves = {f"delta_{d}": (np.empty(0) if empty else outcome_density(spec, grid, d, control))
                      for d in spec.variant.deltas}
        else:
            column = {"hazard": "hazard_Y", "survival": "survival_Y", "diagonal": "diagonal"}
            if what == "marginal":
                names = {"cdf_T": "cdf_T", "cdf_C": "cdf_C"}
            else:
                names = {what: column[what]}
            computed = model_curves(spec, grid, control) if not empty else None
            curves = {label: (np.empty(0) if empty else computed[key]) for label, key in names.items()}
        curve_export(curves, grid, out)
    _write_resolved(cfg, out)
    return EXIT_OK


def model_report(cfg: RunConfig) -> str:
    spec = cfg.spec
    report = identifiability_report(spec.family_x, spec.family_z, spec.variant, spec.x, spec.z)
    lines = [f"model = {spec.variant.value}", f"lambda = {spec.lam!r}",
             f"jump_x = {spec.family_x}", f"x = {spec.x!r}",
             f"jump_z = {spec.family_z}", f"z = {spec.z!r}"]
    for key, value in report.as_dict().items():
        text = str(value).lower() if isinstance(value, bool) else value
        lines.append(f"identifiability.{key} = {text}")
    for key, value in outcome_summary(spec).items():
        lines.append(f"predicted.{key} = {value!r}")
    return "\n".join(lines) + "\n"


def cmd_report(cfg: RunConfig, out) -> int:
    text = model_report(cfg)
    if out is None:
        sys.stdout.write(text)
        return EXIT_OK
    write_atomic(out, text)
    _write_resolved(cfg, out)
    return EXIT_OK


# ----------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hitcrest", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--config", required=True, help="key = value configuration file")
        p.add_argument("--out", required=out_required, help="output path")
        p.add_argument("--epsilon", type=float, help="relative tolerance of series tails")
        return p

    p = common(sub.add_parser("simulate", help="draw a censored dataset"))
    p.add_argument("--n", type=int, help="number of observations")
    p.add_argument("--seed", type=int)
    p = common(sub.add_parser("fit", help="maximum-likelihood fit of a dataset"))
    p.add_argument("--data", required=True, help="CSV with header y,delta")
    p.add_argument("--seed", type=int, help="seed of the multistart draws")
    p = common(sub.add_parser("study", help="Monte-Carlo simulate/refit study"))
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker processes (default $HITCREST_THREADS or 1)")
    p = common(sub.add_parser("density", help="evaluate a model function on a grid"))
    p.add_argument("--what", required=True, choices=DENSITY_KINDS)
    p.add_argument("--grid", required=True, help="start:stop:num or comma list")
    common(sub.add_parser("report", help="identifiability and outcome probabilities"),
           out_required=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out)
        if args.command == "fit":
            return cmd_fit(cfg, args.data, args.out)
        if args.command == "study":
            return cmd_study(cfg, args.out, _threads(args))
        if args.command == "density":
            try:
                grid = parse_grid(args.grid)
            except ValueError as exc:
                raise ConfigError(f"--grid: {exc}") from None
            if grid is None:
                raise ConfigError("--grid needs explicit points")
            return cmd_density(cfg, args.what, grid, args.out)
        return cmd_report(cfg, args.out)
    except (ConfigError, DataError, ValueError, OSError, HorizonError, TruncationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
