"""Monte-Carlo replication of simulate -> fit cycles and curve exports."""
from __future__ import annotations

import csv
import io
import os
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .inference import fit
from .model import (
    DEFAULT_CONTROL,
    ModelSpec,
    SeriesControl,
    density_y,
    diagonal_density,
    hazard,
    joint_density_ac,
    marginal_cdf,
    quantile_y,
    survival_y,
)
from .simulation import simulate_arrays

MAX_FAILURE_RATE = 0.2


class StudyFailure(RuntimeError):
    """Too many replicates failed to converge at some sample size."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass
class StudyConfig:
    spec: ModelSpec
    sample_sizes: tuple = (50, 100, 200)
    n_replicates: int = 100
    t_grid: Optional[np.ndarray] = None
    seed: int = 0
    fit_options: dict = field(default_factory=dict)
    control: SeriesControl = DEFAULT_CONTROL

    def __post_init__(self):
        self.sample_sizes = tuple(int(n) for n in self.sample_sizes)
        if not self.sample_sizes or any(n < 1 for n in self.sample_sizes):
            raise ValueError("sample_sizes must be a nonempty list of positive integers")
        if int(self.n_replicates) != self.n_replicates or self.n_replicates < 2:
            raise ValueError(f"n_replicates must be an integer >= 2, got {self.n_replicates!r}")
        self.n_replicates = int(self.n_replicates)
        if self.t_grid is None:
            self.t_grid = default_grid(self.spec, self.control)
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        if self.t_grid.ndim != 1 or self.t_grid.size == 0:
            raise ValueError("t_grid must be a nonempty 1-D array")
        if np.any(np.diff(self.t_grid) <= 0) or np.any(self.t_grid < 0):
            raise ValueError("t_grid must be nonnegative and strictly increasing")


def default_grid(spec: ModelSpec, control: SeriesControl = DEFAULT_CONTROL, size: int = 201):
    """Equispaced grid from 0 to the 99.5% quantile of Y."""
    return np.linspace(0.0, quantile_y(spec, 0.995, control), size)


def replicate_seed(seed: int, size_index: int, replicate: int) -> int:
    seq = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(size_index, replicate))
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass
class StudyResult:
    """Per-replicate estimates and pointwise error curves of the marginal CDFs.

    ``nx`` is the mean squared deviation and ``bias`` the mean absolute
    deviation of the fitted CDF from the true one, over converged replicates.
    """

    sample_sizes: tuple
    param_names: list
    theta_true: np.ndarray
    t_grid: np.ndarray
    estimates: dict
    converged: dict
    curves: dict
    true_cdf: dict

    def n_excluded(self, n: int) -> int:
        return int((~self.converged[n]).sum())

    def grid_mean(self, name: str, n: int) -> float:
        return float(np.mean(self.curves[n][name]))

    def estimator_rows(self) -> list:
        """One row per (sample size, replicate): estimate / true value and convergence."""
        rows = []
        for n in self.sample_sizes:
            for k, (theta, ok) in enumerate(zip(self.estimates[n], self.converged[n])):
                row = {"n": n, "replicate": k, "converged": int(ok)}
                for name, value, true in zip(self.param_names, theta, self.theta_true):
                    row[name] = float(value)
                    row[f"{name}_ratio"] = float(value / true)
                rows.append(row)
        return rows


def curve_stats(fitted: np.ndarray, truth: np.ndarray):
    """``(nx, bias)`` over the rows of ``fitted``."""
    dev = np.asarray(fitted, dtype=float) - np.asarray(truth, dtype=float)[None, :]
    return np.mean(dev**2, axis=0), np.mean(np.abs(dev), axis=0)


def _default_fitter(template, data, seed, fit_options, control):
    result = fit(template, data, seed=seed, control=control, covariance=False, **fit_options)
    return result.theta_hat, result.converged


def _run_replicate(args):
    spec, n, size_index, k, seed, t_grid, fit_options, control, fitter = args
    rep_seed = replicate_seed(seed, size_index, k)
    data = simulate_arrays(spec, n, rep_seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        theta, ok = (fitter or _default_fitter)(spec, data, rep_seed, fit_options, control)
        fitted = spec.with_theta(theta)
        cdf_t = marginal_cdf(fitted, "T", t_grid, control)
        cdf_c = marginal_cdf(fitted, "C", t_grid, control)
    return np.asarray(theta, dtype=float), bool(ok), cdf_t, cdf_c


def run_study(config: StudyConfig, threads: int = 1,
              fitter: Optional[Callable] = None) -> StudyResult:
    """Simulate and refit ``n_replicates`` datasets at every sample size.

    ``fitter(template, data, seed, fit_options, control) -> (theta, converged)``
    replaces maximum likelihood when given (it must be picklable when
    ``threads > 1``). Replicates are independent and merged by index, so the
    result does not depend on ``threads``.
    """
    spec, grid = config.spec, config.t_grid
    tasks = [(spec, n, i, k, config.seed, grid, dict(config.fit_options), config.control, fitter)
             for i, n in enumerate(config.sample_sizes) for k in range(config.n_replicates)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(_run_replicate, tasks, chunksize=1))
    else:
        outputs = [_run_replicate(task) for task in tasks]

    true_t = marginal_cdf(spec, "T", grid, config.control)
    true_c = marginal_cdf(spec, "C", grid, config.control)
    estimates, converged, curves = {}, {}, {}
    for i, n in enumerate(config.sample_sizes):
        block = outputs[i * config.n_replicates:(i + 1) * config.n_replicates]
        estimates[n] = np.array([o[0] for o in block])
        converged[n] = np.array([o[1] for o in block])
        ok = converged[n]
        cdf_t = np.array([o[2] for o in block])[ok]
        cdf_c = np.array([o[3] for o in block])[ok]
        nx_t, bias_t = curve_stats(cdf_t, true_t) if ok.any() else (np.full(grid.size, np.nan),) * 2
        nx_c, bias_c = curve_stats(cdf_c, true_c) if ok.any() else (np.full(grid.size, np.nan),) * 2
        curves[n] = {"nx_T": nx_t, "bias_T": bias_t, "nx_C": nx_c, "bias_C": bias_c}
    result = StudyResult(config.sample_sizes, list(spec.param_names), spec.theta, grid,
                         estimates, converged, curves, {"T": true_t, "C": true_c})
    for n in config.sample_sizes:
        rate = result.n_excluded(n) / config.n_replicates
        if rate > MAX_FAILURE_RATE:
            raise StudyFailure(f"{result.n_excluded(n)} of {config.n_replicates} replicates "
                               f"did not converge at n={n}", result)
    return result


class EmpiricalCDF:
    """Right-continuous step function ``F(t) = #{v_i <= t} / n``."""

    def __init__(self, values):
        values = np.asarray(values, dtype=float).ravel()
        if values.size == 0:
            raise ValueError("empirical CDF of an empty sample")
        self.values = np.sort(values)

    def __call__(self, t):
        out = np.searchsorted(self.values, np.asarray(t, dtype=float), side="right") / self.values.size
        return float(out) if np.ndim(t) == 0 else out


def empirical_cdf(values) -> EmpiricalCDF:
    return EmpiricalCDF(values)


# -------------------------------------------------------------- exports

def _fmt(value) -> str:
    return repr(float(value))


def write_atomic(destination, text: str):
    """Write ``text`` to ``destination`` through a temp file and rename."""
    destination = os.fspath(destination)
    folder = os.path.dirname(os.path.abspath(destination))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(destination))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, destination)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _table_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def model_curves(spec: ModelSpec, t_grid, control: SeriesControl = DEFAULT_CONTROL) -> dict:
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0:
        return {name: np.empty(0) for name in
                ("cdf_T", "cdf_C", "survival_Y", "density_Y", "hazard_Y", "diagonal")}
    return {
        "cdf_T": marginal_cdf(spec, "T", t_grid, control),
        "cdf_C": marginal_cdf(spec, "C", t_grid, control),
        "survival_Y": survival_y(spec, t_grid, control),
        "density_Y": density_y(spec, t_grid, control),
        "hazard_Y": hazard(spec, t_grid, control),
        "diagonal": diagonal_density(spec, t_grid, control),
    }


def curve_export(source, t_grid, destination, data=None,
                 control: SeriesControl = DEFAULT_CONTROL) -> dict:
    """Write named curves on ``t_grid`` as CSV columns ``t, <name>...``.

    ``source`` is a :class:`ModelSpec` (model CDFs, survival, density,
    hazard, diagonal density; plus empirical CDFs of ``data = {"T": ..., "C":
    ...}`` when given), a :class:`StudyResult` (nx/bias curves per sample
    size) or a mapping ``name -> values``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if isinstance(source, ModelSpec):
        curves = model_curves(source, t_grid, control)
        for name, values in (data or {}).items():
            curves[f"empirical_{name}"] = empirical_cdf(values)(t_grid)
    elif isinstance(source, StudyResult):
        curves = {f"{name}_n{n}": np.interp(t_grid, source.t_grid, values)
                  for n in source.sample_sizes for name, values in source.curves[n].items()}
    else:
        curves = {name: np.asarray(v(t_grid) if callable(v) else v, dtype=float)
                  for name, v in dict(source).items()}
    names = list(curves)
    rows = ([t] + [curves[name][i] for name in names] for i, t in enumerate(t_grid))
    write_atomic(destination, _table_text(["t"] + names, rows))
    return curves


def joint_export(spec: ModelSpec, grid, destination,
                 control: SeriesControl = DEFAULT_CONTROL) -> int:
    """Absolutely continuous joint density of (T, C) on ``grid x grid``.

    Diagonal points are left out; the file notes how many were skipped.
    Returns the number of rows written.
    """
    grid = np.asarray(grid, dtype=float)
    rows = []
    skipped = 0
    for u in grid:
        for v in grid:
            if u == v:
                skipped += 1
                continue
            rows.append((float(u), float(v), joint_density_ac(spec, u, v, control)))
    text = _table_text(["u", "v", "density"], rows)
    if skipped:
        text = f"# {skipped} diagonal point(s) u == v omitted: singular part, see diagonal_density\n" + text
    write_atomic(destination, text)
    return len(rows)


def write_study(result: StudyResult, out_dir) -> list:
    """Estimator table and nx/bias curves; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    rows = result.estimator_rows()
    header = list(rows[0]) if rows else ["n", "replicate", "converged"]
    table = os.path.join(out_dir, "estimates.csv")
    write_atomic(table, _table_text(header, ([row[h] for h in header] for row in rows)))
    curves = os.path.join(out_dir, "curves.csv")
    curve_export(result, result.t_grid, curves)
    truth = os.path.join(out_dir, "true_cdf.csv")
    curve_export({"cdf_T": result.true_cdf["T"], "cdf_C": result.true_cdf["C"]},
                 result.t_grid, truth)
    summary_rows = [(n, result.n_excluded(n), result.grid_mean("nx_T", n),
                     result.grid_mean("bias_T", n), result.grid_mean("nx_C", n),
                     result.grid_mean("bias_C", n)) for n in result.sample_sizes]
    summary = os.path.join(out_dir, "summary.csv")
    write_atomic(summary, _table_text(
        ["n", "excluded", "mean_nx_T", "mean_bias_T", "mean_nx_C", "mean_bias_C"], summary_rows))
    return [table, curves, truth, summary]
