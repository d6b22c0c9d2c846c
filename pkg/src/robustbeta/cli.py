"""Command-line interface: CSV ingestion and the fit/tune/diagnose/simulate
subcommands with machine-readable JSON/CSV outputs.

Exit codes: 0 on success, 2 for input/validation errors, 3 for numerical
errors (non-convergence, infeasibility, singular matrices).
"""

from __future__ import annotations

import csv
import json
import os
import secrets
import sys

import click
import numpy as np

from .diagnostics import diagnostics_report, report_to_csv
from .estimation import fit as fit_model
from .exceptions import (
    ConvergenceError,
    InfeasibleTransformError,
    NonIntegrableError,
    RobustBetaError,
    SingularMatrixError,
    SpecificationError,
)
from .inference import bootstrap_pvalue, wald_test
from .model import ModelSpec
from .simulation import ScenarioConfig, run_study
from .tuning import TuningConfig, select_q

__all__ = ["main", "load_csv"]

_EXIT_INPUT = 2
_EXIT_NUMERIC = 3


def load_csv(path, response, mean_cols=(), precision_cols=(), clamp_eps=None,
             mean_link="logit", precision_link="log"):
    """Load a header CSV into a ModelSpec.

    Intercept columns are prepended to both design matrices.  Responses
    exactly equal to 0 or 1 are clamped to [eps, 1-eps] when clamp_eps is
    given and rejected otherwise.  Missing columns and non-numeric cells
    are reported with their location.
    """
    if not os.path.exists(path):
        raise SpecificationError(f"data file not found: {path}")
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise SpecificationError(f"{path}: empty file or missing header row")
        header = [name.strip() for name in reader.fieldnames]
        needed = [response, *mean_cols, *precision_cols]
        missing = [name for name in needed if name not in header]
        if missing:
            raise SpecificationError(
                f"{path}: missing columns {missing}; available: {header}"
            )
        rows = []
        for line_number, row in enumerate(reader, start=2):
            parsed = {}
            for name in needed:
                cell = (row.get(name) or "").strip()
                try:
                    parsed[name] = float(cell)
                except ValueError:
                    raise SpecificationError(
                        f"{path}: non-numeric value {cell!r} in column "
                        f"{name!r} at line {line_number}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise SpecificationError(f"{path}: no data rows")
    y = np.array([r[response] for r in rows])
    if clamp_eps is not None:
        if not 0.0 < clamp_eps < 0.5:
            raise SpecificationError("clamp_eps must lie in (0, 0.5)")
        y = np.where(y == 0.0, clamp_eps, y)
        y = np.where(y == 1.0, 1.0 - clamp_eps, y)
    boundary = (y <= 0.0) | (y >= 1.0)
    if np.any(boundary):
        raise SpecificationError(
            f"response takes boundary/outside values at data rows "
            f"{(np.flatnonzero(boundary) + 1).tolist()}; pass clamp_eps to "
            "clamp exact 0/1 values"
        )
    n = y.size
    X = np.column_stack([np.ones(n)] + [np.array([r[c] for r in rows]) for c in mean_cols])
    Z = np.column_stack(
        [np.ones(n)] + [np.array([r[c] for r in rows]) for c in precision_cols]
    )
    return ModelSpec(
        y=y,
        X=X,
        Z=Z,
        mean_link=mean_link,
        precision_link=precision_link,
        x_names=["intercept"] + list(mean_cols),
        z_names=["intercept"] + list(precision_cols),
    )


def _split_cols(value):
    return [c.strip() for c in value.split(",") if c.strip()] if value else []


def _resolve_seed(seed):
    if seed is None:
        seed = secrets.randbits(31)
        click.echo(f"seed not given; generated seed={seed}", err=True)
    return int(seed)


def _fail(message, code):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    """Map package exceptions to exit codes without stack traces."""
    try:
        fn()
    except (SpecificationError,) as err:
        _fail(str(err), _EXIT_INPUT)
    except (ConvergenceError, SingularMatrixError, InfeasibleTransformError,
            NonIntegrableError) as err:
        _fail(str(err), _EXIT_NUMERIC)
    except RobustBetaError as err:  # residual package errors: treat as numeric
        _fail(str(err), _EXIT_NUMERIC)


_DATA_OPTIONS = [
    click.option("--data", "data_path", required=True, type=click.Path(), help="CSV file."),
    click.option("--response", required=True, help="Response column (values in (0,1))."),
    click.option("--mean-cols", default="", help="Comma-separated mean covariates."),
    click.option("--precision-cols", default="", help="Comma-separated precision covariates."),
    click.option("--mean-link", default="logit", type=click.Choice(["logit", "probit", "cloglog"])),
    click.option("--precision-link", default="log", type=click.Choice(["log"])),
    click.option("--clamp-eps", default=None, type=float,
                 help="Clamp responses equal to 0/1 into (eps, 1-eps)."),
]


def _add_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn
    return wrap


def _tuning_options(fn):
    fn = click.option("--grid-spacing", default=0.02, show_default=True)(fn)
    fn = click.option("--grid-size", default=3, show_default=True)(fn)
    fn = click.option("--q-min", default=0.5, show_default=True)(fn)
    fn = click.option("--threshold", default=0.02, show_default=True)(fn)
    return fn


def _load_spec(data_path, response, mean_cols, precision_cols, mean_link,
               precision_link, clamp_eps):
    return load_csv(
        data_path,
        response,
        _split_cols(mean_cols),
        _split_cols(precision_cols),
        clamp_eps=clamp_eps,
        mean_link=mean_link,
        precision_link=precision_link,
    )


@click.group()
def main():
    """Robust beta regression: fitting, tuning, diagnostics, simulation."""


@main.command("fit")
@_add_options(_DATA_OPTIONS)
@click.option("--estimator", default="mle", type=click.Choice(["mle", "smle", "mdpde"]))
@click.option("--q", "q_value", default="1", help='Tuning constant in (0,1] or "auto".')
@_tuning_options
@click.option("--bootstrap-reps", default=0, show_default=True,
              help="Parametric bootstrap replicates for non-intercept p-values.")
@click.option("--seed", default=None, type=int, help="RNG seed (bootstrap only).")
@click.option("--threads", default=None, type=int, help="Worker processes.")
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_fit(data_path, response, mean_cols, precision_cols, mean_link,
            precision_link, clamp_eps, estimator, q_value, grid_spacing,
            grid_size, q_min, threshold, bootstrap_reps, seed, threads, out_path):
    """Fit the model and write a JSON FitResult."""

    def run():
        spec = _load_spec(data_path, response, mean_cols, precision_cols,
                          mean_link, precision_link, clamp_eps)
        tuning_trace = None
        if q_value == "auto":
            if estimator == "mle":
                raise SpecificationError('--q auto requires --estimator smle or mdpde')
            config = TuningConfig(grid_spacing=grid_spacing, grid_size=grid_size,
                                  q_min=q_min, threshold=threshold)
            q_star, trace = select_q(spec, method=estimator, config=config)
            tuning_trace = trace.to_dict()
            q = q_star
        else:
            try:
                q = float(q_value)
            except ValueError:
                raise SpecificationError(
                    f'--q must be a number in (0, 1] or "auto", got {q_value!r}'
                ) from None
        result = fit_model(spec, method=estimator, q=q)
        used_seed = _resolve_seed(seed) if bootstrap_reps > 0 else seed
        n_jobs = threads if threads is not None else (os.cpu_count() or 1)
        coefficients = []
        intercepts = {0, spec.p1}
        for index, name in enumerate(result.coef_names):
            test = wald_test(result, index, 0.0)
            entry = {
                "name": name,
                "estimate": float(result.theta_hat.as_vector()[index]),
                "std_error": float(result.std_errors[index]),
                "z": test.z,
                "p_asymptotic": test.p_asymptotic,
            }
            if bootstrap_reps > 0 and index not in intercepts:
                entry["p_bootstrap"] = bootstrap_pvalue(
                    spec, estimator, q, index, 0.0, replicates=bootstrap_reps,
                    seed=used_seed, n_jobs=n_jobs, fit_result=result,
                )
            coefficients.append(entry)
        payload = {
            "estimator": result.estimator,
            "q": result.q_used,
            "coefficients": coefficients,
            "covariance": result.covariance.tolist(),
            "weights": result.weights.tolist(),
            "converged": result.converged,
            "iterations": result.iterations,
            "objective_value": result.objective_value,
            "n_obs": result.n_obs,
            "seed": used_seed,
            "fit": result.to_dict(),
        }
        if tuning_trace is not None:
            payload["tuning_trace"] = tuning_trace
        with open(out_path, "w") as handle:
            json.dump(payload, handle, indent=2)
        click.echo(f"wrote {out_path} (estimator={result.estimator}, q={result.q_used})")

    _guarded(run)


@main.command("tune")
@_add_options(_DATA_OPTIONS)
@click.option("--estimator", default="smle", type=click.Choice(["smle", "mdpde"]))
@_tuning_options
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_tune(data_path, response, mean_cols, precision_cols, mean_link,
             precision_link, clamp_eps, estimator, grid_spacing, grid_size,
             q_min, threshold, out_path):
    """Run the tuning-constant selector and write the trace as JSON."""

    def run():
        spec = _load_spec(data_path, response, mean_cols, precision_cols,
                          mean_link, precision_link, clamp_eps)
        config = TuningConfig(grid_spacing=grid_spacing, grid_size=grid_size,
                              q_min=q_min, threshold=threshold)
        q_star, trace = select_q(spec, method=estimator, config=config)
        with open(out_path, "w") as handle:
            json.dump({"estimator": estimator, "q_star": q_star,
                       "trace": trace.to_dict()}, handle, indent=2)
        click.echo(f"wrote {out_path} (q_star={q_star})")

    _guarded(run)


@main.command("diagnose")
@_add_options(_DATA_OPTIONS)
@click.option("--estimator", default="mle", type=click.Choice(["mle", "smle", "mdpde"]))
@click.option("--q", "q_value", default="1", help='Tuning constant in (0,1] or "auto".')
@_tuning_options
@click.option("--envelope-sims", default=100, show_default=True)
@click.option("--band", default=0.95, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--threads", default=None, type=int)
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Envelope CSV (theoretical_quantile,residual,lower,median,upper,flagged).")
@click.option("--obs-out", "obs_path", default=None, type=click.Path(),
              help="Per-observation CSV (residual, leverage, weight); default <out>.obs.csv")
def cmd_diagnose(data_path, response, mean_cols, precision_cols, mean_link,
                 precision_link, clamp_eps, estimator, q_value, grid_spacing,
                 grid_size, q_min, threshold, envelope_sims, band, seed,
                 threads, out_path, obs_path):
    """Fit, compute residual diagnostics and write plot-ready CSV files."""

    def run():
        spec = _load_spec(data_path, response, mean_cols, precision_cols,
                          mean_link, precision_link, clamp_eps)
        if q_value == "auto":
            if estimator == "mle":
                raise SpecificationError('--q auto requires --estimator smle or mdpde')
            config = TuningConfig(grid_spacing=grid_spacing, grid_size=grid_size,
                                  q_min=q_min, threshold=threshold)
            q, _ = select_q(spec, method=estimator, config=config)
        else:
            q = float(q_value)
        result = fit_model(spec, method=estimator, q=q)
        used_seed = _resolve_seed(seed)
        n_jobs = threads if threads is not None else (os.cpu_count() or 1)
        report = diagnostics_report(spec, result, n_sims=envelope_sims,
                                    band=band, seed=used_seed, n_jobs=n_jobs)
        report_to_csv(report, out_path)
        per_obs = obs_path or f"{out_path}.obs.csv"
        with open(per_obs, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["observation", "residual", "leverage", "weight", "seed"])
            for i in range(spec.n):
                writer.writerow([
                    i,
                    repr(float(report.residuals[i])),
                    repr(float(report.leverage[i])),
                    repr(float(report.weights[i])),
                    used_seed,
                ])
        click.echo(
            f"wrote {out_path} and {per_obs} "
            f"(flagged observations: {report.flagged.tolist()}, seed={used_seed})"
        )

    _guarded(run)


@main.command("simulate")
@click.option("--scenario", default=1, type=click.Choice(["1", "2"]), help="Built-in scenario.")
@click.option("--n", "n_obs", default=40, show_default=True)
@click.option("--reps", default=200, show_default=True)
@click.option("--contaminate", default=0.05, show_default=True)
@click.option("--estimators", default="mle,smle,mdpde", show_default=True)
@_tuning_options
@click.option("--seed", default=None, type=int)
@click.option("--threads", default=None, type=int)
@click.option("--out-prefix", default="mcstudy", show_default=True)
def cmd_simulate(scenario, n_obs, reps, contaminate, estimators, grid_spacing,
                 grid_size, q_min, threshold, seed, threads, out_prefix):
    """Run a Monte Carlo robustness study; write per-replication CSV and
    aggregate JSON."""

    def run():
        used_seed = _resolve_seed(seed)
        config = ScenarioConfig(scenario=int(scenario), n=n_obs, replications=reps,
                                contamination=contaminate, seed=used_seed)
        tuning = TuningConfig(grid_spacing=grid_spacing, grid_size=grid_size,
                              q_min=q_min, threshold=threshold)
        estimator_list = tuple(_split_cols(estimators))
        n_jobs = threads if threads is not None else (os.cpu_count() or 1)
        result = run_study(config, estimators=estimator_list, tuning=tuning,
                           n_jobs=n_jobs)
        rows = result.replication_rows()
        csv_path = f"{out_prefix}_replications.csv"
        json_path = f"{out_prefix}_aggregates.json"
        with open(csv_path, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            for row in rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v)
                                 for k, v in row.items()})
        with open(json_path, "w") as handle:
            json.dump(result.aggregates(), handle, indent=2)
        click.echo(f"wrote {csv_path} and {json_path} (seed={used_seed})")

    _guarded(run)


if __name__ == "__main__":
    main()
