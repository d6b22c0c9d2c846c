"""Residual diagnostics: standardized weighted residuals, leverage,
robust weights and simulated envelopes.

Residuals for robust fits plug the robust estimates into the same residual
formula used for the MLE; the tuning constant enters only through the
estimates.  Envelope simulations refit the model with the same estimator
and the same q, isolating residual variability from selector variability.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .exceptions import ConvergenceError, RobustBetaError, SingularMatrixError
from .estimation import fit
from .links import get_link
from .model import ModelSpec, predict_link_level
from .special import beta_star_moments, sample_beta
from .utils import parallel_map

__all__ = [
    "DiagnosticsReport",
    "residuals_swr2",
    "leverage",
    "weight_report",
    "EnvelopeBands",
    "simulated_envelope",
    "diagnostics_report",
    "report_to_csv",
]


def _link_level_moments(spec, fit_result):
    mu, phi = predict_link_level(spec, fit_result.theta_hat)
    a = mu * phi
    b = (1.0 - mu) * phi
    mu_star, _, v = beta_star_moments(a, b)
    return mu, phi, mu_star, v


def leverage(spec, fit_result):
    """Diagonal of the weighted-projection hat matrix H.

    H = W^(1/2) X (X' W X)^(-1) X' W^(1/2) with weights
    w_i = phi_i v_i / g_mu'(mu_i)^2 at the fitted parameters; the diagonal
    sums to the number of mean-submodel coefficients.
    """
    mu, phi, _, v = _link_level_moments(spec, fit_result)
    w = phi * v / get_link(spec.mean_link).deriv(mu) ** 2
    xw = np.sqrt(w)[:, None] * spec.X
    gram = xw.T @ xw
    try:
        solved = np.linalg.solve(gram, xw.T)
    except np.linalg.LinAlgError as err:
        raise SingularMatrixError("X'WX is singular in the hat matrix") from err
    return np.einsum("ij,ji->i", xw, solved)


def residuals_swr2(spec, fit_result):
    """Standardized weighted residual 2 at the fitted parameters.

    r_i = (y*_i - mu*_i) / sqrt(v_i (1 - h_ii)) with y* the logit of the
    response, mu* and v its fitted mean and variance, and h_ii the leverage.
    """
    mu, phi, mu_star, v = _link_level_moments(spec, fit_result)
    h = leverage(spec, fit_result)
    y_star = np.log(spec.y) - np.log1p(-spec.y)
    return (y_star - mu_star) / np.sqrt(v * (1.0 - h))


def weight_report(fit_result):
    """Per-observation robust weights, normalized to (0, 1] by the maximum."""
    return fit_result.weights


@dataclass(frozen=True)
class EnvelopeBands:
    """Pointwise envelope for sorted residuals from model simulations."""

    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    n_sims_used: int


def _envelope_worker(payload):
    spec, estimator, q, theta_vec, seed, sim_index = payload
    from .model import Theta

    rng = np.random.default_rng([seed, sim_index])
    theta = Theta.from_vector(np.asarray(theta_vec), spec.p1)
    mu, phi = predict_link_level(spec, theta)
    y_sim = sample_beta(mu, phi, rng)
    sim_spec = ModelSpec(
        y=y_sim,
        X=spec.X,
        Z=spec.Z,
        mean_link=spec.mean_link,
        precision_link=spec.precision_link,
        x_names=spec.x_names,
        z_names=spec.z_names,
    )
    try:
        sim_fit = fit(sim_spec, method=estimator, q=q, init=theta, compute_covariance=False)
    except RobustBetaError:
        return None
    return np.sort(residuals_swr2(sim_spec, sim_fit))


def simulated_envelope(spec, fit_result, n_sims=100, band=0.95, seed=0, n_jobs=1):
    """Simulated envelope for the normal probability plot of residuals.

    Each simulation draws responses from the fitted model, refits with the
    same estimator and the same q, and sorts its residuals; the bands are
    the pointwise (1-band)/2 and 1-(1-band)/2 empirical quantiles (plus the
    median) of each order statistic across simulations.
    """
    if n_sims < 19:
        raise ValueError("n_sims must be at least 19 for a meaningful envelope")
    if not 0.0 < band < 1.0:
        raise ValueError("band must lie in (0, 1)")
    payloads = [
        (spec, fit_result.estimator, fit_result.q_used,
         fit_result.theta_hat.as_vector(), seed, s)
        for s in range(n_sims)
    ]
    sorted_residuals = parallel_map(_envelope_worker, payloads, n_jobs)
    kept = [r for r in sorted_residuals if r is not None]
    if len(kept) < 0.8 * n_sims:
        raise ConvergenceError(
            f"envelope unreliable: {n_sims - len(kept)}/{n_sims} refits failed"
        )
    stack = np.vstack(kept)
    alpha = (1.0 - band) / 2.0
    return EnvelopeBands(
        lower=np.quantile(stack, alpha, axis=0),
        median=np.quantile(stack, 0.5, axis=0),
        upper=np.quantile(stack, 1.0 - alpha, axis=0),
        n_sims_used=len(kept),
    )


@dataclass
class DiagnosticsReport:
    """Residuals, leverages, weights, envelope bands and flagged points.

    Envelope arrays are in sorted-residual order; `order` maps sorted
    positions back to original observation indices and `flagged` lists the
    observation indices whose residuals escape the envelope.
    """

    residuals: np.ndarray
    leverage: np.ndarray
    weights: np.ndarray
    theoretical_quantiles: np.ndarray
    sorted_residuals: np.ndarray
    order: np.ndarray
    envelope_lower: np.ndarray
    envelope_median: np.ndarray
    envelope_upper: np.ndarray
    flagged: np.ndarray
    band: float
    n_sims_used: int


def diagnostics_report(spec, fit_result, n_sims=100, band=0.95, seed=0, n_jobs=1):
    """Assemble the full diagnostics for a fitted model."""
    residuals = residuals_swr2(spec, fit_result)
    h = leverage(spec, fit_result)
    order = np.argsort(residuals, kind="stable")
    sorted_residuals = residuals[order]
    bands = simulated_envelope(spec, fit_result, n_sims=n_sims, band=band,
                               seed=seed, n_jobs=n_jobs)
    n = spec.n
    theoretical = ndtri((np.arange(1, n + 1) - 0.5) / n)
    outside = (sorted_residuals < bands.lower) | (sorted_residuals > bands.upper)
    return DiagnosticsReport(
        residuals=residuals,
        leverage=h,
        weights=fit_result.weights,
        theoretical_quantiles=theoretical,
        sorted_residuals=sorted_residuals,
        order=order,
        envelope_lower=bands.lower,
        envelope_median=bands.median,
        envelope_upper=bands.upper,
        flagged=np.sort(order[outside]),
        band=band,
        n_sims_used=bands.n_sims_used,
    )


def report_to_csv(report, path):
    """Write the plot-ready envelope CSV.

    Columns: theoretical_quantile, residual, lower, median, upper, flagged.
    Rows are in sorted-residual order, matching a normal probability plot.
    """
    flagged = set(report.flagged.tolist())
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["theoretical_quantile", "residual", "lower", "median",
                         "upper", "flagged"])
        for pos in range(report.sorted_residuals.size):
            obs = int(report.order[pos])
            writer.writerow([
                repr(float(report.theoretical_quantiles[pos])),
                repr(float(report.sorted_residuals[pos])),
                repr(float(report.envelope_lower[pos])),
                repr(float(report.envelope_median[pos])),
                repr(float(report.envelope_upper[pos])),
                int(obs in flagged),
            ])
