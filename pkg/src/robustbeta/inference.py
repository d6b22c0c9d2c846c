"""Sandwich covariance matrices, Wald-type tests, bootstrap p-values and
influence curves.

The robust estimator's asymptotic covariance V_q = J_q^{-1} K_q J_q^{-T}
is assembled from closed-form diagonal matrices evaluated at three
parameter levels (link-level, working, shifted).  All beta-function ratios
are computed in log space and exponentiated once, which keeps the entries
finite at precisions around 1e2 and far beyond.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .exceptions import (
    ConvergenceError,
    InfeasibleTransformError,
    NonIntegrableError,
    RobustBetaError,
    SingularMatrixError,
    SpecificationError,
)
from .links import get_link
from .model import ModelSpec, Theta, param_triple, predict_link_level, q_transform
from .special import (
    beta_star_moments,
    digamma,
    log_beta_fn,
    sample_beta,
    trigamma,
)
from .estimation import fit as _fit
from .estimation import score_rows, star_score_rows
from .utils import parallel_map

__all__ = [
    "AppendixDiagonals",
    "SandwichParts",
    "appendix_diagonals",
    "sandwich",
    "k1_matrix",
    "fit_covariance",
    "WaldTest",
    "wald_test",
    "bootstrap_pvalue",
    "InfluenceCurves",
    "influence_curve",
]

_MAX_CONDITION = 1e12


@dataclass(frozen=True)
class AppendixDiagonals:
    """Per-observation diagonals of the covariance building blocks."""

    b1: np.ndarray
    b2: np.ndarray
    t_mu: np.ndarray
    t_phi: np.ndarray
    phi_q: np.ndarray
    v: np.ndarray
    v_shift: np.ndarray
    c_star: np.ndarray
    c_star_shift: np.ndarray
    d_star: np.ndarray
    d_star_shift: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    m3: np.ndarray


@dataclass(frozen=True)
class SandwichParts:
    """J, K and V = J^{-1} K J^{-T} for an M-estimator."""

    J: np.ndarray
    K: np.ndarray
    V: np.ndarray


def _shapes(mu, phi):
    return mu * phi, (1.0 - mu) * phi


def appendix_diagonals(spec, theta, q):
    """Closed-form diagonal vectors entering J_q and K_q.

    Requires the covariance feasibility condition (the shifted transform
    stays inside the parameter space); raises InfeasibleTransformError
    listing the offending observations otherwise.
    """
    q = float(q)
    triple = param_triple(spec, theta, q, check=True)
    a_l, b_l = _shapes(triple.mu, triple.phi)
    a_w, b_w = _shapes(triple.mu_w, triple.phi_w)
    a_s, b_s = _shapes(triple.mu_s, triple.phi_s)
    bad = (a_s <= 0.0) | (b_s <= 0.0)
    if np.any(bad):
        raise InfeasibleTransformError(
            f"covariance matrices undefined at q={q} for observations "
            f"{np.flatnonzero(bad).tolist()}",
            indices=np.flatnonzero(bad),
        )
    log_b_l = log_beta_fn(a_l, b_l)
    log_b_w = log_beta_fn(a_w, b_w)
    log_b_s = log_beta_fn(a_s, b_s)
    b1 = np.exp(q * log_b_w - log_b_l)
    b2 = np.exp(log_b_s - 2.0 * (1.0 - q) * log_b_w - log_b_l)
    t_mu = 1.0 / get_link(spec.mean_link).deriv(triple.mu)
    t_phi = 1.0 / get_link(spec.precision_link).deriv(triple.phi)
    mu_star_w, mu_dag_w, v = beta_star_moments(a_w, b_w)
    mu_star_s, mu_dag_s, v_shift = beta_star_moments(a_s, b_s)
    psi1_a_w = trigamma(a_w)
    psi1_b_w = trigamma(b_w)
    psi1_a_s = trigamma(a_s)
    psi1_b_s = trigamma(b_s)
    mu_l = triple.mu
    c_star = triple.phi * (mu_l * psi1_a_w - (1.0 - mu_l) * psi1_b_w)
    c_star_shift = triple.phi * (mu_l * psi1_a_s - (1.0 - mu_l) * psi1_b_s)
    d_star = mu_l**2 * psi1_a_w + (1.0 - mu_l) ** 2 * psi1_b_w - trigamma(triple.phi_w)
    d_star_shift = (
        mu_l**2 * psi1_a_s + (1.0 - mu_l) ** 2 * psi1_b_s - trigamma(triple.phi_s)
    )
    m1 = mu_star_s - mu_star_w
    m2 = mu_l * m1 + mu_dag_s - mu_dag_w
    m3 = m2 * triple.phi * m1
    return AppendixDiagonals(
        b1=b1,
        b2=b2,
        t_mu=t_mu,
        t_phi=t_phi,
        phi_q=triple.phi,
        v=v,
        v_shift=v_shift,
        c_star=c_star,
        c_star_shift=c_star_shift,
        d_star=d_star,
        d_star_shift=d_star_shift,
        m1=m1,
        m2=m2,
        m3=m3,
    )


def _blocks(spec, w_bb, w_bg, w_gg):
    """Assemble [[X'diag(w_bb)X, X'diag(w_bg)Z], [sym, Z'diag(w_gg)Z]]."""
    top_left = spec.X.T @ (w_bb[:, None] * spec.X)
    top_right = spec.X.T @ (w_bg[:, None] * spec.Z)
    bottom_right = spec.Z.T @ (w_gg[:, None] * spec.Z)
    return np.block([[top_left, top_right], [top_right.T, bottom_right]])


def _condition_guard(matrix, label):
    condition = np.linalg.cond(matrix)
    if not np.isfinite(condition) or condition > _MAX_CONDITION:
        raise SingularMatrixError(
            f"{label} is numerically singular (condition number {condition:.3e})"
        )


def sandwich(spec, theta, q):
    """J_q, K_q and the sandwich covariance V_q for the robust estimator.

    At q = 1, J_1 = -K_1 (the Fisher information) and V_1 = K_1^{-1}.
    """
    q = float(q)
    d = appendix_diagonals(spec, theta, q)
    j_matrix = -_blocks(
        spec,
        d.b1 * d.t_mu**2 * d.phi_q**2 * d.v,
        d.b1 * d.t_mu * d.t_phi * d.c_star,
        d.b1 * d.t_phi**2 * d.d_star,
    ) / q
    k_matrix = _blocks(
        spec,
        d.b2 * d.t_mu**2 * d.phi_q**2 * (d.v_shift + d.m1**2),
        d.b2 * d.t_mu * d.t_phi * (d.c_star_shift + d.m3),
        d.b2 * d.t_phi**2 * (d.d_star_shift + d.m2**2),
    ) / q**2
    _condition_guard(j_matrix, "J_q")
    v_matrix = np.linalg.solve(j_matrix, np.linalg.solve(j_matrix, k_matrix).T)
    v_matrix = 0.5 * (v_matrix + v_matrix.T)
    return SandwichParts(J=j_matrix, K=k_matrix, V=v_matrix)


def k1_matrix(spec, theta):
    """Fisher information of the beta regression model (K at q = 1)."""
    mu, phi = predict_link_level(spec, theta)
    a, b = _shapes(mu, phi)
    v = trigamma(a) + trigamma(b)
    t_mu = 1.0 / get_link(spec.mean_link).deriv(mu)
    t_phi = 1.0 / get_link(spec.precision_link).deriv(phi)
    c_diag = phi * (mu * trigamma(a) - (1.0 - mu) * trigamma(b))
    d_diag = mu**2 * trigamma(a) + (1.0 - mu) ** 2 * trigamma(b) - trigamma(phi)
    return _blocks(spec, t_mu**2 * phi**2 * v, t_mu * t_phi * c_diag, t_phi**2 * d_diag)


# ---------------------------------------------------------------------------
# MDPDE sandwich
# ---------------------------------------------------------------------------


def _mdpde_expected_weighted_score(spec, theta_eval, theta_truth, q):
    """Closed-form sum_i E_truth[U(y, theta_eval) f_eval(y)^(1-q)].

    The product of a (1-q)-powered beta kernel at theta_eval with the beta
    density at theta_truth is again an unnormalized beta kernel, so the
    expectation reduces to beta-function ratios and digamma differences.
    """
    mu_e, phi_e = predict_link_level(spec, theta_eval)
    mu_t, phi_t = predict_link_level(spec, theta_truth)
    a_e, b_e = _shapes(mu_e, phi_e)
    a_t, b_t = _shapes(mu_t, phi_t)
    a_tilde = (1.0 - q) * (a_e - 1.0) + a_t
    b_tilde = (1.0 - q) * (b_e - 1.0) + b_t
    if np.any(a_tilde <= 0.0) or np.any(b_tilde <= 0.0):
        raise NonIntegrableError(
            "expected weighted score undefined: blended shapes non-positive"
        )
    log_w = (
        log_beta_fn(a_tilde, b_tilde)
        - (1.0 - q) * log_beta_fn(a_e, b_e)
        - log_beta_fn(a_t, b_t)
    )
    w = np.exp(log_w)
    mu_star_e, mu_dag_e, _ = beta_star_moments(a_e, b_e)
    mu_star_t = digamma(a_tilde) - digamma(b_tilde)
    mu_dag_t = digamma(b_tilde) - digamma(a_tilde + b_tilde)
    t_mu = 1.0 / get_link(spec.mean_link).deriv(mu_e)
    t_phi = 1.0 / get_link(spec.precision_link).deriv(phi_e)
    beta_part = spec.X.T @ (w * phi_e * t_mu * (mu_star_t - mu_star_e))
    gamma_part = spec.Z.T @ (
        w * t_phi * (mu_e * (mu_star_t - mu_star_e) + mu_dag_t - mu_dag_e)
    )
    return np.concatenate([beta_part, gamma_part])


def mdpde_sandwich(spec, theta, q):
    """Sandwich covariance of the minimum density power divergence estimator.

    K comes in closed form from moments of the (3-2q)-power-transformed
    density minus the outer products of the per-observation score
    expectations.  J is the expected Jacobian of the estimating function
    under the fitted model, computed by central finite differences of the
    closed-form expected estimating function (which vanishes identically at
    the fitted point, reflecting the unbiasedness of the equations).
    """
    q = float(q)
    if q == 1.0:
        k1 = k1_matrix(spec, theta)
        _condition_guard(k1, "K_1")
        v_matrix = np.linalg.inv(k1)
        return SandwichParts(J=-k1, K=k1, V=0.5 * (v_matrix + v_matrix.T))
    mu, phi = predict_link_level(spec, theta)
    a, b = _shapes(mu, phi)
    c3 = 3.0 - 2.0 * q
    a3 = c3 * (a - 1.0) + 1.0
    b3 = c3 * (b - 1.0) + 1.0
    bad = (a3 <= 0.0) | (b3 <= 0.0)
    if np.any(bad):
        raise InfeasibleTransformError(
            f"MDPDE covariance undefined at q={q} for observations "
            f"{np.flatnonzero(bad).tolist()}",
            indices=np.flatnonzero(bad),
        )
    int3 = np.exp(log_beta_fn(a3, b3) - c3 * log_beta_fn(a, b))
    mu_star, mu_dag, _ = beta_star_moments(a, b)
    mu_star3, mu_dag3, _ = beta_star_moments(a3, b3)
    psi1_a3 = trigamma(a3)
    psi1_b3 = trigamma(b3)
    psi1_phi3 = trigamma(a3 + b3)
    delta_star = mu_star3 - mu_star
    delta_mix = mu * delta_star + mu_dag3 - mu_dag
    t_mu = 1.0 / get_link(spec.mean_link).deriv(mu)
    t_phi = 1.0 / get_link(spec.precision_link).deriv(phi)
    second_moment = _blocks(
        spec,
        int3 * phi**2 * t_mu**2 * (psi1_a3 + psi1_b3 + delta_star**2),
        int3 * phi * t_mu * t_phi
        * (mu * psi1_a3 - (1.0 - mu) * psi1_b3 + delta_star * delta_mix),
        int3 * t_phi**2
        * (mu**2 * psi1_a3 + (1.0 - mu) ** 2 * psi1_b3 - psi1_phi3 + delta_mix**2),
    )
    c2 = 2.0 - q
    a2 = c2 * (a - 1.0) + 1.0
    b2_shape = c2 * (b - 1.0) + 1.0
    int2 = np.exp(log_beta_fn(a2, b2_shape) - c2 * log_beta_fn(a, b))
    mu_star2 = digamma(a2) - digamma(b2_shape)
    mu_dag2 = digamma(b2_shape) - digamma(a2 + b2_shape)
    e_beta = (int2 * phi * t_mu * (mu_star2 - mu_star))[:, None] * spec.X
    e_gamma = (int2 * t_phi * (mu * (mu_star2 - mu_star) + mu_dag2 - mu_dag))[:, None] * spec.Z
    e_matrix = np.hstack([e_beta, e_gamma])
    k_matrix = second_moment - e_matrix.T @ e_matrix

    x_hat = theta.as_vector()
    p = x_hat.size
    j_matrix = np.empty((p, p))
    for j in range(p):
        h = 1e-5 * (1.0 + abs(x_hat[j]))
        x_plus = x_hat.copy()
        x_plus[j] += h
        x_minus = x_hat.copy()
        x_minus[j] -= h
        phi_plus = _mdpde_estimating_expectation(spec, x_plus, theta, q)
        phi_minus = _mdpde_estimating_expectation(spec, x_minus, theta, q)
        j_matrix[:, j] = (phi_plus - phi_minus) / (2.0 * h)
    _condition_guard(j_matrix, "MDPDE J")
    v_matrix = np.linalg.solve(j_matrix, np.linalg.solve(j_matrix, k_matrix).T)
    v_matrix = 0.5 * (v_matrix + v_matrix.T)
    return SandwichParts(J=j_matrix, K=k_matrix, V=v_matrix)


def _mdpde_estimating_expectation(spec, x_eval, theta_truth, q):
    """Expected MDPDE estimating function at x_eval, data from theta_truth."""
    theta_eval = Theta.from_vector(x_eval, spec.p1)
    weighted = _mdpde_expected_weighted_score(spec, theta_eval, theta_truth, q)
    bias = _mdpde_expected_weighted_score(spec, theta_eval, theta_eval, q)
    return weighted - bias


def fit_covariance(spec, theta, method, q):
    """Covariance matrix and standard errors for a fitted estimator."""
    q = float(q)
    if method == "mle" or q == 1.0:
        k1 = k1_matrix(spec, theta)
        _condition_guard(k1, "K_1")
        v_matrix = np.linalg.inv(k1)
        v_matrix = 0.5 * (v_matrix + v_matrix.T)
    elif method == "smle":
        v_matrix = sandwich(spec, theta, q).V
    elif method == "mdpde":
        v_matrix = mdpde_sandwich(spec, theta, q).V
    else:
        raise SpecificationError(f"unknown estimator {method!r}")
    diagonal = np.diag(v_matrix)
    if np.any(diagonal <= 0.0) or not np.all(np.isfinite(diagonal)):
        raise SingularMatrixError("covariance matrix has non-positive diagonal entries")
    return v_matrix, np.sqrt(diagonal)


# ---------------------------------------------------------------------------
# Wald-type tests and the parametric bootstrap
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WaldTest:
    z: float
    statistic: float
    p_asymptotic: float


def wald_test(fit_result, index, null_value=0.0):
    """Wald-type test of theta_j = null_value from a fitted model.

    z = (theta_hat_j - null)/se_j; z^2 is compared against the chi-square
    distribution with one degree of freedom.
    """
    estimates = fit_result.theta_hat.as_vector()
    if not 0 <= index < estimates.size:
        raise SpecificationError(f"coefficient index {index} out of range")
    se = fit_result.std_errors[index]
    if not np.isfinite(se) or se <= 0.0:
        raise SingularMatrixError(f"standard error for coefficient {index} is not usable")
    z = float((estimates[index] - null_value) / se)
    statistic = z * z
    return WaldTest(z=z, statistic=statistic, p_asymptotic=float(chi2.sf(statistic, df=1)))


def _bootstrap_replicate(payload):
    (spec, method, q, index, null_value, theta_null_vec, seed, replicate) = payload
    rng = np.random.default_rng([seed, replicate])
    theta_null = Theta.from_vector(np.asarray(theta_null_vec), spec.p1)
    mu, phi = predict_link_level(spec, theta_null)
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
        sim_fit = _fit(sim_spec, method=method, q=q, init=theta_null)
        return wald_test(sim_fit, index, null_value).statistic
    except RobustBetaError:
        return None


def bootstrap_pvalue(
    spec,
    method,
    q,
    index,
    null_value=0.0,
    replicates=500,
    seed=0,
    n_jobs=1,
    fit_result=None,
):
    """Parametric bootstrap p-value for the Wald-type test of theta_j.

    Responses are simulated from the null-constrained fit (the tested
    coefficient pinned at the null value, all other coefficients
    re-estimated); each replicate is refitted without the constraint and
    its Wald-type statistic recorded.  The p-value is the adjusted
    proportion (1 + #{stat_b >= stat_obs}) / (B + 1) over the B successful
    replicates.  Replicates whose refit fails are skipped and counted; more
    than 20% failures is an error.
    """
    if replicates < 1:
        raise SpecificationError("replicates must be >= 1")
    if fit_result is None:
        fit_result = _fit(spec, method=method, q=q)
    statistic_obs = wald_test(fit_result, index, null_value).statistic
    null_fit = _fit(spec, method=method, q=q, fixed={index: null_value})
    theta_null_vec = null_fit.theta_hat.as_vector()
    payloads = [
        (spec, method, q, index, null_value, theta_null_vec, seed, b)
        for b in range(replicates)
    ]
    statistics = parallel_map(_bootstrap_replicate, payloads, n_jobs)
    failures = sum(1 for s in statistics if s is None)
    if failures > 0.2 * replicates:
        raise ConvergenceError(
            f"bootstrap unreliable: {failures}/{replicates} replicate fits failed"
        )
    kept = [s for s in statistics if s is not None]
    exceed = sum(1 for s in kept if s >= statistic_obs)
    return (1.0 + exceed) / (len(kept) + 1.0)


# ---------------------------------------------------------------------------
# Influence curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InfluenceCurves:
    """Influence vectors on a grid of contamination points y."""

    y_grid: np.ndarray
    mle: np.ndarray
    smle: np.ndarray


def influence_curve(
    theta,
    q,
    x_row,
    z_row,
    y_grid,
    mean_link="logit",
    precision_link="log",
    spec=None,
):
    """Influence of a contaminating point at covariates (x_row, z_row).

    Returns the influence vectors of the MLE, -J_1^{-1} U(y), and of the
    robust estimator, -J_q^{-1} U*(y) f*(y)^(1-q), across the grid of
    contamination points y.  The expected-score derivative matrices are
    computed from `spec` when given; otherwise from the single-row design
    built from (x_row, z_row), which corresponds to the iid case.
    """
    x_row = np.atleast_1d(np.asarray(x_row, dtype=float))
    z_row = np.atleast_1d(np.asarray(z_row, dtype=float))
    y_grid = np.asarray(y_grid, dtype=float)
    if np.any(y_grid <= 0.0) or np.any(y_grid >= 1.0):
        raise SpecificationError("y_grid must lie strictly inside (0, 1)")
    scale = 1.0
    if spec is None:
        if x_row.size > 1 or z_row.size > 1:
            raise SpecificationError(
                "pass spec= for models with covariates; the default design "
                "covers the intercept-only (iid) case"
            )
        # iid case: J and K from the single covariate point.  The row is
        # replicated to satisfy p < n and the replication undone afterwards.
        replicas = x_row.size + z_row.size + 2
        scale = float(replicas)
        spec = ModelSpec(
            y=np.full(replicas, 0.5),
            X=np.tile(x_row, (replicas, 1)),
            Z=np.tile(z_row, (replicas, 1)),
            mean_link=mean_link,
            precision_link=precision_link,
        )
    mu_point = get_link(spec.mean_link).inverse(x_row @ theta.beta)
    phi_point = get_link(spec.precision_link).inverse(z_row @ theta.gamma)
    mu_grid = np.full(y_grid.size, float(mu_point))
    phi_grid = np.full(y_grid.size, float(phi_point))
    x_tiled = np.tile(x_row, (y_grid.size, 1))
    z_tiled = np.tile(z_row, (y_grid.size, 1))
    k1 = k1_matrix(spec, theta)
    _condition_guard(k1, "K_1")
    u_matrix = score_rows(
        y_grid, mu_grid, phi_grid, x_tiled, z_tiled, spec.mean_link, spec.precision_link
    )
    if_mle = scale * np.linalg.solve(k1, u_matrix.T).T
    parts = sandwich(spec, theta, float(q))
    u_star = star_score_rows(
        y_grid, mu_grid, phi_grid, float(q), x_tiled, z_tiled,
        spec.mean_link, spec.precision_link,
    )
    if_smle = -scale * np.linalg.solve(parts.J, u_star.T).T
    return InfluenceCurves(y_grid=y_grid, mle=if_mle, smle=if_smle)
