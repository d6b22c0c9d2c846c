"""Objectives, analytic gradients and the optimizer driver.

Three estimators share one quasi-Newton driver:

* MLE: maximizes the beta regression log-likelihood;
* SMLE: maximizes the reparameterized L_q-likelihood, i.e. the Box-Cox
  transformed working densities (the 1/q-power transform of the link-level
  parameters), whose estimating equation is the weighted modified score;
* MDPDE: minimizes the empirical density power divergence, whose
  stationary points solve the bias-corrected weighted score equations.

At q = 1 all three coincide with the MLE exactly (same code path).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    ConvergenceError,
    InfeasibleTransformError,
    NonIntegrableError,
    SpecificationError,
)
from .links import get_link
from .model import ModelSpec, Theta, param_triple, predict_link_level, q_transform
from .special import beta_logpdf, beta_star_moments, log_beta_fn, powered_density_log_integral

__all__ = [
    "FitResult",
    "loglik",
    "lq_objective",
    "lq_gradient",
    "mdpde_objective",
    "mdpde_gradient",
    "mdpde_estimating_function",
    "score_matrix",
    "weighted_modified_score_matrix",
    "score_rows",
    "star_score_rows",
    "smle_weights",
    "default_init",
    "fit",
]

ESTIMATORS = ("mle", "smle", "mdpde")

_MAX_ITERATIONS = 500
_ARMIJO_SLOPE = 1e-4
_ARMIJO_CONTRACTION = 0.5
_GRAD_TOL = 1e-6
_OBJ_TOL = 1e-10
_MIN_STEP = 1e-14
_WARM_START_STEP = 0.02


@dataclass
class FitResult:
    """Result of fitting a beta regression model with one estimator."""

    theta_hat: Theta
    estimator: str
    q_used: float
    covariance: np.ndarray
    std_errors: np.ndarray
    weights: np.ndarray
    weights_raw: np.ndarray
    objective_value: float
    converged: bool
    iterations: int
    n_obs: int
    coef_names: list = field(default_factory=list)

    @property
    def p(self):
        return self.theta_hat.p

    def to_dict(self):
        """JSON-serializable representation (exact float round trip)."""
        return {
            "estimator": self.estimator,
            "q": self.q_used,
            "beta": self.theta_hat.beta.tolist(),
            "gamma": self.theta_hat.gamma.tolist(),
            "covariance": self.covariance.tolist(),
            "std_errors": self.std_errors.tolist(),
            "weights": self.weights.tolist(),
            "weights_raw": self.weights_raw.tolist(),
            "objective_value": self.objective_value,
            "converged": self.converged,
            "iterations": self.iterations,
            "n_obs": self.n_obs,
            "coef_names": list(self.coef_names),
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(
            theta_hat=Theta(beta=np.array(payload["beta"]), gamma=np.array(payload["gamma"])),
            estimator=payload["estimator"],
            q_used=float(payload["q"]),
            covariance=np.array(payload["covariance"], dtype=float),
            std_errors=np.array(payload["std_errors"], dtype=float),
            weights=np.array(payload["weights"], dtype=float),
            weights_raw=np.array(payload["weights_raw"], dtype=float),
            objective_value=float(payload["objective_value"]),
            converged=bool(payload["converged"]),
            iterations=int(payload["iterations"]),
            n_obs=int(payload["n_obs"]),
            coef_names=list(payload.get("coef_names", [])),
        )


def _logit_pair(y):
    """(y_star, y_dagger) = (log(y/(1-y)), log(1-y))."""
    return np.log(y) - np.log1p(-y), np.log1p(-y)


def loglik(spec, theta):
    """Log-likelihood: sum of beta log-densities at the link-level parameters."""
    mu, phi = predict_link_level(spec, theta)
    return float(np.sum(beta_logpdf(spec.y, mu, phi)))


def lq_objective(spec, theta, q):
    """Reparameterized L_q-likelihood (equals the log-likelihood at q = 1).

    Sums the Box-Cox transform (u^(1-q) - 1)/(1-q) of the working beta
    density evaluated at each observation.  Raises InfeasibleTransformError
    (listing observations) when the working transform leaves the space.
    """
    q = float(q)
    if q == 1.0:
        return loglik(spec, theta)
    triple = param_triple(spec, theta, q, check=True)
    logf_w = beta_logpdf(spec.y, triple.mu_w, triple.phi_w)
    return float(np.sum(np.expm1((1.0 - q) * logf_w)) / (1.0 - q))


def _smle_pieces(spec, theta, q):
    """Shared intermediates for the SMLE objective and gradient."""
    triple = param_triple(spec, theta, q, check=True)
    a_w = triple.mu_w * triple.phi_w
    b_w = (1.0 - triple.mu_w) * triple.phi_w
    logf_w = beta_logpdf(spec.y, triple.mu_w, triple.phi_w)
    mu_star_w, mu_dag_w, _ = beta_star_moments(a_w, b_w)
    return triple, logf_w, mu_star_w, mu_dag_w


def lq_gradient(spec, theta, q):
    """Analytic gradient of :func:`lq_objective` with respect to (beta, gamma).

    Per observation this is the weighted modified score: the modified score
    evaluated with link-level multipliers and working-density expectations,
    weighted by the working density to the power 1 - q.
    """
    q = float(q)
    triple, logf_w, mu_star_w, mu_dag_w = _smle_pieces(spec, theta, q)
    y_star, y_dag = _logit_pair(spec.y)
    w = np.exp((1.0 - q) * logf_w) if q != 1.0 else np.ones(spec.n)
    gmu_prime = get_link(spec.mean_link).deriv(triple.mu)
    gphi_prime = get_link(spec.precision_link).deriv(triple.phi)
    resid_star = y_star - mu_star_w
    r_beta = (triple.phi / q) * resid_star / gmu_prime * w
    r_gamma = (triple.mu * resid_star + y_dag - mu_dag_w) / q / gphi_prime * w
    return np.concatenate([spec.X.T @ r_beta, spec.Z.T @ r_gamma])


def score_rows(y, mu, phi, X, Z, mean_link="logit", precision_link="log"):
    """Per-observation score vectors U(y_i) as the rows of an n x p matrix.

    Works on raw arrays so that contamination probes (a grid of y values at
    a single covariate point) can reuse the same formulas.
    """
    y = np.asarray(y, dtype=float)
    a = mu * phi
    b = (1.0 - mu) * phi
    mu_star, mu_dag, _ = beta_star_moments(a, b)
    y_star, y_dag = _logit_pair(y)
    gmu_prime = get_link(mean_link).deriv(mu)
    gphi_prime = get_link(precision_link).deriv(phi)
    u_beta = (phi * (y_star - mu_star) / gmu_prime)[:, None] * X
    u_gamma = ((mu * (y_star - mu_star) + y_dag - mu_dag) / gphi_prime)[:, None] * Z
    return np.hstack([u_beta, u_gamma])


def star_score_rows(y, mu, phi, q, X, Z, mean_link="logit", precision_link="log"):
    """Per-observation weighted modified scores U*(y_i) f*(y_i)^(1-q).

    (mu, phi) are link-level parameters; the expectations and the weight use
    the working (1/q-power transformed) density.  The gradient of the
    reparameterized L_q-likelihood is the column sum of this matrix.
    """
    q = float(q)
    y = np.asarray(y, dtype=float)
    mu_w, phi_w = q_transform(mu, phi, 1.0 / q)
    a_w = mu_w * phi_w
    b_w = (1.0 - mu_w) * phi_w
    if np.any(a_w <= 0.0) or np.any(b_w <= 0.0):
        raise InfeasibleTransformError(
            f"working transform infeasible at q={q}",
            indices=np.flatnonzero((a_w <= 0.0) | (b_w <= 0.0)),
        )
    mu_star_w, mu_dag_w, _ = beta_star_moments(a_w, b_w)
    y_star, y_dag = _logit_pair(y)
    if q != 1.0:
        w = np.exp((1.0 - q) * beta_logpdf(y, mu_w, phi_w))
    else:
        w = np.ones(y.size)
    gmu_prime = get_link(mean_link).deriv(mu)
    gphi_prime = get_link(precision_link).deriv(phi)
    resid_star = y_star - mu_star_w
    u_beta = ((phi / q) * resid_star / gmu_prime * w)[:, None] * X
    u_gamma = (((mu * resid_star + y_dag - mu_dag_w) / q / gphi_prime) * w)[:, None] * Z
    return np.hstack([u_beta, u_gamma])


def score_matrix(spec, theta):
    """n x p matrix of per-observation (unweighted) score vectors."""
    mu, phi = predict_link_level(spec, theta)
    return score_rows(spec.y, mu, phi, spec.X, spec.Z, spec.mean_link, spec.precision_link)


def weighted_modified_score_matrix(spec, theta, q):
    """n x p matrix of per-observation weighted modified scores."""
    mu, phi = predict_link_level(spec, theta)
    return star_score_rows(
        spec.y, mu, phi, q, spec.X, spec.Z, spec.mean_link, spec.precision_link
    )


def smle_weights(spec, theta, q):
    """Raw SMLE weights f*(y_i)^(1-q) at the working parameters."""
    q = float(q)
    if q == 1.0:
        return np.ones(spec.n)
    triple = param_triple(spec, theta, q, check=True)
    logf_w = beta_logpdf(spec.y, triple.mu_w, triple.phi_w)
    return np.exp((1.0 - q) * logf_w)


def _mdpde_check(mu, phi, q):
    """Feasibility of the (2-q)-powered link-level density."""
    c = 2.0 - q
    a_pow = c * (mu * phi - 1.0) + 1.0
    b_pow = c * ((1.0 - mu) * phi - 1.0) + 1.0
    bad = (a_pow <= 0.0) | (b_pow <= 0.0)
    if np.any(bad):
        raise NonIntegrableError(
            f"(2-q)-powered density not integrable at q={q} for observations "
            f"{np.flatnonzero(bad).tolist()}"
        )


def mdpde_objective(spec, theta, q):
    """Empirical density power divergence objective (to be minimized).

    For q < 1 each observation contributes
    int f^(2-q) - (1 + 1/(1-q)) f(y_i)^(1-q), with the integral in closed
    form; at q = 1 the objective is the negative log-likelihood.  Stationary
    points solve the bias-corrected weighted score equations.
    """
    q = float(q)
    if q == 1.0:
        return -loglik(spec, theta)
    mu, phi = predict_link_level(spec, theta)
    _mdpde_check(mu, phi, q)
    c = 2.0 - q
    log_int = powered_density_log_integral(mu, phi, c)
    logf = beta_logpdf(spec.y, mu, phi)
    terms = np.exp(log_int) - (1.0 + 1.0 / (1.0 - q)) * np.exp((1.0 - q) * logf)
    return float(np.sum(terms))


def _mdpde_pieces(spec, theta, q):
    mu, phi = predict_link_level(spec, theta)
    _mdpde_check(mu, phi, q)
    c = 2.0 - q
    a = mu * phi
    b = (1.0 - mu) * phi
    mu_c, phi_c = q_transform(mu, phi, c)
    a_c = mu_c * phi_c
    b_c = (1.0 - mu_c) * phi_c
    log_int = log_beta_fn(a_c, b_c) - c * log_beta_fn(a, b)
    mu_star, mu_dag, _ = beta_star_moments(a, b)
    mu_star_c, mu_dag_c, _ = beta_star_moments(a_c, b_c)
    return mu, phi, np.exp(log_int), mu_star, mu_dag, mu_star_c, mu_dag_c


def mdpde_gradient(spec, theta, q):
    """Analytic gradient of :func:`mdpde_objective`."""
    q = float(q)
    if q == 1.0:
        return -score_matrix(spec, theta).sum(axis=0)
    c = 2.0 - q
    mu, phi, int_c, mu_star, mu_dag, mu_star_c, mu_dag_c = _mdpde_pieces(spec, theta, q)
    y_star, y_dag = _logit_pair(spec.y)
    logf = beta_logpdf(spec.y, mu, phi)
    w = np.exp((1.0 - q) * logf)
    gmu_prime = get_link(spec.mean_link).deriv(mu)
    gphi_prime = get_link(spec.precision_link).deriv(phi)
    d_mu = c * (int_c * phi * (mu_star_c - mu_star) - w * phi * (y_star - mu_star))
    d_phi = c * (
        int_c * (mu * (mu_star_c - mu_star) + mu_dag_c - mu_dag)
        - w * (mu * (y_star - mu_star) + y_dag - mu_dag)
    )
    return np.concatenate([spec.X.T @ (d_mu / gmu_prime), spec.Z.T @ (d_phi / gphi_prime)])


def mdpde_estimating_function(spec, theta, q):
    """Bias-corrected weighted score: sum_i {U(y_i) f(y_i)^(1-q) - E_i}.

    E_i is the model expectation of the weighted score, computed in closed
    form from the integral of the (2-q)-powered density.  The MDPDE solves
    this equation; it equals -gradient/(2-q) of the divergence objective.
    """
    q = float(q)
    if q == 1.0:
        return score_matrix(spec, theta).sum(axis=0)
    return -mdpde_gradient(spec, theta, q) / (2.0 - q)


# ---------------------------------------------------------------------------
# Optimizer driver
# ---------------------------------------------------------------------------


class _InfeasibleStart(Exception):
    """Objective is not finite at the starting point."""


def _minimize_bfgs(fun_grad, x0, max_iterations=_MAX_ITERATIONS):
    """BFGS minimization with Armijo backtracking.

    fun_grad maps x -> (value, gradient); an infeasible point is signalled
    by (inf, None) and is rejected by the line search.  Convergence is
    declared once the gradient sup-norm falls below 1e-6 (1 + |f|) or the
    relative objective change falls below 1e-10; iteration continues past
    the declared tolerance toward machine-level stationarity so that
    converged solutions are reproducible to well below the declared
    tolerances (scaling equivariance at the 1e-8 level needs this polish).
    Returns (x, value, gradient, converged, iterations, status).
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun_grad(x)
    if not np.isfinite(f):
        raise _InfeasibleStart
    n = x.size
    identity = np.eye(n)
    h_inv = identity.copy()
    status = "max-iterations"
    criterion_met = False
    iterations = 0
    polish_tol = 1e-11
    for iterations in range(1, max_iterations + 1):
        grad_norm = np.max(np.abs(g))
        if grad_norm <= _GRAD_TOL * (1.0 + abs(f)):
            criterion_met = True
            status = "gradient"
        if grad_norm <= polish_tol * (1.0 + abs(f)):
            break
        direction = -h_inv @ g
        slope = float(g @ direction)
        if slope >= 0.0:
            h_inv = identity.copy()
            direction = -g
            slope = float(g @ direction)
        accepted = False
        for attempt in range(2):
            step = 1.0
            while step >= _MIN_STEP:
                x_new = x + step * direction
                f_new, g_new = fun_grad(x_new)
                if np.isfinite(f_new) and f_new <= f + _ARMIJO_SLOPE * step * slope:
                    accepted = True
                    break
                step *= _ARMIJO_CONTRACTION
            if accepted or attempt == 1:
                break
            # Retry once along steepest descent: the quasi-Newton direction
            # can go stale near machine-level stationarity.
            h_inv = identity.copy()
            direction = -g
            slope = float(g @ direction)
        if not accepted:
            if not criterion_met:
                status = "line-search"
            break
        s = x_new - x
        y_vec = g_new - g
        sy = float(s @ y_vec)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y_vec):
            rho = 1.0 / sy
            left = identity - rho * np.outer(s, y_vec)
            h_inv = left @ h_inv @ left.T + rho * np.outer(s, s)
        objective_change = abs(f_new - f)
        x, f, g = x_new, f_new, g_new
        if objective_change <= _OBJ_TOL * (1.0 + abs(f)):
            criterion_met = True
            if status == "max-iterations":
                status = "objective-change"
            # Stop once even machine-level progress dries up.
            if objective_change <= 1e-15 * (1.0 + abs(f)):
                break
    if np.max(np.abs(g)) <= _GRAD_TOL * (1.0 + abs(f)):
        criterion_met = True
        if status in ("max-iterations", "line-search"):
            status = "gradient"
    return x, f, g, criterion_met, iterations, status


def default_init(spec):
    """Standard beta-regression starting values.

    beta comes from least squares of the mean link applied to the shrunken
    response (y(n-1) + 1/2)/n on X; the first gamma component is set from a
    method-of-moments precision estimate based on the link-scale residual
    variance, the remaining gamma components start at zero.
    """
    n = spec.n
    mean_link = get_link(spec.mean_link)
    precision_link = get_link(spec.precision_link)
    y_shrunk = (spec.y * (n - 1) + 0.5) / n
    target = mean_link.g(y_shrunk)
    beta0, *_ = np.linalg.lstsq(spec.X, target, rcond=None)
    residual = target - spec.X @ beta0
    dof = max(n - spec.p1, 1)
    sigma2 = float(residual @ residual) / dof
    mu_hat = mean_link.inverse(spec.X @ beta0)
    var_y = np.maximum(sigma2 / mean_link.deriv(mu_hat) ** 2, 1e-12)
    phi_obs = mu_hat * (1.0 - mu_hat) / var_y - 1.0
    phi_mm = max(float(np.mean(phi_obs)), 0.1)
    gamma0 = np.zeros(spec.p2)
    z_bar = float(np.mean(spec.Z[:, 0]))
    if abs(z_bar) > 1e-8:
        gamma0[0] = float(precision_link.g(phi_mm)) / z_bar
    return Theta(beta=beta0, gamma=gamma0)


def _objective_for(spec, method, q):
    """(value, gradient) closure for the minimizer, with soft infeasibility."""
    if method in ("mle", "smle"):

        def fun_grad(x):
            theta = Theta.from_vector(x, spec.p1)
            try:
                value = lq_objective(spec, theta, q)
                grad = lq_gradient(spec, theta, q)
            except InfeasibleTransformError:
                return np.inf, None
            if not np.isfinite(value) or not np.all(np.isfinite(grad)):
                return np.inf, None
            return -value, -grad

    else:

        def fun_grad(x):
            theta = Theta.from_vector(x, spec.p1)
            try:
                value = mdpde_objective(spec, theta, q)
                grad = mdpde_gradient(spec, theta, q)
            except NonIntegrableError:
                return np.inf, None
            if not np.isfinite(value) or not np.all(np.isfinite(grad)):
                return np.inf, None
            return value, grad

    return fun_grad


def _embed_fixed(fun_grad, template, free_idx):
    """Restrict an objective to the free coordinates of a partially fixed x."""

    def restricted(x_free):
        x_full = template.copy()
        x_full[free_idx] = x_free
        value, grad = fun_grad(x_full)
        if grad is None:
            return value, None
        return value, grad[free_idx]

    return restricted


def _run_optimizer(spec, method, q, x0, fixed, max_iterations):
    fun_grad = _objective_for(spec, method, q)
    if fixed:
        template = x0.copy()
        for index, value in fixed.items():
            template[index] = value
        free_idx = np.array([j for j in range(x0.size) if j not in fixed], dtype=int)
        restricted = _embed_fixed(fun_grad, template, free_idx)
        x_free, f, g, converged, iterations, status = _minimize_bfgs(
            restricted, x0[free_idx], max_iterations
        )
        x_full = template.copy()
        x_full[free_idx] = x_free
        return x_full, f, g, converged, iterations, status
    return _minimize_bfgs(fun_grad, x0, max_iterations)


def fit(
    spec,
    method="mle",
    q=1.0,
    init=None,
    fixed=None,
    compute_covariance=True,
    max_iterations=_MAX_ITERATIONS,
):
    """Fit a beta regression model by MLE, SMLE or MDPDE.

    Parameters
    ----------
    spec : ModelSpec
    method : {"mle", "smle", "mdpde"}
    q : float in (0, 1]
        Tuning constant; must be 1 for the MLE.  At q = 1 the SMLE and the
        MDPDE coincide with the MLE.
    init : Theta, optional
        Starting values; defaults to :func:`default_init`.
    fixed : dict, optional
        Mapping of coefficient index (in the concatenated (beta, gamma)
        vector) to a pinned value; the remaining coefficients are estimated.
        Used by the null-constrained parametric bootstrap.
    compute_covariance : bool
        Attach the sandwich covariance and standard errors.

    Returns
    -------
    FitResult

    Raises
    ------
    ConvergenceError
        After a restart from a perturbed start also fails; carries the best
        iterate found.
    """
    if method not in ESTIMATORS:
        raise SpecificationError(f"estimator must be one of {ESTIMATORS}, got {method!r}")
    q = float(q)
    if not 0.0 < q <= 1.0:
        raise SpecificationError("q must lie in (0, 1]")
    if method == "mle" and q != 1.0:
        raise SpecificationError("the MLE corresponds to q = 1")
    theta0 = init if init is not None else default_init(spec)
    if theta0.p1 != spec.p1 or theta0.p2 != spec.p2:
        raise SpecificationError("init dimensions do not match the design")
    x0 = theta0.as_vector()
    fixed = dict(fixed) if fixed else {}

    def attempt(x_start):
        return _run_optimizer(spec, method, q, x_start, fixed, max_iterations)

    try:
        result = attempt(x0)
    except _InfeasibleStart:
        if method == "smle" and q < 1.0:
            x0 = _warm_start_path(spec, method, q, x0, fixed, max_iterations)
            result = attempt(x0)
        else:
            raise ConvergenceError(
                f"objective not finite at the starting values for {method} at q={q}",
                best_theta=theta0,
            ) from None
    x, f, g, converged, iterations, status = result
    if not converged:
        rng = np.random.default_rng(20_240_914)
        x_perturbed = x0 + 1e-3 * (1.0 + np.abs(x0)) * rng.standard_normal(x0.size)
        try:
            x2, f2, g2, converged2, iterations2, status2 = attempt(x_perturbed)
        except _InfeasibleStart:
            converged2 = False
            x2, f2, iterations2 = x, f, 0
        if converged2:
            x, f, g, converged, status = x2, f2, g2, True, status2
            iterations += iterations2
        else:
            best = x if f <= f2 else x2
            raise ConvergenceError(
                f"{method} fit failed to converge after {iterations + iterations2} "
                f"iterations (status: {status})",
                best_theta=Theta.from_vector(best, spec.p1),
                best_value=float(min(f, f2)),
                iterations=iterations + iterations2,
            )
    theta_hat = Theta.from_vector(x, spec.p1)
    objective_value = -f if method in ("mle", "smle") else f
    if method == "mdpde" and q < 1.0:
        weights_raw = np.exp((1.0 - q) * beta_logpdf(spec.y, *predict_link_level(spec, theta_hat)))
    else:
        weights_raw = smle_weights(spec, theta_hat, q)
    weights = weights_raw / np.max(weights_raw)
    if compute_covariance:
        from .inference import fit_covariance

        covariance, std_errors = fit_covariance(spec, theta_hat, method, q)
    else:
        covariance = np.full((spec.p, spec.p), np.nan)
        std_errors = np.full(spec.p, np.nan)
    return FitResult(
        theta_hat=theta_hat,
        estimator=method,
        q_used=q,
        covariance=covariance,
        std_errors=std_errors,
        weights=weights,
        weights_raw=weights_raw,
        objective_value=float(objective_value),
        converged=converged,
        iterations=iterations,
        n_obs=spec.n,
        coef_names=spec.coef_names(),
    )


def _warm_start_path(spec, method, q_target, x0, fixed, max_iterations):
    """Walk q down from 1 to the target, warm-starting each step.

    Used when the starting values are infeasible for the target q.  Raises
    ConvergenceError recommending the MLE when no step on the path admits a
    feasible fit.
    """
    x = x0.copy()
    q_path = np.arange(1.0, q_target, -_WARM_START_STEP)
    last_error = None
    for q_step in list(q_path) + [q_target]:
        try:
            x, *_ = _run_optimizer(spec, method, float(q_step), x, fixed, max_iterations)
        except _InfeasibleStart as err:
            last_error = err
            continue
    try:
        fun_grad = _objective_for(spec, method, q_target)
        value, _ = fun_grad(x)
    except Exception:  # pragma: no cover - defensive
        value = np.inf
    if not np.isfinite(value):
        raise ConvergenceError(
            f"SMLE infeasible at every q on the warm-start path down to q={q_target}; "
            "the density is likely unbounded for some observations - consider the MLE",
            best_theta=Theta.from_vector(x, spec.p1),
        ) from last_error
    return x
