"""Model specification, parameter transforms and feasibility checks.

A beta regression model couples a response in (0, 1) with two linear
predictors: X beta for the mean through a mean link and Z gamma for the
precision through a precision link.  The robust estimator additionally
works with power-transformed parameter pairs:

* link-level (mu, phi): inverse links applied to the linear predictors;
* working (mu_W, phi_W): the 1/q-power transform of the link-level pair,
  indexing the beta density actually evaluated in the robust objective;
* shifted (mu_S, phi_S): the (2-q)-power transform of the working pair,
  needed by the covariance matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InfeasibleTransformError, SpecificationError
from .links import MEAN_LINKS, PRECISION_LINKS, get_link

__all__ = [
    "ModelSpec",
    "Theta",
    "ParamTriple",
    "predict_link_level",
    "q_transform",
    "validity_check",
    "param_triple",
]

VALID_OK = "ok"
VALID_SMLE_INFEASIBLE = "smle_infeasible"
VALID_COV_INFEASIBLE = "covariance_infeasible"


@dataclass(frozen=True)
class Theta:
    """Concatenated coefficient vector (beta, gamma) with the submodel split."""

    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        object.__setattr__(self, "gamma", np.atleast_1d(np.asarray(self.gamma, dtype=float)))
        if not (np.all(np.isfinite(self.beta)) and np.all(np.isfinite(self.gamma))):
            raise SpecificationError("theta must have finite entries")

    @property
    def p1(self):
        return self.beta.size

    @property
    def p2(self):
        return self.gamma.size

    @property
    def p(self):
        return self.beta.size + self.gamma.size

    def as_vector(self):
        return np.concatenate([self.beta, self.gamma])

    @classmethod
    def from_vector(cls, vector, p1):
        vector = np.asarray(vector, dtype=float)
        return cls(beta=vector[:p1], gamma=vector[p1:])


@dataclass
class ModelSpec:
    """Data and structure of a beta regression model.

    y is the response vector with every entry strictly inside (0, 1); X and
    Z are the mean and precision design matrices (full column rank).
    """

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    mean_link: str = "logit"
    precision_link: str = "log"
    x_names: list = field(default_factory=list)
    z_names: list = field(default_factory=list)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        if self.X.shape[0] != self.y.size or self.Z.shape[0] != self.y.size:
            raise SpecificationError(
                f"design matrices must have one row per observation: "
                f"n={self.y.size}, X rows={self.X.shape[0]}, Z rows={self.Z.shape[0]}"
            )
        if not np.all(np.isfinite(self.y)):
            raise SpecificationError("response contains non-finite values")
        if np.any(self.y <= 0.0) or np.any(self.y >= 1.0):
            bad = np.flatnonzero((self.y <= 0.0) | (self.y >= 1.0))
            raise SpecificationError(
                f"response must lie strictly inside (0, 1); offending rows: {bad.tolist()}"
            )
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Z))):
            raise SpecificationError("design matrices contain non-finite values")
        if np.linalg.matrix_rank(self.X) < self.X.shape[1]:
            raise SpecificationError("X does not have full column rank")
        if np.linalg.matrix_rank(self.Z) < self.Z.shape[1]:
            raise SpecificationError("Z does not have full column rank")
        if self.p >= self.n:
            raise SpecificationError(
                f"p1 + p2 = {self.p} must be smaller than n = {self.n}"
            )
        if self.mean_link not in MEAN_LINKS:
            raise SpecificationError(
                f"mean link must be one of {sorted(MEAN_LINKS)}, got {self.mean_link!r}"
            )
        if self.precision_link not in PRECISION_LINKS:
            raise SpecificationError(
                f"precision link must be one of {sorted(PRECISION_LINKS)},"
                f" got {self.precision_link!r}"
            )
        if not self.x_names:
            self.x_names = [f"x{j + 1}" for j in range(self.p1)]
        if not self.z_names:
            self.z_names = [f"z{j + 1}" for j in range(self.p2)]
        if len(self.x_names) != self.p1 or len(self.z_names) != self.p2:
            raise SpecificationError("coefficient names do not match design dimensions")

    @property
    def n(self):
        return self.y.size

    @property
    def p1(self):
        return self.X.shape[1]

    @property
    def p2(self):
        return self.Z.shape[1]

    @property
    def p(self):
        return self.p1 + self.p2

    def coef_names(self):
        return [f"mean:{name}" for name in self.x_names] + [
            f"precision:{name}" for name in self.z_names
        ]


@dataclass(frozen=True)
class ParamTriple:
    """Per-observation (mu, phi) pairs at the three parameter levels."""

    mu: np.ndarray
    phi: np.ndarray
    mu_w: np.ndarray
    phi_w: np.ndarray
    mu_s: np.ndarray
    phi_s: np.ndarray


def predict_link_level(spec, theta):
    """Per-observation (mu_i, phi_i) implied by theta through the links."""
    if theta.p1 != spec.p1 or theta.p2 != spec.p2:
        raise SpecificationError(
            f"theta dimensions ({theta.p1}, {theta.p2}) do not match "
            f"design ({spec.p1}, {spec.p2})"
        )
    mu = get_link(spec.mean_link).inverse(spec.X @ theta.beta)
    phi = get_link(spec.precision_link).inverse(spec.Z @ theta.gamma)
    return mu, phi


def q_transform(mu, phi, alpha):
    """Power transform of beta parameters: the alpha-powered density's pair.

    phi_a = alpha (phi - 2) + 2 and mu_a = [alpha (mu phi - 1) + 1] / phi_a,
    so that a beta density with parameters (mu, phi) raised to the power
    alpha (and renormalized) is the beta density with (mu_a, phi_a).
    Applying the transform with alpha and then 1/alpha is the identity;
    alpha = 1 returns the inputs unchanged (exactly).

    The result is not guaranteed to stay in the parameter space; use
    :func:`validity_check` or check mu_a in (0, 1), phi_a > 0.
    """
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    alpha = float(alpha)
    if alpha == 1.0:
        return mu.copy(), phi.copy()
    phi_a = alpha * (phi - 2.0) + 2.0
    mu_a = (alpha * (mu * phi - 1.0) + 1.0) / phi_a
    return mu_a, phi_a


def transform_feasible(mu, phi, alpha):
    """Boolean mask: does the alpha-power transform stay in the space?

    Equivalent to requiring both powered shape parameters to be positive:
    alpha (mu phi - 1) + 1 > 0 and alpha ((1-mu) phi - 1) + 1 > 0.
    """
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    a_pow = alpha * (mu * phi - 1.0) + 1.0
    b_pow = alpha * ((1.0 - mu) * phi - 1.0) + 1.0
    return (a_pow > 0.0) & (b_pow > 0.0)


def validity_check(mu, phi, q):
    """Classify (mu, phi) pairs by feasibility for the robust estimator at q.

    Returns an array of {"ok", "smle_infeasible", "covariance_infeasible"}:

    * smle_infeasible when mu*phi <= 1-q or (1-mu)*phi <= 1-q (the working
      1/q-transform leaves the parameter space);
    * covariance_infeasible when mu*phi <= 2(1-q)/(2-q) or
      (1-mu)*phi <= 2(1-q)/(2-q) (the shifted (2-q)-transform fails, so the
      asymptotic covariance is undefined);
    * ok otherwise.  At q = 1 both thresholds are 0, so any valid pair is ok.
    """
    q = float(q)
    if not 0.0 < q <= 1.0:
        raise SpecificationError("q must lie in (0, 1]")
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    mu, phi = np.broadcast_arrays(mu, phi)
    a = mu * phi
    b = (1.0 - mu) * phi
    smle_thresh = 1.0 - q
    cov_thresh = 2.0 * (1.0 - q) / (2.0 - q)
    out = np.full(a.shape, VALID_OK, dtype=object)
    cov_bad = (a <= cov_thresh) | (b <= cov_thresh)
    out[cov_bad] = VALID_COV_INFEASIBLE
    smle_bad = (a <= smle_thresh) | (b <= smle_thresh)
    out[smle_bad] = VALID_SMLE_INFEASIBLE
    if out.size == 1:
        return out[0]
    return out


def param_triple(spec, theta, q, check=True):
    """Link-level, working and shifted parameter pairs for all observations.

    With check=True an InfeasibleTransformError (listing the offending
    observation indices) is raised as soon as the working transform leaves
    the parameter space.  The shifted pair may still contain invalid values
    when only the covariance condition fails; callers that need it should
    verify with :func:`validity_check`.
    """
    q = float(q)
    if not 0.0 < q <= 1.0:
        raise SpecificationError("q must lie in (0, 1]")
    mu, phi = predict_link_level(spec, theta)
    if check and q < 1.0:
        feasible = transform_feasible(mu, phi, 1.0 / q)
        if not np.all(feasible):
            bad = np.flatnonzero(~feasible)
            raise InfeasibleTransformError(
                f"working transform infeasible at q={q} for observations "
                f"{bad.tolist()}",
                indices=bad,
            )
    mu_w, phi_w = q_transform(mu, phi, 1.0 / q)
    mu_s, phi_s = q_transform(mu_w, phi_w, 2.0 - q)
    return ParamTriple(mu=mu, phi=phi, mu_w=mu_w, phi_w=phi_w, mu_s=mu_s, phi_s=phi_s)
