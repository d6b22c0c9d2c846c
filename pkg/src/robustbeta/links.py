"""Link functions for the mean and precision submodels.

Mean links map (0, 1) -> R, the precision link maps (0, inf) -> R.  Each
link provides the forward map g, the inverse g^{-1} and the derivative g',
all mutually consistent.  Inverse links saturate near the boundary of the
parameter space so that optimizer line searches stay finite without
altering converged solutions.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, ndtr, ndtri

from .exceptions import DomainError

__all__ = ["MEAN_LINKS", "PRECISION_LINKS", "link_eval", "link_inverse", "link_deriv"]

# Saturation bounds for inverse links.
_MU_EPS = 1e-12
_PHI_MIN = 1e-12
_PHI_MAX = 1e12


def _check_unit_interval(value):
    value = np.asarray(value, dtype=float)
    if np.any(value <= 0.0) or np.any(value >= 1.0):
        raise DomainError("mean values must lie strictly inside (0, 1)")
    return value


def _check_positive(value):
    value = np.asarray(value, dtype=float)
    if np.any(value <= 0.0):
        raise DomainError("precision values must be strictly positive")
    return value


class Link:
    """A strictly monotone, twice differentiable link function."""

    def __init__(self, name, g, inverse, deriv, check):
        self.name = name
        self._g = g
        self._inverse = inverse
        self._deriv = deriv
        self._check = check

    def __repr__(self):
        return f"Link({self.name!r})"

    def g(self, value):
        return self._g(self._check(value))

    def inverse(self, eta):
        return self._inverse(np.asarray(eta, dtype=float))

    def deriv(self, value):
        return self._deriv(self._check(value))


def _logit(mu):
    return np.log(mu) - np.log1p(-mu)


def _logit_inverse(eta):
    return np.clip(expit(eta), _MU_EPS, 1.0 - _MU_EPS)


def _logit_deriv(mu):
    return 1.0 / (mu * (1.0 - mu))


def _probit_inverse(eta):
    return np.clip(ndtr(eta), _MU_EPS, 1.0 - _MU_EPS)


def _probit_deriv(mu):
    z = ndtri(mu)
    return np.sqrt(2.0 * np.pi) * np.exp(0.5 * z * z)


def _cloglog(mu):
    return np.log(-np.log1p(-mu))


def _cloglog_inverse(eta):
    # 1 - exp(-exp(eta)), saturated away from {0, 1}.
    out = -np.expm1(-np.exp(np.minimum(eta, 700.0)))
    return np.clip(out, _MU_EPS, 1.0 - _MU_EPS)


def _cloglog_deriv(mu):
    return -1.0 / ((1.0 - mu) * np.log1p(-mu))


def _log_inverse(eta):
    return np.clip(np.exp(np.minimum(eta, 700.0)), _PHI_MIN, _PHI_MAX)


MEAN_LINKS = {
    "logit": Link("logit", _logit, _logit_inverse, _logit_deriv, _check_unit_interval),
    "probit": Link("probit", ndtri, _probit_inverse, _probit_deriv, _check_unit_interval),
    "cloglog": Link("cloglog", _cloglog, _cloglog_inverse, _cloglog_deriv, _check_unit_interval),
}

PRECISION_LINKS = {
    "log": Link("log", np.log, _log_inverse, lambda phi: 1.0 / phi, _check_positive),
}

_ALL_LINKS = {**MEAN_LINKS, **PRECISION_LINKS}


def get_link(name):
    try:
        return _ALL_LINKS[name]
    except KeyError:
        raise DomainError(
            f"unknown link {name!r}; available: {sorted(_ALL_LINKS)}"
        ) from None


def link_eval(link, value):
    """Evaluate g(value) for the named link."""
    return get_link(link).g(value)


def link_inverse(link, eta):
    """Evaluate g^{-1}(eta) for the named link (saturated near boundaries)."""
    return get_link(link).inverse(eta)


def link_deriv(link, value):
    """Evaluate g'(value) for the named link."""
    return get_link(link).deriv(value)
