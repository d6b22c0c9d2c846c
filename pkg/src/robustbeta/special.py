"""Special functions and beta-density primitives.

Everything downstream (objectives, scores, covariance matrices, residuals,
simulation) is built on the functions in this module: digamma/trigamma,
the log beta function, the beta log-density, the closed-form integral of a
powered beta density, and beta random variate generation.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .exceptions import DomainError, NonIntegrableError

__all__ = [
    "digamma",
    "trigamma",
    "log_beta_fn",
    "beta_logpdf",
    "powered_density_log_integral",
    "sample_beta",
    "beta_star_moments",
]

# Coefficients B_{2k}/(2k) of the digamma asymptotic series, k = 1..8.
_DIGAMMA_ASY = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
    -3617.0 / 8160.0,
)

# Bernoulli numbers B_{2k} of the trigamma asymptotic series, k = 1..9.
_TRIGAMMA_ASY = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
)

# Upward recurrence is applied until the argument reaches this value, after
# which the asymptotic series is accurate to ~1e-13 relative.
_ASY_THRESHOLD = 8.0


def _positive_array(x, name):
    arr = np.asarray(x, dtype=float)
    if arr.size and np.any(arr <= 0.0):
        raise DomainError(f"{name} must be strictly positive")
    return arr


def digamma(x):
    """Digamma function psi(x) for x > 0.

    Uses the recurrence psi(x) = psi(x + 1) - 1/x to shift the argument
    upward, then evaluates the asymptotic series
    psi(x) ~ ln x - 1/(2x) - sum_k B_{2k} / (2k x^{2k}).

    Accepts scalars or arrays; raises DomainError for non-positive input.
    """
    arr = _positive_array(x, "x")
    scalar = arr.ndim == 0
    z = np.atleast_1d(arr).copy()
    acc = np.zeros_like(z)
    # At most ceil(threshold) shifts are ever needed since each adds 1.
    while True:
        small = z < _ASY_THRESHOLD
        if not np.any(small):
            break
        acc[small] -= 1.0 / z[small]
        z[small] += 1.0
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    power = inv2.copy()
    for coef in _DIGAMMA_ASY:
        series += coef * power
        power *= inv2
    out = acc + np.log(z) - 0.5 / z - series
    return float(out[0]) if scalar else out.reshape(arr.shape)


def trigamma(x):
    """Trigamma function psi'(x) for x > 0.

    Same recurrence/asymptotic-series scheme as :func:`digamma`, with
    psi'(x) = psi'(x + 1) + 1/x^2 and
    psi'(x) ~ 1/x + 1/(2x^2) + sum_k B_{2k} / x^{2k+1}.
    """
    arr = _positive_array(x, "x")
    scalar = arr.ndim == 0
    z = np.atleast_1d(arr).copy()
    acc = np.zeros_like(z)
    while True:
        small = z < _ASY_THRESHOLD
        if not np.any(small):
            break
        acc[small] += 1.0 / (z[small] * z[small])
        z[small] += 1.0
    inv = 1.0 / z
    inv2 = inv * inv
    series = np.zeros_like(z)
    power = inv * inv2
    for coef in _TRIGAMMA_ASY:
        series += coef * power
        power *= inv2
    out = acc + inv + 0.5 * inv2 + series
    return float(out[0]) if scalar else out.reshape(arr.shape)


def log_beta_fn(a, b):
    """log B(a, b) = lgamma(a) + lgamma(b) - lgamma(a + b), for a, b > 0.

    Stable for very large shape parameters (no overflow up to ~1e6 and
    beyond) because everything stays on the log scale.
    """
    a = _positive_array(a, "a")
    b = _positive_array(b, "b")
    out = gammaln(a) + gammaln(b) - gammaln(a + b)
    if np.ndim(out) == 0:
        return float(out)
    return out


def beta_logpdf(y, mu, phi):
    """Log-density of a beta variate in the mean/precision parameterization.

    The density has shape parameters a = mu*phi and b = (1-mu)*phi.  All of
    y, mu and phi may be arrays (broadcast together).  y must lie strictly
    inside (0, 1).
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    phi = _positive_array(phi, "phi")
    if np.any(y <= 0.0) or np.any(y >= 1.0):
        raise DomainError("y must lie strictly inside (0, 1)")
    if np.any(mu <= 0.0) or np.any(mu >= 1.0):
        raise DomainError("mu must lie strictly inside (0, 1)")
    a = mu * phi
    b = (1.0 - mu) * phi
    out = (a - 1.0) * np.log(y) + (b - 1.0) * np.log1p(-y) - log_beta_fn(a, b)
    if out.ndim == 0:
        return float(out)
    return out


def powered_density_log_integral(mu, phi, c):
    """log of the integral over (0, 1) of the beta density raised to power c.

    A beta density with shapes (a, b) raised to the power c > 0 is an
    unnormalized beta kernel with shapes (c(a-1)+1, c(b-1)+1), so

        log int f(y; mu, phi)^c dy
            = log B(c(a-1)+1, c(b-1)+1) - c log B(a, b).

    Raises NonIntegrableError when a powered shape is non-positive, which
    happens exactly when the powered density ceases to be integrable
    (unbounded-density case).  For c == 1 the result is exactly 0.0.
    """
    mu = np.asarray(mu, dtype=float)
    phi = _positive_array(phi, "phi")
    c = float(c)
    if c <= 0.0:
        raise DomainError("power c must be strictly positive")
    if np.any(mu <= 0.0) or np.any(mu >= 1.0):
        raise DomainError("mu must lie strictly inside (0, 1)")
    if c == 1.0:
        out = np.zeros(np.broadcast(mu, phi).shape)
        return float(out) if out.ndim == 0 else out
    a = mu * phi
    b = (1.0 - mu) * phi
    ac = c * (a - 1.0) + 1.0
    bc = c * (b - 1.0) + 1.0
    if np.any(ac <= 0.0) or np.any(bc <= 0.0):
        raise NonIntegrableError(
            f"density^{c} is not integrable: powered shape parameters must be "
            "positive (the beta density is unbounded at a boundary)"
        )
    out = log_beta_fn(ac, bc) - c * log_beta_fn(a, b)
    if np.ndim(out) == 0:
        return float(out)
    return out


def sample_beta(mu, phi, rng, size=None):
    """Draw beta variates with mean mu and precision phi.

    Variates are built from two gamma draws, g1 ~ Gamma(mu*phi) and
    g2 ~ Gamma((1-mu)*phi), as g1 / (g1 + g2), which is valid for all
    positive shape values including shapes below 1.  The caller supplies
    the numpy Generator, so reproducibility is controlled entirely by the
    caller's stream.  Results are nudged into the open interval (0, 1) so
    they remain valid beta-regression responses.
    """
    mu = np.asarray(mu, dtype=float)
    phi = _positive_array(phi, "phi")
    if np.any(mu <= 0.0) or np.any(mu >= 1.0):
        raise DomainError("mu must lie strictly inside (0, 1)")
    a = np.broadcast_to(mu * phi, np.broadcast(mu, phi).shape if size is None else size)
    b = np.broadcast_to((1.0 - mu) * phi, a.shape)
    g1 = rng.gamma(a)
    g2 = rng.gamma(b)
    total = g1 + g2
    # Shapes far below 1 can underflow both gamma draws; redraw those.
    bad = total <= 0.0
    while np.any(bad):
        g1 = np.where(bad, rng.gamma(a), g1)
        g2 = np.where(bad, rng.gamma(b), g2)
        total = g1 + g2
        bad = total <= 0.0
    y = g1 / total
    tiny = np.finfo(float).tiny
    y = np.clip(y, tiny, np.nextafter(1.0, 0.0))
    if np.ndim(mu) == 0 and size is None:
        return float(y)
    return y


def beta_star_moments(a, b):
    """First and second logit-scale moments of a beta law with shapes (a, b).

    Returns (mu_star, mu_dagger, v) where, for y ~ Beta(a, b),

        mu_star   = E log(y/(1-y)) = psi(a) - psi(b)
        mu_dagger = E log(1-y)     = psi(b) - psi(a+b)
        v         = Var log(y/(1-y)) = psi'(a) + psi'(b)
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    psi_a = digamma(a)
    psi_b = digamma(b)
    mu_star = psi_a - psi_b
    mu_dagger = psi_b - digamma(a + b)
    v = trigamma(a) + trigamma(b)
    return mu_star, mu_dagger, v
