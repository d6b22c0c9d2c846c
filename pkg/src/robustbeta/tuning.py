"""Data-driven selection of the tuning constant q.

The selector walks a descending grid of q values starting at 1 (the MLE),
measuring the stability of standardized estimates between neighboring grid
points through standardized quadratic variations (SQV).  The chosen q* is
the largest q whose following grid of estimates is stable; if no stable
grid is found before the minimum allowed q, the selector falls back to the
MLE (q* = 1), which is the sensible default when instability persists (as
for unbounded densities, where the robust estimator is not trustworthy).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import RobustBetaError, SingularMatrixError, SpecificationError
from .estimation import fit

__all__ = ["TuningConfig", "TuningTrace", "standardized_vector", "sqv", "select_q"]

_LATTICE_TOL = 1e-9


@dataclass(frozen=True)
class TuningConfig:
    """Grid geometry and stability threshold of the q selector."""

    grid_spacing: float = 0.02
    grid_size: int = 3
    q_min: float = 0.5
    threshold: float = 0.02

    def __post_init__(self):
        if not 0.0 < self.grid_spacing < 1.0:
            raise SpecificationError("grid_spacing must lie in (0, 1)")
        if self.grid_size < 2:
            raise SpecificationError("grid_size must be at least 2")
        if not 0.0 < self.q_min < 1.0:
            raise SpecificationError("q_min must lie in (0, 1)")
        if self.threshold <= 0.0:
            raise SpecificationError("threshold must be positive")


@dataclass
class TuningTrace:
    """Full record of a selector run."""

    visited_q: list = field(default_factory=list)
    records: list = field(default_factory=list)
    grids: list = field(default_factory=list)
    sqv_per_grid: int = 0
    q_star: float = 1.0
    fallback_to_mle: bool = False

    def to_dict(self):
        return {
            "visited_q": list(self.visited_q),
            "records": [dict(r) for r in self.records],
            "grids": [dict(g) for g in self.grids],
            "sqv_per_grid": self.sqv_per_grid,
            "q_star": self.q_star,
            "fallback_to_mle": self.fallback_to_mle,
        }


def standardized_vector(fit_result, n=None):
    """Standardized estimates z_j = theta_hat_j / (sqrt(n) se_j).

    Standardization removes both the sample-size effect and the differing
    magnitudes of coefficients, so stability thresholds are comparable
    across models.
    """
    if n is None:
        n = fit_result.n_obs
    se = np.asarray(fit_result.std_errors, dtype=float)
    if np.any(~np.isfinite(se)) or np.any(se <= 0.0):
        raise SingularMatrixError("standard errors unusable for standardization")
    return fit_result.theta_hat.as_vector() / (np.sqrt(n) * se)


def sqv(z_a, z_b, p=None):
    """Standardized quadratic variation between two standardized vectors."""
    z_a = np.asarray(z_a, dtype=float)
    z_b = np.asarray(z_b, dtype=float)
    if z_a.shape != z_b.shape:
        raise SpecificationError("standardized vectors must have equal length")
    if p is None:
        p = z_a.size
    return float(np.linalg.norm(z_a - z_b) / p)


def select_q(spec, method="smle", config=None, init=None):
    """Select the tuning constant for the SMLE or the MDPDE.

    Returns (q_star, trace).  The first grid starts at q = 1 and descends
    by the grid spacing; a grid is stable when all of its consecutive SQV
    values fall below the threshold.  On a stable grid the largest q of the
    grid is selected (so a stable first grid selects the MLE).  Otherwise a
    fresh grid is started at the smallest q at which instability was
    detected (the lower end of the lowest violating pair, which guarantees
    progress).  If the descent reaches q_min without finding a stable grid
    the selector returns q* = 1.

    Fits along the grid warm-start from the nearest previously fitted
    larger q.  A fit failure at some q counts as a stability violation for
    both pairs that involve it.
    """
    if method not in ("smle", "mdpde"):
        raise SpecificationError("select_q applies to the smle and mdpde families")
    config = config or TuningConfig()
    spacing = config.grid_spacing
    m = config.grid_size
    trace = TuningTrace(sqv_per_grid=m)

    def q_at(k):
        return round(1.0 - k * spacing, 12)

    k_max = int(np.floor((1.0 - config.q_min) / spacing + _LATTICE_TOL))

    fits = {}
    z_vectors = {}

    def ensure_fit(k):
        if k in fits:
            return
        q_k = q_at(k)
        warm = None
        fitted_above = [j for j in fits if j < k and fits[j] is not None]
        if fitted_above:
            warm = fits[max(fitted_above)].theta_hat
        elif init is not None:
            warm = init
        error = None
        try:
            result = fit(spec, method=method, q=q_k, init=warm)
            fits[k] = result
            z_vectors[k] = standardized_vector(result)
        except RobustBetaError as err:
            if k == 0:
                raise
            fits[k] = None
            z_vectors[k] = None
            error = str(err)
        trace.visited_q.append(q_k)
        record = {"q": q_k, "error": error}
        if fits[k] is not None:
            record["estimates"] = fits[k].theta_hat.as_vector().tolist()
            record["std_errors"] = fits[k].std_errors.tolist()
            record["z"] = z_vectors[k].tolist()
        trace.records.append(record)

    top = 0
    while True:
        if top + m > k_max:
            # No full grid fits above q_min: give up on robustness (MLE).
            trace.q_star = 1.0
            trace.fallback_to_mle = True
            break
        ks = list(range(top, top + m + 1))
        for k in ks:
            ensure_fit(k)
        sqv_values = []
        violations = []
        for j in range(m):
            k_hi, k_lo = ks[j], ks[j + 1]
            if z_vectors[k_hi] is None or z_vectors[k_lo] is None:
                sqv_values.append(None)
                violations.append(j)
                continue
            value = sqv(z_vectors[k_hi], z_vectors[k_lo])
            sqv_values.append(value)
            if not value < config.threshold:
                violations.append(j)
        stable = not violations
        grid_record = {
            "q_values": [q_at(k) for k in ks],
            "sqv": sqv_values,
            "stable": stable,
        }
        trace.grids.append(grid_record)
        if stable:
            trace.q_star = q_at(top)
            trace.fallback_to_mle = False
            break
        # Restart below the lowest unstable pair.
        lowest_violation = max(violations)
        top = ks[lowest_violation + 1]
        grid_record["restart_q"] = q_at(top)
    return trace.q_star, trace
