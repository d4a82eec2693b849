"""Calibration and consistency metrics for ATE posteriors.

* total-variation alignment of a posterior with a normal reference,
* Kolmogorov-Smirnov uniformity of probability integral transforms,
* the second-order remainder combining nuisance posterior errors,
* the posterior-variance comparison across coupling variants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import integrate, stats

from .data import CausalDataset, ConfigurationError, OracleDGP, child_rng
from .estimators import AtePosterior, DegeneracyError, GaussianLaw, truncate_propensity
from .mp import NuisanceDraw
from .ppd import CapabilityError

CSV_COLUMNS = (
    "dataset",
    "n",
    "d_x",
    "estimator",
    "variant",
    "rho",
    "tv",
    "ks",
    "r2",
    "var_a",
    "var_b",
    "var_c",
    "seed",
)


@dataclass(frozen=True)
class TvReport:
    tv: float
    posterior_moments: tuple[float, float]
    reference: GaussianLaw
    estimated_reference: bool = False


@dataclass(frozen=True)
class KsReport:
    ks: float
    pits: np.ndarray


@dataclass(frozen=True)
class R2Report:
    r2_hat: float
    mu0_error: float
    mu1_error: float
    inv_pi_error: float


@dataclass(frozen=True)
class VarianceOrderingReport:
    variances: dict[str, float]
    intervals: dict[str, tuple[float, float]]
    ci_separated_a_b: bool
    point_ordered: bool
    ordering_violation: bool


def normal_tv_distance(law_a: GaussianLaw, law_b: GaussianLaw, tol: float = 1e-6) -> float:
    """Total variation between two normal densities by adaptive quadrature."""
    pooled = np.sqrt(0.5 * (law_a.variance + law_b.variance))
    lo = min(law_a.mean, law_b.mean) - 8.0 * pooled
    hi = max(law_a.mean, law_b.mean) + 8.0 * pooled

    def gap(x: float) -> float:
        return abs(
            stats.norm.pdf(x, law_a.mean, law_a.sd) - stats.norm.pdf(x, law_b.mean, law_b.sd)
        )

    value, _ = integrate.quad(
        gap, lo, hi, epsabs=tol, limit=400, points=[law_a.mean, law_b.mean]
    )
    return float(min(max(0.5 * value, 0.0), 1.0))


def tv_to_normal(
    posterior: AtePosterior, reference: GaussianLaw, estimated_reference: bool = False
) -> TvReport:
    """TV between the moment-matched normal surrogate of the posterior draws
    and the reference law.

    The surrogate is exact when the posterior is asymptotically normal,
    which is the regime the metric is meant to detect; it stays stable at
    modest draw counts where a kernel density estimate would not.
    """
    if posterior.n_draws < 30:
        raise ConfigurationError("need at least 30 draws for a moment fit")
    mean = posterior.mean()
    variance = posterior.variance()
    if variance <= 0.0:
        raise DegeneracyError("posterior draws carry no variance")
    fitted = GaussianLaw(mean, variance)
    return TvReport(
        tv=normal_tv_distance(fitted, reference),
        posterior_moments=(mean, variance),
        reference=reference,
        estimated_reference=estimated_reference,
    )


def ks_to_uniform(pits: np.ndarray) -> KsReport:
    """One-sample KS statistic of the PIT values against Uniform(0, 1)."""
    pits = np.asarray(pits, dtype=np.float64)
    if len(pits) < 10:
        raise ConfigurationError("need at least 10 replicates")
    if np.any(pits < 0.0) or np.any(pits > 1.0):
        raise ConfigurationError("PIT values must lie in [0, 1]")
    r = len(pits)
    p = np.sort(pits)
    grid = np.arange(1, r + 1) / r
    ks = max(float(np.max(grid - p)), float(np.max(p - (grid - 1.0 / r))))
    return KsReport(ks=ks, pits=p)


def r2_check(
    draws: Sequence[NuisanceDraw],
    oracle: OracleDGP | None,
    eval_dataset: CausalDataset,
    n: int,
    truncation_floor: float = 0.05,
) -> R2Report:
    """Second-order remainder from the worst posterior draw.

    ``sqrt(n) * max_j ||1/pi_j - 1/pi|| * sum_a max_j ||mu_aj - mu_a||`` with
    L2 norms taken as root mean squares over the evaluation points and
    propensities truncated on both sides for a finite inverse.
    """
    if oracle is None:
        raise CapabilityError("second-order remainder needs oracle nuisances")
    if len(draws) == 0:
        raise ConfigurationError("need at least one nuisance draw")
    mu0, mu1, pi = oracle.nuisances_at(eval_dataset)
    inv_pi = 1.0 / truncate_propensity(pi, truncation_floor)

    def rms(x: np.ndarray) -> float:
        return float(np.sqrt(np.mean(x**2)))

    mu0_err = max(rms(d.mu0_at - mu0) for d in draws)
    mu1_err = max(rms(d.mu1_at - mu1) for d in draws)
    inv_err = max(
        rms(1.0 / truncate_propensity(d.pi_at, truncation_floor) - inv_pi) for d in draws
    )
    r2 = float(np.sqrt(n) * inv_err * (mu0_err + mu1_err))
    return R2Report(r2_hat=r2, mu0_error=mu0_err, mu1_error=mu1_err, inv_pi_error=inv_err)


def variance_decomposition(
    posteriors: Mapping[str, AtePosterior],
    n: int,
    n_boot: int = 2000,
    seed: int = 0,
    ci_level: float = 0.90,
) -> VarianceOrderingReport:
    """Posterior variances per coupling variant with bootstrap intervals.

    Expects the same draw count per variant (paired seeds); the bootstrap
    resamples draw indices jointly across variants so the comparison is a
    common-random-numbers one.  A violated ordering sets a flag rather than
    raising.
    """
    for key in ("x_independent", "x_parallel", "smooth"):
        if key not in posteriors:
            raise ConfigurationError(f"missing posterior for variant {key!r}")
    sizes = {key: p.n_draws for key, p in posteriors.items()}
    if len(set(sizes.values())) != 1:
        raise ConfigurationError(f"variants must share the draw count, got {sizes}")
    b = next(iter(sizes.values()))
    if b < 2:
        raise DegeneracyError("need at least 2 draws per variant")

    variances = {key: p.variance() for key, p in posteriors.items()}
    rng = child_rng(seed, 0xB007)
    idx = rng.integers(0, b, size=(n_boot, b))
    lo_q = (1.0 - ci_level) / 2.0
    intervals: dict[str, tuple[float, float]] = {}
    for key, post in posteriors.items():
        boot = post.draws[idx].var(axis=1, ddof=1)
        intervals[key] = (
            float(np.quantile(boot, lo_q)),
            float(np.quantile(boot, 1.0 - lo_q)),
        )

    ci_separated = intervals["x_independent"][1] < intervals["x_parallel"][0]
    point_ordered = (
        variances["x_independent"] <= variances["smooth"] <= variances["x_parallel"]
    )
    return VarianceOrderingReport(
        variances=variances,
        intervals=intervals,
        ci_separated_a_b=ci_separated,
        point_ordered=point_ordered,
        ordering_violation=not (ci_separated and point_ordered),
    )


def format_cell(value) -> str:
    """Stable scalar formatting for CSV rows (floats via repr round-trip)."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def report_row(**fields) -> dict[str, str]:
    """One serialized metrics row with the stable column set; unknown field
    names are rejected to keep headers consistent."""
    unknown = set(fields) - set(CSV_COLUMNS)
    if unknown:
        raise ConfigurationError(f"unknown report columns: {sorted(unknown)}")
    return {col: format_cell(fields.get(col)) for col in CSV_COLUMNS}
