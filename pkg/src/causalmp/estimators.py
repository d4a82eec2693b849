"""ATE estimators: plug-in, one-step corrected (A-IPTW), and their Bayesian
bootstrap counterparts over functional nuisance draws.

Notation used throughout: per-unit influence value
``xi = (a - pi)/(pi (1 - pi)) * (y - mu_a) + mu1 - mu0`` (uncentered); the
centered influence function is ``xi - psi``.  The A-IPTW estimate is exactly
the sample mean of ``xi``, and its reference normal has variance
``Var[xi]/n``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import ArmEmptyError, CausalDataset, ConfigurationError, child_rng
from .mp import NuisanceDraw

DEFAULT_TRUNCATION = 0.05


class DegeneracyError(ValueError):
    """Inputs carry no variance where an estimator needs some."""


@dataclass(frozen=True)
class EifInputs:
    """Nuisance values and observations aligned on one evaluation split."""

    mu0_at: np.ndarray
    mu1_at: np.ndarray
    pi_at: np.ndarray
    treatments: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self):
        n = len(self.outcomes)
        for name in ("mu0_at", "mu1_at", "pi_at", "treatments"):
            if len(getattr(self, name)) != n:
                raise ConfigurationError(f"{name} length differs from outcomes")
        if np.any(self.pi_at <= 0.0) or np.any(self.pi_at >= 1.0):
            raise ConfigurationError("pi_at must be strictly inside (0, 1); truncate first")

    @property
    def n(self) -> int:
        return len(self.outcomes)


@dataclass(frozen=True)
class GaussianLaw:
    """Normal reference law (mean, variance) for asymptotic comparisons."""

    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0.0:
            raise DegeneracyError(f"variance must be positive, got {self.variance}")

    @property
    def sd(self) -> float:
        return float(np.sqrt(self.variance))


@dataclass(frozen=True)
class AtePosterior:
    """Scalar ATE draws plus provenance metadata."""

    draws: np.ndarray
    kind: str
    variant: str | None = None
    rho: float | None = None
    seed: int | None = None

    @property
    def n_draws(self) -> int:
        return len(self.draws)

    def mean(self) -> float:
        return float(self.draws.mean())

    def variance(self) -> float:
        if self.n_draws < 2:
            raise DegeneracyError("need at least 2 draws for a variance")
        return float(self.draws.var(ddof=1))

    def sd(self) -> float:
        return float(np.sqrt(self.variance()))

    def pit(self, value: float) -> float:
        """Empirical CDF at ``value`` with the midpoint tie convention
        (rank - 1/2)/B, which keeps PIT mass off {0, 1} under ties."""
        below = float(np.sum(self.draws < value))
        ties = float(np.sum(self.draws == value))
        return (below + 0.5 * ties) / self.n_draws


def truncate_propensity(pi: np.ndarray, floor: float = DEFAULT_TRUNCATION) -> np.ndarray:
    """Clamp propensities into [floor, 1 - floor]; idempotent."""
    if not 0.0 < floor < 0.5:
        raise ConfigurationError(f"truncation floor must be in (0, 0.5), got {floor}")
    return np.clip(np.asarray(pi, dtype=np.float64), floor, 1.0 - floor)


def uncentered_eif(inputs: EifInputs) -> np.ndarray:
    """Per-unit uncentered influence values xi(z; eta)."""
    a = inputs.treatments.astype(np.float64)
    mu_a = np.where(inputs.treatments == 1, inputs.mu1_at, inputs.mu0_at)
    resid = (a - inputs.pi_at) / (inputs.pi_at * (1.0 - inputs.pi_at))
    return resid * (inputs.outcomes - mu_a) + inputs.mu1_at - inputs.mu0_at


def eif(inputs: EifInputs, psi: float) -> np.ndarray:
    """Efficient influence function values centered at ``psi``."""
    return uncentered_eif(inputs) - psi


def plug_in_estimate(mu0_at: np.ndarray, mu1_at: np.ndarray) -> float:
    if len(mu0_at) == 0 or len(mu1_at) == 0:
        raise ConfigurationError("nuisance vectors must be non-empty")
    return float(np.mean(np.asarray(mu1_at) - np.asarray(mu0_at)))


def aiptw(inputs: EifInputs) -> tuple[float, GaussianLaw]:
    """One-step corrected estimate and its asymptotic normal reference.

    The estimate is plug-in + mean(eif at the plug-in), which collapses to
    mean(xi); the reference variance is the empirical variance of xi
    (centered at the final estimate) divided by n.
    """
    xi = uncentered_eif(inputs)
    estimate = float(xi.mean())
    if inputs.n < 2:
        raise DegeneracyError("need at least 2 units")
    variance = float(np.sum((xi - estimate) ** 2) / (inputs.n - 1)) / inputs.n
    if variance <= 0.0:
        raise DegeneracyError("influence values carry no variance")
    return estimate, GaussianLaw(estimate, variance)


def bb_weights(n: int, rng: np.random.Generator) -> np.ndarray:
    """One Dirichlet(1, ..., 1) weight vector via normalized exponentials."""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    g = rng.standard_exponential(n)
    return g / g.sum()


def plug_in_posterior(
    draws: Sequence[NuisanceDraw],
    dataset: CausalDataset,
    rng: np.random.Generator,
    variant: str | None = None,
    rho: float | None = None,
) -> AtePosterior:
    """Bayesian-bootstrap push-forward of the plug-in contrast.

    Each posterior draw pairs one nuisance draw with one fresh independent
    weight vector.
    """
    if len(draws) == 0:
        raise ConfigurationError("need at least one nuisance draw")
    values = np.empty(len(draws))
    for j, draw in enumerate(draws):
        w = bb_weights(dataset.n, rng)
        values[j] = float(w @ (draw.mu1_at - draw.mu0_at))
    return AtePosterior(values, kind="plug_in", variant=variant, rho=rho)


def ospc_posterior(
    draws: Sequence[NuisanceDraw],
    dataset: CausalDataset,
    rng: np.random.Generator,
    truncation_floor: float = DEFAULT_TRUNCATION,
    variant: str | None = None,
    rho: float | None = None,
) -> AtePosterior:
    """One-step-corrected posterior: Bayesian bootstrap of the uncentered
    influence values under each nuisance draw, with propensities truncated
    inside every draw."""
    if len(draws) == 0:
        raise ConfigurationError("need at least one nuisance draw")
    dataset.require_estimable()
    values = np.empty(len(draws))
    for j, draw in enumerate(draws):
        inputs = EifInputs(
            mu0_at=draw.mu0_at,
            mu1_at=draw.mu1_at,
            pi_at=truncate_propensity(draw.pi_at, truncation_floor),
            treatments=dataset.treatments,
            outcomes=dataset.outcomes,
        )
        xi = uncentered_eif(inputs)
        w = bb_weights(dataset.n, rng)
        values[j] = float(w @ xi)
    return AtePosterior(values, kind="ospc", variant=variant, rho=rho)


def stratified_folds(dataset: CausalDataset, k: int, seed: int) -> np.ndarray:
    """Fold labels in [0, k), spread within each arm; deterministic."""
    if k < 2:
        raise ConfigurationError("need k >= 2 folds")
    if k > dataset.n:
        raise ConfigurationError(f"k={k} exceeds dataset size {dataset.n}")
    rng = child_rng(seed, 0xF01D)
    labels = np.empty(dataset.n, dtype=np.int64)
    for arm in (0, 1):
        idx = rng.permutation(dataset.arm_indices(arm))
        labels[idx] = np.arange(len(idx)) % k
    return labels


def cross_fit(
    dataset: CausalDataset,
    k: int,
    nuisance_fitter: Callable[[CausalDataset, CausalDataset], tuple[np.ndarray, np.ndarray, np.ndarray]],
    seed: int = 0,
    truncation_floor: float = DEFAULT_TRUNCATION,
) -> tuple[float, GaussianLaw, EifInputs]:
    """K-fold cross-fitted one-step estimator.

    ``nuisance_fitter(train, evaluation)`` returns (mu0, mu1, pi) at the
    evaluation rows after fitting on the complement.  Per-unit values are
    reassembled in the original row order, so the pooled estimate does not
    depend on fold order.
    """
    dataset.require_estimable()
    labels = stratified_folds(dataset, k, seed)
    mu0 = np.empty(dataset.n)
    mu1 = np.empty(dataset.n)
    pi = np.empty(dataset.n)
    for fold in range(k):
        eval_idx = np.flatnonzero(labels == fold)
        train_idx = np.flatnonzero(labels != fold)
        if len(eval_idx) == 0:
            continue
        train = dataset.subset(train_idx)
        try:
            train.require_estimable()
        except ArmEmptyError as exc:
            raise ArmEmptyError(f"fold {fold}: training complement lost an arm") from exc
        m0, m1, p = nuisance_fitter(train, dataset.subset(eval_idx))
        mu0[eval_idx] = m0
        mu1[eval_idx] = m1
        pi[eval_idx] = p
    inputs = EifInputs(
        mu0_at=mu0,
        mu1_at=mu1,
        pi_at=truncate_propensity(pi, truncation_floor),
        treatments=dataset.treatments,
        outcomes=dataset.outcomes,
    )
    estimate, law = aiptw(inputs)
    return estimate, law, inputs


def oracle_eif_inputs(
    dataset: CausalDataset,
    mu0_at: np.ndarray,
    mu1_at: np.ndarray,
    pi_at: np.ndarray,
    truncation_floor: float = DEFAULT_TRUNCATION,
) -> EifInputs:
    """Convenience assembly of EifInputs from given nuisance values."""
    return EifInputs(
        mu0_at=np.asarray(mu0_at, dtype=np.float64),
        mu1_at=np.asarray(mu1_at, dtype=np.float64),
        pi_at=truncate_propensity(pi_at, truncation_floor),
        treatments=dataset.treatments,
        outcomes=dataset.outcomes,
    )
