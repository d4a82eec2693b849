"""Posterior predictive backends for the outcome and treatment models.

Two analytic families are provided behind one behavioural interface:

* ``ConjugateConfig`` -- Bayesian linear regression per treatment arm with a
  normal-inverse-gamma prior, giving closed-form Student-t predictives and an
  exactly martingale sequential update.  The same machinery fit on centered
  treatment labels acts as a linear-probability treatment model.
* ``KernelConfig`` -- Nadaraya-Watson style smoother: a kernel-weighted
  empirical outcome CDF convolved with a Gaussian outcome kernel, and a
  kernel-weighted Beta(1, 1)-Bernoulli treatment model whose predictive
  probability is interior by construction.

Every fitted object is immutable; ``absorb`` returns a new value conditioned
on one extra observation.  For the conjugate family absorb equals a refit on
the augmented data exactly (same sufficient statistics).  For the kernel
family absorb appends the observation under the bandwidths frozen at fit
time, so it differs from a refit only through the rule-of-thumb bandwidth
drift, which is O(1/n) per absorbed point.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import stats
from scipy.linalg import cho_factor, cho_solve

from .data import ArmEmptyError, CausalDataset, ConfigurationError, child_rng


class DegenerateDataError(ValueError):
    """Fitting data cannot identify the model (e.g. constant outcome arm)."""


class CapabilityError(TypeError):
    """Backend does not support the requested operation."""


@dataclass(frozen=True)
class ConjugateConfig:
    """Normal-inverse-gamma linear model configuration.

    ``basis`` is one of ``linear``, ``linear_squares`` or ``rff``.  The prior
    is proper and weakly informative by default: zero coefficient mean, unit
    precision scale, shape 2, rate 2 (finite predictive variance).
    ``prob_clip`` bounds the linear-probability treatment predictive away
    from {0, 1}.
    """

    basis: str = "linear_squares"
    prior_mean: float = 0.0
    prior_precision: float = 1.0
    prior_shape: float = 2.0
    prior_rate: float = 2.0
    rff_features: int = 64
    rff_seed: int = 0
    rff_lengthscale: float = 1.0
    prob_clip: float = 0.01

    def validate(self) -> None:
        if self.basis not in ("linear", "linear_squares", "rff"):
            raise ConfigurationError(f"unknown basis {self.basis!r}")
        if self.prior_precision <= 0 or self.prior_shape <= 0 or self.prior_rate <= 0:
            raise ConfigurationError("prior precision/shape/rate must be positive")
        if not 0 < self.prob_clip < 0.5:
            raise ConfigurationError("prob_clip must be in (0, 0.5)")


@dataclass(frozen=True)
class KernelConfig:
    """Kernel smoother configuration; bandwidth scales multiply the
    rule-of-thumb defaults (Scott for covariates, Silverman for the
    outcome)."""

    covariate_bandwidth_scale: float = 1.0
    outcome_bandwidth_scale: float = 1.0

    def validate(self) -> None:
        if self.covariate_bandwidth_scale <= 0 or self.outcome_bandwidth_scale <= 0:
            raise ConfigurationError("bandwidth scales must be positive")


BackendConfig = ConjugateConfig | KernelConfig


def make_basis(config: ConjugateConfig, d_x: int) -> tuple[Callable[[np.ndarray], np.ndarray], int]:
    """Feature map over standardized covariates; returns (function, width)."""
    if config.basis == "linear":
        def fn(x: np.ndarray) -> np.ndarray:
            x = np.atleast_2d(np.asarray(x, dtype=np.float64))
            return np.concatenate([np.ones((*x.shape[:-1], 1)), x], axis=-1)

        return fn, d_x + 1
    if config.basis == "linear_squares":
        def fn(x: np.ndarray) -> np.ndarray:
            x = np.atleast_2d(np.asarray(x, dtype=np.float64))
            return np.concatenate([np.ones((*x.shape[:-1], 1)), x, x**2], axis=-1)

        return fn, 2 * d_x + 1
    # random Fourier features with a fixed seed so the map is reproducible
    rng = child_rng(config.rff_seed, 0xF0F0)
    w = rng.standard_normal((d_x, config.rff_features)) / config.rff_lengthscale
    b = rng.uniform(0.0, 2.0 * np.pi, config.rff_features)
    scale = np.sqrt(2.0 / config.rff_features)

    def fn(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        feats = scale * np.cos(x @ w + b)
        return np.concatenate([np.ones((*x.shape[:-1], 1)), feats], axis=-1)

    return fn, config.rff_features + 1


class OutcomePredictive(abc.ABC):
    """Pointwise predictive law of the outcome given (x, a).

    Scalar queries define the contract; the ``*_grid`` vector hooks exist so
    downstream samplers can evaluate many points at once and default to the
    scalar path.
    """

    supports_absorb: bool = True

    @abc.abstractmethod
    def predictive_cdf(self, y: float, x: np.ndarray, a: int) -> float: ...

    @abc.abstractmethod
    def predictive_density(self, y: float, x: np.ndarray, a: int) -> float: ...

    @abc.abstractmethod
    def posterior_mean(self, x: np.ndarray, a: int) -> float: ...

    @abc.abstractmethod
    def sample_outcome(self, x: np.ndarray, a: int, rng: np.random.Generator) -> float: ...

    @abc.abstractmethod
    def absorb(self, x: np.ndarray, a: int, y: float) -> "OutcomePredictive": ...

    def cdf_grid(self, points: np.ndarray, a: int, grid: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        out = np.empty_like(grid, dtype=np.float64)
        for i in range(points.shape[0]):
            out[i] = [self.predictive_cdf(float(v), points[i], a) for v in grid[i]]
        return out

    def density_grid(self, points: np.ndarray, a: int, grid: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        out = np.empty_like(grid, dtype=np.float64)
        for i in range(points.shape[0]):
            out[i] = [self.predictive_density(float(v), points[i], a) for v in grid[i]]
        return out

    def posterior_mean_at(self, points: np.ndarray, a: int) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.array([self.posterior_mean(points[i], a) for i in range(points.shape[0])])

    def quantile_band(
        self, points: np.ndarray, a: int, lo: float, hi: float
    ) -> tuple[np.ndarray, np.ndarray]:
        """Per-point predictive quantiles (lo, hi), by bisection on the CDF."""
        points = np.atleast_2d(points)
        lo_b, hi_b = self._bracket(points, a)
        q_lo = _bisect_quantile(self, points, a, lo, lo_b, hi_b)
        q_hi = _bisect_quantile(self, points, a, hi, lo_b, hi_b)
        return q_lo, q_hi

    def _bracket(self, points: np.ndarray, a: int) -> tuple[float, float]:
        return -1e6, 1e6


def _bisect_quantile(
    ppd: OutcomePredictive,
    points: np.ndarray,
    a: int,
    prob: float,
    lo: float,
    hi: float,
    iterations: int = 80,
) -> np.ndarray:
    m = points.shape[0]
    lo_v = np.full(m, lo)
    hi_v = np.full(m, hi)
    for _ in range(iterations):
        mid = 0.5 * (lo_v + hi_v)
        f = ppd.cdf_grid(points, a, mid[:, None])[:, 0]
        below = f < prob
        lo_v = np.where(below, mid, lo_v)
        hi_v = np.where(below, hi_v, mid)
    return 0.5 * (lo_v + hi_v)


class PropensityPredictive(abc.ABC):
    """Pointwise predictive probability of treatment given x."""

    supports_absorb: bool = True

    @abc.abstractmethod
    def predictive_prob(self, x: np.ndarray) -> float: ...

    @abc.abstractmethod
    def absorb(self, x: np.ndarray, a: int) -> "PropensityPredictive": ...

    def prob_at(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.array([self.predictive_prob(points[i]) for i in range(points.shape[0])])


@dataclass(frozen=True)
class _NigState:
    """Sufficient statistics and cached posterior of one NIG regression."""

    xtx: np.ndarray
    xty: np.ndarray
    yty: float
    count: int

    def posterior(self, config: ConjugateConfig, width: int):
        lam0 = config.prior_precision * np.eye(width)
        m0 = np.full(width, config.prior_mean)
        lam = lam0 + self.xtx
        eta = lam0 @ m0 + self.xty
        factor = cho_factor(lam)
        m = cho_solve(factor, eta)
        shape = config.prior_shape + 0.5 * self.count
        rate = config.prior_rate + 0.5 * (
            self.yty + m0 @ lam0 @ m0 - m @ lam @ m
        )
        rate = max(rate, 1e-12)
        return m, factor, shape, rate


def _nig_from_data(features: np.ndarray, targets: np.ndarray) -> _NigState:
    return _NigState(
        xtx=features.T @ features,
        xty=features.T @ targets,
        yty=float(targets @ targets),
        count=len(targets),
    )


def _nig_absorbed(state: _NigState, f: np.ndarray, y: float) -> _NigState:
    return _NigState(
        xtx=state.xtx + np.outer(f, f),
        xty=state.xty + f * y,
        yty=state.yty + y * y,
        count=state.count + 1,
    )


class ConjugateLinearOutcome(OutcomePredictive):
    """Per-arm NIG linear regression with Student-t predictives.

    The predictive at features f is t with df = 2*shape, location f'm and
    scale^2 = (rate/shape) * (1 + f' Lambda^-1 f).  Absorbing one observation
    updates the sufficient statistics exactly, which makes the predictive
    sequence an exact martingale under its own resampling.
    """

    def __init__(
        self,
        config: ConjugateConfig,
        d_x: int,
        states: tuple[_NigState, _NigState],
        _basis=None,
        _posteriors: tuple | None = None,
    ):
        config.validate()
        self._config = config
        self._d_x = d_x
        if _basis is None:
            self._basis, self._width = make_basis(config, d_x)
        else:
            self._basis, self._width = _basis
        self._states = states
        if _posteriors is None:
            self._posteriors = tuple(s.posterior(config, self._width) for s in states)
        else:
            self._posteriors = _posteriors

    @classmethod
    def fit(cls, config: ConjugateConfig, dataset: CausalDataset) -> "ConjugateLinearOutcome":
        dataset.require_estimable()
        basis, _ = make_basis(config, dataset.d_x)
        states = []
        for a in (0, 1):
            idx = dataset.arm_indices(a)
            feats = basis(dataset.covariates[idx])
            states.append(_nig_from_data(feats, dataset.outcomes[idx]))
        return cls(config, dataset.d_x, tuple(states))

    @property
    def config(self) -> ConjugateConfig:
        return self._config

    def sufficient_statistics(self, a: int) -> _NigState:
        return self._states[a]

    def _params_at(self, points: np.ndarray, a: int):
        m, factor, shape, rate = self._posteriors[a]
        feats = self._basis(points)
        loc = feats @ m
        quad = np.einsum("...i,...i->...", feats, cho_solve(factor, feats.T).T)
        scale = np.sqrt((rate / shape) * (1.0 + quad))
        return loc, scale, 2.0 * shape

    def predictive_cdf(self, y, x, a):
        loc, scale, df = self._params_at(np.atleast_2d(x), a)
        return float(stats.t.cdf((y - loc[0]) / scale[0], df))

    def predictive_density(self, y, x, a):
        loc, scale, df = self._params_at(np.atleast_2d(x), a)
        return float(stats.t.pdf((y - loc[0]) / scale[0], df) / scale[0])

    def posterior_mean(self, x, a):
        loc, _, _ = self._params_at(np.atleast_2d(x), a)
        return float(loc[0])

    def sample_outcome(self, x, a, rng):
        loc, scale, df = self._params_at(np.atleast_2d(x), a)
        return float(loc[0] + scale[0] * rng.standard_t(df))

    def absorb(self, x, a, y):
        f = self._basis(np.atleast_2d(x))[0]
        states = list(self._states)
        states[a] = _nig_absorbed(states[a], f, float(y))
        posteriors = list(self._posteriors)
        posteriors[a] = states[a].posterior(self._config, self._width)
        return ConjugateLinearOutcome(
            self._config,
            self._d_x,
            tuple(states),
            _basis=(self._basis, self._width),
            _posteriors=tuple(posteriors),
        )

    def cdf_grid(self, points, a, grid):
        loc, scale, df = self._params_at(np.atleast_2d(points), a)
        return stats.t.cdf((grid - loc[:, None]) / scale[:, None], df)

    def density_grid(self, points, a, grid):
        loc, scale, df = self._params_at(np.atleast_2d(points), a)
        return stats.t.pdf((grid - loc[:, None]) / scale[:, None], df) / scale[:, None]

    def posterior_mean_at(self, points, a):
        loc, _, _ = self._params_at(np.atleast_2d(points), a)
        return loc

    def quantile_band(self, points, a, lo, hi):
        loc, scale, df = self._params_at(np.atleast_2d(points), a)
        return loc + scale * stats.t.ppf(lo, df), loc + scale * stats.t.ppf(hi, df)


class ConjugateLinearPropensity(PropensityPredictive):
    """Linear-probability treatment model under the same NIG machinery.

    Regresses the centered label (a - 1/2) on the basis, so the empty-data
    predictive is exactly 1/2; predictive probabilities are the posterior
    location clipped to [prob_clip, 1 - prob_clip].
    """

    def __init__(self, config: ConjugateConfig, d_x: int, state: _NigState, _basis=None):
        config.validate()
        self._config = config
        self._d_x = d_x
        if _basis is None:
            self._basis, self._width = make_basis(config, d_x)
        else:
            self._basis, self._width = _basis
        self._state = state
        self._posterior = state.posterior(config, self._width)

    @classmethod
    def fit(cls, config: ConjugateConfig, dataset: CausalDataset) -> "ConjugateLinearPropensity":
        feats = (
            make_basis(config, dataset.d_x)[0](dataset.covariates)
            if dataset.n
            else np.zeros((0, make_basis(config, dataset.d_x)[1]))
        )
        state = _nig_from_data(feats, dataset.treatments.astype(np.float64) - 0.5)
        return cls(config, dataset.d_x, state)

    def predictive_prob(self, x):
        return float(self.prob_at(np.atleast_2d(x))[0])

    def prob_at(self, points):
        m, _, _, _ = self._posterior
        loc = self._basis(np.atleast_2d(points)) @ m + 0.5
        c = self._config.prob_clip
        return np.clip(loc, c, 1.0 - c)

    def absorb(self, x, a):
        f = self._basis(np.atleast_2d(x))[0]
        state = _nig_absorbed(self._state, f, float(a) - 0.5)
        return ConjugateLinearPropensity(
            self._config, self._d_x, state, _basis=(self._basis, self._width)
        )


def _scott_bandwidths(x: np.ndarray, scale: float) -> np.ndarray:
    n, d = x.shape
    stds = x.std(axis=0)
    stds[stds == 0.0] = 1.0
    return scale * stds * n ** (-1.0 / (d + 4))


def _log_weights(x: np.ndarray, train: np.ndarray, bandwidths: np.ndarray) -> np.ndarray:
    # (m, n_train); Gaussian product kernel on standardized covariates
    diff = (x[:, None, :] - train[None, :, :]) / bandwidths
    return -0.5 * np.einsum("mnd,mnd->mn", diff, diff)


class KernelOutcome(OutcomePredictive):
    """Kernel-weighted empirical outcome law smoothed with a Gaussian kernel."""

    def __init__(self, config: KernelConfig, arms: tuple[dict, dict]):
        config.validate()
        self._config = config
        self._arms = arms

    @classmethod
    def fit(cls, config: KernelConfig, dataset: CausalDataset) -> "KernelOutcome":
        config.validate()
        dataset.require_estimable()
        arms = []
        for a in (0, 1):
            idx = dataset.arm_indices(a)
            x = dataset.covariates[idx]
            y = dataset.outcomes[idx]
            y_sd = y.std()
            if y_sd == 0.0:
                raise DegenerateDataError(f"all outcomes identical in arm {a}")
            arms.append(
                {
                    "x": x,
                    "y": y,
                    "h_x": _scott_bandwidths(x, config.covariate_bandwidth_scale),
                    "h_y": 1.06 * y_sd * len(y) ** (-0.2) * config.outcome_bandwidth_scale,
                }
            )
        return cls(config, tuple(arms))

    def _weights(self, points: np.ndarray, a: int) -> np.ndarray:
        arm = self._arms[a]
        w = np.exp(_log_weights(np.atleast_2d(points), arm["x"], arm["h_x"]))
        total = w.sum(axis=1, keepdims=True)
        degenerate = total[:, 0] <= 1e-300
        if np.any(degenerate):
            # point too far from every training point: fall back to the arm marginal
            w[degenerate] = 1.0
            total = w.sum(axis=1, keepdims=True)
        return w / total

    def predictive_cdf(self, y, x, a):
        return float(self.cdf_grid(np.atleast_2d(x), a, np.array([[y]]))[0, 0])

    def predictive_density(self, y, x, a):
        return float(self.density_grid(np.atleast_2d(x), a, np.array([[y]]))[0, 0])

    def posterior_mean(self, x, a):
        return float(self.posterior_mean_at(np.atleast_2d(x), a)[0])

    def posterior_mean_at(self, points, a):
        w = self._weights(np.atleast_2d(points), a)
        return w @ self._arms[a]["y"]

    def cdf_grid(self, points, a, grid):
        arm = self._arms[a]
        w = self._weights(np.atleast_2d(points), a)
        out = np.empty_like(grid, dtype=np.float64)
        for i in range(out.shape[0]):
            z = (grid[i][:, None] - arm["y"][None, :]) / arm["h_y"]
            out[i] = stats.norm.cdf(z) @ w[i]
        return out

    def density_grid(self, points, a, grid):
        arm = self._arms[a]
        w = self._weights(np.atleast_2d(points), a)
        out = np.empty_like(grid, dtype=np.float64)
        for i in range(out.shape[0]):
            z = (grid[i][:, None] - arm["y"][None, :]) / arm["h_y"]
            out[i] = (stats.norm.pdf(z) @ w[i]) / arm["h_y"]
        return out

    def sample_outcome(self, x, a, rng):
        arm = self._arms[a]
        w = self._weights(np.atleast_2d(x), a)[0]
        i = rng.choice(len(w), p=w)
        return float(arm["y"][i] + arm["h_y"] * rng.standard_normal())

    def absorb(self, x, a, y):
        # bandwidths stay frozen at their fit-time values
        arms = list(self._arms)
        arm = dict(arms[a])
        arm["x"] = np.vstack([arm["x"], np.atleast_2d(x)])
        arm["y"] = np.append(arm["y"], float(y))
        arms[a] = arm
        return KernelOutcome(self._config, tuple(arms))

    def _bracket(self, points, a):
        arm = self._arms[a]
        pad = 40.0 * arm["h_y"]
        return float(arm["y"].min() - pad), float(arm["y"].max() + pad)


class KernelPropensity(PropensityPredictive):
    """Kernel-weighted Beta(1,1)-Bernoulli treatment model.

    predictive_prob(x) = (1 + sum_i w_i a_i) / (2 + sum_i w_i), which is
    strictly interior for any weights; with no data it is the prior mean 1/2.
    """

    def __init__(self, config: KernelConfig, x: np.ndarray, a: np.ndarray, h_x: np.ndarray):
        config.validate()
        self._config = config
        self._x = x
        self._a = a
        self._h_x = h_x

    @classmethod
    def fit(cls, config: KernelConfig, dataset: CausalDataset) -> "KernelPropensity":
        x = dataset.covariates
        if dataset.n:
            h = _scott_bandwidths(x, config.covariate_bandwidth_scale)
        else:
            h = np.ones(max(dataset.d_x, 1))
        return cls(config, x, dataset.treatments.astype(np.float64), h)

    def predictive_prob(self, x):
        return float(self.prob_at(np.atleast_2d(x))[0])

    def prob_at(self, points):
        points = np.atleast_2d(points)
        if len(self._a) == 0:
            return np.full(points.shape[0], 0.5)
        w = np.exp(_log_weights(points, self._x, self._h_x))
        return (1.0 + w @ self._a) / (2.0 + w.sum(axis=1))

    def absorb(self, x, a):
        return KernelPropensity(
            self._config,
            np.vstack([self._x, np.atleast_2d(x)]) if len(self._a) else np.atleast_2d(x),
            np.append(self._a, float(a)),
            self._h_x,
        )


def fit_outcome(config: BackendConfig, dataset: CausalDataset) -> OutcomePredictive:
    """Fit the outcome predictive; arms are modelled as separate conditional
    laws (T-learner composition)."""
    if isinstance(config, ConjugateConfig):
        return ConjugateLinearOutcome.fit(config, dataset)
    if isinstance(config, KernelConfig):
        return KernelOutcome.fit(config, dataset)
    raise ConfigurationError(f"unknown backend config {type(config).__name__}")


def fit_propensity(config: BackendConfig, dataset: CausalDataset) -> PropensityPredictive:
    if isinstance(config, ConjugateConfig):
        return ConjugateLinearPropensity.fit(config, dataset)
    if isinstance(config, KernelConfig):
        return KernelPropensity.fit(config, dataset)
    raise ConfigurationError(f"unknown backend config {type(config).__name__}")
