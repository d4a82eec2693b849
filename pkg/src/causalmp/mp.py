"""Copula-driven martingale-posterior updates over pointwise predictives.

One functional posterior draw of the nuisances (mu0, mu1, pi) is produced by
running a chain of multiplicative predictive updates.  At every step a pseudo
covariate/treatment pair is resampled from the training data; each tracked
predictive law is reweighted by ``1 - a + a * c_rho(q, r)`` where ``q`` is its
own CDF, ``r`` is a probability-integral-transform uniform (drawn directly,
which is distributionally equivalent to drawing a pseudo outcome and
transforming it), and ``a`` is a localization weight that decays with the
copula distance between the tracked point and the resampled point.  The
update weight index continues from the size of the conditioning sample, so
chains started from larger datasets move less and the induced posteriors
contract.

The treatment-probability chain uses the Bernoulli analogue: a pseudo label
is drawn, and each tracked probability is multiplied by a mixture-copula
factor in which the second argument is the predictive probability of the
drawn label at the drawn point.  That choice keeps the update exactly
mass-preserving and exactly martingale (the uniform-PIT shortcut only applies
to continuous outcomes).

How the per-step uniforms are shared across evaluation points is the
coupling variant; it changes the joint law of a functional draw but not any
single point's marginal:

* ``x_independent`` -- fresh uniform per evaluation point,
* ``x_parallel``    -- one uniform shared by every evaluation point,
* ``smooth``        -- uniforms from a latent equicorrelated Gaussian field
  (pairwise latent correlation ``rho``), so evaluation points co-move
  partially.

All variants share one uniform across a state's whole value grid, which is
what pins the pointwise marginals to a common law.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, ndtr, ndtri

from .data import CausalDataset, ConfigurationError, child_rng, child_seed
from .ppd import CapabilityError, OutcomePredictive, PropensityPredictive

UNIT_CLAMP = (1e-9, 1.0 - 1e-9)
PROP_CLAMP = (1e-4, 1.0 - 1e-4)
GRID_QUANTILES = (0.001, 0.999)
# the 0.001-0.999 quantile band is padded on both sides: a capped update with
# a taper-extreme innovation tilts up to ~2% of its mass toward the band edge,
# and the grid has to keep that mass on-support to hold the drift guard
GRID_PAD = 0.2
NEAREST_EVAL_RADIUS = 3.0
# innovation scores are tapered at the 0.05% normal tails: a more extreme
# score would tilt a predictive so hard into its own tail that the fixed
# grid's trapezoid quadrature leaves its accuracy budget
SCORE_TAPER = 3.29

VARIANTS = ("x_independent", "x_parallel", "smooth")


class DomainError(ValueError):
    """Copula argument outside its open domain."""


class NumericalInstabilityError(RuntimeError):
    """Predictive mass drifted beyond tolerance before renormalization."""

    def __init__(self, step: int, drift: float):
        super().__init__(f"normalization drift {drift:.3e} beyond 1e-3 at step {step}")
        self.step = step
        self.drift = drift


def _check_unit_interior(*arrays: np.ndarray) -> None:
    for arr in arrays:
        if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0):
            raise DomainError("arguments must lie strictly inside (0, 1)")


def _log_gaussian_copula(zu: np.ndarray, zv: np.ndarray, rho: float) -> np.ndarray:
    r2 = rho * rho
    return -0.5 * np.log1p(-r2) - (r2 * (zu * zu + zv * zv) - 2.0 * rho * zu * zv) / (
        2.0 * (1.0 - r2)
    )


def gaussian_copula_density(u, v, rho: float):
    """Bivariate Gaussian copula density c_rho(u, v) on (0,1)^2."""
    if not 0.0 < rho < 1.0:
        raise DomainError(f"rho must be in (0, 1), got {rho}")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_unit_interior(u, v)
    out = np.exp(_log_gaussian_copula(ndtri(u), ndtri(v), rho))
    return float(out) if out.ndim == 0 else out


def bb_mixture_copula(u, v, rho: float, match):
    """Bernoulli mixture copula factor.

    ``match`` selects between the matched-label branch
    ``1 - rho + rho * min(u, v) / (u v)`` and the opposite-label branch
    ``1 - rho + rho * (u - min(u, 1 - v)) / (u v)``.
    """
    if not 0.0 < rho < 1.0:
        raise DomainError(f"rho must be in (0, 1), got {rho}")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_unit_interior(u, v)
    match = np.asarray(match, dtype=bool)
    same = 1.0 - rho + rho * np.minimum(u, v) / (u * v)
    diff = 1.0 - rho + rho * (u - np.minimum(u, 1.0 - v)) / (u * v)
    out = np.where(match, same, diff)
    return float(out) if out.ndim == 0 else out


def alpha_schedule(index: int) -> float:
    """Update weight of the index-th predictive observation: (2 - 1/N)/(N+1)."""
    if index < 1:
        raise DomainError(f"schedule index must be >= 1, got {index}")
    return (2.0 - 1.0 / index) / (index + 1.0)


def alpha_weight(v: np.ndarray, v_new: np.ndarray, index: int, rho: float):
    """Localized update weight in (0, 1).

    The per-coordinate copula densities are evaluated at the normal scores of
    the standardized covariates (Phi then Phi^-1 cancel) and combined in log
    space, so far-apart points cannot overflow.
    """
    v = np.asarray(v, dtype=np.float64)
    v_new = np.asarray(v_new, dtype=np.float64)
    if np.any(~np.isfinite(v)) or np.any(~np.isfinite(v_new)):
        raise DomainError("covariate coordinates must be finite")
    if v.shape[-1] != v_new.shape[-1]:
        raise DomainError("coordinate vectors must have equal length")
    base = alpha_schedule(index)
    logprod = _log_gaussian_copula(v, v_new, rho).sum(axis=-1)
    out = expit(np.log(base / (1.0 - base)) + logprod)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class CopulaConfig:
    """Chain configuration.

    ``alpha_offset`` is the predictive index the first update continues
    from; ``None`` means the size of the conditioning dataset, which is what
    makes posteriors contract as the data grows.  ``localization_rho`` is the
    correlation of the per-coordinate localization product (defaults to
    ``rho``); with many covariates the product's weight dispersion explodes,
    which starves cross-point coupling, and a milder localization value keeps
    update weights comparable across evaluation points.
    """

    rho: float = 0.5
    variant: str = "smooth"
    steps: int = 100
    draws: int = 100
    grid_size: int = 201
    alpha_offset: int | None = None
    max_step_weight: float = 0.1
    localization_rho: float | None = None

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ConfigurationError(f"rho must be strictly inside (0, 1), got {self.rho}")
        if self.localization_rho is not None and not 0.0 < self.localization_rho < 1.0:
            raise ConfigurationError("localization_rho must be strictly inside (0, 1)")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.steps < 0:
            raise ConfigurationError("steps must be >= 0")
        if self.draws < 1:
            raise ConfigurationError("draws must be >= 1")
        if self.grid_size < 2:
            raise ConfigurationError("grid_size must be >= 2")
        if self.alpha_offset is not None and self.alpha_offset < 0:
            raise ConfigurationError("alpha_offset must be >= 0")
        if not 0.0 < self.max_step_weight <= 1.0:
            raise ConfigurationError("max_step_weight must be in (0, 1]")


@dataclass(frozen=True)
class PredictiveState:
    """Discretized predictive law at one evaluation point."""

    y_grid: np.ndarray
    density: np.ndarray
    cdf: np.ndarray
    eval_point: tuple[np.ndarray, int]

    def mass(self) -> float:
        return float(np.trapz(self.density, self.y_grid))

    def mean(self) -> float:
        return float(np.trapz(self.y_grid * self.density, self.y_grid))

    def validate(self, tol: float = 1e-6) -> None:
        if abs(self.mass() - 1.0) > tol:
            raise NumericalInstabilityError(0, abs(self.mass() - 1.0))
        running = _cumtrapz0(self.density[None, :], _grid_spacing(self.y_grid[None, :]))[0]
        if np.max(np.abs(running - self.cdf)) > tol:
            raise NumericalInstabilityError(0, float(np.max(np.abs(running - self.cdf))))


@dataclass(frozen=True)
class PropensityState:
    """Treatment-probability value tracked at one evaluation point."""

    p: float
    eval_point: np.ndarray

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise DomainError(f"propensity state must be interior, got {self.p}")


@dataclass(frozen=True)
class NuisanceDraw:
    """One joint functional posterior draw evaluated at the test points."""

    mu0_at: np.ndarray
    mu1_at: np.ndarray
    pi_at: np.ndarray
    draw_seed: int


def _localization_rho(config: "CopulaConfig") -> float:
    return config.rho if config.localization_rho is None else config.localization_rho


def _grid_spacing(y_grid: np.ndarray) -> np.ndarray:
    return y_grid[..., 1] - y_grid[..., 0]


def _trapz_uniform(values: np.ndarray, dy: np.ndarray) -> np.ndarray:
    body = values.sum(axis=-1) - 0.5 * (values[..., 0] + values[..., -1])
    return body * dy


def _cumtrapz0(density: np.ndarray, dy: np.ndarray) -> np.ndarray:
    increments = 0.5 * (density[..., 1:] + density[..., :-1]) * dy[..., None]
    out = np.zeros_like(density)
    np.cumsum(increments, axis=-1, out=out[..., 1:])
    return out


def _field_scores(variant: str, n_points: int, rng: np.random.Generator, rho: float) -> np.ndarray:
    """Latent normal scores of the per-step innovations, one per eval point.

    The smooth variant combines a global component with per-point noise
    (pairwise latent correlation ``rho``), so every variant has the same
    standard-normal marginal and they differ only across points.
    """
    if variant == "x_independent":
        z = rng.standard_normal(n_points)
    elif variant == "x_parallel":
        z = np.broadcast_to(rng.standard_normal(1), (n_points,)).copy()
    else:
        g = rng.standard_normal(1)
        e = rng.standard_normal(n_points)
        z = np.sqrt(rho) * g + np.sqrt(1.0 - rho) * e
    return np.clip(z, -SCORE_TAPER, SCORE_TAPER)


def r_source(variant: str, n_points: int, rng: np.random.Generator, rho: float = 0.5) -> np.ndarray:
    """Per-step coupling uniforms for ``n_points`` evaluation points.

    Each entry is marginally Uniform(0, 1) in every variant; the variants
    differ only in the dependence across entries.
    """
    if variant not in VARIANTS:
        raise ConfigurationError(f"variant must be one of {VARIANTS}, got {variant!r}")
    return ndtr(_field_scores(variant, n_points, rng, rho))


def _copula_update(
    density: np.ndarray,
    cdf: np.ndarray,
    dy: np.ndarray,
    z_r: np.ndarray,
    alpha: np.ndarray,
    rho: float,
    step: int,
) -> tuple[np.ndarray, np.ndarray]:
    # CDF values at or beyond the domain clamp are boundary values (the grid
    # ends carry exactly 0 and 1); the copula density's limit there is 0, and
    # evaluating it at the clamp instead would plant huge spurious factors on
    # near-zero tail mass.
    interior = (cdf > UNIT_CLAMP[0]) & (cdf < UNIT_CLAMP[1])
    q = np.clip(cdf, *UNIT_CLAMP)
    zq = ndtri(q)
    c = np.exp(_log_gaussian_copula(zq, z_r, rho))
    u = 1.0 - alpha + alpha * np.where(interior, c, 0.0)
    new_density = density * u
    mass = _trapz_uniform(new_density, dy)
    drift = np.max(np.abs(mass - 1.0))
    if drift > 1e-3:
        raise NumericalInstabilityError(step, float(drift))
    new_density = new_density / mass[..., None]
    return new_density, _cumtrapz0(new_density, dy)


def _propensity_factor(p: np.ndarray, v: np.ndarray, rho: float, match: np.ndarray) -> np.ndarray:
    u = np.clip(p, *UNIT_CLAMP)
    v = np.clip(v, *UNIT_CLAMP)
    same = 1.0 - rho + rho * np.minimum(u, v) / (u * v)
    diff = 1.0 - rho + rho * (u - np.minimum(u, 1.0 - v)) / (u * v)
    return np.where(match, same, diff)


def mp_step_outcome(
    states: Sequence[PredictiveState],
    dataset: CausalDataset,
    step: int,
    config: CopulaConfig,
    rng: np.random.Generator,
    r_values: np.ndarray | None = None,
) -> list[PredictiveState]:
    """One coupled update of a collection of outcome predictive states.

    Resamples one (x, a) pair from the training data and updates the states
    whose arm matches; ``r_values`` (one uniform per state) can be injected
    for testing, otherwise they come from :func:`r_source`.
    """
    if step < 1:
        raise ConfigurationError("step must be >= 1")
    i = int(rng.integers(dataset.n))
    x_new = dataset.covariates[i]
    a_new = int(dataset.treatments[i])
    if r_values is None:
        r_values = r_source(config.variant, len(states), rng, config.rho)
    offset = dataset.n if config.alpha_offset is None else config.alpha_offset
    index = offset + step

    out: list[PredictiveState] = []
    for state, r in zip(states, r_values):
        x, a = state.eval_point
        if a != a_new:
            out.append(state)
            continue
        alpha = min(
            alpha_weight(x, x_new, index, _localization_rho(config)), config.max_step_weight
        )
        z_r = ndtri(np.clip(r, *UNIT_CLAMP))
        dy = _grid_spacing(state.y_grid[None, :])
        dens, cdf = _copula_update(
            state.density[None, :],
            state.cdf[None, :],
            dy,
            np.asarray(z_r).reshape(1, 1),
            np.asarray(alpha).reshape(1, 1),
            config.rho,
            step,
        )
        out.append(PredictiveState(state.y_grid, dens[0], cdf[0], state.eval_point))
    return out


def mp_step_propensity(
    states: Sequence[PropensityState],
    dataset: CausalDataset,
    step: int,
    config: CopulaConfig,
    rng: np.random.Generator,
) -> tuple[list[PropensityState], int]:
    """One coupled update of the treatment-probability states.

    Returns the updated states and the number of clamp activations.  The
    pseudo label is drawn from the tracked probability nearest (in
    standardized Euclidean distance) to the resampled covariate point,
    falling back to the empirical treated fraction when nothing is within
    NEAREST_EVAL_RADIUS.
    """
    if step < 1:
        raise ConfigurationError("step must be >= 1")
    i = int(rng.integers(dataset.n))
    x_new = dataset.covariates[i]
    offset = dataset.n if config.alpha_offset is None else config.alpha_offset
    index = offset + step

    points = np.stack([s.eval_point for s in states])
    dists = np.sqrt(((points - x_new) ** 2).sum(axis=1))
    nearest = int(np.argmin(dists))
    if dists[nearest] <= NEAREST_EVAL_RADIUS:
        q = states[nearest].p
    else:
        q = float(np.clip(dataset.treated_fraction(), *PROP_CLAMP))
    a_new = 1 if rng.random() < q else 0
    v = q if a_new == 1 else 1.0 - q

    clamps = 0
    out: list[PropensityState] = []
    for state in states:
        alpha = min(
            alpha_weight(state.eval_point, x_new, index, _localization_rho(config)),
            config.max_step_weight,
        )
        factor = _propensity_factor(
            np.asarray(state.p), np.asarray(v), config.rho, np.asarray(a_new == 1)
        )
        p = state.p * (1.0 - alpha + alpha * float(factor))
        if not PROP_CLAMP[0] <= p <= PROP_CLAMP[1]:
            clamps += 1
            p = float(np.clip(p, *PROP_CLAMP))
        out.append(PropensityState(p, state.eval_point))
    return out, clamps


def initial_outcome_states(
    outcome: OutcomePredictive, eval_points: np.ndarray, arm: int, grid_size: int
) -> list[PredictiveState]:
    """Discretize the fitted predictive on per-point quantile-spanned grids."""
    eval_points = np.atleast_2d(eval_points)
    lo, hi = outcome.quantile_band(eval_points, arm, *GRID_QUANTILES)
    hi = np.maximum(hi, lo + 1e-9)
    pad = GRID_PAD * (hi - lo)
    grids = np.linspace(lo - pad, hi + pad, grid_size, axis=-1)
    dens = outcome.density_grid(eval_points, arm, grids)
    dy = _grid_spacing(grids)
    dens = dens / _trapz_uniform(dens, dy)[:, None]
    cdfs = _cumtrapz0(dens, dy)
    return [
        PredictiveState(grids[m], dens[m], cdfs[m], (eval_points[m], arm))
        for m in range(eval_points.shape[0])
    ]


def initial_propensity_states(
    propensity: PropensityPredictive, eval_points: np.ndarray
) -> list[PropensityState]:
    eval_points = np.atleast_2d(eval_points)
    p0 = np.clip(propensity.prob_at(eval_points), *PROP_CLAMP)
    return [PropensityState(float(p0[m]), eval_points[m]) for m in range(eval_points.shape[0])]


class _ChainWorkspace:
    """Quantities shared by every draw: base grids, base predictives, the
    localization log-weight lookup and the nearest-eval-point lookup."""

    def __init__(
        self,
        outcome: OutcomePredictive,
        propensity: PropensityPredictive,
        dataset: CausalDataset,
        eval_points: np.ndarray,
        config: CopulaConfig,
    ):
        eval_points = np.atleast_2d(np.asarray(eval_points, dtype=np.float64))
        self.eval_points = eval_points
        self.n_points = eval_points.shape[0]
        self.config = config
        self.dataset = dataset
        self.offset = dataset.n if config.alpha_offset is None else config.alpha_offset

        self.grids = []
        self.dy = []
        self.base_density = []
        self.base_cdf = []
        for a in (0, 1):
            lo, hi = outcome.quantile_band(eval_points, a, *GRID_QUANTILES)
            hi = np.maximum(hi, lo + 1e-9)
            pad = GRID_PAD * (hi - lo)
            grid = np.linspace(lo - pad, hi + pad, config.grid_size, axis=-1)
            dy = _grid_spacing(grid)
            dens = outcome.density_grid(eval_points, a, grid)
            dens = dens / _trapz_uniform(dens, dy)[:, None]
            self.grids.append(grid)
            self.dy.append(dy)
            self.base_density.append(dens)
            self.base_cdf.append(_cumtrapz0(dens, dy))
        self.base_prop = np.clip(propensity.prob_at(eval_points), *PROP_CLAMP)

        train = dataset.covariates
        n = dataset.n
        self.log_local = np.empty((n, self.n_points))
        nearest = np.empty(n, dtype=np.int64)
        nearest_dist = np.empty(n)
        chunk = max(1, int(2_000_000 / max(self.n_points, 1)))
        for start in range(0, n, chunk):
            stop = min(n, start + chunk)
            block = train[start:stop, None, :]  # (c, 1, d)
            pts = eval_points[None, :, :]  # (1, M, d)
            self.log_local[start:stop] = _log_gaussian_copula(
                block, pts, _localization_rho(config)
            ).sum(axis=-1)
            d2 = ((block - pts) ** 2).sum(axis=-1)
            nearest[start:stop] = np.argmin(d2, axis=1)
            nearest_dist[start:stop] = np.sqrt(d2[np.arange(stop - start), nearest[start:stop]])
        self.nearest = nearest
        self.nearest_ok = nearest_dist <= NEAREST_EVAL_RADIUS
        self.treated_freq = float(np.clip(dataset.treated_fraction(), *PROP_CLAMP))

    def run(self, draw_seeds: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict]:
        """Run the chains for the given draws; returns (mu0, mu1, pi, diag)."""
        cfg = self.config
        n_draws = len(draw_seeds)
        n = self.dataset.n
        steps = cfg.steps
        m = self.n_points

        # per-draw randomness, derived in a fixed order from each draw's seed
        idx = np.empty((n_draws, steps), dtype=np.int64)
        scores = np.empty((n_draws, steps, m))
        prop_u = np.empty((n_draws, steps))
        for j, seed in enumerate(draw_seeds):
            rng = child_rng(seed)
            idx[j] = rng.integers(0, n, size=steps)
            for k in range(steps):
                scores[j, k] = _field_scores(cfg.variant, m, rng, cfg.rho)
            prop_u[j] = rng.random(steps)

        dens = [np.repeat(self.base_density[a][None, :, :], n_draws, axis=0) for a in (0, 1)]
        cdf = [np.repeat(self.base_cdf[a][None, :, :], n_draws, axis=0) for a in (0, 1)]
        prop = np.repeat(self.base_prop[None, :], n_draws, axis=0)
        treatments = self.dataset.treatments
        clamp_count = 0
        rows_all = np.arange(n_draws)

        for k in range(steps):
            step_idx = idx[:, k]
            arms = treatments[step_idx]
            base = alpha_schedule(self.offset + k + 1)
            logit_base = np.log(base / (1.0 - base))
            alpha = expit(logit_base + self.log_local[step_idx])  # (n_draws, m)
            np.minimum(alpha, cfg.max_step_weight, out=alpha)
            z_r = scores[:, k]

            for a in (0, 1):
                rows = rows_all[arms == a]
                if rows.size == 0:
                    continue
                new_d, new_c = _copula_update(
                    dens[a][rows],
                    cdf[a][rows],
                    self.dy[a],
                    z_r[rows][:, :, None],
                    alpha[rows][:, :, None],
                    cfg.rho,
                    k + 1,
                )
                dens[a][rows] = new_d
                cdf[a][rows] = new_c

            near = self.nearest[step_idx]
            ok = self.nearest_ok[step_idx]
            q = np.where(ok, prop[rows_all, near], self.treated_freq)
            a_new = prop_u[:, k] < q
            v = np.where(a_new, q, 1.0 - q)[:, None]
            factor = _propensity_factor(prop, v, cfg.rho, a_new[:, None])
            prop = prop * (1.0 - alpha + alpha * factor)
            outside = (prop < PROP_CLAMP[0]) | (prop > PROP_CLAMP[1])
            clamp_count += int(outside.sum())
            np.clip(prop, *PROP_CLAMP, out=prop)

        mu = []
        for a in (0, 1):
            mu.append(_trapz_uniform(self.grids[a] * dens[a], self.dy[a]))
        return mu[0], mu[1], prop, {"propensity_clamps": clamp_count}


def sample_nuisance_draws(
    outcome: OutcomePredictive,
    propensity: PropensityPredictive,
    dataset: CausalDataset,
    eval_points: np.ndarray,
    config: CopulaConfig,
    seed: int,
    n_draws: int | None = None,
    batch_size: int | None = None,
) -> list[NuisanceDraw]:
    """Draw ``n_draws`` joint functional posteriors at the evaluation points.

    Draw j runs on the derived seed ``child_seed(seed, j)`` and is a pure
    function of (dataset, config, that seed); ``batch_size`` only controls
    how many chains are advanced per vectorized pass and never changes the
    result.
    """
    n_draws = config.draws if n_draws is None else n_draws
    if n_draws < 1:
        raise ConfigurationError("n_draws must be >= 1")
    seeds = [child_seed(seed, j) for j in range(n_draws)]
    return _run_draws(outcome, propensity, dataset, eval_points, config, seeds, batch_size)


def draw_nuisance_posterior(
    outcome: OutcomePredictive,
    propensity: PropensityPredictive,
    dataset: CausalDataset,
    eval_points: np.ndarray,
    config: CopulaConfig,
    seed: int,
) -> NuisanceDraw:
    """One joint functional posterior draw (a pure function of the seed)."""
    return _run_draws(outcome, propensity, dataset, eval_points, config, [int(seed)], None)[0]


def _run_draws(
    outcome: OutcomePredictive,
    propensity: PropensityPredictive,
    dataset: CausalDataset,
    eval_points: np.ndarray,
    config: CopulaConfig,
    draw_seeds: Sequence[int],
    batch_size: int | None,
) -> list[NuisanceDraw]:
    eval_points = np.atleast_2d(np.asarray(eval_points, dtype=np.float64))
    if eval_points.shape[0] == 0:
        raise ConfigurationError("eval_points must be non-empty")

    if config.steps == 0:
        mu0 = outcome.posterior_mean_at(eval_points, 0)
        mu1 = outcome.posterior_mean_at(eval_points, 1)
        pi = propensity.prob_at(eval_points)
        return [
            NuisanceDraw(mu0.copy(), mu1.copy(), pi.copy(), int(s)) for s in draw_seeds
        ]

    workspace = _ChainWorkspace(outcome, propensity, dataset, eval_points, config)
    out: list[NuisanceDraw] = []
    step = len(draw_seeds) if batch_size is None else max(1, batch_size)
    for start in range(0, len(draw_seeds), step):
        chunk = list(draw_seeds[start : start + step])
        mu0, mu1, pi, _ = workspace.run(chunk)
        for j, s in enumerate(chunk):
            out.append(NuisanceDraw(mu0[j], mu1[j], pi[j], int(s)))
    return out


def absorb_mp_draw(
    outcome: OutcomePredictive,
    dataset: CausalDataset,
    eval_points: np.ndarray,
    n_steps: int,
    seed: int,
    propensity: PropensityPredictive | None = None,
) -> NuisanceDraw:
    """Functional posterior draw by sequential predictive resampling.

    Iterates: resample (x, a) from the data, sample a pseudo outcome from the
    current predictive, absorb it; the draw is the marginalized posterior
    mean after ``n_steps`` updates.  Exact for the conjugate backend.  When a
    treatment model is supplied its chain absorbs labels drawn from its own
    predictive at the same resampled covariates; otherwise the draw carries
    the empirical treated fraction.
    """
    if not getattr(outcome, "supports_absorb", False):
        raise CapabilityError(f"{type(outcome).__name__} does not support absorb")
    eval_points = np.atleast_2d(np.asarray(eval_points, dtype=np.float64))
    rng = child_rng(seed)
    current = outcome
    prop = propensity
    for _ in range(n_steps):
        i = int(rng.integers(dataset.n))
        x = dataset.covariates[i]
        a = int(dataset.treatments[i])
        y = current.sample_outcome(x, a, rng)
        current = current.absorb(x, a, y)
        if prop is not None:
            p = prop.predictive_prob(x)
            label = 1 if rng.random() < p else 0
            prop = prop.absorb(x, label)
    mu0 = current.posterior_mean_at(eval_points, 0)
    mu1 = current.posterior_mean_at(eval_points, 1)
    if prop is not None:
        pi = np.clip(prop.prob_at(eval_points), *PROP_CLAMP)
    else:
        pi = np.full(eval_points.shape[0], np.clip(dataset.treated_fraction(), *PROP_CLAMP))
    return NuisanceDraw(mu0, mu1, pi, int(seed))
