"""Metric oracles: TV between normals, KS uniformity, the second-order
remainder, and the variance-ordering report."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import causalmp as cm
from causalmp.data import ConfigurationError
from causalmp.diagnostics import format_cell, report_row
from causalmp.estimators import DegeneracyError
from causalmp.mp import NuisanceDraw
from causalmp.ppd import CapabilityError


def _normal_tv_oracle(m1, s1, m2, s2):
    """Crossing-point closed form, independent of the quadrature path."""
    if (m1, s1) == (m2, s2):
        return 0.0
    # solve log f1 = log f2 (quadratic in x)
    a = 0.5 / s2**2 - 0.5 / s1**2
    b = m1 / s1**2 - m2 / s2**2
    c = 0.5 * (m2**2 / s2**2 - m1**2 / s1**2) + np.log(s2 / s1)
    if abs(a) < 1e-15:
        roots = [-c / b]
    else:
        disc = np.sqrt(b * b - 4 * a * c)
        roots = sorted([(-b - disc) / (2 * a), (-b + disc) / (2 * a)])
    points = [-np.inf] + list(roots) + [np.inf]
    total = 0.0
    for lo, hi in zip(points[:-1], points[1:]):
        p1 = stats.norm.cdf(hi, m1, s1) - stats.norm.cdf(lo, m1, s1)
        p2 = stats.norm.cdf(hi, m2, s2) - stats.norm.cdf(lo, m2, s2)
        total += abs(p1 - p2)
    return 0.5 * total


def test_tv_unit_shift_value():
    law_a = cm.GaussianLaw(0.0, 1.0)
    law_b = cm.GaussianLaw(1.0, 1.0)
    expected = 2 * stats.norm.cdf(0.5) - 1
    assert cm.normal_tv_distance(law_a, law_b) == pytest.approx(expected, abs=1e-4)
    assert _normal_tv_oracle(0, 1, 1, 1) == pytest.approx(expected, abs=1e-12)


def test_tv_scale_difference_against_crossing_oracle():
    law_a = cm.GaussianLaw(0.0, 1.0)
    law_b = cm.GaussianLaw(0.0, 4.0)
    expected = _normal_tv_oracle(0, 1, 0, 2)
    assert cm.normal_tv_distance(law_a, law_b) == pytest.approx(expected, abs=1e-6)


@given(
    m1=st.floats(-3, 3),
    m2=st.floats(-3, 3),
    v1=st.floats(0.1, 9.0),
    v2=st.floats(0.1, 9.0),
)
@settings(max_examples=40, deadline=None)
def test_tv_symmetry_and_bounds(m1, m2, v1, v2):
    a, b = cm.GaussianLaw(m1, v1), cm.GaussianLaw(m2, v2)
    t_ab = cm.normal_tv_distance(a, b)
    t_ba = cm.normal_tv_distance(b, a)
    assert t_ab == pytest.approx(t_ba, abs=1e-6)
    assert 0.0 <= t_ab <= 1.0
    assert cm.normal_tv_distance(a, a) == pytest.approx(0.0, abs=1e-9)


def test_tv_to_normal_identical_law_small():
    rng = np.random.default_rng(1)
    reference = cm.GaussianLaw(2.0, 0.25)
    draws = rng.normal(reference.mean, reference.sd, size=10_000)
    post = cm.AtePosterior(draws, kind="ospc")
    report = cm.tv_to_normal(post, reference)
    assert report.tv < 0.05


def test_tv_to_normal_guards():
    reference = cm.GaussianLaw(0.0, 1.0)
    with pytest.raises(ConfigurationError):
        cm.tv_to_normal(cm.AtePosterior(np.zeros(5), kind="ospc"), reference)
    with pytest.raises(DegeneracyError):
        cm.tv_to_normal(cm.AtePosterior(np.zeros(50), kind="ospc"), reference)


def test_ks_evenly_spaced_grid():
    r = 40
    pits = np.arange(1, r + 1) / (r + 1)
    report = cm.ks_to_uniform(pits)
    assert report.ks == pytest.approx(1.0 / (r + 1), abs=1e-12)


def test_ks_maximal_miscalibration():
    assert cm.ks_to_uniform(np.zeros(25)).ks == pytest.approx(1.0)


def test_ks_uniform_null_rate():
    # exact-uniform PITs stay below the 1% critical value in >= 95% of
    # seeded meta-replicates
    r = 1000
    crit = 1.63 / np.sqrt(r)
    hits = 0
    meta = 40
    for k in range(meta):
        pits = np.random.default_rng(k).uniform(size=r)
        if cm.ks_to_uniform(pits).ks < crit:
            hits += 1
    assert hits >= int(0.95 * meta)


def test_ks_permutation_invariant():
    rng = np.random.default_rng(3)
    pits = rng.uniform(size=64)
    a = cm.ks_to_uniform(pits).ks
    b = cm.ks_to_uniform(rng.permutation(pits)).ks
    assert a == b


def test_ks_input_guards():
    with pytest.raises(ConfigurationError):
        cm.ks_to_uniform(np.full(5, 0.5))
    with pytest.raises(ConfigurationError):
        cm.ks_to_uniform(np.array([0.1] * 9 + [1.5]))


@pytest.fixture(scope="module")
def oracle_setup():
    dataset, oracle = cm.generate_synthetic(cm.DgpSpec(n=300, d_x=15, seed=88))
    return dataset, oracle


def test_r2_zero_at_oracle(oracle_setup):
    dataset, oracle = oracle_setup
    mu0, mu1, pi = oracle.nuisances_at(dataset)
    draws = [NuisanceDraw(mu0, mu1, pi, 0)]
    report = cm.r2_check(draws, oracle, dataset, n=300)
    assert report.r2_hat == 0.0


def test_r2_zero_when_only_outcomes_shift(oracle_setup):
    dataset, oracle = oracle_setup
    mu0, mu1, pi = oracle.nuisances_at(dataset)
    draws = [NuisanceDraw(mu0 + 1.3, mu1 + 1.3, pi, 0)]
    report = cm.r2_check(draws, oracle, dataset, n=300)
    assert report.r2_hat == 0.0
    assert report.mu0_error > 0


def test_r2_product_scaling(oracle_setup):
    dataset, oracle = oracle_setup
    mu0, mu1, pi = oracle.nuisances_at(dataset)
    rng = np.random.default_rng(4)
    e0, e1 = rng.standard_normal(dataset.n), rng.standard_normal(dataset.n)
    p_bad = np.clip(pi + 0.1, 0.06, 0.94)
    one = cm.r2_check([NuisanceDraw(mu0 + e0, mu1 + e1, p_bad, 0)], oracle, dataset, n=300)
    two = cm.r2_check([NuisanceDraw(mu0 + 2 * e0, mu1 + 2 * e1, p_bad, 0)], oracle, dataset, n=300)
    assert two.r2_hat == pytest.approx(2.0 * one.r2_hat, rel=1e-12)


def test_r2_requires_oracle(oracle_setup):
    dataset, _ = oracle_setup
    with pytest.raises(CapabilityError):
        cm.r2_check([], None, dataset, n=300)


def test_variance_decomposition_degenerate_draws(oracle_setup):
    dataset, oracle = oracle_setup
    mu0, mu1, pi = oracle.nuisances_at(dataset)
    draws = [NuisanceDraw(mu0, mu1, pi, j) for j in range(600)]
    posts = {}
    for variant in ("x_independent", "x_parallel", "smooth"):
        posts[variant] = cm.ospc_posterior(
            draws, dataset, np.random.default_rng(9), variant=variant
        )
    report = cm.variance_decomposition(posts, dataset.n, seed=1)
    values = list(report.variances.values())
    # identical draws: all three are plain bootstrap variances of one vector
    assert max(values) - min(values) <= 0.35 * min(values)
    assert not report.ci_separated_a_b
    assert report.ordering_violation

    # law of total variance at degenerate draws: posterior variance matches
    # the closed-form Dirichlet variance of the fixed xi vector
    from causalmp.estimators import oracle_eif_inputs, uncentered_eif

    xi = uncentered_eif(oracle_eif_inputs(dataset, mu0, mu1, pi))
    target = xi.var() / (dataset.n + 1.0)
    post = posts["smooth"]
    boot_se = post.variance() * np.sqrt(2.0 / (post.n_draws - 1))
    assert abs(post.variance() - target) <= 3.0 * boot_se


def test_variance_decomposition_requires_matching_draw_counts(oracle_setup):
    dataset, oracle = oracle_setup
    mu0, mu1, pi = oracle.nuisances_at(dataset)
    draws = [NuisanceDraw(mu0, mu1, pi, j) for j in range(50)]
    posts = {
        "x_independent": cm.ospc_posterior(draws, dataset, np.random.default_rng(1)),
        "x_parallel": cm.ospc_posterior(draws, dataset, np.random.default_rng(2)),
        "smooth": cm.ospc_posterior(draws[:40], dataset, np.random.default_rng(3)),
    }
    with pytest.raises(ConfigurationError):
        cm.variance_decomposition(posts, dataset.n)


def test_report_row_stable_columns():
    row = report_row(dataset="synthetic", n=100, d_x=15, estimator="ospc", seed=7)
    assert tuple(row.keys()) == cm.diagnostics.CSV_COLUMNS
    assert row["tv"] == ""
    with pytest.raises(ConfigurationError):
        report_row(bogus=1)


def test_format_cell_float_roundtrip():
    value = 0.1 + 0.2
    assert float(format_cell(value)) == value
    assert format_cell(None) == ""
    assert format_cell(7) == "7"
