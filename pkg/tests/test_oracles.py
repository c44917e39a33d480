"""Checks that the reference computations stand on their own.

The oracles are validated against hand-solvable instances and frozen
constants before any library-vs-oracle comparison uses them.
"""

import numpy as np

import oracles
from conftest import random_instance, scenario_panel
from mrtwcls import FeatureSpec, build_design, fit_logistic

# t quantile at level 0.975 with 10 degrees of freedom, frozen from three
# agreeing formulations (incomplete beta, quadrature, hypergeometric);
# scipy's ppf sits 2.1e-11 below this value
T_QUANTILE_10_975 = 2.2281388519862747


def test_t_quantile_oracle_matches_frozen_value():
    assert abs(oracles.student_t_quantile(0.975, 10) - T_QUANTILE_10_975) < 1e-12


def test_t_quantile_oracle_median_is_zero():
    assert abs(oracles.student_t_quantile(0.5, 7)) < 1e-30


def test_wls_oracle_recovers_exact_fit():
    x = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])
    y = np.array([0.5, 1.5, 2.5])
    w = np.array([1.0, 3.0, 0.25])
    solution = oracles.wls_normal_equations(x, w, y)
    # data lie exactly on y = 0.5 + x, any weighting recovers that line
    assert np.allclose(solution, [0.5, 1.0], atol=1e-14)


def test_wls_oracle_agrees_with_lstsq():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((40, 3))
    y = rng.standard_normal(40)
    w = rng.uniform(0.5, 2.0, size=40)
    solution = oracles.wls_normal_equations(x, w, y)
    sw = np.sqrt(w)
    reference, *_ = np.linalg.lstsq(x * sw[:, None], y * sw, rcond=None)
    assert np.allclose(solution, reference, atol=1e-10)


def test_weighted_centered_fit_matches_extended_precision(tmp_path):
    rng = np.random.default_rng(11)
    design, _, _, weights, fit = random_instance(rng, n=5, T=6, p=2, q=2)
    stacked = np.hstack([design.g, weights.centered[:, None] * design.f])
    expected = oracles.wls_normal_equations(
        stacked, weights.effective, design.response
    )
    assert np.allclose(fit.coefficients, expected, atol=1e-8)


def test_logistic_fit_matches_grid_search_maximum():
    rng = np.random.default_rng(23)
    data = scenario_panel(rng, n=400, T=30)
    spec = FeatureSpec(
        effect=("1",),
        working=("1",),
        denominator=("lag(trt, 1)", "s"),
    )
    design = build_design(data, spec)
    model, _ = fit_logistic(design, "denominator")

    features = design.denominator_features
    coarse = oracles.grid_argmax_loglik(
        features, design.trt, design.avail, center=(-0.8, 0.8),
        radius=0.5, steps=41,
    )
    fine = oracles.grid_argmax_loglik(
        features, design.trt, design.avail, center=tuple(coarse),
        radius=0.03, steps=41,
    )
    assert np.all(np.abs(model.coefficients - fine) < 2e-3)
    # the generating coefficients were (-0.8, 0.8); n*T = 12000 draws
    assert np.all(np.abs(model.coefficients - [-0.8, 0.8]) < 0.15)


def test_grid_oracle_loglik_is_stable_for_extreme_linear_predictor():
    features = np.array([[1.0], [1.0]])
    outcome = np.array([1.0, 0.0])
    avail = np.array([1.0, 1.0])
    value = oracles.bernoulli_loglik([800.0], features, outcome, avail)
    assert np.isfinite(value)
    assert value < -700
