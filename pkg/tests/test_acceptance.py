"""Acceptance battery: one test per published-results criterion.

Every criterion runs at its stated tolerance with a fixed seed, so each
test below prints exactly one deterministic pass/fail line under
``pytest -v``. The replication fixtures are shared per module; the full
battery completes in a few minutes.
"""

import os
import time

import numpy as np
import pytest

import oracles
from conftest import random_instance, random_panel, random_spec
from mrtwcls import (
    FeatureSpec,
    GenerativeConfig,
    KnownConstant,
    KnownPerOccasion,
    Logistic,
    WclsAnalysis,
    build_design,
    compute_weights,
    evaluate_probability,
    fit_gee,
    fit_logistic,
    fit_wcls,
    generate_trial,
    independence,
    run_preset,
    run_replications,
    sandwich_variance,
    small_sample_correct,
)
from mrtwcls.errors import EstimationError

ACCEPT_SEED = 1
REPLICATES = 1000
THREADS = min(4, os.cpu_count() or 1)


@pytest.fixture(scope="module")
def table1():
    start = time.perf_counter()
    reports = run_preset("table1", replicates=REPLICATES, seed=ACCEPT_SEED,
                         threads=THREADS)
    return reports, time.perf_counter() - start


@pytest.fixture(scope="module")
def table2():
    return run_preset("table2", replicates=REPLICATES, seed=ACCEPT_SEED,
                      threads=THREADS)


@pytest.fixture(scope="module")
def table3():
    return run_preset("table3", replicates=REPLICATES, seed=ACCEPT_SEED,
                      threads=THREADS)


@pytest.fixture(scope="module")
def appendix_d():
    return run_preset("appendixD", replicates=REPLICATES, seed=ACCEPT_SEED,
                      threads=THREADS)


@pytest.fixture(scope="module")
def robustness():
    analysis = WclsAnalysis(
        "wcls-intercept-g", FeatureSpec(effect=("1",), working=("1",)))
    config = GenerativeConfig(theta1=0.8, beta10=-0.2, beta11=0.8,
                              eta1=-0.8, eta2=0.8, n=30, T=30,
                              seed=np.random.SeedSequence(ACCEPT_SEED))
    return run_replications(config, [analysis], REPLICATES, threads=THREADS)


def test_criterion_1_moderated_scenario_reproduction(table1):
    reports, elapsed = table1
    gee_ind_targets = {"beta11=0.2": -0.17, "beta11=0.5": -0.14,
                       "beta11=0.8": -0.10}
    for report in reports:
        wcls = report.row("wcls")
        assert abs(wcls["mean"] - (-0.20)) <= 0.015, report.label
        assert abs(wcls["cp"] - 0.95) <= 0.02, report.label
        gee_ind = report.row("gee-ind")
        assert abs(gee_ind["mean"] - gee_ind_targets[report.label]) <= 0.02
        if report.label in ("beta11=0.5", "beta11=0.8"):
            assert report.row("gee-ar1")["cp"] <= 0.90, report.label
    assert elapsed < 300.0


def test_criterion_2_numerator_choice_reproduction(table2):
    (report,) = table2
    constant = report.row("wcls-constant")
    assert abs(constant["mean"] - (-0.20)) <= 0.015
    assert abs(constant["cp"] - 0.94) <= 0.02
    context = report.row("wcls-context")
    assert abs(context["mean"] - (-0.14)) <= 0.02
    assert abs(context["cp"] - 0.89) <= 0.03


def test_criterion_3_context_feedback_reproduction(table3):
    (report,) = table3
    wcls = report.row("wcls-ind")
    assert abs(wcls["mean"] - (-0.20)) <= 0.015
    assert abs(wcls["cp"] - 0.96) <= 0.02
    centered = report.row("centered-ar1")
    assert abs(centered["mean"] - (-0.13)) <= 0.02
    assert abs(centered["cp"] - 0.66) <= 0.04


def test_criterion_4_larger_trial_spot_checks(appendix_d):
    (report,) = appendix_d
    wcls = report.row("wcls")
    assert abs(wcls["mean"] - (-0.20)) <= 0.01
    assert abs(wcls["sd"] - 0.05) <= 0.01
    assert abs(wcls["se"] - 0.05) <= 0.01
    assert abs(report.row("gee-ar1")["cp"] - 0.06) <= 0.05


def test_criterion_5_oracle_equivalence_on_random_instances():
    rng = np.random.default_rng(2 * ACCEPT_SEED + 1)
    checked_wcls = 0
    while checked_wcls < 200:
        n, T = int(rng.integers(2, 7)), int(rng.integers(2, 9))
        p, q = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        try:
            design, numerator, denominator, _, fit = random_instance(
                rng, n, T, p, q)
        except AssertionError:
            continue
        # comparisons at 1e-8 need a well-posed system; ill-conditioned
        # draws say nothing about agreement, only about float64
        if fit.condition_number > 1e6:
            continue
        centered = design.trt - numerator.prob1(design)
        ratio = np.where(
            design.trt > 0,
            numerator.prob1(design) / denominator.prob1(design),
            (1.0 - numerator.prob1(design)) / (1.0 - denominator.prob1(design)),
        )
        stacked = np.hstack([design.g, centered[:, None] * design.f])
        expected = oracles.wls_normal_equations(
            stacked, design.avail * ratio, design.response)
        assert np.max(np.abs(fit.coefficients - expected)) < 1e-8
        checked_wcls += 1

    checked_gee = 0
    while checked_gee < 200:
        n, T = int(rng.integers(2, 7)), int(rng.integers(2, 9))
        p, q = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        data = random_panel(rng, n, T)
        design = build_design(data, random_spec(rng, p, q))
        try:
            fit = fit_gee(design, independence())
        except EstimationError:
            continue
        if fit.condition_number > 1e6:
            continue
        x = np.hstack([design.g, design.trt[:, None] * design.f])
        expected, *_ = np.linalg.lstsq(x, design.response, rcond=None)
        assert np.max(np.abs(fit.coefficients - expected)) < 1e-10
        checked_gee += 1


def test_criterion_6_recoded_regression_identity():
    rng = np.random.default_rng(3 * ACCEPT_SEED + 2)
    checked = 0
    while checked < 100:
        n, T = int(rng.integers(2, 7)), int(rng.integers(2, 9))
        p, q = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        data = random_panel(rng, n, T)
        design = build_design(data, random_spec(rng, p, q))
        rho = float(rng.uniform(0.25, 0.75))
        model = KnownConstant(rho)
        try:
            fit = fit_wcls(design, compute_weights(design, model, model))
        except EstimationError:
            continue
        if fit.condition_number > 1e6:
            continue
        recoded = np.hstack([design.g, (design.trt - rho)[:, None] * design.f])
        expected, *_ = np.linalg.lstsq(recoded, design.response, rcond=None)
        assert np.max(np.abs(fit.coefficients - expected)) < 1e-10
        checked += 1


def test_criterion_7_robust_to_intercept_only_working_model(robustness):
    row = robustness.row("wcls-intercept-g")
    assert abs(row["mean"] - (-0.20)) <= 0.015


def test_criterion_8_variance_calibration_everywhere(
        table1, table2, table3, appendix_d, robustness):
    reports = list(table1[0]) + list(table2) + list(table3) + list(appendix_d)
    reports.append(robustness)
    for report in reports:
        for row in report.rows:
            ratio = row["se"] / row["sd"]
            assert abs(ratio - 1.0) <= 0.10, (report.label, row["analysis"])


def test_criterion_9_property_suite_without_presets():
    rng = np.random.default_rng(5)

    # probability-sum identity
    design, numerator, denominator, weights, fit = random_instance(
        rng, n=6, T=8, p=2, q=2)
    logistic = Logistic([0.3], side="denominator")
    spec = FeatureSpec(effect=("1",), working=("1",), denominator=("1",))
    design_d = build_design(random_panel(rng, 4, 5), spec)
    for model, dsg in ((numerator, design), (denominator, design),
                       (logistic, design_d)):
        for row in dsg:
            assert (evaluate_probability(model, row, 1)
                    + evaluate_probability(model, row, 0)) == 1.0

    # score zero at the optimum
    regressors = np.hstack([design.g, weights.centered[:, None] * design.f])
    score = regressors.T @ (weights.effective * fit.residuals)
    assert np.max(np.abs(score)) < 1e-8 * len(design)
    trt = (rng.random((25, 20)) < 0.5).astype(float)
    data = random_panel(rng, 25, 20)
    from mrtwcls import PanelDataset
    data = PanelDataset(data.ids, data.avail, trt, data.y,
                        {c: data.covariate(c) for c in data.schema})
    design_l = build_design(data, FeatureSpec(("1",), ("1",),
                                              denominator=("1", "c1")))
    model, _ = fit_logistic(design_l, "denominator")
    gradient = design_l.denominator_features.T @ (
        design_l.avail * (design_l.trt - model.prob1(design_l)))
    assert np.max(np.abs(gradient)) < 1e-6

    # vcov symmetry and positive semidefiniteness
    varfit = small_sample_correct(sandwich_variance(fit))
    assert np.array_equal(varfit.vcov, varfit.vcov.T)
    assert np.all(np.linalg.eigvalsh(varfit.vcov) > -1e-12)

    # AR error autocorrelation
    noise = generate_trial(GenerativeConfig(
        theta1=0.0, theta2=0.0, beta10=0.0, beta11=0.0,
        n=1000, T=1000, seed=123)).y
    centered = noise - noise.mean()
    autocorr = (centered[:, :-1] * centered[:, 1:]).mean() / centered.var()
    assert abs(autocorr - 0.7071) <= 0.01

    # seed-reproducibility byte-identity
    config = GenerativeConfig(beta11=0.5, eta1=-0.8, eta2=0.8, n=10, T=8,
                              seed=42)
    assert generate_trial(config).y.tobytes() == generate_trial(config).y.tobytes()
    analysis = WclsAnalysis("wcls", FeatureSpec(("1",), ("1", "s")))
    serial = run_replications(config, [analysis], 4, threads=1)
    threaded = run_replications(config, [analysis], 4, threads=2)
    assert serial.estimates.tobytes() == threaded.estimates.tobytes()
    assert serial.std_errors.tobytes() == threaded.std_errors.tobytes()
