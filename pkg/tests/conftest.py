"""Shared builders for randomized test instances."""

import numpy as np

from mrtwcls import (
    FeatureSpec,
    KnownConstant,
    KnownPerOccasion,
    PanelDataset,
    build_design,
    compute_weights,
    fit_wcls,
)
from mrtwcls.errors import EstimationError


def random_panel(rng, n, T, n_cov=2, avail_rate=1.0):
    """Panel with standard-normal covariates and Bernoulli(1/2) treatment."""
    avail = (rng.random((n, T)) < avail_rate).astype(float)
    trt = (rng.random((n, T)) < 0.5).astype(float) * avail
    y = rng.standard_normal((n, T))
    covariates = {
        f"c{j}": rng.standard_normal((n, T)) for j in range(1, n_cov + 1)
    }
    return PanelDataset(
        ids=list(range(1, n + 1)), avail=avail, trt=trt, y=y,
        covariates=covariates,
    )


def random_spec(rng, p, q, k=1, n_cov=2):
    """Feature lists of size p (effect) and q (working), intercept first."""
    pool = [f"c{j}" for j in range(1, n_cov + 1)] + ["t"]
    effect = ["1"] + list(rng.choice(pool, size=p - 1, replace=True))
    working = ["1"] + list(rng.choice(pool, size=q - 1, replace=True))
    return FeatureSpec(effect=effect, working=working, lag=k)


def random_instance(rng, n, T, p, q, k=1, avail_rate=1.0, max_tries=50):
    """Draw instances until the weighted system is solvable.

    Tiny panels are often rank deficient, so both estimation routes in a
    dual-route check must see the same accepted draw. Returns
    (design, numerator model, denominator model, weights, fit).
    """
    for _ in range(max_tries):
        data = random_panel(rng, n, T, avail_rate=avail_rate)
        spec = random_spec(rng, p, q, k=k)
        design = build_design(data, spec)
        numerator = KnownConstant(float(rng.uniform(0.3, 0.7)))
        denominator = KnownPerOccasion(rng.uniform(0.2, 0.8, size=len(design)))
        weights = compute_weights(design, numerator, denominator)
        try:
            fit = fit_wcls(design, weights)
        except EstimationError:
            continue
        if np.all(np.isfinite(fit.coefficients)):
            return design, numerator, denominator, weights, fit
    raise AssertionError("no solvable instance found")


def scenario_panel(rng, n=30, T=30, beta11=0.5):
    """Panel shaped like the default simulation scenario, built by hand so
    tests do not depend on the generator they may be checking."""
    from scipy.special import expit

    s = np.empty((n, T))
    trt = np.empty((n, T))
    prob = np.empty((n, T))
    y = np.empty((n, T))
    eps = rng.standard_normal(n)
    a_prev = np.zeros(n)
    phi = np.sqrt(0.5)
    for t in range(T):
        s[:, t] = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        prob[:, t] = expit(-0.8 * a_prev + 0.8 * s[:, t])
        trt[:, t] = (rng.random(n) < prob[:, t]).astype(float)
        y[:, t] = (0.8 * s[:, t]
                   + (trt[:, t] - prob[:, t]) * (-0.2 + beta11 * s[:, t])
                   + eps)
        eps = phi * eps + np.sqrt(1 - phi ** 2) * rng.standard_normal(n)
        a_prev = trt[:, t]
    return PanelDataset(
        ids=list(range(1, n + 1)), avail=np.ones((n, T)), trt=trt, y=y,
        covariates={"s": s, "prob": prob},
    )
