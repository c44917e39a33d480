"""Synthetic trial generator and replication experiment harness.

The generative model produces, per individual and occasion: a binary
context S_t in {-1, +1} whose law depends on the prior treatment, a
treatment A_t randomized with probability expit(eta1 * A_{t-1} +
eta2 * S_t), and a response

    Y_{t+1} = theta1 * (S_t - E[S_t | A_{t-1}])
              + theta2 * (A_{t-1} - p_{t-1})
              + (A_t - p_t) * (beta10 + beta11 * S_t)
              + eps_{t+1}

with stationary AR(1) Gaussian errors whose lag-h correlation is
error_decay^(h/2). Everyone is available at every occasion, and the true
randomization probabilities are recorded so analyses may treat them as
known. The marginal proximal effect is beta10 + beta11 * E[S_t].
"""

from __future__ import annotations

import concurrent.futures
import math

import numpy as np
from scipy.special import expit

from . import _kernels, gee as gee_mod
from .errors import EstimationError, InvariantViolation
from .features import FeatureSpec, build_design
from .panel import PanelDataset
from .probmodels import (
    KnownConstant,
    KnownPerOccasion,
    fit_constant_numerator,
    fit_logistic,
)
from .wcls import compute_weights, fit_wcls, infer, sandwich_variance, small_sample_correct


class GenerativeConfig:
    """Parameters of one synthetic trial."""

    FIELDS = ("theta1", "theta2", "beta10", "beta11", "eta1", "eta2", "xi",
              "n", "T", "error_decay", "seed")

    def __init__(self, theta1=0.8, theta2=0.0, beta10=-0.2, beta11=0.0,
                 eta1=0.0, eta2=0.0, xi=0.0, n=30, T=30, error_decay=0.5,
                 seed=None):
        self.theta1 = float(theta1)
        self.theta2 = float(theta2)
        self.beta10 = float(beta10)
        self.beta11 = float(beta11)
        self.eta1 = float(eta1)
        self.eta2 = float(eta2)
        self.xi = float(xi)
        self.n = int(n)
        self.T = int(T)
        self.error_decay = float(error_decay)
        self.seed = seed
        if self.n < 1 or self.T < 1:
            raise InvariantViolation(f"need n, T >= 1, got n={self.n}, T={self.T}")
        if not 0.0 <= self.error_decay < 1.0:
            raise InvariantViolation(
                f"error_decay must lie in [0, 1), got {self.error_decay}"
            )

    def replace(self, **updates):
        state = {name: getattr(self, name) for name in self.FIELDS}
        state.update(updates)
        return GenerativeConfig(**state)

    def __repr__(self):
        parts = ", ".join(f"{name}={getattr(self, name)!r}" for name in self.FIELDS)
        return f"GenerativeConfig({parts})"


def generate_trial(config):
    """Simulate one complete trial as a PanelDataset.

    Covariate columns: `s` (the context) and `prob` (the true
    randomization probability at each occasion). Availability is 1
    everywhere. `config.seed` may be an int or a numpy SeedSequence.
    """
    n, T = config.n, config.T
    rng = np.random.default_rng(config.seed)
    u_s = rng.random((n, T))
    u_a = rng.random((n, T))
    z = rng.standard_normal((n, T))

    ps1 = expit(config.xi * np.arange(2, dtype=np.float64))
    es = 2.0 * ps1 - 1.0
    signs = np.array([-1.0, 1.0])
    pa1 = expit(config.eta1 * np.arange(2, dtype=np.float64)[:, None]
                + config.eta2 * signs[None, :])
    phi = math.sqrt(config.error_decay)

    state, trt, prob, y = _kernels.simulate_panel(
        u_s, u_a, z, ps1, es, pa1,
        config.theta1, config.theta2, config.beta10, config.beta11, phi,
    )
    return PanelDataset(
        list(range(1, n + 1)),
        np.ones((n, T)),
        trt,
        y,
        {"s": state, "prob": prob},
    )


class MarginalEffect:
    """True marginal proximal effect, per occasion and time-averaged."""

    def __init__(self, per_occasion):
        self.per_occasion = np.asarray(per_occasion, dtype=np.float64)
        self.average = float(self.per_occasion.mean())

    def __repr__(self):
        return f"MarginalEffect(average={self.average:.6g})"


def true_marginal_effect(config):
    """beta10 + beta11 * E[S_t] for each occasion.

    With xi = 0 the context is symmetric, E[S_t] = 0, and the effect is
    beta10 at every occasion. Otherwise E[S_t] follows from forward
    propagation of the treatment chain: A_t is Markov given A_{t-1} after
    integrating the context out.
    """
    T = config.T
    if config.xi == 0.0:
        return MarginalEffect(np.full(T, config.beta10))
    ps1 = expit(config.xi * np.arange(2, dtype=np.float64))
    es = 2.0 * ps1 - 1.0
    signs = np.array([-1.0, 1.0])
    pa1 = expit(config.eta1 * np.arange(2, dtype=np.float64)[:, None]
                + config.eta2 * signs[None, :])
    prob_prev_trt = 0.0
    mean_s = np.empty(T)
    for t in range(T):
        weights_a = np.array([1.0 - prob_prev_trt, prob_prev_trt])
        mean_s[t] = weights_a @ es
        # joint law of (A_{t-1}, S_t) gives the next treatment rate
        joint = weights_a[:, None] * np.array(
            [[1.0 - ps1[0], ps1[0]], [1.0 - ps1[1], ps1[1]]]
        )
        prob_prev_trt = float((joint * pa1).sum())
    return MarginalEffect(config.beta10 + config.beta11 * mean_s)


def _probability_model(design, spec_tuple):
    """Build one probability model from a declarative tuple.

    ("constant-estimated",) fits the availability-weighted rate;
    ("constant-fixed", v) and ("known-column", name) are prespecified;
    ("logistic", side) fits by maximum likelihood. Returns
    (model, report or None).
    """
    kind = spec_tuple[0]
    if kind == "constant-estimated":
        return fit_constant_numerator(design)
    if kind == "constant-fixed":
        return KnownConstant(float(spec_tuple[1])), None
    if kind == "known-column":
        return KnownPerOccasion(design.column(spec_tuple[1])), None
    if kind == "logistic":
        return fit_logistic(design, spec_tuple[1])
    raise InvariantViolation(f"unknown probability spec {spec_tuple!r}")


class WclsAnalysis:
    """Recipe for one weighted-and-centered analysis of a trial."""

    def __init__(self, name, feature_spec, numerator=("constant-estimated",),
                 denominator=("known-column", "prob"), contrast=None,
                 alpha0=0.05, small_sample=True):
        self.name = name
        self.feature_spec = feature_spec
        self.numerator = numerator
        self.denominator = denominator
        self.contrast = contrast
        self.alpha0 = alpha0
        self.small_sample = small_sample

    def run(self, data):
        design = build_design(data, self.feature_spec)
        numerator, numerator_report = _probability_model(design, self.numerator)
        denominator, denominator_report = _probability_model(design, self.denominator)
        weights = compute_weights(design, numerator, denominator)
        fit = fit_wcls(design, weights)
        fit = sandwich_variance(fit, denominator_report, numerator_report)
        if self.small_sample:
            fit = small_sample_correct(fit)
        contrast = (np.eye(design.p)[0] if self.contrast is None
                    else np.asarray(self.contrast, dtype=np.float64))
        return infer(fit, contrast, alpha0=self.alpha0)


class GeeAnalysis:
    """Recipe for one GEE comparator analysis of a trial."""

    def __init__(self, name, feature_spec, correlation="independence",
                 fixed_decay=None, centered_value=None, contrast=None,
                 alpha0=0.05, small_sample=True):
        self.name = name
        self.feature_spec = feature_spec
        self.correlation = correlation
        self.fixed_decay = fixed_decay
        self.centered_value = centered_value
        self.contrast = contrast
        self.alpha0 = alpha0
        self.small_sample = small_sample

    def run(self, data):
        design = build_design(data, self.feature_spec)
        if self.correlation == "independence":
            correlation = gee_mod.independence()
        elif self.correlation == "ar1_estimated":
            correlation = gee_mod.ar1_estimated()
        elif self.correlation == "ar1_fixed":
            decay = math.sqrt(self.fixed_decay)
            correlation = gee_mod.ar1_fixed(
                gee_mod.ar1_matrix(decay, design.rows_per_individual))
        else:
            raise InvariantViolation(f"unknown correlation {self.correlation!r}")
        centered_by = (None if self.centered_value is None
                       else KnownConstant(float(self.centered_value)))
        fit = gee_mod.fit_gee(design, correlation, centered_by=centered_by)
        if self.small_sample:
            fit = gee_mod.small_sample_correct(fit)
        contrast = (np.eye(design.p)[0] if self.contrast is None
                    else np.asarray(self.contrast, dtype=np.float64))
        return infer(fit, contrast, alpha0=self.alpha0)


class ReplicationReport:
    """Monte Carlo summary of one experiment block.

    Per analysis: Mean and SD (divisor R-1) of the estimates, SE (the
    average estimated standard error), RMSE against the true averaged
    marginal effect (divisor R), CP (fraction of confidence intervals
    covering the truth), and the count of failed replicates. Failed
    replicates are excluded from the statistics but always reported.
    """

    COLUMNS = ("analysis", "mean", "sd", "se", "rmse", "cp", "failures")

    def __init__(self, label, truth, replicates, names, estimates, std_errors,
                 lower, upper, failures):
        self.label = label
        self.truth = truth
        self.replicates = replicates
        self.names = list(names)
        self.estimates = estimates
        self.std_errors = std_errors
        self.lower = lower
        self.upper = upper
        self.failures = failures
        self.rows = [self._row(j) for j in range(len(self.names))]

    def _row(self, j):
        ok = ~np.isnan(self.estimates[:, j])
        used = int(ok.sum())
        failed = int(self.replicates - used)
        if used == 0:
            return {"analysis": self.names[j], "mean": None, "sd": None,
                    "se": None, "rmse": None, "cp": None, "failures": failed}
        est = self.estimates[ok, j]
        truth = self.truth.average
        mean = float(est.mean())
        sd = float(est.std(ddof=1)) if used > 1 else None
        se = float(self.std_errors[ok, j].mean())
        rmse = float(np.sqrt(((est - truth) ** 2).mean()))
        covered = (self.lower[ok, j] <= truth) & (truth <= self.upper[ok, j])
        cp = float(covered.mean())
        return {"analysis": self.names[j], "mean": mean, "sd": sd, "se": se,
                "rmse": rmse, "cp": cp, "failures": failed}

    def row(self, name):
        for entry in self.rows:
            if entry["analysis"] == name:
                return entry
        raise KeyError(name)


def run_replications(config, analyses, replicates, threads=1):
    """Run an experiment block: R independent trials, each analyzed by
    every recipe; summaries are reduced in replicate order so the result
    is identical for any thread count.

    Per-replicate estimation failures (for example singular systems) are
    recorded as missing and counted, never silently dropped.
    """
    if replicates < 1:
        raise InvariantViolation(f"need at least one replicate, got {replicates}")
    names = [analysis.name for analysis in analyses]
    if len(set(names)) != len(names):
        raise InvariantViolation(f"duplicate analysis names in {names}")
    k = len(analyses)
    estimates = np.full((replicates, k), np.nan)
    std_errors = np.full((replicates, k), np.nan)
    lower = np.full((replicates, k), np.nan)
    upper = np.full((replicates, k), np.nan)
    failures = [[] for _ in range(k)]

    root = (config.seed if isinstance(config.seed, np.random.SeedSequence)
            else np.random.SeedSequence(config.seed))
    children = root.spawn(replicates)

    def one(r):
        data = generate_trial(config.replace(seed=children[r]))
        out = []
        for analysis in analyses:
            try:
                result = analysis.run(data)
            except EstimationError as exc:
                out.append(exc)
            else:
                out.append(result)
        return out

    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(replicates)))
    else:
        results = [one(r) for r in range(replicates)]

    for r, row in enumerate(results):
        for j, outcome in enumerate(row):
            if isinstance(outcome, EstimationError):
                failures[j].append((r, outcome))
                continue
            estimates[r, j] = outcome.estimate
            std_errors[r, j] = outcome.std_error
            lower[r, j], upper[r, j] = outcome.confidence_interval

    return ReplicationReport(
        label=repr(config), truth=true_marginal_effect(config),
        replicates=replicates, names=names, estimates=estimates,
        std_errors=std_errors, lower=lower, upper=upper, failures=failures,
    )


# experiment presets mirroring the published simulation studies

_MODERATED = dict(effect=("1",), working=("1", "s"))


def _wcls(name, numerator=("constant-estimated",),
          denominator=("known-column", "prob"), allow_unguarded=False,
          effect=("1",), working=("1", "s")):
    spec = FeatureSpec(effect=effect, working=working,
                       numerator=("1", "s") if numerator[0] == "logistic" else (),
                       allow_unguarded_numerator=allow_unguarded)
    if numerator[0] == "logistic":
        numerator = ("logistic", "numerator")
    return WclsAnalysis(name, spec, numerator=numerator, denominator=denominator)


def _gee(name, correlation, fixed_decay=None, centered_value=None):
    spec = FeatureSpec(**_MODERATED)
    return GeeAnalysis(name, spec, correlation=correlation,
                       fixed_decay=fixed_decay, centered_value=centered_value)


def preset_blocks(name):
    """The experiment blocks of a named preset: a list of
    (label, config_kwargs, analysis builders)."""
    scenario1 = dict(theta1=0.8, theta2=0.0, beta10=-0.2,
                     eta1=-0.8, eta2=0.8, xi=0.0, n=30, T=30)
    if name == "table1":
        return [
            (
                f"beta11={value:g}",
                dict(scenario1, beta11=value),
                [
                    _wcls("wcls"),
                    _gee("gee-ind", "independence"),
                    _gee("gee-ar1", "ar1_estimated"),
                ],
            )
            for value in (0.2, 0.5, 0.8)
        ]
    if name == "table2":
        base = dict(scenario1, theta2=-0.1, beta11=0.5)
        return [
            (
                "moderated-generative",
                base,
                [
                    _wcls("wcls-constant"),
                    _wcls("wcls-context", numerator=("logistic",),
                          allow_unguarded=True),
                ],
            )
        ]
    if name == "table3":
        base = dict(theta1=0.8, theta2=-0.1, beta10=-0.2, beta11=0.0,
                    eta1=0.0, eta2=0.0, xi=0.1, n=30, T=30)
        return [
            (
                "context-feedback",
                base,
                [
                    _wcls("wcls-ind", numerator=("constant-fixed", 0.5),
                          denominator=("constant-fixed", 0.5)),
                    _gee("centered-ar1", "ar1_fixed", fixed_decay=0.5,
                         centered_value=0.5),
                ],
            )
        ]
    if name == "appendixD":
        return [
            (
                "n60-T50-beta11=0.8",
                dict(scenario1, beta11=0.8, n=60, T=50),
                [
                    _wcls("wcls"),
                    _gee("gee-ar1", "ar1_estimated"),
                ],
            )
        ]
    raise InvariantViolation(
        f"unknown preset {name!r}; choose table1, table2, table3, or appendixD"
    )


def run_preset(name, replicates=1000, seed=None, threads=1, overrides=None):
    """Run every block of a preset; returns a list of ReplicationReports."""
    blocks = preset_blocks(name)
    root = np.random.SeedSequence(seed)
    block_seeds = root.spawn(len(blocks))
    reports = []
    for index, (label, kwargs, analyses) in enumerate(blocks):
        kwargs = dict(kwargs)
        kwargs.update(overrides or {})
        config = GenerativeConfig(seed=block_seeds[index], **kwargs)
        report = run_replications(config, analyses, replicates, threads=threads)
        report.label = label
        reports.append(report)
    return reports
