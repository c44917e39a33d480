"""Centered and weighted least squares for time-varying treatment effects.

The estimator regresses the lag-k response on working-model features g
and on effect features f multiplied by a centered treatment indicator,
with per-row weights (availability times a probability ratio) chosen so
the effect coefficients retain their marginal causal interpretation even
when the working model is wrong. Standard errors come from a sandwich
whose middle accounts for estimated weight probabilities, with an
optional small-sample leverage correction of the residuals.
"""

from __future__ import annotations

import numpy as np
from scipy import stats

from . import _kernels
from .errors import (
    DegreesOfFreedomExhausted,
    DimensionMismatch,
    InvariantViolation,
    SingularLeverage,
    SingularSystem,
)
from .probmodels import _guard

CONDITION_LIMIT = 1e12
SMALL_SAMPLE_N = 50


class WeightInfo:
    """Per-row weights and centered treatments for one analysis.

    Attributes
    ----------
    effective : (N,) array
        Availability times the probability ratio; exactly zero on
        unavailable rows.
    ratio : (N,) array
        The probability ratio numerator(A)/denominator(A) itself,
        reported as zero on unavailable rows where it is never used.
    centered : (N,) array
        Treatment minus the numerator probability of treatment.
    numerator, denominator : ProbabilityModel
        The models the weights were computed from.
    """

    def __init__(self, effective, ratio, centered, numerator, denominator):
        self.effective = effective
        self.ratio = ratio
        self.centered = centered
        self.numerator = numerator
        self.denominator = denominator


class WclsFit:
    """A fitted centered-and-weighted least squares analysis.

    Attributes
    ----------
    alpha : (q,) array
        Working-model coefficients.
    beta : (p,) array
        Effect coefficients on the centered-treatment features.
    coefficients : (q + p,) array
        The stacked (alpha, beta) solution.
    bread : (q+p, q+p) array
        Averaged weighted cross-product of the regressors (the score
        derivative with its sign flipped, so positive semi-definite).
    meat : (q+p, q+p) array or None
        Averaged outer product of the per-individual adjusted scores;
        None until a variance step runs.
    vcov : (q+p, q+p) array or None
        Sandwich variance of (alpha, beta) scaled for the sample, i.e.
        the asymptotic matrix divided by n.
    weights : (N,) array
        Per-row probability-ratio weights (zero where unavailable).
    residuals : (N,) array
        Response minus fitted mean, all design rows.
    corrections : dict
        Flags: which nuisance adjustments entered the meat and whether
        the small-sample residual correction was applied.
    dims : tuple
        (n, T, k, p, q).
    condition_number : float
        2-norm condition number of the bread.
    """

    def __init__(self, design, weight_info, coefficients, bread, residuals,
                 condition_number, meat=None, vcov=None, corrections=None,
                 nuisance_adjustment=None):
        q = design.q
        self.design = design
        self.weight_info = weight_info
        self.coefficients = coefficients
        self.alpha = coefficients[:q]
        self.beta = coefficients[q:]
        self.bread = bread
        self.residuals = residuals
        self.condition_number = condition_number
        self.meat = meat
        self.vcov = vcov
        self.corrections = dict(corrections or
                                {"weight_adjusted": (), "small_sample": False})
        self.nuisance_adjustment = nuisance_adjustment
        self.weights = weight_info.ratio
        self.dims = (design.n, design.T, design.k, design.p, design.q)

    @property
    def regressors(self):
        """(N, q+p) stacked design: working features, then centered
        treatment times effect features."""
        return np.hstack([
            self.design.g,
            self.weight_info.centered[:, None] * self.design.f,
        ])

    def _with(self, **updates):
        state = dict(
            design=self.design, weight_info=self.weight_info,
            coefficients=self.coefficients, bread=self.bread,
            residuals=self.residuals, condition_number=self.condition_number,
            meat=self.meat, vcov=self.vcov, corrections=self.corrections,
            nuisance_adjustment=self.nuisance_adjustment,
        )
        state.update(updates)
        return WclsFit(**state)

    def __repr__(self):
        n, T, k, p, q = self.dims
        return (f"WclsFit(n={n}, T={T}, k={k}, p={p}, q={q}, "
                f"corrections={self.corrections})")


class InferenceResult:
    """One tested contrast: estimate, SE, df, interval, p-value."""

    def __init__(self, estimate, std_error, degrees_of_freedom,
                 confidence_interval, p_value, test_kind):
        self.estimate = estimate
        self.std_error = std_error
        self.degrees_of_freedom = degrees_of_freedom
        self.confidence_interval = confidence_interval
        self.p_value = p_value
        self.test_kind = test_kind

    def __repr__(self):
        return (f"InferenceResult(estimate={self.estimate}, "
                f"std_error={self.std_error}, df={self.degrees_of_freedom}, "
                f"ci={self.confidence_interval}, p={self.p_value}, "
                f"kind={self.test_kind!r})")


def compute_weights(design, numerator, denominator):
    """Assemble effective weights and centered treatments.

    The effective weight at each row is availability times the ratio of
    the numerator to the denominator probability of the treatment
    actually received; the centered treatment is the indicator minus the
    numerator probability of treatment. No truncation is applied.

    Parameters
    ----------
    design : Design
    numerator, denominator : ProbabilityModel

    Returns
    -------
    WeightInfo
    """
    p1_num = np.asarray(numerator.prob1(design), dtype=np.float64)
    p1_den = np.asarray(denominator.prob1(design), dtype=np.float64)
    available = design.avail > 0.0
    _guard(p1_num[available], "numerator")
    _guard(p1_den[available], "denominator")
    a = design.trt
    prob_num = np.where(a > 0.0, p1_num, 1.0 - p1_num)
    prob_den = np.where(a > 0.0, p1_den, 1.0 - p1_den)
    ratio = np.divide(prob_num, prob_den,
                      out=np.zeros_like(prob_num), where=available)
    return WeightInfo(
        effective=design.avail * ratio,
        ratio=ratio,
        centered=a - p1_num,
        numerator=numerator,
        denominator=denominator,
    )


def fit_wcls(design, weight_info):
    """Solve the weighted normal equations for (alpha, beta).

    Equivalent to weighted least squares of the lag-k response on the
    stacked regressor (g, centered treatment * f) with the effective
    weights. Point estimates only; call sandwich_variance next.

    Raises
    ------
    SingularSystem
        If the weighted cross-product matrix is singular or its
        condition number exceeds 1e12.
    """
    x = np.hstack([design.g, weight_info.centered[:, None] * design.f])
    omega = weight_info.effective
    n = design.n
    bread = x.T @ (omega[:, None] * x) / n
    rhs = x.T @ (omega * design.response) / n
    condition_number = float(np.linalg.cond(bread))
    if not np.isfinite(condition_number) or condition_number > CONDITION_LIMIT:
        raise SingularSystem(
            f"weighted cross-product matrix is numerically singular "
            f"(condition number {condition_number:.3g})",
            condition_number=condition_number,
        )
    try:
        coefficients = np.linalg.solve(bread, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(
            "weighted cross-product matrix is singular",
            condition_number=condition_number,
        ) from exc
    residuals = design.response - x @ coefficients
    return WclsFit(design, weight_info, coefficients, bread, residuals,
                   condition_number)


def _person_scores(fit):
    """Per-individual estimating-function sums, (n, q+p)."""
    design = fit.design
    u_rows = (fit.weight_info.effective * fit.residuals)[:, None] * fit.regressors
    return u_rows, u_rows.reshape(design.n, design.rows_per_individual, -1).sum(axis=1)


def _nuisance_adjustment(fit, denominator_report, numerator_report):
    """Per-individual additive corrections to the estimating function
    accounting for estimated weight probabilities, (n, q+p)."""
    design = fit.design
    n = design.n
    q = design.q
    u_rows, _ = _person_scores(fit)
    adjustment = np.zeros((n, q + design.p))

    def check(report, side):
        if report.scores.shape[0] != n:
            raise DimensionMismatch(
                f"{side} report has scores for {report.scores.shape[0]} "
                f"individuals, design has {n}"
            )
        if report.model is None:
            raise DimensionMismatch(f"{side} report carries no model")

    if denominator_report is not None:
        check(denominator_report, "denominator")
        dlog = denominator_report.model.dlogp_treatment(design)
        cross = u_rows.T @ dlog / n
        # influence of the estimated denominator: eta_hat - eta is
        # minus the inverse score derivative times the averaged score
        solved = np.linalg.solve(denominator_report.derivative,
                                 denominator_report.scores.T)
        adjustment += (cross @ solved).T

    if numerator_report is not None:
        check(numerator_report, "numerator")
        model = numerator_report.model
        dlog = model.dlogp_treatment(design)
        dp1 = model.dprob1(design)
        omega = fit.weight_info.effective
        resid = fit.residuals
        phi = fit.regressors
        cross = u_rows.T @ dlog / n
        scaled_f = (omega * resid)[:, None] * design.f
        cross[q:, :] -= scaled_f.T @ dp1 / n
        effect_mean = design.f @ fit.beta
        cross += ((omega * effect_mean)[:, None] * phi).T @ dp1 / n
        solved = np.linalg.solve(numerator_report.derivative,
                                 numerator_report.scores.T)
        adjustment -= (cross @ solved).T

    return adjustment


def sandwich_variance(fit, denominator_report=None, numerator_report=None):
    """Attach the adjusted sandwich variance to a fit.

    The middle of the sandwich averages the squared per-individual
    estimating functions after adding, for each estimated probability
    model, the cross-derivative of the estimating function with respect
    to that model's coefficients times the model's own influence. Pass a
    report only for probabilities that were actually estimated; known or
    prespecified probabilities need no adjustment.

    Returns a new WclsFit with meat and vcov set.
    """
    design = fit.design
    n = design.n
    _, person = _person_scores(fit)
    adjustment = _nuisance_adjustment(fit, denominator_report, numerator_report)
    psi = person + adjustment
    meat = psi.T @ psi / n
    vcov = _sandwich(fit.bread, meat, n)
    applied = tuple(side for side, report in
                    (("denominator", denominator_report),
                     ("numerator", numerator_report)) if report is not None)
    corrections = dict(fit.corrections)
    corrections["weight_adjusted"] = applied
    return fit._with(meat=meat, vcov=vcov, corrections=corrections,
                     nuisance_adjustment=adjustment)


def _sandwich(bread, meat, n):
    half = np.linalg.solve(bread, meat)
    vcov = np.linalg.solve(bread, half.T).T / n
    return (vcov + vcov.T) / 2.0


def small_sample_correct(fit):
    """Inflate residuals by inverse block leverage when n <= 50.

    Each person's residual vector (across their design rows) is
    premultiplied by the inverse of the identity minus that person's
    leverage block before the middle of the sandwich is recomputed; the
    nuisance adjustment terms are left untouched. Above n = 50 the fit
    is returned unchanged.
    """
    n, _, _, p, q = fit.dims
    if n > SMALL_SAMPLE_N:
        return fit
    if fit.meat is None:
        raise InvariantViolation("run sandwich_variance before the small-sample correction")
    design = fit.design
    m = design.rows_per_individual
    d = p + q
    blocks = np.ascontiguousarray(fit.regressors.reshape(n, m, d))
    w = fit.weight_info.effective.reshape(n, m)
    resid = fit.residuals.reshape(n, m)
    binv_sum = np.linalg.inv(fit.bread) / n
    try:
        adjusted = _kernels.adjust_residuals_leverage(blocks, w, binv_sum, resid)
    except np.linalg.LinAlgError as exc:
        raise SingularLeverage(
            "identity minus leverage is singular for some individual"
        ) from exc
    if not np.all(np.isfinite(adjusted)):
        raise SingularLeverage(
            "identity minus leverage is numerically singular for some individual"
        )
    u_rows = (w * adjusted)[:, :, None] * blocks
    person = u_rows.sum(axis=1)
    psi = person if fit.nuisance_adjustment is None else person + fit.nuisance_adjustment
    meat = psi.T @ psi / n
    vcov = _sandwich(fit.bread, meat, n)
    corrections = dict(fit.corrections)
    corrections["small_sample"] = True
    return fit._with(meat=meat, vcov=vcov, corrections=corrections)


def infer(fit, contrast, alpha0=0.05, one_sided=False):
    """Test a contrast of the effect coefficients.

    A 1-d contrast c yields a t test of c'beta with n - p - q degrees of
    freedom and the interval estimate +- t(1 - alpha0/2) * SE (the
    1 - alpha0 quantile instead when one_sided is set). A 2-d contrast
    with p' columns yields a Hotelling test: the Wald statistic is
    referred to p'(n-q-1)/(n-q-p') times an F(p', n-q-p') quantile.

    Raises
    ------
    DegreesOfFreedomExhausted
        If n <= p + q (t) or n <= q + p' (Hotelling).
    """
    if fit.vcov is None:
        raise InvariantViolation("fit has no variance attached; run sandwich_variance")
    n, _, _, p, q = fit.dims
    contrast = np.asarray(contrast, dtype=np.float64)
    vcov_beta = fit.vcov[q:, q:]

    if contrast.ndim == 1:
        if contrast.shape[0] != p:
            raise DimensionMismatch(
                f"contrast has {contrast.shape[0]} entries for {p} effect coefficients"
            )
        df = n - p - q
        if df < 1:
            raise DegreesOfFreedomExhausted(
                f"n={n} leaves no degrees of freedom with p={p}, q={q}"
            )
        estimate = float(contrast @ fit.beta)
        variance = float(contrast @ vcov_beta @ contrast)
        std_error = float(np.sqrt(max(variance, 0.0)))
        if std_error > 0.0:
            t_stat = estimate / std_error
        else:
            t_stat = 0.0 if estimate == 0.0 else np.inf * np.sign(estimate)
        p_value = float(2.0 * stats.t.sf(abs(t_stat), df))
        quantile = 1.0 - alpha0 if one_sided else 1.0 - alpha0 / 2.0
        critical = float(stats.t.ppf(quantile, df))
        interval = (estimate - critical * std_error, estimate + critical * std_error)
        return InferenceResult(estimate, std_error, df, interval, p_value, "t")

    if contrast.ndim != 2 or contrast.shape[0] != p:
        raise DimensionMismatch(
            f"contrast shape {contrast.shape} incompatible with {p} effect coefficients"
        )
    p_prime = contrast.shape[1]
    df2 = n - q - p_prime
    if df2 < 1:
        raise DegreesOfFreedomExhausted(
            f"n={n} leaves no Hotelling degrees of freedom with q={q}, p'={p_prime}"
        )
    estimate = contrast.T @ fit.beta
    spread = contrast.T @ vcov_beta @ contrast
    try:
        wald = float(estimate @ np.linalg.solve(spread, estimate))
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("contrast variance matrix is singular") from exc
    scale = df2 / (p_prime * (n - q - 1))
    p_value = float(stats.f.sf(wald * scale, p_prime, df2))
    std_error = np.sqrt(np.clip(np.diag(spread), 0.0, None))
    return InferenceResult(estimate, std_error, (p_prime, df2), None, p_value,
                           "hotelling")
