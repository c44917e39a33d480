"""Generalized estimating equation comparators.

These are the classical GEE fits the simulation studies compare against:
independence or AR(1) working correlation, uncentered treatment by
default, sandwich standard errors. A centered variant (treatment minus a
numerator probability) is also exposed; with an independence correlation
and the weights from compute_weights it coincides with the primary
estimator, which is a structural identity the tests rely on.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import toeplitz

from .errors import (
    DimensionMismatch,
    InvariantViolation,
    NonPositiveDefiniteCorrelation,
    SingularLeverage,
    SingularSystem,
)
from .wcls import CONDITION_LIMIT, SMALL_SAMPLE_N


class Correlation:
    """Working correlation specification for fit_gee."""

    def __init__(self, kind, matrix=None):
        if kind not in ("independence", "ar1_fixed", "ar1_estimated"):
            raise InvariantViolation(f"unknown correlation kind {kind!r}")
        if kind == "ar1_fixed":
            matrix = np.asarray(matrix, dtype=np.float64)
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise InvariantViolation("fixed correlation matrix must be square")
            if not np.allclose(matrix, matrix.T, atol=1e-12):
                raise NonPositiveDefiniteCorrelation("correlation matrix is not symmetric")
            try:
                np.linalg.cholesky(matrix)
            except np.linalg.LinAlgError as exc:
                raise NonPositiveDefiniteCorrelation(
                    "correlation matrix is not positive definite"
                ) from exc
        elif matrix is not None:
            raise InvariantViolation(f"{kind} takes no matrix")
        self.kind = kind
        self.matrix = matrix

    def __repr__(self):
        return f"Correlation({self.kind!r})"


def independence():
    return Correlation("independence")


def ar1_fixed(matrix):
    return Correlation("ar1_fixed", matrix)


def ar1_estimated():
    return Correlation("ar1_estimated")


def ar1_matrix(parameter, size):
    """AR(1) correlation matrix with entries parameter^|t-u|."""
    if not -1.0 < parameter < 1.0:
        raise NonPositiveDefiniteCorrelation(
            f"AR(1) parameter {parameter:g} outside (-1, 1)"
        )
    return toeplitz(parameter ** np.arange(size, dtype=np.float64))


class GeeFit:
    """A fitted GEE comparator.

    Coefficients are ordered (working-model features, treatment-by-effect
    features); `beta` is the treatment block. `vcov` is the sandwich
    variance scaled for the sample. `correlation_parameter` is the
    estimated AR(1) parameter when correlation was ar1_estimated, else
    None. `dims` mirrors the primary estimator's (n, T, k, p, q) so the
    same inference routine applies.
    """

    def __init__(self, design, coefficients, bread, residuals, condition_number,
                 correlation_kind, correlation_parameter, rinv, sqrtw, regressors,
                 meat, vcov, corrections=None):
        q = design.q
        self.design = design
        self.coefficients = coefficients
        self.alpha = coefficients[:q]
        self.beta = coefficients[q:]
        self.bread = bread
        self.residuals = residuals
        self.condition_number = condition_number
        self.correlation_kind = correlation_kind
        self.correlation_parameter = correlation_parameter
        self.meat = meat
        self.vcov = vcov
        self.corrections = dict(corrections or {"small_sample": False})
        self.dims = (design.n, design.T, design.k, design.p, design.q)
        self._rinv = rinv
        self._sqrtw = sqrtw
        self._regressors = regressors

    def __repr__(self):
        n, T, k, p, q = self.dims
        return (f"GeeFit(n={n}, T={T}, correlation={self.correlation_kind!r}, "
                f"parameter={self.correlation_parameter})")


def _solve_gls(design, x, w, rinv):
    """Generalized least squares with per-person precision
    diag(sqrt(w_i)) R^-1 diag(sqrt(w_i)); returns the pieces a GeeFit needs."""
    n = design.n
    m = design.rows_per_individual
    d = x.shape[1]
    sqrtw = np.sqrt(w).reshape(n, m)
    xw = x.reshape(n, m, d) * sqrtw[:, :, None]
    yw = design.response.reshape(n, m) * sqrtw
    bread = np.einsum("imd,mu,iue->de", xw, rinv, xw) / n
    rhs = np.einsum("imd,mu,iu->d", xw, rinv, yw) / n
    condition_number = float(np.linalg.cond(bread))
    if not np.isfinite(condition_number) or condition_number > CONDITION_LIMIT:
        raise SingularSystem(
            f"GEE cross-product matrix is numerically singular "
            f"(condition number {condition_number:.3g})",
            condition_number=condition_number,
        )
    try:
        coefficients = np.linalg.solve(bread, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("GEE cross-product matrix is singular",
                             condition_number=condition_number) from exc
    residuals = design.response - x @ coefficients
    return coefficients, bread, residuals, condition_number, sqrtw


def _gee_meat(design, residuals, sqrtw, rinv, x):
    n = design.n
    m = design.rows_per_individual
    d = x.shape[1]
    xw = x.reshape(n, m, d) * sqrtw[:, :, None]
    ew = residuals.reshape(n, m) * sqrtw
    scores = np.einsum("imd,mu,iu->id", xw, rinv, ew)
    return scores.T @ scores / n


def _gee_vcov(bread, meat, n):
    half = np.linalg.solve(bread, meat)
    vcov = np.linalg.solve(bread, half.T).T / n
    return (vcov + vcov.T) / 2.0


def fit_gee(design, correlation, centered_by=None, prior_weights=None):
    """Fit a GEE with the given working correlation.

    Parameters
    ----------
    design : Design
        Supplies the working features g, the effect features f, and the
        response; the mean model is g plus treatment-times-f, with the
        treatment centered when `centered_by` is given.
    correlation : Correlation
        independence, ar1_fixed(matrix), or ar1_estimated. The estimated
        variant runs an independence pass, moment-estimates the lag-1
        correlation of the residuals, and refits.
    centered_by : ProbabilityModel, optional
        Numerator model whose treatment probability centers the
        treatment indicator. Default leaves the indicator raw.
    prior_weights : array, optional
        Per-row weights entering the precision as
        diag(sqrt(w)) R^-1 diag(sqrt(w)). Default is the availability
        indicator.

    Raises
    ------
    SingularSystem, NonPositiveDefiniteCorrelation
    """
    m = design.rows_per_individual
    if centered_by is not None:
        treatment_block = (design.trt - centered_by.prob1(design))[:, None] * design.f
    else:
        treatment_block = design.trt[:, None] * design.f
    x = np.hstack([design.g, treatment_block])
    w = np.asarray(prior_weights if prior_weights is not None else design.avail,
                   dtype=np.float64)
    if w.shape[0] != len(design):
        raise DimensionMismatch(f"{w.shape[0]} prior weights for {len(design)} rows")
    if np.any(w < 0.0):
        raise InvariantViolation("prior weights must be non-negative")

    parameter = None
    if correlation.kind == "independence":
        rinv = np.eye(m)
    elif correlation.kind == "ar1_fixed":
        if correlation.matrix.shape[0] != m:
            raise DimensionMismatch(
                f"correlation matrix is {correlation.matrix.shape[0]}x"
                f"{correlation.matrix.shape[0]}, design rows per individual {m}"
            )
        rinv = np.linalg.inv(correlation.matrix)
    else:
        first = fit_gee(design, independence(), centered_by=centered_by,
                        prior_weights=prior_weights)
        parameter = _moment_ar1(design, first.residuals, first._sqrtw)
        rinv = np.linalg.inv(ar1_matrix(parameter, m))

    coefficients, bread, residuals, condition_number, sqrtw = _solve_gls(
        design, x, w, rinv)
    meat = _gee_meat(design, residuals, sqrtw, rinv, x)
    vcov = _gee_vcov(bread, meat, design.n)
    return GeeFit(design, coefficients, bread, residuals, condition_number,
                  correlation.kind, parameter, rinv, sqrtw, x, meat, vcov)


def _moment_ar1(design, residuals, sqrtw):
    """Lag-1 moment estimate of the AR(1) parameter from residuals."""
    n = design.n
    m = design.rows_per_individual
    e = residuals.reshape(n, m)
    w = sqrtw ** 2
    scale_num = (w * e ** 2).sum()
    scale_den = w.sum()
    if scale_den <= 0 or scale_num <= 0:
        raise NonPositiveDefiniteCorrelation("no residual variation to estimate AR(1) from")
    sigma2 = scale_num / scale_den
    pair_w = sqrtw[:, :-1] * sqrtw[:, 1:]
    pair_den = pair_w.sum()
    if pair_den <= 0:
        raise NonPositiveDefiniteCorrelation("no adjacent occasion pairs for AR(1) estimate")
    lag1 = (pair_w * e[:, :-1] * e[:, 1:]).sum() / pair_den
    parameter = lag1 / sigma2
    if not -1.0 < parameter < 1.0:
        raise NonPositiveDefiniteCorrelation(
            f"moment AR(1) estimate {parameter:g} outside (-1, 1)"
        )
    return float(parameter)


def small_sample_correct(fit):
    """Leverage-inflate GEE residuals when n <= 50, as for the primary fit.

    Person i's residual vector is premultiplied by the inverse of the
    identity minus D_i B^-1 D_i' P_i, with P_i the person's precision
    matrix, then the sandwich middle is recomputed.
    """
    n, _, _, _, _ = fit.dims
    if n > SMALL_SAMPLE_N:
        return fit
    design = fit.design
    m = design.rows_per_individual
    d = fit._regressors.shape[1]
    blocks = fit._regressors.reshape(n, m, d)
    resid = fit.residuals.reshape(n, m)
    binv_sum = np.linalg.inv(fit.bread) / n
    adjusted = np.empty_like(resid)
    eye = np.eye(m)
    for i in range(n):
        precision = fit._sqrtw[i][:, None] * fit._rinv * fit._sqrtw[i][None, :]
        h = blocks[i] @ binv_sum @ blocks[i].T @ precision
        try:
            adjusted[i] = np.linalg.solve(eye - h, resid[i])
        except np.linalg.LinAlgError as exc:
            raise SingularLeverage(
                f"identity minus leverage is singular for individual {design.ids[i]!r}"
            ) from exc
    meat = _gee_meat(design, adjusted.reshape(-1), fit._sqrtw, fit._rinv,
                     fit._regressors)
    vcov = _gee_vcov(fit.bread, meat, n)
    corrections = dict(fit.corrections)
    corrections["small_sample"] = True
    return GeeFit(design, fit.coefficients, fit.bread, fit.residuals,
                  fit.condition_number, fit.correlation_kind,
                  fit.correlation_parameter, fit._rinv, fit._sqrtw,
                  fit._regressors, meat, vcov, corrections)
