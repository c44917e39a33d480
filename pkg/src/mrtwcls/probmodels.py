"""Treatment-probability models for the weight numerator and denominator.

Three kinds are supported: a known constant, a known per-occasion table
(for example the true randomization probabilities recorded by the
simulator), and a logistic model in declared features. Fitted models
come with a NuisanceFitReport carrying per-individual score sums and the
averaged score derivative, which the sandwich variance uses to account
for the sampling error of estimated probabilities.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import (
    Degenerate,
    DimensionMismatch,
    InvariantViolation,
    NonConvergence,
    PositivityError,
    RankDeficient,
    Separation,
)

PROB_FLOOR = 1e-6
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
SEPARATION_NORM = 30.0


class NuisanceFitReport:
    """Score exports of a fitted probability model.

    Attributes
    ----------
    coefficients : (d,) array
    converged : bool
    iterations : int
    scores : (n, d) array
        Per-individual score vectors, each summed over that individual's
        occasions; their average is zero at the fitted coefficients.
    derivative : (d, d) array
        Averaged derivative of the score with respect to the
        coefficients, evaluated at the fit. Negative definite for the
        likelihood-based fits here.
    model : ProbabilityModel
        The model these scores belong to.
    """

    def __init__(self, coefficients, converged, iterations, scores, derivative, model):
        self.coefficients = np.asarray(coefficients, dtype=np.float64)
        self.converged = bool(converged)
        self.iterations = int(iterations)
        self.scores = np.asarray(scores, dtype=np.float64)
        self.derivative = np.asarray(derivative, dtype=np.float64)
        self.model = model
        d = self.coefficients.shape[0]
        if self.scores.ndim != 2 or self.scores.shape[1] != d:
            raise DimensionMismatch(
                f"scores shape {self.scores.shape} incompatible with {d} coefficients"
            )
        if self.derivative.shape != (d, d):
            raise DimensionMismatch(
                f"derivative shape {self.derivative.shape}, expected {(d, d)}"
            )


class ProbabilityModel:
    """Base treatment-probability law p(1 | features)."""

    kind = None
    fitted = False
    coefficients = None

    def prob1(self, design):
        """Probability of treatment 1 for every design row, (N,) array."""
        raise NotImplementedError

    def dlogp_treatment(self, design):
        """(N, d) derivative of log p(A_t | .) in the coefficients."""
        raise InvariantViolation(f"{self.kind} model has no estimated coefficients")

    def dprob1(self, design):
        """(N, d) derivative of p(1 | .) in the coefficients."""
        raise InvariantViolation(f"{self.kind} model has no estimated coefficients")

    def _row_prob1(self, row):
        raise NotImplementedError


class KnownConstant(ProbabilityModel):
    """Constant probability; optionally carrying an estimated value.

    When produced by fit_constant_numerator the single coefficient is the
    estimated rate itself, and the score derivatives below expose the
    estimating equation sum_t I_t (A_t - rho) = 0.
    """

    kind = "known_constant"

    def __init__(self, value, fitted=False):
        value = float(value)
        if not 0.0 < value < 1.0:
            raise Degenerate(f"constant probability must lie in (0, 1), got {value:g}")
        self.value = value
        self.fitted = bool(fitted)
        self.coefficients = np.array([value]) if fitted else None

    def prob1(self, design):
        return np.full(len(design), self.value)

    def dlogp_treatment(self, design):
        if not self.fitted:
            return super().dlogp_treatment(design)
        rho = self.value
        return ((design.trt - rho) / (rho * (1.0 - rho)))[:, None]

    def dprob1(self, design):
        if not self.fitted:
            return super().dprob1(design)
        return np.ones((len(design), 1))

    def _row_prob1(self, row):
        return self.value

    def __repr__(self):
        return f"KnownConstant({self.value:g}, fitted={self.fitted})"


class KnownPerOccasion(ProbabilityModel):
    """Known probabilities supplied per design row (no parameters)."""

    kind = "known_per_occasion"

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float64).reshape(-1)

    def prob1(self, design):
        if self.table.shape[0] != len(design):
            raise DimensionMismatch(
                f"probability table has {self.table.shape[0]} entries "
                f"for {len(design)} design rows"
            )
        return self.table

    def _row_prob1(self, row):
        return self.table[row.index]

    def __repr__(self):
        return f"KnownPerOccasion(<{self.table.shape[0]} rows>)"


class Logistic(ProbabilityModel):
    """expit(x' coef) on the design's numerator or denominator features."""

    kind = "logistic"

    def __init__(self, coefficients, side, fitted=False):
        if side not in ("numerator", "denominator"):
            raise InvariantViolation(f"side must be numerator or denominator, got {side!r}")
        self.coefficients = np.asarray(coefficients, dtype=np.float64).reshape(-1)
        self.side = side
        self.fitted = bool(fitted)

    def features(self, design):
        x = (design.numerator_features if self.side == "numerator"
             else design.denominator_features)
        if x.shape[1] != self.coefficients.shape[0]:
            raise DimensionMismatch(
                f"{self.side} features have {x.shape[1]} columns for "
                f"{self.coefficients.shape[0]} coefficients"
            )
        return x

    def prob1(self, design):
        return expit(self.features(design) @ self.coefficients)

    def dlogp_treatment(self, design):
        x = self.features(design)
        return (design.trt - self.prob1(design))[:, None] * x

    def dprob1(self, design):
        x = self.features(design)
        p1 = self.prob1(design)
        return (p1 * (1.0 - p1))[:, None] * x

    def _row_prob1(self, row):
        x = row.numerator if self.side == "numerator" else row.denominator
        return float(expit(x @ self.coefficients))

    def __repr__(self):
        return (f"Logistic(side={self.side!r}, coefficients="
                f"{np.array2string(self.coefficients, precision=4)})")


def _guard(p1, context):
    p1 = np.atleast_1d(np.asarray(p1, dtype=np.float64))
    if p1.size and (p1.min() < PROB_FLOOR or p1.max() > 1.0 - PROB_FLOOR):
        bad = p1[(p1 < PROB_FLOOR) | (p1 > 1.0 - PROB_FLOOR)][0]
        raise PositivityError(
            f"{context} probability {bad:.3g} outside [{PROB_FLOOR:g}, {1 - PROB_FLOOR:g}]"
        )
    return p1


def evaluate_probability(model, row, a):
    """p(a | row) = p^a (1-p)^(1-a) for one design row, positivity-guarded."""
    if a not in (0, 1, 0.0, 1.0):
        raise InvariantViolation(f"treatment value must be 0 or 1, got {a!r}")
    p1 = float(_guard(model._row_prob1(row), model.kind)[0])
    return p1 if a in (1, 1.0) else 1.0 - p1


def fit_logistic(design, side, availability_restricted=True):
    """Maximum-likelihood logistic fit of treatment on one feature block.

    Newton/IRLS from a zero start; only available occasions contribute
    when availability_restricted (probabilities are conditional on
    availability). Returns the fitted model and its score report.
    """
    x = (design.numerator_features if side == "numerator"
         else design.denominator_features)
    if x.shape[1] == 0:
        raise InvariantViolation(f"no {side} features declared")
    a = design.trt
    w_fit = design.avail if availability_restricted else np.ones(len(design))

    beta = np.zeros(x.shape[1])
    converged = False
    iterations = 0
    for iterations in range(1, IRLS_MAX_ITER + 1):
        p1 = expit(x @ beta)
        curvature = w_fit * p1 * (1.0 - p1)
        hessian = x.T @ (curvature[:, None] * x)
        gradient = x.T @ (w_fit * (a - p1))
        try:
            step = np.linalg.solve(hessian, gradient)
        except np.linalg.LinAlgError as exc:
            raise RankDeficient(
                f"{side} logistic normal equations are singular "
                f"(features collinear or degenerate)"
            ) from exc
        beta = beta + step
        if np.max(np.abs(beta)) > SEPARATION_NORM:
            raise Separation(
                f"{side} logistic coefficients diverged past {SEPARATION_NORM:g} "
                f"(separated or degenerate treatment pattern)"
            )
        if np.max(np.abs(step)) < IRLS_TOL:
            converged = True
            break
    if not converged:
        raise NonConvergence(f"{side} logistic IRLS did not converge in {IRLS_MAX_ITER} iterations")

    model = Logistic(beta, side, fitted=True)
    p1 = expit(x @ beta)
    row_scores = (w_fit * (a - p1))[:, None] * x
    scores = row_scores.reshape(design.n, design.rows_per_individual, -1).sum(axis=1)
    curvature = w_fit * p1 * (1.0 - p1)
    derivative = -(x.T @ (curvature[:, None] * x)) / design.n
    report = NuisanceFitReport(beta, converged, iterations, scores, derivative, model)
    return model, report


def fit_constant_numerator(design):
    """Availability-weighted treatment rate as the numerator probability.

    rho = (sum of avail * trt) / (sum of avail), the closed-form root of
    sum_t I_t (A_t - rho) = 0. The report exposes that estimating
    equation so downstream variance adjustments treat this estimator
    uniformly with logistic numerators.
    """
    avail = design.avail
    total = avail.sum()
    if total <= 0:
        raise Degenerate("no available occasions: cannot estimate a treatment rate")
    rho = float((avail * design.trt).sum() / total)
    if rho <= 0.0 or rho >= 1.0:
        raise Degenerate(
            f"estimated treatment rate {rho:g} is degenerate "
            "(every available occasion has the same treatment)"
        )
    model = KnownConstant(rho, fitted=True)
    row_scores = (avail * (design.trt - rho))[:, None]
    scores = row_scores.reshape(design.n, design.rows_per_individual, 1).sum(axis=1)
    derivative = np.array([[-total / design.n]])
    report = NuisanceFitReport(np.array([rho]), True, 0, scores, derivative, model)
    return model, report
