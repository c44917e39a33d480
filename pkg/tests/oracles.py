"""Independent reference computations used by the dual-route checks.

Everything here recomputes a target quantity from scratch with a
different method than the library (extended-precision normal equations,
incomplete-beta inversion, direct likelihood evaluation) so an agreement
test cannot pass by construction.
"""

import numpy as np
from mpmath import mp, mpf


def wls_normal_equations(x, w, y, dps=50):
    """Weighted least squares via explicit normal equations at `dps` digits.

    x : (N, d) regressor matrix
    w : (N,) nonnegative weights
    y : (N,) responses
    """
    with mp.workdps(dps):
        rows, d = x.shape
        a = mp.matrix(d, d)
        b = mp.matrix(d, 1)
        for i in range(rows):
            wi = mpf(float(w[i]))
            if wi == 0:
                continue
            xi = [mpf(float(v)) for v in x[i]]
            yi = mpf(float(y[i]))
            for r in range(d):
                b[r] += wi * xi[r] * yi
                for c in range(d):
                    a[r, c] += wi * xi[r] * xi[c]
        solution = mp.lu_solve(a, b)
        return np.array([float(v) for v in solution])


def student_t_quantile(prob, df, dps=40):
    """Student-t quantile by bisection on the incomplete-beta CDF."""
    if not 0.5 <= prob < 1:
        raise ValueError("only upper-half quantiles supported")
    with mp.workdps(dps):
        half_df = mpf(df) / 2

        def cdf(t):
            if t == 0:
                return mpf("0.5")
            x = mpf(df) / (mpf(df) + t * t)
            tail = mp.betainc(half_df, mpf("0.5"), 0, x, regularized=True) / 2
            return 1 - tail

        target = mpf(str(prob))
        lo, hi = mpf(0), mpf(1)
        while cdf(hi) < target:
            hi *= 2
        for _ in range(200):
            mid = (lo + hi) / 2
            if cdf(mid) < target:
                lo = mid
            else:
                hi = mid
        return float((lo + hi) / 2)


def bernoulli_loglik(coef, features, outcome, avail):
    """Log likelihood of a logistic treatment model, availability masked."""
    eta = features @ np.asarray(coef, dtype=float)
    # log expit(eta) and log expit(-eta), written stably
    log_p1 = -np.logaddexp(0.0, -eta)
    log_p0 = -np.logaddexp(0.0, eta)
    contrib = outcome * log_p1 + (1.0 - outcome) * log_p0
    return float(np.sum(avail * contrib))


def grid_argmax_loglik(features, outcome, avail, center, radius, steps):
    """Best coefficient pair on a square grid around `center`."""
    grid = np.linspace(-radius, radius, steps)
    best, best_val = None, -np.inf
    for da in grid:
        for db in grid:
            coef = (center[0] + da, center[1] + db)
            val = bernoulli_loglik(coef, features, outcome, avail)
            if val > best_val:
                best, best_val = coef, val
    return np.array(best)
