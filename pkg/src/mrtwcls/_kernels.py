"""Hot numerical kernels with a numba JIT path and a pure-numpy fallback.

The backend is chosen once at import time from the ``MRTWCLS_BACKEND``
environment variable: ``numba`` (JIT, the default when numba imports),
``numpy`` (vectorized fallback), or ``auto``. Both backends of
:func:`simulate_panel` consume pre-drawn uniforms/normals and precomputed
probability lookup tables, and perform the same elementwise arithmetic in
the same order, so their outputs are bit-identical; the leverage kernel is
allowed to differ in the last bits (different but equivalent matmul
orderings) and agrees to numerical precision.
"""

from __future__ import annotations

import math
import os

import numpy as np

_env = os.environ.get("MRTWCLS_BACKEND", "auto").strip().lower()
if _env not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"MRTWCLS_BACKEND must be 'auto', 'numba', or 'numpy', got {_env!r}"
    )

BACKEND = "numpy"
if _env in ("auto", "numba"):
    try:
        from numba import njit

        BACKEND = "numba"
    except ImportError:
        if _env == "numba":
            raise
        BACKEND = "numpy"


def _simulate_panel_py(u_s, u_a, z, ps1, es, pa1, theta1, theta2, beta10, beta11, phi):
    n, T = u_s.shape
    amp = math.sqrt(1.0 - phi * phi)
    state = np.empty((n, T))
    trt = np.empty((n, T))
    prob = np.empty((n, T))
    y = np.empty((n, T))
    a_prev = np.zeros(n, dtype=np.int64)
    p_prev = np.zeros(n)
    eps = np.zeros(n)
    for t in range(T):
        s = np.where(u_s[:, t] < ps1[a_prev], 1.0, -1.0)
        s_idx = (s > 0.0).astype(np.int64)
        p = pa1[a_prev, s_idx]
        a = np.where(u_a[:, t] < p, 1.0, 0.0)
        if t == 0:
            eps = z[:, 0].copy()
            carry = np.zeros(n)
        else:
            eps = phi * eps + amp * z[:, t]
            carry = theta2 * (a_prev.astype(np.float64) - p_prev)
        y[:, t] = theta1 * (s - es[a_prev]) + carry + (a - p) * (beta10 + beta11 * s) + eps
        state[:, t] = s
        trt[:, t] = a
        prob[:, t] = p
        p_prev = p
        a_prev = (a > 0.0).astype(np.int64)
    return state, trt, prob, y


def _adjust_residuals_leverage_py(blocks, w, binv_sum, resid):
    n, m, _ = blocks.shape
    # H_ii = D_i B^{-1} D_i' Omega_i, with Omega_i the diagonal of effective weights.
    g = np.einsum("imd,de->ime", blocks, binv_sum)
    h = np.einsum("ime,ije->imj", g, blocks) * w[:, None, :]
    a = np.broadcast_to(np.eye(m), (n, m, m)) - h
    return np.linalg.solve(a, resid[:, :, None])[:, :, 0]


if BACKEND == "numba":

    @njit(cache=True, nogil=True)
    def _simulate_panel_nb(u_s, u_a, z, ps1, es, pa1, theta1, theta2, beta10, beta11, phi):
        n, T = u_s.shape
        amp = math.sqrt(1.0 - phi * phi)
        state = np.empty((n, T))
        trt = np.empty((n, T))
        prob = np.empty((n, T))
        y = np.empty((n, T))
        for i in range(n):
            a_prev = 0
            p_prev = 0.0
            eps = 0.0
            for t in range(T):
                s = 1.0 if u_s[i, t] < ps1[a_prev] else -1.0
                s_idx = 1 if s > 0.0 else 0
                p = pa1[a_prev, s_idx]
                a = 1.0 if u_a[i, t] < p else 0.0
                if t == 0:
                    eps = z[i, 0]
                    carry = 0.0
                else:
                    eps = phi * eps + amp * z[i, t]
                    carry = theta2 * (float(a_prev) - p_prev)
                y[i, t] = theta1 * (s - es[a_prev]) + carry + (a - p) * (beta10 + beta11 * s) + eps
                state[i, t] = s
                trt[i, t] = a
                prob[i, t] = p
                p_prev = p
                a_prev = 1 if a > 0.0 else 0
        return state, trt, prob, y

    @njit(cache=True, nogil=True)
    def _adjust_residuals_leverage_nb(blocks, w, binv_sum, resid):
        n, m, d = blocks.shape
        out = np.empty((n, m))
        for i in range(n):
            g = blocks[i] @ binv_sum
            h = g @ blocks[i].T
            a = -h * w[i]  # broadcast scales column j by w[i, j]
            for j in range(m):
                a[j, j] += 1.0
            out[i] = np.linalg.solve(a, resid[i])
        return out

    simulate_panel = _simulate_panel_nb
    adjust_residuals_leverage = _adjust_residuals_leverage_nb
else:
    simulate_panel = _simulate_panel_py
    adjust_residuals_leverage = _adjust_residuals_leverage_py
