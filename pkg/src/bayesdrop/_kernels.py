"""Compiled inner loop for logistic-regression training.

Runs a block of SGD steps on pre-drawn sample indices and uniforms.  The
arithmetic mirrors ``training._step`` for LogisticRegressionModel; only the
summation order differs.
"""

import math

import numpy as np
from numba import njit

from .mask_distribution import LOGIT_BOUND

OK = 0
BAD_THETA = 1
BAD_LOGLIK = 2
BAD_SCORE = 3
BAD_REGULARIZER = 4

# reassociation only: the non-finite checks below rely on NaN/Inf semantics
_FASTMATH = {"reassoc", "contract", "arcp"}


@njit(cache=True)
def _log_sigmoid(u):
    if u >= 0.0:
        return -math.log1p(math.exp(-u))
    return u - math.log1p(math.exp(u))


@njit(cache=True)
def _sigmoid(u):
    if u >= 0.0:
        return 1.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return e / (1.0 + e)


@njit(cache=True, fastmath=_FASTMATH)
def logreg_block(
    theta, bias, logits, index, prior_logit, X, Y, idx, U, t0,
    a, b, c, d, delta, delta_one_over_t,
    fit_bias, masked, update_theta, update_rho,
    use_baseline, baseline, decay, out,
):
    """Run ``idx.shape[0]`` steps in place.

    ``bias`` is a length-1 array.  ``baseline`` is a length-2 array
    ``[value, initialised]``.  ``out`` receives ``[status, step, loglik_sum]``.
    """
    K, B = idx.shape
    m = theta.shape[0]
    P = logits.shape[0]
    lam = np.ones(m)
    z = np.ones((B, m))
    lls = np.empty(B)
    g = np.empty(m)
    zx = np.empty(m)
    score = np.empty(P)
    reg = np.empty(P)
    ll_total = 0.0
    if masked:
        for i in range(m):
            lam[i] = _sigmoid(logits[index[i]])
    for k in range(K):
        t = t0 + k
        eta = a / (1.0 + t / b)
        eps = c / (1.0 + t / d)
        for i in range(m):
            g[i] = 0.0
        gb = 0.0
        for j in range(B):
            row = idx[k, j]
            if masked:
                for i in range(m):
                    z[j, i] = 1.0 if U[k, j, i] < lam[i] else 0.0
            for i in range(m):
                zx[i] = z[j, i] * X[row, i]
            u = bias[0]
            for i in range(m):
                u += theta[i] * zx[i]
            y = Y[row]
            lls[j] = _log_sigmoid(u) if y != 0 else _log_sigmoid(-u)
            r = y - _sigmoid(u)
            for i in range(m):
                g[i] += r * zx[i]
            gb += r
        ll_mean = 0.0
        for j in range(B):
            ll_mean += lls[j]
        ll_mean /= B
        for i in range(m):
            g[i] /= B
        gb /= B
        for i in range(m):
            if not math.isfinite(g[i]):
                out[0], out[1] = BAD_THETA, t
                return
        if fit_bias and not math.isfinite(gb):
            out[0], out[1] = BAD_THETA, t
            return
        if not math.isfinite(ll_mean):
            out[0], out[1] = BAD_LOGLIK, t
            return

        if update_rho:
            if use_baseline:
                if baseline[1] == 0.0:
                    baseline[0] = ll_mean
                    baseline[1] = 1.0
                base = baseline[0]
            else:
                base = 0.0
            for p in range(P):
                score[p] = 0.0
                reg[p] = 0.0
            for j in range(B):
                w = lls[j] - base
                for i in range(m):
                    score[index[i]] += (z[j, i] - lam[i]) * w
            dt = 1.0 / (t + 1.0) if delta_one_over_t else delta
            for i in range(m):
                rho = logits[index[i]]
                reg[index[i]] += lam[i] * (1.0 - lam[i]) * (prior_logit[i] - rho)
            for p in range(P):
                score[p] /= B
                if not math.isfinite(score[p]):
                    out[0], out[1] = BAD_SCORE, t
                    return
                reg[p] *= dt
                if not math.isfinite(reg[p]):
                    out[0], out[1] = BAD_REGULARIZER, t
                    return

        if update_theta:
            for i in range(m):
                theta[i] += eta * g[i]
            if fit_bias:
                bias[0] += eta * gb
        if update_rho:
            for p in range(P):
                v = logits[p] + eps * (score[p] + reg[p])
                if v > LOGIT_BOUND:
                    v = LOGIT_BOUND
                elif v < -LOGIT_BOUND:
                    v = -LOGIT_BOUND
                logits[p] = v
            for i in range(m):
                lam[i] = _sigmoid(logits[index[i]])
        if use_baseline:
            if baseline[1] == 0.0:
                baseline[0] = ll_mean
                baseline[1] = 1.0
            else:
                baseline[0] = decay * baseline[0] + (1.0 - decay) * ll_mean
        ll_total += ll_mean
    out[0], out[1], out[2] = OK, t0 + K, ll_total
