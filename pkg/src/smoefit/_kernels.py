"""Numba-compiled inner loops for evaluation and loss gradients.

Pixel reductions run over a chunk grid that depends only on the pixel
count, so accumulated totals are identical for any number of worker
threads. The serial `*_range` functions release the GIL and are safe to
drive from thread pools.
"""

import math

import numpy as np
import numba
from numba import njit, prange

# The workqueue layer is fork-safe and available everywhere; picking it
# explicitly also avoids noisy TBB version warnings.
numba.config.THREADING_LAYER = "workqueue"

# Denominator magnitude below which the softmax gate is considered degenerate.
GATE_DENOM_GUARD = 1e-12

# Pixel counts below this run in a single chunk (no parallel dispatch).
_PARALLEL_MIN_PIXELS = 4096
_PARALLEL_CHUNKS = 64


def chunk_bounds(n_pixels):
    """Fixed chunk grid for a pixel count; independent of thread count."""
    nchunks = 1 if n_pixels < _PARALLEL_MIN_PIXELS else min(_PARALLEL_CHUNKS, n_pixels)
    return np.array(
        [(i * n_pixels) // nchunks for i in range(nchunks + 1)], dtype=np.int64
    )


@njit(cache=True, nogil=True)
def _smoe_eval_range(px, py, mu, b, pi, m, start, stop, ypred, denom):
    L = mu.shape[0]
    e = np.empty(L)
    for p in range(start, stop):
        x = px[p]
        y = py[p]
        emax = -1.0e300
        for j in range(L):
            dx = x - mu[j, 0]
            dy = y - mu[j, 1]
            u0 = b[j, 0] * dx
            u1 = b[j, 1] * dx + b[j, 2] * dy
            ej = -0.5 * (u0 * u0 + u1 * u1)
            e[j] = ej
            if ej > emax:
                emax = ej
        den = 0.0
        num = 0.0
        for j in range(L):
            kt = math.exp(e[j] - emax)
            den += pi[j] * kt
            num += m[j] * pi[j] * kt
        denom[p] = den
        if abs(den) < GATE_DENOM_GUARD:
            ypred[p] = np.nan
        else:
            ypred[p] = num / den


@njit(cache=True, nogil=True)
def _rbf_eval_range(px, py, mu, b, m, start, stop, ypred):
    L = mu.shape[0]
    for p in range(start, stop):
        x = px[p]
        y = py[p]
        acc = 0.0
        for j in range(L):
            dx = x - mu[j, 0]
            dy = y - mu[j, 1]
            u0 = b[j, 0] * dx
            u1 = b[j, 1] * dx + b[j, 2] * dy
            acc += m[j] * math.exp(-0.5 * (u0 * u0 + u1 * u1))
        ypred[p] = acc


@njit(cache=True, parallel=True)
def _smoe_eval_parallel(px, py, mu, b, pi, m, bounds, ypred, denom):
    for c in prange(bounds.shape[0] - 1):
        _smoe_eval_range(px, py, mu, b, pi, m, bounds[c], bounds[c + 1], ypred, denom)


@njit(cache=True, parallel=True)
def _rbf_eval_parallel(px, py, mu, b, m, bounds, ypred):
    for c in prange(bounds.shape[0] - 1):
        _rbf_eval_range(px, py, mu, b, m, bounds[c], bounds[c + 1], ypred)


@njit(cache=True, nogil=True)
def _smoe_grad_range(px, py, tgt, mu, b, pi, m, start, stop, d_mu, d_b, d_pi, d_m):
    """Accumulate gradients of the summed squared error over [start, stop).

    Returns (sum of squared residuals, min |denominator|, pixel index of
    that minimum). Gradients are with respect to the *sum*; the caller
    divides by the sample count.
    """
    L = mu.shape[0]
    e = np.empty(L)
    kt = np.empty(L)
    dxa = np.empty(L)
    dya = np.empty(L)
    u0a = np.empty(L)
    u1a = np.empty(L)
    sq = 0.0
    min_abs_den = 1.0e300
    min_idx = -1
    for p in range(start, stop):
        x = px[p]
        y = py[p]
        emax = -1.0e300
        for j in range(L):
            dx = x - mu[j, 0]
            dy = y - mu[j, 1]
            u0 = b[j, 0] * dx
            u1 = b[j, 1] * dx + b[j, 2] * dy
            ej = -0.5 * (u0 * u0 + u1 * u1)
            dxa[j] = dx
            dya[j] = dy
            u0a[j] = u0
            u1a[j] = u1
            e[j] = ej
            if ej > emax:
                emax = ej
        den = 0.0
        num = 0.0
        for j in range(L):
            k = math.exp(e[j] - emax)
            kt[j] = k
            den += pi[j] * k
            num += m[j] * pi[j] * k
        ad = abs(den)
        if ad < min_abs_den:
            min_abs_den = ad
            min_idx = p
        if ad < GATE_DENOM_GUARD:
            continue
        yp = num / den
        r = yp - tgt[p]
        sq += r * r
        t = 2.0 * r
        for j in range(L):
            w = pi[j] * kt[j] / den
            q = t * kt[j] * (m[j] - yp) / den
            d_m[j] += t * w
            d_pi[j] += q
            c = pi[j] * q
            d_mu[j, 0] += c * (b[j, 0] * u0a[j] + b[j, 1] * u1a[j])
            d_mu[j, 1] += c * (b[j, 2] * u1a[j])
            d_b[j, 0] -= c * u0a[j] * dxa[j]
            d_b[j, 1] -= c * u1a[j] * dxa[j]
            d_b[j, 2] -= c * u1a[j] * dya[j]
    return sq, min_abs_den, min_idx


@njit(cache=True, nogil=True)
def _rbf_grad_range(px, py, tgt, mu, b, m, start, stop, d_mu, d_b, d_m):
    L = mu.shape[0]
    kt = np.empty(L)
    dxa = np.empty(L)
    dya = np.empty(L)
    u0a = np.empty(L)
    u1a = np.empty(L)
    sq = 0.0
    for p in range(start, stop):
        x = px[p]
        y = py[p]
        yp = 0.0
        for j in range(L):
            dx = x - mu[j, 0]
            dy = y - mu[j, 1]
            u0 = b[j, 0] * dx
            u1 = b[j, 1] * dx + b[j, 2] * dy
            k = math.exp(-0.5 * (u0 * u0 + u1 * u1))
            dxa[j] = dx
            dya[j] = dy
            u0a[j] = u0
            u1a[j] = u1
            kt[j] = k
            yp += m[j] * k
        r = yp - tgt[p]
        sq += r * r
        t = 2.0 * r
        for j in range(L):
            d_m[j] += t * kt[j]
            c = t * m[j] * kt[j]
            d_mu[j, 0] += c * (b[j, 0] * u0a[j] + b[j, 1] * u1a[j])
            d_mu[j, 1] += c * (b[j, 2] * u1a[j])
            d_b[j, 0] -= c * u0a[j] * dxa[j]
            d_b[j, 1] -= c * u1a[j] * dxa[j]
            d_b[j, 2] -= c * u1a[j] * dya[j]
    return sq


@njit(cache=True, parallel=True)
def _smoe_grad_parallel(px, py, tgt, mu, b, pi, m, bounds):
    nch = bounds.shape[0] - 1
    L = mu.shape[0]
    d_mu = np.zeros((nch, L, 2))
    d_b = np.zeros((nch, L, 3))
    d_pi = np.zeros((nch, L))
    d_m = np.zeros((nch, L))
    sq = np.zeros(nch)
    mad = np.empty(nch)
    mix = np.empty(nch, dtype=np.int64)
    for c in prange(nch):
        s, a, i = _smoe_grad_range(
            px, py, tgt, mu, b, pi, m, bounds[c], bounds[c + 1],
            d_mu[c], d_b[c], d_pi[c], d_m[c],
        )
        sq[c] = s
        mad[c] = a
        mix[c] = i
    return sq, d_mu, d_b, d_pi, d_m, mad, mix


@njit(cache=True, parallel=True)
def _rbf_grad_parallel(px, py, tgt, mu, b, m, bounds):
    nch = bounds.shape[0] - 1
    L = mu.shape[0]
    d_mu = np.zeros((nch, L, 2))
    d_b = np.zeros((nch, L, 3))
    d_m = np.zeros((nch, L))
    sq = np.zeros(nch)
    for c in prange(nch):
        sq[c] = _rbf_grad_range(
            px, py, tgt, mu, b, m, bounds[c], bounds[c + 1],
            d_mu[c], d_b[c], d_m[c],
        )
    return sq, d_mu, d_b, d_m


@njit(cache=True, nogil=True)
def _adam_update(param, grad, mom, vel, lr, beta1, beta2, eps, step):
    """Bias-corrected Adam step, in place, over flat float64 views."""
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for i in range(param.shape[0]):
        g = grad[i]
        mom[i] = beta1 * mom[i] + (1.0 - beta1) * g
        vel[i] = beta2 * vel[i] + (1.0 - beta2) * g * g
        mhat = mom[i] / c1
        vhat = vel[i] / c2
        param[i] -= lr * mhat / (math.sqrt(vhat) + eps)
