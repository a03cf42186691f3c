"""Compiled inner loops for prediction, objective and SGD.

Layer tensors are laid out as (M, M, T) so that all layers of one (i, j)
entry share a cache line; the mirrored write to (j, i) then costs a single
miss. Every sum runs sequentially in ascending item order, which keeps the
results reproducible bit for bit.
"""

import math

import numpy as np
from numba import njit

LINEAR = 0
TANH = 1

REG_ALG1 = 0
REG_EQ12 = 1

OK = 0
DIVERGED = 1


@njit(cache=True, nogil=True)
def _sign(x):
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


@njit(cache=True, nogil=True)
def effective_matrix(gamma, omega, phi, out):
    m = gamma.shape[0]
    n_layers = phi.shape[0]
    for i in range(m):
        for j in range(m):
            s = 0.0
            for t in range(n_layers):
                s += phi[t] * omega[i, j, t] * gamma[i, j, t]
            out[i, j] = s
        out[i, i] = 0.0
    return out


@njit(cache=True, nogil=True)
def _select_top(pos, sv, cnt, limit):
    """Keep the ``limit`` entries of largest |s|; ties to the earlier entry.

    Survivors are compacted to the front of ``pos``/``sv`` in their
    original (ascending item) order.
    """
    keys = np.empty(cnt)
    for c in range(cnt):
        keys[c] = -abs(sv[c])
    order = np.argsort(keys, kind="mergesort")
    keep = np.sort(order[:limit])
    for c in range(limit):
        pos[c] = pos[keep[c]]
        sv[c] = sv[keep[c]]
    return limit


@njit(cache=True, nogil=True)
def predict_batch(sim, indptr, nbr_items, nbr_vals, users, items, limit, out_z, out_den):
    """Neighborhood quotient for each (user, item) pair from a dense matrix.

    ``limit`` <= 0 means the full neighborhood. Empty neighborhoods give
    z = 0 with den = 0.
    """
    maxdeg = 0
    for u in range(indptr.shape[0] - 1):
        maxdeg = max(maxdeg, indptr[u + 1] - indptr[u])
    pos = np.empty(maxdeg, np.int64)
    sv = np.empty(maxdeg)
    for n in range(users.shape[0]):
        u = users[n]
        i = items[n]
        cnt = 0
        for q in range(indptr[u], indptr[u + 1]):
            j = nbr_items[q]
            if j == i:
                continue
            pos[cnt] = q
            sv[cnt] = sim[i, j]
            cnt += 1
        if limit > 0 and cnt > limit:
            cnt = _select_top(pos, sv, cnt, limit)
        num = 0.0
        den = 0.0
        for c in range(cnt):
            num += sv[c] * nbr_vals[pos[c]]
            den += abs(sv[c])
        out_den[n] = den
        out_z[n] = num / den if den > 0.0 else 0.0


@njit(cache=True, nogil=True)
def reg_term(gamma, omega, lambdas):
    """sum_t lambda_t * 0.5 * ||Omega_t o Gamma_t||^2 over all entries."""
    m = gamma.shape[0]
    n_layers = lambdas.shape[0]
    total = 0.0
    for t in range(n_layers):
        acc = 0.0
        for i in range(m):
            for j in range(m):
                v = omega[i, j, t] * gamma[i, j, t]
                acc += v * v
        total += lambdas[t] * 0.5 * acc
    return total


@njit(cache=True, nogil=True)
def sgd_epoch(order, s_users, s_items, s_targets, indptr, nbr_items, nbr_vals,
              gamma, omega, phi, lambdas, beta, reg_mode, mu, variant, limit):
    """One pass of point-wise updates over the samples listed in ``order``.

    Returns (status, failing step, running half squared error, number of
    parameter updates, skipped samples). ``mu`` != 0 switches the
    regularizer to the Gaussian-Laplace form lambda * (g - mu * sign(g)).
    """
    n_layers = phi.shape[0]
    maxdeg = 0
    for u in range(indptr.shape[0] - 1):
        maxdeg = max(maxdeg, indptr[u + 1] - indptr[u])
    pos = np.empty(maxdeg, np.int64)
    sv = np.empty(maxdeg)
    half_sq = 0.0
    n_updates = 0
    n_skipped = 0
    for step in range(order.shape[0]):
        p = order[step]
        u = s_users[p]
        i = s_items[p]
        r = s_targets[p]
        cnt = 0
        for q in range(indptr[u], indptr[u + 1]):
            j = nbr_items[q]
            if j == i:
                continue
            s = 0.0
            for t in range(n_layers):
                s += phi[t] * omega[i, j, t] * gamma[i, j, t]
            pos[cnt] = q
            sv[cnt] = s
            cnt += 1
        if limit > 0 and cnt > limit:
            cnt = _select_top(pos, sv, cnt, limit)
        num = 0.0
        den = 0.0
        for c in range(cnt):
            num += sv[c] * nbr_vals[pos[c]]
            den += abs(sv[c])
        if den == 0.0:
            half_sq += 0.5 * r * r
            n_skipped += 1
            continue
        z = num / den
        if variant == TANH:
            pred = math.tanh(z)
            slope = 1.0 - pred * pred
        else:
            pred = z
            slope = 1.0
        e = pred - r
        half_sq += 0.5 * e * e
        den2 = den * den
        for c in range(cnt):
            q = pos[c]
            j = nbr_items[q]
            ds = (nbr_vals[q] * den - _sign(sv[c]) * num) / den2
            if variant == TANH:
                ds = ds * slope
            for t in range(n_layers):
                g = gamma[i, j, t]
                w = omega[i, j, t]
                if reg_mode == REG_ALG1:
                    reg = w * g
                else:
                    reg = w * w * g
                if mu != 0.0:
                    reg = reg - mu * _sign(g)
                new = g - beta * e * (phi[t] * w * ds) - beta * lambdas[t] * reg
                if not math.isfinite(new):
                    return DIVERGED, step, half_sq, n_updates, n_skipped
                gamma[i, j, t] = new
                gamma[j, i, t] = new
                n_updates += 1
    return OK, -1, half_sq, n_updates, n_skipped
