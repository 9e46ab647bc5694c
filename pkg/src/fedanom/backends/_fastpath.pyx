# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels mirroring fedanom.backends.pure.

Same function names, argument conventions, and update expressions as the
pure module; the build uses -ffp-contract=off so elementwise arithmetic
(window sums, parameter updates, regularizer terms) stays bitwise
aligned with the numpy expressions. Reductions (dots, traces) may differ
from numpy in final ulps.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport isfinite, log, log1p, sqrt, tanh

from fedanom.errors import DegenerateCovarianceError

cnp.import_array()

NAME = "cython"

PROB_CLAMP = 1e-12

cdef double _CLAMP = 1e-12


cdef double _loss_grad(const double[::1] values, int d, int h,
                       const double[:, ::1] x, const double[::1] y, double lam,
                       double[::1] grad, double[::1] z, double[::1] a) nogil:
    """Fills grad with the analytic gradient; returns the batch loss."""
    cdef int n = x.shape[0]
    cdef int nb1 = h * d
    cdef int nw2 = h * d + h
    cdef int nb2 = h * d + 2 * h
    cdef int i, j, k
    cdef double s, logit, prob, pc, yj, g, ge
    cdef double nd = <double> n
    cdef double bce = 0.0
    cdef double reg = 0.0

    for k in range(nb2 + 1):
        grad[k] = 0.0

    for j in range(n):
        logit = values[nb2]
        for i in range(h):
            s = values[nb1 + i]
            for k in range(d):
                s = s + values[i * d + k] * x[j, k]
            z[i] = s
            if s > 0.0:
                a[i] = s
                logit = logit + values[nw2 + i] * s
            else:
                a[i] = 0.0
        prob = 0.5 * (1.0 + tanh(0.5 * logit))

        yj = y[j]
        pc = prob
        if pc < _CLAMP:
            pc = _CLAMP
        elif pc > 1.0 - _CLAMP:
            pc = 1.0 - _CLAMP
        bce = bce - (yj * log(pc) + (1.0 - yj) * log1p(-pc))

        g = (prob - yj) / nd
        grad[nb2] = grad[nb2] + g
        for i in range(h):
            grad[nw2 + i] = grad[nw2 + i] + g * a[i]
            if z[i] > 0.0:
                ge = g * values[nw2 + i]
                grad[nb1 + i] = grad[nb1 + i] + ge
                for k in range(d):
                    grad[i * d + k] = grad[i * d + k] + ge * x[j, k]

    for k in range(nb2 + 1):
        reg = reg + values[k] * values[k]
        grad[k] = grad[k] + 2.0 * lam * values[k]

    return bce / nd + lam * reg


def forward(values, int d, int h, x):
    """Forward pass over a batch: returns (probs (n,), embeddings (n,h))."""
    cdef const double[::1] v = values
    cdef const double[:, ::1] xv = x
    cdef int n = xv.shape[0]
    probs_arr = np.empty(n)
    emb_arr = np.empty((n, h))
    cdef double[::1] probs = probs_arr
    cdef double[:, ::1] emb = emb_arr
    cdef int nb1 = h * d
    cdef int nw2 = h * d + h
    cdef int nb2 = h * d + 2 * h
    cdef int i, j, k
    cdef double s, logit
    with nogil:
        for j in range(n):
            logit = v[nb2]
            for i in range(h):
                s = v[nb1 + i]
                for k in range(d):
                    s = s + v[i * d + k] * xv[j, k]
                if s > 0.0:
                    emb[j, i] = s
                    logit = logit + v[nw2 + i] * s
                else:
                    emb[j, i] = 0.0
            probs[j] = 0.5 * (1.0 + tanh(0.5 * logit))
    return probs_arr, emb_arr


def loss_value(values, int d, int h, x, y, double lam):
    grad = np.empty(values.shape[0])
    z = np.empty(h)
    a = np.empty(h)
    return _loss_grad(values, d, h, x, y, lam, grad, z, a)


def gradient(values, int d, int h, x, y, double lam):
    grad = np.empty(values.shape[0])
    z = np.empty(h)
    a = np.empty(h)
    _loss_grad(values, d, h, x, y, lam, grad, z, a)
    return grad


def train_epochs(values, int d, int h, x, y, double lam, double lr,
                 int batch_size, order):
    """Mini-batch gradient descent over pre-drawn epoch permutations.

    Same contract as the pure version: returns (params, final_epoch_loss,
    fail_epoch, fail_batch) with fail_epoch -1 on success.
    """
    p_arr = values.copy()
    cdef double[::1] p = p_arr
    cdef const double[:, ::1] xv = x
    cdef const double[::1] yv = y
    cdef const cnp.int64_t[:, ::1] ov = order
    cdef int n = xv.shape[0]
    cdef int epochs = ov.shape[0]
    cdef int size = p_arr.shape[0]

    xb_arr = np.empty((min(batch_size, n), d))
    yb_arr = np.empty(min(batch_size, n))
    grad_arr = np.empty(size)
    cdef double[:, ::1] xb = xb_arr
    cdef double[::1] yb = yb_arr
    cdef double[::1] grad = grad_arr
    z = np.empty(h)
    a = np.empty(h)
    cdef double[::1] zv = z
    cdef double[::1] av = a

    cdef int e, b, start, bs, j, k, idx
    cdef double loss, total
    cdef double final = 0.0
    with nogil:
        for e in range(epochs):
            total = 0.0
            b = 0
            start = 0
            while start < n:
                bs = batch_size if start + batch_size <= n else n - start
                for j in range(bs):
                    idx = <int> ov[e, start + j]
                    for k in range(d):
                        xb[j, k] = xv[idx, k]
                    yb[j] = yv[idx]
                loss = _loss_grad(p, d, h, xb[:bs], yb[:bs], lam,
                                  grad, zv, av)
                if not isfinite(loss):
                    with gil:
                        return p_arr, float("nan"), e, b
                for k in range(size):
                    p[k] = p[k] - lr * grad[k]
                total = total + loss * bs
                start = start + batch_size
                b = b + 1
            final = total / n
    return p_arr, final, -1, -1


def window_push(buf, s1, s2, head, count, v):
    """Ring-buffer append with running-sum maintenance (mutates in place)."""
    cdef double[:, ::1] bufv = buf
    cdef double[::1] s1v = s1
    cdef double[:, ::1] s2v = s2
    cdef const double[::1] vv = v
    cdef int cap = bufv.shape[0]
    cdef int m = bufv.shape[1]
    cdef int hd = head
    cdef int cnt = count
    cdef int j, k
    if cnt == cap:
        for j in range(m):
            s1v[j] = s1v[j] - bufv[hd, j]
        for j in range(m):
            for k in range(m):
                s2v[j, k] = s2v[j, k] - bufv[hd, j] * bufv[hd, k]
    else:
        cnt = cnt + 1
    for j in range(m):
        bufv[hd, j] = vv[j]
        s1v[j] = s1v[j] + vv[j]
    for j in range(m):
        for k in range(m):
            s2v[j, k] = s2v[j, k] + vv[j] * vv[k]
    hd = (hd + 1) % cap
    return hd, cnt


def window_feed(buf, s1, s2, head, count, vs):
    cdef int i
    for i in range(vs.shape[0]):
        head, count = window_push(buf, s1, s2, head, count, vs[i])
    return head, count


cdef void _fill_shrunk(const double[::1] s1, const double[:, ::1] s2, double cnt,
                       double epsilon, double eps_abs,
                       double[::1] mu, double[:, ::1] sig) nogil:
    cdef int m = s1.shape[0]
    cdef int j, k
    cdef double tr = 0.0
    cdef double lam
    for j in range(m):
        mu[j] = s1[j] / cnt
    for j in range(m):
        for k in range(m):
            sig[j, k] = s2[j, k] / cnt - mu[j] * mu[k]
    for j in range(m):
        tr = tr + sig[j, j]
    lam = epsilon * tr / m if tr > 0.0 else eps_abs
    for j in range(m):
        sig[j, j] = sig[j, j] + lam


cdef int _cholesky(double[:, ::1] a, int m) nogil:
    """In-place lower-triangular factorization; -1 if not positive definite."""
    cdef int i, j, k
    cdef double s
    for j in range(m):
        s = a[j, j]
        for k in range(j):
            s = s - a[j, k] * a[j, k]
        if not (s > 0.0):
            return -1
        a[j, j] = sqrt(s)
        for i in range(j + 1, m):
            s = a[i, j]
            for k in range(j):
                s = s - a[i, k] * a[j, k]
            a[i, j] = s / a[j, j]
    return 0


cdef double _solve_quadform(const double[:, ::1] chol, const double[::1] delta,
                            double[::1] work, int m) nogil:
    """delta' (L L')^{-1} delta via forward/back substitution."""
    cdef int i, k
    cdef double s
    for i in range(m):
        s = delta[i]
        for k in range(i):
            s = s - chol[i, k] * work[k]
        work[i] = s / chol[i, i]
    for i in range(m - 1, -1, -1):
        s = work[i]
        for k in range(i + 1, m):
            s = s - chol[k, i] * work[k]
        work[i] = s / chol[i, i]
    s = 0.0
    for i in range(m):
        s = s + delta[i] * work[i]
    return s if s > 0.0 else 0.0


def mahal_score(s1, s2, count, double epsilon, double eps_abs, x):
    cdef const double[::1] s1v = s1
    cdef const double[:, ::1] s2v = s2
    cdef const double[::1] xv = x
    cdef int m = s1v.shape[0]
    mu = np.empty(m)
    sig = np.empty((m, m))
    delta = np.empty(m)
    work = np.empty(m)
    cdef double[::1] muv = mu
    cdef double[:, ::1] sigv = sig
    cdef double[::1] dv = delta
    cdef double[::1] wv = work
    cdef int j
    _fill_shrunk(s1v, s2v, <double> count, epsilon, eps_abs, muv, sigv)
    if _cholesky(sigv, m) != 0:
        raise DegenerateCovarianceError(
            "covariance not positive definite after shrinkage"
        )
    for j in range(m):
        dv[j] = xv[j] - muv[j]
    return _solve_quadform(sigv, dv, wv, m)


def mahal_batch(s1, s2, count, double epsilon, double eps_abs, xs):
    """Scores of many vectors against one frozen window state."""
    cdef const double[::1] s1v = s1
    cdef const double[:, ::1] s2v = s2
    cdef const double[:, ::1] xsv = xs
    cdef int m = s1v.shape[0]
    cdef int n = xsv.shape[0]
    out = np.empty(n)
    mu = np.empty(m)
    sig = np.empty((m, m))
    delta = np.empty(m)
    work = np.empty(m)
    cdef double[::1] outv = out
    cdef double[::1] muv = mu
    cdef double[:, ::1] sigv = sig
    cdef double[::1] dv = delta
    cdef double[::1] wv = work
    cdef int i, j
    _fill_shrunk(s1v, s2v, <double> count, epsilon, eps_abs, muv, sigv)
    if _cholesky(sigv, m) != 0:
        raise DegenerateCovarianceError(
            "covariance not positive definite after shrinkage"
        )
    with nogil:
        for i in range(n):
            for j in range(m):
                dv[j] = xsv[i, j] - muv[j]
            outv[i] = _solve_quadform(sigv, dv, wv, m)
    return out


def score_stream(buf, s1, s2, head, count, vs, double tau,
                 double epsilon, double eps_abs):
    """Sequential score-then-maybe-absorb loop over a vector stream.

    Vectors decided normal (score <= tau) are pushed into the window
    before the next vector is scored, matching the pure version.
    """
    cdef double[:, ::1] bufv = buf
    cdef double[::1] s1v = s1
    cdef double[:, ::1] s2v = s2
    cdef const double[:, ::1] vsv = vs
    cdef int cap = bufv.shape[0]
    cdef int m = bufv.shape[1]
    cdef int n = vsv.shape[0]
    cdef int hd = head
    cdef int cnt = count
    scores = np.empty(n)
    decisions = np.empty(n, dtype=np.int64)
    mu = np.empty(m)
    sig = np.empty((m, m))
    delta = np.empty(m)
    work = np.empty(m)
    cdef double[::1] scv = scores
    cdef cnp.int64_t[::1] dec = decisions
    cdef double[::1] muv = mu
    cdef double[:, ::1] sigv = sig
    cdef double[::1] dv = delta
    cdef double[::1] wv = work
    cdef int i, j, k, stale, bad
    cdef double s
    stale = 1
    bad = 0
    with nogil:
        for i in range(n):
            if stale:
                _fill_shrunk(s1v, s2v, <double> cnt, epsilon, eps_abs,
                             muv, sigv)
                if _cholesky(sigv, m) != 0:
                    bad = 1
                    break
                stale = 0
            for j in range(m):
                dv[j] = vsv[i, j] - muv[j]
            s = _solve_quadform(sigv, dv, wv, m)
            scv[i] = s
            if s > tau:
                dec[i] = 1
            else:
                dec[i] = 0
                if cnt == cap:
                    for j in range(m):
                        s1v[j] = s1v[j] - bufv[hd, j]
                    for j in range(m):
                        for k in range(m):
                            s2v[j, k] = s2v[j, k] - bufv[hd, j] * bufv[hd, k]
                else:
                    cnt = cnt + 1
                for j in range(m):
                    bufv[hd, j] = vsv[i, j]
                    s1v[j] = s1v[j] + vsv[i, j]
                for j in range(m):
                    for k in range(m):
                        s2v[j, k] = s2v[j, k] + vsv[i, j] * vsv[i, k]
                hd = (hd + 1) % cap
                stale = 1
    if bad:
        raise DegenerateCovarianceError(
            "covariance not positive definite after shrinkage"
        )
    return scores, decisions, hd, cnt
