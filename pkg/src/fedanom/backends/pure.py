"""Pure numpy implementations of the hot kernels.

This module is the reference backend: the compiled extension in
``_fastpath.pyx`` mirrors these functions exactly (same formulas, same
update expressions) and is preferred at import time when available.

Conventions shared by both backends:

* model parameters travel as one flat float64 vector with layout
  ``[W1 (h*d), b1 (h), w2 (h), b2 (1)]``;
* window statistics are kept as running sums ``s1 = sum(v)`` and
  ``s2 = sum(v v^T)`` over a ring buffer, updated with bitwise-identical
  elementwise expressions in both backends;
* kernels assume validated inputs (dimension checks live in the public
  modules).
"""

import math

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from fedanom.errors import DegenerateCovarianceError

NAME = "pure"

PROB_CLAMP = 1e-12


def _unpack(values, d, h):
    w1 = values[: h * d].reshape(h, d)
    b1 = values[h * d : h * d + h]
    w2 = values[h * d + h : h * d + 2 * h]
    b2 = values[h * d + 2 * h]
    return w1, b1, w2, b2


def forward(values, d, h, x):
    """Forward pass over a batch: returns (probs (n,), embeddings (n,h))."""
    w1, b1, w2, b2 = _unpack(values, d, h)
    z = x @ w1.T + b1
    emb = np.maximum(z, 0.0)
    logits = emb @ w2 + b2
    probs = 0.5 * (1.0 + np.tanh(0.5 * logits))
    return probs, emb


def _loss_and_gradient(values, d, h, x, y, lam):
    """Mean clamped BCE + lam*||values||^2 and its analytic gradient.

    Single code path shared by loss_value/gradient/train_epochs so the
    per-batch quantities used inside training are bitwise those of the
    public operations.
    """
    n = x.shape[0]
    w1, b1, w2, b2 = _unpack(values, d, h)
    z = x @ w1.T + b1
    emb = np.maximum(z, 0.0)
    logits = emb @ w2 + b2
    probs = 0.5 * (1.0 + np.tanh(0.5 * logits))

    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    bce = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    loss = float(bce.sum() / n) + lam * float(values @ values)

    g_logit = (probs - y) / n
    grad_w2 = emb.T @ g_logit
    grad_b2 = g_logit.sum()
    g_emb = np.outer(g_logit, w2)
    g_z = np.where(z > 0.0, g_emb, 0.0)
    grad_w1 = g_z.T @ x
    grad_b1 = g_z.sum(axis=0)

    grad = np.concatenate([grad_w1.ravel(), grad_b1, grad_w2, [grad_b2]])
    grad = grad + 2.0 * lam * values
    return loss, grad


def loss_value(values, d, h, x, y, lam):
    loss, _ = _loss_and_gradient(values, d, h, x, y, lam)
    return loss


def gradient(values, d, h, x, y, lam):
    _, grad = _loss_and_gradient(values, d, h, x, y, lam)
    return grad


def train_epochs(values, d, h, x, y, lam, lr, batch_size, order):
    """Mini-batch gradient descent over pre-drawn epoch permutations.

    ``order`` is an (epochs, n) int64 array of per-epoch sample
    permutations (drawn by the caller so both backends consume identical
    batch schedules). Returns (params, final_epoch_loss, fail_epoch,
    fail_batch); fail_epoch is -1 on success, otherwise the epoch/batch
    where a non-finite loss appeared.
    """
    p = values.copy()
    n = x.shape[0]
    final = 0.0
    for e in range(order.shape[0]):
        total = 0.0
        for b, start in enumerate(range(0, n, batch_size)):
            idx = order[e, start : start + batch_size]
            loss, grad = _loss_and_gradient(p, d, h, x[idx], y[idx], lam)
            if not math.isfinite(loss):
                return p, float("nan"), e, b
            p = p - lr * grad
            total += loss * idx.shape[0]
        final = total / n
    return p, final, -1, -1


def window_push(buf, s1, s2, head, count, v):
    """Append one vector to the ring buffer, evicting the oldest at capacity.

    Mutates buf/s1/s2 in place; returns the new (head, count).
    """
    cap = buf.shape[0]
    if count == cap:
        old = buf[head]
        s1 -= old
        s2 -= np.outer(old, old)
    else:
        count += 1
    buf[head] = v
    s1 += v
    s2 += np.outer(v, v)
    head = (head + 1) % cap
    return head, count


def window_feed(buf, s1, s2, head, count, vs):
    for i in range(vs.shape[0]):
        head, count = window_push(buf, s1, s2, head, count, vs[i])
    return head, count


def _shrunk(s1, s2, count, epsilon, eps_abs):
    """Window mean and shrunk covariance sigma + lam*I from the running sums."""
    m = s1.shape[0]
    mu = s1 / count
    sigma = s2 / count - np.outer(mu, mu)
    tr = float(np.trace(sigma))
    lam = epsilon * tr / m if tr > 0.0 else eps_abs
    sig = sigma + lam * np.eye(m)
    return mu, sig


def _factor(sig):
    try:
        return cho_factor(sig, lower=True, check_finite=False)
    except LinAlgError:
        raise DegenerateCovarianceError(
            "covariance not positive definite after shrinkage"
        ) from None


def mahal_score(s1, s2, count, epsilon, eps_abs, x):
    mu, sig = _shrunk(s1, s2, count, epsilon, eps_abs)
    fac = _factor(sig)
    delta = x - mu
    z = cho_solve(fac, delta, check_finite=False)
    return max(float(delta @ z), 0.0)


def mahal_batch(s1, s2, count, epsilon, eps_abs, xs):
    """Scores of many vectors against one frozen window state."""
    mu, sig = _shrunk(s1, s2, count, epsilon, eps_abs)
    fac = _factor(sig)
    deltas = xs - mu
    z = cho_solve(fac, deltas.T, check_finite=False)
    return np.maximum(np.einsum("ij,ji->i", deltas, z), 0.0)


def score_stream(buf, s1, s2, head, count, vs, tau, epsilon, eps_abs):
    """Sequential score-then-maybe-absorb loop over a vector stream.

    Each vector is scored against the current window; vectors decided
    normal (score <= tau) are pushed into the window before the next one
    is scored. Returns (scores, decisions, head, count).
    """
    n = vs.shape[0]
    scores = np.empty(n)
    decisions = np.empty(n, dtype=np.int64)
    mu = fac = None
    for i in range(n):
        if fac is None:
            mu, sig = _shrunk(s1, s2, count, epsilon, eps_abs)
            fac = _factor(sig)
        delta = vs[i] - mu
        z = cho_solve(fac, delta, check_finite=False)
        s = max(float(delta @ z), 0.0)
        scores[i] = s
        if s > tau:
            decisions[i] = 1
        else:
            decisions[i] = 0
            head, count = window_push(buf, s1, s2, head, count, vs[i])
            fac = None
    return scores, decisions, head, count
