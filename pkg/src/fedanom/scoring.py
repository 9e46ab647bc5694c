"""Sliding-window Mahalanobis scoring and threshold policies.

Each tenant owns one WindowedStats: a fixed-capacity ring buffer of
recent normal vectors with running sums s1 = sum(v) and s2 = sum(v v^T),
from which the window mean and population covariance are recovered in
O(m^2) per update. Scores solve (x-mu)^T Sigma~^{-1} (x-mu) through a
symmetric positive-definite factorization of the shrunk covariance

    Sigma~ = Sigma + epsilon * (trace(Sigma)/m) * I

with an absolute diagonal floor eps_abs when the trace is not positive.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc

from fedanom.backends import get_backend
from fedanom.errors import ConfigError, ContractError, InsufficientWindowError

DEFAULT_WINDOW = 256
DEFAULT_EPSILON = 1e-3
DEFAULT_EPS_ABS = 1e-9

THRESHOLD_KINDS = ("chi_squared_quantile", "f1_optimal")


@dataclass(frozen=True)
class ThresholdPolicy:
    kind: str
    level: float = 0.99

    def __post_init__(self):
        if self.kind not in THRESHOLD_KINDS:
            raise ConfigError(
                f"threshold kind must be one of {THRESHOLD_KINDS}, got "
                f"{self.kind!r}"
            )
        if self.kind == "chi_squared_quantile" and not 0.0 < self.level < 1.0:
            raise ConfigError(f"level must be in (0, 1), got {self.level}")


class WindowedStats:
    """Ring-buffer window with incrementally maintained mean/covariance."""

    def __init__(self, dim, capacity=DEFAULT_WINDOW, epsilon=DEFAULT_EPSILON,
                 eps_abs=DEFAULT_EPS_ABS):
        if dim < 1:
            raise ConfigError(f"dim must be >= 1, got {dim}")
        if capacity < 2:
            raise ConfigError(f"window capacity must be >= 2, got {capacity}")
        if epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {epsilon}")
        if eps_abs <= 0:
            raise ConfigError(f"eps_abs must be > 0, got {eps_abs}")
        self.dim = int(dim)
        self.capacity = int(capacity)
        self.epsilon = float(epsilon)
        self.eps_abs = float(eps_abs)
        self._buf = np.zeros((self.capacity, self.dim))
        self._s1 = np.zeros(self.dim)
        self._s2 = np.zeros((self.dim, self.dim))
        self._head = 0
        self._count = 0

    @property
    def count(self) -> int:
        return self._count

    @property
    def mu(self) -> np.ndarray:
        if self._count == 0:
            raise InsufficientWindowError("window is empty")
        return self._s1 / self._count

    @property
    def sigma(self) -> np.ndarray:
        if self._count == 0:
            raise InsufficientWindowError("window is empty")
        mu = self._s1 / self._count
        return self._s2 / self._count - np.outer(mu, mu)

    def window_vectors(self) -> np.ndarray:
        """Current window contents in insertion order (oldest first)."""
        if self._count < self.capacity:
            return self._buf[: self._count].copy()
        return np.concatenate(
            [self._buf[self._head :], self._buf[: self._head]]
        )

    def _check_vector(self, v):
        arr = np.ascontiguousarray(v, dtype=np.float64)
        if arr.shape != (self.dim,):
            raise ContractError(
                f"vector shape {arr.shape} does not match window dim {self.dim}"
            )
        if not np.isfinite(arr).all():
            raise ContractError("window update requires finite values")
        return arr

    def _check_matrix(self, vs):
        arr = np.ascontiguousarray(vs, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != self.dim:
            raise ContractError(
                f"matrix shape {arr.shape} does not match window dim {self.dim}"
            )
        if not np.isfinite(arr).all():
            raise ContractError("window update requires finite values")
        return arr

    def update(self, v) -> None:
        """Absorb one vector, evicting the oldest at capacity."""
        arr = self._check_vector(v)
        self._head, self._count = get_backend().window_push(
            self._buf, self._s1, self._s2, self._head, self._count, arr
        )

    def feed(self, vs) -> None:
        arr = self._check_matrix(vs)
        self._head, self._count = get_backend().window_feed(
            self._buf, self._s1, self._s2, self._head, self._count, arr
        )

    def _require_scoreable(self):
        if self._count < 2:
            raise InsufficientWindowError(
                f"scoring needs a window of at least 2 vectors, have "
                f"{self._count}"
            )

    def mahalanobis(self, x) -> float:
        """Shrunk-covariance Mahalanobis score of x against the window."""
        arr = self._check_vector(x)
        self._require_scoreable()
        return float(
            get_backend().mahal_score(
                self._s1, self._s2, self._count, self.epsilon, self.eps_abs, arr
            )
        )

    def score_batch(self, xs) -> np.ndarray:
        """Scores of many vectors against the frozen current window."""
        arr = self._check_matrix(xs)
        self._require_scoreable()
        return np.asarray(
            get_backend().mahal_batch(
                self._s1, self._s2, self._count, self.epsilon, self.eps_abs, arr
            )
        )

    def classify(self, x, tau: float) -> int:
        """1 iff the score strictly exceeds tau."""
        return int(self.mahalanobis(x) > tau)

    def score_stream(self, vs, tau: float):
        """Score a stream; vectors decided normal are absorbed as they pass.

        Returns (scores, decisions) arrays. Anomaly-decided vectors never
        enter the window, so a burst of anomalies cannot drag mu toward
        itself.
        """
        arr = self._check_matrix(vs)
        self._require_scoreable()
        scores, decisions, self._head, self._count = get_backend().score_stream(
            self._buf, self._s1, self._s2, self._head, self._count, arr,
            float(tau), self.epsilon, self.eps_abs,
        )
        return scores, decisions


def chi_squared_quantile(dof: int, level: float) -> float:
    """Chi-squared quantile by bisection on the regularized lower
    incomplete gamma function, to absolute tolerance 1e-9."""
    if dof < 1:
        raise ConfigError(f"degrees of freedom must be >= 1, got {dof}")
    if not 0.0 < level < 1.0:
        raise ConfigError(f"level must be in (0, 1), got {level}")
    a = 0.5 * dof
    hi = float(max(dof, 1))
    while gammainc(a, 0.5 * hi) < level:
        hi *= 2.0
    lo = 0.0
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        if gammainc(a, 0.5 * mid) < level:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def f1_optimal_threshold(scores, labels) -> float:
    """Midpoint between consecutive sorted scores that maximizes F1.

    Ties prefer the larger threshold. Decisions use strict inequality
    (score > tau), consistent with classify.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or s.shape != y.shape:
        raise ConfigError("scores and labels must be equal-length vectors")
    if s.shape[0] < 2:
        raise ConfigError("f1_optimal needs at least two scored records")
    if not np.any(y == 1):
        raise ConfigError("f1_optimal needs at least one positive label")
    ss = np.sort(s)
    candidates = np.unique(0.5 * (ss[:-1] + ss[1:]))
    pos = y == 1
    pred = s[None, :] > candidates[:, None]
    tp = (pred & pos).sum(axis=1)
    fp = (pred & ~pos).sum(axis=1)
    fn = ((~pred) & pos).sum(axis=1)
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)
    best = 0
    for i in range(1, candidates.shape[0]):
        if f1[i] >= f1[best]:
            best = i
    return float(candidates[best])


def threshold(policy: ThresholdPolicy, scores_with_labels=None, m=None) -> float:
    """Resolve a threshold policy to a numeric tau."""
    if policy.kind == "chi_squared_quantile":
        if m is None:
            raise ConfigError("chi_squared_quantile policy needs the score dimension m")
        return chi_squared_quantile(int(m), policy.level)
    if scores_with_labels is None or len(scores_with_labels) == 0:
        raise ConfigError("f1_optimal policy needs a labeled score list")
    pairs = list(scores_with_labels)
    return f1_optimal_threshold(
        [p[0] for p in pairs], [int(p[1]) for p in pairs]
    )


SCORE_HEADER = ["timestamp", "tenant_id", "score", "threshold", "decision", "label"]


def write_scores(rows, path) -> None:
    """Dump per-record scoring rows as CSV for audit and plotting."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCORE_HEADER)
        for ts, tenant, score, tau, decision, label in rows:
            writer.writerow(
                [int(ts), int(tenant), repr(float(score)), repr(float(tau)),
                 int(decision), int(label)]
            )
