"""One-hidden-layer MLP classifier with hand-rolled forward/backward.

Parameters live in a single flat float64 vector so that aggregation and
personalization are plain vector arithmetic. Layout:

    [W1 (h*d, row-major), b1 (h), w2 (h), b2 (1)]

The sigmoid head is computed as 0.5*(1 + tanh(0.5*logit)), which is
branch-free and does not overflow for any finite logit. Training loss is
mean binary cross-entropy (probabilities clamped to [1e-12, 1-1e-12])
plus l2 * ||params||^2 over every parameter including biases.
"""

from dataclasses import dataclass

import numpy as np

from fedanom.backends import get_backend
from fedanom.errors import ConfigError, ContractError, TrainingDivergenceError


@dataclass(frozen=True)
class ParamLayout:
    """Shape descriptor for the flat parameter vector."""

    input_dim: int
    hidden_dim: int

    @property
    def size(self) -> int:
        return self.hidden_dim * self.input_dim + 2 * self.hidden_dim + 1


@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] != self.layout.size:
            raise ContractError(
                f"parameter vector has length {arr.shape[0] if arr.ndim == 1 else arr.shape}, "
                f"layout requires {self.layout.size}"
            )
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def w1(self) -> np.ndarray:
        d, h = self.layout.input_dim, self.layout.hidden_dim
        return self.values[: h * d].reshape(h, d)

    @property
    def b1(self) -> np.ndarray:
        d, h = self.layout.input_dim, self.layout.hidden_dim
        return self.values[h * d : h * d + h]

    @property
    def w2(self) -> np.ndarray:
        d, h = self.layout.input_dim, self.layout.hidden_dim
        return self.values[h * d + h : h * d + 2 * h]

    @property
    def b2(self) -> float:
        return float(self.values[-1])

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass(frozen=True)
class TrainConfig:
    """Local-training hyperparameters (l2 is the L2 coefficient lambda)."""

    learning_rate: float = 0.02
    local_epochs: int = 3
    batch_size: int = 32
    l2: float = 1e-4
    hidden_dim: int = 16
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0.0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.local_epochs < 1:
            raise ConfigError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.l2 >= 0.0:
            raise ConfigError(f"l2 must be >= 0, got {self.l2}")
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")


def init_params(d: int, h: int, seed: int) -> ParamVector:
    """Seeded uniform (Glorot-style) weight init; biases exactly zero."""
    if d < 1 or h < 1:
        raise ContractError(f"dimensions must be >= 1, got d={d}, h={h}")
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / (d + h))
    lim2 = np.sqrt(6.0 / (h + 1))
    w1 = rng.uniform(-lim1, lim1, size=(h, d))
    w2 = rng.uniform(-lim2, lim2, size=h)
    values = np.concatenate([w1.ravel(), np.zeros(h), w2, [0.0]])
    return ParamVector(values, ParamLayout(d, h))


def _as_batch(p: ParamVector, features, labels):
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p.layout.input_dim:
        raise ContractError(
            f"feature batch shape {x.shape} does not match input_dim "
            f"{p.layout.input_dim}"
        )
    if x.shape[0] == 0:
        raise ContractError("empty batch")
    y = np.ascontiguousarray(labels, dtype=np.float64)
    if y.shape != (x.shape[0],):
        raise ContractError(
            f"labels shape {y.shape} does not match batch size {x.shape[0]}"
        )
    return x, y


def forward(p: ParamVector, x) -> tuple[float, np.ndarray]:
    """Single-sample forward pass: (probability, hidden embedding)."""
    xv = np.ascontiguousarray(x, dtype=np.float64)
    if xv.shape != (p.layout.input_dim,):
        raise ContractError(
            f"input shape {xv.shape} does not match input_dim {p.layout.input_dim}"
        )
    probs, emb = get_backend().forward(
        p.values, p.layout.input_dim, p.layout.hidden_dim, xv.reshape(1, -1)
    )
    return float(probs[0]), emb[0]


def embed(p: ParamVector, features) -> np.ndarray:
    """Hidden-layer embeddings for a feature batch, shape (n, h)."""
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p.layout.input_dim:
        raise ContractError(
            f"feature batch shape {x.shape} does not match input_dim "
            f"{p.layout.input_dim}"
        )
    _, emb = get_backend().forward(
        p.values, p.layout.input_dim, p.layout.hidden_dim, x
    )
    return emb


def predict_proba(p: ParamVector, features) -> np.ndarray:
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p.layout.input_dim:
        raise ContractError(
            f"feature batch shape {x.shape} does not match input_dim "
            f"{p.layout.input_dim}"
        )
    probs, _ = get_backend().forward(
        p.values, p.layout.input_dim, p.layout.hidden_dim, x
    )
    return probs


def loss(p: ParamVector, features, labels, l2: float) -> float:
    x, y = _as_batch(p, features, labels)
    return get_backend().loss_value(
        p.values, p.layout.input_dim, p.layout.hidden_dim, x, y, l2
    )


def gradient(p: ParamVector, features, labels, l2: float) -> ParamVector:
    x, y = _as_batch(p, features, labels)
    g = get_backend().gradient(
        p.values, p.layout.input_dim, p.layout.hidden_dim, x, y, l2
    )
    return ParamVector(g, p.layout)


def local_train(p0: ParamVector, ds, cfg: TrainConfig) -> tuple[ParamVector, float]:
    """E epochs of seeded mini-batch gradient descent on one tenant's data.

    ``ds`` is a dataset with .features/.labels/.n attributes (dimension
    matching p0's layout); features are expected to be standardized by
    the caller. Returns (updated params, mean train loss over the final
    epoch). p0 is not mutated. Raises a training-divergence error naming
    epoch and batch if a non-finite loss appears.
    """
    if ds.n == 0:
        raise ContractError("cannot train on an empty dataset")
    if cfg.hidden_dim != p0.layout.hidden_dim:
        raise ContractError(
            f"config hidden_dim {cfg.hidden_dim} does not match layout "
            f"{p0.layout.hidden_dim}"
        )
    x, y = _as_batch(p0, ds.features, ds.labels)
    n = x.shape[0]
    rng = np.random.default_rng(cfg.seed)
    order = np.stack([rng.permutation(n) for _ in range(cfg.local_epochs)])
    order = np.ascontiguousarray(order, dtype=np.int64)
    values, final_loss, fail_epoch, fail_batch = get_backend().train_epochs(
        p0.values,
        p0.layout.input_dim,
        p0.layout.hidden_dim,
        x,
        y,
        cfg.l2,
        cfg.learning_rate,
        cfg.batch_size,
        order,
    )
    if fail_epoch >= 0:
        raise TrainingDivergenceError(
            epoch=fail_epoch, batch=fail_batch, tenant_id=getattr(ds, "tenant_id", None)
        )
    return ParamVector(values, p0.layout), float(final_loss)


def save_params(p: ParamVector, path) -> None:
    """Write a plain-text snapshot: header line `d h`, one value per line.

    Values use the shortest decimal representation that parses back to
    the identical float, so load_params(save_params(p)) is bit-exact.
    """
    lines = [f"{p.layout.input_dim} {p.layout.hidden_dim}"]
    lines.extend(repr(float(v)) for v in p.values)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path) -> ParamVector:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ConfigError(f"{path}: empty model snapshot")
    header = lines[0].split()
    if len(header) != 2:
        raise ConfigError(f"{path}: line 1: expected header 'd h'")
    try:
        d, h = int(header[0]), int(header[1])
    except ValueError:
        raise ConfigError(f"{path}: line 1: non-integer layout header") from None
    layout = ParamLayout(d, h)
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != layout.size:
        raise ConfigError(
            f"{path}: expected {layout.size} values for layout d={d} h={h}, "
            f"found {len(body)}"
        )
    try:
        values = np.array([float(ln) for ln in body])
    except ValueError:
        raise ConfigError(f"{path}: non-numeric parameter value") from None
    return ParamVector(values, layout)
