"""Federated orchestration: sampling, FedAvg aggregation, personalization.

federated_average uses error-free transformations (two-product / two-sum
with a residual-corrected division) so the weighted mean is correctly
rounded to the last bit. Consequences relied on elsewhere: aggregating
identical vectors returns exactly that vector (the learning_rate=0
fixed point), a single update passes through bit-exactly, and the result
is independent of participant completion order because the reduction
always consumes updates in ascending tenant-id order.
"""

from dataclasses import dataclass, replace

import numpy as np

from fedanom import model
from fedanom.errors import ConfigError, ContractError
from fedanom.model import ParamVector, TrainConfig
from fedanom.seeding import derive_seed


@dataclass
class TenantClient:
    """One tenant's private data partition and model state."""

    tenant_id: int
    train_data: object
    eval_data: object
    local_params: ParamVector
    personalized_params: ParamVector
    alpha: float
    scorer: object = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.local_params.layout != self.personalized_params.layout:
            raise ContractError("client parameter layouts must match")


@dataclass(frozen=True)
class FederationConfig:
    rounds: int = 50
    participation_rate: float = 1.0
    alpha: float = 0.25
    train: TrainConfig = TrainConfig()
    seed: int = 0
    fixed_participants: bool = False

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if not 0.0 < self.participation_rate <= 1.0:
            raise ConfigError(
                f"participation_rate must be in (0, 1], got "
                f"{self.participation_rate}"
            )
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class RoundReport:
    round_index: int
    participant_ids: tuple
    mean_train_loss: float
    mean_val_loss: float
    global_params_norm: float

    def __post_init__(self):
        ids = self.participant_ids
        if any(ids[i] >= ids[i + 1] for i in range(len(ids) - 1)):
            raise ContractError("participant_ids must be strictly increasing")


def sample_participants(K: int, rate: float, round_index: int, seed: int):
    """max(1, round(rate*K)) distinct ids from {0..K-1}, sorted ascending.

    The shuffle is keyed on (seed, round_index), so one seed yields an
    independent participant set per round yet the same set on replay.
    """
    if K < 1:
        raise ContractError(f"K must be >= 1, got {K}")
    if not 0.0 < rate <= 1.0:
        raise ContractError(f"rate must be in (0, 1], got {rate}")
    count = max(1, int(round(rate * K)))
    rng = np.random.default_rng(derive_seed(seed, "participants", round_index))
    ids = np.sort(rng.permutation(K)[:count])
    return [int(i) for i in ids]


_SPLITTER = 134217729.0  # 2**27 + 1, Veltkamp splitting constant


def _two_sum(a, b):
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return s, err


def _two_prod(a, b):
    p = a * b
    ah = _SPLITTER * a
    ah = ah - (ah - a)
    al = a - ah
    bh = _SPLITTER * b
    bh = bh - (bh - b)
    bl = b - bh
    err = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, err


def federated_average(updates) -> ParamVector:
    """Sample-count-weighted mean of parameter vectors (the FedAvg step).

    ``updates`` is a list of (n_i, ParamVector) in ascending tenant-id
    order. Each product n_i * w_i is split into an exact (value, error)
    pair, the pairs are accumulated into a compensated double-double sum,
    and the division by n applies one Newton-style residual correction,
    so the returned coordinates equal the true weighted mean correctly
    rounded.
    """
    updates = list(updates)
    if not updates:
        raise ContractError("federated_average needs at least one update")
    layout = updates[0][1].layout
    n_total = 0
    for n_i, p in updates:
        if int(n_i) < 1:
            raise ContractError(f"sample counts must be >= 1, got {n_i}")
        if p.layout != layout:
            raise ContractError(
                f"parameter layout mismatch: {p.layout} vs {layout}"
            )
        n_total += int(n_i)
    hi = np.zeros(layout.size)
    lo = np.zeros(layout.size)
    for n_i, p in updates:
        prod, perr = _two_prod(float(int(n_i)), p.values)
        hi, err = _two_sum(hi, prod)
        lo = lo + (err + perr)
    nd = float(n_total)
    q1 = hi / nd
    back, backerr = _two_prod(q1, nd)
    residual = ((hi - back) - backerr) + lo
    return ParamVector(q1 + residual / nd, layout)


def personalize(global_w: ParamVector, local_w: ParamVector,
                alpha: float) -> ParamVector:
    """Blend w + alpha*(w_i - w), computed as (1-alpha)*w + alpha*w_i.

    The convex form makes both endpoints exact: alpha=0 returns the
    global values bitwise, alpha=1 the local values.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must be in [0, 1], got {alpha}")
    if global_w.layout != local_w.layout:
        raise ContractError("personalize requires matching layouts")
    values = (1.0 - alpha) * global_w.values + alpha * local_w.values
    return ParamVector(values, global_w.layout)


def _sorted_clients(clients):
    if not clients:
        raise ContractError("client list must be non-empty")
    ordered = sorted(clients, key=lambda c: c.tenant_id)
    ids = [c.tenant_id for c in ordered]
    if len(set(ids)) != len(ids):
        raise ContractError("tenant ids must be unique")
    return ordered


def run_round(clients, global_w: ParamVector, cfg: FederationConfig,
              round_index: int):
    """One federated round; mutates client local/personalized params.

    Participants warm-start local training from the received global
    model; aggregation sees only (n_i, params) pairs; every client then
    re-personalizes against the new global (non-participants keep their
    stale local params so alpha stays meaningful for them).
    """
    ordered = _sorted_clients(clients)
    for c in ordered:
        if c.local_params.layout != global_w.layout:
            raise ContractError("client/global parameter layouts must match")
    sampling_round = 0 if cfg.fixed_participants else round_index
    positions = sample_participants(
        len(ordered), cfg.participation_rate, sampling_round,
        derive_seed(cfg.seed, "sampling"),
    )
    participants = [ordered[i] for i in positions]
    tcfg = replace(cfg.train, seed=derive_seed(cfg.seed, "local_train", round_index))

    updates = []
    train_losses = []
    for c in participants:
        new_local, final_loss = model.local_train(global_w, c.train_data, tcfg)
        c.local_params = new_local
        updates.append((c.train_data.n, new_local))
        train_losses.append(final_loss)

    new_global = federated_average(updates)

    for c in ordered:
        c.personalized_params = personalize(new_global, c.local_params, c.alpha)

    val_losses = [
        model.loss(c.personalized_params, c.eval_data.features,
                   c.eval_data.labels, 0.0)
        for c in ordered
    ]
    report = RoundReport(
        round_index=round_index,
        participant_ids=tuple(c.tenant_id for c in participants),
        mean_train_loss=sum(train_losses) / len(train_losses),
        mean_val_loss=sum(val_losses) / len(val_losses),
        global_params_norm=new_global.norm(),
    )
    return new_global, report


def run_training(clients, cfg: FederationConfig):
    """T rounds of federate-train-aggregate-personalize from fresh params."""
    ordered = _sorted_clients(clients)
    d = ordered[0].train_data.feature_dim
    global_w = model.init_params(
        d, cfg.train.hidden_dim, derive_seed(cfg.seed, "init")
    )
    for c in ordered:
        c.local_params = global_w
        c.personalized_params = global_w
    history = []
    for round_index in range(cfg.rounds):
        global_w, report = run_round(clients, global_w, cfg, round_index)
        history.append(report)
    return global_w, history


HISTORY_HEADER = ["round", "participants", "mean_train_loss",
                  "mean_val_loss", "global_norm"]


def write_history(history, path) -> None:
    """Round history CSV; participant ids are semicolon-separated."""
    lines = [",".join(HISTORY_HEADER)]
    for rep in history:
        lines.append(
            ",".join(
                [
                    str(rep.round_index),
                    ";".join(str(i) for i in rep.participant_ids),
                    repr(float(rep.mean_train_loss)),
                    repr(float(rep.mean_val_loss)),
                    repr(float(rep.global_params_norm)),
                ]
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
