"""Detection metrics, sweep drivers, and report emission.

A single experiment run is: generate tenant partitions, split each
chronologically, optionally corrupt the training halves, standardize per
tenant by train-split statistics, run federated training, then score
each tenant's held-out eval stream with its own sliding-window scorer
and pool the confusion counts. Sweeps repeat runs over a grid and a seed
list and aggregate per-value mean/std.
"""

import os
import shutil
import tempfile
from dataclasses import dataclass, replace

import numpy as np

from fedanom import model, scoring, telemetry
from fedanom.errors import ConfigError, ContractError
from fedanom.federation import TenantClient, run_training, write_history
from fedanom.model import ParamLayout, ParamVector
from fedanom.seeding import derive_seed


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ContractError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricRow:
    sweep_var: str
    value: float
    seed: int
    precision: float
    recall: float
    f1: float
    cm: ConfusionMatrix
    degenerate: bool


def confusion(decisions, labels) -> ConfusionMatrix:
    """Standard confusion counts; positive class = anomaly = 1."""
    d = np.asarray(decisions)
    y = np.asarray(labels)
    if d.shape != y.shape or d.ndim != 1:
        raise ContractError("decisions and labels must be equal-length vectors")
    if d.shape[0] == 0:
        raise ContractError("cannot build a confusion matrix from zero records")
    dp = d == 1
    yp = y == 1
    return ConfusionMatrix(
        tp=int(np.sum(dp & yp)),
        fp=int(np.sum(dp & ~yp)),
        tn=int(np.sum(~dp & ~yp)),
        fn=int(np.sum(~dp & yp)),
    )


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if precision + recall <= 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def metrics(cm: ConfusionMatrix, sweep_var: str = "run", value: float = 0.0,
            seed: int = 0) -> MetricRow:
    """Precision/recall/F1 from counts; 0/0 cases yield 0 and set the
    degenerate flag."""
    degenerate = False
    if cm.tp + cm.fp > 0:
        precision = cm.tp / (cm.tp + cm.fp)
    else:
        precision = 0.0
        degenerate = True
    if cm.tp + cm.fn > 0:
        recall = cm.tp / (cm.tp + cm.fn)
    else:
        recall = 0.0
        degenerate = True
    if precision + recall <= 0.0:
        degenerate = True
    return MetricRow(
        sweep_var=sweep_var,
        value=float(value),
        seed=int(seed),
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        cm=cm,
        degenerate=degenerate,
    )


def build_clients(datasets, run_cfg, seed: int, noise_rate=None):
    """Split, optionally corrupt train halves, standardize, wrap as clients.

    Standardization statistics come from the (possibly corrupted) train
    split only, so eval data never leaks into preprocessing.
    """
    layout = ParamLayout(
        datasets[0].feature_dim, run_cfg.federation.train.hidden_dim
    )
    placeholder = ParamVector(np.zeros(layout.size), layout)
    clients = []
    for ds in datasets:
        train, evals = telemetry.split_train_eval(ds, run_cfg.eval_fraction)
        if noise_rate is not None and noise_rate > 0:
            train = telemetry.inject_noise(
                train,
                noise_rate,
                run_cfg.noise.feature_sigma,
                run_cfg.noise.label_flip_prob,
                derive_seed(seed, "noise", ds.tenant_id),
            )
        mean, std = telemetry.feature_stats(train)
        clients.append(
            TenantClient(
                tenant_id=ds.tenant_id,
                train_data=telemetry.standardize(train, mean, std),
                eval_data=telemetry.standardize(evals, mean, std),
                local_params=placeholder,
                personalized_params=placeholder,
                alpha=run_cfg.federation.alpha,
            )
        )
    return clients


def _score_vectors(params, features, space: str):
    if space == "embedding":
        return model.embed(params, features)
    return np.ascontiguousarray(features, dtype=np.float64)


def score_clients(clients, final_global, run_cfg, sweep_var: str,
                  value: float, seed: int):
    """Per-tenant windowed scoring of the eval streams, pooled metrics.

    Each tenant's window is seeded with its label-0 train vectors, the
    threshold policy is resolved (chi-squared from the score dimension,
    f1_optimal fitted on that tenant's train scores), and the eval
    stream is scored in time order with normal-decided vectors absorbed
    into the window as they pass.
    """
    sc = run_cfg.scoring
    chi_tau = None
    score_rows = []
    decisions_all = []
    labels_all = []
    for c in clients:
        params = c.personalized_params if sc.eval_model == "personalized" else final_global
        train_vec = _score_vectors(params, c.train_data.features, sc.space)
        eval_vec = _score_vectors(params, c.eval_data.features, sc.space)
        m = train_vec.shape[1]
        stats = scoring.WindowedStats(
            m, capacity=sc.window, epsilon=sc.epsilon
        )
        stats.feed(train_vec[c.train_data.labels == 0])
        if sc.threshold.kind == "chi_squared_quantile":
            if chi_tau is None:
                chi_tau = scoring.chi_squared_quantile(m, sc.threshold.level)
            tau = chi_tau
        else:
            train_scores = stats.score_batch(train_vec)
            tau = scoring.f1_optimal_threshold(train_scores, c.train_data.labels)
        scores, decisions = stats.score_stream(eval_vec, tau)
        for i in range(eval_vec.shape[0]):
            score_rows.append(
                (
                    int(c.eval_data.timestamps[i]),
                    c.tenant_id,
                    float(scores[i]),
                    float(tau),
                    int(decisions[i]),
                    int(c.eval_data.labels[i]),
                )
            )
        decisions_all.append(decisions)
        labels_all.append(c.eval_data.labels)
    cm = confusion(np.concatenate(decisions_all), np.concatenate(labels_all))
    return metrics(cm, sweep_var, value, seed), score_rows


@dataclass
class ExperimentResult:
    row: MetricRow
    history: list
    final_global: ParamVector
    score_rows: list


def run_experiment(run_cfg, seed: int, participation_rate=None,
                   noise_rate=None, sweep_var: str = "run",
                   value: float = 0.0) -> ExperimentResult:
    """One full generate-train-score run keyed entirely on one seed."""
    gen_cfg = replace(run_cfg.generator, seed=derive_seed(seed, "telemetry"))
    datasets = telemetry.generate_dataset(gen_cfg)
    clients = build_clients(datasets, run_cfg, seed, noise_rate=noise_rate)
    fed_cfg = replace(run_cfg.federation, seed=derive_seed(seed, "federation"))
    if participation_rate is not None:
        fed_cfg = replace(fed_cfg, participation_rate=participation_rate)
    final_global, history = run_training(clients, fed_cfg)
    row, score_rows = score_clients(
        clients, final_global, run_cfg, sweep_var, value, seed
    )
    return ExperimentResult(
        row=row, history=history, final_global=final_global,
        score_rows=score_rows,
    )


@dataclass(frozen=True)
class ValueAggregate:
    value: float
    precision_mean: float
    precision_std: float
    recall_mean: float
    recall_std: float
    f1_mean: float
    f1_std: float


@dataclass
class SweepResult:
    sweep_var: str
    values: list
    seeds: list
    rows: list
    aggregates: list
    histories: dict


def _run_label(sweep_var: str, value: float, seed: int) -> str:
    return f"{sweep_var}_{value!r}_seed_{seed}"


def _aggregate(sweep_var, values, seeds, rows):
    by_value = {}
    for row in rows:
        by_value.setdefault(row.value, []).append(row)
    aggregates = []
    for value in values:
        group = by_value[float(value)]
        p = np.array([r.precision for r in group])
        r_ = np.array([r.recall for r in group])
        f = np.array([r.f1 for r in group])
        aggregates.append(
            ValueAggregate(
                value=float(value),
                precision_mean=float(np.mean(p)),
                precision_std=float(np.std(p)),
                recall_mean=float(np.mean(r_)),
                recall_std=float(np.std(r_)),
                f1_mean=float(np.mean(f)),
                f1_std=float(np.std(f)),
            )
        )
    return aggregates


def _run_sweep(run_cfg, sweep_var, values, seeds, param):
    if len(seeds) < 3:
        raise ConfigError(
            f"sweeps need at least 3 seeds for stable trends, got {len(seeds)}"
        )
    rows = []
    histories = {}
    for value in values:
        for seed in seeds:
            res = run_experiment(
                run_cfg, seed, sweep_var=sweep_var, value=float(value),
                **{param: value},
            )
            rows.append(res.row)
            histories[_run_label(sweep_var, float(value), seed)] = res.history
    return SweepResult(
        sweep_var=sweep_var,
        values=[float(v) for v in values],
        seeds=list(seeds),
        rows=rows,
        aggregates=_aggregate(sweep_var, values, seeds, rows),
        histories=histories,
    )


def sweep_participation(run_cfg, rates, seeds) -> SweepResult:
    """Full runs over a participation-rate grid, holding all else fixed."""
    for rate in rates:
        if not 0.0 < rate <= 1.0:
            raise ConfigError(f"participation rate must be in (0, 1], got {rate}")
    return _run_sweep(
        run_cfg, "participation_rate", rates, seeds, "participation_rate"
    )


def sweep_noise(run_cfg, noise_rates, seeds) -> SweepResult:
    """Full runs over a train-corruption grid; eval halves stay clean."""
    for rate in noise_rates:
        if not 0.0 <= rate <= 1.0:
            raise ConfigError(f"noise rate must be in [0, 1], got {rate}")
    return _run_sweep(run_cfg, "noise_rate", noise_rates, seeds, "noise_rate")


METRICS_HEADER = ["sweep_var", "value", "seed", "precision", "recall", "f1",
                  "tp", "fp", "tn", "fn"]


def render_metrics_csv(rows) -> str:
    lines = [",".join(METRICS_HEADER)]
    for r in rows:
        lines.append(
            ",".join(
                [
                    r.sweep_var,
                    repr(float(r.value)),
                    str(r.seed),
                    repr(float(r.precision)),
                    repr(float(r.recall)),
                    repr(float(r.f1)),
                    str(r.cm.tp),
                    str(r.cm.fp),
                    str(r.cm.tn),
                    str(r.cm.fn),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def render_summary(sweep: SweepResult, config_text: str) -> str:
    """Stable-order `key = value` summary with config echo and aggregates."""
    lines = []
    lines.append(f"sweep_var = {sweep.sweep_var}")
    lines.append(f"values = {';'.join(repr(float(v)) for v in sweep.values)}")
    lines.append(f"seeds = {';'.join(str(s) for s in sweep.seeds)}")
    lines.append(f"rows = {len(sweep.rows)}")
    for agg in sweep.aggregates:
        tag = repr(agg.value)
        lines.append(f"precision_mean[{tag}] = {agg.precision_mean!r}")
        lines.append(f"precision_std[{tag}] = {agg.precision_std!r}")
        lines.append(f"recall_mean[{tag}] = {agg.recall_mean!r}")
        lines.append(f"recall_std[{tag}] = {agg.recall_std!r}")
        lines.append(f"f1_mean[{tag}] = {agg.f1_mean!r}")
        lines.append(f"f1_std[{tag}] = {agg.f1_std!r}")
    degenerate = [r for r in sweep.rows if r.degenerate]
    lines.append(f"degenerate_rows = {len(degenerate)}")
    for r in degenerate:
        lines.append(f"degenerate[{r.value!r},{r.seed}] = true")
    for cfg_line in config_text.rstrip("\n").split("\n"):
        lines.append(f"config.{cfg_line}" if cfg_line else "config.")
    return "\n".join(lines) + "\n"


def emit_report(sweep: SweepResult, config_text: str, out_dir) -> None:
    """Write metrics.csv, summary.txt, config.yaml, and history/ atomically.

    Everything is staged in a temporary sibling directory and promoted
    with rename/replace, so a failed run leaves no partial outputs.
    """
    if not sweep.rows:
        raise ConfigError("cannot emit a report for an empty sweep")
    out_dir = os.path.abspath(out_dir)
    parent = os.path.dirname(out_dir)
    os.makedirs(parent, exist_ok=True)
    stage = tempfile.mkdtemp(prefix=".stage-", dir=parent)
    try:
        with open(os.path.join(stage, "metrics.csv"), "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write(render_metrics_csv(sweep.rows))
        with open(os.path.join(stage, "summary.txt"), "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write(render_summary(sweep, config_text))
        with open(os.path.join(stage, "config.yaml"), "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write(config_text)
        hist_dir = os.path.join(stage, "history")
        os.makedirs(hist_dir)
        for label in sorted(sweep.histories):
            write_history(
                sweep.histories[label], os.path.join(hist_dir, f"{label}.csv")
            )
        if not os.path.exists(out_dir):
            os.rename(stage, out_dir)
            return
        for name in ("metrics.csv", "summary.txt", "config.yaml"):
            os.replace(os.path.join(stage, name), os.path.join(out_dir, name))
        final_hist = os.path.join(out_dir, "history")
        os.makedirs(final_hist, exist_ok=True)
        for fname in sorted(os.listdir(hist_dir)):
            os.replace(os.path.join(hist_dir, fname),
                       os.path.join(final_hist, fname))
    finally:
        if os.path.exists(stage):
            shutil.rmtree(stage)
