"""Synthetic multi-tenant telemetry, CSV ingestion, and noise injection.

Each tenant draws normal behavior from its own baseline (sampled once
from a seeded meta-distribution) with a sinusoidal diurnal component on
cpu utilization and network rates, then a configured fraction of records
is overwritten with one of three anomaly patterns:

* cpu_spike — cpu_util raised by +4 baseline standard deviations, 1 tick;
* mem_leak — mem_util linear ramp over 20 consecutive ticks, all labeled;
* net_congestion — net_tx and net_rx jointly raised +3 sigma for 5 ticks.

All randomness is fanned out from the config seed with keyed derivation,
so generation is a pure function of the config.
"""

import csv
from dataclasses import dataclass

import numpy as np

from fedanom.errors import ConfigError, ContractError, CsvFormatError
from fedanom.seeding import derive_seed

CANONICAL_CHANNELS = ("cpu_util", "mem_util", "disk_io", "net_tx", "net_rx")

TICK_SECONDS = 600
DAY_SECONDS = 86400

MEM_LEAK_TICKS = 20
NET_CONGESTION_TICKS = 5
CPU_SPIKE_SIGMA = 4.0
MEM_LEAK_SIGMA = 3.5
NET_CONGESTION_SIGMA = 3.0


def feature_names(d: int) -> list[str]:
    return list(CANONICAL_CHANNELS) + [f"f{k}" for k in range(5, d)]


@dataclass(frozen=True)
class TelemetryRecord:
    timestamp: int
    tenant_id: int
    features: tuple
    label: int


class TenantDataset:
    """One tenant's ordered record partition, stored columnwise.

    timestamps: (n,) int64, strictly increasing; features: (n, d)
    float64; labels: (n,) int64 in {0, 1}. Immutable after construction.
    """

    __slots__ = ("tenant_id", "timestamps", "features", "labels")

    def __init__(self, tenant_id, timestamps, features, labels):
        timestamps = np.ascontiguousarray(timestamps, dtype=np.int64)
        features = np.ascontiguousarray(features, dtype=np.float64)
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        if features.ndim != 2:
            raise ContractError(f"features must be 2-d, got shape {features.shape}")
        n = features.shape[0]
        if n < 1:
            raise ContractError("a tenant dataset needs at least one record")
        if timestamps.shape != (n,) or labels.shape != (n,):
            raise ContractError(
                "timestamps, features, and labels must have matching lengths"
            )
        if np.any((labels != 0) & (labels != 1)):
            raise ContractError("labels must be 0 or 1")
        if n > 1 and not np.all(np.diff(timestamps) > 0):
            raise ContractError("timestamps must be strictly increasing")
        for arr in (timestamps, features, labels):
            arr.setflags(write=False)
        self.tenant_id = int(tenant_id)
        self.timestamps = timestamps
        self.features = features
        self.labels = labels

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def records(self) -> list:
        return [
            TelemetryRecord(
                int(self.timestamps[i]),
                self.tenant_id,
                tuple(float(v) for v in self.features[i]),
                int(self.labels[i]),
            )
            for i in range(self.n)
        ]

    def __eq__(self, other):
        if not isinstance(other, TenantDataset):
            return NotImplemented
        return (
            self.tenant_id == other.tenant_id
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True)
class GeneratorConfig:
    num_tenants: int
    records_per_tenant: int
    feature_dim: int = 5
    anomaly_rate: float = 0.05
    anomaly_mix: tuple = (0.35, 0.25, 0.40)
    per_tenant_baseline_spread: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.num_tenants < 1:
            raise ConfigError(f"num_tenants must be >= 1, got {self.num_tenants}")
        if self.records_per_tenant < 1:
            raise ConfigError(
                f"records_per_tenant must be >= 1, got {self.records_per_tenant}"
            )
        if self.feature_dim < 5:
            raise ConfigError(
                f"feature_dim must be >= 5 (the five canonical channels), "
                f"got {self.feature_dim}"
            )
        if not 0.0 <= self.anomaly_rate <= 1.0:
            raise ConfigError(
                f"anomaly_rate must be in [0, 1], got {self.anomaly_rate}"
            )
        mix = tuple(float(v) for v in self.anomaly_mix)
        if len(mix) != 3 or any(v < 0 for v in mix):
            raise ConfigError(
                f"anomaly_mix must be three nonnegative fractions, got "
                f"{self.anomaly_mix}"
            )
        if abs(sum(mix) - 1.0) > 1e-9:
            raise ConfigError(
                f"anomaly_mix must sum to 1 (got sum {sum(mix)!r})"
            )
        object.__setattr__(self, "anomaly_mix", mix)
        if self.per_tenant_baseline_spread < 0:
            raise ConfigError(
                f"per_tenant_baseline_spread must be >= 0, got "
                f"{self.per_tenant_baseline_spread}"
            )


class _Baseline:
    __slots__ = (
        "cpu_mean", "cpu_sigma", "mem_mean", "mem_sigma", "means", "sigmas",
        "cpu_amp", "net_amp", "phase", "extra_means", "mix",
    )


def _draw_baseline(rng, spread, d, mix):
    b = _Baseline()
    b.cpu_mean = float(np.clip(0.32 + spread * rng.standard_normal(), 0.05, 0.6))
    b.cpu_sigma = 0.05
    b.mem_mean = float(np.clip(0.45 + 0.8 * spread * rng.standard_normal(), 0.1, 0.8))
    b.mem_sigma = 0.04
    disk_mean = max(120.0 * (1.0 + spread * rng.standard_normal()), 10.0)
    tx_mean = max(80.0 * (1.0 + spread * rng.standard_normal()), 5.0)
    rx_mean = max(100.0 * (1.0 + spread * rng.standard_normal()), 5.0)
    b.means = (disk_mean, tx_mean, rx_mean)
    b.sigmas = (0.12 * disk_mean, 0.15 * tx_mean, 0.15 * rx_mean)
    b.cpu_amp = 0.04
    b.net_amp = 0.6
    b.phase = float(rng.uniform(0.0, 2.0 * np.pi))
    b.extra_means = [spread * float(rng.standard_normal()) for _ in range(d - 5)]
    # Workload character varies across tenants: tilt the anomaly-type mix
    # multiplicatively so each tenant leans toward its own failure modes
    # (zero-weight types stay zero; spread = 0 keeps the configured mix).
    # The log-scale coupling is deliberately stronger than the additive
    # baseline coupling so a moderate spread already specializes tenants.
    tilt = np.asarray(mix, dtype=np.float64) * np.exp(
        6.0 * spread * rng.standard_normal(3)
    )
    b.mix = tilt / tilt.sum()
    return b


def _place_episodes(rng, free, length, count):
    """Choose non-overlapping start positions for fixed-length episodes.

    Seeded rejection sampling first; after 200 misses per episode, a
    deterministic left-to-right scan takes the first free slot.
    """
    n = free.shape[0]
    starts = []
    for _ in range(count):
        placed = False
        if n >= length:
            for _attempt in range(200):
                pos = int(rng.integers(0, n - length + 1))
                if free[pos : pos + length].all():
                    starts.append(pos)
                    free[pos : pos + length] = False
                    placed = True
                    break
        if not placed:
            for pos in range(n - length + 1):
                if free[pos : pos + length].all():
                    starts.append(pos)
                    free[pos : pos + length] = False
                    placed = True
                    break
        if not placed:
            raise ConfigError(
                "anomaly_rate too high: anomaly episodes do not fit in "
                "records_per_tenant"
            )
    return starts


def _generate_tenant(cfg: GeneratorConfig, tenant_id: int, baseline):
    n = cfg.records_per_tenant
    d = cfg.feature_dim
    b = baseline
    rng = np.random.default_rng(derive_seed(cfg.seed, "tenant", tenant_id))

    t = np.arange(n, dtype=np.int64) * TICK_SECONDS
    day = np.sin(2.0 * np.pi * t.astype(np.float64) / DAY_SECONDS + b.phase)

    cpu = b.cpu_mean + b.cpu_amp * day + b.cpu_sigma * rng.standard_normal(n)
    mem = b.mem_mean + b.mem_sigma * rng.standard_normal(n)
    disk = b.means[0] + b.sigmas[0] * rng.standard_normal(n)
    shared = rng.standard_normal(n)
    r = np.sqrt(0.5)
    tx = b.means[1] * (1.0 + b.net_amp * day) + b.sigmas[1] * (
        r * shared + r * rng.standard_normal(n)
    )
    rx = b.means[2] * (1.0 + b.net_amp * day) + b.sigmas[2] * (
        r * shared + r * rng.standard_normal(n)
    )
    extras = [
        mean_k + rng.standard_normal(n) for mean_k in b.extra_means
    ]

    labels = np.zeros(n, dtype=np.int64)
    budget = int(round(cfg.anomaly_rate * n))
    if budget > 0:
        mix = b.mix
        n_mem = int(mix[1] * budget / MEM_LEAK_TICKS)
        n_net = int(mix[2] * budget / NET_CONGESTION_TICKS)
        n_cpu = budget - n_mem * MEM_LEAK_TICKS - n_net * NET_CONGESTION_TICKS

        arng = np.random.default_rng(derive_seed(cfg.seed, "anomalies", tenant_id))
        free = np.ones(n, dtype=bool)
        mem_starts = _place_episodes(arng, free, MEM_LEAK_TICKS, n_mem)
        net_starts = _place_episodes(arng, free, NET_CONGESTION_TICKS, n_net)
        cpu_starts = _place_episodes(arng, free, 1, n_cpu)

        ramp = np.arange(1, MEM_LEAK_TICKS + 1) / MEM_LEAK_TICKS
        for pos in mem_starts:
            mem[pos : pos + MEM_LEAK_TICKS] += (
                MEM_LEAK_SIGMA * b.mem_sigma * ramp
            )
            labels[pos : pos + MEM_LEAK_TICKS] = 1
        for pos in net_starts:
            tx[pos : pos + NET_CONGESTION_TICKS] += (
                NET_CONGESTION_SIGMA * b.sigmas[1]
            )
            rx[pos : pos + NET_CONGESTION_TICKS] += (
                NET_CONGESTION_SIGMA * b.sigmas[2]
            )
            labels[pos : pos + NET_CONGESTION_TICKS] = 1
        for pos in cpu_starts:
            cpu[pos] += CPU_SPIKE_SIGMA * b.cpu_sigma
            labels[pos] = 1

    cpu = np.clip(cpu, 0.0, 1.0)
    mem = np.clip(mem, 0.0, 1.0)
    disk = np.maximum(disk, 0.0)
    tx = np.maximum(tx, 0.0)
    rx = np.maximum(rx, 0.0)

    features = np.column_stack([cpu, mem, disk, tx, rx] + extras)
    return TenantDataset(tenant_id, t, features[:, :d], labels)


def generate_dataset(cfg: GeneratorConfig) -> list:
    """K tenant partitions with exactly round(rate*n) label-1 ticks each."""
    base_rng = np.random.default_rng(derive_seed(cfg.seed, "baselines"))
    baselines = [
        _draw_baseline(
            base_rng, cfg.per_tenant_baseline_spread, cfg.feature_dim,
            cfg.anomaly_mix,
        )
        for _ in range(cfg.num_tenants)
    ]
    return [
        _generate_tenant(cfg, i, baselines[i]) for i in range(cfg.num_tenants)
    ]


def write_csv(datasets, path) -> None:
    """Write partitions to one CSV (ascending tenant id, time order within)."""
    d = datasets[0].feature_dim if datasets else 5
    header = ["timestamp", "tenant_id"] + feature_names(d) + ["label"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for ds in sorted(datasets, key=lambda s: s.tenant_id):
            for i in range(ds.n):
                row = [int(ds.timestamps[i]), ds.tenant_id]
                row.extend(repr(float(v)) for v in ds.features[i])
                row.append(int(ds.labels[i]))
                writer.writerow(row)


def load_csv(path, feature_dim: int = 5) -> list:
    """Parse the telemetry CSV schema into per-tenant datasets.

    Records are grouped by tenant_id and ordered by timestamp; parse
    problems raise a format error carrying the 1-based line number.
    """
    if feature_dim < 5:
        raise ConfigError(f"feature_dim must be >= 5, got {feature_dim}")
    expected = ["timestamp", "tenant_id"] + feature_names(feature_dim) + ["label"]
    by_tenant = {}
    seen = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(1, "missing header row") from None
        if header != expected:
            missing = [c for c in expected if c not in header]
            if missing:
                raise CsvFormatError(1, f"missing column(s): {', '.join(missing)}")
            raise CsvFormatError(
                1, f"header must be exactly: {','.join(expected)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise CsvFormatError(
                    lineno,
                    f"expected {len(expected)} fields, got {len(row)}",
                )
            try:
                ts = int(row[0])
                tenant = int(row[1])
                feats = [float(v) for v in row[2:-1]]
                label = int(row[-1])
            except ValueError:
                raise CsvFormatError(lineno, "non-numeric field") from None
            if ts < 0:
                raise CsvFormatError(lineno, "timestamp must be nonnegative")
            if tenant < 0:
                raise CsvFormatError(lineno, "tenant_id must be nonnegative")
            if label not in (0, 1):
                raise CsvFormatError(lineno, f"label must be 0 or 1, got {label}")
            key = (tenant, ts)
            if key in seen:
                raise CsvFormatError(
                    lineno, f"duplicate (tenant_id, timestamp) pair {key}"
                )
            seen.add(key)
            by_tenant.setdefault(tenant, []).append((ts, feats, label))
    out = []
    for tenant in sorted(by_tenant):
        rows = sorted(by_tenant[tenant], key=lambda r: r[0])
        out.append(
            TenantDataset(
                tenant,
                np.array([r[0] for r in rows], dtype=np.int64),
                np.array([r[1] for r in rows]),
                np.array([r[2] for r in rows], dtype=np.int64),
            )
        )
    return out


def inject_noise(ds: TenantDataset, rate: float, feature_sigma: float,
                 label_flip_prob: float, seed: int) -> TenantDataset:
    """Corrupt a seeded sample of exactly round(rate*n) records.

    The corrupted index set is the first round(rate*n) entries of
    default_rng(seed).permutation(n). Each chosen record gets zero-mean
    Gaussian feature noise with standard deviation feature_sigma in
    per-feature standardized units (sigma times that feature's std over
    ds), and its label flips with probability label_flip_prob. A
    feature_sigma of exactly 0 leaves features bitwise untouched. The
    input dataset is not mutated.
    """
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"noise rate must be in [0, 1], got {rate}")
    if feature_sigma < 0:
        raise ConfigError(f"feature_sigma must be >= 0, got {feature_sigma}")
    if not 0.0 <= label_flip_prob <= 1.0:
        raise ConfigError(
            f"label_flip_prob must be in [0, 1], got {label_flip_prob}"
        )
    k = int(round(rate * ds.n))
    if k == 0:
        return ds
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.permutation(ds.n)[:k])
    features = ds.features.copy()
    labels = ds.labels.copy()
    if feature_sigma > 0:
        stds = ds.features.std(axis=0)
        stds = np.where(stds == 0.0, 1.0, stds)
        noise = rng.standard_normal((k, ds.feature_dim)) * (feature_sigma * stds)
        features[chosen] += noise
    if label_flip_prob > 0:
        flips = rng.random(k) < label_flip_prob
        idx = chosen[flips]
        labels[idx] = 1 - labels[idx]
    return TenantDataset(ds.tenant_id, ds.timestamps, features, labels)


def split_train_eval(ds: TenantDataset, eval_fraction: float):
    """Chronological split; the last round(eval_fraction*n) records are eval."""
    if not 0.0 < eval_fraction < 1.0:
        raise ConfigError(
            f"eval_fraction must be in (0, 1), got {eval_fraction}"
        )
    k = int(round(eval_fraction * ds.n))
    if k == 0 or k == ds.n:
        raise ConfigError(
            f"eval_fraction {eval_fraction} leaves an empty split for "
            f"n={ds.n}"
        )
    cut = ds.n - k
    train = TenantDataset(
        ds.tenant_id, ds.timestamps[:cut], ds.features[:cut], ds.labels[:cut]
    )
    evals = TenantDataset(
        ds.tenant_id, ds.timestamps[cut:], ds.features[cut:], ds.labels[cut:]
    )
    return train, evals


def feature_stats(ds: TenantDataset):
    """Per-feature mean and population std; zero stds are replaced by 1."""
    mean = ds.features.mean(axis=0)
    std = ds.features.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return mean, std


def standardize(ds: TenantDataset, mean, std) -> TenantDataset:
    return TenantDataset(
        ds.tenant_id, ds.timestamps, (ds.features - mean) / std, ds.labels
    )
