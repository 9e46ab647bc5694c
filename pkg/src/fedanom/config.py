"""Run configuration: YAML loading, validation, defaults, and echoing.

One YAML file drives every CLI command. Unknown keys are rejected so a
typo cannot silently fall back to a default, and `render_config` prints
the fully resolved configuration back out in a canonical form for the
config-echo files.
"""

from dataclasses import dataclass

import yaml

from fedanom.errors import ConfigError
from fedanom.federation import FederationConfig
from fedanom.model import TrainConfig
from fedanom.scoring import ThresholdPolicy
from fedanom.telemetry import GeneratorConfig

SCORING_SPACES = ("embedding", "raw")
EVAL_MODELS = ("personalized", "global")


@dataclass(frozen=True)
class ScoringOptions:
    space: str = "embedding"
    window: int = 256
    epsilon: float = 0.35
    threshold: ThresholdPolicy = ThresholdPolicy("chi_squared_quantile", 0.999)
    eval_model: str = "personalized"

    def __post_init__(self):
        if self.space not in SCORING_SPACES:
            raise ConfigError(
                f"scoring space must be one of {SCORING_SPACES}, got "
                f"{self.space!r}"
            )
        if self.window < 2:
            raise ConfigError(f"window must be >= 2, got {self.window}")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.eval_model not in EVAL_MODELS:
            raise ConfigError(
                f"eval_model must be one of {EVAL_MODELS}, got "
                f"{self.eval_model!r}"
            )


@dataclass(frozen=True)
class NoiseOptions:
    feature_sigma: float = 1.0
    label_flip_prob: float = 0.5

    def __post_init__(self):
        if self.feature_sigma < 0:
            raise ConfigError(
                f"feature_sigma must be >= 0, got {self.feature_sigma}"
            )
        if not 0.0 <= self.label_flip_prob <= 1.0:
            raise ConfigError(
                f"label_flip_prob must be in [0, 1], got {self.label_flip_prob}"
            )


@dataclass(frozen=True)
class SweepOptions:
    participation_rates: tuple = (0.2, 0.4, 0.6, 0.8, 1.0)
    noise_rates: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    seeds: tuple = (0, 1, 2)

    def __post_init__(self):
        if not self.participation_rates or not self.noise_rates:
            raise ConfigError("sweep grids must be non-empty")
        if not self.seeds:
            raise ConfigError("sweep seed list must be non-empty")


@dataclass(frozen=True)
class RunConfig:
    seed: int
    generator: GeneratorConfig
    eval_fraction: float
    train: TrainConfig
    federation: FederationConfig
    scoring: ScoringOptions
    noise: NoiseOptions
    sweep: SweepOptions

    def __post_init__(self):
        if not 0.0 < self.eval_fraction < 1.0:
            raise ConfigError(
                f"eval_fraction must be in (0, 1), got {self.eval_fraction}"
            )


def default_config() -> RunConfig:
    """The default benchmark: K=10 tenants, 2000 records each, T=50."""
    train = TrainConfig()
    return RunConfig(
        seed=0,
        generator=GeneratorConfig(num_tenants=10, records_per_tenant=2000,
                                  seed=0),
        eval_fraction=0.2,
        train=train,
        federation=FederationConfig(train=train),
        scoring=ScoringOptions(),
        noise=NoiseOptions(),
        sweep=SweepOptions(),
    )


def _expect_mapping(obj, name):
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return dict(obj)


def _take(section, name, key, default, kind):
    if key not in section:
        return default
    value = section.pop(key)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}.{key} must be a number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}.{key} must be an integer, got {value!r}")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name}.{key} must be a boolean, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{name}.{key} must be a string, got {value!r}")
        return value
    raise AssertionError(kind)


def _take_list(section, name, key, default, kind):
    if key not in section:
        return default
    value = section.pop(key)
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{name}.{key} must be a non-empty list")
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{name}.{key} entries must be numbers, got {v!r}")
        if kind is int and not isinstance(v, int):
            raise ConfigError(f"{name}.{key} entries must be integers, got {v!r}")
        out.append(kind(v))
    return tuple(out)


def _reject_unknown(section, name):
    if section:
        key = sorted(section)[0]
        raise ConfigError(f"unknown config key: {name}.{key}")


def parse_config(data, seed_override=None) -> RunConfig:
    """Build a validated RunConfig from a parsed YAML mapping."""
    root = _expect_mapping(data, "<root>")
    known_sections = {"seed", "telemetry", "train", "federation", "scoring",
                      "noise", "sweep"}
    unknown = sorted(set(root) - known_sections)
    if unknown:
        raise ConfigError(f"unknown config key: {unknown[0]}")

    seed = root.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    if seed_override is not None:
        seed = int(seed_override)

    tel = _expect_mapping(root.get("telemetry"), "telemetry")
    generator = GeneratorConfig(
        num_tenants=_take(tel, "telemetry", "num_tenants", 10, int),
        records_per_tenant=_take(tel, "telemetry", "records_per_tenant", 2000, int),
        feature_dim=_take(tel, "telemetry", "feature_dim", 5, int),
        anomaly_rate=_take(tel, "telemetry", "anomaly_rate", 0.05, float),
        anomaly_mix=_take_list(tel, "telemetry", "anomaly_mix",
                               (0.35, 0.25, 0.40), float),
        per_tenant_baseline_spread=_take(
            tel, "telemetry", "per_tenant_baseline_spread", 0.15, float),
        seed=seed,
    )
    eval_fraction = _take(tel, "telemetry", "eval_fraction", 0.2, float)
    _reject_unknown(tel, "telemetry")

    tr = _expect_mapping(root.get("train"), "train")
    train = TrainConfig(
        learning_rate=_take(tr, "train", "learning_rate", 0.02, float),
        local_epochs=_take(tr, "train", "local_epochs", 3, int),
        batch_size=_take(tr, "train", "batch_size", 32, int),
        l2=_take(tr, "train", "l2", 1e-4, float),
        hidden_dim=_take(tr, "train", "hidden_dim", 16, int),
        seed=seed,
    )
    _reject_unknown(tr, "train")

    fed = _expect_mapping(root.get("federation"), "federation")
    federation = FederationConfig(
        rounds=_take(fed, "federation", "rounds", 50, int),
        participation_rate=_take(fed, "federation", "participation_rate",
                                 1.0, float),
        alpha=_take(fed, "federation", "alpha", 0.25, float),
        train=train,
        seed=seed,
        fixed_participants=_take(fed, "federation", "fixed_participants",
                                 False, bool),
    )
    _reject_unknown(fed, "federation")

    sco = _expect_mapping(root.get("scoring"), "scoring")
    threshold_kind = _take(sco, "scoring", "threshold", "chi_squared_quantile",
                           str)
    level = _take(sco, "scoring", "level", 0.999, float)
    scoring_opts = ScoringOptions(
        space=_take(sco, "scoring", "space", "embedding", str),
        window=_take(sco, "scoring", "window", 256, int),
        epsilon=_take(sco, "scoring", "epsilon", 0.35, float),
        threshold=ThresholdPolicy(threshold_kind, level),
        eval_model=_take(sco, "scoring", "eval_model", "personalized", str),
    )
    _reject_unknown(sco, "scoring")

    noi = _expect_mapping(root.get("noise"), "noise")
    noise = NoiseOptions(
        feature_sigma=_take(noi, "noise", "feature_sigma", 1.0, float),
        label_flip_prob=_take(noi, "noise", "label_flip_prob", 0.5, float),
    )
    _reject_unknown(noi, "noise")

    sw = _expect_mapping(root.get("sweep"), "sweep")
    sweep = SweepOptions(
        participation_rates=_take_list(sw, "sweep", "participation_rates",
                                       (0.2, 0.4, 0.6, 0.8, 1.0), float),
        noise_rates=_take_list(sw, "sweep", "noise_rates",
                               (0.0, 0.1, 0.2, 0.3, 0.4, 0.5), float),
        seeds=_take_list(sw, "sweep", "seeds", (0, 1, 2), int),
    )
    _reject_unknown(sw, "sweep")

    return RunConfig(
        seed=seed,
        generator=generator,
        eval_fraction=eval_fraction,
        train=train,
        federation=federation,
        scoring=scoring_opts,
        noise=noise,
        sweep=sweep,
    )


def load_config(path, seed_override=None) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return parse_config(data, seed_override=seed_override)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _fmt_list(vs) -> str:
    return "[" + ", ".join(_fmt(v) for v in vs) + "]"


def render_config(cfg: RunConfig) -> str:
    """Canonical resolved-config text (valid YAML, byte-stable)."""
    g = cfg.generator
    t = cfg.train
    f = cfg.federation
    s = cfg.scoring
    lines = [
        f"seed: {cfg.seed}",
        "telemetry:",
        f"  num_tenants: {g.num_tenants}",
        f"  records_per_tenant: {g.records_per_tenant}",
        f"  feature_dim: {g.feature_dim}",
        f"  anomaly_rate: {_fmt(g.anomaly_rate)}",
        f"  anomaly_mix: {_fmt_list(g.anomaly_mix)}",
        f"  per_tenant_baseline_spread: {_fmt(g.per_tenant_baseline_spread)}",
        f"  eval_fraction: {_fmt(cfg.eval_fraction)}",
        "train:",
        f"  learning_rate: {_fmt(t.learning_rate)}",
        f"  local_epochs: {t.local_epochs}",
        f"  batch_size: {t.batch_size}",
        f"  l2: {_fmt(t.l2)}",
        f"  hidden_dim: {t.hidden_dim}",
        "federation:",
        f"  rounds: {f.rounds}",
        f"  participation_rate: {_fmt(f.participation_rate)}",
        f"  alpha: {_fmt(f.alpha)}",
        f"  fixed_participants: {_fmt(f.fixed_participants)}",
        "scoring:",
        f"  space: {s.space}",
        f"  window: {s.window}",
        f"  epsilon: {_fmt(s.epsilon)}",
        f"  threshold: {s.threshold.kind}",
        f"  level: {_fmt(s.threshold.level)}",
        f"  eval_model: {s.eval_model}",
        "noise:",
        f"  feature_sigma: {_fmt(cfg.noise.feature_sigma)}",
        f"  label_flip_prob: {_fmt(cfg.noise.label_flip_prob)}",
        "sweep:",
        f"  participation_rates: {_fmt_list(cfg.sweep.participation_rates)}",
        f"  noise_rates: {_fmt_list(cfg.sweep.noise_rates)}",
        f"  seeds: {_fmt_list(cfg.sweep.seeds)}",
    ]
    return "\n".join(lines) + "\n"


DEFAULT_CONFIG_TEXT = """\
# Default run configuration. Every value below is the built-in default;
# delete anything you do not want to override. All randomness derives
# from the single top-level seed.
seed: 0

telemetry:
  num_tenants: 10
  records_per_tenant: 2000
  feature_dim: 5            # >= 5; extra channels are named f5, f6, ...
  anomaly_rate: 0.05        # fraction of label-1 ticks per tenant
  anomaly_mix: [0.35, 0.25, 0.40]   # cpu_spike, mem_leak, net_congestion
  per_tenant_baseline_spread: 0.15
  eval_fraction: 0.2        # chronological tail held out per tenant

train:
  learning_rate: 0.02
  local_epochs: 3
  batch_size: 32
  l2: 0.0001                # L2 coefficient over all parameters
  hidden_dim: 16

federation:
  rounds: 50
  participation_rate: 1.0   # fraction of tenants sampled per round
  alpha: 0.25               # personalization blend toward local params
  fixed_participants: false # true: one participant subset for all rounds

scoring:
  space: embedding          # embedding | raw
  window: 256               # sliding-window capacity per tenant
  epsilon: 0.35             # covariance shrinkage; embeddings need strong
                            # shrinkage or near-dead hidden units dominate
  threshold: chi_squared_quantile   # chi_squared_quantile | f1_optimal
  level: 0.999              # quantile level for chi_squared_quantile
  eval_model: personalized  # personalized | global

noise:
  feature_sigma: 1.0        # corruption noise, per-feature std units
  label_flip_prob: 0.5

sweep:
  participation_rates: [0.2, 0.4, 0.6, 0.8, 1.0]
  noise_rates: [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
  seeds: [0, 1, 2]
"""
