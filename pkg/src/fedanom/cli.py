"""Command-line interface.

Subcommands: generate, train, sweep, score, print-default-config.
Exit codes: 0 success, 1 runtime failure, 2 usage/config error. Outputs
are staged to temporary files/directories and renamed into place, so a
failed command leaves no partial outputs, and every output directory
receives a copy of the fully resolved configuration.
"""

import argparse
import os
import shutil
import sys
import tempfile
from dataclasses import replace

from fedanom import evaluation, federation, model, scoring, telemetry
from fedanom.config import (
    DEFAULT_CONFIG_TEXT,
    load_config,
    parse_config,
    render_config,
)
from fedanom.errors import ConfigError, FedanomError
from fedanom.seeding import derive_seed


def _resolve_config(args):
    seed_override = getattr(args, "seed", None)
    if getattr(args, "config", None):
        return load_config(args.config, seed_override=seed_override)
    return parse_config(None, seed_override=seed_override)


def _write_file_atomic(out_path, write_fn):
    out_path = os.path.abspath(out_path)
    parent = os.path.dirname(out_path)
    os.makedirs(parent, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=parent, prefix=".tmp-")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, out_path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _write_dir_atomic(out_dir, write_fn):
    out_dir = os.path.abspath(out_dir)
    parent = os.path.dirname(out_dir)
    os.makedirs(parent, exist_ok=True)
    stage = tempfile.mkdtemp(dir=parent, prefix=".stage-")
    try:
        write_fn(stage)
        if not os.path.exists(out_dir):
            os.rename(stage, out_dir)
            return
        for name in sorted(os.listdir(stage)):
            os.replace(os.path.join(stage, name), os.path.join(out_dir, name))
    finally:
        if os.path.exists(stage):
            shutil.rmtree(stage)


def cmd_generate(args) -> int:
    cfg = _resolve_config(args)
    gen_cfg = replace(cfg.generator, seed=derive_seed(cfg.seed, "telemetry"))
    datasets = telemetry.generate_dataset(gen_cfg)
    _write_file_atomic(args.out, lambda p: telemetry.write_csv(datasets, p))
    return 0


def _load_clients(cfg, data_path):
    datasets = telemetry.load_csv(data_path, cfg.generator.feature_dim)
    if not datasets:
        raise ConfigError(f"{data_path}: dataset contains no records")
    return evaluation.build_clients(datasets, cfg, cfg.seed)


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    clients = _load_clients(cfg, args.data)
    fed_cfg = replace(cfg.federation, seed=derive_seed(cfg.seed, "federation"))
    final_global, history = federation.run_training(clients, fed_cfg)

    def write(stage):
        model.save_params(final_global, os.path.join(stage, "model.txt"))
        federation.write_history(history, os.path.join(stage, "history.csv"))
        with open(os.path.join(stage, "config.yaml"), "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write(render_config(cfg))

    _write_dir_atomic(args.out, write)
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    if args.kind == "participation":
        sweep = evaluation.sweep_participation(
            cfg, cfg.sweep.participation_rates, cfg.sweep.seeds
        )
    else:
        sweep = evaluation.sweep_noise(cfg, cfg.sweep.noise_rates,
                                       cfg.sweep.seeds)
    evaluation.emit_report(sweep, render_config(cfg), args.out)
    return 0


def cmd_score(args) -> int:
    cfg = _resolve_config(args)
    snapshot = model.load_params(args.model)
    clients = _load_clients(cfg, args.data)
    d = clients[0].train_data.feature_dim
    if snapshot.layout.input_dim != d:
        raise ConfigError(
            f"model snapshot expects input_dim "
            f"{snapshot.layout.input_dim}, dataset has {d} features"
        )
    # The snapshot is a single (global) model, so scoring always runs in
    # global-model mode regardless of the configured eval_model.
    score_cfg = replace(
        cfg, scoring=replace(cfg.scoring, eval_model="global")
    )
    _, rows = evaluation.score_clients(
        clients, snapshot, score_cfg, "score", 0.0, cfg.seed
    )
    _write_file_atomic(args.out, lambda p: scoring.write_scores(rows, p))
    return 0


def cmd_print_default_config(_args) -> int:
    sys.stdout.write(DEFAULT_CONFIG_TEXT)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedanom",
        description="Deterministic federated anomaly-detection simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic telemetry CSV")
    p.add_argument("--config", help="YAML config path (defaults built in)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="run federated training on a dataset")
    p.add_argument("--config")
    p.add_argument("--data", required=True, help="telemetry CSV path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run a participation or noise sweep")
    p.add_argument("--config")
    p.add_argument("--kind", required=True, choices=("participation", "noise"))
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("score", help="score a dataset with a model snapshot")
    p.add_argument("--config")
    p.add_argument("--model", required=True, help="model snapshot path")
    p.add_argument("--data", required=True, help="telemetry CSV path")
    p.add_argument("--out", required=True, help="output score CSV path")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("print-default-config",
                       help="print the default YAML configuration")
    p.set_defaults(func=cmd_print_default_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FedanomError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
