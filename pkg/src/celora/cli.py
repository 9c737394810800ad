"""Command-line front end.

Subcommands: run, comm-table, sweep, attack, partition-dump.  All outputs
are plain JSONL/CSV plus a dump of the effective config, so any run can be
reproduced byte-for-byte from its output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import federation, privacy, training
from .adapter import param_counts
from .config import comm_shape_config
from .data import PartitionSpec, dirichlet_partition, heterogeneity
from .errors import CeloraError, ConfigError

log = logging.getLogger("celora")


def _load_effective(args):
    cfg = cfgmod.load(args.config)
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out_dir is not None:
        overrides.append(f"output.dir={args.out_dir}")
    return cfgmod.apply_overrides(cfg, overrides)


def _out_dir(cfg) -> Path:
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _final_accuracies(clients):
    return {
        c.id: training.evaluate(c.model, c.test_X, c.test_y)["accuracy"] for c in clients
    }


def _summary(accs: dict) -> dict:
    values = list(accs.values())
    return {
        "mean_accuracy": float(np.mean(values)),
        "worst_accuracy": float(np.min(values)),
        "best_accuracy": float(np.max(values)),
    }


def cmd_run(args) -> int:
    cfg = _load_effective(args)
    out = _out_dir(cfg)
    cfgmod.dump(cfg, out / "effective_config.yaml")
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as stream:
        records, server, clients = federation.run_experiment(cfg, metrics_stream=stream)
    accs = _final_accuracies(clients)
    with open(out / "accuracy.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client_id", "eval_accuracy"])
        for cid in sorted(accs):
            writer.writerow([cid, accs[cid]])
    summary = _summary(accs)
    summary["rounds"] = len(records)
    summary["total_uploaded_params"] = sum(
        sum(r.uploaded_params.values()) for r in records
    )
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    checkpoint_every = cfg["output"]["checkpoint_every"]
    if checkpoint_every:
        federation.save_checkpoint(out / "adapters_final.ckpt", clients)
    print(json.dumps(summary, sort_keys=True))
    return 0


_COMM_METHODS = (("fedavg-lora", "fedpetuning"), ("ffa-lora", "ffa"), ("ce-lora", "ce_lora"))


def comm_table_rows(cfg) -> list[dict]:
    counts = param_counts(comm_shape_config(cfg))
    base = counts["fedpetuning"]
    rows = []
    for method, key in _COMM_METHODS:
        rows.append(
            {
                "method": method,
                "params_per_round": counts[key],
                "percent_of_fedavg": f"{100.0 * counts[key] / base:.2f}%",
            }
        )
    return rows


def cmd_comm_table(args) -> int:
    cfg = _load_effective(args)
    rows = comm_table_rows(cfg)
    width = max(len(r["method"]) for r in rows)
    for row in rows:
        print(f"{row['method']:<{width}}  {row['params_per_round']:>12,}  {row['percent_of_fedavg']:>8}")
    if args.out_dir is not None:
        out = _out_dir(cfg)
        with open(out / "comm_table.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["method", "params_per_round", "percent_of_fedavg"])
            writer.writeheader()
            writer.writerows(rows)
    return 0


_SWEEP_KEYS = {
    "alpha": ("partition", "alpha", float),
    "clients": ("partition", "clients", int),
    "rank": ("model", "rank", int),
}


def _partition_for(cfg):
    dataset = federation._build_dataset(cfg)
    part = cfg["partition"]
    shards = dirichlet_partition(
        dataset.labels,
        PartitionSpec(
            clients=part["clients"],
            alpha=part["alpha"],
            seed=federation.child_seed(cfg["seed"], federation._TAG_PARTITION),
            min_samples_per_client=part["min_samples_per_client"],
        ),
    )
    return dataset, shards


def cmd_sweep(args) -> int:
    base_cfg = _load_effective(args)
    section, key, cast = _SWEEP_KEYS[args.axis]
    try:
        values = [cast(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse sweep values: {exc}") from exc
    if not values:
        raise ConfigError("sweep needs at least one value")
    out = _out_dir(base_cfg)
    rows = []
    any_failed = False
    for idx, value in enumerate(values):
        cfg = cfgmod.apply_overrides(
            base_cfg, [f"{section}.{key}={value}", f"seed={base_cfg['seed'] + 1000 * idx}"]
        )
        row = {"axis": args.axis, "value": value, "method": cfg["method"], "status": "ok"}
        try:
            records, server, clients = federation.run_experiment(cfg)
            dataset, shards = _partition_for(cfg)
            accs = _final_accuracies(clients)
            row.update(_summary(accs))
            row["total_uploaded_params"] = sum(
                sum(r.uploaded_params.values()) for r in records
            )
            row["heterogeneity"] = heterogeneity(dataset.labels, shards, dataset.class_count)
        except CeloraError as exc:
            log.error("sweep value %s failed: %s", value, exc)
            row["status"] = f"failed: {exc}"
            any_failed = True
        rows.append(row)
    fields = [
        "axis", "value", "method", "mean_accuracy", "worst_accuracy", "best_accuracy",
        "total_uploaded_params", "heterogeneity", "status",
    ]
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fields})
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} rows)")
    return 1 if any_failed else 0


def run_attack_suite(cfg) -> list[privacy.AttackResult]:
    atk = cfg["attack"]
    d, k, r = atk["d"], atk["k"], atk["rank"]
    results = []
    for seed_idx in range(atk["seeds"]):
        seed = cfg["seed"] + 7919 * seed_idx
        adapter = privacy.attack_adapter(d, k, r, seed=np.random.SeedSequence([seed, 1]))
        # warm the factors so every surface has informative gradients
        rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
        adapter.B += 0.5 * rng.standard_normal(adapter.B.shape)
        adapter.C += 0.1 * rng.standard_normal(adapter.C.shape)
        for batch_size in atk["batch_sizes"]:
            X = rng.standard_normal((batch_size, d))
            y = rng.integers(0, k, size=batch_size)
            for surface in atk["surfaces"]:
                target = privacy.surface_gradients(adapter, X, y, surface)
                result = privacy.dlg_attack(
                    adapter,
                    target,
                    (batch_size, d),
                    y,
                    privacy.AttackConfig(
                        surface=surface,
                        steps=atk["steps"],
                        attack_lr=atk["attack_lr"],
                        restarts=atk["restarts"],
                        seed=seed,
                    ),
                    true_X=X,
                )
                results.append(result)
    return results


def cmd_attack(args) -> int:
    cfg = _load_effective(args)
    out = _out_dir(cfg)
    results = run_attack_suite(cfg)
    rows = privacy.attack_report(results, seeds=cfg["attack"]["seeds"])
    privacy.write_report_csv(rows, out / "attack.csv")
    for row in rows:
        print(
            f"{row['surface']:<10} batch={row['batch_size']:<3} "
            f"mse={row['mean_mse']:.4f}±{row['std_mse']:.4f} "
            f"cos={row['mean_cosine']:.4f}"
        )
    return 0


def cmd_partition_dump(args) -> int:
    cfg = _load_effective(args)
    out = _out_dir(cfg)
    _, shards = _partition_for(cfg)
    dump = {str(cid): shard.tolist() for cid, shard in enumerate(shards)}
    with open(out / "partition.json", "w", encoding="utf-8") as fh:
        json.dump(dump, fh, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out / 'partition.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="celora")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field (repeatable, dotted paths)")
        p.add_argument("--out-dir", default=None)
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("run", help="run one federated experiment")
    add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("comm-table", help="per-method communication accounting")
    add_common(p)
    p.set_defaults(func=cmd_comm_table)

    p = sub.add_parser("sweep", help="run the experiment across one axis")
    add_common(p)
    p.add_argument("--axis", required=True, choices=sorted(_SWEEP_KEYS))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("attack", help="gradient-inversion comparison across surfaces")
    add_common(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("partition-dump", help="dump the client index partition")
    add_common(p)
    p.set_defaults(func=cmd_partition_dump)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CELORA_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CeloraError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
