"""Command-line front end.

Subcommands:
  run              run one experiment, write metrics.csv and summary.json
  ablation         run the directed/undirected x partial/full grid plus local
  consensus-demo   pure mixing on random vectors, spread trace and oracle check
  check-topology   verify windowed strong connectivity of the schedule
  partition-stats  client-by-class count matrix and entropy summary

Exit codes: 0 success, 2 configuration error, 3 runtime or divergence error,
4 assumption-check failure.
"""

from __future__ import annotations

import argparse
import csv
import importlib.resources
import io
import json
import sys
from dataclasses import replace

import jsonschema
import numpy as np

from . import consensus, data, engine, topology
from .errors import ConfigurationError, DivergenceError, ProtocolDegeneracyError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_ASSUMPTION = 4


def _schema() -> dict:
    text = importlib.resources.files("dfedsim").joinpath("config.schema.json").read_text()
    return json.loads(text)


def load_config(path: str, overrides: list[str], seed: int | None) -> engine.ExperimentConfig:
    """Parse, override and validate a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}")
    for item in overrides:
        key, _, value = item.partition("=")
        if not _ or not key:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        _apply_override(raw, key.strip(), value.strip())
    if seed is not None:
        raw["seed"] = seed
    try:
        jsonschema.validate(raw, _schema())
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"config key {where}: {exc.message}")
    return engine.config_from_dict(raw)


def _apply_override(raw: dict, dotted: str, value: str) -> None:
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    node = raw
    parts = dotted.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            node[part] = node.get(part) if isinstance(node.get(part), dict) else {}
        node = node[part]
    node[parts[-1]] = parsed


def cmd_run(args) -> int:
    config = load_config(args.config, args.set or [], args.seed)
    metrics, summary = engine.run_experiment(config)
    engine.write_metrics_csv(f"{args.out}/metrics.csv", metrics, config.algorithm)
    engine.write_summary_json(f"{args.out}/summary.json", summary)
    final = metrics[-1]
    print(f"{config.algorithm}: {config.rounds} rounds, "
          f"final accuracy {final.mean_acc:.4f} +/- {final.std_acc:.4f}")
    print(f"wrote {args.out}/metrics.csv and {args.out}/summary.json")
    return EXIT_OK


def ablation_grid(config: engine.ExperimentConfig) -> dict[str, engine.ExperimentConfig]:
    """Derive the five per-algorithm configs sharing seeds and shards.

    Directed algorithms keep the configured directed topology; undirected ones
    swap in a symmetrized random graph with doubly stochastic weights. The
    undirected pick count is halved because symmetrization doubles it, keeping
    the per-round communication budget comparable across the grid.
    """
    top = config.topology
    if top.kind == topology.RANDOM_DIRECTED:
        undirected_top = replace(top, kind=topology.RANDOM_UNDIRECTED,
                                 degree=max(1, top.out_degree // 2), out_degree=None)
    elif top.kind == topology.COMPLETE:
        undirected_top = top
    else:
        raise ConfigurationError(
            "ablation needs a random_directed or complete topology to derive "
            f"the undirected twin, got {top.kind!r}"
        )
    grid = {}
    for algo in engine.ALGORITHMS:
        if algo in engine.DIRECTED:
            grid[algo] = replace(config, algorithm=algo)
        elif algo == "local":
            grid[algo] = replace(config, algorithm=algo)
        else:
            grid[algo] = replace(config, algorithm=algo, topology=undirected_top,
                                 scheme=topology.DOUBLY)
    return grid


def run_ablation(config: engine.ExperimentConfig, n_seeds: int) -> list[dict]:
    rows = []
    for offset in range(n_seeds):
        seeded = replace(config, seed=config.seed + offset)
        for algo, algo_config in ablation_grid(seeded).items():
            metrics, _ = engine.run_experiment(algo_config)
            final = metrics[-1]
            rows.append({
                "algo": algo,
                "seed": seeded.seed,
                "mean_acc": final.mean_acc,
                "std_acc": final.std_acc,
                "mean_loss": final.loss,
            })
    return rows


def cmd_ablation(args) -> int:
    config = load_config(args.config, args.set or [], args.seed)
    rows = run_ablation(config, args.seeds)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["algo", "seed", "mean_acc", "std_acc", "mean_loss"])
    writer.writeheader()
    for row in rows:
        writer.writerow({**row,
                         "mean_acc": repr(row["mean_acc"]),
                         "std_acc": repr(row["std_acc"]),
                         "mean_loss": repr(row["mean_loss"])})
    engine.write_atomic(f"{args.out}/ablation.csv", buf.getvalue())
    by_algo: dict[str, list[float]] = {}
    for row in rows:
        by_algo.setdefault(row["algo"], []).append(row["mean_acc"])
    print(f"{'algorithm':<12} mean_acc over {args.seeds} seed(s)")
    for algo, accs in sorted(by_algo.items(), key=lambda kv: -np.mean(kv[1])):
        print(f"{algo:<12} {np.mean(accs):.4f}")
    print(f"wrote {args.out}/ablation.csv")
    return EXIT_OK


def cmd_consensus_demo(args) -> int:
    schedule = topology.TopologySchedule(
        m=args.clients, kind=args.topology, seed=args.seed,
        out_degree=args.out_degree if args.topology == topology.RANDOM_DIRECTED else None,
        degree=args.out_degree if args.topology == topology.RANDOM_UNDIRECTED else None,
        window=args.window,
    )
    rng = np.random.default_rng(args.seed)
    initial = [rng.uniform(-1.0, 1.0, size=args.dim) for _ in range(args.clients)]
    cells = [consensus.PushSumCell.fresh(u) for u in initial]
    matrices = []
    for t in range(args.rounds):
        matrix = topology.build_mixing_matrix(
            topology.generate_round_topology(schedule, t), args.scheme
        )
        matrices.append(matrix)
        cells = consensus.mix_step(cells, matrix)
        if t % max(1, args.rounds // 10) == 0 or t == args.rounds - 1:
            print(f"round {t:4d}  spread {consensus.spread(cells):.3e}")
    oracle = consensus.consensus_oracle(matrices, initial)
    deviation = max(
        float(np.max(np.abs(cells[i].z - oracle[i]))) for i in range(args.clients)
    )
    print(f"final deviation from oracle: {deviation:.3e}")
    print("push-sum weights:", " ".join(f"{c.mu:.6f}" for c in cells))
    return EXIT_OK


def cmd_check_topology(args) -> int:
    config = load_config(args.config, args.set or [], args.seed)
    schedule = engine._build_schedule(config)
    failures = 0
    for start in range(args.windows):
        ok = topology.check_window_connectivity(schedule, start)
        print(f"window [{start}, {start + schedule.window}): {'pass' if ok else 'FAIL'}")
        failures += 0 if ok else 1
    if failures:
        print(f"{failures}/{args.windows} windows are not strongly connected")
        return EXIT_ASSUMPTION
    print(f"all {args.windows} windows strongly connected (window={schedule.window})")
    return EXIT_OK


def cmd_partition_stats(args) -> int:
    config = load_config(args.config, args.set or [], args.seed)
    pool, assignment, _ = engine._build_shards(config)
    hist = data.label_histogram(pool, assignment)
    entropies = np.array([data.label_entropy(row) for row in hist])
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["client"] + [f"class_{k}" for k in range(pool.n_classes)] + ["entropy"])
    for i, row in enumerate(hist):
        writer.writerow([i] + [int(x) for x in row] + [repr(float(entropies[i]))])
    engine.write_atomic(f"{args.out}/partition.csv", buf.getvalue())
    print(f"clients: {len(assignment)}, classes: {pool.n_classes}, samples: {pool.n}")
    print(f"label entropy per client: mean {entropies.mean():.4f}, "
          f"min {entropies.min():.4f}, max {entropies.max():.4f}")
    print(f"wrote {args.out}/partition.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dfedsim", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to a JSON config file")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted-key config override, repeatable")

    p_run = sub.add_parser("run", help="run one experiment")
    common(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_abl = sub.add_parser("ablation", help="run the module-augmentation grid")
    common(p_abl)
    p_abl.add_argument("--seeds", type=int, default=3, help="number of seeds")
    p_abl.set_defaults(fn=cmd_ablation)

    p_demo = sub.add_parser("consensus-demo", help="pure mixing demonstration")
    p_demo.add_argument("--clients", type=int, default=16)
    p_demo.add_argument("--scheme", default=topology.PUSH_COLUMN, choices=topology.SCHEMES)
    p_demo.add_argument("--topology", default=topology.RANDOM_DIRECTED, choices=topology.KINDS)
    p_demo.add_argument("--rounds", type=int, default=200)
    p_demo.add_argument("--out-degree", type=int, default=4)
    p_demo.add_argument("--dim", type=int, default=8)
    p_demo.add_argument("--window", type=int, default=5)
    p_demo.add_argument("--seed", type=int, default=0)
    p_demo.set_defaults(fn=cmd_consensus_demo)

    p_check = sub.add_parser("check-topology", help="verify windowed connectivity")
    common(p_check)
    p_check.add_argument("--windows", type=int, default=20, help="window starts to test")
    p_check.set_defaults(fn=cmd_check_topology)

    p_part = sub.add_parser("partition-stats", help="client-by-class counts and entropy")
    common(p_part)
    p_part.set_defaults(fn=cmd_partition_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, ProtocolDegeneracyError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
