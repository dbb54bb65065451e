import json
import os
from pathlib import Path

import numpy as np
import pytest

from dfedsim import cli, engine

REPO_ROOT = Path(__file__).resolve().parents[1]
QUICKSTART = str(REPO_ROOT / "configs" / "quickstart.json")


def write_config(tmp_path, **overrides):
    with open(QUICKSTART) as fh:
        raw = json.load(fh)
    for key, value in overrides.items():
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return str(path)


def small_config(tmp_path, **overrides):
    defaults = dict(
        clients=6, rounds=4,
        **{"pool.classes": 4, "pool.dim": 8, "pool.per_class": 40,
           "model.layer_dims": [8, 12, 4], "plan.k_u": 2, "plan.k_v": 1,
           "plan.batch_size": 8, "topology.out_degree": 2},
    )
    defaults.update(overrides)
    return write_config(tmp_path, **defaults)


# --- run -----------------------------------------------------------------------

def test_run_writes_metrics_and_summary(tmp_path):
    config = small_config(tmp_path)
    out = tmp_path / "results"
    assert cli.main(["run", "--config", config, "--out", str(out)]) == 0
    assert (out / "metrics.csv").exists()
    assert (out / "summary.json").exists()
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header == "round,algo,mean_acc,std_acc,delta_u,delta_v,loss,spread,lr_u,lr_v"


def test_zero_shared_lr_freezes_accuracy_for_local_runs(tmp_path):
    config = small_config(tmp_path)
    out = tmp_path / "results"
    code = cli.main([
        "run", "--config", config, "--out", str(out),
        "--set", "algorithm=local", "--set", "plan.eta_u=0",
    ])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    rows = (out / "metrics.csv").read_text().strip().splitlines()[1:]
    first_acc = float(rows[0].split(",")[2])
    assert summary["final"]["mean_acc"] == first_acc


def test_unknown_key_is_rejected_with_its_name(tmp_path, capsys):
    config = small_config(tmp_path)
    code = cli.main(["run", "--config", config, "--out", str(tmp_path / "o"),
                     "--set", "plan.learning_rate=0.5"])
    assert code == 2
    assert "learning_rate" in capsys.readouterr().err


def test_missing_config_file_is_a_config_error(tmp_path, capsys):
    code = cli.main(["run", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path)])
    assert code == 2
    assert "not found" in capsys.readouterr().err


def test_schema_violation_is_a_config_error(tmp_path, capsys):
    config = small_config(tmp_path)
    code = cli.main(["run", "--config", config, "--out", str(tmp_path / "o"),
                     "--set", "algorithm=gradient_teleport"])
    assert code == 2
    assert "algorithm" in capsys.readouterr().err


def test_divergent_run_exits_with_runtime_code(tmp_path, capsys):
    config = small_config(tmp_path, **{"plan.eta_u": 1e300, "rounds": 3})
    code = cli.main(["run", "--config", config, "--out", str(tmp_path / "o")])
    assert code == 3
    assert "non-finite" in capsys.readouterr().err


def test_seed_flag_overrides_config_seed(tmp_path):
    config = small_config(tmp_path)
    out_a, out_b, out_c = (tmp_path / x for x in ("a", "b", "c"))
    cli.main(["run", "--config", config, "--out", str(out_a), "--seed", "123"])
    cli.main(["run", "--config", config, "--out", str(out_b), "--seed", "123"])
    cli.main(["run", "--config", config, "--out", str(out_c), "--seed", "124"])
    csv_a = (out_a / "metrics.csv").read_text()
    assert csv_a == (out_b / "metrics.csv").read_text()
    assert csv_a != (out_c / "metrics.csv").read_text()


def test_summary_config_echo_reparses_identically(tmp_path):
    config_path = small_config(tmp_path)
    out = tmp_path / "results"
    cli.main(["run", "--config", config_path, "--out", str(out)])
    summary = json.loads((out / "summary.json").read_text())
    loaded = cli.load_config(config_path, [], None)
    rebuilt = engine.config_from_dict(summary["config"])
    assert rebuilt == loaded


def test_no_temp_files_left_behind(tmp_path):
    config = small_config(tmp_path)
    out = tmp_path / "results"
    cli.main(["run", "--config", config, "--out", str(out)])
    leftovers = [p for p in out.iterdir() if p.name.startswith(".tmp-")]
    assert leftovers == []


def test_failed_write_preserves_existing_file(tmp_path, monkeypatch):
    target = tmp_path / "metrics.csv"
    target.write_text("old content")

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        engine.write_atomic(str(target), "new content")
    monkeypatch.undo()
    assert target.read_text() == "old content"
    assert [p for p in tmp_path.iterdir() if p.name.startswith(".tmp-")] == []


# --- ablation ------------------------------------------------------------------

def test_ablation_writes_one_row_per_algorithm_per_seed(tmp_path):
    config = small_config(tmp_path, rounds=2)
    out = tmp_path / "ab"
    assert cli.main(["ablation", "--config", config, "--out", str(out),
                     "--seeds", "2"]) == 0
    rows = (out / "ablation.csv").read_text().strip().splitlines()
    assert rows[0] == "algo,seed,mean_acc,std_acc,mean_loss"
    assert len(rows) == 1 + 5 * 2
    algos = sorted(set(r.split(",")[0] for r in rows[1:]))
    assert algos == ["dfedavgm", "dfedavgm_p", "dfedpgp", "local", "osgp"]


def test_ablation_is_reproducible(tmp_path):
    config = small_config(tmp_path, rounds=2)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    cli.main(["ablation", "--config", config, "--out", str(out_a), "--seeds", "1"])
    cli.main(["ablation", "--config", config, "--out", str(out_b), "--seeds", "1"])
    assert (out_a / "ablation.csv").read_text() == (out_b / "ablation.csv").read_text()


def test_ablation_requires_a_convertible_topology(tmp_path, capsys):
    config = small_config(tmp_path, **{"topology.kind": "ring"})
    assert cli.main(["ablation", "--config", config, "--out", str(tmp_path / "o"),
                     "--seeds", "1"]) == 2


# --- diagnostics -----------------------------------------------------------------

def test_consensus_demo_recovers_average_on_complete_graph(capsys):
    code = cli.main(["consensus-demo", "--clients", "8", "--scheme", "push_column",
                     "--topology", "complete", "--rounds", "120"])
    assert code == 0
    output = capsys.readouterr().out
    deviation = float(output.split("final deviation from oracle:")[1].split()[0])
    assert deviation < 1e-9


def test_consensus_demo_row_scheme_keeps_unit_weights(capsys):
    code = cli.main(["consensus-demo", "--clients", "6", "--scheme", "pull_row",
                     "--topology", "complete", "--rounds", "80"])
    assert code == 0
    output = capsys.readouterr().out
    weights_line = output.strip().splitlines()[-1]
    values = [float(x) for x in weights_line.split(":")[1].split()]
    assert values == [1.0] * 6
    spread_values = [float(line.split("spread")[1]) for line in output.splitlines()
                     if "spread" in line]
    assert spread_values[-1] < 1e-9


def test_check_topology_passes_on_a_ring(tmp_path, capsys):
    config = small_config(tmp_path, **{"topology.kind": "ring", "topology.window": 1})
    assert cli.main(["check-topology", "--config", config, "--windows", "5"]) == 0
    out = capsys.readouterr().out
    assert out.count("pass") == 5


def test_check_topology_fails_without_edges(tmp_path, capsys):
    config = small_config(tmp_path, **{"topology.out_degree": 0})
    assert cli.main(["check-topology", "--config", config, "--windows", "4"]) == 4
    assert capsys.readouterr().out.count("FAIL") == 4


def test_partition_stats_matches_pathological_budget(tmp_path):
    config = small_config(
        tmp_path,
        **{"partition.kind": "pathological", "partition.classes_per_client": 2,
           "partition.alpha": None},
    )
    # drop the now-null alpha key
    raw = json.loads(Path(config).read_text())
    raw["partition"].pop("alpha")
    Path(config).write_text(json.dumps(raw))
    out = tmp_path / "stats"
    assert cli.main(["partition-stats", "--config", config, "--out", str(out)]) == 0
    rows = (out / "partition.csv").read_text().strip().splitlines()
    header = rows[0].split(",")
    assert header[0] == "client" and header[-1] == "entropy"
    for row in rows[1:]:
        counts = [int(x) for x in row.split(",")[1:-1]]
        assert sum(1 for x in counts if x > 0) == 2


def test_partition_stats_row_sums_match_shard_sizes(tmp_path):
    config_path = small_config(tmp_path)
    out = tmp_path / "stats"
    cli.main(["partition-stats", "--config", config_path, "--out", str(out)])
    rows = (out / "partition.csv").read_text().strip().splitlines()[1:]
    config = cli.load_config(config_path, [], None)
    _, assignment, _ = engine._build_shards(config)
    for row, owned in zip(rows, assignment):
        counts = [int(x) for x in row.split(",")[1:-1]]
        assert sum(counts) == owned.size
