"""Experiment orchestration: seeding, scheduling, metrics and artifacts.

run_experiment is a pure function of its config: the master seed fans out
into independent streams for pool generation, partitioning, shard splits,
parameter init, heterogeneity assignment, topology and minibatches, so two
runs with the same config produce bitwise-identical metric streams whether
clients are updated sequentially or by a thread pool.
"""

from __future__ import annotations

import json
import os
import tempfile
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import algorithms, data, model
from . import topology as topo
from .algorithms import ClientState, LocalPlan
from .consensus import spread
from .errors import ConfigurationError
from .model import ModelSpec
from .rng import derive_seed
from .topology import TopologySchedule

ALGORITHMS = ("dfedpgp", "osgp", "dfedavgm", "dfedavgm_p", "local")
PERSONALIZED = ("dfedpgp", "dfedavgm_p")
DIRECTED = ("dfedpgp", "osgp")

METRICS_COLUMNS = (
    "round", "algo", "mean_acc", "std_acc", "delta_u", "delta_v",
    "loss", "spread", "lr_u", "lr_v",
)


@dataclass(frozen=True)
class PoolConfig:
    classes: int = 10
    dim: int = 32
    per_class: int = 60
    radius: float = 4.0
    noise: float = 2.5


@dataclass(frozen=True)
class TopologyConfig:
    kind: str = topo.RANDOM_DIRECTED
    out_degree: int | None = 4
    degree: int | None = None
    window: int = 5
    path: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; see config.schema.json for the file format."""

    algorithm: str = "dfedpgp"
    clients: int = 20
    rounds: int = 100
    seed: int = 0
    model: ModelSpec = field(default_factory=lambda: ModelSpec((32, 64, 10), weight_decay=5e-4))
    plan: LocalPlan = field(
        default_factory=lambda: LocalPlan(k_v=1, k_u=5, eta_v=0.02, eta_u=0.1, batch_size=8)
    )
    pool: PoolConfig = field(default_factory=PoolConfig)
    partition: data.PartitionSpec = field(
        default_factory=lambda: data.PartitionSpec(kind="dirichlet", alpha=0.3)
    )
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    scheme: str = topo.PUSH_COLUMN
    lr_decay: float = 0.99
    heterogeneity: tuple[tuple[float, int], ...] = ((1.0, 1),)
    metric_cadence: int | None = None
    execution: str = "sequential"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        if self.clients < 1 or self.rounds < 1:
            raise ConfigurationError("clients and rounds must be >= 1")
        if not 0 < self.lr_decay <= 1:
            raise ConfigurationError("lr_decay must be in (0, 1]")
        if self.execution not in ("sequential", "parallel"):
            raise ConfigurationError(f"unknown execution mode {self.execution!r}")
        total = sum(f for f, _ in self.heterogeneity)
        if abs(total - 1.0) > 1e-9:
            raise ConfigurationError(f"heterogeneity fractions sum to {total}, not 1")
        if any(mult < 1 for _, mult in self.heterogeneity):
            raise ConfigurationError("epoch multipliers must be >= 1")
        if self.metric_cadence is not None and self.metric_cadence < 1:
            raise ConfigurationError("metric cadence must be >= 1")

    @property
    def effective_cadence(self) -> int:
        if self.metric_cadence is not None:
            return self.metric_cadence
        return 1 if self.rounds <= 200 else 5

    def effective_model(self) -> ModelSpec:
        """Full-model algorithms fold every layer into the shared part."""
        return self.model if self.algorithm in PERSONALIZED else self.model.fully_shared()


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    mean_acc: float
    std_acc: float
    delta_u: float
    delta_v: float
    loss: float
    spread: float
    lr_u: float
    lr_v: float
    wall_ms: float


def assign_heterogeneity(
    m: int, groups: tuple[tuple[float, int], ...], seed: int
) -> np.ndarray:
    """Shuffle clients and slice them into groups by largest-remainder counts;
    returns the per-client epoch multiplier."""
    fractions = np.array([f for f, _ in groups], dtype=np.float64)
    if abs(fractions.sum() - 1.0) > 1e-9:
        raise ConfigurationError("heterogeneity fractions must sum to 1")
    raw = fractions * m
    counts = np.floor(raw).astype(int)
    remainder = m - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    for g in order[:remainder]:
        counts[g] += 1
    rng = np.random.default_rng(seed)
    shuffled = rng.permutation(m)
    multipliers = np.ones(m, dtype=np.int64)
    start = 0
    for (_, mult), count in zip(groups, counts):
        for client in shuffled[start: start + count]:
            multipliers[client] = mult
        start += count
    return multipliers


def _full_shard_grads(spec, u, v, shard):
    return model.loss_and_grads(spec, u, v, shard)


def compute_delta_u(
    states: list[ClientState], spec: ModelSpec, shards, executor=None
) -> float:
    """Squared norm of the average shared-model gradient at the mean of the
    biased u vectors, each client contributing its full train shard."""
    m = len(states)
    u_bar = np.mean([s.cell.u for s in states], axis=0)

    def one(i: int) -> np.ndarray:
        return _full_shard_grads(spec, u_bar, states[i].v, shards.train[i])[1]

    grads = algorithms._map_clients(one, m, executor)
    mean_grad = np.zeros_like(u_bar)
    for g in grads:  # fixed-order reduction
        mean_grad += g
    mean_grad /= m
    return float(mean_grad @ mean_grad)


def compute_delta_v(
    states: list[ClientState], spec: ModelSpec, shards, executor=None
) -> float:
    """Mean squared norm of per-client personal gradients, each evaluated at
    the client's own de-biased shared model over its full train shard."""
    m = len(states)
    if spec.personal_dim == 0:
        return 0.0

    def one(i: int) -> float:
        g_v = _full_shard_grads(spec, states[i].cell.z, states[i].v, shards.train[i])[2]
        return float(g_v @ g_v)

    norms = algorithms._map_clients(one, m, executor)
    total = 0.0
    for x in norms:
        total += x
    return total / m


def rounds_to_target(metrics: list[RoundMetrics], target: float) -> int | None:
    """First recorded round whose mean accuracy reaches the target."""
    for entry in metrics:
        if entry.mean_acc >= target:
            return entry.round
    return None


def _decayed_plans(plans: list[LocalPlan], decay: float, round_index: int) -> list[LocalPlan]:
    factor = decay ** round_index
    return [replace(p, eta_u=p.eta_u * factor, eta_v=p.eta_v * factor) for p in plans]


def _build_states(config: ExperimentConfig, spec: ModelSpec) -> list[ClientState]:
    # all clients start from one common model, so early gossip averages
    # coherent parameters rather than unrelated random draws
    u, v = model.init_params(spec, np.random.SeedSequence(derive_seed(config.seed, "init")))
    return [
        ClientState.fresh(u.copy(), v.copy(), batch_seed=derive_seed(config.seed, "batch", i))
        for i in range(config.clients)
    ]


def _build_shards(config: ExperimentConfig):
    pool = data.generate_pool(
        n_classes=config.pool.classes,
        dim=config.pool.dim,
        per_class=config.pool.per_class,
        radius=config.pool.radius,
        noise=config.pool.noise,
        seed=derive_seed(config.seed, "pool"),
    )
    part = config.partition
    if part.kind == "dirichlet":
        assignment = data.dirichlet_partition(
            pool, config.clients, part.alpha, derive_seed(config.seed, "partition")
        )
    else:
        assignment = data.pathological_partition(
            pool, config.clients, part.classes_per_client, derive_seed(config.seed, "partition")
        )
    shards = data.split_shards(
        pool, assignment, part.test_fraction, derive_seed(config.seed, "split")
    )
    return pool, assignment, shards


def _build_schedule(config: ExperimentConfig) -> TopologySchedule:
    top = config.topology
    if top.kind == topo.FROM_FILE:
        sched = topo.schedule_from_file(top.path, config.clients, top.window)
        return replace(sched, seed=derive_seed(config.seed, "topology"))
    return TopologySchedule(
        m=config.clients,
        kind=top.kind,
        seed=derive_seed(config.seed, "topology"),
        window=top.window,
        out_degree=top.out_degree if top.kind == topo.RANDOM_DIRECTED else None,
        degree=top.degree if top.kind == topo.RANDOM_UNDIRECTED else None,
    )


def _personalized_accuracies(spec, states, shards, executor=None) -> np.ndarray:
    """Per-client test accuracy with each client's own de-biased model.

    Clients with an empty test shard are skipped (possible only for
    single-sample shards).
    """
    idx = [i for i in range(len(states)) if shards.test[i] is not None]

    def one(i: int) -> float:
        return model.evaluate(spec, states[i].cell.z, states[i].v, shards.test[i])[0]

    return np.array(algorithms._map_clients(lambda k: one(idx[k]), len(idx), executor))


def _round_step(config, spec, states, plans, shards, schedule, round_index, executor):
    algo = config.algorithm
    if algo == "dfedpgp":
        return algorithms.dfedpgp_round(
            states, plans, spec, shards.train, schedule, config.scheme, round_index, executor
        )
    if algo == "osgp":
        return algorithms.osgp_round(
            states, plans, spec, shards.train, schedule, config.scheme, round_index, executor
        )
    if algo == "dfedavgm":
        return algorithms.dfedavgm_round(
            states, plans, spec, shards.train, schedule, round_index, executor
        )
    if algo == "dfedavgm_p":
        return algorithms.dfedavgm_p_round(
            states, plans, spec, shards.train, schedule, round_index, executor
        )
    return algorithms.local_round(states, plans, spec, shards.train, round_index, executor)


def run_experiment(config: ExperimentConfig) -> tuple[list[RoundMetrics], dict]:
    """Run the configured algorithm for `rounds` rounds.

    Returns the metric stream (on the metric cadence, always including the
    final round) and a JSON-ready summary with the echoed config, per-client
    accuracies and a rounds-to-target table.
    """
    spec = config.effective_model()
    _, _, shards = _build_shards(config)
    schedule = _build_schedule(config)
    states = _build_states(config, spec)

    base_plan = config.plan
    multipliers = assign_heterogeneity(
        config.clients, config.heterogeneity, derive_seed(config.seed, "heterogeneity")
    )
    plans = [replace(base_plan, epoch_multiplier=int(mult) * base_plan.epoch_multiplier)
             for mult in multipliers]

    if config.algorithm != "local":
        for start in range(3):
            if not topo.check_window_connectivity(schedule, start):
                warnings.warn(
                    f"communication schedule window starting at round {start} is not "
                    f"strongly connected (window={schedule.window})",
                    stacklevel=2,
                )
                break

    executor = None
    if config.execution == "parallel":
        executor = ThreadPoolExecutor(max_workers=min(8, config.clients))

    metrics: list[RoundMetrics] = []
    cadence = config.effective_cadence
    try:
        for t in range(config.rounds):
            started = time.perf_counter()
            round_plans = _decayed_plans(plans, config.lr_decay, t)
            states = _round_step(config, spec, states, round_plans, shards, schedule, t, executor)
            if t % cadence == 0 or t == config.rounds - 1:
                accs = _personalized_accuracies(spec, states, shards, executor)
                losses = [
                    _full_shard_grads(spec, s.cell.z, s.v, shards.train[i])[0]
                    for i, s in enumerate(states)
                ]
                metrics.append(RoundMetrics(
                    round=t,
                    mean_acc=float(accs.mean()),
                    std_acc=float(accs.std()),
                    delta_u=compute_delta_u(states, spec, shards, executor),
                    delta_v=compute_delta_v(states, spec, shards, executor),
                    loss=float(np.mean(losses)),
                    spread=spread([s.cell for s in states]),
                    lr_u=round_plans[0].eta_u,
                    lr_v=round_plans[0].eta_v,
                    wall_ms=(time.perf_counter() - started) * 1e3,
                ))
    finally:
        if executor is not None:
            executor.shutdown()

    final = metrics[-1]
    per_client = _personalized_accuracies(spec, states, shards)
    summary = {
        "config": config_to_dict(config),
        "final": {
            "round": final.round,
            "mean_acc": final.mean_acc,
            "std_acc": final.std_acc,
            "per_client_acc": [float(a) for a in per_client],
        },
        "rounds_to_target": {
            f"{target:.1f}": rounds_to_target(metrics, target)
            for target in (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
        },
    }
    return metrics, summary


def metrics_to_csv(metrics: list[RoundMetrics], algo: str) -> str:
    """Render the fixed-schema metrics table (wall time deliberately omitted)."""
    lines = [",".join(METRICS_COLUMNS)]
    for entry in metrics:
        lines.append(",".join([
            str(entry.round), algo,
            repr(entry.mean_acc), repr(entry.std_acc),
            repr(entry.delta_u), repr(entry.delta_v),
            repr(entry.loss), repr(entry.spread),
            repr(entry.lr_u), repr(entry.lr_v),
        ]))
    return "\n".join(lines) + "\n"


def write_atomic(path: str, text: str) -> None:
    """Write via a sibling temp file plus rename, so readers never see a torn file."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_metrics_csv(path: str, metrics: list[RoundMetrics], algo: str) -> None:
    write_atomic(path, metrics_to_csv(metrics, algo))


def write_summary_json(path: str, summary: dict) -> None:
    write_atomic(path, json.dumps(summary, indent=2, sort_keys=True) + "\n")


# -- config serialization ----------------------------------------------------

def config_to_dict(config: ExperimentConfig) -> dict:
    out = {
        "algorithm": config.algorithm,
        "clients": config.clients,
        "rounds": config.rounds,
        "seed": config.seed,
        "scheme": config.scheme,
        "lr_decay": config.lr_decay,
        "heterogeneity": [[float(f), int(mult)] for f, mult in config.heterogeneity],
        "execution": config.execution,
        "model": {
            "layer_dims": list(config.model.layer_dims),
            "activation": config.model.activation,
            "split_layer": config.model.split_layer,
            "weight_decay": config.model.weight_decay,
            "loss": config.model.loss,
        },
        "plan": asdict(config.plan),
        "pool": asdict(config.pool),
        "partition": {k: v for k, v in asdict(config.partition).items() if v is not None},
        "topology": {k: v for k, v in asdict(config.topology).items() if v is not None},
    }
    if config.metric_cadence is not None:
        out["metric_cadence"] = config.metric_cadence
    return out


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a validated config from a parsed JSON document."""
    try:
        kwargs = dict(raw)
        if "model" in kwargs:
            spec = dict(kwargs["model"])
            spec["layer_dims"] = tuple(spec["layer_dims"])
            kwargs["model"] = ModelSpec(**spec)
        if "plan" in kwargs:
            kwargs["plan"] = LocalPlan(**kwargs["plan"])
        if "pool" in kwargs:
            kwargs["pool"] = PoolConfig(**kwargs["pool"])
        if "partition" in kwargs:
            kwargs["partition"] = data.PartitionSpec(**kwargs["partition"])
        if "topology" in kwargs:
            kwargs["topology"] = TopologyConfig(**kwargs["topology"])
        if "heterogeneity" in kwargs:
            kwargs["heterogeneity"] = tuple(
                (float(f), int(mult)) for f, mult in kwargs["heterogeneity"]
            )
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc
