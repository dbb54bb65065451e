"""One-round client procedures for the decentralized training algorithms.

Every round procedure is a pure function from the previous client states to
the next ones. The shared building blocks are the two local phases:

  * personal phase: momentum SGD on v with the round-start de-biased shared
    model frozen; the momentum buffer persists across rounds because v is
    never replaced by communication.
  * shared phase: momentum SGD on u where each gradient is evaluated at the
    current de-biased point z = u / mu with mu frozen for the whole phase;
    the buffer restarts from zero every round because the incoming mixed
    model is a new point.

Minibatches come from per-(client, round, phase) seed streams, so enabling
or disabling one phase never perturbs the draws of another.
"""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .consensus import PushSumCell, mix_step
from .errors import ConfigurationError, DivergenceError, SchemeError
from .model import Batch, ModelSpec, loss_and_grads
from .topology import (
    DOUBLY,
    MixingMatrix,
    TopologySchedule,
    build_mixing_matrix,
    generate_round_topology,
)

_PERSONAL_PHASE = 0
_SHARED_PHASE = 1


@dataclass(frozen=True)
class LocalPlan:
    """Per-round local-update budget and step sizes."""

    k_v: int = 1
    k_u: int = 1
    eta_v: float = 0.01
    eta_u: float = 0.1
    momentum: float = 0.9
    batch_size: int = 32
    epoch_multiplier: int = 1

    def __post_init__(self):
        if self.k_v < 1 or self.k_u < 1:
            raise ConfigurationError("local step counts must be >= 1")
        if self.eta_v < 0 or self.eta_u < 0:
            raise ConfigurationError("learning rates must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must be in [0, 1)")
        if self.batch_size < 1 or self.epoch_multiplier < 1:
            raise ConfigurationError("batch size and epoch multiplier must be >= 1")


@dataclass(frozen=True)
class ClientState:
    """One client's full state between rounds."""

    cell: PushSumCell          # shared parameters u, push-sum weight mu, z = u/mu
    v: np.ndarray              # personal parameters
    momentum_u: np.ndarray     # zeroed at every round start
    momentum_v: np.ndarray     # persists across rounds
    batch_seed: int            # root of this client's minibatch streams

    @classmethod
    def fresh(cls, u: np.ndarray, v: np.ndarray, batch_seed: int) -> "ClientState":
        return cls(
            cell=PushSumCell.fresh(u),
            v=np.asarray(v, dtype=np.float64),
            momentum_u=np.zeros_like(u),
            momentum_v=np.zeros_like(v),
            batch_seed=batch_seed,
        )


def _phase_rng(state: ClientState, round_index: int, phase: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((state.batch_seed, round_index, phase))
    )


def _draw(rng: np.random.Generator, shard: Batch, batch_size: int) -> Batch:
    idx = rng.integers(0, shard.n, size=batch_size)
    return Batch(shard.features[idx], shard.labels[idx])


def local_update_v(
    state: ClientState,
    plan: LocalPlan,
    spec: ModelSpec,
    shard: Batch,
    round_index: int,
) -> tuple[np.ndarray, np.ndarray]:
    """k_v momentum-SGD steps on v, every gradient taken at the frozen
    round-start de-biased shared model. Returns (v_next, momentum_next)."""
    if state.v.size == 0:
        return state.v, state.momentum_v
    z0 = state.cell.z
    v = state.v.copy()
    buf = state.momentum_v.copy()
    rng = _phase_rng(state, round_index, _PERSONAL_PHASE)
    for _ in range(plan.k_v):
        batch = _draw(rng, shard, plan.batch_size)
        _, _, g_v = loss_and_grads(spec, z0, v, batch)
        buf = plan.momentum * buf + g_v
        v = v - plan.eta_v * buf
    return v, buf


def local_update_u(
    state: ClientState,
    plan: LocalPlan,
    spec: ModelSpec,
    shard: Batch,
    v_next: np.ndarray,
    round_index: int,
) -> tuple[np.ndarray, np.ndarray]:
    """k_u * epoch_multiplier momentum-SGD steps on u with mu frozen.

    Each gradient is evaluated at the running de-biased point z = u / mu and
    applied to the biased vector u; z is refreshed after every step.
    Returns (u_next, z_next).
    """
    mu = state.cell.mu
    u = state.cell.u.copy()
    z = state.cell.z
    buf = np.zeros_like(u)
    rng = _phase_rng(state, round_index, _SHARED_PHASE)
    for _ in range(plan.k_u * plan.epoch_multiplier):
        batch = _draw(rng, shard, plan.batch_size)
        _, g_u, _ = loss_and_grads(spec, z, v_next, batch)
        buf = plan.momentum * buf + g_u
        u = u - plan.eta_u * buf
        z = u / mu
    return u, z


def _as_plans(plan: LocalPlan | Sequence[LocalPlan], m: int) -> list[LocalPlan]:
    if isinstance(plan, LocalPlan):
        return [plan] * m
    plans = list(plan)
    if len(plans) != m:
        raise ConfigurationError(f"{len(plans)} plans for {m} clients")
    return plans


def _map_clients(fn: Callable[[int], object], m: int, executor: Executor | None) -> list:
    """Apply fn to every client index, in parallel when an executor is given.

    Results are collected in client order so sequential and parallel execution
    are interchangeable.
    """
    if executor is None:
        return [fn(i) for i in range(m)]
    return list(executor.map(fn, range(m)))


def _check_finite(client: int, round_index: int, *arrays: np.ndarray) -> None:
    for arr in arrays:
        if arr.size and not np.all(np.isfinite(arr)):
            raise DivergenceError(client=client, round_index=round_index)


def _guard(client: int, round_index: int, fn: Callable[[], object]):
    """Convert numeric blowups inside a client's local phase into a divergence
    error that names the client and round."""
    try:
        return fn()
    except FloatingPointError as exc:
        raise DivergenceError(client=client, round_index=round_index) from exc


def _round_matrix(schedule: TopologySchedule, scheme: str, round_index: int) -> MixingMatrix:
    return build_mixing_matrix(generate_round_topology(schedule, round_index), scheme)


def dfedpgp_round(
    states: list[ClientState],
    plan: LocalPlan | Sequence[LocalPlan],
    spec: ModelSpec,
    shards: Sequence[Batch],
    schedule: TopologySchedule,
    scheme: str,
    round_index: int,
    executor: Executor | None = None,
) -> list[ClientState]:
    """Alternating local update (v then u) followed by one push-sum mix.

    The transmitted pair is (u after the local phase, mu from the round
    start); the mixed weight de-biases the incoming model.
    """
    m = len(states)
    plans = _as_plans(plan, m)

    def train(i: int):
        v_next, buf_v = _guard(i, round_index, lambda: local_update_v(
            states[i], plans[i], spec, shards[i], round_index))
        _check_finite(i, round_index, v_next)
        u_half, _ = _guard(i, round_index, lambda: local_update_u(
            states[i], plans[i], spec, shards[i], v_next, round_index))
        _check_finite(i, round_index, u_half)
        return v_next, buf_v, u_half

    trained = _map_clients(train, m, executor)
    half_cells = [PushSumCell.of(u_half, states[i].cell.mu) for i, (_, _, u_half) in enumerate(trained)]
    mixed = mix_step(half_cells, _round_matrix(schedule, scheme, round_index))
    return [
        ClientState(
            cell=mixed[i],
            v=trained[i][0],
            momentum_u=np.zeros_like(mixed[i].u),
            momentum_v=trained[i][1],
            batch_seed=states[i].batch_seed,
        )
        for i in range(m)
    ]


def osgp_round(
    states: list[ClientState],
    plan: LocalPlan | Sequence[LocalPlan],
    spec: ModelSpec,
    shards: Sequence[Batch],
    schedule: TopologySchedule,
    scheme: str,
    round_index: int,
    executor: Executor | None = None,
) -> list[ClientState]:
    """Full-model stochastic gradient push: one shared phase, then push-sum."""
    _require_fully_shared(spec, "osgp")
    m = len(states)
    plans = _as_plans(plan, m)

    def train(i: int):
        u_half, _ = _guard(i, round_index, lambda: local_update_u(
            states[i], plans[i], spec, shards[i], states[i].v, round_index))
        _check_finite(i, round_index, u_half)
        return u_half

    halves = _map_clients(train, m, executor)
    half_cells = [PushSumCell.of(halves[i], states[i].cell.mu) for i in range(m)]
    mixed = mix_step(half_cells, _round_matrix(schedule, scheme, round_index))
    return [
        ClientState(
            cell=mixed[i],
            v=states[i].v,
            momentum_u=np.zeros_like(mixed[i].u),
            momentum_v=states[i].momentum_v,
            batch_seed=states[i].batch_seed,
        )
        for i in range(m)
    ]


def _gossip_then_train(
    states: list[ClientState],
    plans: list[LocalPlan],
    spec: ModelSpec,
    shards: Sequence[Batch],
    schedule: TopologySchedule,
    round_index: int,
    executor: Executor | None,
) -> list[ClientState]:
    """Symmetric-gossip round shape: average u first, then run local phases."""
    matrix = _round_matrix(schedule, DOUBLY, round_index)
    if matrix.scheme != DOUBLY:  # pragma: no cover - defensive
        raise SchemeError("symmetric gossip requires doubly-stochastic weights")
    mixed = mix_step([s.cell for s in states], matrix)
    seeded = [replace(states[i], cell=mixed[i]) for i in range(len(states))]

    def train(i: int):
        v_next, buf_v = _guard(i, round_index, lambda: local_update_v(
            seeded[i], plans[i], spec, shards[i], round_index))
        _check_finite(i, round_index, v_next)
        u_next, z_next = _guard(i, round_index, lambda: local_update_u(
            seeded[i], plans[i], spec, shards[i], v_next, round_index))
        _check_finite(i, round_index, u_next)
        return v_next, buf_v, u_next, z_next

    trained = _map_clients(train, len(states), executor)
    return [
        ClientState(
            cell=PushSumCell(u=trained[i][2], mu=mixed[i].mu, z=trained[i][3]),
            v=trained[i][0],
            momentum_u=np.zeros_like(trained[i][2]),
            momentum_v=trained[i][1],
            batch_seed=states[i].batch_seed,
        )
        for i in range(len(states))
    ]


def dfedavgm_round(
    states: list[ClientState],
    plan: LocalPlan | Sequence[LocalPlan],
    spec: ModelSpec,
    shards: Sequence[Batch],
    schedule: TopologySchedule,
    round_index: int,
    executor: Executor | None = None,
) -> list[ClientState]:
    """Undirected baseline: doubly-stochastic gossip of the full model, then
    local momentum SGD. The push-sum weight stays exactly 1 throughout."""
    _require_fully_shared(spec, "dfedavgm")
    return _gossip_then_train(states, _as_plans(plan, len(states)), spec, shards,
                              schedule, round_index, executor)


def dfedavgm_p_round(
    states: list[ClientState],
    plan: LocalPlan | Sequence[LocalPlan],
    spec: ModelSpec,
    shards: Sequence[Batch],
    schedule: TopologySchedule,
    round_index: int,
    executor: Executor | None = None,
) -> list[ClientState]:
    """Partially personalized undirected baseline: only u is gossiped; v is
    trained first against the freshly mixed shared model, exactly as in the
    directed algorithm's personal phase."""
    return _gossip_then_train(states, _as_plans(plan, len(states)), spec, shards,
                              schedule, round_index, executor)


def local_round(
    states: list[ClientState],
    plan: LocalPlan | Sequence[LocalPlan],
    spec: ModelSpec,
    shards: Sequence[Batch],
    round_index: int,
    executor: Executor | None = None,
) -> list[ClientState]:
    """No communication: each client runs local momentum SGD on its full model."""
    _require_fully_shared(spec, "local")
    m = len(states)
    plans = _as_plans(plan, m)

    def train(i: int):
        u_next, z_next = _guard(i, round_index, lambda: local_update_u(
            states[i], plans[i], spec, shards[i], states[i].v, round_index))
        _check_finite(i, round_index, u_next)
        return u_next, z_next

    trained = _map_clients(train, m, executor)
    return [
        ClientState(
            cell=PushSumCell(u=trained[i][0], mu=states[i].cell.mu, z=trained[i][1]),
            v=states[i].v,
            momentum_u=np.zeros_like(trained[i][0]),
            momentum_v=states[i].momentum_v,
            batch_seed=states[i].batch_seed,
        )
        for i in range(m)
    ]


def _require_fully_shared(spec: ModelSpec, name: str) -> None:
    if spec.personal_dim != 0:
        raise ConfigurationError(
            f"{name} trains the full model; use spec.fully_shared() (got personal_dim="
            f"{spec.personal_dim})"
        )
