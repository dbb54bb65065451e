"""Push-sum mixing engine.

Each client carries a value vector `u`, a positive weight `mu` and the
de-biased ratio `z = u / mu`. Under column-stochastic gossip the total mass
of (u, mu) is conserved and every z converges to the average of the initial
vectors; under row-stochastic gossip with unit initial weights mu stays 1
and z converges to a stationary-vector weighted combination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ProtocolDegeneracyError
from .topology import MixingMatrix, TopologySchedule, build_mixing_matrix, generate_round_topology

MU_FLOOR = 1e-12


@dataclass(frozen=True)
class PushSumCell:
    """One client's (u, mu, z) triple; z is kept equal to u / mu."""

    u: np.ndarray
    mu: float
    z: np.ndarray

    @classmethod
    def fresh(cls, u: np.ndarray) -> "PushSumCell":
        u = np.asarray(u, dtype=np.float64)
        return cls(u=u, mu=1.0, z=u / 1.0)

    @classmethod
    def of(cls, u: np.ndarray, mu: float) -> "PushSumCell":
        u = np.asarray(u, dtype=np.float64)
        return cls(u=u, mu=float(mu), z=u / mu)


def mix_step(
    cells: list[PushSumCell], matrix: MixingMatrix, mu_floor: float = MU_FLOOR
) -> list[PushSumCell]:
    """One synchronous gossip step: u' = W u, mu' = W mu, z' = u'/mu'.

    All reads come from the pre-step snapshot. The product is split into the
    off-diagonal part plus an explicit diagonal term; with complement-built
    diagonals this keeps exactly-row-stochastic rows summing to exactly 1.
    """
    m = matrix.m
    if len(cells) != m:
        raise ValueError(f"{len(cells)} cells for an m={m} matrix")
    weights = matrix.weights
    diag = np.diagonal(weights).copy()
    off = weights.copy()
    np.fill_diagonal(off, 0.0)

    u_all = np.stack([c.u for c in cells])          # m x d
    mu_all = np.array([c.mu for c in cells])        # m
    u_next = off @ u_all + diag[:, None] * u_all
    mu_next = off @ mu_all + diag * mu_all

    out = []
    for i in range(m):
        mu_i = float(mu_next[i])
        if mu_i < mu_floor:
            raise ProtocolDegeneracyError(client=i, weight=mu_i, floor=mu_floor)
        out.append(PushSumCell(u=u_next[i], mu=mu_i, z=u_next[i] / mu_i))
    return out


def run_consensus(
    initial: list[np.ndarray],
    schedule: TopologySchedule,
    scheme: str,
    rounds: int,
    mu_floor: float = MU_FLOOR,
) -> list[np.ndarray]:
    """Apply `rounds` mix steps with per-round matrices; returns the z vectors."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    cells = [PushSumCell.fresh(u) for u in initial]
    for t in range(rounds):
        matrix = build_mixing_matrix(generate_round_topology(schedule, t), scheme)
        cells = mix_step(cells, matrix, mu_floor=mu_floor)
    return [c.z for c in cells]


def spread(cells: list[PushSumCell]) -> float:
    """Largest coordinate-wise range of the de-biased vectors; 0 at consensus."""
    z = np.stack([c.z for c in cells])
    return float(np.max(z.max(axis=0) - z.min(axis=0)))


def _kahan_apply(weights: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Compensated-summation matrix action, one Kahan accumulator per output."""
    m = weights.shape[0]
    out = np.zeros_like(values)
    for i in range(m):
        acc = np.zeros(values.shape[1:], dtype=np.float64)
        comp = np.zeros_like(acc)
        for j in range(m):
            term = weights[i, j] * values[j] - comp
            total = acc + term
            comp = (total - acc) - term
            acc = total
        out[i] = acc
    return out


def consensus_oracle(
    matrices: list[MixingMatrix],
    initial: list[np.ndarray],
    initial_mu: list[float] | None = None,
) -> list[np.ndarray]:
    """Reference de-biased values after applying the given matrices in order.

    Uses compensated summation throughout so it is an independent check on
    mix_step rather than a re-run of it.
    """
    u = np.stack([np.asarray(x, dtype=np.float64) for x in initial])
    if u.ndim == 1:
        u = u[:, None]
    mu = np.ones(u.shape[0]) if initial_mu is None else np.asarray(initial_mu, dtype=np.float64)
    for matrix in matrices:
        u = _kahan_apply(matrix.weights, u)
        mu = _kahan_apply(matrix.weights, mu[:, None])[:, 0]
    z = u / mu[:, None]
    return [z[i] for i in range(z.shape[0])]


def power_limit(
    matrix: MixingMatrix,
    initial: list[np.ndarray],
    initial_mu: list[float] | None = None,
    tol: float = 1e-13,
    max_rounds: int = 1_000_000,
) -> list[np.ndarray]:
    """Limit of repeatedly applying one matrix, via power iteration to `tol`."""
    u = np.stack([np.asarray(x, dtype=np.float64) for x in initial])
    if u.ndim == 1:
        u = u[:, None]
    mu = np.ones(u.shape[0]) if initial_mu is None else np.asarray(initial_mu, dtype=np.float64)
    z_prev = u / mu[:, None]
    for _ in range(max_rounds):
        u = _kahan_apply(matrix.weights, u)
        mu = _kahan_apply(matrix.weights, mu[:, None])[:, 0]
        z = u / mu[:, None]
        if np.max(np.abs(z - z_prev)) < tol:
            return [z[i] for i in range(z.shape[0])]
        z_prev = z
    raise RuntimeError(f"power iteration did not reach tol={tol} in {max_rounds} rounds")
