"""Push-sum average recovery on a directed graph.

Every client holds a random vector and a unit weight. Column-stochastic
gossip conserves the total mass of both, so the de-biased ratio z = u / mu
converges to the exact average of the initial vectors even though single
rounds are wildly asymmetric. The row-stochastic variant keeps every weight
pinned at exactly 1 and converges to a stationary-weighted blend instead.
"""

import numpy as np

from dfedsim import PushSumCell, TopologySchedule, build_mixing_matrix, mix_step, spread
from dfedsim.topology import generate_round_topology

m, dim, rounds = 16, 8, 120
schedule = TopologySchedule(m=m, kind="random_directed", out_degree=3, seed=7, window=1)
graph = generate_round_topology(schedule, 0)
rng = np.random.default_rng(0)
initial = rng.uniform(-1.0, 1.0, size=(m, dim))
true_average = initial.mean(axis=0)

for scheme in ("push_column", "pull_row"):
    matrix = build_mixing_matrix(graph, scheme)
    cells = [PushSumCell.fresh(u) for u in initial]
    print(f"\n--- {scheme} on a random out-degree-3 digraph, {m} clients ---")
    for t in range(rounds):
        cells = mix_step(cells, matrix)
        if t % 20 == 0 or t == rounds - 1:
            deviation = max(float(np.max(np.abs(c.z - true_average))) for c in cells)
            print(f"round {t:3d}  spread {spread(cells):.3e}  |z - mean| {deviation:.3e}")
    weights = np.array([c.mu for c in cells])
    print(f"weights: min {weights.min():.4f} max {weights.max():.4f} sum {weights.sum():.4f}")
    if scheme == "pull_row":
        print("row-stochastic mixing keeps every weight at exactly 1:",
              bool(np.all(weights == 1.0)))
