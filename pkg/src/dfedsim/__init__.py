"""Deterministic simulator for decentralized personalized federated learning
over directed, time-varying communication graphs."""

from .algorithms import (
    ClientState,
    LocalPlan,
    dfedavgm_p_round,
    dfedavgm_round,
    dfedpgp_round,
    local_round,
    local_update_u,
    local_update_v,
    osgp_round,
)
from .consensus import (
    PushSumCell,
    consensus_oracle,
    mix_step,
    power_limit,
    run_consensus,
    spread,
)
from .data import (
    Batch,
    ClientShards,
    GlobalPool,
    PartitionSpec,
    dirichlet_partition,
    generate_pool,
    pathological_partition,
    split_shards,
)
from .engine import (
    ExperimentConfig,
    PoolConfig,
    RoundMetrics,
    TopologyConfig,
    assign_heterogeneity,
    compute_delta_u,
    compute_delta_v,
    rounds_to_target,
    run_experiment,
)
from .errors import (
    ConfigurationError,
    DivergenceError,
    EvaluationError,
    ProtocolDegeneracyError,
    SchemeError,
)
from .model import (
    ModelSpec,
    evaluate,
    finite_diff_grads,
    forward,
    init_params,
    loss_and_grads,
)
from .topology import (
    DirectedGraph,
    MixingMatrix,
    TopologySchedule,
    build_mixing_matrix,
    check_window_connectivity,
    generate_round_topology,
    is_strongly_connected,
    union_graph,
)

__version__ = "0.1.0"
