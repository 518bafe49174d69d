"""Decentralized federated fine-tuning with low-rank adapters, simulated with numpy."""
from .algorithms import (
    ClientState,
    RoundTrace,
    RunResult,
    TrainConfig,
    gossip_aggregate,
    local_updates,
    run,
    run_centralized,
    run_dec_ffa,
    run_dec_lora,
)
from .data import (
    Dataset,
    Partition,
    generate_classification,
    generate_regression,
    partition_dirichlet,
    partition_fixed_ratio,
    partition_iid,
    sample_minibatch,
)
from .metrics import (
    MetricsRecord,
    comm_cost,
    consensus_deviation,
    lemma1_bound,
    rate_slope,
    stationarity_metric,
)
from .model import DataBatch, GradPair, LoraLayer, ModelSpec, gradient, loss, quantize_base
from .rng import stream
from .topology import (
    Graph,
    MixingMatrix,
    build_erdos_renyi,
    build_exponential_graph,
    build_ring,
    mixing_complete,
    mixing_from_laplacian,
    mixing_from_ring,
    spectral_contraction,
)

__version__ = "0.1.0"
