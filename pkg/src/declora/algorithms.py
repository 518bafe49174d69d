"""Decentralized LoRA training loops.

Three protocols share one round engine:

* ``dec_lora``: every client runs K local SGD steps on both factors, then
  replaces each factor by the mixing-matrix weighted sum over its
  neighbourhood.
* ``centralized``: same local steps, then a server sets every client's
  factors to the exact client means (FedAvg on A and B separately).
* ``dec_ffa_lora``: A stays at its shared initial value; only B is trained
  and gossiped.

Client ``i``'s minibatch at round ``t``, step ``k`` is drawn from the stream
``(seed, "batch", i, t, k)``, independent of the protocol, so runs of
different protocols on the same seed see identical data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import rng as rngmod
from .data import Dataset, Partition, sample_minibatch
from .linalg import frobenius_norm_sq, gaussian_matrix
from .metrics import MetricsRecord, comm_cost, consensus_deviation, train_metrics
from .model import LoraLayer, ModelSpec, gradient, quantize_base
from .topology import MixingMatrix

VARIANTS = ("dec_lora", "centralized", "dec_ffa_lora")


@dataclass(frozen=True)
class ClientState:
    id: int
    layer: LoraLayer
    shard: np.ndarray
    seed: int

    def batch_rng(self, t: int, k: int) -> np.random.Generator:
        return rngmod.stream(self.seed, "batch", self.id, t, k)


@dataclass(frozen=True)
class TrainConfig:
    n: int
    T: int
    K: int
    eta: float | str = "auto"
    rank: int = 2
    sigma_init: float | None = None
    batch_size: int = 8
    variant: str = "dec_lora"
    quant_bits: int | None = None
    seed: int = 0

    def errors(self) -> list[str]:
        errs = []
        min_n = 1 if self.variant == "centralized" else 2
        if self.n < min_n:
            errs.append(f"n >= {min_n} required")
        if self.T < 1:
            errs.append("T >= 1 required")
        if self.K < 1:
            errs.append("K >= 1 required")
        if self.rank < 1:
            errs.append("rank >= 1 required")
        if self.batch_size < 1:
            errs.append("batch_size >= 1 required")
        if self.variant not in VARIANTS:
            errs.append(f"variant must be one of {', '.join(VARIANTS)}")
        if isinstance(self.eta, str):
            if self.eta.lower() != "auto":
                errs.append("eta must be a positive number or 'auto'")
        elif not (self.eta > 0 and math.isfinite(self.eta)):
            errs.append("eta must be positive")
        if self.sigma_init is not None and not self.sigma_init > 0:
            errs.append("sigma_init must be positive")
        if self.quant_bits is not None and not 2 <= self.quant_bits <= 8:
            errs.append("quant_bits must be in [2, 8]")
        if self.seed < 0:
            errs.append("seed must be >= 0")
        return errs

    def validate(self) -> TrainConfig:
        errs = self.errors()
        if errs:
            raise ValueError("; ".join(errs))
        return self

    @property
    def resolved_eta(self) -> float:
        """The step size; ``auto`` means ``1 / (K sqrt(T))``."""
        if isinstance(self.eta, str):
            return 1.0 / (self.K * math.sqrt(self.T))
        return float(self.eta)


@dataclass(frozen=True)
class RoundTrace:
    t: int
    a: tuple[np.ndarray, ...]
    b: tuple[np.ndarray, ...]
    bar_a: np.ndarray
    bar_b: np.ndarray
    record: MetricsRecord
    max_grad_norm: float = 0.0


@dataclass
class RunResult:
    """Round traces ``t = 0..T`` plus the uniformly drawn output round.

    ``rounds[0]`` is the initial state.  ``selected_round`` is drawn
    uniformly from ``0..T-1`` and ``selected`` holds the averaged
    ``(bar_a, bar_b)`` of that round.
    """

    rounds: list[RoundTrace]
    selected_round: int
    w0: np.ndarray
    init_sq_norm_a: float = 0.0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rounds)

    def __iter__(self):
        return iter(self.rounds)

    def __getitem__(self, i):
        return self.rounds[i]

    @property
    def records(self) -> list[MetricsRecord]:
        return [r.record for r in self.rounds]

    @property
    def selected(self) -> tuple[np.ndarray, np.ndarray]:
        r = self.rounds[self.selected_round]
        return r.bar_a, r.bar_b

    @property
    def final(self) -> MetricsRecord:
        return self.rounds[-1].record

    @property
    def best(self) -> MetricsRecord:
        """Round with the lowest training loss."""
        return min(self.records, key=lambda rec: rec.train_loss)

    @property
    def max_grad_norm(self) -> float:
        return max(r.max_grad_norm for r in self.rounds)


def local_updates(
    client: ClientState,
    spec: ModelSpec,
    ds: Dataset,
    K: int,
    eta: float,
    batch_size: int,
    t: int = 0,
    freeze_a: bool = False,
) -> tuple[ClientState, float]:
    """K simultaneous SGD steps on ``(a, b)``; returns the new state and max ||grad_W||_F.

    Both factor gradients are taken at the same pre-step point.
    """
    if K < 1 or not eta > 0:
        raise ValueError("need K >= 1 and eta > 0")
    a, b = client.layer.a, client.layer.b
    gmax = 0.0
    for k in range(K):
        batch = sample_minibatch(ds, client.shard, batch_size, client.batch_rng(t, k))
        g = gradient(spec, LoraLayer(client.layer.w0, a, b), batch)
        gmax = max(gmax, math.sqrt(frobenius_norm_sq(g.grad_w)))
        if not freeze_a:
            a = a - eta * g.grad_a
        b = b - eta * g.grad_b
    return replace(client, layer=LoraLayer(client.layer.w0, a, b)), gmax


def _mix(mats: Sequence[np.ndarray], q: MixingMatrix) -> list[np.ndarray]:
    out = []
    for i in range(q.n):
        # only neighbours (q_ij > 0) are read
        acc = np.zeros_like(mats[i])
        for j in q.support(i):
            acc = acc + q.q[i, j] * mats[j]
        out.append(acc)
    return out


def gossip_aggregate(states: Sequence[ClientState], q: MixingMatrix, mix_a: bool = True) -> list[ClientState]:
    """Replace each client's factors by the Q-weighted sum over its neighbourhood."""
    if len(states) != q.n:
        raise ValueError(f"{len(states)} clients but mixing matrix is {q.n}x{q.n}")
    bs = _mix([s.layer.b for s in states], q)
    as_ = _mix([s.layer.a for s in states], q) if mix_a else [s.layer.a for s in states]
    return [replace(s, layer=LoraLayer(s.layer.w0, a, b)) for s, a, b in zip(states, as_, bs)]


def server_average(states: Sequence[ClientState], mix_a: bool = True) -> list[ClientState]:
    """Set every client's factors to the arithmetic means over clients."""
    bar_b = np.mean(np.stack([s.layer.b for s in states]), axis=0)
    bar_a = np.mean(np.stack([s.layer.a for s in states]), axis=0) if mix_a else None
    return [
        replace(s, layer=LoraLayer(s.layer.w0, bar_a.copy() if mix_a else s.layer.a, bar_b.copy()))
        for s in states
    ]


def initial_states(cfg: TrainConfig, spec: ModelSpec, w0: np.ndarray, partition: Partition) -> list[ClientState]:
    """All clients share ``A0 ~ N(0, sigma^2)`` and ``B = 0``."""
    if partition.n != cfg.n:
        raise ValueError(f"partition has {partition.n} shards but config has n={cfg.n}")
    sigma = cfg.sigma_init if cfg.sigma_init is not None else 1.0 / math.sqrt(spec.d2)
    a0 = gaussian_matrix(cfg.rank, spec.d2, sigma, rngmod.stream(cfg.seed, "init"))
    b0 = np.zeros((spec.d1, cfg.rank))
    return [
        ClientState(i, LoraLayer(w0, a0.copy(), b0.copy()), np.asarray(partition.shards[i]), cfg.seed)
        for i in range(cfg.n)
    ]


def _snapshot(t, states, spec, ds, shards, bytes_per_client, bytes_total, gmax) -> RoundTrace:
    a = tuple(s.layer.a for s in states)
    b = tuple(s.layer.b for s in states)
    bar_a = np.mean(np.stack(a), axis=0)
    bar_b = np.mean(np.stack(b), axis=0)
    dev_a, dev_b = consensus_deviation(a, b) if len(states) > 1 else (0.0, 0.0)
    loss, acc, stat = train_metrics(spec, states[0].layer.w0, bar_a, bar_b, ds, shards)
    rec = MetricsRecord(
        t=t,
        train_loss=loss,
        train_accuracy=acc,
        dev_a=dev_a,
        dev_b=dev_b,
        stat_metric=stat,
        max_norm_a=max(math.sqrt(frobenius_norm_sq(x)) for x in a),
        max_norm_b=max(math.sqrt(frobenius_norm_sq(x)) for x in b),
        bytes_per_client=bytes_per_client,
        bytes_total=bytes_total,
    )
    return RoundTrace(t, a, b, bar_a, bar_b, rec, gmax)


def simulate(
    states: Sequence[ClientState],
    spec: ModelSpec,
    ds: Dataset,
    T: int,
    K: int,
    eta: float,
    batch_size: int,
    aggregate: Callable[[list[ClientState]], list[ClientState]],
    freeze_a: bool = False,
    degrees=None,
    seed: int = 0,
) -> RunResult:
    """Run T rounds of local updates followed by ``aggregate`` from arbitrary start states."""
    states = list(states)
    shards = [s.shard for s in states]
    d1, r = states[0].layer.b.shape
    d2 = states[0].layer.a.shape[1]
    if degrees is None:
        degrees = np.ones(len(states), dtype=int)
    cost = comm_cost(d1, d2, r, len(states), degrees=degrees, entries=d1 * r if freeze_a else None)
    per_client = cost.per_client_mean
    init_sq = sum(frobenius_norm_sq(s.layer.a) for s in states)
    rounds = [_snapshot(0, states, spec, ds, shards, per_client, 0.0, 0.0)]
    for t in range(T):
        gmax = 0.0
        stepped = []
        for s in states:
            new, g = local_updates(s, spec, ds, K, eta, batch_size, t=t, freeze_a=freeze_a)
            stepped.append(new)
            gmax = max(gmax, g)
        states = aggregate(stepped)
        rounds.append(_snapshot(t + 1, states, spec, ds, shards, per_client, float(cost.total * (t + 1)), gmax))
    selected = int(rngmod.stream(seed, "select").integers(0, T))
    return RunResult(rounds, selected, states[0].layer.w0, init_sq)


def _prepare(cfg: TrainConfig, spec: ModelSpec, w0: np.ndarray, partition: Partition):
    cfg.validate()
    if cfg.quant_bits is not None:
        w0 = quantize_base(w0, cfg.quant_bits)
    return initial_states(cfg, spec, w0, partition)


def run_dec_lora(cfg: TrainConfig, spec: ModelSpec, ds: Dataset, partition: Partition, w0: np.ndarray, q: MixingMatrix) -> RunResult:
    states = _prepare(cfg, spec, w0, partition)
    if q.n != cfg.n:
        raise ValueError(f"mixing matrix is {q.n}x{q.n} but n={cfg.n}")
    return simulate(
        states, spec, ds, cfg.T, cfg.K, cfg.resolved_eta, cfg.batch_size,
        lambda st: gossip_aggregate(st, q), degrees=q.degrees(), seed=cfg.seed,
    )


def run_centralized(cfg: TrainConfig, spec: ModelSpec, ds: Dataset, partition: Partition, w0: np.ndarray) -> RunResult:
    states = _prepare(cfg, spec, w0, partition)
    return simulate(
        states, spec, ds, cfg.T, cfg.K, cfg.resolved_eta, cfg.batch_size,
        server_average, degrees=np.ones(cfg.n, dtype=int), seed=cfg.seed,
    )


def run_dec_ffa(cfg: TrainConfig, spec: ModelSpec, ds: Dataset, partition: Partition, w0: np.ndarray, q: MixingMatrix) -> RunResult:
    states = _prepare(cfg, spec, w0, partition)
    if q.n != cfg.n:
        raise ValueError(f"mixing matrix is {q.n}x{q.n} but n={cfg.n}")
    return simulate(
        states, spec, ds, cfg.T, cfg.K, cfg.resolved_eta, cfg.batch_size,
        lambda st: gossip_aggregate(st, q, mix_a=False), freeze_a=True, degrees=q.degrees(), seed=cfg.seed,
    )


def run(cfg: TrainConfig, spec: ModelSpec, ds: Dataset, partition: Partition, w0: np.ndarray, q: MixingMatrix | None = None) -> RunResult:
    """Dispatch on ``cfg.variant``."""
    if cfg.variant == "centralized":
        return run_centralized(cfg, spec, ds, partition, w0)
    if q is None:
        raise ValueError(f"variant {cfg.variant!r} needs a mixing matrix")
    if cfg.variant == "dec_ffa_lora":
        return run_dec_ffa(cfg, spec, ds, partition, w0, q)
    return run_dec_lora(cfg, spec, ds, partition, w0, q)
