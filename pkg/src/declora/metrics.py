"""Observables for decentralized LoRA runs.

Consensus deviation, the stationarity metric at the averaged factors, the
plug-in consensus bound, log-log rate fits and communication accounting.
All gradient-based quantities use full shards, never minibatches.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple, Sequence

import numpy as np

from .linalg import frobenius_norm_sq
from .model import ModelSpec, grad_w, lift_gradient, loss_w, accuracy_w

BYTES_PER_ENTRY = 8


@dataclass(frozen=True)
class MetricsRecord:
    t: int
    train_loss: float
    train_accuracy: float
    dev_a: float
    dev_b: float
    stat_metric: float
    max_norm_a: float
    max_norm_b: float
    bytes_per_client: float
    bytes_total: float


CSV_COLUMNS = tuple(f.name for f in fields(MetricsRecord))


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def records_to_csv(records: Sequence[MetricsRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in records:
        row = asdict(rec)
        w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def records_from_csv(text: str) -> list[MetricsRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {rows[0]}")
    return [MetricsRecord(int(r[0]), *map(float, r[1:])) for r in rows[1:]]


def consensus_deviation(a_list: Sequence[np.ndarray], b_list: Sequence[np.ndarray]) -> tuple[float, float]:
    """Mean squared Frobenius distance of each client's factors from the client mean."""
    if len(a_list) < 2 or len(a_list) != len(b_list):
        raise ValueError("need factor lists for at least two clients")

    def dev(mats):
        # centre on client 0 first so identical clients give exactly zero
        diff = np.stack(mats) - mats[0]
        diff = diff - diff.mean(axis=0)
        return float(np.mean(np.sum(diff * diff, axis=(1, 2))))

    return dev(a_list), dev(b_list)


def global_grad_w(spec: ModelSpec, w: np.ndarray, ds, shards=None) -> np.ndarray:
    """Gradient of ``f = (1/n) sum_i f_i`` where ``f_i`` is the mean loss on shard ``i``."""
    if shards is None:
        return grad_w(spec, w, ds.batch())
    return sum(grad_w(spec, w, ds.batch(s)) for s in shards) / len(shards)


def global_loss(spec: ModelSpec, w: np.ndarray, ds, shards=None) -> float:
    if shards is None:
        return loss_w(spec, w, ds.batch())
    return float(sum(loss_w(spec, w, ds.batch(s)) for s in shards) / len(shards))


def stationarity_metric(spec: ModelSpec, w0, bar_a, bar_b, ds, shards=None) -> float:
    """``||grad_A f||^2 + ||grad_B f||^2`` at ``W0 + bar_b @ bar_a``."""
    g = global_grad_w(spec, w0 + bar_b @ bar_a, ds, shards)
    pair = lift_gradient(g, bar_a, bar_b)
    return frobenius_norm_sq(pair.grad_a) + frobenius_norm_sq(pair.grad_b)


def lemma1_constants(beta: float, G: float, C_A: float, C_B: float) -> tuple[float, float]:
    """``(M_A, M_B)`` of the consensus bound."""
    b2 = beta * beta
    common = 2.0 * (1.0 + b2) * b2 * G * G / (1.0 - b2) ** 2
    return common * C_B * C_B, common * C_A * C_A


def lemma1_bound(q, G_hat, C_A_hat, C_B_hat, K, eta, t, init_sq_norm_a) -> tuple[float, float]:
    """Plug-in bounds on ``(dev_a, dev_b)`` at round ``t``.

    ``bound_a = K^2 eta^2 M_A + rho^t * init_sq_norm_a / n`` and
    ``bound_b = K^2 eta^2 M_B``; ``init_sq_norm_a`` is the squared norm of the
    stacked initial A factors, ``sum_i ||A_i(0)||_F^2``.  ``q`` may be a
    :class:`MixingMatrix` or ``(beta, n)``.
    """
    beta, n = (q.beta, q.n) if hasattr(q, "beta") else q
    m_a, m_b = lemma1_constants(beta, G_hat, C_A_hat, C_B_hat)
    rho = (1.0 + beta * beta) / 2.0
    scale = K * K * eta * eta
    return scale * m_a + rho**t * init_sq_norm_a / n, scale * m_b


def rate_slope(points) -> float:
    """Least-squares slope of ``log(value)`` against ``log(T)``."""
    pts = sorted((float(t), float(v)) for t, v in points)
    if len({t for t, _ in pts}) < 4:
        raise ValueError("need at least 4 distinct T values")
    if any(t <= 0 or v <= 0 for t, v in pts):
        raise ValueError("rate_slope needs positive T and values")
    x = np.log([t for t, _ in pts])
    y = np.log([v for _, v in pts])
    x = x - x.mean()
    return float(np.dot(x, y - y.mean()) / np.dot(x, x))


class CommCost(NamedTuple):
    per_client_max: int
    per_client_mean: float
    total: int


def comm_cost(d1: int, d2: int, r: int, n: int, q=None, rounds: int = 1, degrees=None, entries=None) -> CommCost:
    """Bytes sent when every client pushes its factors to each neighbour once per round.

    Degrees come from ``q``'s off-diagonal support unless given explicitly
    (the server baseline uses one upload per client).  ``entries`` overrides
    the per-message size, which defaults to the ``(d1 + d2) r`` entries of
    ``A`` and ``B``.
    """
    if degrees is None:
        if q is None:
            raise ValueError("comm_cost needs a mixing matrix or explicit degrees")
        degrees = q.degrees()
    degrees = np.asarray(degrees, dtype=np.int64)
    if len(degrees) != n:
        raise ValueError(f"{len(degrees)} degrees for {n} clients")
    per_msg = BYTES_PER_ENTRY * (entries if entries is not None else (d1 + d2) * r)
    per_client = degrees * per_msg
    return CommCost(int(per_client.max()), float(per_client.mean()), int(per_client.sum()) * rounds)


def train_metrics(spec: ModelSpec, w0, bar_a, bar_b, ds, shards=None) -> tuple[float, float, float]:
    """``(loss, accuracy, stationarity)`` of the averaged model."""
    w = w0 + bar_b @ bar_a
    g = global_grad_w(spec, w, ds, shards)
    pair = lift_gradient(g, bar_a, bar_b)
    stat = frobenius_norm_sq(pair.grad_a) + frobenius_norm_sq(pair.grad_b)
    acc = accuracy_w(spec, w, ds.batch())
    return global_loss(spec, w, ds, shards), acc, stat
