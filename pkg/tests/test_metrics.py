import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from declora import rng as rngmod
from declora.algorithms import ClientState, gossip_aggregate
from declora.data import generate_regression, partition_iid
from declora.metrics import (
    CSV_COLUMNS,
    MetricsRecord,
    comm_cost,
    consensus_deviation,
    global_loss,
    lemma1_bound,
    lemma1_constants,
    rate_slope,
    records_from_csv,
    records_to_csv,
    stationarity_metric,
)
from declora.model import LoraLayer, ModelSpec
from declora.topology import build_ring, mixing_complete, mixing_from_ring


def naive_dev(mats):
    n = len(mats)
    mean = sum(mats) / n
    return sum(float(np.sum((m - mean) ** 2)) for m in mats) / n


def test_deviation_examples(rng):
    a = [rng.standard_normal((2, 3))] * 4
    b = [rng.standard_normal((3, 2))] * 4
    assert consensus_deviation(a, b) == (0.0, 0.0)
    e = np.zeros((2, 2))
    e[0, 1] = 1.0
    dev_a, _ = consensus_deviation([np.zeros((2, 2)), 2 * e], [e, e])
    assert dev_a == 1.0


def test_deviation_matches_naive(rng):
    a = [rng.standard_normal((2, 5)) for _ in range(6)]
    b = [rng.standard_normal((4, 2)) for _ in range(6)]
    dev_a, dev_b = consensus_deviation(a, b)
    assert abs(dev_a - naive_dev(a)) <= 1e-12
    assert abs(dev_b - naive_dev(b)) <= 1e-12
    with pytest.raises(ValueError):
        consensus_deviation(a[:1], b[:1])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(2, 8))
def test_deviation_translation_invariant(seed, n):
    rng = np.random.default_rng(seed)
    a = [rng.standard_normal((2, 3)) for _ in range(n)]
    b = [rng.standard_normal((3, 2)) for _ in range(n)]
    ta, tb = rng.standard_normal((2, 3)), rng.standard_normal((3, 2))
    d0 = consensus_deviation(a, b)
    d1 = consensus_deviation([x + ta for x in a], [x + tb for x in b])
    assert abs(d0[0] - d1[0]) <= 1e-12 * max(1, d0[0]) and abs(d0[1] - d1[1]) <= 1e-12 * max(1, d0[1])


@pytest.fixture
def ls_task():
    ds = generate_regression(60, 5, 3, 0.0, rngmod.stream(1, "data"))
    part = partition_iid(ds, 3, rngmod.stream(1, "partition"))
    return ModelSpec("least_squares", 3, 5), ds, part


def test_stationary_point_has_zero_metric(ls_task):
    spec, ds, part = ls_task
    rng = np.random.default_rng(0)
    b_true, a_true = rng.standard_normal((3, 2)), rng.standard_normal((2, 5))
    w0 = ds.w_star - b_true @ a_true
    assert stationarity_metric(spec, w0, a_true, b_true, ds, part.shards) <= 1e-10


def test_zero_b_metric_is_b_term_only(ls_task):
    spec, ds, part = ls_task
    rng = np.random.default_rng(1)
    w0, a = rng.standard_normal((3, 5)), rng.standard_normal((2, 5))
    b = np.zeros((3, 2))
    from declora.metrics import global_grad_w

    gw = global_grad_w(spec, w0, ds, part.shards)
    assert stationarity_metric(spec, w0, a, b, ds, part.shards) == pytest.approx(np.sum((gw @ a.T) ** 2), rel=1e-14)


def test_metric_matches_finite_differences(ls_task, small_classification):
    cases = [ls_task[:2] + (ls_task[2].shards,)]
    spec_c, ds_c, _ = small_classification
    cases.append((spec_c, ds_c, partition_iid(ds_c, 4, rngmod.stream(0, "partition")).shards))
    for spec, ds, shards in cases:
        rng = np.random.default_rng(2)
        w0 = rng.standard_normal((spec.d1, spec.d2))
        a, b = rng.standard_normal((2, spec.d2)), rng.standard_normal((spec.d1, 2))

        def f(a_, b_):
            return global_loss(spec, w0 + b_ @ a_, ds, shards)

        h = 1e-6
        total = 0.0
        for which in ("a", "b"):
            base = a if which == "a" else b
            for idx in np.ndindex(base.shape):
                p, m = base.copy(), base.copy()
                p[idx] += h
                m[idx] -= h
                args = ((p, b), (m, b)) if which == "a" else ((a, p), (a, m))
                total += ((f(*args[0]) - f(*args[1])) / (2 * h)) ** 2
        assert stationarity_metric(spec, w0, a, b, ds, shards) == pytest.approx(total, rel=1e-5)


def test_metric_at_average_equals_after_complete_gossip(ls_task):
    spec, ds, part = ls_task
    rng = np.random.default_rng(3)
    w0 = rng.standard_normal((3, 5))
    states = [ClientState(i, LoraLayer(w0, rng.standard_normal((2, 5)), rng.standard_normal((3, 2))), part.shards[i], 0)
              for i in range(3)]
    bar_a = np.mean([s.layer.a for s in states], axis=0)
    bar_b = np.mean([s.layer.b for s in states], axis=0)
    after = gossip_aggregate(states, mixing_complete(3))[0].layer
    m1 = stationarity_metric(spec, w0, bar_a, bar_b, ds, part.shards)
    m2 = stationarity_metric(spec, w0, after.a, after.b, ds, part.shards)
    assert abs(m1 - m2) <= 1e-12 * max(1.0, m1)


def test_lemma1_constants_example():
    m_a, m_b = lemma1_constants(1 / 3, 1.0, 7.0, 1.0)
    assert m_a == pytest.approx(5 / 16, rel=1e-14)
    bound_a, bound_b = lemma1_bound((1 / 3, 4), 1.0, 7.0, 1.0, 1, 0.1, 10**6, 0.0)
    assert bound_a == pytest.approx(0.003125, rel=1e-12)
    assert bound_b == pytest.approx(0.01 * m_b, rel=1e-12)


def test_lemma1_complete_graph(rng):
    a0 = rng.standard_normal((2, 4))
    n = 5
    init = n * float(np.sum(a0**2))
    q = mixing_complete(n)
    ba, bb = lemma1_bound(q, 3.0, 2.0, 2.0, 2, 0.1, 0, init)
    assert bb == 0.0
    assert ba == pytest.approx(float(np.sum(a0**2)), rel=1e-14)
    ba3, _ = lemma1_bound(q, 3.0, 2.0, 2.0, 2, 0.1, 3, init)
    assert ba3 == pytest.approx(0.5**3 * np.sum(a0**2), rel=1e-14)


def test_lemma1_uses_rho(rng):
    q = mixing_from_ring(build_ring(8))
    ba, _ = lemma1_bound(q, 0.0, 1.0, 1.0, 1, 0.1, 4, 8.0)
    assert ba == pytest.approx(q.rho**4, rel=1e-14)


@pytest.mark.parametrize("power, expected", [(-0.5, -0.5), (-1.0, -1.0), (0.0, 0.0)])
def test_rate_slope_exact(power, expected):
    pts = [(t, 3.0 * t**power) for t in (16, 32, 64, 128, 256)]
    assert abs(rate_slope(pts) - expected) <= 1e-9


def test_rate_slope_errors():
    with pytest.raises(ValueError):
        rate_slope([(1, 1.0), (2, 1.0), (4, 1.0)])
    with pytest.raises(ValueError):
        rate_slope([(1, 1.0), (2, 0.0), (4, 1.0), (8, 1.0)])


def test_comm_cost():
    ring = mixing_from_ring(build_ring(6))
    c = comm_cost(8, 16, 2, 6, ring, rounds=3)
    assert c.per_client_max == 768 and c.per_client_mean == 768
    assert c.total == 768 * 6 * 3
    for n in (3, 5, 9):
        assert comm_cost(4, 4, 1, n, mixing_complete(n)).per_client_max == (n - 1) * 8 * 8
    assert comm_cost(4, 4, 1, 3, degrees=[1, 1, 1]).per_client_max == 64


def test_csv_round_trip():
    recs = [MetricsRecord(t, 0.5 / (t + 1), float("nan"), 0.0, 1e-20, 0.1, 1.0, 2.0, 96.0, 96.0 * t) for t in range(3)]
    text = records_to_csv(recs)
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert CSV_COLUMNS == ("t", "train_loss", "train_accuracy", "dev_a", "dev_b", "stat_metric",
                           "max_norm_a", "max_norm_b", "bytes_per_client", "bytes_total")
    back = records_from_csv(text)
    assert [r.train_loss for r in back] == [r.train_loss for r in recs]
    assert np.isnan(back[0].train_accuracy)
