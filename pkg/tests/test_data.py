from fractions import Fraction

import numpy as np
import pytest

from declora import rng as rngmod
from declora.data import (
    Partition,
    PartitionError,
    generate_classification,
    generate_regression,
    label_distribution_tv,
    largest_remainder,
    partition_dirichlet,
    partition_fixed_ratio,
    partition_iid,
    read_dataset_csv,
    sample_minibatch,
    write_dataset_csv,
)
from declora.model import ModelSpec, grad_w, loss_w


def expected_counts(sizes, ratios):
    """Column-normalised quotas rounded by largest remainder, in exact arithmetic."""
    rows = [[Fraction(str(v)) for v in r] for r in ratios]
    out = np.zeros((len(rows), len(sizes)), dtype=int)
    for c, size in enumerate(sizes):
        col = sum(r[c] for r in rows)
        quotas = [r[c] * size / col for r in rows]
        fl = [int(q) for q in quotas]
        for i in sorted(range(len(rows)), key=lambda i: (-(quotas[i] - fl[i]), i))[: size - sum(fl)]:
            fl[i] += 1
        out[:, c] = fl
    return out


def assert_valid(part, m):
    allidx = np.concatenate(part.shards)
    assert len(allidx) == len(set(allidx.tolist()))
    assert all(len(s) > 0 for s in part.shards)
    assert allidx.min() >= 0 and allidx.max() < m


def test_generate_determinism_and_range():
    a = generate_classification(50, 4, 3, 0.1, rngmod.stream(3, "data"))
    b = generate_classification(50, 4, 3, 0.1, rngmod.stream(3, "data"))
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)
    two = generate_classification(10, 3, 2, 0.0, rngmod.stream(0, "data"))
    assert set(two.labels.tolist()) <= {0, 1}
    with pytest.raises(ValueError):
        generate_classification(2, 3, 3, 0.0, rngmod.stream(0, "data"), )


def test_noiseless_data_is_linearly_separable():
    ds = generate_classification(300, 6, 3, 0.0, rngmod.stream(0, "data"), separation=3.0)
    spec = ModelSpec("multinomial_logistic", 3, 6)
    w = np.zeros((3, 6))
    batch = ds.batch()
    for _ in range(3000):
        w -= 1.0 * grad_w(spec, w, batch)
    acc = np.mean(np.argmax(ds.features @ w.T, axis=1) == ds.labels)
    assert acc >= 0.99


def test_regression_targets():
    ds = generate_regression(40, 5, 2, 0.0, rngmod.stream(0, "data"))
    spec = ModelSpec("least_squares", 2, 5)
    assert loss_w(spec, ds.w_star, ds.batch()) == pytest.approx(0.0, abs=1e-28)
    assert not ds.is_classification


def test_largest_remainder():
    assert largest_remainder([1.5, 1.5, 1.0], 4).tolist() == [2, 1, 1]
    q = np.array([3.3, 2.9, 0.8])
    c = largest_remainder(q, 7)
    assert c.sum() == 7 and np.all(np.abs(c - q) < 1)


@pytest.mark.parametrize(
    "classes, ratios",
    [
        (2, [[0.15, 0.85], [0.85, 0.15], [0.5, 0.5]]),
        (3, [[0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]]),
    ],
)
def test_fixed_ratio_reference_splits(classes, ratios):
    ds = generate_classification(500, 5, classes, 0.2, rngmod.stream(1, "data"))
    part = partition_fixed_ratio(ds, ratios, rngmod.stream(1, "partition"))
    assert_valid(part, ds.m)
    sizes = np.bincount(ds.labels, minlength=classes).tolist()
    counts = part.class_counts(ds)
    assert counts.tolist() == expected_counts(sizes, ratios).tolist()
    assert counts.sum() == ds.m
    # realised shares within one sample of the requested normalised shares
    r = np.asarray(ratios) / np.asarray(ratios).sum(axis=0)
    assert np.all(np.abs(counts - r * np.asarray(sizes)) < 1)


def test_fixed_ratio_uniform_rows_is_iid_like():
    ds = generate_classification(301, 4, 3, 0.2, rngmod.stream(2, "data"))
    part = partition_fixed_ratio(ds, [[1 / 4] * 3] * 4)
    counts = part.class_counts(ds)
    assert np.all(counts.max(axis=0) - counts.min(axis=0) <= 1)


def test_fixed_ratio_literal_mode():
    ds = generate_classification(200, 4, 2, 0.2, rngmod.stream(2, "data"))
    part = partition_fixed_ratio(ds, [[0.3, 0.2], [0.3, 0.2]], normalize=False)
    sizes = np.bincount(ds.labels, minlength=2)
    assert np.all(np.abs(part.class_counts(ds) - np.array([[0.3, 0.2], [0.3, 0.2]]) * sizes) < 1)
    with pytest.raises(PartitionError, match="exceed"):
        partition_fixed_ratio(ds, [[0.15, 0.85], [0.85, 0.15], [0.5, 0.5]], normalize=False)


def test_fixed_ratio_errors():
    ds = generate_classification(60, 4, 2, 0.2, rngmod.stream(2, "data"))
    with pytest.raises(PartitionError, match="no samples"):
        partition_fixed_ratio(ds, [[1.0, 1.0], [0.0, 0.0]])
    with pytest.raises(PartitionError):
        partition_fixed_ratio(ds, [[1.0, 1.0, 1.0]])
    with pytest.raises(PartitionError):
        partition_fixed_ratio(ds, [[-0.5, 1.0], [1.0, 1.0]])


def test_dirichlet_concentration_limit():
    ds = generate_classification(3000, 5, 3, 0.3, rngmod.stream(4, "data"))
    part = partition_dirichlet(ds, 6, 1e6, rngmod.stream(4, "partition"))
    assert_valid(part, ds.m)
    glob = np.bincount(ds.labels) / ds.m
    counts = part.class_counts(ds)
    assert np.all(np.abs(counts / counts.sum(axis=1, keepdims=True) - glob) <= 0.02)
    assert counts.sum() == ds.m


def test_dirichlet_heterogeneity_ordering():
    ds = generate_classification(2000, 5, 4, 0.3, rngmod.stream(5, "data"))
    tv = {
        a: label_distribution_tv(ds, partition_dirichlet(ds, 8, a, rngmod.stream(5, "partition"))).mean()
        for a in (0.5, 1.0, 1e6)
    }
    assert tv[0.5] > tv[1e6]
    assert tv[1.0] > tv[1e6]


def test_dirichlet_determinism_and_errors():
    ds = generate_classification(200, 3, 3, 0.3, rngmod.stream(6, "data"))
    p1 = partition_dirichlet(ds, 4, 0.5, rngmod.stream(6, "partition"))
    p2 = partition_dirichlet(ds, 4, 0.5, rngmod.stream(6, "partition"))
    assert all(np.array_equal(a, b) for a, b in zip(p1.shards, p2.shards))
    with pytest.raises(PartitionError):
        partition_dirichlet(ds, 4, 0.0, rngmod.stream(6, "partition"))
    with pytest.raises(PartitionError, match="non-empty"):
        partition_dirichlet(ds, 150, 1e-3, rngmod.stream(6, "partition"))


def test_iid_partition():
    ds = generate_classification(103, 3, 3, 0.3, rngmod.stream(6, "data"))
    part = partition_iid(ds, 5, rngmod.stream(0, "partition"))
    assert_valid(part, ds.m)
    assert sorted(len(s) for s in part.shards) == [20, 20, 21, 21, 21]


def test_partition_rejects_overlap_and_empty():
    with pytest.raises(PartitionError):
        Partition((np.array([0, 1]), np.array([1, 2])), "x")
    with pytest.raises(PartitionError):
        Partition((np.array([0]), np.array([], dtype=int)), "x")


def test_minibatch_range_and_degenerate():
    ds = generate_classification(30, 3, 3, 0.3, rngmod.stream(6, "data"))
    shard = np.array([2, 5, 7, 11])
    batch = sample_minibatch(ds, shard, 4, rngmod.stream(0, "batch"))
    rows = {tuple(r) for r in ds.features[shard]}
    assert all(tuple(r) in rows for r in batch.x)
    one = sample_minibatch(ds, np.array([9]), 5, rngmod.stream(0, "batch"))
    assert np.all(one.x == ds.features[9]) and np.all(one.y == ds.labels[9])
    with pytest.raises(ValueError):
        sample_minibatch(ds, np.array([], dtype=int), 3, rngmod.stream(0, "batch"))


def test_minibatch_frequencies():
    ds = generate_classification(10, 2, 2, 0.3, rngmod.stream(6, "data"))
    x = ds.features.copy()
    x[:, 0] = np.arange(10)
    from declora.data import Dataset

    tagged = Dataset(x, ds.labels, 2)
    batch = sample_minibatch(tagged, np.arange(10), 100_000, rngmod.stream(0, "batch"))
    freq = np.bincount(batch.x[:, 0].astype(int), minlength=10) / 100_000
    assert np.all((freq >= 0.09) & (freq <= 0.11))


def test_minibatch_gradient_unbiased(small_classification):
    spec, ds, w0 = small_classification
    shard = np.arange(0, 40)
    full = grad_w(spec, w0, ds.batch(shard))
    est = np.mean(
        [grad_w(spec, w0, sample_minibatch(ds, shard, 64, rngmod.stream(0, "batch", 0, k))) for k in range(10_000)],
        axis=0,
    )
    assert np.linalg.norm(est - full) <= 1e-2 * np.linalg.norm(full)


def test_csv_round_trip(tmp_path):
    ds = generate_classification(40, 3, 3, 0.3, rngmod.stream(6, "data"))
    part = partition_iid(ds, 4, rngmod.stream(0, "partition"))
    path = tmp_path / "d.csv"
    write_dataset_csv(ds, path, part)
    back, bpart = read_dataset_csv(path, 3)
    assert np.array_equal(back.features, ds.features) and np.array_equal(back.labels, ds.labels)
    assert all(np.array_equal(a, b) for a, b in zip(bpart.shards, part.shards))
    assert Partition.from_json(part.to_json()).shards[0].tolist() == part.shards[0].tolist()
