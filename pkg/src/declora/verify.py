"""Acceptance checks A1-A13.

Each ``check_*`` function returns a :class:`CriterionResult`; failures are
entries in the report, never exceptions.  Oracles used here (circulant ring
spectrum, finite differences, exact-averaging equivalence, Fraction-based
rounding) are independent of the code paths they check.
"""
from __future__ import annotations

import copy
import math
import tempfile
import time
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .algorithms import ClientState, TrainConfig, gossip_aggregate, run, run_centralized, run_dec_lora, simulate
from .data import (
    generate_classification,
    label_distribution_tv,
    partition_dirichlet,
    partition_fixed_ratio,
)
from .harness import build_task, run_experiment, validate_config
from .linalg import frobenius_norm_sq
from .metrics import comm_cost, rate_slope
from .model import DataBatch, LoraLayer, ModelSpec, gradient, loss
from .model import quantize_base
from .topology import (
    build_erdos_renyi,
    build_ring,
    mixing_complete,
    mixing_exponential,
    mixing_from_laplacian,
    mixing_from_ring,
    mixing_violations,
    spectral_contraction,
)

# synthetic task shared by the trend criteria
ACCEPTANCE_CONFIG = {
    "train": {"n": 10, "T": 20, "K": 5, "eta": 0.2, "rank": 2, "sigma_init": 1.0, "batch_size": 8, "seed": 0},
    "data": {
        "kind": "classification", "m": 600, "d2": 10, "num_classes": 3, "sigma_noise": 0.5,
        "separation": 2.0, "base_offset_rank": 2, "base_offset_scale": 1.0,
        "partition": {"scheme": "dirichlet", "alpha": 0.5},
    },
    "topology": {"kind": "ring"},
    "replicates": 5,
}
SEEDS = range(5)
SLACK = 0.05


@dataclass
class CriterionResult:
    id: str
    passed: bool
    detail: str
    value: object = None
    seconds: float = 0.0

    def line(self) -> str:
        return f"{self.id} {'PASS' if self.passed else 'FAIL'} ({self.seconds:.1f}s) {self.detail}"


def acceptance_config(**overrides):
    """The shared acceptance config with nested ``section__field`` overrides applied."""
    raw = copy.deepcopy(ACCEPTANCE_CONFIG)
    for key, val in overrides.items():
        node = raw
        *path, leaf = key.split("__")
        for p in path:
            node = node.setdefault(p, {})
        node[leaf] = val
    return validate_config(raw)


def _final_losses(cfg, seeds=SEEDS, variant=None) -> list[float]:
    out = []
    for s in seeds:
        train = TrainConfig(**{**asdict(cfg.train), "seed": s, **({"variant": variant} if variant else {})})
        task = build_task(cfg, s)
        q = task.q if task.q is not None else None
        out.append(run(train, task.spec, task.ds, task.partition, task.w0, q).final.train_loss)
    return out


def default_mixing_matrices() -> list[tuple[str, np.ndarray]]:
    mats = [(f"ring({n})", mixing_from_ring(build_ring(n)).q) for n in range(3, 65)]
    for p in (0.2, 0.6, 1.0):
        for s in range(5):
            g = build_erdos_renyi(30, p, rngmod.stream(s, "topology"))
            mats.append((f"er(30,{p},seed={s})", mixing_from_laplacian(g).q))
    mats += [(f"complete({n})", mixing_complete(n).q) for n in (2, 5, 10, 30)]
    mats += [(f"exponential({n})", mixing_exponential(n).q) for n in (2, 3, 8, 16, 30)]
    return mats


def check_a1(matrices=None) -> CriterionResult:
    t0 = time.perf_counter()
    mats = default_mixing_matrices() if matrices is None else matrices
    bad = []
    worst_beta = 0.0
    for name, q in mats:
        problems = mixing_violations(q)
        eig = np.linalg.eigvalsh(q) if not problems else None
        beta = max(abs(eig[0]), abs(eig[-2])) if eig is not None else 1.0
        worst_beta = max(worst_beta, beta)
        if problems or not beta < 1:
            bad.append(f"{name}: {'; '.join(problems) or f'beta={beta}'}")
    dt = time.perf_counter() - t0
    ok = not bad and dt < 10
    detail = f"{len(mats)} matrices, max beta {worst_beta:.6f}" if not bad else f"invalid: {bad[0]}"
    return CriterionResult("A1", ok, detail + ("" if dt < 10 else f"; too slow ({dt:.1f}s)"), worst_beta)


def check_a2() -> CriterionResult:
    errs = {}
    for n in (4, 8, 16, 64):
        expected = max(abs((1 + 2 * math.cos(2 * math.pi * k / n)) / 3) for k in range(1, n))
        errs[n] = abs(mixing_from_ring(build_ring(n)).beta - expected)
    exact4 = abs(mixing_from_ring(build_ring(4)).beta - 1 / 3)
    worst = max(errs.values())
    return CriterionResult("A2", worst <= 1e-10 and exact4 <= 1e-10, f"max |beta - circulant| = {worst:.2e}", worst)


def check_a3() -> CriterionResult:
    mats = {
        "ring(8)": mixing_from_ring(build_ring(8)),
        "er(10,0.5)": mixing_from_laplacian(build_erdos_renyi(10, 0.5, rngmod.stream(0, "topology"))),
        "complete(6)": mixing_complete(6),
    }
    worst = 0.0
    fails = []
    for name, q in mats.items():
        for N in (1, 2, 5, 10):
            got, want = spectral_contraction(q, N), q.beta**N
            err = abs(got - want)
            rel = err / want if want > 0 else err
            worst = max(worst, rel)
            # beta = 0: no relative scale, require round-off level
            if err > 1e-8 * want + (1e-14 if want == 0 else 0.0):
                fails.append(f"{name} N={N}: {got!r} vs {want!r}")
    return CriterionResult("A3", not fails, fails[0] if fails else f"max relative error {worst:.2e}", worst)


def _random_instance(kind: str, rng: np.random.Generator):
    d1 = int(rng.integers(2, 5))
    d2 = int(rng.integers(2, 7))
    r = int(rng.integers(1, min(d1, d2) + 1))
    m = int(rng.integers(1, 7))
    spec = ModelSpec(kind, d1, d2)
    layer = LoraLayer(rng.standard_normal((d1, d2)), rng.standard_normal((r, d2)), rng.standard_normal((d1, r)))
    x = rng.standard_normal((m, d2))
    y = rng.integers(0, d1, size=m) if kind == "multinomial_logistic" else rng.standard_normal((m, d1))
    return spec, layer, DataBatch(x, y)


def finite_difference(spec, layer, batch, which: str, h: float = 1e-6) -> np.ndarray:
    """Central differences of the loss with respect to factor ``which``."""
    base = getattr(layer, which)
    out = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        plus, minus = base.copy(), base.copy()
        plus[idx] += h
        minus[idx] -= h
        lp = loss(spec, LoraLayer(layer.w0, **{**{"a": layer.a, "b": layer.b}, which: plus}), batch)
        lm = loss(spec, LoraLayer(layer.w0, **{**{"a": layer.a, "b": layer.b}, which: minus}), batch)
        out[idx] = (lp - lm) / (2 * h)
    return out


def check_a4(instances: int = 50) -> CriterionResult:
    rng = rngmod.stream(0, "data", 4)
    worst_fd = 0.0
    worst_chain = 0.0
    for kind in ("least_squares", "multinomial_logistic"):
        for _ in range(instances):
            spec, layer, batch = _random_instance(kind, rng)
            g = gradient(spec, layer, batch)
            for which, analytic in (("a", g.grad_a), ("b", g.grad_b)):
                fd = finite_difference(spec, layer, batch, which)
                scale = max(np.linalg.norm(analytic), 1e-12)
                worst_fd = max(worst_fd, np.linalg.norm(fd - analytic) / scale)
            ca = np.max(np.abs(g.grad_a - layer.b.T @ g.grad_w))
            cb = np.max(np.abs(g.grad_b - g.grad_w @ layer.a.T))
            worst_chain = max(worst_chain, ca, cb)
    ok = worst_fd <= 1e-5 and worst_chain <= 1e-14
    return CriterionResult(
        "A4", ok, f"max FD rel err {worst_fd:.2e}, max chain-rule diff {worst_chain:.1e}", worst_fd
    )


def check_a5() -> CriterionResult:
    worst = 0.0
    for K in (1, 3):
        cfg = acceptance_config(train__n=5, train__T=10, train__K=K)
        task = build_task(cfg, 0)
        dec = run_dec_lora(cfg.train, task.spec, task.ds, task.partition, task.w0, mixing_complete(5))
        cen = run_centralized(cfg.train, task.spec, task.ds, task.partition, task.w0)
        for rd, rc in zip(dec, cen):
            for x, y in zip(rd.a + rd.b, rc.a + rc.b):
                worst = max(worst, float(np.max(np.abs(x - y))))
    return CriterionResult("A5", worst <= 1e-10, f"max per-round parameter difference {worst:.2e}", worst)


def _perturbed_states(n: int, seed: int = 0) -> list[ClientState]:
    rng = rngmod.stream(seed, "init", 99)
    w0 = np.zeros((3, 4))
    return [
        ClientState(i, LoraLayer(w0, rng.standard_normal((2, 4)), rng.standard_normal((3, 2))), np.arange(1), seed)
        for i in range(n)
    ]


def zero_gradient_devs(q, rounds: int, seed: int = 0) -> list[float]:
    """Stacked deviation ``sum_i ||A_i - bar A||^2 + ||B_i - bar B||^2`` under pure gossip."""
    from .data import Dataset

    states = _perturbed_states(q.n, seed)
    ds = Dataset(np.zeros((1, 4)), np.zeros((1, 3)), 0)
    res = simulate(
        states, ModelSpec("zero", 3, 4), ds, rounds, 1, 1.0, 1,
        lambda st: gossip_aggregate(st, q), degrees=q.degrees(), seed=seed,
    )
    return [q.n * (r.record.dev_a + r.record.dev_b) for r in res]


def check_a6() -> CriterionResult:
    q = mixing_from_ring(build_ring(8))
    devs = zero_gradient_devs(q, 50)
    ratios = [devs[t + 1] / devs[t] for t in range(50) if devs[t] > 0]
    ok_ring = all(devs[t + 1] <= (q.beta**2 + 1e-9) * devs[t] for t in range(50))
    comp = zero_gradient_devs(mixing_complete(8), 1)
    ok = ok_ring and comp[1] == 0.0
    return CriterionResult(
        "A6", ok, f"max ratio {max(ratios):.6f} vs beta^2 {q.beta ** 2:.6f}; complete dev(1) = {comp[1]!r}", max(ratios)
    )


RATE_TS = (16, 32, 64, 128, 256)


def rate_points(seeds=SEEDS, ts=RATE_TS):
    """Seed-averaged time-mean stationarity metric for each T (n=8 ring, K=2, eta = 1/(K sqrt T))."""
    pts = []
    for T in ts:
        vals = []
        for s in seeds:
            cfg = acceptance_config(train__n=8, train__K=2, train__T=T, train__eta="auto",
                                    data__partition={"scheme": "iid"})
            task = build_task(cfg, s)
            train = TrainConfig(**{**asdict(cfg.train), "seed": s})
            res = run_dec_lora(train, task.spec, task.ds, task.partition, task.w0, task.q)
            vals.append(np.mean([r.stat_metric for r in res.records[:-1]]))
        pts.append((T, float(np.mean(vals))))
    return pts


def check_a7() -> CriterionResult:
    t0 = time.perf_counter()
    pts = rate_points()
    slope = rate_slope(pts)
    dt = time.perf_counter() - t0
    ok = -1.2 <= slope <= -0.3 and dt < 300
    return CriterionResult("A7", ok, f"log-log slope {slope:.3f} (band [-1.2, -0.3])", slope)


def _nondecreasing(means) -> bool:
    return all(b >= a * (1 - SLACK) for a, b in zip(means, means[1:]))


def sweep_means():
    by_n = [np.mean(_final_losses(acceptance_config(train__n=n))) for n in (5, 10, 30)]
    by_p = [
        np.mean(_final_losses(acceptance_config(train__n=30, topology={"kind": "er", "p_c": p})))
        for p in (0.8, 0.2)
    ]
    by_k = [np.mean(_final_losses(acceptance_config(train__K=K, train__T=20 // K))) for K in (1, 2, 4)]
    return by_n, by_p, by_k


def check_a8() -> CriterionResult:
    by_n, by_p, by_k = sweep_means()
    ok_n = _nondecreasing(by_n)
    ok_p = by_p[0] <= by_p[1] * (1 + SLACK)
    ok_k = _nondecreasing(by_k)
    fmt = lambda xs: "/".join(f"{x:.4f}" for x in xs)
    detail = (
        f"n 5/10/30: {fmt(by_n)} [{'ok' if ok_n else 'x'}]; "
        f"p_c 0.8/0.2: {fmt(by_p)} [{'ok' if ok_p else 'x'}]; "
        f"K 1/2/4: {fmt(by_k)} [{'ok' if ok_k else 'x'}]"
    )
    return CriterionResult("A8", ok_n and ok_p and ok_k, detail, {"n": by_n, "p_c": by_p, "K": by_k})


def check_a9() -> CriterionResult:
    full = np.mean(_final_losses(acceptance_config()))
    quant = np.mean(_final_losses(acceptance_config(train__quant_bits=4)))
    rel = abs(quant - full) / full
    worst = 0.0
    bound_ok = True
    for s in SEEDS:
        w0 = build_task(acceptance_config(), s).w0
        err = np.max(np.abs(quantize_base(w0, 4) - w0))
        bound_ok &= bool(err <= np.max(np.abs(w0)) / (2**4 - 1))
        worst = max(worst, err)
    ok = rel <= 0.10 and bound_ok
    return CriterionResult("A9", ok, f"4-bit loss {quant:.4f} vs full {full:.4f} (rel {rel:.3%}); max q-err {worst:.3e}", rel)


def fixed_ratio_oracle(class_sizes, ratios) -> list[list[int]]:
    """Expected per-client class counts: column-normalised quotas, largest remainder, exact arithmetic."""
    rows = [[Fraction(str(v)) for v in row] for row in ratios]
    out = [[0] * len(class_sizes) for _ in rows]
    for c, size in enumerate(class_sizes):
        col = sum(r[c] for r in rows)
        quotas = [r[c] / col * size for r in rows]
        floors = [q.numerator // q.denominator for q in quotas]
        left = size - sum(floors)
        order = sorted(range(len(rows)), key=lambda i: (-(quotas[i] - floors[i]), i))
        for i in order[:left]:
            floors[i] += 1
        for i, k in enumerate(floors):
            out[i][c] = k
    return out


BINARY_SPLIT = [[0.15, 0.85], [0.85, 0.15], [0.5, 0.5]]
TERNARY_SPLIT = [[0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]]


def check_a10() -> CriterionResult:
    problems = []
    for classes, ratios in ((2, BINARY_SPLIT), (3, TERNARY_SPLIT)):
        ds = generate_classification(900, 6, classes, 0.3, rngmod.stream(1, "data"))
        part = partition_fixed_ratio(ds, ratios, rngmod.stream(1, "partition"))
        sizes = np.bincount(ds.labels, minlength=classes).tolist()
        if part.class_counts(ds).tolist() != fixed_ratio_oracle(sizes, ratios):
            problems.append(f"{classes}-class split counts differ from oracle")
    ds = generate_classification(3000, 6, 3, 0.3, rngmod.stream(2, "data"))
    glob = np.bincount(ds.labels, minlength=3) / ds.m
    flat = partition_dirichlet(ds, 5, 1e6, rngmod.stream(2, "partition"))
    counts = flat.class_counts(ds)
    max_dev = float(np.max(np.abs(counts / counts.sum(axis=1, keepdims=True) - glob)))
    if max_dev > 0.02:
        problems.append(f"alpha=1e6 shard deviates {max_dev:.3f} from global proportions")
    skew = partition_dirichlet(ds, 5, 0.5, rngmod.stream(2, "partition"))
    tv_skew = float(label_distribution_tv(ds, skew).mean())
    tv_flat = float(label_distribution_tv(ds, flat).mean())
    if not tv_skew > tv_flat:
        problems.append(f"alpha=0.5 TV {tv_skew:.4f} not above alpha=1e6 TV {tv_flat:.4f}")
    detail = problems[0] if problems else (
        f"split counts match oracle; alpha=1e6 max dev {max_dev:.4f}; TV 0.5 vs 1e6: {tv_skew:.4f} > {tv_flat:.4f}"
    )
    return CriterionResult("A10", not problems, detail, (max_dev, tv_skew, tv_flat))


def check_a11() -> CriterionResult:
    cfg = acceptance_config()
    frozen_ok = True
    for s in SEEDS:
        task = build_task(cfg, s)
        train = TrainConfig(**{**asdict(cfg.train), "seed": s, "variant": "dec_ffa_lora"})
        res = run(train, task.spec, task.ds, task.partition, task.w0, task.q)
        a0 = res.rounds[0].a[0]
        frozen_ok &= all(np.array_equal(a, a0) for r in res for a in r.a)
        frozen_ok &= all(r.record.dev_a == 0.0 for r in res)
    dec = np.mean(_final_losses(cfg))
    ffa = np.mean(_final_losses(cfg, variant="dec_ffa_lora"))
    ok = frozen_ok and dec <= ffa
    return CriterionResult("A11", ok, f"A frozen: {frozen_ok}; dec_lora {dec:.4f} <= dec_ffa {ffa:.4f}", (dec, ffa))


def check_a12() -> CriterionResult:
    raw = copy.deepcopy(ACCEPTANCE_CONFIG)
    raw["replicates"] = 2
    raw["sweep"] = {"axis": "K", "values": [1, 2, 4], "kt_budget": 20}
    cfg = validate_config(raw)
    with tempfile.TemporaryDirectory() as d1, tempfile.TemporaryDirectory() as d2:
        run_experiment(cfg, d1)
        run_experiment(cfg, d2)
        files = sorted(p.name for p in Path(d1).iterdir())
        same = files == sorted(p.name for p in Path(d2).iterdir()) and all(
            (Path(d1) / f).read_bytes() == (Path(d2) / f).read_bytes() for f in files
        )
    return CriterionResult("A12", same, f"{len(files)} output files compared byte-for-byte", same)


def check_a13() -> CriterionResult:
    d1, d2, r = 8, 16, 2
    ring = {n: comm_cost(d1, d2, r, n, mixing_from_ring(build_ring(n))).per_client_max for n in (4, 8, 16, 32)}
    comp = {n: comm_cost(d1, d2, r, n, mixing_complete(n)).per_client_max for n in (2, 4, 8, 16)}
    unit = (d1 + d2) * r * 8
    ok = len(set(ring.values())) == 1 and all(v == (n - 1) * unit for n, v in comp.items())
    return CriterionResult("A13", ok, f"ring per-client {sorted(set(ring.values()))}; complete {comp}", (ring, comp))


CRITERIA = {
    "A1": check_a1, "A2": check_a2, "A3": check_a3, "A4": check_a4, "A5": check_a5,
    "A6": check_a6, "A7": check_a7, "A8": check_a8, "A9": check_a9, "A10": check_a10,
    "A11": check_a11, "A12": check_a12, "A13": check_a13,
}


def run_criterion(cid: str, **kwargs) -> CriterionResult:
    t0 = time.perf_counter()
    try:
        res = CRITERIA[cid](**kwargs)
    except Exception as exc:  # a crash is a failed criterion, not a crashed report
        res = CriterionResult(cid, False, f"error: {type(exc).__name__}: {exc}")
    res.seconds = time.perf_counter() - t0
    return res


def verify_suite(only=None, options: dict | None = None) -> dict:
    """Run the acceptance criteria; ``options`` maps a criterion id to keyword arguments."""
    options = options or {}
    results = [run_criterion(cid, **options.get(cid, {})) for cid in (only or CRITERIA)]
    return {
        "criteria": [
            {"id": r.id, "passed": r.passed, "detail": r.detail,
             "value": r.value if isinstance(r.value, (int, float, bool)) else None}
            for r in results
        ],
        "all_passed": all(r.passed for r in results),
        "lines": [r.line() for r in results],
    }
