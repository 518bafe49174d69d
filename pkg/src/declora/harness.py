"""Experiment configuration, sweeps and output files.

A run is described by one JSON document::

    {
      "train":    {"n": 8, "T": 20, "K": 5, "eta": 0.2, "rank": 2, "sigma_init": null,
                   "batch_size": 8, "variant": "dec_lora", "quant_bits": null, "seed": 0},
      "data":     {"kind": "classification", "m": 600, "d2": 10, "num_classes": 3,
                   "sigma_noise": 0.5, "separation": 2.0, "spread": 1.0,
                   "base_offset_rank": 2, "base_offset_scale": 1.0,
                   "partition": {"scheme": "dirichlet", "alpha": 0.5}},
      "topology": {"kind": "ring"},
      "sweep":    {"axis": "K", "values": [1, 2, 4, 5], "kt_budget": 20},
      "replicates": 5,
      "output": "out"
    }

Every field has a default (see ``DEFAULTS``).  Random streams are derived
from ``train.seed + replicate`` and a role name (``data``, ``base``,
``partition``, ``topology``, ``init``, ``batch``, ``select``); see
:mod:`declora.rng`.

Outputs in the output directory: ``config_echo.json`` (the fully resolved
config), one ``metrics_<axis>-<value>_seed<s>.csv`` per sweep point and
replicate, and ``summary.json`` written last.
"""
from __future__ import annotations

import copy
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .algorithms import VARIANTS, RunResult, TrainConfig, run
from .data import (
    Dataset,
    Partition,
    generate_classification,
    generate_regression,
    make_base_weights,
    partition_dirichlet,
    partition_fixed_ratio,
    partition_iid,
)
from .metrics import CSV_COLUMNS, comm_cost, global_loss, lemma1_bound, rate_slope, records_to_csv
from .model import ModelSpec
from .topology import (
    MixingMatrix,
    build_erdos_renyi,
    build_ring,
    load_topology,
    mixing_complete,
    mixing_exponential,
    mixing_from_laplacian,
    mixing_from_ring,
)

TOPOLOGIES = ("ring", "er", "complete", "exponential", "explicit")
SWEEP_AXES = ("n", "p_c", "K", "T", "rank", "alpha", "quant_bits")
PARTITION_SCHEMES = ("iid", "dirichlet", "fixed_ratio")
THREADS_ENV = "DECLORA_THREADS"

DEFAULTS = {
    "train": {
        "n": 8, "T": 20, "K": 5, "eta": 0.2, "rank": 2, "sigma_init": None,
        "batch_size": 8, "variant": "dec_lora", "quant_bits": None, "seed": 0,
    },
    "data": {
        "kind": "classification", "m": 600, "d2": 10, "num_classes": 3, "d1": 3,
        "sigma_noise": 0.5, "separation": 2.0, "spread": 1.0,
        "base_offset_rank": 2, "base_offset_scale": 1.0,
        "partition": {"scheme": "iid", "alpha": 1.0, "ratios": None, "normalize": True},
    },
    "topology": {"kind": "ring", "p_c": 0.5, "file": None},
    "sweep": None,
    "replicates": 1,
    "output": "out",
}


class ConfigError(ValueError):
    """Carries every problem found in a config."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig
    data: dict
    topology: dict
    sweep: dict | None
    replicates: int
    output: str

    def to_json(self) -> dict:
        train = asdict(self.train)
        train["eta_resolved"] = self.train.resolved_eta
        return {
            "train": train,
            "data": self.data,
            "topology": self.topology,
            "sweep": self.sweep,
            "replicates": self.replicates,
            "output": self.output,
        }

    def points(self) -> list[tuple[str, object, ExperimentConfig]]:
        """``(label, value, config)`` for every sweep point (one point without a sweep)."""
        if not self.sweep:
            return [("base", None, self)]
        axis = self.sweep["axis"]
        out = []
        for v in self.sweep["values"]:
            out.append((f"{axis}-{v}", v, apply_axis(self, axis, v)))
        return out


def apply_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    train = asdict(cfg.train)
    data = copy.deepcopy(cfg.data)
    topo = dict(cfg.topology)
    if axis in ("n", "K", "T", "rank", "quant_bits"):
        train[axis] = value
        if axis == "K" and cfg.sweep.get("kt_budget"):
            train["T"] = cfg.sweep["kt_budget"] // value
    elif axis == "p_c":
        topo["p_c"] = value
    elif axis == "alpha":
        data["partition"]["alpha"] = value
    return ExperimentConfig(TrainConfig(**train), data, topo, None, cfg.replicates, cfg.output)


def _merge(defaults: dict, given: dict, path: str, errors: list[str]) -> dict:
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if key not in defaults:
            errors.append(f"{path}{key}: unknown field")
        elif isinstance(defaults[key], dict):
            if isinstance(val, dict):
                out[key] = _merge(defaults[key], val, f"{path}{key}.", errors)
            else:
                errors.append(f"{path}{key}: must be an object")
        else:
            out[key] = val
    return out


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def validate_config(raw: str | dict) -> ExperimentConfig:
    """Parse and check a JSON config, reporting all violations at once."""
    errors: list[str] = []
    if isinstance(raw, str):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"not valid JSON: {exc}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])
    given = dict(raw)
    sweep = given.pop("sweep", None)
    merged = _merge({k: v for k, v in DEFAULTS.items() if k != "sweep"}, given, "", errors)
    tr, data, topo = merged["train"], merged["data"], merged["topology"]

    n_before = len(errors)
    for key in ("n", "T", "K", "rank", "batch_size", "seed"):
        if not _is_int(tr[key]):
            errors.append(f"train.{key}: must be an integer")
    if not (tr["eta"] == "auto" or _is_num(tr["eta"])):
        errors.append("train.eta: must be a positive number or 'auto'")
    if tr["sigma_init"] is not None and not _is_num(tr["sigma_init"]):
        errors.append("train.sigma_init: must be a number or null")
    if tr["quant_bits"] is not None and not _is_int(tr["quant_bits"]):
        errors.append("train.quant_bits: must be an integer or null")
    train = None
    if len(errors) == n_before and set(tr) <= set(DEFAULTS["train"]):
        train = TrainConfig(**tr)
        errors.extend(f"train.{e.split(' ')[0]}: {e}" for e in train.errors())

    if data["kind"] not in ("classification", "regression"):
        errors.append("data.kind: must be 'classification' or 'regression'")
    for key in ("m", "d2", "num_classes", "d1", "base_offset_rank"):
        if not _is_int(data[key]) or data[key] < (0 if key == "base_offset_rank" else 1):
            errors.append(f"data.{key}: must be a positive integer")
    for key in ("sigma_noise", "separation", "spread", "base_offset_scale"):
        if not _is_num(data[key]) or data[key] < 0:
            errors.append(f"data.{key}: must be a nonnegative number")
    if data["kind"] == "classification" and _is_int(data["num_classes"]) and data["num_classes"] < 2:
        errors.append("data.num_classes: need at least 2 classes")
    part = data["partition"]
    if part["scheme"] not in PARTITION_SCHEMES:
        errors.append(f"data.partition.scheme: must be one of {', '.join(PARTITION_SCHEMES)}")
    if part["scheme"] == "dirichlet" and not (_is_num(part["alpha"]) and part["alpha"] > 0):
        errors.append("data.partition.alpha: must be positive")
    if part["scheme"] != "iid" and data["kind"] != "classification":
        errors.append("data.partition.scheme: label-based partitions need classification data")
    if part["scheme"] == "fixed_ratio":
        r = part["ratios"]
        ok = isinstance(r, list) and all(isinstance(row, list) for row in r)
        if not ok:
            errors.append("data.partition.ratios: must be a list of per-client rows")
        elif _is_int(tr["n"]) and len(r) != tr["n"]:
            errors.append(f"data.partition.ratios: {len(r)} rows but train.n = {tr['n']}")

    if topo["kind"] not in TOPOLOGIES:
        errors.append(f"topology.kind: unknown topology {topo['kind']!r}; valid options: {', '.join(TOPOLOGIES)}")
    if not (_is_num(topo["p_c"]) and 0 < topo["p_c"] <= 1):
        errors.append("topology.p_c: must be in (0, 1]")
    if topo["kind"] == "explicit" and not topo["file"]:
        errors.append("topology.file: required for explicit topologies")
    if topo["kind"] == "ring" and _is_int(tr["n"]) and tr["n"] < 3:
        errors.append("topology.kind: ring needs n >= 3")

    if not _is_int(merged["replicates"]) or merged["replicates"] < 1:
        errors.append("replicates: must be an integer >= 1")
    if not isinstance(merged["output"], str):
        errors.append("output: must be a path string")

    if sweep is not None:
        errors.extend(_sweep_errors(sweep, tr))

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(train, data, topo, sweep, merged["replicates"], merged["output"])


def _sweep_errors(sweep, tr) -> list[str]:
    if not isinstance(sweep, dict):
        return ["sweep: must be an object with 'axis' and 'values'"]
    errs = []
    extra = set(sweep) - {"axis", "values", "kt_budget"}
    if extra:
        errs.append(f"sweep: unknown fields {sorted(extra)}")
    axis, values = sweep.get("axis"), sweep.get("values")
    if axis not in SWEEP_AXES:
        errs.append(f"sweep.axis: must be one of {', '.join(SWEEP_AXES)}")
    if not isinstance(values, list) or not values:
        return errs + ["sweep.values: must be a non-empty list"]
    for v in values:
        if axis == "p_c" and not (_is_num(v) and 0 < v <= 1):
            errs.append(f"sweep.values: p_c {v!r} not in (0, 1]")
        elif axis == "alpha" and not (_is_num(v) and v > 0):
            errs.append(f"sweep.values: alpha {v!r} must be positive")
        elif axis == "quant_bits" and not (_is_int(v) and 2 <= v <= 8):
            errs.append(f"sweep.values: quant_bits {v!r} not in [2, 8]")
        elif axis in ("n", "K", "T", "rank") and not (_is_int(v) and v >= (2 if axis == "n" else 1)):
            errs.append(f"sweep.values: {axis} {v!r} out of range")
    budget = sweep.get("kt_budget")
    if budget is not None:
        if axis != "K":
            errs.append("sweep.kt_budget: only valid when sweeping K")
        elif not _is_int(budget) or any(_is_int(v) and v > 0 and budget % v for v in values):
            errs.append("sweep.kt_budget: must be an integer divisible by every K value")
    return errs


@dataclass(frozen=True)
class Task:
    spec: ModelSpec
    ds: Dataset
    w0: np.ndarray
    partition: Partition
    q: MixingMatrix | None


def build_mixing(topo: dict, n: int, seed: int) -> MixingMatrix:
    kind = topo["kind"]
    if kind == "ring":
        return mixing_from_ring(build_ring(n))
    if kind == "er":
        return mixing_from_laplacian(
            build_erdos_renyi(n, topo["p_c"], rngmod.stream(seed, "topology")), tag=f"er(n={n}, p_c={topo['p_c']})"
        )
    if kind == "complete":
        return mixing_complete(n)
    if kind == "exponential":
        return mixing_exponential(n)
    if kind == "explicit":
        mm = load_topology(topo["file"])
        if mm.n != n:
            raise ConfigError([f"topology.file: matrix is {mm.n}x{mm.n} but train.n = {n}"])
        return mm
    raise ConfigError([f"topology.kind: unknown topology {kind!r}; valid options: {', '.join(TOPOLOGIES)}"])


def build_task(cfg: ExperimentConfig, seed: int) -> Task:
    d = cfg.data
    n = cfg.train.n
    if d["kind"] == "classification":
        ds = generate_classification(
            d["m"], d["d2"], d["num_classes"], d["sigma_noise"], rngmod.stream(seed, "data"),
            separation=d["separation"], spread=d["spread"],
        )
        spec = ModelSpec("multinomial_logistic", d["num_classes"], d["d2"])
    else:
        ds = generate_regression(d["m"], d["d2"], d["d1"], d["sigma_noise"], rngmod.stream(seed, "data"))
        spec = ModelSpec("least_squares", d["d1"], d["d2"])
    w0 = make_base_weights(ds.w_star, d["base_offset_rank"], d["base_offset_scale"], rngmod.stream(seed, "base"))
    p = d["partition"]
    prng = rngmod.stream(seed, "partition")
    if p["scheme"] == "iid":
        part = partition_iid(ds, n, prng)
    elif p["scheme"] == "dirichlet":
        part = partition_dirichlet(ds, n, p["alpha"], prng)
    else:
        part = partition_fixed_ratio(ds, p["ratios"], prng, normalize=p.get("normalize", True))
    q = None if cfg.train.variant == "centralized" else build_mixing(cfg.topology, n, seed)
    return Task(spec, ds, w0, part, q)


def run_point(cfg: ExperimentConfig, seed: int) -> tuple[RunResult, Task]:
    train = TrainConfig(**{**asdict(cfg.train), "seed": seed})
    task = build_task(cfg, seed)
    return run(train, task.spec, task.ds, task.partition, task.w0, task.q), task


def bound_check(res: RunResult, task: Task, cfg: ExperimentConfig) -> dict:
    """Plug-in consensus bound per round; violations are warnings, not failures."""
    if task.q is None:
        return {"status": "n/a"}
    recs = res.records
    c_a = max(r.max_norm_a for r in recs)
    c_b = max(r.max_norm_b for r in recs)
    g = res.max_grad_norm
    viol_a = viol_b = 0
    for r in recs:
        ba, bb = lemma1_bound(task.q, g, c_a, c_b, cfg.train.K, cfg.train.resolved_eta, r.t, res.init_sq_norm_a)
        viol_a += r.dev_a > ba
        viol_b += r.dev_b > bb
    return {
        "G_hat": g, "C_A_hat": c_a, "C_B_hat": c_b,
        "violations_a": int(viol_a), "violations_b": int(viol_b),
        "status": "ok" if viol_a + viol_b == 0 else "WARN",
    }


def summarize(label, value, seed, res: RunResult, task: Task, cfg: ExperimentConfig) -> dict:
    last = res.rounds[-1]
    spec, ds, shards = task.spec, task.ds, task.partition.shards
    client_loss = float(np.mean([global_loss(spec, res.w0 + b @ a, ds, shards) for a, b in zip(last.a, last.b)]))
    recs = res.records
    d1, r = last.b[0].shape
    d2 = last.a[0].shape[1]
    degrees = task.q.degrees() if task.q is not None else np.ones(cfg.train.n, dtype=int)
    entries = d1 * r if cfg.train.variant == "dec_ffa_lora" else None
    cost = comm_cost(d1, d2, r, cfg.train.n, degrees=degrees, rounds=cfg.train.T, entries=entries)
    return {
        "point": label,
        "value": value,
        "seed": seed,
        "n": cfg.train.n,
        "T": cfg.train.T,
        "K": cfg.train.K,
        "eta": cfg.train.resolved_eta,
        "beta": task.q.beta if task.q is not None else 0.0,
        "rho": task.q.rho if task.q is not None else 0.5,
        "final": asdict(res.final),
        "best_train_loss": res.best.train_loss,
        "mean_client_loss": client_loss,
        "avg_stat_metric": float(np.mean([x.stat_metric for x in recs[:-1]])),
        "selected_round": res.selected_round,
        "bytes_per_client_round_max": cost.per_client_max,
        "bytes_per_client_round_mean": cost.per_client_mean,
        "bytes_total": cost.total,
        "consensus_bound": bound_check(res, task, cfg),
    }


def _csv_name(label: str, seed: int) -> str:
    return f"metrics_{label}_seed{seed}.csv"


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def run_experiment(cfg: ExperimentConfig, out_dir: str | os.PathLike | None = None) -> dict:
    """Run every sweep point and replicate and write CSV/JSON outputs.

    On failure, files written by this call are removed before re-raising.
    """
    out = Path(out_dir if out_dir is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    jobs = [
        (label, value, pcfg, cfg.train.seed + rep)
        for label, value, pcfg in cfg.points()
        for rep in range(cfg.replicates)
    ]
    threads = max(1, int(os.environ.get(THREADS_ENV, "1")))

    def work(job):
        label, value, pcfg, seed = job
        res, task = run_point(pcfg, seed)
        path = out / _csv_name(label, seed)
        path.write_text(records_to_csv(res.records))
        written.append(path)
        return summarize(label, value, seed, res, task, pcfg)

    try:
        path = out / "config_echo.json"
        _dump(cfg.to_json(), path)
        written.append(path)
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                runs = list(pool.map(work, jobs))
        else:
            runs = [work(j) for j in jobs]
        summary = {"columns": list(CSV_COLUMNS), "runs": runs, "points": _point_means(runs)}
        if cfg.sweep and cfg.sweep["axis"] == "T" and len(cfg.sweep["values"]) >= 4:
            summary["rate_slope_avg_stat_metric"] = rate_slope(
                [(p["T"], p["avg_stat_metric"]) for p in summary["points"]]
            )
        path = out / "summary.json"
        _dump(summary, path)
        written.append(path)
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return summary


def _point_means(runs: list[dict]) -> list[dict]:
    by_point: dict[str, list[dict]] = {}
    for r in runs:
        by_point.setdefault(r["point"], []).append(r)
    out = []
    for label, rs in by_point.items():
        out.append({
            "point": label,
            "value": rs[0]["value"],
            "T": rs[0]["T"],
            "replicates": len(rs),
            "final_train_loss": float(np.mean([r["final"]["train_loss"] for r in rs])),
            "mean_client_loss": float(np.mean([r["mean_client_loss"] for r in rs])),
            "final_stat_metric": float(np.mean([r["final"]["stat_metric"] for r in rs])),
            "avg_stat_metric": float(np.mean([r["avg_stat_metric"] for r in rs])),
        })
    return out


def topology_report(cfg: ExperimentConfig) -> list[dict]:
    """``n``, ``beta``, ``rho`` and degree statistics for each sweep point's topology."""
    rows = []
    for label, _, pcfg in cfg.points():
        if pcfg.train.variant == "centralized":
            rows.append({"point": label, "n": pcfg.train.n, "topology": "server"})
            continue
        q = build_mixing(pcfg.topology, pcfg.train.n, pcfg.train.seed)
        deg = q.degrees()
        rows.append({
            "point": label,
            "topology": q.tag,
            "n": q.n,
            "beta": q.beta,
            "rho": q.rho,
            "degree_min": int(deg.min()),
            "degree_mean": float(deg.mean()),
            "degree_max": int(deg.max()),
        })
    return rows
