"""Experiment harness: timed method runs, machine-readable results, and
dataset validation.

Benchmark rows carry wall-clock time per phase (walk generation vs seed
selection) and an allocator-reported peak-memory estimate; every reported
score is re-derived from the emitted seed set by exact propagation before it
is written, so the CSV never contains estimator output.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
import tracemalloc
from dataclasses import dataclass, field, asdict

import numpy as np

from . import diffusion, randwalk, scores, selection, sketch
from .graph import (DataError, Dataset, ScoreSpec, SeedSet, read_config,
                    _parse_edge_file, _parse_value_file, _uniform_policy,
                    load_dataset, STOCHASTIC_TOL)


def config_hash(cfg: dict) -> str:
    """SHA-256 over the config file and every data file it references."""
    h = hashlib.sha256()
    paths = [cfg["path"], *cfg["edge_files"], cfg["opinion_file"]]
    if cfg.get("stubbornness_file"):
        paths.append(cfg["stubbornness_file"])
    for p in paths:
        with open(p, "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    method: str
    score_kind: str
    target: int
    p: int
    omega: list | None
    k: int
    horizon: int
    rng_seed: int | None
    provenance: dict
    walkgen_seconds: float
    select_seconds: float
    peak_mem_bytes: int
    base_score: float
    trace: list = field(default_factory=list)   # [[node label, exact score], ...]
    extras: dict = field(default_factory=dict)

    def write(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


def run_method(ds: Dataset, method: str, spec: ScoreSpec, k: int, horizon: int,
               rng_seed: int = 0, celf: bool = False, track_mem: bool = False,
               rw_params: dict | None = None, rs_params: dict | None = None):
    """Run one selection method with phase timing.

    Returns (SelectionResult, walkgen_seconds, select_seconds, peak_bytes).
    ``method`` is one of dm | rw | rs | sandwich | baseline:<name>.
    """
    graph, campaigns = ds.graph, ds.campaigns
    rw_params = dict(rw_params or {})
    rs_params = dict(rs_params or {})
    if track_mem:
        tracemalloc.start()
    walkgen = 0.0
    t0 = time.perf_counter()

    if method == "dm":
        t0 = time.perf_counter()
        res = selection.greedy_select(graph, campaigns, spec, k, horizon,
                                      evaluator="exact", celf=celf)
        select_s = time.perf_counter() - t0
    elif method == "rw":
        delta = rw_params.pop("delta", 0.1)
        rho = rw_params.pop("rho", 0.9)
        if spec.kind == "cumulative":
            lam = randwalk.lambda_cumulative(delta, rho)
            g0 = time.perf_counter()
            store = randwalk.generate_walks(graph, campaigns[spec.target], horizon,
                                            lam, rng_seed)
            walkgen = time.perf_counter() - g0
            t0 = time.perf_counter()
            res = randwalk.rw_greedy(graph, campaigns, spec, k, horizon,
                                     delta=delta, rho=rho, rng_seed=rng_seed,
                                     store=store, **rw_params)
            select_s = time.perf_counter() - t0
            res.extras["provenance"]["lambda"] = lam
        else:
            t0 = time.perf_counter()
            res = randwalk.rw_greedy(graph, campaigns, spec, k, horizon,
                                     delta=delta, rho=rho, rng_seed=rng_seed,
                                     **rw_params)
            select_s = time.perf_counter() - t0
    elif method == "rs":
        theta = rs_params.pop("theta", None)
        if theta is None:
            theta, prov = sketch.choose_theta(
                graph, campaigns, spec, k, horizon, rng_seed=rng_seed,
                epsilon=rs_params.pop("epsilon", 0.1), l=rs_params.pop("l", 1.0),
                rho=rs_params.pop("rho", 0.9),
                mode=rs_params.pop("theta_mode", "formula"))
        else:
            prov = {"mode": "explicit", "theta": int(theta)}
        g0 = time.perf_counter()
        store = sketch.generate_sketches(graph, campaigns[spec.target], horizon,
                                         int(theta), rng_seed)
        walkgen = time.perf_counter() - g0
        t0 = time.perf_counter()
        res = sketch.rs_greedy(graph, campaigns, spec, k, horizon,
                               rng_seed=rng_seed, store=store)
        select_s = time.perf_counter() - t0
        res.extras["provenance"] = prov
    elif method == "sandwich":
        t0 = time.perf_counter()
        res = selection.sandwich_select(graph, campaigns, spec, k, horizon)
        select_s = time.perf_counter() - t0
    elif method.startswith("baseline:"):
        name = method.split(":", 1)[1]
        t0 = time.perf_counter()
        seeds = selection.baseline_select(graph, name, k, rng_seed=rng_seed,
                                          candidate=spec.target)
        select_s = time.perf_counter() - t0
        base, trace = selection.exact_prefix_trace(graph, campaigns, spec, horizon,
                                                   list(seeds.nodes))
        res = selection.SelectionResult(seeds, trace, base)
    else:
        raise DataError(f"unknown method {method!r}")

    peak = 0
    if track_mem:
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
    return res, walkgen, select_s, int(peak)


def exact_score_of(ds: Dataset, spec: ScoreSpec, seeds: SeedSet, horizon: int) -> float:
    snap = scores.OpinionSnapshot(
        diffusion.snapshot_matrix(ds.graph, ds.campaigns, horizon, seeds), t=horizon)
    return scores.score(snap, spec)


def bench(ds: Dataset, methods, spec: ScoreSpec, k_grid, horizon: int,
          repeats: int = 1, out_csv: str | None = None, rng_seed: int = 0,
          celf: bool = True, track_mem: bool = False) -> list[dict]:
    """Run a method x k x trial grid and collect one row per run.

    Row columns: method, k, score_value, select_seconds, walkgen_seconds,
    peak_mem_bytes, trial.  score_value is re-validated by exact diffusion.
    """
    rows = []
    for method in methods:
        for k in k_grid:
            for trial in range(repeats):
                res, walkgen, select_s, peak = run_method(
                    ds, method, spec, k, horizon,
                    rng_seed=rng_seed + trial, celf=celf, track_mem=track_mem)
                value = exact_score_of(ds, spec, res.seeds, horizon)
                rows.append({
                    "method": method, "k": k, "score_value": value,
                    "select_seconds": select_s, "walkgen_seconds": walkgen,
                    "peak_mem_bytes": peak, "trial": trial,
                })
    if out_csv is not None:
        with open(out_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=[
                "method", "k", "score_value", "select_seconds",
                "walkgen_seconds", "peak_mem_bytes", "trial"])
            writer.writeheader()
            writer.writerows(rows)
    return rows


# ---------------------------------------------------------------------------
# dataset validation
# ---------------------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def validate_config(config_path: str, p: int | None = None,
                    omega=None) -> list[CheckResult]:
    """Re-check every input-contract invariant and report one line per check.

    For weight-transform data, raw incoming weights must already sum to 1
    per node (the loader would silently renormalize; declared weights that
    need renormalizing are treated as a data error here).
    """
    results: list[CheckResult] = []

    def add(name, ok, detail=""):
        results.append(CheckResult(name, ok, detail))

    try:
        cfg = read_config(config_path)
    except (DataError, OSError) as exc:
        add("config", False, str(exc))
        return results
    add("config", True, f"{cfg['candidates']} candidates")

    universe: set[str] = set()
    per_cand_rows = []
    parse_ok = True
    for q, path in enumerate(cfg["edge_files"]):
        try:
            rows = _parse_edge_file(path)
        except (DataError, OSError) as exc:
            add("edge-parse", False, str(exc))
            parse_ok = False
            continue
        per_cand_rows.append((q, path, rows))
        for _, s, t, _ in rows:
            universe.add(s)
            universe.add(t)
    if parse_ok:
        add("edge-parse", True, f"{sum(len(r) for _, _, r in per_cand_rows)} edges")

    dup_bad = 0
    range_bad = 0
    for q, path, rows in per_cand_rows:
        seen = {}
        for lineno, s, t, val in rows:
            if (s, t) in seen:
                dup_bad += 1
            seen[(s, t)] = lineno
            if cfg["transform"] == "raw-count" and val < 0:
                range_bad += 1
            if cfg["transform"] == "weight" and not 0.0 <= val <= 1.0:
                range_bad += 1
    add("edge-duplicates", dup_bad == 0, f"{dup_bad} duplicate pairs")
    add("edge-value-range", range_bad == 0, f"{range_bad} out-of-range values")

    stoch_bad = []
    if cfg["transform"] == "weight":
        for q, path, rows in per_cand_rows:
            sums: dict[str, float] = {}
            for _, s, t, val in rows:
                sums[t] = sums.get(t, 0.0) + val
            for node, total in sorted(sums.items()):
                if abs(total - 1.0) > STOCHASTIC_TOL:
                    stoch_bad.append(f"candidate {q + 1} node {node} sums to {total:g}")
    add("stochasticity",
        not stoch_bad,
        stoch_bad[0] if stoch_bad else "all incoming weight sums are 1")

    try:
        op_rows = _parse_value_file(cfg["opinion_file"])
        for _, _, label, _ in op_rows:
            universe.add(label)
        bad_vals = sum(1 for _, _, _, v in op_rows if not 0.0 <= v <= 1.0)
        covered = {(c, lab) for _, c, lab, _ in op_rows}
        missing = [(c, lab) for c in range(cfg["candidates"]) for lab in universe
                   if (c, lab) not in covered]
        add("opinion-range", bad_vals == 0, f"{bad_vals} out-of-range values")
        add("opinion-coverage", not missing,
            f"{len(missing)} missing rows" + (f", first: candidate {missing[0][0] + 1} "
                                              f"node {missing[0][1]}" if missing else ""))
    except (DataError, OSError) as exc:
        add("opinion-parse", False, str(exc))

    if _uniform_policy(cfg["stubbornness"]) is None and cfg.get("stubbornness_file"):
        try:
            st_rows = _parse_value_file(cfg["stubbornness_file"])
            bad_vals = sum(1 for _, _, _, v in st_rows if not 0.0 <= v <= 1.0)
            add("stubbornness-range", bad_vals == 0, f"{bad_vals} out-of-range values")
        except (DataError, OSError) as exc:
            add("stubbornness-parse", False, str(exc))

    if omega is not None:
        om = list(omega)
        ok = all(0.0 <= w <= 1.0 for w in om) and \
            all(om[i] <= om[i - 1] for i in range(1, len(om)))
        add("omega-non-increasing", ok, f"omega={om}")
        if p is not None:
            add("p-in-range", 1 <= p <= cfg["candidates"],
                f"p={p}, r={cfg['candidates']}")

    if all(c.ok for c in results):
        try:
            ds = load_dataset(config_path)
            ds.graph.check_invariants()
            add("loaded-invariants", True,
                f"n={ds.graph.n} m={ds.graph.m} r={ds.graph.r}")
        except DataError as exc:
            add("loaded-invariants", False, str(exc))
    return results
