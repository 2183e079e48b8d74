"""Distortion and search-quality experiments.

Recall is measured against the single true nearest neighbor: Recall@R is the
fraction of queries whose ground-truth rank-1 id appears among the first R
returned ids.
"""

import csv
import io
import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataio import Dataset, atomic_write, exact_knn, read_vecs, write_vecs
from .index import SearchParams, build_ivf_trq, build_multi_index_trq, search_batch
from .pq import pq_mse, train_opq, train_pq
from .rq import ResidualModel, rq_mse, train_rq
from .trq import train_trq, trq_mse
from .vq import child_seed, mse, train_kmeans

__all__ = [
    "RecallCurve",
    "DistortionReport",
    "recall_at_r",
    "ground_truth",
    "train_spec",
    "run_distortion_suite",
    "run_search_suite",
    "evaluate_index",
    "write_csv",
    "write_json",
]


_COUNTERS = ("cells_visited", "transforms", "adc_lookups", "candidates")


@dataclass
class RecallCurve:
    label: str
    points: list
    params: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    per_seed: list = field(default_factory=list)

    def __post_init__(self):
        for _, v in self.points:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"recall {v} outside [0, 1]")

    def recall(self, r):
        return dict(self.points)[r]


@dataclass
class DistortionReport:
    """Mean MSE over seeds with its spread; ``per_level`` for residual models."""

    label: str
    mse: float
    spread: float = 0.0
    per_seed: list = field(default_factory=list)
    per_level: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mse < 0:
            raise ValueError("MSE cannot be negative")


def recall_at_r(results, ground_truth, r_values, label="", params=None):
    """Recall@R for each R in ``r_values`` from per-query results (id arrays or SearchResults)."""
    if ground_truth is None:
        raise ValueError("ground truth is required")
    gt = np.asarray(ground_truth)
    if gt.ndim == 1:
        gt = gt[:, None]
    if gt.ndim != 2 or gt.shape[1] == 0:
        raise ValueError("ground truth must hold at least one id per query")
    if len(results) != gt.shape[0]:
        raise ValueError(f"{len(results)} results for {gt.shape[0]} ground-truth rows")
    r_values = sorted(int(r) for r in r_values)
    if not r_values or r_values[0] < 1:
        raise ValueError("R values must be >= 1")
    # rank of the true nearest neighbor in each result list; inf when absent
    ranks = np.full(len(results), np.inf)
    for q, res in enumerate(results):
        ids = np.asarray(getattr(res, "ids", res))
        hit = np.flatnonzero(ids == gt[q, 0])
        if len(hit):
            ranks[q] = hit[0] + 1
    n = max(len(results), 1)
    points = [(r, float(np.sum(ranks <= r)) / n) for r in r_values]
    return RecallCurve(label, points, dict(params or {}))


def ground_truth(dataset, r=1, cache=None):
    """Exact neighbor ids for the dataset's queries, computed once.

    The result is stored on ``dataset.ground_truth``; with ``cache`` (an
    ``.ivecs`` path) it is also written there and reused when it fits.
    """
    if dataset.queries is None:
        raise ValueError("dataset has no queries")
    gt = dataset.ground_truth
    if gt is not None and gt.shape[0] == len(dataset.queries) and gt.shape[1] >= r:
        return gt
    if cache is not None and os.path.exists(cache):
        gt = read_vecs(cache, "i32")
        if gt.shape[0] == len(dataset.queries) and gt.shape[1] >= r:
            dataset.ground_truth = gt
            return gt
    gt = exact_knn(dataset.vectors, dataset.queries, r)
    if cache is not None:
        write_vecs(cache, gt, "i32")
    dataset.ground_truth = gt
    return gt


# ---------------------------------------------------------------------------
# distortion


def _label(spec):
    return spec.get("label") or ",".join(f"{k}={v}" for k, v in spec.items())


def train_spec(data, spec, seed):
    """Train one model described by ``spec`` and return ``(model, mse, per_level)``.

    Kinds and their keys:

    * ``vq``: ``k``
    * ``pq`` / ``opq``: ``m``, ``k``; ``outer_iters`` for opq. With ``k1`` the
      product quantizer encodes residuals of a ``k1``-centroid k-means level.
    * ``rq``: ``levels`` (list of level specs)
    * ``trq``: ``k1``, ``level2``, ``ia_iters``

    The returned MSE is always recomputed from the trained model.
    """
    kind = spec["kind"]
    max_iters = spec.get("max_iters", 100)
    if kind == "vq":
        cb, labels, _ = train_kmeans(data, spec["k"], max_iters=max_iters, seed=seed)
        return cb, mse(data, cb, labels), []
    if kind in ("pq", "opq"):
        target, coarse, per_level = data, None, []
        if spec.get("k1"):
            coarse, labels, coarse_err = train_kmeans(data, spec["k1"], max_iters=max_iters, seed=seed)
            target = data - coarse.centroids[labels]
            per_level = [coarse_err]
            seed = child_seed(seed, 1)
        if kind == "pq":
            pcb = train_pq(target, spec["m"], spec["k"], max_iters=max_iters, seed=seed)
            model, err = pcb, pq_mse(target, pcb)
        else:
            rot, pcb = train_opq(target, spec["m"], spec["k"], outer_iters=spec.get("outer_iters", 30),
                                 seed=seed, max_iters=max_iters)
            model, err = (rot, pcb), pq_mse(target @ rot.T, pcb)
        if coarse is not None:
            model = (coarse, model)
            per_level.append(err)
        return model, err, per_level
    if kind == "rq":
        model, _ = train_rq(data, spec["levels"], seed=seed, max_iters=max_iters)
        per_level = [rq_mse(data, ResidualModel(model.levels[:h])) for h in range(1, model.h + 1)]
        return model, per_level[-1], per_level
    if kind == "trq":
        model, _ = train_trq(data, spec["k1"], spec["level2"], ia_iters=spec.get("ia_iters", 20),
                             seed=seed, max_iters=max_iters)
        err = trq_mse(data, model)
        return model, err, [rq_mse(data, ResidualModel([model.level1])), err]
    raise ValueError(f"unknown model kind {kind!r}")


def run_distortion_suite(data, specs, seeds=(0,)):
    """Train every spec under every seed on ``data``; one report per spec."""
    data = data.vectors if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    reports = []
    for spec in specs:
        errs, levels = [], []
        for s in seeds:
            _, err, per_level = train_spec(data, spec, s)
            errs.append(err)
            levels.append(per_level)
        per_level = np.mean(levels, axis=0).tolist() if levels[0] else []
        reports.append(DistortionReport(
            _label(spec), float(np.mean(errs)), float(np.std(errs)), errs, per_level,
            {k: v for k, v in spec.items() if k != "label"} | {"seeds": seeds},
        ))
    return reports


# ---------------------------------------------------------------------------
# search


def _build(data, spec, seed, coarse_cache):
    spec = dict(spec)
    kind = spec.pop("type", "ivf")
    spec.pop("label", None)
    if kind == "ivf":
        key = (spec["k1"], seed, spec.get("max_iters", 100))
        if key not in coarse_cache:
            coarse_cache[key] = train_kmeans(data, spec["k1"], max_iters=key[2], seed=seed)[0]
        return build_ivf_trq(data, seed=seed, level1=coarse_cache[key], **spec)
    if kind == "multi":
        return build_multi_index_trq(data, seed=seed, **spec)
    raise ValueError(f"unknown index type {kind!r}")


def evaluate_index(index, queries, gt, params, r_values=(1, 10, 100), threads=1, label=""):
    """Search every query once and return a single-run :class:`RecallCurve`."""
    params = params if isinstance(params, SearchParams) else SearchParams(**params)
    params = SearchParams(params.w, params.shortlist, max(params.top_r, max(r_values)))
    start = time.perf_counter()
    results = search_batch(index, queries, params, threads=threads)
    elapsed = time.perf_counter() - start
    curve = recall_at_r(results, gt, r_values, label,
                        {"w": params.w, "shortlist": params.shortlist})
    curve.timing = {
        name: float(np.mean([getattr(r.stats, name) for r in results])) for name in _COUNTERS
    }
    curve.timing["wall_ms"] = 1000.0 * elapsed / max(len(results), 1)
    return curve


def run_search_suite(dataset, index_specs, params_grid, seeds=(0,), r_values=(1, 10, 100),
                     threads=1, gt_cache=None):
    """Build each index per seed, search all queries per parameter set, return recall curves.

    Each curve averages recall over seeds and carries per-query means of the
    wall-clock time and the deterministic counters.
    """
    gt = ground_truth(dataset, 1, gt_cache)
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    params_grid = [p if isinstance(p, SearchParams) else SearchParams(**p) for p in params_grid]
    acc = {}
    coarse_cache = {}
    for s in seeds:
        coarse_cache.clear()
        for si, spec in enumerate(index_specs):
            index = _build(dataset.vectors, spec, s, coarse_cache)
            for pi, params in enumerate(params_grid):
                curve = evaluate_index(index, dataset.queries, gt, params, r_values, threads)
                acc.setdefault((si, pi), []).append((curve.points, curve.timing))
    curves = []
    for si, spec in enumerate(index_specs):
        for pi, params in enumerate(params_grid):
            runs = acc[(si, pi)]
            points = [(r, float(np.mean([run[0][k][1] for run in runs])))
                      for k, r in enumerate(sorted(r_values))]
            timing = {name: float(np.mean([run[1][name] for run in runs])) for name in runs[0][1]}
            label = spec.get("label") or _label(spec)
            used = {k: v for k, v in spec.items() if k != "label"}
            used |= {"w": params.w, "shortlist": params.shortlist, "seeds": seeds}
            curves.append(RecallCurve(label, points, used, timing,
                                      [dict(run[0]) for run in runs]))
    return curves


# ---------------------------------------------------------------------------
# output


def _rows(items, wall_clock):
    timing_keys = (("wall_ms",) if wall_clock else ()) + _COUNTERS
    for item in items:
        params = json.dumps(item.params, sort_keys=True, default=str)
        if isinstance(item, RecallCurve):
            for r, v in item.points:
                yield {"model": item.label, "params": params, "R": r, "recall": v,
                       **{k: item.timing.get(k, "") for k in timing_keys}}
        else:
            yield {"model": item.label, "params": params, "mse": item.mse, "spread": item.spread,
                   "per_level": json.dumps(item.per_level)}


def write_csv(path, items, wall_clock=False):
    """One row per (model, params, R) for recall curves, per model for distortion reports.

    Wall-clock timings vary between runs, so they are only written when
    ``wall_clock`` is set; the counters are always written.
    """
    rows = list(_rows(items, wall_clock))
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    atomic_write(path, buf.getvalue())


def write_json(path, items, wall_clock=False):
    payload = []
    for item in items:
        entry = {"type": type(item).__name__} | asdict(item)
        if not wall_clock and "timing" in entry:
            entry["timing"].pop("wall_ms", None)
        payload.append(entry)
    atomic_write(path, json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
