"""Command-line entry point: ``trqann <command> [flags]``.

Commands: ``gen``, ``train``, ``encode``, ``build-index``, ``search``, ``eval``.
A plain ``key = value`` file given with ``--config`` supplies defaults;
explicit flags override it. Every command is deterministic given its flags
and exits non-zero without leaving output files behind on failure.
"""

import argparse
import io
import json
import os
import sys

import numpy as np

from . import dataio
from .dataio import ArchiveError, OpqModel, gen_synthetic, load_dataset, load_model, read_vecs
from .dataio import save_model, write_vecs
from .eval import RecallCurve, evaluate_index, ground_truth, run_distortion_suite, train_spec
from .eval import write_csv, write_json
from .index import IvfIndex, MultiIndex, SearchParams, build_ivf_trq, build_multi_index_trq
from .index import search_batch
from .pq import ProductCodebook, encode_pq, train_opq
from .rq import ResidualModel, encode_rq, train_rq
from .trq import TrqModel, encode_trq, train_trq
from .vq import Codebook, assign, train_kmeans

MODEL_KINDS = ("vq", "pq", "opq", "rq", "trq")
INDEX_KINDS = ("ivf", "multi")


class CliError(Exception):
    pass


def int_list(text):
    try:
        values = [int(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment. Keys use flag names."""
    out = {}
    with open(path) as f:
        for n, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{n}: expected key = value")
            key, value = (p.strip() for p in line.split("=", 1))
            out[key.lstrip("-").replace("-", "_")] = value
    return out


# ---------------------------------------------------------------------------
# argument parsing


def _common(p, *names):
    add = {
        "dataset": lambda: p.add_argument("--dataset", help="base vectors (.fvecs/.bvecs)"),
        "queries": lambda: p.add_argument("--queries", help="query vectors"),
        "ground_truth": lambda: p.add_argument("--ground-truth", help="neighbor ids (.ivecs)"),
        "model": lambda: p.add_argument("--model", help="model archive"),
        "index": lambda: p.add_argument("--index", help="index archive"),
        "k1": lambda: p.add_argument("--k1", type=int, default=256),
        "k2": lambda: p.add_argument("--k2", type=int, default=256),
        "m": lambda: p.add_argument("--m", type=int, default=8),
        "h": lambda: p.add_argument("--h", type=int, default=2),
        "ia_iters": lambda: p.add_argument("--ia-iters", type=int, default=20),
        "opq_iters": lambda: p.add_argument("--opq-iters", type=int, default=30),
        "max_iters": lambda: p.add_argument("--max-iters", type=int, default=100),
        "w": lambda: p.add_argument("--w", type=int_list, default=[6]),
        "shortlist": lambda: p.add_argument("--shortlist", type=int_list, default=[10000]),
        "top_r": lambda: p.add_argument("--top-r", type=int, default=100),
        "seed": lambda: p.add_argument("--seed", type=int, default=0),
        "threads": lambda: p.add_argument("--threads", type=int, default=1),
        "out": lambda: p.add_argument("--out", help="output path"),
        "format": lambda: p.add_argument("--format", choices=("csv", "json"), default="csv"),
    }
    for name in names:
        add[name]()


def build_parser():
    parser = argparse.ArgumentParser(prog="trqann", description="Quantizer training and ANN index tools.")
    parser.add_argument("--config", help="key = value defaults file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic dataset")
    p.add_argument("--kind", default="rotated-clones",
                   choices=("clustered-anisotropic", "rotated-clones", "product-independent"))
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--clusters", type=int, default=8)
    p.add_argument("--n-queries", type=int, default=0)
    p.add_argument("--gt-depth", type=int, default=10)
    _common(p, "queries", "ground_truth", "seed", "out")

    p = sub.add_parser("train", help="train a quantizer and write its archive")
    p.add_argument("--kind", choices=MODEL_KINDS, default="trq")
    _common(p, "dataset", "k1", "k2", "m", "h", "ia_iters", "opq_iters", "max_iters", "seed", "out")

    p = sub.add_parser("encode", help="encode a dataset with a trained model")
    _common(p, "dataset", "model", "out")

    p = sub.add_parser("build-index", help="build an IVF or multi-index archive")
    p.add_argument("--kind", choices=INDEX_KINDS, default="ivf")
    p.add_argument("--transforms", choices=("trq", "identity", "opq"), default="trq")
    p.add_argument("--global-rotation", action="store_true")
    _common(p, "dataset", "index", "k1", "k2", "m", "ia_iters", "opq_iters", "max_iters", "seed",
            "out")

    p = sub.add_parser("search", help="search queries against an index")
    _common(p, "index", "queries", "w", "shortlist", "top_r", "threads", "out", "format")

    p = sub.add_parser("eval", help="recall or distortion suite")
    p.add_argument("--suite", choices=("search", "distortion"), default="search")
    p.add_argument("--kind", default="ivf",
                   help="index kind (ivf|multi) for search; comma list of model kinds for distortion")
    p.add_argument("--transforms", choices=("trq", "identity", "opq"), default="trq")
    p.add_argument("--global-rotation", action="store_true")
    p.add_argument("--r-values", type=int_list, default=[1, 10, 100])
    p.add_argument("--seeds", type=int_list, help="seeds to average over (default: --seed)")
    p.add_argument("--wall-clock", action="store_true", help="include wall-clock time in output")
    _common(p, "dataset", "queries", "ground_truth", "index", "k1", "k2", "m", "h", "ia_iters",
            "opq_iters", "max_iters", "w", "shortlist", "seed", "threads", "out", "format")
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        config = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in sub._actions}
        unknown = sorted(set(config) - set(actions))
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(unknown)}")
        for key, value in config.items():
            if isinstance(actions[key], argparse._StoreTrueAction):
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise CliError(f"config key {key} expects true or false, got {value!r}")
                config[key] = value.lower() in ("true", "1", "yes")
        sub.set_defaults(**config)
        args = parser.parse_args(argv)
    return args


# ---------------------------------------------------------------------------
# helpers


class Outputs:
    """Track written files; remove them all if the command fails."""

    def __init__(self):
        self.paths = []

    def claim(self, path):
        if path is None:
            raise CliError("an output path is required (--out)")
        self.paths.append(path)
        return path

    def rollback(self):
        for p in self.paths:
            if os.path.exists(p):
                os.unlink(p)


def _need(args, *names):
    for name in names:
        value = getattr(args, name)
        if value is None:
            raise CliError(f"--{name.replace('_', '-')} is required")
        if name in ("dataset", "queries", "model", "index") and not os.path.exists(value):
            raise CliError(f"no such file: {value}")


def _single(values, flag):
    if len(values) != 1:
        raise CliError(f"{flag} takes a single value for this command")
    return values[0]


def _level2(args):
    return ("pq", args.k2, args.m) if args.m > 1 else ("kmeans", args.k2)


def _fmt(x):
    return repr(float(x))


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args, out, outputs):
    total = args.n + args.n_queries
    ds = gen_synthetic(args.kind, args.n, args.d, args.clusters, seed=args.seed,
                       n_queries=args.n_queries)
    base = ds.vectors.astype(np.float32)
    write_vecs(outputs.claim(args.out), base)
    if args.n_queries:
        queries = ds.queries.astype(np.float32)
        if args.queries:
            write_vecs(outputs.claim(args.queries), queries)
        if args.ground_truth:
            gt = dataio.exact_knn(base.astype(np.float64), queries.astype(np.float64),
                                  min(args.gt_depth, args.n))
            write_vecs(outputs.claim(args.ground_truth), gt)
    out.write(f"wrote {total} vectors of dimension {args.d}\n")


def train_model(args, data):
    """Train the model selected by ``--kind``; return ``(model, mse, trace)``."""
    kind = args.kind
    if kind == "vq":
        cb, labels, err = train_kmeans(data, args.k1, max_iters=args.max_iters, seed=args.seed)
        return cb, err, []
    if kind == "pq":
        model, err, _ = train_spec(data, {"kind": "pq", "m": args.m, "k": args.k2,
                                          "max_iters": args.max_iters}, args.seed)
        return model, err, []
    if kind == "opq":
        trace = []
        rot, pcb = train_opq(data, args.m, args.k2, outer_iters=args.opq_iters, seed=args.seed,
                             max_iters=args.max_iters, trace=trace)
        model = OpqModel(rot, pcb)
        return model, trace[-1], trace
    if kind == "rq":
        if args.h < 1:
            raise CliError("--h must be >= 1")
        specs = [args.k1] + [_level2(args)] * (args.h - 1)
        model, per_level = train_rq(data, specs, seed=args.seed, max_iters=args.max_iters)
        return model, per_level[-1], per_level
    model, trace = train_trq(data, args.k1, _level2(args), ia_iters=args.ia_iters, seed=args.seed,
                             max_iters=args.max_iters)
    return model, trace[-1], trace


def cmd_train(args, out, outputs):
    _need(args, "dataset")
    data = read_vecs(args.dataset).astype(np.float64)
    path = outputs.claim(args.out)
    model, err, trace = train_model(args, data)
    save_model(path, model)
    out.write(f"kind {args.kind}\n")
    out.write(f"mse {_fmt(err)}\n")
    if trace:
        out.write("mse_trace " + " ".join(_fmt(v) for v in trace) + "\n")


def encode_with(model, data):
    if isinstance(model, Codebook):
        return assign(data, model)[:, None]
    if isinstance(model, ProductCodebook):
        return encode_pq(data, model)
    if isinstance(model, OpqModel):
        return encode_pq(data @ model.rotation.T, model.pcb)
    if isinstance(model, ResidualModel):
        return encode_rq(data, model)
    if isinstance(model, TrqModel):
        labels, codes = encode_trq(data, model)
        return np.column_stack([labels, codes])
    raise CliError(f"cannot encode with a {type(model).__name__}")


def cmd_encode(args, out, outputs):
    _need(args, "dataset", "model")
    model = load_model(args.model)
    codes = encode_with(model, read_vecs(args.dataset).astype(np.float64))
    write_vecs(outputs.claim(args.out), codes, "i32")
    out.write(f"encoded {codes.shape[0]} vectors into {codes.shape[1]} code columns\n")


def build_index(args, data):
    common = dict(ia_iters=args.ia_iters, seed=args.seed, max_iters=args.max_iters,
                  opq_iters=args.opq_iters)
    if args.kind == "ivf":
        return build_ivf_trq(data, args.k1, args.m, args.k2, transforms=args.transforms, **common)
    if args.kind == "multi":
        if args.transforms == "opq":
            raise CliError("the multi-index supports --transforms trq or identity")
        return build_multi_index_trq(data, args.k1, args.m, args.k2, transforms=args.transforms,
                                     use_global_rotation=args.global_rotation, **common)
    raise CliError(f"unknown index kind {args.kind!r}")


def cmd_build_index(args, out, outputs):
    _need(args, "dataset")
    target = args.index or args.out
    path = outputs.claim(target)
    index = build_index(args, read_vecs(args.dataset).astype(np.float64))
    save_model(path, index)
    sizes = np.diff(index.offsets)
    out.write(f"index {args.kind} vectors {index.size} cells {len(sizes)} "
              f"non_empty {int(np.count_nonzero(sizes))}\n")


def _load_index(path):
    index = load_model(path)
    if not isinstance(index, (IvfIndex, MultiIndex)):
        raise CliError(f"{path} holds a {type(index).__name__}, not an index")
    return index


def cmd_search(args, out, outputs):
    _need(args, "index", "queries")
    index = _load_index(args.index)
    queries = read_vecs(args.queries).astype(np.float64)
    params = SearchParams(_single(args.w, "--w"), _single(args.shortlist, "--shortlist"),
                          args.top_r)
    results = search_batch(index, queries, params, threads=args.threads)
    buf = io.StringIO()
    if args.format == "json":
        payload = [{"query": q, "ids": r.ids.tolist(), "distances": r.distances.tolist(),
                    "stats": vars(r.stats)} for q, r in enumerate(results)]
        buf.write(json.dumps(payload, indent=1) + "\n")
    else:
        buf.write("query,rank,id,distance\n")
        for q, r in enumerate(results):
            for rank, (i, d) in enumerate(zip(r.ids, r.distances), 1):
                buf.write(f"{q},{rank},{i},{_fmt(d)}\n")
    if args.out:
        dataio.atomic_write(outputs.claim(args.out), buf.getvalue())
    else:
        out.write(buf.getvalue())


def _eval_search(args, seeds, log):
    _need(args, "dataset", "queries")
    ds = load_dataset(args.dataset, args.queries,
                      args.ground_truth if args.ground_truth and os.path.exists(args.ground_truth)
                      else None)
    cache = args.ground_truth or os.path.splitext(args.queries)[0] + ".gt.ivecs"
    gt = ground_truth(ds, 1, cache)
    grid = [SearchParams(w, t, max(args.r_values)) for w in args.w for t in args.shortlist]
    if args.index:
        _need(args, "index")
        index = _load_index(args.index)
        return [evaluate_index(index, ds.queries, gt, p, args.r_values, args.threads,
                               label=os.path.basename(args.index)) for p in grid]
    curves = []
    for p in grid:
        per_seed = []
        for s in seeds:
            index = build_index(argparse.Namespace(**(vars(args) | {"seed": s})), ds.vectors)
            per_seed.append(evaluate_index(index, ds.queries, gt, p, args.r_values, args.threads))
        label = f"{args.kind}-{args.transforms}"
        points = [(r, float(np.mean([c.points[k][1] for c in per_seed])))
                  for k, (r, _) in enumerate(per_seed[0].points)]
        timing = {k: float(np.mean([c.timing[k] for c in per_seed])) for k in per_seed[0].timing}
        params = {"kind": args.kind, "transforms": args.transforms, "k1": args.k1, "m2": args.m,
                  "k2": args.k2, "ia_iters": args.ia_iters, "w": p.w, "shortlist": p.shortlist,
                  "seeds": seeds}
        curves.append(RecallCurve(label, points, params, timing,
                                  [dict(c.points) for c in per_seed]))
    for c in curves:
        log.write(f"{c.label} w={c.params.get('w')} shortlist={c.params.get('shortlist')} "
                  f"wall_ms/query={c.timing['wall_ms']:.3f}\n")
    return curves


def _eval_distortion(args, seeds):
    _need(args, "dataset")
    data = read_vecs(args.dataset).astype(np.float64)
    specs = []
    for kind in args.kind.split(","):
        if kind == "vq":
            spec = {"kind": "vq", "k": args.k1}
        elif kind in ("pq", "opq"):
            spec = {"kind": kind, "m": args.m, "k": args.k2, "outer_iters": args.opq_iters}
        elif kind == "rq":
            spec = {"kind": "rq", "levels": [args.k1] + [_level2(args)] * (args.h - 1)}
        elif kind == "trq":
            spec = {"kind": "trq", "k1": args.k1, "level2": _level2(args), "ia_iters": args.ia_iters}
        else:
            raise CliError(f"unknown model kind {kind!r}")
        spec |= {"label": kind, "max_iters": args.max_iters}
        specs.append(spec)
    return run_distortion_suite(data, specs, seeds)


def cmd_eval(args, out, outputs, log=None):
    log = log or sys.stderr
    seeds = args.seeds or [args.seed]
    if args.suite == "search":
        items = _eval_search(args, seeds, log)
    else:
        items = _eval_distortion(args, seeds)
    writer = write_json if args.format == "json" else write_csv
    if args.out:
        writer(outputs.claim(args.out), items, wall_clock=args.wall_clock)
    for item in items:
        if hasattr(item, "points"):
            vals = " ".join(f"R@{r}={v:.4f}" for r, v in item.points)
            out.write(f"{item.label} w={item.params.get('w')} "
                      f"shortlist={item.params.get('shortlist')} {vals}\n")
        else:
            out.write(f"{item.label} mse {_fmt(item.mse)} spread {_fmt(item.spread)}\n")


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "encode": cmd_encode,
    "build-index": cmd_build_index,
    "search": cmd_search,
    "eval": cmd_eval,
}


def main(argv=None, stdout=None, stderr=None):
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    outputs = Outputs()
    buf = io.StringIO()
    try:
        args = parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise CliError("--threads must be >= 1")
        COMMANDS[args.command](args, buf, outputs)
    except (CliError, ValueError, OSError, ArchiveError, KeyError) as exc:
        outputs.rollback()
        stderr.write(f"trqann: error: {exc}\n")
        return 1
    except BaseException:
        outputs.rollback()
        raise
    stdout.write(buf.getvalue())
    return 0


if __name__ == "__main__":
    sys.exit(main())
