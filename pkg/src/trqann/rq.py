"""Stacked residual quantization with k-means or PQ levels."""

from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix
from .pq import ProductCodebook, decode_pq, encode_pq, train_pq
from .vq import Codebook, child_seed, nearest, train_kmeans, update_centroids

__all__ = [
    "LevelSpec",
    "ResidualModel",
    "level_spec",
    "train_level",
    "encode_level",
    "decode_level",
    "refit_level",
    "code_width",
    "train_rq",
    "encode_rq",
    "decode_rq",
    "rq_mse",
]


@dataclass(frozen=True)
class LevelSpec:
    """One stage quantizer: ``kind`` is ``"kmeans"`` or ``"pq"``; ``m`` groups of ``k`` centroids."""

    kind: str = "kmeans"
    k: int = 256
    m: int = 1

    def __post_init__(self):
        if self.kind not in ("kmeans", "pq"):
            raise ValueError(f"unknown level kind {self.kind!r}")
        if self.k < 1 or self.m < 1:
            raise ValueError(f"invalid level size k={self.k}, m={self.m}")
        if self.kind == "kmeans" and self.m != 1:
            raise ValueError("a k-means level has exactly one group")


def level_spec(spec):
    """Coerce ``int`` / ``dict`` / ``tuple`` / :class:`LevelSpec` into a LevelSpec.

    An int ``k`` means a k-means level; a tuple is ``(kind, k[, m])``.
    """
    if isinstance(spec, LevelSpec):
        return spec
    if isinstance(spec, (int, np.integer)):
        return LevelSpec("kmeans", int(spec))
    if isinstance(spec, dict):
        return LevelSpec(**spec)
    if isinstance(spec, (tuple, list)):
        return LevelSpec(*spec)
    raise ValueError(f"invalid level spec {spec!r}")


def code_width(q):
    return q.m if isinstance(q, ProductCodebook) else 1


def train_level(data, spec, seed, max_iters=100):
    spec = level_spec(spec)
    if spec.kind == "pq":
        return train_pq(data, spec.m, spec.k, max_iters=max_iters, seed=seed)
    cb, _, _ = train_kmeans(data, spec.k, max_iters=max_iters, seed=seed)
    return cb


def encode_level(data, q):
    if isinstance(q, ProductCodebook):
        return encode_pq(data, q)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != q.dim:
        raise ValueError(f"dimension mismatch: data {data.shape} vs codebook dim {q.dim}")
    return nearest(data, q.centroids)[0][:, None]


def decode_level(codes, q):
    if isinstance(q, ProductCodebook):
        return decode_pq(codes, q)
    codes = np.asarray(codes)
    if codes.ndim != 2 or codes.shape[1] != 1:
        raise ValueError(f"codes must have shape (N, 1), got {codes.shape}")
    if codes.size and (codes.min() < 0 or codes.max() >= q.k):
        raise ValueError(f"code index out of range [0, {q.k})")
    return q.centroids[codes[:, 0]]


def refit_level(data, codes, q):
    """One centroid update of ``q`` given fixed ``codes`` on ``data``."""
    if isinstance(q, ProductCodebook):
        return ProductCodebook([
            update_centroids(data[:, sl], codes[:, g], c)
            for g, (sl, c) in enumerate(zip(q.slices, q.sub_codebooks))
        ])
    return Codebook(update_centroids(data, codes[:, 0], q.centroids))


@dataclass
class ResidualModel:
    """Ordered stage quantizers (:class:`Codebook` or :class:`ProductCodebook`)."""

    levels: list

    def __post_init__(self):
        if not self.levels:
            raise ValueError("a residual model needs at least one level")
        dims = {q.dim for q in self.levels}
        if len(dims) != 1:
            raise ValueError(f"levels disagree on dimension: {sorted(dims)}")

    @property
    def h(self):
        return len(self.levels)

    @property
    def dim(self):
        return self.levels[0].dim

    @property
    def widths(self):
        return [code_width(q) for q in self.levels]


def _mean_sq_norm(x):
    return float(np.einsum("ij,ij->", x, x) / max(1, x.shape[0]))


def train_rq(data, level_specs, seed=0, max_iters=100):
    """Greedy level-by-level training on exact running residuals.

    Level ``l`` uses ``child_seed(seed, l)``. Returns the model and the
    distortion after each level.
    """
    data = as_matrix(data, "data")
    specs = [level_spec(s) for s in level_specs]
    if not specs:
        raise ValueError("need at least one level spec")
    residual = data.copy()
    levels, per_level = [], []
    for lvl, spec in enumerate(specs):
        q = train_level(residual, spec, child_seed(seed, lvl), max_iters=max_iters)
        residual = residual - decode_level(encode_level(residual, q), q)
        levels.append(q)
        per_level.append(_mean_sq_norm(residual))
    return ResidualModel(levels), per_level


def encode_rq(data, model):
    """Greedy per-level codes, concatenated into one ``(N, sum(widths))`` array."""
    residual = np.array(data, dtype=np.float64)
    if residual.ndim != 2 or residual.shape[1] != model.dim:
        raise ValueError(f"dimension mismatch: data {residual.shape} vs model dim {model.dim}")
    parts = []
    for q in model.levels:
        c = encode_level(residual, q)
        residual -= decode_level(c, q)
        parts.append(c)
    return np.hstack(parts)


def decode_rq(codes, model):
    """Sum of the indexed centroids of every level."""
    codes = np.asarray(codes)
    total = sum(model.widths)
    if codes.ndim != 2 or codes.shape[1] != total:
        raise ValueError(f"codes must have shape (N, {total}), got {codes.shape}")
    out = np.zeros((codes.shape[0], model.dim))
    lo = 0
    for q, w in zip(model.levels, model.widths):
        out += decode_level(codes[:, lo:lo + w], q)
        lo += w
    return out


def rq_mse(data, model, codes=None):
    """Mean squared final residual, subtracting level by level as in training."""
    residual = np.array(data, dtype=np.float64)
    if residual.ndim != 2 or residual.shape[1] != model.dim:
        raise ValueError(f"dimension mismatch: data {residual.shape} vs model dim {model.dim}")
    if codes is None:
        codes = encode_rq(residual, model)
    lo = 0
    for q, w in zip(model.levels, model.widths):
        residual -= decode_level(codes[:, lo:lo + w], q)
        lo += w
    return _mean_sq_norm(residual)
