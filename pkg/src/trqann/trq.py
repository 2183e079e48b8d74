"""Transformed residual quantization.

A two-level residual quantizer in which every first-level cluster ``i`` owns
an orthogonal matrix ``T_i``. A vector ``x`` in cluster ``i`` is coded by
quantizing ``T_i (x - c_i)`` with a single residual quantizer shared by all
clusters. The transforms and the shared quantizer are learned by iterative
alignment: refit the residual quantizer with transforms fixed, then solve one
orthogonal Procrustes problem per cluster with the quantizer fixed.
"""

from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix, procrustes_rotation
from .rq import (
    ResidualModel,
    code_width,
    decode_level,
    encode_level,
    level_spec,
    refit_level,
    train_level,
)
from .vq import Codebook, child_seed, train_kmeans

__all__ = [
    "TrqModel",
    "train_trq",
    "encode_trq",
    "decode_trq",
    "trq_mse",
    "apply_transforms",
    "cluster_members",
]


@dataclass
class TrqModel:
    """First-level codebook, one ``(D, D)`` transform per cluster, shared residual quantizer."""

    level1: Codebook
    transforms: np.ndarray
    level2: object

    def __post_init__(self):
        self.transforms = np.asarray(self.transforms, dtype=np.float64)
        k1, dim = self.level1.k, self.level1.dim
        if self.transforms.shape != (k1, dim, dim):
            raise ValueError(
                f"transforms must have shape ({k1}, {dim}, {dim}), got {self.transforms.shape}"
            )
        if self.level2.dim != dim:
            raise ValueError(f"level-2 dim {self.level2.dim} != level-1 dim {dim}")

    @property
    def k1(self):
        return self.level1.k

    @property
    def dim(self):
        return self.level1.dim

    @property
    def code_width(self):
        return code_width(self.level2)

    def as_residual_model(self):
        """The same codebooks viewed as a plain two-level residual model."""
        return ResidualModel([self.level1, self.level2])


def cluster_members(labels, k):
    """Row indices of each cluster, in increasing order."""
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(k + 1))
    return [order[bounds[i]:bounds[i + 1]] for i in range(k)]


def apply_transforms(residuals, labels, transforms, members=None, inverse=False):
    """Rotate each row by the transform of its cluster (or by its transpose)."""
    if members is None:
        members = cluster_members(labels, transforms.shape[0])
    out = np.empty_like(residuals)
    for i, idx in enumerate(members):
        if len(idx):
            t = transforms[i]
            out[idx] = residuals[idx] @ (t if inverse else t.T)
    return out


def _objective(rotated, q, codes):
    diff = rotated - decode_level(codes, q)
    return float(np.einsum("ij,ij->", diff, diff) / max(1, rotated.shape[0]))


def train_trq(data, k1, level2_spec, ia_iters=20, seed=0, max_iters=100, level1=None,
              min_cluster_size=None):
    """Train a TRQ model by iterative alignment.

    The first level is k-means with ``seed`` and stays fixed; the residual
    quantizer is first trained exactly as level 2 of :func:`train_rq` (sub-seed
    ``child_seed(seed, 1)``) with all transforms at identity. Each of the
    ``ia_iters`` iterations then runs

    * step A: reassign residual codes, then one centroid update;
    * step B: per-cluster Procrustes update of ``T_i`` against the current
      reproductions. Clusters with fewer than ``min_cluster_size`` members
      (default ``D``) keep their previous transform.

    Returns ``(model, mse_trace)``. ``mse_trace[0]`` is the plain RQ
    distortion; two entries follow per iteration (after step A and after step
    B), plus a final entry after re-encoding with the learned model. Every
    entry is the mean squared error in transformed residual space.

    ``level1`` may supply a pre-trained first-level :class:`Codebook`.
    """
    data = as_matrix(data, "data")
    n, dim = data.shape
    if k1 < 1 or k1 > n:
        raise ValueError(f"k1 must satisfy 1 <= k1 <= N, got k1={k1}, N={n}")
    if ia_iters < 0:
        raise ValueError("ia_iters must be >= 0")
    if min_cluster_size is None:
        min_cluster_size = dim

    if level1 is None:
        level1, labels, _ = train_kmeans(data, k1, max_iters=max_iters, seed=seed)
    else:
        if level1.k != k1 or level1.dim != dim:
            raise ValueError(f"level1 has shape {level1.centroids.shape}, expected ({k1}, {dim})")
        labels = encode_level(data, level1)[:, 0]
    residuals = data - level1.centroids[labels]
    members = cluster_members(labels, level1.k)

    q2 = train_level(residuals, level_spec(level2_spec), child_seed(seed, 1), max_iters=max_iters)
    transforms = np.repeat(np.eye(dim)[None], level1.k, axis=0)
    rotated = residuals
    codes = encode_level(rotated, q2)
    trace = [_objective(rotated, q2, codes)]

    for _ in range(ia_iters):
        codes = encode_level(rotated, q2)
        q2 = refit_level(rotated, codes, q2)
        trace.append(_objective(rotated, q2, codes))

        recon = decode_level(codes, q2)
        for i, idx in enumerate(members):
            if len(idx) >= max(1, min_cluster_size):
                transforms[i] = procrustes_rotation(residuals[idx], recon[idx])
        rotated = apply_transforms(residuals, labels, transforms, members)
        trace.append(_objective(rotated, q2, codes))

    if ia_iters:
        codes = encode_level(rotated, q2)
        trace.append(_objective(rotated, q2, codes))
    return TrqModel(level1, transforms, q2), trace


def _check(data, model):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != model.dim:
        raise ValueError(f"dimension mismatch: data {data.shape} vs model dim {model.dim}")
    return data


def transformed_residuals(data, model, labels=None):
    """First-level labels and ``T_i (x - c_i)`` for every row."""
    data = _check(data, model)
    if labels is None:
        labels = encode_level(data, model.level1)[:, 0]
    residuals = data - model.level1.centroids[labels]
    return labels, apply_transforms(residuals, labels, model.transforms)


def encode_trq(data, model):
    """Return ``(labels, codes)``: nearest first-level cell and level-2 code of the rotated residual."""
    labels, rotated = transformed_residuals(data, model)
    return labels, encode_level(rotated, model.level2)


def decode_trq(labels, codes, model):
    """Reconstruct ``c_i + T_i^T q2(code)``."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or (labels.size and (labels.min() < 0 or labels.max() >= model.k1)):
        raise ValueError(f"labels must be a 1-D array of indices in [0, {model.k1})")
    recon = decode_level(codes, model.level2)
    if recon.shape[0] != labels.shape[0]:
        raise ValueError("labels and codes disagree on the number of vectors")
    return model.level1.centroids[labels] + apply_transforms(
        recon, labels, model.transforms, inverse=True
    )


def trq_mse(data, model):
    """Mean squared error of transformed residuals against their reproductions."""
    labels, rotated = transformed_residuals(data, model)
    codes = encode_level(rotated, model.level2)
    return _objective(rotated, model.level2, codes)
