"""Product quantization, optimized (rotated) PQ and ADC lookup tables."""

from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix, procrustes_rotation
from .vq import child_seed, nearest, train_kmeans, update_centroids

__all__ = [
    "ProductCodebook",
    "split_dims",
    "train_pq",
    "encode_pq",
    "decode_pq",
    "pq_mse",
    "adc_table",
    "adc_distance",
    "train_opq",
    "opq_objective",
]


def split_dims(dim, m):
    """Contiguous group widths for ``dim`` features in ``m`` groups.

    The remainder of ``dim / m`` goes to the leading groups.
    """
    if m < 1 or m > dim:
        raise ValueError(f"need 1 <= m <= D, got m={m}, D={dim}")
    base, extra = divmod(dim, m)
    return [base + 1 if g < extra else base for g in range(m)]


@dataclass
class ProductCodebook:
    """``m`` sub-codebooks over contiguous feature groups, ``k_star`` centroids each."""

    sub_codebooks: list

    def __post_init__(self):
        self.sub_codebooks = [as_matrix(c, "sub-codebook") for c in self.sub_codebooks]
        if not self.sub_codebooks:
            raise ValueError("product codebook needs at least one group")
        ks = {c.shape[0] for c in self.sub_codebooks}
        if len(ks) != 1:
            raise ValueError(f"sub-codebooks must share k*, got sizes {sorted(ks)}")
        bounds = np.cumsum([0] + self.sub_dims)
        self._slices = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]

    @property
    def m(self):
        return len(self.sub_codebooks)

    @property
    def k_star(self):
        return self.sub_codebooks[0].shape[0]

    @property
    def sub_dims(self):
        return [c.shape[1] for c in self.sub_codebooks]

    @property
    def dim(self):
        return sum(self.sub_dims)

    @property
    def slices(self):
        return self._slices

    def encode(self, data):
        return encode_pq(data, self)

    def decode(self, codes):
        return decode_pq(codes, self)


def _check_dim(data, dim, what="data"):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != dim:
        raise ValueError(f"dimension mismatch: {what} has shape {data.shape}, expected D={dim}")
    return data


def train_pq(data, m, k_star=256, max_iters=100, seed=0):
    """Independent k-means on each of ``m`` contiguous feature groups.

    Group ``g`` uses the sub-seed ``child_seed(seed, g)``, so ``m=1`` is
    exactly :func:`train_kmeans` with ``seed``.
    """
    data = as_matrix(data, "data")
    widths = split_dims(data.shape[1], m)
    subs = []
    lo = 0
    for g, w in enumerate(widths):
        cb, _, _ = train_kmeans(data[:, lo:lo + w], k_star, max_iters=max_iters,
                                seed=child_seed(seed, g))
        subs.append(cb.centroids)
        lo += w
    return ProductCodebook(subs)


def encode_pq(data, pcb):
    """``(N, m)`` array of per-group nearest sub-centroid indices."""
    data = _check_dim(data, pcb.dim)
    codes = np.empty((data.shape[0], pcb.m), dtype=np.int64)
    for g, (sl, c) in enumerate(zip(pcb.slices, pcb.sub_codebooks)):
        codes[:, g] = nearest(data[:, sl], c)[0]
    return codes


def decode_pq(codes, pcb):
    """Concatenate the indexed sub-centroids of every code row."""
    codes = np.asarray(codes)
    if codes.ndim != 2 or codes.shape[1] != pcb.m:
        raise ValueError(f"codes must have shape (N, {pcb.m}), got {codes.shape}")
    if codes.size and (codes.min() < 0 or codes.max() >= pcb.k_star):
        raise ValueError(f"code index out of range [0, {pcb.k_star})")
    return np.hstack([c[codes[:, g]] for g, c in enumerate(pcb.sub_codebooks)])


def pq_mse(data, pcb, codes=None):
    """Distortion of ``data`` under ``pcb``; equals the sum of per-group distortions."""
    data = _check_dim(data, pcb.dim)
    if codes is None:
        codes = encode_pq(data, pcb)
    diff = data - decode_pq(codes, pcb)
    return float(np.einsum("ij,ij->", diff, diff) / max(1, data.shape[0]))


def adc_table(query, pcb):
    """Per-group squared distances from ``query`` to every sub-centroid, shape ``(m, k*)``."""
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (pcb.dim,):
        raise ValueError(f"query must have shape ({pcb.dim},), got {query.shape}")
    table = np.empty((pcb.m, pcb.k_star))
    for g, (sl, c) in enumerate(zip(pcb.slices, pcb.sub_codebooks)):
        diff = c - query[sl]
        table[g] = np.einsum("ij,ij->i", diff, diff)
    return table


def adc_distance(table, codes):
    """Sum of table lookups for each code row."""
    codes = np.asarray(codes)
    return table[np.arange(table.shape[0]), codes].sum(axis=-1)


def opq_objective(data, rotation, pcb, codes=None):
    """Mean squared error of the rotated data under ``pcb``."""
    return pq_mse(np.asarray(data) @ rotation.T, pcb, codes)


def _lloyd_step(rotated, pcb, codes):
    subs = [
        update_centroids(rotated[:, sl], codes[:, g], c)
        for g, (sl, c) in enumerate(zip(pcb.slices, pcb.sub_codebooks))
    ]
    return ProductCodebook(subs)


def train_opq(data, m, k_star=256, outer_iters=30, seed=0, max_iters=100,
              freeze_rotation=False, trace=None):
    """Learn a global rotation ``R`` and PQ codebooks on ``data @ R.T``.

    Starts from ``R = I`` with codebooks from :func:`train_pq`. Each outer
    iteration refits the codebooks by one Lloyd step per group on the rotated
    data, then replaces ``R`` by the Procrustes solution aligning the data
    with its current reconstructions. Codebooks live in the rotated space.

    If ``trace`` is a list, the objective (fresh nearest encoding) is
    appended before the first iteration and after each one.
    With ``freeze_rotation=True`` the result is exactly ``(I, train_pq(...))``.
    """
    data = as_matrix(data, "data")
    if outer_iters < 0:
        raise ValueError("outer_iters must be >= 0")
    dim = data.shape[1]
    rotation = np.eye(dim)
    pcb = train_pq(data, m, k_star, max_iters=max_iters, seed=seed)
    rotated = data
    codes = encode_pq(rotated, pcb)
    if trace is not None:
        trace.append(pq_mse(rotated, pcb, codes))
    if freeze_rotation:
        return rotation, pcb
    for _ in range(outer_iters):
        pcb = _lloyd_step(rotated, pcb, codes)
        rotation = procrustes_rotation(data, decode_pq(codes, pcb))
        rotated = data @ rotation.T
        codes = encode_pq(rotated, pcb)
        if trace is not None:
            trace.append(pq_mse(rotated, pcb, codes))
    return rotation, pcb

