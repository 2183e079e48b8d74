"""Inverted-index ANN search on top of TRQ residual codes.

Two systems are provided:

* :class:`IvfIndex` -- a k-means inverted file whose residuals are rotated by
  the cell's transform and compressed by a shared product quantizer.
* :class:`MultiIndex` -- an inverted multi-index over two half-spaces, each
  half carrying its own TRQ model, optionally preceded by a global rotation.

Queries are rotated per visited cell; stored codes are never touched at
search time.
"""

import heapq
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .linalg import as_matrix, pairwise_sq_dist
from .pq import adc_table, train_opq
from .trq import TrqModel, encode_trq, train_trq
from .vq import assign, child_seed, train_kmeans

__all__ = [
    "SearchParams",
    "SearchStats",
    "SearchResult",
    "IvfIndex",
    "MultiIndex",
    "build_ivf_trq",
    "search_ivf",
    "build_multi_index_trq",
    "multi_sequence",
    "multi_sequence_probe",
    "search_multi",
    "search",
    "search_batch",
    "exhaustive_adc",
    "reconstruct",
    "FootprintReport",
    "footprint_report",
]


@dataclass
class SearchParams:
    """``w`` cells probed (IVF), shortlist target ``shortlist`` (multi-index), ``top_r`` returned."""

    w: int = 6
    shortlist: int = 10000
    top_r: int = 100

    def __post_init__(self):
        if self.w < 1 or self.shortlist < 1 or self.top_r < 1:
            raise ValueError(f"search parameters must be >= 1, got {self}")


@dataclass
class SearchStats:
    """Deterministic per-query operation counters."""

    cells_visited: int = 0
    transforms: int = 0
    adc_lookups: int = 0
    candidates: int = 0


@dataclass
class SearchResult:
    ids: np.ndarray
    distances: np.ndarray
    stats: SearchStats = field(default_factory=SearchStats)


def _cells_from_labels(cell_of, n_cells):
    order = np.argsort(cell_of, kind="stable")
    offsets = np.zeros(n_cells + 1, dtype=np.int64)
    np.cumsum(np.bincount(cell_of, minlength=n_cells), out=offsets[1:])
    return offsets, order.astype(np.int64)


def _top(ids, scores, top_r):
    order = np.lexsort((ids, scores))[:top_r]
    return ids[order], scores[order]


# ---------------------------------------------------------------------------
# IVF


@dataclass
class IvfIndex:
    """Coarse cells with per-cell transforms and shared PQ residual codes.

    Cell ``i`` holds ``ids[offsets[i]:offsets[i+1]]`` with matching rows of
    ``codes``.
    """

    model: TrqModel
    offsets: np.ndarray
    ids: np.ndarray
    codes: np.ndarray
    method: str = "trq"

    @property
    def k1(self):
        return self.model.k1

    @property
    def dim(self):
        return self.model.dim

    @property
    def size(self):
        return len(self.ids)

    def cell(self, i):
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return self.ids[lo:hi], self.codes[lo:hi]


def build_ivf_trq(data, k1, m2, k2, ia_iters=20, seed=0, transforms="trq",
                  max_iters=100, opq_iters=30, level1=None):
    """Build an IVF-ADC index.

    ``transforms`` selects the residual rotation: ``"trq"`` learns one
    transform per cell by iterative alignment, ``"identity"`` gives plain
    IVFADC, and ``"opq"`` shares one OPQ rotation across all cells.
    A pre-trained coarse ``level1`` codebook may be passed so that variants
    share the same cells; it must equal what ``train_kmeans`` would produce
    for paired comparisons to stay exact.
    """
    data = as_matrix(data, "data")
    n, dim = data.shape
    if k1 < 1 or k1 > n:
        raise ValueError(f"k1 must satisfy 1 <= k1 <= N, got k1={k1}, N={n}")
    spec = ("pq", k2, m2)
    if transforms in ("trq", "identity"):
        iters = ia_iters if transforms == "trq" else 0
        model, _ = train_trq(data, k1, spec, ia_iters=iters, seed=seed, max_iters=max_iters,
                             level1=level1)
    elif transforms == "opq":
        if level1 is None:
            level1 = train_kmeans(data, k1, max_iters=max_iters, seed=seed)[0]
        labels = assign(data, level1)
        residuals = data - level1.centroids[labels]
        rotation, pcb = train_opq(residuals, m2, k2, outer_iters=opq_iters,
                                  seed=child_seed(seed, 1), max_iters=max_iters)
        model = TrqModel(level1, np.repeat(rotation[None], k1, axis=0), pcb)
    else:
        raise ValueError(f"unknown transforms option {transforms!r}")
    labels, codes = encode_trq(data, model)
    offsets, ids = _cells_from_labels(labels, k1)
    return IvfIndex(model, offsets, ids, codes[ids], method=transforms)


def _cell_scores(model, cell, query, codes, stats):
    t = model.transforms[cell]
    rotated = t @ (query - model.level1.centroids[cell])
    stats.transforms += 1
    if not len(codes):
        return np.empty(0)
    table = adc_table(rotated, model.level2)
    stats.adc_lookups += codes.size
    return table[np.arange(table.shape[0]), codes].sum(axis=1)


def search_ivf(index, query, params=None, **kwargs):
    """Probe the ``w`` nearest cells and rank their members by ADC score."""
    params = params or SearchParams(**kwargs)
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (index.dim,):
        raise ValueError(f"query must have shape ({index.dim},), got {query.shape}")
    coarse = pairwise_sq_dist(query[None], index.model.level1.centroids)[0]
    w = min(params.w, index.k1)
    cells = np.argsort(coarse, kind="stable")[:w]
    stats = SearchStats()
    all_ids, all_scores = [], []
    for c in cells:
        ids, codes = index.cell(c)
        stats.cells_visited += 1
        all_scores.append(_cell_scores(index.model, c, query, codes, stats))
        all_ids.append(ids)
    ids = np.concatenate(all_ids)
    scores = np.concatenate(all_scores)
    stats.candidates = len(ids)
    ids, scores = _top(ids, scores, params.top_r)
    return SearchResult(ids, scores, stats)


# ---------------------------------------------------------------------------
# inverted multi-index


@dataclass
class MultiIndex:
    """Two-half inverted multi-index; product cell ``(i, j)`` has id ``i * k1 + j``.

    ``codes`` holds the left-half PQ codes followed by the right-half codes.
    """

    halves: list
    offsets: np.ndarray
    ids: np.ndarray
    codes: np.ndarray
    rotation: np.ndarray = None
    method: str = "trq"

    @property
    def k1(self):
        return self.halves[0].k1

    @property
    def dim(self):
        return sum(h.dim for h in self.halves)

    @property
    def size(self):
        return len(self.ids)

    def split(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.rotation is not None:
            x = x @ self.rotation.T
        d1 = self.halves[0].dim
        return x[..., :d1], x[..., d1:]

    def cell(self, i, j):
        c = i * self.k1 + j
        lo, hi = self.offsets[c], self.offsets[c + 1]
        return self.ids[lo:hi], self.codes[lo:hi]


def build_multi_index_trq(data, k1, m2, k2, ia_iters=20, use_global_rotation=False, seed=0,
                          transforms="trq", max_iters=100, opq_iters=30):
    """Build an inverted multi-index with one TRQ model per half-space.

    Each half gets a ``k1``-centroid coarse codebook, per-cell transforms and
    an ``m2 / 2``-group PQ residual codebook with ``k2`` centroids. With
    ``use_global_rotation`` an OPQ rotation over the two halves is learned
    first and applied to all data and queries. ``transforms="identity"``
    skips alignment (plain multi-index).
    """
    data = as_matrix(data, "data")
    n, dim = data.shape
    if dim % 2:
        raise ValueError(f"multi-index needs an even dimension, got D={dim}")
    if m2 % 2:
        raise ValueError(f"m2 must be even to split across two halves, got {m2}")
    if k1 < 1 or k1 > n:
        raise ValueError(f"k1 must satisfy 1 <= k1 <= N, got k1={k1}, N={n}")
    if transforms not in ("trq", "identity"):
        raise ValueError(f"unknown transforms option {transforms!r}")
    rotation = None
    if use_global_rotation:
        rotation, _ = train_opq(data, 2, k1, outer_iters=opq_iters, seed=child_seed(seed, 7),
                                max_iters=max_iters)
        data = data @ rotation.T
    half = dim // 2
    iters = ia_iters if transforms == "trq" else 0
    halves, labels, codes = [], [], []
    for h, part in enumerate((data[:, :half], data[:, half:])):
        model, _ = train_trq(part, k1, ("pq", k2, m2 // 2), ia_iters=iters,
                             seed=child_seed(seed, 10 + h), max_iters=max_iters)
        lab, cod = encode_trq(part, model)
        halves.append(model)
        labels.append(lab)
        codes.append(cod)
    cell_of = labels[0] * k1 + labels[1]
    offsets, ids = _cells_from_labels(cell_of, k1 * k1)
    return MultiIndex(halves, offsets, ids, np.hstack(codes)[ids], rotation, method=transforms)


def multi_sequence(d1, d2):
    """Yield ``(i, j)`` in non-decreasing order of ``d1[i] + d2[j]``.

    Ties are broken by ``(i, j)`` lexicographically. A cell enters the
    frontier once both its predecessors in sorted-rank space were emitted.
    """
    d1 = np.asarray(d1, dtype=np.float64)
    d2 = np.asarray(d2, dtype=np.float64)
    o1 = np.argsort(d1, kind="stable")
    o2 = np.argsort(d2, kind="stable")
    s1, s2 = d1[o1], d2[o2]
    n1, n2 = len(o1), len(o2)
    emitted = np.zeros((n1, n2), dtype=bool)
    heap = [(s1[0] + s2[0], int(o1[0]), int(o2[0]), 0, 0)]
    while heap:
        _, i, j, a, b = heapq.heappop(heap)
        emitted[a, b] = True
        yield i, j
        if a + 1 < n1 and (b == 0 or emitted[a + 1, b - 1]):
            heapq.heappush(heap, (s1[a + 1] + s2[b], int(o1[a + 1]), int(o2[b]), a + 1, b))
        if b + 1 < n2 and (a == 0 or emitted[a - 1, b + 1]):
            heapq.heappush(heap, (s1[a] + s2[b + 1], int(o1[a]), int(o2[b + 1]), a, b + 1))


def _half_distances(index, query):
    q1, q2 = index.split(query)
    d1 = pairwise_sq_dist(q1[None], index.halves[0].level1.centroids)[0]
    d2 = pairwise_sq_dist(q2[None], index.halves[1].level1.centroids)[0]
    return q1, q2, d1, d2


def _probe_cells(index, d1, d2, shortlist):
    cells, total = [], 0
    for i, j in multi_sequence(d1, d2):
        c = i * index.k1 + j
        size = int(index.offsets[c + 1] - index.offsets[c])
        if size:
            cells.append((i, j))
            total += size
            if total >= shortlist:
                break
    return cells


def multi_sequence_probe(index, query, shortlist):
    """Candidate ids from whole product cells, in probe order, until at least ``shortlist``."""
    if shortlist < 1:
        raise ValueError("shortlist must be >= 1")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (index.dim,):
        raise ValueError(f"query must have shape ({index.dim},), got {query.shape}")
    _, _, d1, d2 = _half_distances(index, query)
    cells = _probe_cells(index, d1, d2, shortlist)
    if not cells:
        return np.empty(0, dtype=np.int64)
    return np.concatenate([index.cell(i, j)[0] for i, j in cells])


def search_multi(index, query, params=None, **kwargs):
    """Shortlist via multi-sequence probing, then rank by summed half ADC scores."""
    params = params or SearchParams(**kwargs)
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (index.dim,):
        raise ValueError(f"query must have shape ({index.dim},), got {query.shape}")
    q1, q2, d1, d2 = _half_distances(index, query)
    cells = _probe_cells(index, d1, d2, params.shortlist)
    stats = SearchStats(cells_visited=len(cells))
    w1 = index.halves[0].code_width
    all_ids, all_scores = [], []
    for i, j in cells:
        ids, codes = index.cell(i, j)
        # one block-diagonal transform diag(T_i, T_j) per visited product cell
        stats.transforms += 1
        score = np.zeros(len(ids))
        for model, cl, q, cod in ((index.halves[0], i, q1, codes[:, :w1]),
                                  (index.halves[1], j, q2, codes[:, w1:])):
            rotated = model.transforms[cl] @ (q - model.level1.centroids[cl])
            t = adc_table(rotated, model.level2)
            score += t[np.arange(t.shape[0]), cod].sum(axis=1)
        stats.adc_lookups += codes.size
        all_ids.append(ids)
        all_scores.append(score)
    if all_ids:
        ids = np.concatenate(all_ids)
        scores = np.concatenate(all_scores)
    else:
        ids, scores = np.empty(0, dtype=np.int64), np.empty(0)
    stats.candidates = len(ids)
    ids, scores = _top(ids, scores, params.top_r)
    return SearchResult(ids, scores, stats)


def search(index, query, params=None, **kwargs):
    if isinstance(index, MultiIndex):
        return search_multi(index, query, params, **kwargs)
    return search_ivf(index, query, params, **kwargs)


def search_batch(index, queries, params=None, threads=1, **kwargs):
    """Search every row of ``queries``; results keep query order for any thread count."""
    params = params or SearchParams(**kwargs)
    queries = np.asarray(queries, dtype=np.float64)
    if threads <= 1:
        return [search(index, q, params) for q in queries]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda q: search(index, q, params), queries))


def reconstruct(index):
    """Decoded reconstruction of every stored vector, in id order."""
    out = np.empty((index.size, index.dim))
    if isinstance(index, IvfIndex):
        model = index.model
        for c in range(index.k1):
            ids, codes = index.cell(c)
            if len(ids):
                recon = model.level2.decode(codes) @ model.transforms[c]
                out[ids] = model.level1.centroids[c] + recon
        return out
    w1 = index.halves[0].code_width
    for cell in range(index.k1 * index.k1):
        i, j = divmod(cell, index.k1)
        ids, codes = index.cell(i, j)
        if not len(ids):
            continue
        parts = []
        for h, (cl, cod) in enumerate(((i, codes[:, :w1]), (j, codes[:, w1:]))):
            model = index.halves[h]
            parts.append(model.level1.centroids[cl] + model.level2.decode(cod) @ model.transforms[cl])
        out[ids] = np.hstack(parts)
    if index.rotation is not None:
        out = out @ index.rotation
    return out


def exhaustive_adc(index, query, top_r):
    """Rank all stored vectors by exact squared distance to their reconstructions."""
    recon = reconstruct(index)
    d = pairwise_sq_dist(np.asarray(query, dtype=np.float64)[None], recon)[0]
    return _top(np.arange(index.size), d, top_r)


# ---------------------------------------------------------------------------
# footprint accounting


@dataclass
class FootprintReport:
    """Cell count, assignment cost as multiples of ``O_dist`` / ``O_tran``, memory in floats."""

    kind: str
    cells: int
    dist_ops: int
    tran_ops: int
    memory_floats: int


def footprint_report(descriptor):
    """Complexity accounting for a model descriptor.

    ``descriptor`` is a mapping with ``kind`` in ``vq|pq|rq|trq`` and the
    sizes it needs: ``k`` and ``D`` for vq; ``k_star``, ``m``, ``D`` for pq;
    ``k_star``, ``h``, ``D`` for rq; plus ``l`` (levels with transforms) for trq.
    """
    d = dict(descriptor)
    kind = d.get("kind")
    try:
        if kind == "vq":
            k, dim = int(d["k"]), int(d["D"])
            return FootprintReport(kind, k, k, 0, k * dim)
        ks, dim = int(d["k_star"]), int(d["D"])
        if kind == "pq":
            m = int(d["m"])
            return FootprintReport(kind, ks ** m, ks, 0, ks * dim)
        h = int(d["h"])
        if kind == "rq":
            return FootprintReport(kind, ks ** h, h * ks, 0, h * ks * dim)
        if kind == "trq":
            lv = int(d["l"])
            return FootprintReport(kind, ks ** h, h * ks, lv, h * ks * dim + lv * ks * dim * dim)
    except KeyError as exc:
        raise ValueError(f"descriptor for {kind!r} is missing {exc.args[0]!r}") from None
    raise ValueError(f"unknown model kind {kind!r}")

