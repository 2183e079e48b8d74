"""Dataset and model I/O.

* ``.fvecs`` / ``.bvecs`` / ``.ivecs``: each record is a little-endian int32
  dimension followed by that many float32 / uint8 / int32 values.
* Model archives: an 8-byte magic, a u32 format version, a u32 kind tag and a
  u32 dimension, then named little-endian array sections and a CRC32 trailer.
"""

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field

import numpy as np

from .index import IvfIndex, MultiIndex
from .linalg import random_orthogonal
from .pq import ProductCodebook
from .rq import ResidualModel
from .trq import TrqModel
from .vq import Codebook

__all__ = [
    "Dataset",
    "ArchiveError",
    "read_vecs",
    "write_vecs",
    "gen_synthetic",
    "exact_knn",
    "save_model",
    "load_model",
    "OpqModel",
    "load_dataset",
    "atomic_write",
]

_VEC_DTYPES = {
    "f32": np.dtype("<f4"),
    "u8": np.dtype("u1"),
    "i32": np.dtype("<i4"),
}
_EXT_KIND = {".fvecs": "f32", ".bvecs": "u8", ".ivecs": "i32"}


def _vec_kind(path, kind):
    if kind is None:
        kind = _EXT_KIND.get(os.path.splitext(str(path))[1])
    if kind not in _VEC_DTYPES:
        raise ValueError(f"unknown vector file kind {kind!r} for {path}")
    return kind


def read_vecs(path, kind=None):
    """Read an fvecs/bvecs/ivecs file into a ``(n, d)`` array.

    ``kind`` is ``"f32"``, ``"u8"`` or ``"i32"``; inferred from the extension
    when omitted. Float and byte files are returned as float64, ivecs as int64.
    """
    kind = _vec_kind(path, kind)
    dt = _VEC_DTYPES[kind]
    with open(path, "rb") as f:
        raw = f.read()
    if not raw:
        return np.empty((0, 0), dtype=np.int64 if kind == "i32" else np.float64)
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated header")
    dim = struct.unpack_from("<i", raw, 0)[0]
    if dim < 0:
        raise ValueError(f"{path}: negative dimension in record 0")
    rec = 4 + dim * dt.itemsize
    if len(raw) % rec:
        raise ValueError(f"{path}: truncated file ({len(raw)} bytes is not a multiple of "
                         f"the {rec}-byte record size)")
    n = len(raw) // rec
    buf = np.frombuffer(raw, dtype=np.uint8).reshape(n, rec)
    dims = buf[:, :4].copy().view("<i4")[:, 0]
    bad = np.flatnonzero(dims != dim)
    if len(bad):
        raise ValueError(f"{path}: record {bad[0]} has dimension {dims[bad[0]]}, expected {dim}")
    values = buf[:, 4:].copy().view(dt).reshape(n, dim)
    if kind == "i32":
        return values.astype(np.int64)
    return values.astype(np.float64)


def write_vecs(path, matrix, kind=None):
    """Write ``matrix`` rows in fvecs/bvecs/ivecs layout; inverse of :func:`read_vecs`."""
    kind = _vec_kind(path, kind)
    dt = _VEC_DTYPES[kind]
    a = np.asarray(matrix)
    if a.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {a.shape}")
    if kind == "f32":
        if not np.all(np.isfinite(a)):
            raise ValueError("fvecs values must be finite")
        with np.errstate(over="ignore"):
            vals = a.astype(dt)
        if not np.all(np.isfinite(vals)):
            raise ValueError("values out of float32 range")
    else:
        info = np.iinfo(dt)
        if not np.all(np.isfinite(a)) or np.any(a != np.round(a)):
            raise ValueError(f"{kind} values must be integers")
        if a.size and (a.min() < info.min or a.max() > info.max):
            raise ValueError(f"{kind} values must lie in [{info.min}, {info.max}]")
        vals = a.astype(dt)
    n, dim = vals.shape
    out = np.empty((n, 4 + dim * dt.itemsize), dtype=np.uint8)
    out[:, :4] = np.frombuffer(struct.pack("<i", dim), dtype=np.uint8)
    out[:, 4:] = np.ascontiguousarray(vals).view(np.uint8).reshape(n, -1)
    atomic_write(path, out.tobytes())


def _umask():
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write(path, payload):
    """Write ``payload`` (bytes or str) via a temp file and rename; no partial file survives."""
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        # mkstemp creates 0600; give the file the permissions open() would
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    """Base vectors with optional queries and ground-truth neighbor ids."""

    vectors: np.ndarray
    queries: np.ndarray = None
    ground_truth: np.ndarray = None
    labels: np.ndarray = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.queries is not None and self.queries.shape[1] != self.vectors.shape[1]:
            raise ValueError("query dimension differs from base dimension")
        if self.ground_truth is not None and self.ground_truth.size:
            gt = self.ground_truth
            if gt.min() < 0 or gt.max() >= self.vectors.shape[0]:
                raise ValueError("ground truth contains ids outside the base set")


def _anisotropic_scales(d, ratio=20.0):
    # geometric decay from 1 down to 1/ratio
    return ratio ** (-np.arange(d) / max(1, d - 1))


def _plane_rotation(d, angle):
    r = np.eye(d)
    c, s = np.cos(angle), np.sin(angle)
    r[0, 0], r[0, 1], r[1, 0], r[1, 1] = c, -s, s, c
    return r


def gen_synthetic(kind, n, d, k, seed=0, n_queries=0, spread=4.0, angle=None, groups=2):
    """Generate a synthetic dataset.

    ``kind``:

    * ``"clustered-anisotropic"`` -- ``k`` Gaussian clusters, each with its own
      random principal axes and spectrum;
    * ``"rotated-clones"`` -- one anisotropic residual shape copied into ``k``
      clusters, each under its own orthogonal rotation (a Haar sample, or a
      rotation by ``i * angle`` in the first coordinate plane when ``angle``
      is given);
    * ``"product-independent"`` -- ``groups`` contiguous feature groups, each
      drawn independently from its own ``k``-cluster mixture.

    Queries come from the same distribution. Output depends only on the
    arguments.
    """
    if n < 1 or d < 1 or k < 1 or n_queries < 0:
        raise ValueError(f"invalid sizes n={n}, d={d}, k={k}, n_queries={n_queries}")
    rng = np.random.default_rng(seed)
    total = n + n_queries
    info = {"kind": kind, "n": n, "d": d, "k": k, "seed": seed}

    if kind in ("clustered-anisotropic", "rotated-clones"):
        if kind == "rotated-clones" and angle is not None and d < 2:
            raise ValueError("angle rotations need d >= 2")
        centers = rng.normal(scale=spread, size=(k, d))
        if kind == "rotated-clones":
            scales = np.repeat(_anisotropic_scales(d)[None], k, axis=0)
            if angle is None:
                rotations = np.stack([random_orthogonal(d, rng) for _ in range(k)])
            else:
                rotations = np.stack([_plane_rotation(d, i * angle) for i in range(k)])
        else:
            scales = np.sort(rng.uniform(0.05, 1.0, size=(k, d)), axis=1)[:, ::-1]
            rotations = np.stack([random_orthogonal(d, rng) for _ in range(k)])
        labels = rng.integers(k, size=total)
        shape = rng.standard_normal((total, d)) * scales[labels]
        points = centers[labels] + np.einsum("nij,nj->ni", rotations[labels], shape)
        info["rotations"] = rotations
        info["centers"] = centers
    elif kind == "product-independent":
        if groups < 1 or groups > d:
            raise ValueError(f"groups must lie in [1, d], got {groups}")
        bounds = np.linspace(0, d, groups + 1).astype(int)
        points = np.empty((total, d))
        labels = np.empty((total, groups), dtype=np.int64)
        for g in range(groups):
            lo, hi = bounds[g], bounds[g + 1]
            centers = rng.normal(scale=spread, size=(k, hi - lo))
            lab = rng.integers(k, size=total)
            points[:, lo:hi] = centers[lab] + rng.standard_normal((total, hi - lo)) * 0.5
            labels[:, g] = lab
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")

    queries = points[n:] if n_queries else None
    return Dataset(points[:n], queries, labels=labels[:n], info=info)


def exact_knn(base, queries, r):
    """Ids of the ``r`` nearest base rows per query; ties go to the lower id."""
    base = np.asarray(base, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    if base.ndim != 2 or queries.ndim != 2 or base.shape[1] != queries.shape[1]:
        raise ValueError(f"dimension mismatch: base {base.shape} vs queries {queries.shape}")
    if r < 1 or r > base.shape[0]:
        raise ValueError(f"r must lie in [1, {base.shape[0]}], got {r}")
    out = np.empty((queries.shape[0], r), dtype=np.int64)
    for qi, q in enumerate(queries):
        diff = base - q
        dist = np.einsum("ij,ij->i", diff, diff)
        if r < base.shape[0] // 4:
            cut = np.partition(dist, r - 1)[r - 1]
            cand = np.flatnonzero(dist <= cut)
            order = cand[np.lexsort((cand, dist[cand]))]
        else:
            order = np.lexsort((np.arange(len(dist)), dist))
        out[qi] = order[:r]
    return out


def load_dataset(base, queries=None, ground_truth=None):
    """Read base/query/ground-truth vector files into a :class:`Dataset`."""
    vectors = read_vecs(base)
    q = read_vecs(queries) if queries else None
    gt = read_vecs(ground_truth) if ground_truth else None
    return Dataset(vectors, q, gt)


# ---------------------------------------------------------------------------
# model archives

MAGIC = b"TRQANN\x00\x1a"
VERSION = 1
KINDS = ["codebook", "product_codebook", "opq", "residual", "trq", "ivf_index", "multi_index"]
_DTYPE_CODES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_METHODS = ["trq", "identity", "opq"]


class ArchiveError(ValueError):
    """Raised when a model archive is malformed, corrupted or of the wrong version."""


@dataclass
class OpqModel:
    """Global rotation with a product codebook in the rotated space."""

    rotation: np.ndarray
    pcb: ProductCodebook

    @property
    def dim(self):
        return self.pcb.dim


def _quantizer_sections(prefix, q):
    if isinstance(q, ProductCodebook):
        out = {f"{prefix}type": np.array([1])}
        for g, c in enumerate(q.sub_codebooks):
            out[f"{prefix}sub/{g}"] = c
        return out
    return {f"{prefix}type": np.array([0]), f"{prefix}centroids": q.centroids}


def _quantizer_from(prefix, s):
    if int(s[f"{prefix}type"][0]) == 1:
        subs, g = [], 0
        while f"{prefix}sub/{g}" in s:
            subs.append(s[f"{prefix}sub/{g}"])
            g += 1
        return ProductCodebook(subs)
    return Codebook(s[f"{prefix}centroids"])


def _trq_sections(prefix, m):
    out = {f"{prefix}level1": m.level1.centroids, f"{prefix}transforms": m.transforms}
    out.update(_quantizer_sections(f"{prefix}level2/", m.level2))
    return out


def _trq_from(prefix, s):
    return TrqModel(Codebook(s[f"{prefix}level1"]), s[f"{prefix}transforms"],
                    _quantizer_from(f"{prefix}level2/", s))


def _sections(model):
    if isinstance(model, Codebook):
        return "codebook", _quantizer_sections("", model)
    if isinstance(model, ProductCodebook):
        return "product_codebook", _quantizer_sections("", model)
    if isinstance(model, OpqModel):
        s = {"rotation": model.rotation}
        s.update(_quantizer_sections("pq/", model.pcb))
        return "opq", s
    if isinstance(model, ResidualModel):
        s = {"h": np.array([model.h])}
        for lvl, q in enumerate(model.levels):
            s.update(_quantizer_sections(f"level/{lvl}/", q))
        return "residual", s
    if isinstance(model, TrqModel):
        return "trq", _trq_sections("", model)
    if isinstance(model, IvfIndex):
        s = _trq_sections("model/", model.model)
        s.update(offsets=model.offsets, ids=model.ids, codes=model.codes,
                 method=np.array([_METHODS.index(model.method)]))
        return "ivf_index", s
    if isinstance(model, MultiIndex):
        s = {}
        for h, half in enumerate(model.halves):
            s.update(_trq_sections(f"half/{h}/", half))
        if model.rotation is not None:
            s["rotation"] = model.rotation
        s.update(offsets=model.offsets, ids=model.ids, codes=model.codes,
                 method=np.array([_METHODS.index(model.method)]))
        return "multi_index", s
    raise TypeError(f"cannot archive object of type {type(model).__name__}")


def _from_sections(kind, s):
    if kind in ("codebook", "product_codebook"):
        return _quantizer_from("", s)
    if kind == "opq":
        return OpqModel(s["rotation"], _quantizer_from("pq/", s))
    if kind == "residual":
        return ResidualModel([_quantizer_from(f"level/{lvl}/", s) for lvl in range(int(s["h"][0]))])
    if kind == "trq":
        return _trq_from("", s)
    method = _METHODS[int(s["method"][0])]
    if kind == "ivf_index":
        return IvfIndex(_trq_from("model/", s), s["offsets"], s["ids"], s["codes"], method)
    halves = [_trq_from(f"half/{h}/", s) for h in range(2)]
    return MultiIndex(halves, s["offsets"], s["ids"], s["codes"], s.get("rotation"), method)


def _encode_array(name, arr):
    arr = np.asarray(arr)
    code = 0 if arr.dtype.kind == "f" else 1
    data = np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code])
    name_b = name.encode("utf-8")
    head = struct.pack("<H", len(name_b)) + name_b + struct.pack("<BB", code, data.ndim)
    head += struct.pack(f"<{data.ndim}Q", *data.shape)
    return head + data.tobytes()


def save_model(path, model):
    """Write ``model`` (any codebook, quantizer model or index) to ``path`` atomically."""
    kind, sections = _sections(model)
    dim = int(getattr(model, "dim", 0) or 0)
    body = MAGIC + struct.pack("<III", VERSION, KINDS.index(kind), dim)
    body += struct.pack("<I", len(sections))
    body += b"".join(_encode_array(name, arr) for name, arr in sections.items())
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    atomic_write(path, body)


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise ArchiveError("truncated archive")
        vals = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return vals

    def bytes(self, size):
        if self.pos + size > len(self.raw):
            raise ArchiveError("truncated archive")
        out = self.raw[self.pos:self.pos + size]
        self.pos += size
        return out


def load_model(path):
    """Read an archive written by :func:`save_model`."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) + 20:
        raise ArchiveError("truncated archive")
    if raw[:len(MAGIC)] != MAGIC:
        raise ArchiveError("bad magic: not a model archive")
    rd = _Reader(raw)
    rd.pos = len(MAGIC)
    version, kind_tag, _dim = rd.take("<III")
    if version != VERSION:
        raise ArchiveError(f"unsupported archive version {version} (expected {VERSION})")
    (stored_crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored_crc:
        raise ArchiveError("checksum mismatch: archive is corrupted or truncated")
    if kind_tag >= len(KINDS):
        raise ArchiveError(f"unknown model kind tag {kind_tag}")
    rd.raw = raw[:-4]
    (count,) = rd.take("<I")
    sections = {}
    for _ in range(count):
        (nlen,) = rd.take("<H")
        name = rd.bytes(nlen).decode("utf-8")
        code, ndim = rd.take("<BB")
        if code not in _DTYPE_CODES:
            raise ArchiveError(f"unknown dtype code {code} in section {name!r}")
        shape = rd.take(f"<{ndim}Q")
        dt = _DTYPE_CODES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        sections[name] = np.frombuffer(rd.bytes(size), dtype=dt).reshape(shape).copy()
    if rd.pos != len(rd.raw):
        raise ArchiveError("trailing bytes after last section")
    return _from_sections(KINDS[kind_tag], sections)
