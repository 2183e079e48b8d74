"""Transformed residual quantization for approximate nearest neighbor search."""

from .dataio import gen_synthetic, load_model, read_vecs, save_model, write_vecs
from .index import build_ivf_trq, build_multi_index_trq, search, search_batch
from .pq import train_opq, train_pq
from .rq import train_rq
from .trq import TrqModel, decode_trq, encode_trq, train_trq, trq_mse
from .vq import Codebook, train_kmeans

__version__ = "0.1.0"

__all__ = [
    "Codebook",
    "TrqModel",
    "train_kmeans",
    "train_pq",
    "train_opq",
    "train_rq",
    "train_trq",
    "encode_trq",
    "decode_trq",
    "trq_mse",
    "build_ivf_trq",
    "build_multi_index_trq",
    "search",
    "search_batch",
    "read_vecs",
    "write_vecs",
    "gen_synthetic",
    "save_model",
    "load_model",
]
