"""
Walking product cells of an inverted multi-index
================================================

Each half of the vector has its own coarse quantizer, so a cell is a pair
``(i, j)``. Cells are visited in increasing order of the summed half
distances until the shortlist holds enough vectors.
"""

import itertools

import numpy as np

from trqann.dataio import gen_synthetic
from trqann.index import build_multi_index_trq, multi_sequence, search_multi

# the enumeration itself, on two tiny distance lists
d1 = np.array([0.0, 2.0, 5.0])
d2 = np.array([1.0, 1.5, 9.0])
for i, j in itertools.islice(multi_sequence(d1, d2), 6):
    print(f"cell ({i}, {j})  sum {d1[i] + d2[j]:.1f}")

ds = gen_synthetic("clustered-anisotropic", 20000, 16, 64, seed=1, n_queries=5, spread=1.0)
index = build_multi_index_trq(ds.vectors, 32, 8, 16, ia_iters=10, seed=1)

# longer shortlists visit more cells, and each visited cell costs one transform
for t in (100, 1000, 10000):
    res = search_multi(index, ds.queries[0], shortlist=t, top_r=5)
    print(f"T={t:>5}: cells {res.stats.cells_visited:>4}  candidates {res.stats.candidates:>5}"
          f"  top ids {res.ids.tolist()}")
