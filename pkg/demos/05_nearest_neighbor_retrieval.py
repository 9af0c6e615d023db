#!/usr/bin/env python3
# Rank items for a prediction without scanning the whole catalogue: hash
# every item's [one-hot || dynamic embedding] vector into random-hyperplane
# buckets, then compare the buckets' candidates exactly. With enough tables
# the approximate top-1 almost always matches the exact top-1, at a fraction
# of the comparisons.
import numpy as np

from traj import exact_top_k, lsh_build, lsh_query, refresh_item

rng = np.random.default_rng(5)
num_items, dim = 2_000, 16
item_dyn = rng.normal(size=(num_items, dim))

index = lsh_build(item_dyn, tables=4, planes=8, seed=0)

# queries are noisy copies of real item vectors, as a trained prediction
# head would produce just before its next interaction
hits = 0
trials = 500
for _ in range(trials):
    target = int(rng.integers(num_items))
    j_pred = np.zeros(num_items + dim)
    j_pred[target] = 1.0
    j_pred[num_items:] = item_dyn[target] + rng.normal(size=dim) * 0.05
    approx = lsh_query(index, j_pred, item_dyn, k=1)[0]
    exact = exact_top_k(j_pred, item_dyn, k=1)[0]
    hits += int(approx == exact)
print(f"approximate top-1 agreed with exact search on {hits}/{trials} queries")

# embeddings move after every interaction; re-hash a moved item so later
# queries can still find it
moved = 7
item_dyn[moved] = rng.normal(size=dim)
refresh_item(index, moved, item_dyn[moved])
j_pred = np.zeros(num_items + dim)
j_pred[moved] = 1.0
j_pred[num_items:] = item_dyn[moved]
print("after moving item 7, query returns:",
      lsh_query(index, j_pred, item_dyn, k=3))
