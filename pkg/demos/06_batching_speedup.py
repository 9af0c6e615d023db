#!/usr/bin/env python3
# Measure what batching buys on a forward pass with frozen parameters. The
# batched pass must produce bit-for-bit comparable trajectories while doing
# one matrix multiply per batch instead of one per interaction.
import time

import numpy as np

from traj import (
    ModelDims,
    assign_batches,
    batched_forward,
    compute_deltas,
    init_params,
    init_state,
    plan_stats,
    prev_item_sequence,
    random_stream,
    sequential_forward,
)

ds = random_stream(num_users=300, num_items=300, num_interactions=20_000,
                   seed=4)
dims = ModelDims(ds.num_users, ds.num_items, embedding_dim=64, feature_dim=1)
params = init_params(dims, seed=0)
deltas = compute_deltas(ds, "mean-std")
prevs = prev_item_sequence(ds)

plan = assign_batches(ds)
stats = plan_stats(plan)
print(f"{stats['num_interactions']} interactions in "
      f"{stats['num_batches']} batches "
      f"(parallelism ratio {stats['parallelism_ratio']:.1f}x)")

state_seq = init_state(dims, seed=0)
t0 = time.perf_counter()
sequential_forward(ds, params, state_seq, 0, len(ds), deltas, prevs)
t_seq = time.perf_counter() - t0

state_bat = init_state(dims, seed=0)
t0 = time.perf_counter()
batched_forward(ds, params, state_bat, plan, deltas, prevs)
t_bat = time.perf_counter() - t0

div = max(np.abs(state_seq.user_dyn - state_bat.user_dyn).max(),
          np.abs(state_seq.item_dyn - state_bat.item_dyn).max())
print(f"one at a time: {t_seq:.2f}s   batched: {t_bat:.2f}s   "
      f"speedup {t_seq / t_bat:.1f}x")
print(f"max divergence between the two final states: {div:.2e}")
