#!/usr/bin/env python3
# Partition an interaction stream into ordered independent edge sets: within
# a batch no user and no item repeats, and each entity's interactions keep
# their temporal order across batches. Every batch can then be processed as
# one matrix operation without changing any trajectory.
from traj import assign_batches, plan_stats, random_stream, verify_plan

ds = random_stream(num_users=40, num_items=30, num_interactions=5_000, seed=8)
plan = assign_batches(ds)

report = verify_plan(plan, ds)
print(f"plan valid: {report.valid} ({len(report.violations)} violations)")

stats = plan_stats(plan)
print(f"{stats['num_interactions']} interactions -> "
      f"{stats['num_batches']} batches")
print(f"largest batch {stats['max_batch_size']}, "
      f"mean batch size {stats['mean_batch_size']:.1f}, "
      f"parallelism ratio {stats['parallelism_ratio']:.1f}x")

# the batch count is driven by the busiest entity: one user doing everything
# serializes the whole stream into singleton batches
serial = random_stream(num_users=1, num_items=30, num_interactions=200, seed=8)
serial_plan = assign_batches(serial)
print(f"single-user stream: {len(serial)} interactions -> "
      f"{serial_plan.num_batches} batches (no parallelism to find)")
