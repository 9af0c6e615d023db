"""Seeded synthetic interaction streams for tests, demos and benchmarks.

Three generators, all returning ready-made Dataset objects:

  random_stream    unstructured traffic; exercises batching and timing paths
  cyclic_stream    planted sequential structure: every user walks a fixed
                   3-item cycle, so the next item is predictable from the
                   previous one; occasional noise events break the pattern
  dropout_stream   a small fraction of users "drop out": their feature value
                   ramps up over their last few events and their final event
                   carries state label 1
"""

from __future__ import annotations

import numpy as np

from .data import Dataset

__all__ = ["random_stream", "cyclic_stream", "dropout_stream"]


def _make_dataset(users, items, timestamps, features, labels,
                  num_users, num_items) -> Dataset:
    return Dataset(
        users=np.asarray(users, dtype=np.int64),
        items=np.asarray(items, dtype=np.int64),
        timestamps=np.asarray(timestamps, dtype=np.float64),
        features=np.asarray(features, dtype=np.float64),
        state_labels=np.asarray(labels, dtype=np.int64),
        num_users=num_users,
        num_items=num_items,
        user_ids={f"u{i}": i for i in range(num_users)},
        item_ids={f"i{j}": j for j in range(num_items)},
    )


def random_stream(
    num_users: int,
    num_items: int,
    num_interactions: int,
    seed: int = 0,
    feature_dim: int = 1,
) -> Dataset:
    """Uniformly random user/item pairs with exponential inter-event times."""
    rng = np.random.default_rng(seed)
    s = num_interactions
    return _make_dataset(
        users=rng.integers(0, num_users, size=s),
        items=rng.integers(0, num_items, size=s),
        timestamps=np.cumsum(rng.exponential(1.0, size=s)),
        features=rng.normal(0.0, 1.0, size=(s, feature_dim)),
        labels=np.zeros(s, dtype=np.int64),
        num_users=num_users,
        num_items=num_items,
    )


def cyclic_stream(
    num_users: int = 50,
    num_items: int = 20,
    num_interactions: int = 10_000,
    preferred: int = 3,
    noise: float = 0.03,
    seed: int = 0,
) -> Dataset:
    """Each user cycles deterministically through `preferred` items.

    Items are partitioned into num_items // preferred disjoint cycles and
    each user is pinned to one of them, so "the item after q" is a global
    function of q; leftover items only ever appear as noise. With
    probability `noise` an event emits a uniformly random item instead of
    the scheduled one (the schedule still advances), which corrupts both
    that transition and the next one.
    """
    if not 0 <= noise < 1:
        raise ValueError("noise must be in [0, 1)")
    groups = num_items // preferred
    if groups < 1:
        raise ValueError("need at least one full cycle of preferred items")
    rng = np.random.default_rng(seed)
    s = num_interactions
    users = rng.integers(0, num_users, size=s)
    noisy = rng.random(s) < noise
    noise_items = rng.integers(0, num_items, size=s)
    pointer = np.zeros(num_users, dtype=np.int64)
    items = np.empty(s, dtype=np.int64)
    for r in range(s):
        u = users[r]
        g = u % groups
        scheduled = g * preferred + pointer[u]
        pointer[u] = (pointer[u] + 1) % preferred
        items[r] = noise_items[r] if noisy[r] else scheduled
    return _make_dataset(
        users=users,
        items=items,
        timestamps=np.arange(s, dtype=np.float64),
        features=np.zeros((s, 1)),
        labels=np.zeros(s, dtype=np.int64),
        num_users=num_users,
        num_items=num_items,
    )


def dropout_stream(
    num_users: int = 400,
    num_dropouts: int = 120,
    num_interactions: int = 10_000,
    num_items: int = 20,
    drift_len: int = 5,
    drift_scale: float = 6.0,
    seed: int = 0,
) -> Dataset:
    """Event stream where ~num_dropouts/num_interactions of the labels are 1.

    Dropout users stop appearing after a final event labeled 1; their single
    feature ramps linearly up to drift_scale over their last `drift_len`
    events (earlier events, and all other users, emit N(0,1) features). The
    final-event slots are spread over the last three quarters of the stream
    so every chronological split window contains both label classes.
    """
    if num_dropouts >= num_users:
        raise ValueError("need at least one never-dropping user")
    rng = np.random.default_rng(seed)
    s = num_interactions
    num_normal = num_users - num_dropouts
    lo = s // 4
    finals = rng.choice(np.arange(lo, s), size=num_dropouts, replace=False)
    final_of = {num_normal + d: int(slot) for d, slot in enumerate(finals)}
    slot_user = np.full(s, -1, dtype=np.int64)
    for u, slot in final_of.items():
        slot_user[slot] = u
    for r in range(s):
        if slot_user[r] >= 0:
            continue
        while True:
            u = int(rng.integers(0, num_users))
            if u < num_normal or final_of[u] > r:
                break
        slot_user[r] = u
    features = rng.normal(0.0, 1.0, size=(s, 1))
    labels = np.zeros(s, dtype=np.int64)
    for u, slot in final_of.items():
        labels[slot] = 1
        rows = np.flatnonzero(slot_user == u)[-drift_len:]
        # ramp ends exactly at drift_scale even when the user has fewer than
        # drift_len events in total
        ramp = drift_scale * np.arange(1, len(rows) + 1) / len(rows)
        features[rows, 0] = ramp
    return _make_dataset(
        users=slot_user,
        items=rng.integers(0, num_items, size=s),
        timestamps=np.arange(s, dtype=np.float64),
        features=features,
        labels=labels,
        num_users=num_users,
        num_items=num_items,
    )
