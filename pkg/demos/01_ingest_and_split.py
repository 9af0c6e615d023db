#!/usr/bin/env python3
# Load a timestamped interaction log from CSV, split it chronologically and
# look at the normalized time gaps the model consumes.
import tempfile
from pathlib import Path

from traj import chronological_split, compute_deltas, load_interactions

csv_text = """\
user_id,item_id,timestamp,state_label,f0,f1
alice,ring,0.0,0,0.2,1.0
bob,ring,4.0,0,0.0,0.0
alice,amulet,10.0,0,0.9,0.1
carol,ring,11.0,0,0.4,0.4
bob,amulet,15.0,0,0.1,0.8
alice,ring,30.0,1,0.0,0.0
carol,amulet,31.0,0,0.7,0.2
bob,ring,40.0,0,0.3,0.3
alice,amulet,55.0,0,0.5,0.5
carol,ring,60.0,0,0.6,0.0
"""

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "events.csv"
    path.write_text(csv_text)
    ds = load_interactions(path)

print(f"loaded {len(ds)} interactions, {ds.num_users} users, "
      f"{ds.num_items} items, {ds.features.shape[1]} feature columns")

# string identifiers get dense indices in order of first appearance
print("user index map:", ds.user_ids)
print("item index map:", ds.item_ids)

# first 80% of the timeline trains, next 10% validates, the rest tests
split = chronological_split(ds, train_pct=80, val_pct=10)
print(f"train rows [0,{split.train_end}), val rows "
      f"[{split.train_end},{split.val_end}), test rows "
      f"[{split.val_end},{split.test_end})")

# per-entity gaps since the previous interaction; training feeds on the
# z-scored version, with the statistics fit on the train window only
raw = compute_deltas(ds, scale="none")
scaled = compute_deltas(ds, scale="mean-std", train_end=split.train_end)
print("raw user gaps:   ", raw.delta_u)
print("scaled user gaps:", scaled.delta_u.round(3))
