"""Interaction-log ingestion, entity indexing, time deltas, chronological splits.

Input format (UTF-8 CSV with header)::

    user_id,item_id,timestamp,state_label,comma_separated_list_of_features

`user_id`/`item_id` are arbitrary strings, `timestamp` is float seconds,
`state_label` is 0/1, and zero or more trailing float feature columns follow
(the count must be constant across the file). This matches the public release
format of the standard temporal-interaction benchmark datasets, so those load
unmodified. The `state_label` column may be omitted entirely, in which case
every label is 0 and everything after `timestamp` is treated as features.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Interaction",
    "Dataset",
    "DeltaTable",
    "Split",
    "DataFormatError",
    "load_interactions",
    "chronological_split",
    "windowed_split",
    "compute_deltas",
    "prev_item_sequence",
]


class DataFormatError(ValueError):
    """Raised for malformed interaction files; message carries the line number."""


@dataclass(frozen=True, eq=False)
class Interaction:
    """One timestamped user-item event."""

    user: int
    item: int
    timestamp: float
    features: np.ndarray
    state_label: int
    seq_id: int


@dataclass(eq=False)
class Dataset:
    """An ordered interaction log with dense 0-based entity indices.

    Columns are stored as parallel arrays sorted by (timestamp, file order);
    `interaction(r)` materializes a row view when object access is handier.
    """

    users: np.ndarray          # (S,) int64
    items: np.ndarray          # (S,) int64
    timestamps: np.ndarray     # (S,) float64, non-decreasing
    features: np.ndarray       # (S, F) float64
    state_labels: np.ndarray   # (S,) int64, values in {0, 1}
    num_users: int
    num_items: int
    user_ids: dict[str, int] = field(default_factory=dict)
    item_ids: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.users)
        for name in ("items", "timestamps", "state_labels"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column '{name}' length differs from users")
        if self.features.shape[0] != n:
            raise ValueError("features row count differs from users")
        if n and (self.users.max() >= self.num_users or self.items.max() >= self.num_items):
            raise ValueError("entity index out of declared range")
        if n and np.any(np.diff(self.timestamps) < 0):
            raise ValueError("timestamps must be non-decreasing")

    def __len__(self) -> int:
        return len(self.users)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def interaction(self, r: int) -> Interaction:
        return Interaction(
            user=int(self.users[r]),
            item=int(self.items[r]),
            timestamp=float(self.timestamps[r]),
            features=self.features[r],
            state_label=int(self.state_labels[r]),
            seq_id=r,
        )

    @property
    def interactions(self) -> list[Interaction]:
        return [self.interaction(r) for r in range(len(self))]

    def save(self, path: str | Path) -> None:
        """Serialize to .npz; reloading reproduces the columns bit-for-bit."""
        np.savez(
            path,
            users=self.users,
            items=self.items,
            timestamps=self.timestamps,
            features=self.features,
            state_labels=self.state_labels,
            id_maps=np.array(
                json.dumps({"users": self.user_ids, "items": self.item_ids})
            ),
        )

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        with np.load(path, allow_pickle=False) as z:
            maps = json.loads(str(z["id_maps"]))
            return cls(
                users=z["users"],
                items=z["items"],
                timestamps=z["timestamps"],
                features=z["features"],
                state_labels=z["state_labels"],
                num_users=len(maps["users"]),
                num_items=len(maps["items"]),
                user_ids=maps["users"],
                item_ids=maps["items"],
            )

    def to_csv(self, path: str | Path) -> None:
        """Write back out in the input CSV format (always with a label column)."""
        inv_user = {v: k for k, v in self.user_ids.items()} if self.user_ids else {}
        inv_item = {v: k for k, v in self.item_ids.items()} if self.item_ids else {}
        with open(path, "w", encoding="utf-8") as fh:
            feat_header = "".join(f",f{j}" for j in range(self.feature_dim))
            fh.write(f"user_id,item_id,timestamp,state_label{feat_header}\n")
            for r in range(len(self)):
                u = inv_user.get(int(self.users[r]), str(int(self.users[r])))
                i = inv_item.get(int(self.items[r]), str(int(self.items[r])))
                feats = "".join(f",{float(x)!r}" for x in self.features[r])
                fh.write(
                    f"{u},{i},{float(self.timestamps[r])!r},"
                    f"{int(self.state_labels[r])}{feats}\n"
                )


def load_interactions(path: str | Path, max_rows: int | None = None) -> Dataset:
    """Parse an interaction CSV into a Dataset.

    Rows are stably sorted by timestamp (file order breaks ties) and dense
    0-based indices are assigned in order of first appearance in the sorted
    sequence. Files without features get a single constant 0 feature so layer
    shapes stay uniform downstream.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"interaction file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header:
            raise DataFormatError(f"{path}: empty file, expected a header row")
        cols = [c.strip() for c in header.split(",")]
        if cols[:3] != ["user_id", "item_id", "timestamp"]:
            raise DataFormatError(
                f"{path}: line 1: header must start with "
                f"'user_id,item_id,timestamp', got '{header}'"
            )
        has_labels = len(cols) > 3 and cols[3] == "state_label"
        first_feat = 4 if has_labels else 3

        raw_users: list[str] = []
        raw_items: list[str] = []
        ts: list[float] = []
        labels: list[int] = []
        feats: list[list[float]] = []
        feat_count: int | None = None
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < (4 if has_labels else 3):
                raise DataFormatError(f"{path}: line {lineno}: too few columns")
            try:
                t = float(parts[2])
                lab = int(parts[3]) if has_labels else 0
                fv = [float(x) for x in parts[first_feat:]]
            except (ValueError, IndexError) as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
            if t < 0:
                raise DataFormatError(f"{path}: line {lineno}: negative timestamp {t}")
            if lab not in (0, 1):
                raise DataFormatError(f"{path}: line {lineno}: state_label must be 0 or 1")
            if feat_count is None:
                feat_count = len(fv)
            elif len(fv) != feat_count:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {feat_count} feature "
                    f"columns, got {len(fv)}"
                )
            raw_users.append(parts[0])
            raw_items.append(parts[1])
            ts.append(t)
            labels.append(lab)
            feats.append(fv)
            if max_rows is not None and len(ts) >= max_rows:
                break

    if not ts:
        raise DataFormatError(f"{path}: no interactions (header only)")

    order = np.argsort(np.asarray(ts), kind="stable")
    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    users = np.empty(len(ts), dtype=np.int64)
    items = np.empty(len(ts), dtype=np.int64)
    for pos, r in enumerate(order):
        users[pos] = user_ids.setdefault(raw_users[r], len(user_ids))
        items[pos] = item_ids.setdefault(raw_items[r], len(item_ids))
    if feat_count == 0:
        features = np.zeros((len(ts), 1))
    else:
        features = np.asarray(feats, dtype=np.float64)[order]
    return Dataset(
        users=users,
        items=items,
        timestamps=np.asarray(ts, dtype=np.float64)[order],
        features=features,
        state_labels=np.asarray(labels, dtype=np.int64)[order],
        num_users=len(user_ids),
        num_items=len(item_ids),
        user_ids=user_ids,
        item_ids=item_ids,
    )


@dataclass(frozen=True)
class Split:
    """Three contiguous, time-ordered index ranges over a dataset."""

    train_start: int
    train_end: int
    val_end: int
    test_end: int

    def __post_init__(self) -> None:
        if not (0 <= self.train_start <= self.train_end <= self.val_end <= self.test_end):
            raise ValueError(f"split boundaries out of order: {self}")
        for name, lo, hi in (
            ("train", self.train_start, self.train_end),
            ("validation", self.train_end, self.val_end),
            ("test", self.val_end, self.test_end),
        ):
            if hi <= lo:
                raise ValueError(f"empty split: {name} range [{lo}, {hi}) has no interactions")

    @property
    def train(self) -> range:
        return range(self.train_start, self.train_end)

    @property
    def validation(self) -> range:
        return range(self.train_end, self.val_end)

    @property
    def test(self) -> range:
        return range(self.val_end, self.test_end)


def chronological_split(ds: Dataset, train_pct: float, val_pct: float) -> Split:
    """First train_pct% to train, next val_pct% to validation, remainder to test."""
    if train_pct <= 0 or val_pct <= 0 or train_pct + val_pct >= 100:
        raise ValueError(
            f"percentages out of range: train {train_pct}, val {val_pct} "
            "(need both > 0 and sum < 100)"
        )
    n = len(ds)
    train_end = int(n * train_pct / 100.0)
    val_end = int(n * (train_pct + val_pct) / 100.0)
    return Split(train_start=0, train_end=train_end, val_end=val_end, test_end=n)


def windowed_split(ds: Dataset, train_pct: float, val_pct: float, test_pct: float) -> Split:
    """Split with fixed-size validation/test windows right after the train window.

    Used by training-fraction sweeps: interactions after the test window are
    ignored so every grid point is scored on same-sized windows.
    """
    if min(train_pct, val_pct, test_pct) <= 0 or train_pct + val_pct + test_pct > 100:
        raise ValueError(
            f"percentages out of range: train {train_pct}, val {val_pct}, test {test_pct}"
        )
    n = len(ds)
    train_end = int(n * train_pct / 100.0)
    val_end = int(n * (train_pct + val_pct) / 100.0)
    test_end = int(n * (train_pct + val_pct + test_pct) / 100.0)
    return Split(train_start=0, train_end=train_end, val_end=val_end, test_end=test_end)


@dataclass
class DeltaTable:
    """Per-interaction elapsed time since each entity's previous interaction.

    `delta_u[r]` is the time since interaction r's user was last seen,
    `delta_i[r]` the same for its item; an entity's first interaction has raw
    delta 0. Values are stored after the chosen normalization.
    """

    delta_u: np.ndarray
    delta_i: np.ndarray
    scale: str
    user_stats: tuple[float, float]  # (shift, divisor) applied to raw user deltas
    item_stats: tuple[float, float]


def _raw_deltas(entities: np.ndarray, timestamps: np.ndarray, count: int) -> np.ndarray:
    last = np.full(count, np.nan)
    out = np.zeros(len(entities))
    for r in range(len(entities)):
        e = entities[r]
        t = timestamps[r]
        if not np.isnan(last[e]):
            out[r] = t - last[e]
        last[e] = t
    return out


def _fit_scale(raw: np.ndarray, scale: str, train_end: int) -> tuple[float, float]:
    head = raw[:train_end] if train_end else raw
    if scale == "none":
        return 0.0, 1.0
    if scale == "max":
        m = float(head.max()) if len(head) else 1.0
        return 0.0, m if m > 0 else 1.0
    if scale == "mean-std":
        mean = float(head.mean()) if len(head) else 0.0
        std = float(head.std()) if len(head) else 1.0
        return mean, std if std > 0 else 1.0
    raise ValueError(f"unknown delta scale '{scale}' (use mean-std, max, or none)")


def compute_deltas(ds: Dataset, scale: str = "mean-std", train_end: int | None = None) -> DeltaTable:
    """Single forward pass computing raw deltas, then normalize.

    Normalization statistics come from the first `train_end` interactions only
    (the training split) so that validation/test information never leaks into
    the scaling; `train_end=None` uses the whole log.
    """
    raw_u = _raw_deltas(ds.users, ds.timestamps, ds.num_users)
    raw_i = _raw_deltas(ds.items, ds.timestamps, ds.num_items)
    end = len(ds) if train_end is None else train_end
    u_stats = _fit_scale(raw_u, scale, end)
    i_stats = _fit_scale(raw_i, scale, end)
    return DeltaTable(
        delta_u=(raw_u - u_stats[0]) / u_stats[1],
        delta_i=(raw_i - i_stats[0]) / i_stats[1],
        scale=scale,
        user_stats=u_stats,
        item_stats=i_stats,
    )


def prev_item_sequence(ds: Dataset) -> np.ndarray:
    """For each interaction, the item index of that user's previous interaction.

    -1 marks a user's first interaction (no context item yet); the prediction
    layer drops the corresponding terms in that case.
    """
    last = np.full(ds.num_users, -1, dtype=np.int64)
    out = np.empty(len(ds), dtype=np.int64)
    for r in range(len(ds)):
        u = ds.users[r]
        out[r] = last[u]
        last[u] = ds.items[r]
    return out
