"""Evaluation: ranking metrics over all items, state-change AUC, retrieval.

Interaction prediction is scored by replaying the test range in time order:
for each interaction the user is projected to the interaction instant, an
item embedding is predicted, the ground-truth item is ranked by L2 distance
against EVERY item (no sampled negatives), and only then is the interaction
applied so later test rows see an up-to-date state. Parameters stay frozen
throughout; the embedding state keeps evolving.

Distances compare the predicted [one-hot || dynamic] vector with each item's
[one-hot(k) || dyn_k]; the one-hot block never gets materialized because
||s - e_k||^2 = ||s||^2 - 2 s_k + 1.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import Dataset, DeltaTable
from .model import (
    EmbeddingState,
    ModelParams,
    predict_item_embedding,
    predict_state_change,
    project_user,
    update_embeddings,
)

__all__ = [
    "RankRecord",
    "MetricsReport",
    "rank_ground_truth",
    "metrics_from_ranks",
    "evaluate_interactions",
    "auc",
    "evaluate_state_change",
    "LshIndex",
    "lsh_build",
    "lsh_query",
    "refresh_item",
    "exact_top_k",
]


@dataclass(frozen=True)
class RankRecord:
    """Ranking outcome of one test interaction (rank is 1-based)."""

    seq_id: int
    rank: int
    reciprocal_rank: float


@dataclass
class MetricsReport:
    """Evaluation summary; fields that do not apply to the task are None."""

    mrr: float | None = None
    recall_at_10: float | None = None
    auc: float | None = None
    n_test_interactions: int = 0
    wall_clock_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "mrr": self.mrr,
            "recall_at_10": self.recall_at_10,
            "auc": self.auc,
            "n_test_interactions": self.n_test_interactions,
            "wall_clock_seconds": self.wall_clock_seconds,
        }


def _squared_distances(j_pred: np.ndarray, item_dyn: np.ndarray) -> np.ndarray:
    """Squared L2 distance from the prediction to every item's
    [one-hot || dynamic] vector, shape (num_items,)."""
    num_items = item_dyn.shape[0]
    ps = j_pred[:num_items]
    pd = j_pred[num_items:]
    static_part = float(ps @ ps) + 1.0 - 2.0 * ps
    diff = item_dyn - pd
    return static_part + (diff * diff).sum(axis=1)


def rank_ground_truth(
    j_pred: np.ndarray, item_dyn: np.ndarray, true_idx: int
) -> int:
    """1-based rank of the true item among all items by L2 distance.

    Ties (including the true item itself) are resolved to the mean position
    of the tied block, rounded up: with s items strictly closer and t items
    at exactly the true distance, rank = s + ceil((t + 1) / 2). Four items
    all equidistant therefore rank the true item 3rd.
    """
    num_items = item_dyn.shape[0]
    if num_items == 0:
        raise ValueError("empty item set: nothing to rank against")
    if not (0 <= true_idx < num_items):
        raise IndexError(f"true item index {true_idx} out of range [0, {num_items})")
    d2 = _squared_distances(j_pred, item_dyn)
    dt = d2[true_idx]
    smaller = int((d2 < dt).sum())
    ties = int((d2 == dt).sum())
    return smaller + (ties + 2) // 2


def metrics_from_ranks(ranks, k: int = 10) -> tuple[float, float]:
    """(MRR, recall@k) of a rank list."""
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        raise ValueError("no ranks to aggregate")
    return float((1.0 / r).mean()), float((r <= k).mean())


def evaluate_interactions(
    ds: Dataset,
    params: ModelParams,
    state: EmbeddingState,
    deltas: DeltaTable,
    prevs: np.ndarray,
    start: int,
    end: int,
) -> tuple[MetricsReport, list[RankRecord]]:
    """Rank every interaction in [start, end) and report MRR / recall@10.

    `state` must be advanced to `start`; it is mutated through to `end`.
    """
    if end <= start:
        raise ValueError(f"empty evaluation range [{start}, {end})")
    t0 = time.perf_counter()
    records = []
    for r in range(start, end):
        u = int(ds.users[r])
        i = int(ds.items[r])
        u_proj = project_user(state.user_dyn[u], float(deltas.delta_u[r]), params)
        pv = int(prevs[r])
        prev_dyn = state.item_dyn[pv] if pv >= 0 else None
        j_pred = predict_item_embedding(
            u_proj, u, prev_dyn, pv if pv >= 0 else None, params
        )
        rank = rank_ground_truth(j_pred, state.item_dyn, i)
        records.append(RankRecord(seq_id=r, rank=rank, reciprocal_rank=1.0 / rank))
        u_new, i_new = update_embeddings(
            state.user_dyn[u], state.item_dyn[i], ds.features[r],
            float(deltas.delta_u[r]), float(deltas.delta_i[r]), params,
        )
        state.apply(u, i, u_new, i_new, float(ds.timestamps[r]))
    mrr, recall = metrics_from_ranks([rec.rank for rec in records])
    report = MetricsReport(
        mrr=mrr,
        recall_at_10=recall,
        n_test_interactions=end - start,
        wall_clock_seconds=time.perf_counter() - t0,
    )
    return report, records


def auc(scores, labels) -> float:
    """Probability a random positive scores above a random negative, ties
    counted half (rank-sum formulation with midranks)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D sequences")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != len(y):
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: labels contain a single class")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    # midranks: every member of a tie group gets the group's mean 1-based rank
    _, starts, counts = np.unique(sorted_s, return_index=True, return_counts=True)
    group_rank = starts + (counts + 1) / 2.0
    ranks = np.empty(len(s))
    ranks[order] = np.repeat(group_rank, counts)
    pos_rank_sum = ranks[y == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate_state_change(
    ds: Dataset,
    params: ModelParams,
    state: EmbeddingState,
    deltas: DeltaTable,
    prevs: np.ndarray,
    start: int,
    end: int,
) -> MetricsReport:
    """Score every interaction's post-update state-change probability against
    its label over [start, end) and report AUC. The range must contain both a
    positive and a negative label."""
    if end <= start:
        raise ValueError(f"empty evaluation range [{start}, {end})")
    t0 = time.perf_counter()
    probs = np.empty(end - start)
    for r in range(start, end):
        u = int(ds.users[r])
        i = int(ds.items[r])
        u_new, i_new = update_embeddings(
            state.user_dyn[u], state.item_dyn[i], ds.features[r],
            float(deltas.delta_u[r]), float(deltas.delta_i[r]), params,
        )
        probs[r - start] = predict_state_change(u_new, u, params)
        state.apply(u, i, u_new, i_new, float(ds.timestamps[r]))
    score = auc(probs, ds.state_labels[start:end])
    return MetricsReport(
        auc=score,
        n_test_interactions=end - start,
        wall_clock_seconds=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# nearest-neighbor retrieval over [one-hot || dynamic] item vectors
# ---------------------------------------------------------------------------

@dataclass
class LshIndex:
    """Random-hyperplane LSH over item vectors.

    hyperplanes has shape (tables, planes, num_items + n). Each table hashes
    an item to the sign pattern of its hyperplane dot products, packed into
    an integer bucket key; `signatures[i, t]` remembers item i's current key
    in table t so the item can be moved when its embedding changes. Every
    item lives in exactly one bucket per table.
    """

    hyperplanes: np.ndarray
    buckets: list[dict[int, set[int]]]
    signatures: np.ndarray
    num_items: int


def _pack_bits(bits: np.ndarray) -> np.ndarray:
    # bits (planes, ...) boolean -> integer keys along the first axis
    weights = 1 << np.arange(bits.shape[0], dtype=np.int64)
    return (bits.astype(np.int64) * weights[:, None]).sum(axis=0)


def _item_signatures(
    hyperplanes: np.ndarray, item_dyn: np.ndarray
) -> np.ndarray:
    """Bucket keys for all items in all tables, shape (num_items, tables).
    The one-hot block contributes one hyperplane coordinate per item, so the
    full item vectors never need materializing."""
    tables = hyperplanes.shape[0]
    num_items = item_dyn.shape[0]
    sigs = np.empty((num_items, tables), dtype=np.int64)
    for t in range(tables):
        h = hyperplanes[t]
        scores = h[:, :num_items] + h[:, num_items:] @ item_dyn.T
        sigs[:, t] = _pack_bits(scores > 0)
    return sigs


def lsh_build(
    item_dyn: np.ndarray, tables: int = 4, planes: int = 8, seed: int = 0
) -> LshIndex:
    if planes < 1:
        raise ValueError("need at least one hyperplane per table")
    if tables < 1:
        raise ValueError("need at least one table")
    num_items, n = item_dyn.shape
    rng = np.random.default_rng(seed)
    hyperplanes = rng.normal(size=(tables, planes, num_items + n))
    sigs = _item_signatures(hyperplanes, item_dyn)
    buckets: list[dict[int, set[int]]] = []
    for t in range(tables):
        table: dict[int, set[int]] = {}
        for i in range(num_items):
            table.setdefault(int(sigs[i, t]), set()).add(i)
        buckets.append(table)
    return LshIndex(
        hyperplanes=hyperplanes, buckets=buckets, signatures=sigs,
        num_items=num_items,
    )


def refresh_item(index: LshIndex, item_idx: int, new_dyn: np.ndarray) -> None:
    """Move one item to its new buckets after its dynamic embedding changed.
    Call this whenever an indexed item's embedding is updated."""
    num_items = index.num_items
    for t in range(index.hyperplanes.shape[0]):
        h = index.hyperplanes[t]
        scores = h[:, item_idx] + h[:, num_items:] @ new_dyn
        key = int(_pack_bits((scores > 0)[:, None])[0])
        old = int(index.signatures[item_idx, t])
        if key == old:
            continue
        bucket = index.buckets[t][old]
        bucket.discard(item_idx)
        if not bucket:
            del index.buckets[t][old]
        index.buckets[t].setdefault(key, set()).add(item_idx)
        index.signatures[item_idx, t] = key


def lsh_query(
    index: LshIndex,
    j_pred: np.ndarray,
    item_dyn: np.ndarray,
    k: int = 1,
) -> np.ndarray:
    """Approximate k nearest items: take the union of the query's buckets
    across tables, then rank those candidates by exact distance. An empty
    union falls back to exact search over all items, so a query always
    returns min(k, num_items) results."""
    candidates: set[int] = set()
    for t in range(index.hyperplanes.shape[0]):
        key = int(_pack_bits((index.hyperplanes[t] @ j_pred > 0)[:, None])[0])
        candidates |= index.buckets[t].get(key, set())
    if not candidates:
        return exact_top_k(j_pred, item_dyn, k)
    cand = np.fromiter(candidates, dtype=np.int64)
    cand.sort()
    num_items = item_dyn.shape[0]
    ps = j_pred[:num_items]
    pd = j_pred[num_items:]
    diff = item_dyn[cand] - pd
    d2 = float(ps @ ps) + 1.0 - 2.0 * ps[cand] + (diff * diff).sum(axis=1)
    order = np.argsort(d2, kind="mergesort")
    return cand[order[:k]]


def exact_top_k(j_pred: np.ndarray, item_dyn: np.ndarray, k: int = 1) -> np.ndarray:
    """The k closest items by exact distance, closest first."""
    d2 = _squared_distances(j_pred, item_dyn)
    order = np.argsort(d2, kind="mergesort")
    return order[:k]
