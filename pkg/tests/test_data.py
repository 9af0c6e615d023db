"""Tests for CSV ingestion, splits, time deltas and dataset serialization."""

import numpy as np
import pytest

from traj.data import (
    DataFormatError,
    Dataset,
    chronological_split,
    compute_deltas,
    load_interactions,
    prev_item_sequence,
    windowed_split,
)
from traj.synthetic import random_stream

HEADER = "user_id,item_id,timestamp,state_label,f0\n"


def write_csv(tmp_path, rows, header=HEADER, name="events.csv"):
    path = tmp_path / name
    path.write_text(header + "".join(rows), encoding="utf-8")
    return path


def test_load_counts_entities(tmp_path):
    path = write_csv(tmp_path, [
        "alice,x,0.0,0,1.0\n",
        "bob,x,1.0,0,2.0\n",
        "alice,y,2.0,1,3.0\n",
    ])
    ds = load_interactions(path)
    assert ds.num_users == 2
    assert ds.num_items == 2
    assert len(ds) == 3
    assert ds.feature_dim == 1


def test_load_assigns_indices_by_first_appearance(tmp_path):
    path = write_csv(tmp_path, [
        "bob,y,0.0,0,0.0\n",
        "alice,x,1.0,0,0.0\n",
        "bob,x,2.0,0,0.0\n",
    ])
    ds = load_interactions(path)
    assert ds.user_ids == {"bob": 0, "alice": 1}
    assert ds.item_ids == {"y": 0, "x": 1}
    assert ds.users.tolist() == [0, 1, 0]
    assert ds.items.tolist() == [0, 1, 1]


def test_load_header_only_is_an_error(tmp_path):
    path = write_csv(tmp_path, [])
    with pytest.raises(DataFormatError, match="no interactions"):
        load_interactions(path)


def test_load_malformed_row_names_line(tmp_path):
    path = write_csv(tmp_path, [
        "a,x,0.0,0,1.0\n",
        "b,y,not_a_number,0,1.0\n",
    ])
    with pytest.raises(DataFormatError, match="line 3"):
        load_interactions(path)


def test_load_negative_timestamp_rejected(tmp_path):
    path = write_csv(tmp_path, ["a,x,-1.0,0,1.0\n"])
    with pytest.raises(DataFormatError, match="negative timestamp"):
        load_interactions(path)


def test_load_inconsistent_feature_count_rejected(tmp_path):
    path = write_csv(tmp_path, [
        "a,x,0.0,0,1.0\n",
        "b,y,1.0,0,1.0,2.0\n",
    ])
    with pytest.raises(DataFormatError, match="line 3"):
        load_interactions(path)


def test_load_bad_label_rejected(tmp_path):
    path = write_csv(tmp_path, ["a,x,0.0,2,1.0\n"])
    with pytest.raises(DataFormatError, match="state_label"):
        load_interactions(path)


def test_load_missing_file_names_path(tmp_path):
    missing = tmp_path / "nowhere.csv"
    with pytest.raises(FileNotFoundError, match="nowhere.csv"):
        load_interactions(missing)


def test_load_without_label_column(tmp_path):
    # everything after timestamp is features when no state_label column exists
    path = write_csv(tmp_path, [
        "a,x,0.0,1.5,2.5\n",
        "b,y,1.0,3.5,4.5\n",
    ], header="user_id,item_id,timestamp,feat_a,feat_b\n")
    ds = load_interactions(path)
    assert ds.state_labels.tolist() == [0, 0]
    assert ds.features.tolist() == [[1.5, 2.5], [3.5, 4.5]]


def test_load_without_features_gets_constant_zero_column(tmp_path):
    path = write_csv(tmp_path, [
        "a,x,0.0,0\n",
        "b,y,1.0,1\n",
    ], header="user_id,item_id,timestamp,state_label\n")
    ds = load_interactions(path)
    assert ds.feature_dim == 1
    assert not ds.features.any()


def test_load_sorts_by_timestamp_keeping_file_order_on_ties(tmp_path):
    path = write_csv(tmp_path, [
        "late,x,5.0,0,0.0\n",
        "tie_first,x,1.0,0,0.0\n",
        "tie_second,y,1.0,0,0.0\n",
        "early,y,0.0,0,0.0\n",
    ])
    ds = load_interactions(path)
    assert ds.timestamps.tolist() == [0.0, 1.0, 1.0, 5.0]
    order = [u for u, _ in sorted(ds.user_ids.items(), key=lambda kv: kv[1])]
    assert order == ["early", "tie_first", "tie_second", "late"]


def test_load_max_rows(tmp_path):
    path = write_csv(tmp_path, [f"u{r},x,{r}.0,0,0.0\n" for r in range(10)])
    ds = load_interactions(path, max_rows=4)
    assert len(ds) == 4


def test_dataset_rejects_decreasing_timestamps():
    with pytest.raises(ValueError, match="non-decreasing"):
        Dataset(
            users=np.asarray([0, 0]),
            items=np.asarray([0, 0]),
            timestamps=np.asarray([1.0, 0.0]),
            features=np.zeros((2, 1)),
            state_labels=np.zeros(2, dtype=np.int64),
            num_users=1,
            num_items=1,
        )


def test_save_load_roundtrip_bit_exact(tmp_path):
    ds = random_stream(7, 5, 40, seed=11, feature_dim=3)
    path = tmp_path / "ds.npz"
    ds.save(path)
    back = Dataset.load(path)
    assert np.array_equal(ds.users, back.users)
    assert np.array_equal(ds.items, back.items)
    assert np.array_equal(ds.timestamps, back.timestamps)
    assert np.array_equal(ds.features, back.features)
    assert np.array_equal(ds.state_labels, back.state_labels)
    assert back.num_users == ds.num_users and back.num_items == ds.num_items


def test_csv_roundtrip_preserves_interactions(tmp_path):
    # indices may be permuted after reload (first-appearance order), so
    # compare the original string identifiers row by row
    ds = random_stream(6, 4, 30, seed=12, feature_dim=2)
    path = tmp_path / "out.csv"
    ds.to_csv(path)
    back = load_interactions(path)

    def names(d, idx_map, col):
        inverse = {v: k for k, v in idx_map.items()}
        return [inverse[int(x)] for x in col]

    assert names(ds, ds.user_ids, ds.users) == names(back, back.user_ids, back.users)
    assert names(ds, ds.item_ids, ds.items) == names(back, back.item_ids, back.items)
    assert np.array_equal(ds.timestamps, back.timestamps)
    assert np.array_equal(ds.features, back.features)


def test_chronological_split_80_10():
    ds = random_stream(4, 4, 10, seed=0)
    split = chronological_split(ds, 80, 10)
    assert (split.train_start, split.train_end) == (0, 8)
    assert split.validation == range(8, 9)
    assert split.test == range(9, 10)


def test_chronological_split_60_20():
    ds = random_stream(4, 4, 10, seed=0)
    split = chronological_split(ds, 60, 20)
    assert split.train == range(0, 6)
    assert split.validation == range(6, 8)
    assert split.test == range(8, 10)


def test_chronological_split_too_small_dataset():
    ds = random_stream(3, 3, 3, seed=0)
    with pytest.raises(ValueError, match="empty split"):
        chronological_split(ds, 80, 10)


def test_chronological_split_rejects_bad_percentages():
    ds = random_stream(4, 4, 10, seed=0)
    for train_pct, val_pct in [(0, 10), (80, 0), (90, 10), (80, 30), (-5, 10)]:
        with pytest.raises(ValueError, match="percentages out of range"):
            chronological_split(ds, train_pct, val_pct)


def test_split_partitions_whole_dataset():
    ds = random_stream(10, 10, 137, seed=5)
    split = chronological_split(ds, 80, 10)
    sizes = len(split.train) + len(split.validation) + len(split.test)
    assert sizes == len(ds)
    assert ds.timestamps[split.train].max() <= ds.timestamps[split.validation].min()
    assert ds.timestamps[split.validation].max() <= ds.timestamps[split.test].min()


def test_windowed_split_fixed_windows():
    ds = random_stream(10, 10, 100, seed=6)
    split = windowed_split(ds, 20, 10, 10)
    assert split.train == range(0, 20)
    assert split.validation == range(20, 30)
    assert split.test == range(30, 40)


def test_windowed_split_rejects_overflow():
    ds = random_stream(10, 10, 100, seed=6)
    with pytest.raises(ValueError):
        windowed_split(ds, 90, 10, 10)


def test_deltas_single_user_unscaled(tmp_path):
    path = write_csv(tmp_path, [
        "a,x,0.0,0,0.0\n",
        "a,y,5.0,0,0.0\n",
        "a,z,7.0,0,0.0\n",
    ])
    ds = load_interactions(path)
    table = compute_deltas(ds, scale="none")
    assert table.delta_u.tolist() == [0.0, 5.0, 2.0]


def test_deltas_first_interaction_is_zero():
    ds = random_stream(5, 5, 50, seed=7)
    table = compute_deltas(ds, scale="none")
    first_user = [np.flatnonzero(ds.users == u)[0] for u in range(ds.num_users)]
    first_item = [np.flatnonzero(ds.items == i)[0] for i in range(ds.num_items)]
    assert all(table.delta_u[r] == 0.0 for r in first_user)
    assert all(table.delta_i[r] == 0.0 for r in first_item)


def test_deltas_item_side(tmp_path):
    path = write_csv(tmp_path, [
        "a,x,0.0,0,0.0\n",
        "b,x,10.0,0,0.0\n",
    ])
    ds = load_interactions(path)
    table = compute_deltas(ds, scale="none")
    assert table.delta_i.tolist() == [0.0, 10.0]
    assert table.delta_u.tolist() == [0.0, 0.0]


def test_deltas_reconstruct_timestamps_by_prefix_sum():
    ds = random_stream(8, 8, 200, seed=8)
    table = compute_deltas(ds, scale="none")
    for u in range(ds.num_users):
        rows = np.flatnonzero(ds.users == u)
        if len(rows) == 0:
            continue
        rebuilt = ds.timestamps[rows[0]] + np.cumsum(table.delta_u[rows][1:])
        assert np.allclose(rebuilt, ds.timestamps[rows[1:]])


def test_deltas_mean_std_uses_train_rows_only():
    ds = random_stream(5, 5, 100, seed=9)
    full = compute_deltas(ds, scale="mean-std")
    head = compute_deltas(ds, scale="mean-std", train_end=50)
    raw = compute_deltas(ds, scale="none")
    mean, std = head.user_stats
    assert mean == pytest.approx(raw.delta_u[:50].mean())
    assert std == pytest.approx(raw.delta_u[:50].std())
    assert head.user_stats != full.user_stats
    assert np.allclose(head.delta_u, (raw.delta_u - mean) / std)


def test_deltas_max_scale():
    ds = random_stream(5, 5, 60, seed=10)
    raw = compute_deltas(ds, scale="none")
    table = compute_deltas(ds, scale="max")
    assert table.delta_u.max() == pytest.approx(1.0)
    assert np.allclose(table.delta_u, raw.delta_u / raw.delta_u.max())


def test_deltas_unknown_scale():
    ds = random_stream(5, 5, 10, seed=0)
    with pytest.raises(ValueError, match="unknown delta scale"):
        compute_deltas(ds, scale="log")


def test_prev_item_sequence(tmp_path):
    path = write_csv(tmp_path, [
        "a,x,0.0,0,0.0\n",
        "b,y,1.0,0,0.0\n",
        "a,y,2.0,0,0.0\n",
        "a,x,3.0,0,0.0\n",
        "b,x,4.0,0,0.0\n",
    ])
    ds = load_interactions(path)
    # first interaction of each user has no previous item (-1)
    assert prev_item_sequence(ds).tolist() == [-1, -1, 0, 1, 1]
