"""Acceptance gate: one test per shipped guarantee, numbered 1 through 9.

Each test prints a single `CRITERION <n> PASS/FAIL: <evidence>` line (run
pytest with -s or -rA to see them; `pytest -v` already gives one PASSED or
FAILED line per criterion) and then asserts on the same condition, so a
failure carries the measured numbers in its message.
"""

import time

import numpy as np

from traj.data import compute_deltas, load_interactions, prev_item_sequence
from traj.evaluation import (
    auc,
    evaluate_interactions,
    evaluate_state_change,
    metrics_from_ranks,
)
from traj.model import ModelDims, init_params, init_state, project_user
from traj.synthetic import cyclic_stream, dropout_stream, random_stream
from traj.tbatch import assign_batches, verify_plan
from traj.train import (
    StepContext,
    TrainConfig,
    batched_forward,
    gradient_check_inputs,
    gradient_check_step,
    run_training,
    sequential_forward,
    set_within_batch_threads,
)


def report(num: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {num} {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    assert ok, line


def best_of(fn, repeats: int = 3) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def test_metrics_after_validation_replay(ds, result):
    """Advance a copy of the end-of-train state through the validation
    window, then score the test window."""
    state = result.best_state.copy()
    split = result.split
    if split.val_end > split.train_end:
        sequential_forward(ds, result.best_params, state, split.train_end,
                           split.val_end, result.deltas, result.prevs)
    return state, split


# keep the replay helper out of collection; it is not a test
test_metrics_after_validation_replay.__test__ = False


def test_criterion_1_batch_plans_valid_on_random_streams():
    rng = np.random.default_rng(2024)
    violations = 0
    for i in range(1000):
        n_users = int(rng.integers(1, 51))
        n_items = int(rng.integers(1, 51))
        # every tenth stream is large; the rest keep the loop fast
        n_rows = int(rng.integers(1000, 5001)) if i % 10 == 0 \
            else int(rng.integers(1, 501))
        ds = random_stream(n_users, n_items, n_rows,
                           seed=int(rng.integers(0, 2**31)))
        plan = assign_batches(ds)
        violations += len(verify_plan(plan, ds).violations)
        assert 1 <= plan.num_batches <= len(ds)

    small = random_stream(150, 150, 30_000, seed=77)
    large = random_stream(150, 150, 300_000, seed=78)
    t_small = best_of(lambda: assign_batches(small))
    t_large = best_of(lambda: assign_batches(large))
    ratio = t_large / t_small
    report(
        1,
        violations == 0 and ratio <= 13.0,
        f"1000 random streams, {violations} plan violations; "
        f"10x interactions cost {ratio:.1f}x time (limit 13x)",
    )


def test_criterion_2_batched_forward_matches_sequential():
    ds = random_stream(60, 40, 2000, seed=5, feature_dim=2)
    dims = ModelDims(ds.num_users, ds.num_items, 8, 2)
    params = init_params(dims, seed=1)
    deltas = compute_deltas(ds, "mean-std")
    prevs = prev_item_sequence(ds)

    state_seq = init_state(dims, seed=2)
    sequential_forward(ds, params, state_seq, 0, len(ds), deltas, prevs)
    state_bat = init_state(dims, seed=2)
    batched_forward(ds, params, state_bat, assign_batches(ds), deltas, prevs)

    div = max(
        float(np.abs(state_seq.user_dyn - state_bat.user_dyn).max()),
        float(np.abs(state_seq.item_dyn - state_bat.item_dyn).max()),
    )
    report(2, div <= 1e-9,
           f"2000 interactions, max state divergence {div:.2e} (limit 1e-09)")


def test_criterion_3_gradients_match_finite_differences():
    rng = np.random.default_rng(9)
    dims = ModelDims(num_users=5, num_items=5, embedding_dim=4, feature_dim=2)
    params = init_params(dims, seed=3)
    state = init_state(dims, seed=4)
    # desynchronize the shared initial vectors so no path cancels by symmetry
    state.user_dyn[:] = rng.normal(size=state.user_dyn.shape) * 0.7
    state.item_dyn[:] = rng.normal(size=state.item_dyn.shape) * 0.7

    # previous item, state label and nonzero weights switch on every loss
    # path at once: projection, both recurrent cells, the prediction head,
    # both drift regularizers and the state cross-entropy
    ctx = StepContext.capture(
        state, user_idx=2, item_idx=1, features=rng.normal(size=2),
        delta_u=0.6, delta_i=1.3, prev_item_idx=3,
        lambda_u=0.7, lambda_i=1.4, state_label=1, state_loss_scale=2.0,
    )
    params_report = gradient_check_step(params, ctx, eps=1e-5, tol=1e-4)
    inputs_report = gradient_check_inputs(params, ctx, eps=1e-5, tol=1e-4)
    worst = max(params_report.max_rel_error, inputs_report.max_rel_error)
    report(3, params_report.passed and inputs_report.passed,
           f"max relative error {worst:.2e} over every parameter tensor "
           f"and input embedding (limit 1e-04)")


def test_criterion_4_projection_exact_at_zero_gap():
    rng = np.random.default_rng(11)
    dims = ModelDims(num_users=2, num_items=2, embedding_dim=16, feature_dim=1)
    params = init_params(dims, seed=6)
    exact = 0
    for _ in range(1000):
        params.time_scale[:, 0] = rng.normal(size=16) * 10.0
        u = rng.normal(size=16) * rng.uniform(0.1, 10.0)
        exact += np.array_equal(project_user(u, 0.0, params), u)
    report(4, exact == 1000,
           f"{exact}/1000 zero-gap projections bitwise equal to the input")


def test_criterion_5_learns_planted_cyclic_preferences():
    ds = cyclic_stream(num_users=50, num_items=20, num_interactions=10_000,
                       preferred=3, noise=0.03, seed=42)
    cfg = TrainConfig(epochs=20, embedding_dim=32, seed=0)
    result = run_training(ds, cfg)
    state, split = test_metrics_after_validation_replay(ds, result)
    rep, _ = evaluate_interactions(ds, result.best_params, state,
                                   result.deltas, result.prevs,
                                   split.val_end, split.test_end)
    # expected MRR of a uniform random ranking over m items is H(m)/m
    baseline = sum(1.0 / k for k in range(1, ds.num_items + 1)) / ds.num_items
    floor = max(0.5, 5.0 * baseline)
    report(5, rep.mrr >= floor,
           f"test MRR {rep.mrr:.4f} (floor {floor:.4f} = max(0.5, 5x random "
           f"baseline {baseline:.4f}))")


def test_criterion_6_predicts_user_dropout():
    ds = dropout_stream(seed=7)
    cfg = TrainConfig(epochs=20, embedding_dim=32, seed=0,
                      task="state_change", train_pct=60.0, val_pct=20.0,
                      state_loss_scale=10.0)
    result = run_training(ds, cfg)
    state, split = test_metrics_after_validation_replay(ds, result)
    rep = evaluate_state_change(ds, result.best_params, state,
                                result.deltas, result.prevs,
                                split.val_end, split.test_end)
    report(6, rep.auc >= 0.70, f"test AUC {rep.auc:.4f} (floor 0.70)")


def test_criterion_7_batched_forward_speedup():
    ds = random_stream(1000, 1000, 100_000, seed=3, feature_dim=1)
    dims = ModelDims(ds.num_users, ds.num_items, 128, 1)
    params = init_params(dims, seed=0)
    deltas = compute_deltas(ds, "mean-std")
    prevs = prev_item_sequence(ds)

    effective, limiter = set_within_batch_threads(4)
    try:
        state_seq = init_state(dims, seed=0)
        t0 = time.perf_counter()
        sequential_forward(ds, params, state_seq, 0, len(ds), deltas, prevs)
        t_seq = time.perf_counter() - t0

        plan = assign_batches(ds)
        state_bat = init_state(dims, seed=0)
        t0 = time.perf_counter()
        batched_forward(ds, params, state_bat, plan, deltas, prevs)
        t_bat = time.perf_counter() - t0
    finally:
        limiter.restore_original_limits()

    div = max(
        float(np.abs(state_seq.user_dyn - state_bat.user_dyn).max()),
        float(np.abs(state_seq.item_dyn - state_bat.item_dyn).max()),
    )
    speedup = t_seq / t_bat
    report(
        7,
        speedup >= 3.0 and div <= 1e-9,
        f"100000 interactions, {effective} worker thread(s) of 4 requested: "
        f"one-at-a-time {t_seq:.2f}s, batched {t_bat:.2f}s, speedup "
        f"{speedup:.1f}x (floor 3.0x), state divergence {div:.2e}",
    )


def test_criterion_8_metric_oracles():
    mrr, recall = metrics_from_ranks([1, 2, 4])
    ok_rank = abs(mrr - 7.0 / 12.0) < 1e-12 and recall == 1.0

    ok_auc = abs(auc([0.8, 0.6, 0.4, 0.2], [1, 0, 1, 0]) - 0.75) < 1e-12

    # brute force over every positive-negative pair, ties credited 1/2
    rng = np.random.default_rng(21)
    scores = np.round(rng.uniform(size=60), 1)
    labels = (rng.uniform(size=60) < 0.4).astype(int)
    labels[0], labels[1] = 1, 0
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = sum(
        1.0 if p > n else (0.5 if p == n else 0.0) for p in pos for n in neg
    )
    brute = wins / (len(pos) * len(neg))
    ok_pairs = abs(auc(scores, labels) - brute) < 1e-12

    report(8, ok_rank and ok_auc and ok_pairs,
           f"ranks [1,2,4] -> MRR {mrr:.5f}, recall@10 {recall}; "
           f"AUC example 0.75; tied-score AUC matches {brute:.4f} from "
           f"brute-force pair counting")


def test_criterion_9_full_scale_benchmarks_out_of_scope(tmp_path):
    """Published large-scale benchmark figures are not gated here: they need
    the complete public event logs and long many-epoch runs, far beyond a
    desk-scale check. This suite instead guarantees the released log format
    loads unchanged, so full runs stay one `traj train` away."""
    path = tmp_path / "released_format.csv"
    path.write_text(
        "user_id,item_id,timestamp,state_label,"
        "comma_separated_list_of_features\n"
        "0,0,0.0,0,0.1,0.2,-1.3,0.0\n"
        "1,0,36.5,0,0.0,0.0,2.0,1.0\n"
        "0,1,112.0,1,-0.4,0.1,0.0,0.2\n"
    )
    ds = load_interactions(path)
    ok = (
        len(ds) == 3
        and ds.num_users == 2
        and ds.num_items == 2
        and ds.features.shape == (3, 4)
        and int(ds.state_labels.sum()) == 1
    )
    report(9, ok,
           "full-scale benchmark figures excluded by design; released CSV "
           "format loads unchanged (3 rows, 4 feature columns, labels kept)")
