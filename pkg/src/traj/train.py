"""Training loop: hand-derived reverse-mode gradients, Adam, batched epochs.

Gradients are written out analytically (no autograd). The differentiated
objective per interaction is

    ||j_pred - target||_2  +  lambda_u * ||u_new - u_prev||_2
                           +  lambda_i * ||i_new - i_prev||_2
                           +  state_loss_scale * cross_entropy (state task only)

with the L2 terms NOT squared; at a zero-distance point the subgradient is
taken to be the zero vector. Every formula here is validated against central
finite differences (see numkit.finite_diff_check and the test suite).

Two truncation policies for backprop through time:

  per-batch (default): embeddings entering a batch are treated as constants;
      one Adam step per batch. Memory stays O(batch).
  none: the exact gradient of the whole epoch's summed loss, obtained by a
      reverse sweep over all batches with per-entity adjoint accumulators;
      one Adam step per epoch. Meant for small gradient-flow studies.

Within a batch every forward reads the embedding state as it was at batch
entry (members touch disjoint users/items, so their updates cannot conflict;
a previous-item lookup that collides with a same-batch update also reads the
batch-entry value). The state is committed once per batch.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, replace

import numpy as np
from threadpoolctl import threadpool_limits

from .data import (
    Dataset,
    DeltaTable,
    Split,
    chronological_split,
    compute_deltas,
    prev_item_sequence,
    windowed_split,
)
from .model import (
    EmbeddingState,
    LossComponents,
    ModelDims,
    ModelParams,
    StepOutput,
    forward_interaction,
    init_params,
    init_state,
    interaction_loss,
    predict_item_embedding,
    predict_state_change,
    cross_entropy,
    project_user,
    update_embeddings,
)
from .numkit import GradCheckReport, finite_diff_check, sigmoid
from .tbatch import BatchPlan, assign_batches, verify_plan

__all__ = [
    "TrainConfig",
    "OptState",
    "EpochReport",
    "TrainResult",
    "StepContext",
    "zero_grads",
    "run_step",
    "backward_step",
    "adam_init",
    "adam_step",
    "BatchTape",
    "batch_forward",
    "batch_backward",
    "commit_batch",
    "train_epoch",
    "full_history_gradients",
    "epoch_forward_loss",
    "sequential_forward",
    "batched_forward",
    "set_within_batch_threads",
    "run_training",
    "gradient_check_step",
    "gradient_check_inputs",
]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def set_within_batch_threads(requested: int):
    """Cap the numeric library's thread pool at min(requested, CPUs).

    Within-batch work parallelizes across rows inside the BLAS calls.
    Granting more threads than schedulable CPUs makes those calls slower,
    not faster (spin contention), so the request is clamped. Returns
    (effective_count, limiter); the limiter object must stay referenced
    for the cap to remain in force.
    """
    if requested < 1:
        raise ValueError(f"thread count must be >= 1, got {requested}")
    try:
        cpus = len(os.sched_getaffinity(0))
    except AttributeError:
        cpus = os.cpu_count() or 1
    effective = max(1, min(int(requested), cpus))
    limiter = threadpool_limits(limits=effective)
    return effective, limiter


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    embedding_dim: int = 128
    lambda_u: float = 1.0
    lambda_i: float = 1.0
    state_loss_scale: float = 1.0
    seed: int = 0
    detach_policy: str = "per-batch"      # per-batch | none
    task: str = "interaction"             # interaction | state_change
    train_pct: float = 80.0
    val_pct: float = 10.0
    # None: test = everything after validation. Set (e.g. 10.0) to pin the
    # validation/test windows to fixed sizes right after the train window,
    # which keeps them comparable across a train_pct sweep.
    test_pct: float | None = None
    delta_scale: str = "mean-std"         # mean-std | max | none

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.detach_policy not in ("per-batch", "none"):
            raise ValueError(f"unknown detach_policy {self.detach_policy!r}")
        if self.task not in ("interaction", "state_change"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.test_pct is not None and self.test_pct <= 0:
            raise ValueError("test_pct must be positive when given")


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    """One zero array per parameter tensor, keyed by canonical name."""
    return {name: np.zeros_like(a) for name, a in params.tensors()}


def _check_grads_finite(grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in tensor {name}")


def _unit_or_zero(diff: np.ndarray, norm: float) -> np.ndarray:
    # d||x||/dx = x/||x||; at the kink ||x||=0 we use the zero subgradient
    if norm > 0.0:
        return diff / norm
    return np.zeros_like(diff)


# ---------------------------------------------------------------------------
# scalar route: one interaction at a time
# ---------------------------------------------------------------------------

@dataclass
class StepContext:
    """Frozen inputs of a single interaction, snapshotted from the state.

    Keeping copies (not views) makes the context independent of later state
    mutation, so the same context can be replayed under perturbed parameters
    during finite-difference checks.
    """

    user_idx: int
    item_idx: int
    features: np.ndarray
    delta_u: float
    delta_i: float
    u_prev: np.ndarray
    i_prev: np.ndarray
    prev_item_idx: int | None = None
    prev_dyn: np.ndarray | None = None
    lambda_u: float = 1.0
    lambda_i: float = 1.0
    state_label: int | None = None
    state_loss_scale: float = 1.0

    @classmethod
    def capture(
        cls,
        state: EmbeddingState,
        user_idx: int,
        item_idx: int,
        features: np.ndarray,
        delta_u: float,
        delta_i: float,
        prev_item_idx: int | None = None,
        lambda_u: float = 1.0,
        lambda_i: float = 1.0,
        state_label: int | None = None,
        state_loss_scale: float = 1.0,
    ) -> "StepContext":
        prev_dyn = None
        if prev_item_idx is not None:
            prev_dyn = state.item_dyn[prev_item_idx].copy()
        return cls(
            user_idx=user_idx,
            item_idx=item_idx,
            features=np.asarray(features, dtype=np.float64).copy(),
            delta_u=float(delta_u),
            delta_i=float(delta_i),
            u_prev=state.user_dyn[user_idx].copy(),
            i_prev=state.item_dyn[item_idx].copy(),
            prev_item_idx=prev_item_idx,
            prev_dyn=prev_dyn,
            lambda_u=lambda_u,
            lambda_i=lambda_i,
            state_label=state_label,
            state_loss_scale=state_loss_scale,
        )


def run_step(p: ModelParams, ctx: StepContext) -> StepOutput:
    """Forward pass of one interaction from a frozen context."""
    u_proj = project_user(ctx.u_prev, ctx.delta_u, p)
    j_pred = predict_item_embedding(
        u_proj, ctx.user_idx, ctx.prev_dyn, ctx.prev_item_idx, p
    )
    u_new, i_new = update_embeddings(
        ctx.u_prev, ctx.i_prev, ctx.features, ctx.delta_u, ctx.delta_i, p
    )
    loss = interaction_loss(
        j_pred, ctx.item_idx, ctx.i_prev, u_new, ctx.u_prev, i_new, ctx.i_prev,
        ctx.lambda_u, ctx.lambda_i,
    )
    state_prob = None
    if ctx.state_label is not None:
        state_prob = predict_state_change(u_new, ctx.user_idx, p)
        loss.state_ce = cross_entropy(state_prob, ctx.state_label)
        loss.total += ctx.state_loss_scale * loss.state_ce
    return StepOutput(
        u_new=u_new, i_new=i_new, u_proj=u_proj, j_pred=j_pred,
        loss=loss, state_prob=state_prob,
    )


def backward_step(
    ctx: StepContext,
    p: ModelParams,
    out: StepOutput | None = None,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray | None]]:
    """Analytic gradients of one interaction's total loss.

    Returns (parameter gradients keyed by tensor name, gradients w.r.t. the
    input embeddings {u_prev, i_prev, prev_dyn}). The input gradients feed
    the full-history reverse sweep; under per-batch truncation they are
    simply discarded.
    """
    if out is None:
        out = run_step(p, ctx)
    d = p.dims
    n, num_items = d.embedding_dim, d.num_items
    grads = zero_grads(p)

    # prediction branch: L = ||j - target||, dL/dj = (j - target)/||.||
    target = np.zeros(d.pred_dim)
    target[ctx.item_idx] = 1.0
    target[num_items:] = ctx.i_prev
    jhat = _unit_or_zero(out.j_pred - target, out.loss.prediction)
    grads["pred_bias"] += jhat
    grads["pred_from_user"] += np.outer(jhat, out.u_proj)
    grads["pred_from_user_id"][:, ctx.user_idx] += jhat
    d_u_hat = p.pred_from_user.T @ jhat
    d_prev_dyn = None
    if ctx.prev_item_idx is not None:
        grads["pred_from_prev_item"] += np.outer(jhat, ctx.prev_dyn)
        grads["pred_from_prev_item_id"][:, ctx.prev_item_idx] += jhat
        d_prev_dyn = p.pred_from_prev_item.T @ jhat

    # projection: u_hat = (1 + ts*du) * u_prev
    ts = p.time_scale[:, 0]
    grads["time_scale"][:, 0] += d_u_hat * ctx.u_prev * ctx.delta_u
    d_u_prev = (1.0 + ts * ctx.delta_u) * d_u_hat
    # the target's dynamic half is i_prev itself
    d_i_prev = -jhat[num_items:].copy()

    # smoothness penalties
    r_u = _unit_or_zero(out.u_new - ctx.u_prev, out.loss.user_reg)
    r_i = _unit_or_zero(out.i_new - ctx.i_prev, out.loss.item_reg)
    d_u_new = ctx.lambda_u * r_u
    d_i_new = ctx.lambda_i * r_i
    d_u_prev -= ctx.lambda_u * r_u
    d_i_prev -= ctx.lambda_i * r_i

    # state head: d(scale*CE)/dz = scale * (sigma(z) - label)
    if ctx.state_label is not None:
        dz = ctx.state_loss_scale * (out.state_prob - ctx.state_label)
        grads["state_w"][:n] += dz * out.u_new
        grads["state_w"][n + ctx.user_idx] += dz
        grads["state_b"][0] += dz
        d_u_new = d_u_new + dz * p.state_w[:n]

    # recurrent cells; sigma'(a) = s*(1-s) with s the cell output
    du_cell = d_u_new * out.u_new * (1.0 - out.u_new)
    grads["user_self"] += np.outer(du_cell, ctx.u_prev)
    grads["user_from_item"] += np.outer(du_cell, ctx.i_prev)
    grads["user_from_features"] += np.outer(du_cell, ctx.features)
    grads["user_from_delta"][:, 0] += du_cell * ctx.delta_u
    d_u_prev += p.user_self.T @ du_cell
    d_i_prev += p.user_from_item.T @ du_cell

    di_cell = d_i_new * out.i_new * (1.0 - out.i_new)
    grads["item_self"] += np.outer(di_cell, ctx.i_prev)
    grads["item_from_user"] += np.outer(di_cell, ctx.u_prev)
    grads["item_from_features"] += np.outer(di_cell, ctx.features)
    grads["item_from_delta"][:, 0] += di_cell * ctx.delta_i
    d_i_prev += p.item_self.T @ di_cell
    d_u_prev += p.item_from_user.T @ di_cell

    _check_grads_finite(grads)
    return grads, {"u_prev": d_u_prev, "i_prev": d_i_prev, "prev_dyn": d_prev_dyn}


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptState:
    """Adam moment accumulators, one pair per parameter tensor."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def adam_init(params: ModelParams) -> OptState:
    return OptState(
        m={name: np.zeros_like(a) for name, a in params.tensors()},
        v={name: np.zeros_like(a) for name, a in params.tensors()},
    )


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    opt: OptState,
    cfg: TrainConfig,
) -> None:
    """One bias-corrected Adam update, in place, with decoupled weight decay
    (decay is applied to the parameter directly, not mixed into the moments).
    """
    opt.step += 1
    t = opt.step
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for name, a in params.tensors():
        g = grads[name]
        m = opt.m[name]
        v = opt.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        if cfg.weight_decay:
            update = update + cfg.weight_decay * a
        a -= cfg.learning_rate * update


# ---------------------------------------------------------------------------
# vectorized route: one independent batch at a time
# ---------------------------------------------------------------------------

@dataclass
class BatchTape:
    """Forward quantities of one batch, kept for the backward pass.

    Row order follows the batch's seq_id order. All forwards in the batch
    read the embedding state at batch entry; pc is prevs clamped to 0 with
    `mask` distinguishing real previous items from absent ones.
    """

    rows: np.ndarray
    users: np.ndarray
    items: np.ndarray
    pc: np.ndarray
    mask: np.ndarray          # (B,) float 0/1
    feats: np.ndarray
    du: np.ndarray
    di: np.ndarray
    times: np.ndarray
    labels: np.ndarray | None
    U_p: np.ndarray
    I_p: np.ndarray
    C_q: np.ndarray
    U_hat: np.ndarray
    E: np.ndarray             # j_pred - target, (B, P)
    pred_norms: np.ndarray
    U_n: np.ndarray
    I_n: np.ndarray
    reg_u: np.ndarray
    reg_i: np.ndarray
    probs: np.ndarray | None
    loss: LossComponents
    lambda_u: float
    lambda_i: float
    state_loss_scale: float


def batch_forward(
    p: ModelParams,
    state: EmbeddingState,
    rows: np.ndarray,
    ds: Dataset,
    deltas: DeltaTable,
    prevs: np.ndarray,
    lambda_u: float = 1.0,
    lambda_i: float = 1.0,
    state_loss_scale: float = 1.0,
    use_state_loss: bool = False,
) -> BatchTape:
    """Forward all interactions of one independent batch as matrix ops."""
    d = p.dims
    n, num_items = d.embedding_dim, d.num_items
    users = ds.users[rows]
    items = ds.items[rows]
    pv = prevs[rows]
    mask = (pv >= 0).astype(np.float64)
    pc = np.where(pv >= 0, pv, 0)
    feats = ds.features[rows]
    du = deltas.delta_u[rows]
    di = deltas.delta_i[rows]

    U_p = state.user_dyn[users]
    I_p = state.item_dyn[items]
    C_q = state.item_dyn[pc] * mask[:, None]

    ts = p.time_scale[:, 0]
    U_hat = (1.0 + du[:, None] * ts[None, :]) * U_p
    J = U_hat @ p.pred_from_user.T + p.pred_from_user_id.T[users] + p.pred_bias
    J += (C_q @ p.pred_from_prev_item.T + p.pred_from_prev_item_id.T[pc]) * mask[:, None]

    E = J
    E[np.arange(len(rows)), items] -= 1.0
    E[:, num_items:] -= I_p
    pred_norms = np.linalg.norm(E, axis=1)

    A_u = (
        U_p @ p.user_self.T
        + I_p @ p.user_from_item.T
        + feats @ p.user_from_features.T
        + du[:, None] * p.user_from_delta[:, 0][None, :]
    )
    A_i = (
        I_p @ p.item_self.T
        + U_p @ p.item_from_user.T
        + feats @ p.item_from_features.T
        + di[:, None] * p.item_from_delta[:, 0][None, :]
    )
    U_n = sigmoid(A_u)
    I_n = sigmoid(A_i)
    reg_u = np.linalg.norm(U_n - U_p, axis=1)
    reg_i = np.linalg.norm(I_n - I_p, axis=1)

    probs = None
    labels = None
    ce_sum = 0.0
    if use_state_loss:
        labels = ds.state_labels[rows].astype(np.float64)
        z = U_n @ p.state_w[:n] + p.state_w[n + users] + p.state_b[0]
        probs = sigmoid(z)
        q = np.clip(probs, 1e-12, 1.0 - 1e-12)
        ce_sum = float(-(labels * np.log(q) + (1.0 - labels) * np.log1p(-q)).sum())

    loss = LossComponents(
        prediction=float(pred_norms.sum()),
        user_reg=float(reg_u.sum()),
        item_reg=float(reg_i.sum()),
        state_ce=ce_sum,
    )
    loss.total = (
        loss.prediction
        + lambda_u * loss.user_reg
        + lambda_i * loss.item_reg
        + state_loss_scale * ce_sum
    )
    return BatchTape(
        rows=rows, users=users, items=items, pc=pc, mask=mask, feats=feats,
        du=du, di=di, times=ds.timestamps[rows], labels=labels,
        U_p=U_p, I_p=I_p, C_q=C_q, U_hat=U_hat, E=E, pred_norms=pred_norms,
        U_n=U_n, I_n=I_n, reg_u=reg_u, reg_i=reg_i, probs=probs, loss=loss,
        lambda_u=lambda_u, lambda_i=lambda_i, state_loss_scale=state_loss_scale,
    )


def batch_backward(
    p: ModelParams,
    tape: BatchTape,
    grads: dict[str, np.ndarray],
    extra_dU_n: np.ndarray | None = None,
    extra_dI_n: np.ndarray | None = None,
    need_input_grads: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
    """Accumulate this batch's summed-loss gradients into `grads`.

    extra_dU_n/extra_dI_n are adjoints of the POST-update embeddings flowing
    back from later batches (full-history mode). With need_input_grads the
    adjoints w.r.t. the batch-entry embeddings are returned as
    (dU_p, dI_p, dC_q), rows aligned with the tape.
    """
    d = p.dims
    n, num_items = d.embedding_dim, d.num_items
    users, items, pc = tape.users, tape.items, tape.pc

    with np.errstate(invalid="ignore", divide="ignore"):
        Jhat = np.where(
            tape.pred_norms[:, None] > 0.0, tape.E / tape.pred_norms[:, None], 0.0
        )
        R_u = np.where(tape.reg_u[:, None] > 0.0,
                       (tape.U_n - tape.U_p) / tape.reg_u[:, None], 0.0)
        R_i = np.where(tape.reg_i[:, None] > 0.0,
                       (tape.I_n - tape.I_p) / tape.reg_i[:, None], 0.0)

    grads["pred_bias"] += Jhat.sum(axis=0)
    grads["pred_from_user"] += Jhat.T @ tape.U_hat
    # users/items are unique within a batch, so fancy += cannot collide
    grads["pred_from_user_id"][:, users] += Jhat.T
    Jq = Jhat * tape.mask[:, None]
    grads["pred_from_prev_item"] += Jq.T @ tape.C_q
    # previous items are NOT unique within a batch: unbuffered accumulate
    np.add.at(grads["pred_from_prev_item_id"].T, pc, Jq)

    dU_hat = Jhat @ p.pred_from_user
    grads["time_scale"][:, 0] += ((dU_hat * tape.U_p) * tape.du[:, None]).sum(axis=0)

    dU_n = tape.lambda_u * R_u
    dI_n = tape.lambda_i * R_i
    if extra_dU_n is not None:
        dU_n = dU_n + extra_dU_n
    if extra_dI_n is not None:
        dI_n = dI_n + extra_dI_n
    if tape.probs is not None:
        dz = tape.state_loss_scale * (tape.probs - tape.labels)
        grads["state_w"][:n] += dz @ tape.U_n
        grads["state_w"][n + users] += dz
        grads["state_b"][0] += dz.sum()
        dU_n = dU_n + dz[:, None] * p.state_w[None, :n]

    Du = dU_n * tape.U_n * (1.0 - tape.U_n)
    Di = dI_n * tape.I_n * (1.0 - tape.I_n)
    grads["user_self"] += Du.T @ tape.U_p
    grads["user_from_item"] += Du.T @ tape.I_p
    grads["user_from_features"] += Du.T @ tape.feats
    grads["user_from_delta"][:, 0] += (Du * tape.du[:, None]).sum(axis=0)
    grads["item_self"] += Di.T @ tape.I_p
    grads["item_from_user"] += Di.T @ tape.U_p
    grads["item_from_features"] += Di.T @ tape.feats
    grads["item_from_delta"][:, 0] += (Di * tape.di[:, None]).sum(axis=0)
    _check_grads_finite(grads)

    if not need_input_grads:
        return None
    ts = p.time_scale[:, 0]
    dU_p = (1.0 + tape.du[:, None] * ts[None, :]) * dU_hat
    dU_p += Du @ p.user_self + Di @ p.item_from_user - tape.lambda_u * R_u
    dI_p = Di @ p.item_self + Du @ p.user_from_item - tape.lambda_i * R_i
    dI_p -= Jhat[:, num_items:]
    dC_q = (Jhat @ p.pred_from_prev_item) * tape.mask[:, None]
    return dU_p, dI_p, dC_q


def commit_batch(state: EmbeddingState, tape: BatchTape) -> None:
    """Write one batch's post-update embeddings and timestamps to the state."""
    state.user_dyn[tape.users] = tape.U_n
    state.item_dyn[tape.items] = tape.I_n
    state.last_time_user[tape.users] = tape.times
    state.last_time_item[tape.items] = tape.times


# ---------------------------------------------------------------------------
# epochs
# ---------------------------------------------------------------------------

@dataclass
class EpochReport:
    epoch: int
    total_loss: float
    prediction: float
    user_reg: float
    item_reg: float
    state_ce: float
    seconds: float
    num_batches: int
    optimizer_steps: int
    val_metric: float | None = None


def _abort_if_nonfinite(tape: BatchTape, batch_idx: int) -> None:
    if not np.isfinite(tape.loss.total):
        raise FloatingPointError(
            f"non-finite loss in batch {batch_idx}: prediction={tape.loss.prediction}, "
            f"user_reg={tape.loss.user_reg}, item_reg={tape.loss.item_reg}, "
            f"state_ce={tape.loss.state_ce}"
        )


def train_epoch(
    ds: Dataset,
    split: Split,
    plan: BatchPlan,
    params: ModelParams,
    state: EmbeddingState,
    opt: OptState,
    cfg: TrainConfig,
    deltas: DeltaTable,
    prevs: np.ndarray,
    epoch: int = 0,
) -> EpochReport:
    """One pass over the training split in batch order.

    The plan is re-verified on entry; a plan that breaks entity uniqueness or
    temporal monotonicity is rejected before any parameter is touched.
    """
    report = verify_plan(plan, ds, split.train_start, split.train_end)
    if not report.valid:
        raise ValueError(
            "invalid batch plan: " + "; ".join(report.violations[:5])
        )
    use_state_loss = cfg.task == "state_change"
    t0 = time.perf_counter()
    sums = LossComponents(0.0, 0.0, 0.0, 0.0, 0.0)
    steps = 0
    if cfg.detach_policy == "per-batch":
        for k, rows in enumerate(plan.batches):
            tape = batch_forward(
                params, state, rows, ds, deltas, prevs,
                cfg.lambda_u, cfg.lambda_i, cfg.state_loss_scale, use_state_loss,
            )
            _abort_if_nonfinite(tape, k)
            grads = zero_grads(params)
            batch_backward(params, tape, grads)
            adam_step(params, grads, opt, cfg)
            commit_batch(state, tape)
            _accumulate(sums, tape.loss)
        steps = plan.num_batches
    else:
        grads, sums = full_history_gradients(
            ds, plan, params, state, cfg, deltas, prevs
        )
        adam_step(params, grads, opt, cfg)
        steps = 1
    return EpochReport(
        epoch=epoch,
        total_loss=sums.total,
        prediction=sums.prediction,
        user_reg=sums.user_reg,
        item_reg=sums.item_reg,
        state_ce=sums.state_ce,
        seconds=time.perf_counter() - t0,
        num_batches=plan.num_batches,
        optimizer_steps=steps,
    )


def _accumulate(into: LossComponents, part: LossComponents) -> None:
    into.prediction += part.prediction
    into.user_reg += part.user_reg
    into.item_reg += part.item_reg
    into.state_ce += part.state_ce
    into.total += part.total


def full_history_gradients(
    ds: Dataset,
    plan: BatchPlan,
    params: ModelParams,
    state: EmbeddingState,
    cfg: TrainConfig,
    deltas: DeltaTable,
    prevs: np.ndarray,
) -> tuple[dict[str, np.ndarray], LossComponents]:
    """Exact gradient of the epoch's summed loss, no truncation.

    Forward over all batches first (committing state, keeping tapes), then a
    reverse sweep. A_user/A_item hold, at every point of the sweep, the
    adjoint of each entity's CURRENT embedding variable: before a batch is
    processed that variable is the entity's post-batch value, afterwards its
    pre-batch value. Previous-item lookups read batch-entry values, so their
    adjoints are added AFTER the owning entities' accumulators have been
    switched to pre-batch.
    """
    use_state_loss = cfg.task == "state_change"
    tapes: list[BatchTape] = []
    sums = LossComponents(0.0, 0.0, 0.0, 0.0, 0.0)
    for k, rows in enumerate(plan.batches):
        tape = batch_forward(
            params, state, rows, ds, deltas, prevs,
            cfg.lambda_u, cfg.lambda_i, cfg.state_loss_scale, use_state_loss,
        )
        _abort_if_nonfinite(tape, k)
        commit_batch(state, tape)
        _accumulate(sums, tape.loss)
        tapes.append(tape)

    grads = zero_grads(params)
    d = params.dims
    A_user = np.zeros((d.num_users, d.embedding_dim))
    A_item = np.zeros((d.num_items, d.embedding_dim))
    for tape in reversed(tapes):
        dU_p, dI_p, dC_q = batch_backward(
            params, tape, grads,
            extra_dU_n=A_user[tape.users],
            extra_dI_n=A_item[tape.items],
            need_input_grads=True,
        )
        # switch this batch's entities to their pre-batch variables...
        A_user[tape.users] = dU_p
        A_item[tape.items] = dI_p
        # ...then credit previous-item reads (targets may repeat, and may be
        # this very batch's items; both cases land on the pre-batch value)
        np.add.at(A_item, tape.pc, dC_q)
    return grads, sums


def epoch_forward_loss(
    ds: Dataset,
    plan: BatchPlan,
    params: ModelParams,
    state: EmbeddingState,
    cfg: TrainConfig,
    deltas: DeltaTable,
    prevs: np.ndarray,
) -> float:
    """Summed loss of a frozen-parameter pass over the plan (state mutated).

    This is exactly the objective full_history_gradients differentiates,
    which makes it the oracle for finite-difference tests of that sweep.
    """
    use_state_loss = cfg.task == "state_change"
    total = 0.0
    for rows in plan.batches:
        tape = batch_forward(
            params, state, rows, ds, deltas, prevs,
            cfg.lambda_u, cfg.lambda_i, cfg.state_loss_scale, use_state_loss,
        )
        commit_batch(state, tape)
        total += tape.loss.total
    return total


# ---------------------------------------------------------------------------
# frozen-parameter forwards (shared by evaluation advance and timing runs)
# ---------------------------------------------------------------------------

def sequential_forward(
    ds: Dataset,
    params: ModelParams,
    state: EmbeddingState,
    start: int,
    end: int,
    deltas: DeltaTable,
    prevs: np.ndarray,
    lambda_u: float = 1.0,
    lambda_i: float = 1.0,
    use_state_loss: bool = False,
    state_loss_scale: float = 1.0,
) -> float:
    """Strict one-at-a-time forward over rows [start, end); returns the
    summed loss and leaves `state` advanced to the end of the range."""
    total = 0.0
    for r in range(start, end):
        pv = int(prevs[r])
        out = forward_interaction(
            params, state,
            int(ds.users[r]), int(ds.items[r]), ds.features[r],
            float(deltas.delta_u[r]), float(deltas.delta_i[r]),
            None if pv < 0 else pv,
            lambda_u, lambda_i,
            int(ds.state_labels[r]) if use_state_loss else None,
            state_loss_scale,
        )
        state.apply(
            int(ds.users[r]), int(ds.items[r]), out.u_new, out.i_new,
            float(ds.timestamps[r]),
        )
        total += out.loss.total
    return total


def batched_forward(
    ds: Dataset,
    params: ModelParams,
    state: EmbeddingState,
    plan: BatchPlan,
    deltas: DeltaTable,
    prevs: np.ndarray,
    lambda_u: float = 1.0,
    lambda_i: float = 1.0,
    use_state_loss: bool = False,
    state_loss_scale: float = 1.0,
) -> float:
    """Plan-ordered frozen forward; the EmbeddingState it leaves behind must
    match sequential_forward's to ~1e-9 per coordinate (property-tested)."""
    total = 0.0
    for rows in plan.batches:
        tape = batch_forward(
            params, state, rows, ds, deltas, prevs,
            lambda_u, lambda_i, state_loss_scale, use_state_loss,
        )
        commit_batch(state, tape)
        total += tape.loss.total
    return total


# ---------------------------------------------------------------------------
# full training runs
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: ModelParams
    state: EmbeddingState           # end of train range, last epoch
    reports: list[EpochReport]
    best_epoch: int
    best_val_metric: float
    best_params: ModelParams
    best_state: EmbeddingState      # end of train range, best epoch
    split: Split
    deltas: DeltaTable
    prevs: np.ndarray


def run_training(ds: Dataset, cfg: TrainConfig) -> TrainResult:
    """Train for cfg.epochs passes, scoring the validation split after each.

    Dynamic embeddings restart from the shared initial vector every epoch
    (parameters persist), so each epoch's trajectories are computed with the
    current weights end to end. The checkpointed "best" epoch maximizes
    validation MRR (interaction task) or validation AUC (state-change task);
    an undefined validation metric (e.g. single-class AUC) scores nan and
    never wins.
    """
    from .evaluation import evaluate_interactions, evaluate_state_change

    if cfg.test_pct is None:
        split = chronological_split(ds, cfg.train_pct, cfg.val_pct)
    else:
        split = windowed_split(ds, cfg.train_pct, cfg.val_pct, cfg.test_pct)
    if cfg.task == "state_change" and not ds.state_labels.any():
        raise ValueError("no state labels in dataset; cannot train state_change task")
    deltas = compute_deltas(ds, cfg.delta_scale, train_end=split.train_end)
    prevs = prev_item_sequence(ds)
    dims = ModelDims(
        ds.num_users, ds.num_items, cfg.embedding_dim, ds.features.shape[1]
    )
    params = init_params(dims, cfg.seed)
    opt = adam_init(params)
    plan = assign_batches(ds, split.train_start, split.train_end)

    reports: list[EpochReport] = []
    best = None  # (metric, epoch, params, state)
    state = init_state(dims, cfg.seed)
    for epoch in range(cfg.epochs):
        state = init_state(dims, cfg.seed)
        rep = train_epoch(
            ds, split, plan, params, state, opt, cfg, deltas, prevs, epoch=epoch
        )
        val_state = state.copy()
        if cfg.task == "interaction":
            metrics, _ = evaluate_interactions(
                ds, params, val_state, deltas, prevs,
                split.train_end, split.val_end,
            )
            val_metric = metrics.mrr
        else:
            try:
                metrics = evaluate_state_change(
                    ds, params, val_state, deltas, prevs,
                    split.train_end, split.val_end,
                )
                val_metric = metrics.auc
            except ValueError:
                val_metric = float("nan")
        rep.val_metric = val_metric
        reports.append(rep)
        if not np.isnan(val_metric) and (best is None or val_metric > best[0]):
            best = (val_metric, epoch, params.copy(), state.copy())
    if best is None:
        best = (float("nan"), len(reports) - 1, params.copy(), state.copy())
    return TrainResult(
        params=params,
        state=state,
        reports=reports,
        best_epoch=best[1],
        best_val_metric=best[0],
        best_params=best[2],
        best_state=best[3],
        split=split,
        deltas=deltas,
        prevs=prevs,
    )


# ---------------------------------------------------------------------------
# gradient checks (model-aware wrappers around numkit.finite_diff_check)
# ---------------------------------------------------------------------------

def gradient_check_step(
    p: ModelParams,
    ctx: StepContext,
    eps: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Central-difference check of backward_step over EVERY parameter tensor."""
    names = ModelParams.TENSOR_NAMES
    base = [getattr(p, nm).copy() for nm in names]

    def loss_fn(arrays):
        q = ModelParams(dims=p.dims, **dict(zip(names, arrays, strict=True)))
        return run_step(q, ctx).loss.total

    grads, _ = backward_step(ctx, p)
    return finite_diff_check(loss_fn, base, [grads[nm] for nm in names], eps, tol)


def gradient_check_inputs(
    p: ModelParams,
    ctx: StepContext,
    eps: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Same check for the input-embedding gradients (u_prev, i_prev and, when
    present, the previous item's embedding), which drive full-history mode."""
    arrays = [ctx.u_prev.copy(), ctx.i_prev.copy()]
    if ctx.prev_item_idx is not None:
        arrays.append(ctx.prev_dyn.copy())

    def loss_fn(vals):
        c = replace(
            ctx,
            u_prev=vals[0],
            i_prev=vals[1],
            prev_dyn=vals[2] if len(vals) > 2 else None,
        )
        return run_step(p, c).loss.total

    _, input_grads = backward_step(ctx, p)
    analytic = [input_grads["u_prev"], input_grads["i_prev"]]
    if ctx.prev_item_idx is not None:
        analytic.append(input_grads["prev_dyn"])
    return finite_diff_check(loss_fn, arrays, analytic, eps, tol)
