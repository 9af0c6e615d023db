"""Coupled recurrent embedding model over a user-item interaction stream.

Every user and every item carries a dynamic embedding (n,) that is rewritten
at each of its interactions by a pair of mutually recursive sigmoid cells:
the user cell reads the item's pre-interaction embedding and vice versa, so
both updates are computed from the same snapshot before either is applied.
Identity ("static") embeddings are one-hot and never materialized; wherever
a weight matrix would multiply a one-hot vector we take the matching column.

Between interactions a user's embedding drifts: the projection operation
scales it elementwise by (1 + time_scale * delta), where delta is the
(normalized) time since the user's previous interaction. The prediction head
maps the projected user embedding to a vector of length num_items + n, read
as [one-hot of the predicted item || its dynamic embedding], and is trained
to hit the ground-truth item's one-hot concatenated with that item's
pre-interaction dynamic embedding under plain (non-squared) L2 distance.

A separate logistic head scores post-interaction user embeddings for binary
state-change labels (e.g. a ban or a course drop-out).
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .numkit import l2_distance, matvec, sigmoid

__all__ = [
    "ModelDims",
    "ModelParams",
    "EmbeddingState",
    "LossComponents",
    "StepOutput",
    "CheckpointError",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "init_params",
    "init_state",
    "update_embeddings",
    "project_user",
    "predict_item_embedding",
    "interaction_loss",
    "predict_state_change",
    "cross_entropy",
    "forward_interaction",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class ModelDims:
    """Problem sizes: entity counts, dynamic dimension n, feature width."""

    num_users: int
    num_items: int
    embedding_dim: int
    feature_dim: int

    def __post_init__(self):
        for name in ("num_users", "num_items", "embedding_dim", "feature_dim"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")
        if self.num_users < 1 or self.num_items < 1:
            raise ValueError("need at least one user and one item")

    @property
    def pred_dim(self) -> int:
        # prediction head output: [one-hot over items || dynamic part]
        return self.num_items + self.embedding_dim


@dataclass
class ModelParams:
    """All trainable tensors, float64 throughout.

    Shapes (n = embedding_dim, F = feature_dim, U = num_users, I = num_items,
    P = I + n):
      user_self, user_from_item        (n, n)   item_self, item_from_user  (n, n)
      user_from_features               (n, F)   item_from_features         (n, F)
      user_from_delta, item_from_delta (n, 1)   time_scale                 (n, 1)
      pred_from_user, pred_from_prev_item (P, n)
      pred_from_user_id (P, U)   pred_from_prev_item_id (P, I)   pred_bias (P,)
      state_w (n + U,)   state_b (1,)
    """

    dims: ModelDims
    user_self: np.ndarray
    user_from_item: np.ndarray
    user_from_features: np.ndarray
    user_from_delta: np.ndarray
    item_self: np.ndarray
    item_from_user: np.ndarray
    item_from_features: np.ndarray
    item_from_delta: np.ndarray
    time_scale: np.ndarray
    pred_from_user: np.ndarray
    pred_from_user_id: np.ndarray
    pred_from_prev_item: np.ndarray
    pred_from_prev_item_id: np.ndarray
    pred_bias: np.ndarray
    state_w: np.ndarray
    state_b: np.ndarray

    # canonical tensor order; optimizer state, checkpoints and gradient
    # containers all index parameters by this sequence
    TENSOR_NAMES = (
        "user_self",
        "user_from_item",
        "user_from_features",
        "user_from_delta",
        "item_self",
        "item_from_user",
        "item_from_features",
        "item_from_delta",
        "time_scale",
        "pred_from_user",
        "pred_from_user_id",
        "pred_from_prev_item",
        "pred_from_prev_item_id",
        "pred_bias",
        "state_w",
        "state_b",
    )

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        """(name, array) pairs in canonical order; arrays are live views."""
        return [(name, getattr(self, name)) for name in self.TENSOR_NAMES]

    def copy(self) -> "ModelParams":
        return ModelParams(
            dims=self.dims, **{n: getattr(self, n).copy() for n in self.TENSOR_NAMES}
        )

    def __post_init__(self):
        d = self.dims
        n, F, P = d.embedding_dim, d.feature_dim, d.pred_dim
        expected = {
            "user_self": (n, n),
            "user_from_item": (n, n),
            "user_from_features": (n, F),
            "user_from_delta": (n, 1),
            "item_self": (n, n),
            "item_from_user": (n, n),
            "item_from_features": (n, F),
            "item_from_delta": (n, 1),
            "time_scale": (n, 1),
            "pred_from_user": (P, n),
            "pred_from_user_id": (P, d.num_users),
            "pred_from_prev_item": (P, n),
            "pred_from_prev_item_id": (P, d.num_items),
            "pred_bias": (P,),
            "state_w": (n + d.num_users,),
            "state_b": (1,),
        }
        for name, shape in expected.items():
            a = getattr(self, name)
            if a.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {a.shape}")
            if not np.isfinite(a).all():
                raise ValueError(f"{name}: non-finite entries")


def init_params(dims: ModelDims, seed: int = 0) -> ModelParams:
    """Gaussian(0, 0.1^2) weights, zero biases, seeded and reproducible."""
    rng = np.random.default_rng(seed)
    d = dims
    n, F, P = d.embedding_dim, d.feature_dim, d.pred_dim

    def g(*shape):
        return rng.normal(0.0, 0.1, size=shape)

    return ModelParams(
        dims=dims,
        user_self=g(n, n),
        user_from_item=g(n, n),
        user_from_features=g(n, F),
        user_from_delta=g(n, 1),
        item_self=g(n, n),
        item_from_user=g(n, n),
        item_from_features=g(n, F),
        item_from_delta=g(n, 1),
        time_scale=g(n, 1),
        pred_from_user=g(P, n),
        pred_from_user_id=g(P, d.num_users),
        pred_from_prev_item=g(P, n),
        pred_from_prev_item_id=g(P, d.num_items),
        pred_bias=np.zeros(P),
        state_w=g(n + d.num_users),
        state_b=np.zeros(1),
    )


NEVER = -np.inf  # last_time value for entities that have not interacted yet


@dataclass
class EmbeddingState:
    """Current dynamic embeddings plus each entity's last interaction time."""

    user_dyn: np.ndarray        # (num_users, n)
    item_dyn: np.ndarray        # (num_items, n)
    last_time_user: np.ndarray  # (num_users,), -inf until first interaction
    last_time_item: np.ndarray  # (num_items,)

    def copy(self) -> "EmbeddingState":
        return EmbeddingState(
            self.user_dyn.copy(),
            self.item_dyn.copy(),
            self.last_time_user.copy(),
            self.last_time_item.copy(),
        )

    def apply(self, user_idx: int, item_idx: int, u_new: np.ndarray,
              i_new: np.ndarray, t: float) -> None:
        """Commit one interaction's post-update embeddings. Timestamps must
        not move backward for either entity."""
        if t < self.last_time_user[user_idx] or t < self.last_time_item[item_idx]:
            raise ValueError(
                f"time went backwards at user {user_idx} / item {item_idx}: {t}"
            )
        self.user_dyn[user_idx] = u_new
        self.item_dyn[item_idx] = i_new
        self.last_time_user[user_idx] = t
        self.last_time_item[item_idx] = t


def init_state(dims: ModelDims, seed: int = 0) -> EmbeddingState:
    """Every entity starts from one shared unit vector (same for users and
    items), drawn from Gaussian(0, 0.1^2) and L2-normalized. Zeros would make
    the projection output zero and starve time_scale of gradient."""
    rng = np.random.default_rng(seed)
    v = rng.normal(0.0, 0.1, size=dims.embedding_dim)
    v /= np.linalg.norm(v)
    return EmbeddingState(
        user_dyn=np.tile(v, (dims.num_users, 1)),
        item_dyn=np.tile(v, (dims.num_items, 1)),
        last_time_user=np.full(dims.num_users, NEVER),
        last_time_item=np.full(dims.num_items, NEVER),
    )


def update_embeddings(
    u_prev: np.ndarray,
    i_prev: np.ndarray,
    f: np.ndarray,
    du: float,
    di: float,
    p: ModelParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Run both recurrent cells on one interaction.

    Both outputs are computed from the pre-interaction embeddings; the user
    update must not observe the item update and vice versa. Sigmoid keeps
    every coordinate strictly inside (0, 1).
    """
    a_u = (
        matvec(p.user_self, u_prev)
        + matvec(p.user_from_item, i_prev)
        + matvec(p.user_from_features, f)
        + p.user_from_delta[:, 0] * du
    )
    a_i = (
        matvec(p.item_self, i_prev)
        + matvec(p.item_from_user, u_prev)
        + matvec(p.item_from_features, f)
        + p.item_from_delta[:, 0] * di
    )
    return sigmoid(a_u), sigmoid(a_i)


def project_user(u: np.ndarray, delta: float, p: ModelParams) -> np.ndarray:
    """Estimate the user embedding `delta` time units after its last update:
    elementwise (1 + time_scale*delta) * u. Exactly the identity at delta=0."""
    return (1.0 + p.time_scale[:, 0] * delta) * u


def predict_item_embedding(
    u_proj: np.ndarray,
    user_idx: int,
    prev_item_dyn: np.ndarray | None,
    prev_item_idx: int | None,
    p: ModelParams,
) -> np.ndarray:
    """Predict the next item's [one-hot || dynamic] vector, length I + n.

    prev_item_* identify the item of this user's previous interaction, whose
    current dynamic embedding is the best proxy for the not-yet-known next
    item. A user's first interaction has no previous item; both terms are
    then dropped (zero contribution).
    """
    d = p.dims
    if not (0 <= user_idx < d.num_users):
        raise IndexError(f"user index {user_idx} out of range [0, {d.num_users})")
    j = (
        matvec(p.pred_from_user, u_proj)
        + p.pred_from_user_id[:, user_idx]
        + p.pred_bias
    )
    if prev_item_idx is not None:
        if not (0 <= prev_item_idx < d.num_items):
            raise IndexError(
                f"prev item index {prev_item_idx} out of range [0, {d.num_items})"
            )
        j = (
            j
            + matvec(p.pred_from_prev_item, prev_item_dyn)
            + p.pred_from_prev_item_id[:, prev_item_idx]
        )
    return j


@dataclass
class LossComponents:
    """Per-interaction loss terms. prediction/user_reg/item_reg/state_ce are
    the raw non-negative distances; total carries the lambda weighting."""

    prediction: float
    user_reg: float
    item_reg: float
    state_ce: float = 0.0
    total: float = 0.0


def interaction_loss(
    j_pred: np.ndarray,
    true_item_idx: int,
    true_item_dyn_prev: np.ndarray,
    u_new: np.ndarray,
    u_prev: np.ndarray,
    i_new: np.ndarray,
    i_prev: np.ndarray,
    lambda_u: float,
    lambda_i: float,
) -> LossComponents:
    """L2 distance of the prediction to [one-hot(true item) || its
    pre-interaction dynamic embedding], plus L2 smoothness penalties on how
    far each entity's embedding moved. Distances are not squared."""
    if lambda_u < 0 or lambda_i < 0:
        raise ValueError("lambda_u and lambda_i must be non-negative")
    num_items = j_pred.shape[0] - true_item_dyn_prev.shape[0]
    target = np.zeros_like(j_pred)
    target[true_item_idx] = 1.0
    target[num_items:] = true_item_dyn_prev
    prediction = l2_distance(j_pred, target)
    user_reg = l2_distance(u_new, u_prev)
    item_reg = l2_distance(i_new, i_prev)
    return LossComponents(
        prediction=prediction,
        user_reg=user_reg,
        item_reg=item_reg,
        total=prediction + lambda_u * user_reg + lambda_i * item_reg,
    )


def predict_state_change(u_new: np.ndarray, user_idx: int, p: ModelParams) -> float:
    """Probability the interaction flips the user's binary state: logistic of
    state_w . [u_new || one-hot(user)] + state_b, the one-hot term being a
    single coefficient lookup."""
    d = p.dims
    if not (0 <= user_idx < d.num_users):
        raise IndexError(f"user index {user_idx} out of range [0, {d.num_users})")
    n = d.embedding_dim
    z = float(p.state_w[:n] @ u_new) + float(p.state_w[n + user_idx]) + float(p.state_b[0])
    return float(sigmoid(np.asarray([z]))[0])


def cross_entropy(prob: float, label: int) -> float:
    """Binary cross-entropy with the probability clamped to
    [1e-12, 1 - 1e-12] so a saturated classifier cannot produce inf."""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    q = min(max(prob, 1e-12), 1.0 - 1e-12)
    return float(-np.log(q) if label == 1 else -np.log(1.0 - q))


@dataclass
class StepOutput:
    """Everything one interaction produces: post-update embeddings, the
    projected user embedding, the item prediction and the loss breakdown."""

    u_new: np.ndarray
    i_new: np.ndarray
    u_proj: np.ndarray
    j_pred: np.ndarray
    loss: LossComponents
    state_prob: float | None = None


def forward_interaction(
    p: ModelParams,
    state: EmbeddingState,
    user_idx: int,
    item_idx: int,
    features: np.ndarray,
    delta_u: float,
    delta_i: float,
    prev_item_idx: int | None,
    lambda_u: float = 1.0,
    lambda_i: float = 1.0,
    state_label: int | None = None,
    state_loss_scale: float = 1.0,
) -> StepOutput:
    """One full forward step against the current state (read-only).

    Order matters: the item prediction is scored BEFORE the update, against
    the true item's pre-interaction embedding; the state head is scored on
    the post-update user embedding. Pass state_label=None to skip the state
    term (interaction-only training). The caller decides when to commit
    u_new/i_new via EmbeddingState.apply.
    """
    u_prev = state.user_dyn[user_idx]
    i_prev = state.item_dyn[item_idx]
    u_proj = project_user(u_prev, delta_u, p)
    prev_dyn = None if prev_item_idx is None else state.item_dyn[prev_item_idx]
    j_pred = predict_item_embedding(u_proj, user_idx, prev_dyn, prev_item_idx, p)
    u_new, i_new = update_embeddings(u_prev, i_prev, features, delta_u, delta_i, p)
    loss = interaction_loss(
        j_pred, item_idx, i_prev, u_new, u_prev, i_new, i_prev, lambda_u, lambda_i
    )
    state_prob = None
    if state_label is not None:
        state_prob = predict_state_change(u_new, user_idx, p)
        loss.state_ce = cross_entropy(state_prob, state_label)
        loss.total += state_loss_scale * loss.state_ce
    return StepOutput(
        u_new=u_new, i_new=i_new, u_proj=u_proj, j_pred=j_pred,
        loss=loss, state_prob=state_prob,
    )


class CheckpointError(Exception):
    """Raised when a checkpoint file is unreadable, mislabeled or truncated."""


CHECKPOINT_MAGIC = "traj-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(
    path,
    params: ModelParams,
    state: EmbeddingState,
    extra: dict | None = None,
) -> None:
    """Write params + embedding state to a single self-describing .npz.

    float64 arrays round-trip bit-exact. `extra` must be JSON-serializable
    (training config, epoch counters and the like).
    """
    meta = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "dims": {
            "num_users": params.dims.num_users,
            "num_items": params.dims.num_items,
            "embedding_dim": params.dims.embedding_dim,
            "feature_dim": params.dims.feature_dim,
        },
        "extra": extra or {},
    }
    arrays = {f"param_{name}": a for name, a in params.tensors()}
    arrays["state_user_dyn"] = state.user_dyn
    arrays["state_item_dyn"] = state.item_dyn
    arrays["state_last_time_user"] = state.last_time_user
    arrays["state_last_time_item"] = state.last_time_item
    arrays["meta_json"] = np.frombuffer(
        json.dumps(meta).encode("utf-8"), dtype=np.uint8
    )
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[ModelParams, EmbeddingState, dict]:
    """Inverse of save_checkpoint; validates magic and version first."""
    try:
        with open(path, "rb") as fh:
            blob = io.BytesIO(fh.read())
        npz = np.load(blob, allow_pickle=False)
    except (OSError, ValueError, EOFError) as e:
        raise CheckpointError(f"bad checkpoint file {path}: {e}") from e
    with npz:
        if "meta_json" not in npz.files:
            raise CheckpointError(f"bad checkpoint magic in {path}: no metadata")
        try:
            meta = json.loads(bytes(npz["meta_json"]).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"bad checkpoint metadata in {path}: {e}") from e
        if meta.get("magic") != CHECKPOINT_MAGIC:
            raise CheckpointError(
                f"bad checkpoint magic in {path}: {meta.get('magic')!r}"
            )
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"bad checkpoint version in {path}: {meta.get('version')!r} "
                f"(expected {CHECKPOINT_VERSION})"
            )
        dims = ModelDims(**meta["dims"])
        try:
            params = ModelParams(
                dims=dims,
                **{n: npz[f"param_{n}"] for n in ModelParams.TENSOR_NAMES},
            )
            state = EmbeddingState(
                user_dyn=npz["state_user_dyn"],
                item_dyn=npz["state_item_dyn"],
                last_time_user=npz["state_last_time_user"],
                last_time_item=npz["state_last_time_item"],
            )
        except KeyError as e:
            raise CheckpointError(f"bad checkpoint in {path}: missing array {e}") from e
    return params, state, meta.get("extra", {})
