"""Dynamic user/item embedding trajectories from temporal interaction logs.

The package learns a pair of evolving embedding tables from a timestamped
stream of user-item events: coupled recurrent updates rewrite both entities'
embeddings at every interaction, a projection operator drifts a user's
embedding forward between interactions, and a prediction head ranks items
for the user's next move. Training batches the stream into independent edge
sets so all members of a batch can be processed as one matrix operation
without changing the resulting trajectories.
"""

from .data import (
    DataFormatError,
    Dataset,
    DeltaTable,
    Interaction,
    Split,
    chronological_split,
    compute_deltas,
    load_interactions,
    prev_item_sequence,
    windowed_split,
)
from .evaluation import (
    LshIndex,
    MetricsReport,
    RankRecord,
    auc,
    evaluate_interactions,
    evaluate_state_change,
    exact_top_k,
    lsh_build,
    lsh_query,
    metrics_from_ranks,
    rank_ground_truth,
    refresh_item,
)
from .model import (
    CheckpointError,
    EmbeddingState,
    LossComponents,
    ModelDims,
    ModelParams,
    StepOutput,
    cross_entropy,
    forward_interaction,
    init_params,
    init_state,
    interaction_loss,
    load_checkpoint,
    predict_item_embedding,
    predict_state_change,
    project_user,
    save_checkpoint,
    update_embeddings,
)
from .numkit import GradCheckReport, finite_diff_check, l2_distance, sigmoid
from .synthetic import cyclic_stream, dropout_stream, random_stream
from .tbatch import BatchPlan, PlanReport, assign_batches, plan_stats, verify_plan
from .train import (
    EpochReport,
    OptState,
    StepContext,
    TrainConfig,
    TrainResult,
    adam_init,
    adam_step,
    backward_step,
    batched_forward,
    epoch_forward_loss,
    full_history_gradients,
    gradient_check_inputs,
    gradient_check_step,
    run_step,
    run_training,
    sequential_forward,
    train_epoch,
)

__version__ = "0.1.0"
