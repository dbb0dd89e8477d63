"""BLSTM time-frequency binary masking stage."""

from .network import (
    MaskPair,
    NetworkConfig,
    NetworkWeights,
    backward,
    estimate_memory,
    forward,
    forward_with_cache,
    msa_loss,
    msa_loss_grad,
    parameter_count,
    param_shapes,
    predict_proba,
    preprocess,
    separate,
    vad_mask,
)
from .train import (
    Batch,
    RMSPropState,
    TrainingDiverged,
    batch_loss_and_grads,
    build_dataset,
    evaluate_loss,
    load_checkpoint,
    rmsprop_update,
    save_checkpoint,
    scene_examples,
    train,
    train_step,
)
