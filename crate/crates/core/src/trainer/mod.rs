//! Optimisation loops, class weighting and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod data;
mod loss;
mod run;

pub use adam::{adam_step, adam_update, AdamHyper, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, BestRecord, Checkpoint,
    CheckpointMeta, EpochLog, Phase, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{SelectionMetric, TrainConfig, LR_RANGE, REFERENCE_BATCH_SIZE};
pub use data::{prepare_set, LabeledSet};
pub use loss::{class_weights, weighted_ce};
pub use run::{
    confusion_on, evaluate_pretext, evaluate_stage, finetune, finetune_examples, predict_stages,
    pretrain, pretrain_tokens, quiet, FinetuneOutcome, Observer, PretextEval, Snapshot, Start,
    PRETEXT_PROBE,
};
