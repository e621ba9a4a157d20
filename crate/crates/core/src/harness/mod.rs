//! Training, evaluation, benchmarking and ablation around the DDT and the
//! diffusion baseline.

pub mod ablate;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod loss;
pub mod model;
pub mod optim;
pub mod regressor;
pub mod train;

pub use ablate::{ablate, ablation_table, check_order, AblationRow, OrderCheck, Ordering};
pub use bench::{benchmark, sliding_windows, BenchMode, BenchReport};
pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC};
pub use config::{LossNorm, ModelKind, TrainConfig};
pub use eval::{check_compat, evaluate, evaluate_dataset, oracle_predictions, score};
pub use loss::{loss_aug, loss_overall, loss_tcmr, reprojection_loss, LossWeights, MeshTargets};
pub use model::{
    baseline_width, decode_baseline_targets, encode_baseline_targets, stack, start_noise, Model, Network, Prediction,
};
pub use optim::Adam;
pub use regressor::{MeshParams, RegressorHead};
pub use train::{batch_loss, split_validation, train, EpochLog, TrainOutcome};
