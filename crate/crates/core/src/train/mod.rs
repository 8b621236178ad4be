//! Training, evaluation and self-ensemble inference.

mod ablation;
mod adam;
mod config;
mod corpus;
mod dihedral;
mod eval;
mod loss;
mod patches;
mod trainer;

pub use ablation::{ablation_grid, check_structure, run_ablation, write_ablation_csv, AblationCase, AblationRow};
pub use adam::{adam_step, AdamConfig};
pub use config::TrainConfig;
pub use corpus::{to_channels, Corpus, CorpusImage};
pub use dihedral::{dihedral, dihedral_inverse};
pub use eval::{evaluate, evaluate_corpus, self_ensemble_infer, EvalOptions, EvalReport, EvalRow};
pub use loss::l2_loss;
pub use patches::{sample_patches, BatchSource, FixedPair, PatchPair, PatchSampler};
pub use trainer::{batch_gradients, final_checkpoint_path, threads_from_env, train, train_on_corpus, LossRecord, TrainOptions, TrainOutcome};
