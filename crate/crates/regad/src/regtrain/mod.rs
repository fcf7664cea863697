//! Siamese registration training: heads, loss, pair sampling and the loop.

mod heads;
mod loss;
mod model;
mod optim;
mod pairs;
mod trainer;

pub use heads::{HeadWidths, RegistrationHeads};
pub use loss::{cosine_distance, registration_loss};
pub use model::{
    checkpoint_hash, file_sha256, ModelConfig, RegadModel, TrainSummary, META_FILE, MODEL_FILE,
};
pub use optim::{cosine_lr, MomentumSgd};
pub use pairs::PairSampler;
pub use trainer::{train, StepRecord, TrainConfig, TrainReport, COLLAPSE_STD};
