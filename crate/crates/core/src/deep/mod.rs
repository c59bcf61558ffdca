//! A small Q-network agent whose KL coefficients follow the batch TD error,
//! next to the constant-coefficient baseline. Both bootstrap from the online
//! network unless a Polyak target is requested.

mod adam;
mod mlp;
mod replay;
mod target;
mod tracker;
mod trainer;

pub use adam::AdamState;
pub use mlp::{ForwardCache, Layer, MlpParams};
pub use replay::ReplayBuffer;
pub use target::{batch_td_max, dgvi_target, log_policy, td_max, Batch, TargetParts};
pub use tracker::{lerp, update_lambdas, LambdaTracker};
pub use trainer::{
    dgvi_train, mdqn_train, DeepAlgorithm, DeepConfig, Exploration, LogRow, Trainer, TrainingLog,
    CHECKPOINT_VERSION,
};
