//! The lifting network: layers, optimizer, preprocessing and training.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod preprocess;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{gradient_check, GradCheck};
pub use layers::{
    backward, forward, forward_infer, forward_train, loss_gradient, loss_reconstruction,
    xavier_init, Activation, Cache, Mode, NetConfig, NetParams, Real,
};
pub use model::{fit, fit_standardized, LiftingModel, TrainConfig, TrainOutcome, MODEL_VERSION};
pub use preprocess::{
    frame_observation, pose_from_row, prepare, target_row, FrameInput, NormStats, STD_FLOOR,
};
