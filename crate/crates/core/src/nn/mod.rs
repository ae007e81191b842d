//! Dense-network engine: MLPs, a differentiation tape, Adam, finite-difference
//! gradient checks and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod matrix;
pub mod mlp;
pub mod tape;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use matrix::Matrix;
pub use mlp::{sigmoid, Activation, Dense, Mlp, MlpSpec, ModelParams, NetId, ParamCoord, ParamTensor};
pub use tape::{Groups, NodeId, Tape};
