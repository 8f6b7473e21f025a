//! The registrar `U = g(moving, fixed; θ)`: parameters, forward/backward
//! passes, Adam, gradient checks and checkpoints.

pub mod adam;
pub mod arch;
pub mod checkpoint;
pub mod gradcheck;
pub mod network;
pub mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use arch::{ArchConfig, ModelParams, ParamBlock};
pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheckReport, GradPath};
pub use network::{backward, forward, predict, Forward, Registrar};
pub use tape::Tape;
