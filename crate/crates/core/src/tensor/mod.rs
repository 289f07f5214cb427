//! Dense matrices with a small reverse-mode autodiff tape and Adam.

mod adam;
mod checkpoint;
mod matrix;
mod tape;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, ParameterEntry};
pub use matrix::Matrix;
pub use tape::{Tape, Var, LOG_FLOOR, NORM_EPS};
