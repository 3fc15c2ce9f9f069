//! Reverse-mode differentiation over dense `f64` tensors, plus the parameter
//! store, checkpoint format and optimizer used for training.

mod gradcheck;
mod optim;
mod params;
mod tape;

pub use gradcheck::{check_gradients, GradCheck};
pub use optim::{Adam, AdamConfig, OptimError};
pub use params::{Bound, ParamEntry, ParamStore};
pub use tape::{Gradients, Tape, TapeError, Var};
