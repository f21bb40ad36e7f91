pub mod data;
pub mod diagnostics;
pub mod error;
pub mod gradients;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod parameterization;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use model::{forward, Activation, BatchTensors, ModelState};
pub use rng::RngState;
