pub mod batch_lqr;
pub mod continuous;
pub mod discrete;
pub mod error;
pub mod evaluation;
pub mod perception;
pub mod psd;
pub mod scenario;
pub mod verify;

pub use error::{Error, Result};
