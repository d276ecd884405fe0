//! File formats, evaluation and the command-line interface around
//! [`concealgs_core`].
//!
//! - [`io`]: scene and pose JSON, binary PPM.
//! - [`checkpoint`]: decoder checkpoints.
//! - [`logs`]: CSV training logs.
//! - [`eval`]: rendering/recovery report, robustness sweep, LSB comparison.
//! - [`pipeline`]: the end-to-end toy run behind `concealgs demo`.
//! - [`cli`]: argument parsing and dispatch.

pub mod checkpoint;
pub mod cli;
mod error;
pub mod eval;
pub mod io;
pub mod logs;
pub mod pipeline;

pub use error::{Error, Result};
