//! Configuration, file-based pipeline stages and plotting behind the `bits`
//! command-line tool.

pub mod config;
pub mod error;
pub mod par;
pub mod pipeline;
pub mod plot;

pub use config::RunConfig;
pub use error::{CliError, Result};
