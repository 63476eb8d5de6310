pub mod data;
pub mod error;
pub mod pnm;

pub use error::{CliError, Result};
