use alloc::string::String;
use core::fmt;

/// Errors raised by tensor, attention, diffusion, network and loss code.
///
/// Every variant carries a human-readable description; `Dimension` errors
/// always name the offending shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Shape or extent mismatch between operands.
    Dimension(String),
    /// Axis or step index out of range.
    Index(String),
    /// Invalid configuration value (bad bounds, divisibility, ...).
    Config(String),
    /// An API contract was violated (non-scalar backward root, non-one-hot
    /// target, out-of-range class id, ...).
    Contract(String),
    /// A diffusion chain was stepped past its final time step.
    StepExhausted(String),
    /// A checked evaluation produced a non-finite value.
    Evaluation(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension error: {msg}"),
            Error::Index(msg) => write!(f, "index error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Contract(msg) => write!(f, "contract error: {msg}"),
            Error::StepExhausted(msg) => write!(f, "step exhausted: {msg}"),
            Error::Evaluation(msg) => write!(f, "evaluation error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! err_ctor {
    ($fn_name:ident, $variant:ident) => {
        impl Error {
            pub fn $fn_name(args: fmt::Arguments<'_>) -> Self {
                use alloc::string::ToString;
                Error::$variant(args.to_string())
            }
        }
    };
}

err_ctor!(dimension, Dimension);
err_ctor!(index, Index);
err_ctor!(config, Config);
err_ctor!(contract, Contract);
err_ctor!(step_exhausted, StepExhausted);
err_ctor!(evaluation, Evaluation);

/// Shorthand for building an `Err(Error::Dimension(..))` with format args.
#[macro_export]
macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::dimension(core::format_args!($($arg)*))
    };
}

#[macro_export]
macro_rules! index_err {
    ($($arg:tt)*) => {
        $crate::error::Error::index(core::format_args!($($arg)*))
    };
}

#[macro_export]
macro_rules! config_err {
    ($($arg:tt)*) => {
        $crate::error::Error::config(core::format_args!($($arg)*))
    };
}

#[macro_export]
macro_rules! contract_err {
    ($($arg:tt)*) => {
        $crate::error::Error::contract(core::format_args!($($arg)*))
    };
}
