//! Process exit codes, one per error class.

use monet::Error;

pub const OK: u8 = 0;
/// Anything not covered below.
pub const FAILURE: u8 = 1;
/// An input file is missing or unreadable, or an output is unwritable.
pub const IO: u8 = 2;
/// Malformed input or a value outside its allowed range.
pub const VALIDATION: u8 = 3;
/// Training produced a non-finite loss or parameters.
pub const DIVERGENCE: u8 = 4;
/// No scribbles and no initial labels survived pruning.
pub const NOTHING_TO_LEARN: u8 = 5;
/// Bad command-line usage.
pub const USAGE: u8 = 64;

/// Exit code for an error, looking through context layers and stage tags.
pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e.root() {
                Error::Io { .. } => IO,
                Error::Divergence { .. } => DIVERGENCE,
                Error::NothingToLearn => NOTHING_TO_LEARN,
                Error::Stage { .. } => FAILURE,
                Error::OutOfBounds { .. }
                | Error::IndexOutOfBounds { .. }
                | Error::DimsMismatch(_)
                | Error::Parse { .. }
                | Error::Truncated { .. }
                | Error::Validation(_)
                | Error::Config(_)
                | Error::GridTooLarge { .. }
                | Error::UndefinedMetric(_) => VALIDATION,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return IO;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return VALIDATION;
        }
    }
    FAILURE
}
