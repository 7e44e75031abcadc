//! Command-line front end: subcommand bodies, output writers and the
//! mapping from errors to exit codes.

#![allow(clippy::needless_range_loop)]

pub mod commands;
pub mod output;

use std::fmt;

/// Bad invocation or input files; exits with status 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_NUMERICAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// 2 for usage, configuration and input errors, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use spinmem::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<std::io::Error>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::NonFinite { .. } | E::Fit(_) | E::Quadrature(_) | E::Eigen(_) => EXIT_NUMERICAL,
                E::Parse { .. }
                | E::OutOfRange { .. }
                | E::Unit(_)
                | E::Inconsistent(_)
                | E::Sequence(_)
                | E::Window(_)
                | E::Empty(_)
                | E::Axis(_)
                | E::Io(_) => EXIT_USAGE,
            };
        }
    }
    EXIT_NUMERICAL
}
