//! Command-line front end: configuration and the `smooth`, `synth`, `fit`,
//! `sample`, `forecast` and `gradcheck` verbs.

pub mod commands;
pub mod config;

use ltc_core::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}
