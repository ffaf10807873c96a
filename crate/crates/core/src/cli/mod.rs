//! Command-line pipeline: configuration, shared data preparation, and
//! the command implementations behind the `tsan` binary.

pub mod commands;
pub mod config;
pub mod pipeline;

pub use commands::CommandContext;
pub use config::RunConfig;

/// Build version stamped at compile time (package version plus git
/// describe output when available).
pub fn version() -> &'static str {
    env!("TSAN_BUILD_VERSION")
}
