//! Command-line orchestration of the pipeline over a workspace directory.

pub mod commands;
pub mod pipeline;
pub mod workspace;

pub use workspace::{MissingPrerequisite, Workspace};
