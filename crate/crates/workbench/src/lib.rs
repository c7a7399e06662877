//! Batch tools and the live session server around the `flowlenia` engine.

pub mod any_world;
pub mod cli;
pub mod commands;
pub mod error;
pub mod server;
pub mod session;

pub use any_world::AnyWorld;
pub use error::{Result, WorkbenchError};
