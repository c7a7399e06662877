//! Batch subcommands.

pub mod evolve;
pub mod render;
pub mod search;
pub mod simulate;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{io, Result};

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = io(std::fs::read_to_string(path), path)?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    io(std::fs::write(path, serde_json::to_string_pretty(value)?), path)
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    io(std::fs::create_dir_all(path), path)
}
