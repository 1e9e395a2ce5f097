//! Synthetic worlds with a known hidden traffic state, trajectory sampling
//! and CSV ingestion, grid quantization and driver-profile extraction.

mod grid;
mod profile;
mod trips;
mod world;

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::graph::{write_network_dir, GraphError};

pub use grid::{assign_grid_cell, GridSpec};
pub use profile::extract_profile;
pub use trips::{hour_weights, load_trajectories, sample_trajectories, write_trajectories, TrajectoryRecord, TRAJECTORY_HEADER};
pub use world::{congestion_multiplier, generate_world, hidden_edge_time, Driver, Topology, World, WorldSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("world spec: {0}")]
    Spec(String),
    #[error("line {line}: {msg}")]
    Invalid { line: usize, msg: String },
    #[error("point ({lat}, {lon}) is outside the grid")]
    OutOfBox { lat: f64, lon: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const WORLD_FILE: &str = "world.json";
pub const TRAJECTORY_FILE: &str = "trajectories.csv";

/// Writes `world.json`, the network CSVs and `trajectories.csv` for `days`
/// simulated days into `dir`.
pub fn write_world_dir(world: &World, days: usize, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(WORLD_FILE), serde_json::to_string_pretty(&world.spec)? + "\n")?;
    write_network_dir(&world.network, dir)?;
    let trips: Vec<TrajectoryRecord> = (0..days).flat_map(|d| sample_trajectories(world, d)).collect();
    write_trajectories(&world.network, &trips, fs::File::create(dir.join(TRAJECTORY_FILE))?)?;
    Ok(())
}

/// Reads a `world.json` spec.
pub fn read_world_spec(path: &Path) -> Result<WorldSpec, DataError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
