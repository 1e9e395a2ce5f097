pub mod data;
pub mod federated;
pub mod graph;
pub mod model;
pub mod nn;
pub mod privacy;
pub mod harness;
