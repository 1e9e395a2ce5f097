//! Base travel-time model (embedding, graph convolution, spatio-temporal
//! cross product, route summation) and the per-driver residual model.

mod base;
mod config;
mod personal;
mod time;

use thiserror::Error;

use crate::graph::{GraphError, Route};
use crate::nn::NnError;

pub use base::{
    attention_from_table, column_softmax_at, edge_indexed_tensors, gcn_backward, gcn_forward, BaseModel,
    Entity, GcnGrads, LayerCache, Sample, TemporalCache,
};
pub use config::{ModelConfig, PersonalConfig};
pub use personal::{personal_samples, DriverProfile, PersonalModel, PersonalSample, ProfileNormalizer};
pub use time::{Calendar, TimeContext, SECONDS_PER_DAY};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid time context: {0}")]
    InvalidContext(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("route does not match state: {0}")]
    RouteMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl ModelError {
    /// Collapses into the tensor-level error type, for use with
    /// [`crate::nn::check_gradients`].
    pub fn into_nn(self) -> NnError {
        match self {
            ModelError::Nn(e) => e,
            other => NnError::InvalidArgument(other.to_string()),
        }
    }
}

/// Estimated seconds to traverse every edge and node at one time context.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficState {
    pub ctx: TimeContext,
    pub y_edges: Vec<f64>,
    pub y_nodes: Vec<f64>,
}

impl TrafficState {
    pub fn slot(&self) -> usize {
        self.ctx.slot
    }

    /// Route sum without the slot check; used when serving a state over a
    /// window of departure times.
    pub fn route_sum(&self, route: &Route) -> Result<f64, ModelError> {
        let mut total = 0.0;
        for e in route.edges() {
            total += self
                .y_edges
                .get(e)
                .ok_or_else(|| ModelError::RouteMismatch(format!("edge #{e} not in state")))?;
        }
        for v in route.nodes() {
            total += self
                .y_nodes
                .get(v)
                .ok_or_else(|| ModelError::RouteMismatch(format!("node #{v} not in state")))?;
        }
        Ok(total)
    }
}

/// Sum of the route's edge and interior-node entries of `state`. `slot` is
/// the route's departure slot and must match the state's.
pub fn predict_route(state: &TrafficState, route: &Route, slot: usize) -> Result<f64, ModelError> {
    if slot != state.slot() {
        return Err(ModelError::RouteMismatch(format!(
            "route slot {slot} vs state slot {}",
            state.slot()
        )));
    }
    state.route_sum(route)
}

/// Final personalized prediction `ŷ + bias`.
pub fn predict_final(y_hat: f64, bias: f64) -> f64 {
    y_hat + bias
}

#[cfg(test)]
mod tests;
