use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture of the base model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding width `d`.
    pub embed_dim: usize,
    pub gcn_layers: usize,
    /// Highest Laplacian power `C` in each graph convolution.
    pub hops: usize,
    /// Width `I` of the temporal code; the head width `J` equals it.
    pub temporal_dim: usize,
    /// Time slots per day `K`.
    pub slots_per_day: usize,
    pub holiday_dim: usize,
    /// Seconds represented by one unit of raw model output. Keeps learned
    /// parameters O(1) so per-coordinate DP clipping does not destroy them.
    pub output_scale_s: f64,
    /// Adds a learned per-entity row (indexed by edge/node position) to the
    /// feature embedding.
    pub identity_embedding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            gcn_layers: 1,
            hops: 2,
            temporal_dim: 16,
            slots_per_day: 48,
            holiday_dim: 2,
            output_scale_s: 200.0,
            identity_embedding: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.embed_dim == 0 || self.temporal_dim == 0 || self.holiday_dim == 0 {
            return bad("embed_dim, temporal_dim and holiday_dim must be positive");
        }
        if self.slots_per_day == 0 {
            return bad("slots_per_day (K) must be >= 1");
        }
        if !(self.output_scale_s > 0.0 && self.output_scale_s.is_finite()) {
            return bad("output_scale_s must be positive");
        }
        Ok(())
    }

    /// Width of the concatenated one-hot day/slot code plus holiday embedding.
    pub fn temporal_code_width(&self) -> usize {
        7 + self.slots_per_day + self.holiday_dim
    }
}

/// Architecture of the per-driver residual model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersonalConfig {
    pub embed_dim: usize,
    /// Fixed length of the frequent-region and frequent-edge lists.
    pub top_k: usize,
}

impl Default for PersonalConfig {
    fn default() -> Self {
        Self {
            embed_dim: 4,
            top_k: 5,
        }
    }
}
