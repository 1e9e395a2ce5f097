//! Federated training: client selection, local SGD with DP-noised uploads,
//! sample-weighted aggregation, the banded online schedule and per-client
//! personal fine-tuning.

mod client;
mod schedule;
mod sim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::model::ModelError;
use crate::nn::{NnError, ParamSet, SeedStream};
use crate::privacy::{DpConfig, PrivacyError};

pub use client::{client_update, fine_tune_personal, local_sgd, local_update, noise_upload, ClientState, ClientUpload};
pub use schedule::{default_schedule, hhmm, AggregationSchedule, Band};
pub use sim::{Prediction, RoundRecord, ServedStates, Simulator, UploadRecord};

#[derive(Debug, Error)]
pub enum FederatedError {
    #[error("invalid federated config: {0}")]
    InvalidConfig(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("cannot select {m} clients from a pool of {pool}")]
    PoolTooSmall { m: usize, pool: usize },
    #[error("nothing to aggregate")]
    EmptyAggregate,
    #[error("total sample count is zero")]
    ZeroSamples,
    #[error("client `{0}` has no trajectories in the window")]
    NoData(String),
    #[error("client `{0}`: localized global model changed during personal fine-tuning")]
    FrozenModelChanged(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederatedConfig {
    /// Clients selected per round (M).
    pub clients_per_round: usize,
    pub local_epochs: usize,
    pub base_lr: f64,
    pub personal_epochs: usize,
    pub personal_lr: f64,
    /// Samples per local SGD step.
    pub batch_size: usize,
    /// Global L2 bound on each base-model SGD step's gradient (`inf` disables).
    pub grad_clip: f64,
    /// Same bound for personal fine-tuning steps.
    pub personal_grad_clip: f64,
    pub dp_epsilon: f64,
    pub dp_clip: f64,
    pub seed: u64,
}

impl Default for FederatedConfig {
    fn default() -> Self {
        Self {
            clients_per_round: 10,
            local_epochs: 2,
            base_lr: 5e-6,
            personal_epochs: 20,
            personal_lr: 1e-3,
            batch_size: 1,
            grad_clip: 3e4,
            personal_grad_clip: 100.0,
            dp_epsilon: f64::INFINITY,
            dp_clip: 1.0,
            seed: 0,
        }
    }
}

impl FederatedConfig {
    pub fn validate(&self) -> Result<(), FederatedError> {
        let bad = |m: &str| Err(FederatedError::InvalidConfig(m.to_string()));
        if self.clients_per_round == 0 {
            return bad("clients_per_round must be >= 1");
        }
        if self.local_epochs == 0 || self.personal_epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(self.base_lr > 0.0 && self.personal_lr > 0.0) {
            return bad("learning rates must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.grad_clip > 0.0 && self.personal_grad_clip > 0.0) {
            return bad("grad_clip must be > 0");
        }
        self.dp().validate()?;
        Ok(())
    }

    pub fn dp(&self) -> DpConfig {
        DpConfig::new(self.dp_epsilon, self.dp_clip)
    }
}

/// Stable 64-bit key of a client id, used to address its random streams.
pub fn client_key(id: &str) -> u64 {
    // FNV-1a
    id.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Uniform sample of `m` ids without replacement. Each id gets an
/// independent priority from `(stream, round, id)` and the `m` smallest win,
/// so the outcome for one id never depends on which other ids are present.
/// Returned in ascending id order.
pub fn select_clients(pool: &[&str], m: usize, stream: &SeedStream, round: u64) -> Result<Vec<String>, FederatedError> {
    if m > pool.len() {
        return Err(FederatedError::PoolTooSmall { m, pool: pool.len() });
    }
    let mut keyed: Vec<(u64, &str)> = pool.iter().map(|id| (stream.key(&[round, client_key(id)]), *id)).collect();
    keyed.sort();
    let mut out: Vec<String> = keyed.into_iter().take(m).map(|(_, id)| id.to_string()).collect();
    out.sort();
    Ok(out)
}

/// `Σ (n_m/n) f_m` with `n = Σ n_m`, as a running weighted mean in list
/// order (so identical uploads aggregate to themselves exactly).
pub fn aggregate(received: &[(usize, &ParamSet)]) -> Result<ParamSet, FederatedError> {
    let (first_n, first) = received.first().ok_or(FederatedError::EmptyAggregate)?;
    for (_, p) in received {
        first.ensure_congruent(p)?;
    }
    if received.iter().map(|(n, _)| n).sum::<usize>() == 0 {
        return Err(FederatedError::ZeroSamples);
    }
    let mut acc = first.flatten();
    let mut weight = *first_n as f64;
    for (n, p) in &received[1..] {
        if *n == 0 {
            continue;
        }
        weight += *n as f64;
        let t = *n as f64 / weight;
        for (a, x) in acc.iter_mut().zip(p.flatten()) {
            *a += t * (x - *a);
        }
    }
    Ok(first.unflatten(&acc)?)
}
