//! Metrics, experiment orchestration, road-state export and the pieces the
//! command-line tool is built from.

mod config;
mod experiment;
mod export;
mod metrics;

use thiserror::Error;

use crate::data::DataError;
use crate::federated::FederatedError;
use crate::model::ModelError;
use crate::nn::NnError;
use crate::privacy::PrivacyError;

pub use config::{AttackSection, ExperimentConfig, ExperimentSection, Overrides, SchedulePreset, ScheduleSection};
pub use experiment::{
    generate, read_round_log, run_attack, run_experiment, run_export_state, split_days, training_instants, ExperimentOutput,
    ExperimentReport, Split, SplitAudit, ATTACK_FILE, CHECKPOINT_DIR, CONFIG_FILE, FINAL_CHECKPOINT, INIT_CHECKPOINT,
    METRICS_FILE, PREDICTIONS_FILE, ROUND_LOG, STATE_FILE,
};
pub use export::{bucket_for, export_state, implied_speed_kph, state_rows, Bucket, StateRow, TRAVEL_TIME_FLOOR_S};
pub use metrics::{compute_metrics, read_predictions, report_predictions, write_predictions, MetricReport, PREDICTION_HEADER};

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad configuration or input; the CLI exits with status 1.
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("export: {0}")]
    Export(String),
    #[error("{0}")]
    Runtime(String),
    #[error("round {round} ({at}): {source}")]
    Round {
        round: u64,
        at: String,
        source: Box<HarnessError>,
    },
    #[error(transparent)]
    Federated(#[from] FederatedError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn is_validation(&self) -> bool {
        matches!(self, HarnessError::Config(_))
    }
}
