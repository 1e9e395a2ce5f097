use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::federated::Prediction;

use super::HarnessError;

/// Error summary of one prediction set. MAPE is in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: String,
    pub count: usize,
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_client: BTreeMap<String, MetricReport>,
}

/// MAE, RMSE and MAPE of `(y, y_pred)` pairs.
pub fn compute_metrics(pairs: &[(f64, f64)], split: &str) -> Result<MetricReport, HarnessError> {
    if pairs.is_empty() {
        return Err(HarnessError::Metrics("no samples".into()));
    }
    let (mut abs, mut sq, mut pct) = (0.0, 0.0, 0.0);
    for &(y, p) in pairs {
        if !(y > 0.0) {
            return Err(HarnessError::Metrics(format!("ground truth must be > 0, got {y}")));
        }
        let e = p - y;
        abs += e.abs();
        sq += e * e;
        pct += (e / y).abs();
    }
    let n = pairs.len() as f64;
    Ok(MetricReport {
        split: split.to_string(),
        count: pairs.len(),
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        mape: 100.0 * pct / n,
        per_client: BTreeMap::new(),
    })
}

/// Pooled report with a per-client breakdown; `personalized` selects
/// `y_final_s` over `y_hat_s`.
pub fn report_predictions(preds: &[Prediction], personalized: bool, split: &str) -> Result<MetricReport, HarnessError> {
    let pick = |p: &Prediction| (p.y_true_s, if personalized { p.y_final_s } else { p.y_hat_s });
    let mut report = compute_metrics(&preds.iter().map(pick).collect::<Vec<_>>(), split)?;
    let mut by_client: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for p in preds {
        by_client.entry(&p.client_id).or_default().push(pick(p));
    }
    for (id, pairs) in by_client {
        report.per_client.insert(id.to_string(), compute_metrics(&pairs, split)?);
    }
    Ok(report)
}

impl MetricReport {
    /// Unweighted mean of the per-client MAEs.
    pub fn mean_client_mae(&self) -> Option<f64> {
        if self.per_client.is_empty() {
            return None;
        }
        Some(self.per_client.values().map(|r| r.mae).sum::<f64>() / self.per_client.len() as f64)
    }
}

pub const PREDICTION_HEADER: [&str; 5] = ["client_id", "route_seq", "y_true_s", "y_hat_s", "y_final_s"];

pub fn write_predictions<W: Write>(preds: &[Prediction], out: W) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(PREDICTION_HEADER)?;
    for p in preds {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(input: R) -> Result<Vec<Prediction>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(PREDICTION_HEADER) {
        return Err(HarnessError::Metrics(format!("prediction header must be {}", PREDICTION_HEADER.join(","))));
    }
    Ok(r.deserialize().collect::<Result<Vec<Prediction>, _>>()?)
}
