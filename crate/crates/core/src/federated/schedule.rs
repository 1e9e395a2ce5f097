use serde::{Deserialize, Serialize};

use crate::model::SECONDS_PER_DAY;

use super::FederatedError;

/// A band of the day `[start_hour, end_hour)` with aggregation interval Δ.
/// A band whose end is before its start wraps past midnight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub start_hour: f64,
    pub end_hour: f64,
    pub interval_hours: f64,
}

impl Band {
    pub fn length_hours(&self) -> f64 {
        let len = (self.end_hour - self.start_hour).rem_euclid(24.0);
        if len == 0.0 {
            24.0
        } else {
            len
        }
    }
}

/// Online aggregation schedule: day bands, each with its own interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationSchedule {
    pub bands: Vec<Band>,
}

/// Night 4 h, morning rush 0.5 h, day 2 h, evening rush 0.5 h, evening 2 h.
pub fn default_schedule() -> AggregationSchedule {
    let band = |s, e, d| Band {
        start_hour: s,
        end_hour: e,
        interval_hours: d,
    };
    AggregationSchedule {
        bands: vec![
            band(23.0, 7.0, 4.0),
            band(7.0, 9.0, 0.5),
            band(9.0, 17.0, 2.0),
            band(17.0, 19.0, 0.5),
            band(19.0, 23.0, 2.0),
        ],
    }
}

const EPS: f64 = 1e-9;

impl AggregationSchedule {
    /// One band over the whole day with a single daily aggregation.
    pub fn daily() -> Self {
        Self {
            bands: vec![Band {
                start_hour: 0.0,
                end_hour: 0.0,
                interval_hours: 24.0,
            }],
        }
    }

    pub fn validate(&self) -> Result<(), FederatedError> {
        let bad = |m: String| Err(FederatedError::InvalidSchedule(m));
        if self.bands.is_empty() {
            return bad("no bands".into());
        }
        // minute-resolution coverage map of the day
        let mut covered = vec![false; 24 * 60];
        for b in &self.bands {
            for h in [b.start_hour, b.end_hour] {
                if !(0.0..24.0).contains(&h) || (h * 60.0 - (h * 60.0).round()).abs() > EPS {
                    return bad(format!("band boundary {h} must be a whole minute in [0, 24)"));
                }
            }
            if !(b.interval_hours > 0.0) {
                return bad("interval must be positive".into());
            }
            let q = b.length_hours() / b.interval_hours;
            if (q - q.round()).abs() > EPS || q.round() < 1.0 {
                return bad(format!(
                    "interval {} h does not divide band {}-{}",
                    b.interval_hours, b.start_hour, b.end_hour
                ));
            }
            let start = (b.start_hour * 60.0).round() as usize;
            let len = (b.length_hours() * 60.0).round() as usize;
            for m in 0..len {
                let slot = &mut covered[(start + m) % (24 * 60)];
                if *slot {
                    return bad(format!("band {}-{} overlaps another band", b.start_hour, b.end_hour));
                }
                *slot = true;
            }
        }
        if covered.iter().any(|c| !c) {
            return bad("bands do not cover the whole day".into());
        }
        Ok(())
    }

    /// Aggregation instants as seconds after midnight, ascending, each tagged
    /// with its band index.
    pub fn instants(&self) -> Vec<(i64, usize)> {
        let mut out = Vec::new();
        for (bi, b) in self.bands.iter().enumerate() {
            let n = (b.length_hours() / b.interval_hours).round() as usize;
            for i in 0..n {
                let h = (b.start_hour + i as f64 * b.interval_hours).rem_euclid(24.0);
                out.push(((h * 3600.0).round() as i64 % SECONDS_PER_DAY, bi));
            }
        }
        out.sort();
        out
    }
}

/// `HH:MM` for seconds after midnight.
pub fn hhmm(seconds_of_day: i64) -> String {
    let s = seconds_of_day.rem_euclid(SECONDS_PER_DAY);
    format!("{:02}:{:02}", s / 3600, (s % 3600) / 60)
}
