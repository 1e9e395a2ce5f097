use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TrajectoryRecord;
use crate::federated::{local_update, noise_upload, FederatedConfig, FederatedError};
use crate::graph::RoadNetwork;
use crate::model::{BaseModel, Calendar};
use crate::nn::ParamSet;

use super::{attack_risk, difference_attack, AttackNorm, PrivacyError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    /// Repetitions; repetition `r` trains and noises with seed `fed.seed + r`.
    pub seeds: usize,
    /// Attack set size.
    pub k: usize,
    pub norm: AttackNorm,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![f64::INFINITY, 100.0, 10.0, 1.0, 0.1],
            seeds: 20,
            k: 10,
            norm: AttackNorm::L2,
        }
    }
}

/// One client's risk for one epsilon and seed, averaged over the windows in
/// which it uploaded.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub seed: u64,
    pub client_id: String,
    pub k: usize,
    pub risk: f64,
}

/// Per-epsilon means over clients and seeds. `ceiling` is the same attack run
/// on the pre-noise parameters of the same uploads.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSummary {
    pub epsilon: f64,
    pub mean_risk: f64,
    pub ceiling: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

impl SweepTable {
    pub fn mean_risk(&self, epsilon: f64) -> Option<f64> {
        self.summary.iter().find(|s| s.epsilon == epsilon).map(|s| s.mean_risk)
    }
}

/// One attacked round: the global model every client downloaded and each
/// client's in-window trajectories.
#[derive(Clone, Debug)]
pub struct SweepRound<'a> {
    pub global: &'a ParamSet,
    pub clients: Vec<(String, Vec<TrajectoryRecord>)>,
}

pub struct SweepPool<'a> {
    pub model: &'a BaseModel,
    pub net: &'a RoadNetwork,
    pub calendar: &'a Calendar,
    pub fed: FederatedConfig,
    pub rounds: Vec<SweepRound<'a>>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Attack risk as a function of epsilon. Every client upload is trained once
/// per seed and then noised at each epsilon, so the epsilons are compared on
/// paired samples. Each upload is attacked against the global model the
/// client downloaded in that round.
pub fn risk_sweep(pool: &SweepPool<'_>, cfg: &SweepConfig) -> Result<SweepTable, PrivacyError> {
    if cfg.epsilons.len() < 2 {
        return Err(PrivacyError::TooFewEpsilons);
    }
    for &eps in &cfg.epsilons {
        super::DpConfig::new(eps, pool.fed.dp_clip).validate()?;
    }
    let mut jobs = Vec::new();
    for seed in 0..cfg.seeds as u64 {
        for (round, r) in pool.rounds.iter().enumerate() {
            for (id, trips) in r.clients.iter().filter(|(_, t)| !t.is_empty()) {
                jobs.push((seed, round as u64, r.global, id.as_str(), trips.as_slice()));
            }
        }
    }
    let sim = |e: FederatedError| PrivacyError::Simulation(e.to_string());
    let results: Vec<((u64, &str), f64, Vec<f64>)> = jobs
        .par_iter()
        .map(|&(seed, round, global, id, trips)| {
            let fed = FederatedConfig {
                seed: pool.fed.seed.wrapping_add(seed),
                ..pool.fed.clone()
            };
            let localized =
                local_update(pool.model, pool.net, pool.calendar, global, id, trips, &fed, round).map_err(sim)?;
            let truth: BTreeSet<usize> = trips.iter().flat_map(|t| t.route.edges()).collect();
            let ceiling = attack_risk(&truth, &difference_attack(global, &localized, cfg.k, cfg.norm)?)?;
            let risks = cfg
                .epsilons
                .iter()
                .map(|&epsilon| {
                    let dp = FederatedConfig { dp_epsilon: epsilon, ..fed.clone() };
                    let noised = noise_upload(&localized, id, &dp, round).map_err(sim)?;
                    attack_risk(&truth, &difference_attack(global, &noised, cfg.k, cfg.norm)?)
                })
                .collect::<Result<Vec<f64>, PrivacyError>>()?;
            Ok(((seed, id), ceiling, risks))
        })
        .collect::<Result<_, PrivacyError>>()?;

    // (seed, client) -> (ceilings, risks per window for each epsilon)
    let mut grouped: BTreeMap<(u64, &str), (Vec<f64>, Vec<Vec<f64>>)> = BTreeMap::new();
    for (key, ceiling, risks) in results {
        let entry = grouped.entry(key).or_insert_with(|| (Vec::new(), vec![Vec::new(); cfg.epsilons.len()]));
        entry.0.push(ceiling);
        for (acc, r) in entry.1.iter_mut().zip(risks) {
            acc.push(r);
        }
    }
    let mut table = SweepTable::default();
    for (ei, &epsilon) in cfg.epsilons.iter().enumerate() {
        for ((seed, id), (_, risks)) in &grouped {
            table.rows.push(SweepRow {
                epsilon,
                seed: pool.fed.seed.wrapping_add(*seed),
                client_id: id.to_string(),
                k: cfg.k,
                risk: mean(risks[ei].iter().copied()),
            });
        }
        let rows = &table.rows[table.rows.len() - grouped.len()..];
        table.summary.push(SweepSummary {
            epsilon,
            mean_risk: mean(rows.iter().map(|r| r.risk)),
            ceiling: mean(grouped.values().map(|(c, _)| mean(c.iter().copied()))),
        });
    }
    Ok(table)
}

/// CSV with header `epsilon,seed,client_id,k,risk`. After each epsilon's
/// rows comes an aggregate row with seed `all` and client id `mean`, then
/// one with client id `ceiling`.
pub fn write_sweep_csv<W: Write>(table: &SweepTable, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epsilon", "seed", "client_id", "k", "risk"])?;
    for s in &table.summary {
        let k = table.rows.first().map(|r| r.k).unwrap_or(0).to_string();
        let eps = s.epsilon.to_string();
        for r in table.rows.iter().filter(|r| r.epsilon.to_bits() == s.epsilon.to_bits()) {
            w.write_record([eps.as_str(), &r.seed.to_string(), &r.client_id, &k, &r.risk.to_string()])?;
        }
        w.write_record([eps.as_str(), "all", "mean", &k, &s.mean_risk.to_string()])?;
        w.write_record([eps.as_str(), "all", "ceiling", &k, &s.ceiling.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
