use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{generate_world, sample_trajectories, write_world_dir, GridSpec, TrajectoryRecord, World};
use crate::federated::{hhmm, Prediction, RoundRecord, Simulator};
use crate::model::{Calendar, SECONDS_PER_DAY};
use crate::nn::ParamSet;
use crate::privacy::{risk_sweep, write_sweep_csv, SweepPool, SweepRound, SweepTable};

use super::{export_state, report_predictions, write_predictions, ExperimentConfig, HarnessError, MetricReport};

pub const ROUND_LOG: &str = "rounds.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const INIT_CHECKPOINT: &str = "global_init.bin";
pub const FINAL_CHECKPOINT: &str = "global_final.bin";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const ATTACK_FILE: &str = "attack.csv";
pub const STATE_FILE: &str = "state.csv";

/// Sizes of the two splits and of their overlap, keyed by
/// `(driver, departure)`. The overlap is always 0 in a written report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAudit {
    pub train_trips: usize,
    pub eval_trips: usize,
    pub overlap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub global: MetricReport,
    pub personalized: MetricReport,
    pub split: SplitAudit,
    pub rounds: usize,
}

pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub records: Vec<RoundRecord>,
    pub predictions: Vec<Prediction>,
    pub global: ParamSet,
}

/// Training trajectories per driver and the held-out last day.
pub struct Split {
    pub training: BTreeMap<String, Vec<TrajectoryRecord>>,
    pub eval: Vec<TrajectoryRecord>,
    pub audit: SplitAudit,
}

pub fn split_days(world: &World, days: usize) -> Result<Split, HarnessError> {
    let mut training: BTreeMap<String, Vec<TrajectoryRecord>> = BTreeMap::new();
    for d in 0..days - 1 {
        for t in sample_trajectories(world, d) {
            training.entry(t.driver_id().to_string()).or_default().push(t);
        }
    }
    let eval = sample_trajectories(world, days - 1);
    let key = |t: &TrajectoryRecord| (t.driver_id().to_string(), t.departure());
    let train_keys: BTreeSet<_> = training.values().flatten().map(key).collect();
    let overlap = eval.iter().filter(|t| train_keys.contains(&key(t))).count();
    let audit = SplitAudit {
        train_trips: train_keys.len(),
        eval_trips: eval.len(),
        overlap,
    };
    if overlap > 0 {
        return Err(HarnessError::Runtime(format!("{overlap} evaluation trajectories also appear in training")));
    }
    if eval.is_empty() {
        return Err(HarnessError::Config("held-out day has no trajectories".into()));
    }
    Ok(Split { training, eval, audit })
}

/// Schedule instants in `(start of day 0, start of the held-out day]`.
pub fn training_instants(sim: &Simulator<'_>, world: &World, days: usize) -> Vec<(i64, usize)> {
    let (start, end) = (world.day_start(0), world.day_start(days - 1));
    (0..days)
        .flat_map(|d| sim.day_instants(world.day_start(d)))
        .filter(|&(at, _)| at > start && at <= end)
        .collect()
}

fn grid(cfg: &ExperimentConfig, world: &World) -> GridSpec {
    GridSpec::covering(&world.network, cfg.experiment.grid_rows, cfg.experiment.grid_cols)
}

fn build_sim<'a>(cfg: &ExperimentConfig, world: &'a World, split: &Split) -> Result<Simulator<'a>, HarnessError> {
    Ok(Simulator::new(
        &world.network,
        cfg.model.clone(),
        cfg.personal.clone(),
        cfg.federated.clone(),
        &cfg.schedule.schedule(),
        Calendar {
            slots_per_day: cfg.world.slots_per_day,
            holidays: cfg.world.holidays.iter().copied().collect(),
        },
        &grid(cfg, world),
        split.training.clone(),
    )?)
}

/// Simulates the training days round by round, fine-tunes every personal
/// model at the end of training, and evaluates global-only and personalized
/// predictions on the held-out day. With `out` set, writes the round log,
/// checkpoints, predictions, metrics and the resolved config there.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    let world = generate_world(&cfg.world)?;
    let days = cfg.experiment.days;
    let split = split_days(&world, days)?;
    let mut sim = build_sim(cfg, &world, &split)?;

    let mut log = None;
    let ckpt_dir = out.map(|d| d.join(CHECKPOINT_DIR));
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_FILE), cfg.to_toml_string())?;
        log = Some(BufWriter::new(fs::File::create(dir.join(ROUND_LOG))?));
    }
    if let Some(dir) = &ckpt_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(INIT_CHECKPOINT), sim.global().to_bytes())?;
    }

    for (at, band) in training_instants(&sim, &world, days) {
        let round = sim.rounds_run();
        let record = sim.run_instant(at, band).map_err(|e| HarnessError::Round {
            round,
            at: format!("day {} {}", at.div_euclid(SECONDS_PER_DAY), hhmm(at)),
            source: Box::new(e.into()),
        })?;
        if let Some(w) = log.as_mut() {
            writeln!(w, "{}", record.to_json_line())?;
        }
        if let (Some(dir), true) = (&ckpt_dir, cfg.experiment.checkpoints) {
            fs::write(dir.join(record.checkpoint_name()), sim.global().to_bytes())?;
        }
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    sim.fine_tune_all(world.day_start(days - 1))?;

    let predictions = sim.predict(&split.eval)?;
    let report = ExperimentReport {
        global: report_predictions(&predictions, false, "eval_global")?,
        personalized: report_predictions(&predictions, true, "eval_personalized")?,
        split: split.audit.clone(),
        rounds: sim.records().len(),
    };
    if let Some(dir) = out {
        write_predictions(&predictions, BufWriter::new(fs::File::create(dir.join(PREDICTIONS_FILE))?))?;
        fs::write(dir.join(METRICS_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    }
    if let Some(dir) = &ckpt_dir {
        fs::write(dir.join(FINAL_CHECKPOINT), sim.global().to_bytes())?;
    }
    Ok(ExperimentOutput {
        report,
        records: sim.records().to_vec(),
        predictions,
        global: sim.global().clone(),
    })
}

/// Writes the world and `experiment.days` days of trajectories to `out`.
pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<(), HarnessError> {
    cfg.world.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    let world = generate_world(&cfg.world)?;
    write_world_dir(&world, cfg.experiment.days, out)?;
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<ParamSet, HarnessError> {
    let bytes = fs::read(path).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(ParamSet::from_bytes(&bytes)?)
}

/// Checks that `dir` holds a finished run of `cfg` (same resolved config).
fn check_run_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<(), HarnessError> {
    let saved = ExperimentConfig::load(&dir.join(CONFIG_FILE))
        .map_err(|e| HarnessError::Config(format!("no finished training run in {}: {e}", dir.display())))?;
    if saved != *cfg {
        let eps = |c: &ExperimentConfig| c.federated.dp_epsilon;
        return Err(HarnessError::Config(format!(
            "{} was trained with a different configuration (epsilon {} vs {})",
            dir.display(),
            eps(&saved),
            eps(cfg)
        )));
    }
    Ok(())
}

fn parse_time(s: &str) -> Result<i64, HarnessError> {
    chrono::DateTime::parse_from_rfc3339(s)
        .map(|t| t.timestamp())
        .map_err(|e| HarnessError::Runtime(format!("bad timestamp `{s}` in round log: {e}")))
}

pub fn read_round_log(path: &Path) -> Result<Vec<RoundRecord>, HarnessError> {
    let f = fs::File::open(path).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?;
    BufReader::new(f)
        .lines()
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

/// Replays the first `attack.rounds` non-skipped rounds of the training run
/// in `dir`: each uploading client's window is retrained from the global
/// checkpoint it downloaded and attacked at every configured epsilon.
/// Writes `attack.csv` into `dir`.
pub fn run_attack(cfg: &ExperimentConfig, dir: &Path) -> Result<SweepTable, HarnessError> {
    cfg.validate()?;
    check_run_dir(cfg, dir)?;
    let world = generate_world(&cfg.world)?;
    let split = split_days(&world, cfg.experiment.days)?;
    let sim = build_sim(cfg, &world, &split)?;
    let records = read_round_log(&dir.join(ROUND_LOG))?;
    let ckpt = dir.join(CHECKPOINT_DIR);

    let instants = training_instants(&sim, &world, cfg.experiment.days);
    if instants.len() != records.len() {
        return Err(HarnessError::Runtime(format!(
            "round log has {} rounds, schedule implies {}",
            records.len(),
            instants.len()
        )));
    }
    let mut globals = Vec::new();
    let mut chosen = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if chosen.len() == cfg.attack.rounds {
            break;
        }
        if r.skipped {
            continue;
        }
        let prev = match i {
            0 => ckpt.join(INIT_CHECKPOINT),
            _ => ckpt.join(records[i - 1].checkpoint_name()),
        };
        globals.push(read_checkpoint(&prev)?);
        chosen.push(i);
    }
    if chosen.is_empty() {
        return Err(HarnessError::Runtime("no non-skipped rounds to attack".into()));
    }
    let rounds = chosen
        .iter()
        .zip(&globals)
        .map(|(&i, global)| {
            let r = &records[i];
            let (start, end) = (parse_time(&r.window_start)?, parse_time(&r.window_end)?);
            let clients = r
                .uploads
                .iter()
                .filter_map(|u| sim.clients().iter().find(|c| c.id == u.client_id))
                .map(|c| (c.id.clone(), c.window(start, end).to_vec()))
                .collect();
            Ok(SweepRound { global, clients })
        })
        .collect::<Result<_, HarnessError>>()?;
    let pool = SweepPool {
        model: sim.model(),
        net: &world.network,
        calendar: sim.calendar(),
        fed: cfg.federated.clone(),
        rounds,
    };
    let table = risk_sweep(&pool, &cfg.attack.sweep())?;
    write_sweep_csv(&table, BufWriter::new(fs::File::create(dir.join(ATTACK_FILE))?))?;
    Ok(table)
}

/// Exports the final global model's traffic state for every slot of the
/// held-out day into `state.csv`. Edges no training trajectory traversed
/// are reported unblocked.
pub fn run_export_state(cfg: &ExperimentConfig, dir: &Path) -> Result<(), HarnessError> {
    cfg.validate()?;
    check_run_dir(cfg, dir)?;
    let world = generate_world(&cfg.world)?;
    let split = split_days(&world, cfg.experiment.days)?;
    let sim = build_sim(cfg, &world, &split)?;
    let global = read_checkpoint(&dir.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT))?;
    let day = world.day_start(cfg.experiment.days - 1);
    let step = SECONDS_PER_DAY / cfg.world.slots_per_day as i64;
    let ctxs: Vec<_> = (0..cfg.world.slots_per_day as i64).map(|s| sim.calendar().context(day + s * step)).collect();
    let states = sim.model().traffic_states(&world.network, &global, &ctxs)?;
    let observed: BTreeSet<usize> = split.training.values().flatten().flat_map(|t| t.route.edges()).collect();
    export_state(&states, &world.network, Some(&observed), BufWriter::new(fs::File::create(dir.join(STATE_FILE))?))
}
