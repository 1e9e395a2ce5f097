use std::collections::BTreeMap;

use chrono::{DateTime, SecondsFormat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{extract_profile, GridSpec, TrajectoryRecord};
use crate::graph::RoadNetwork;
use crate::model::{
    BaseModel, Calendar, ModelConfig, PersonalConfig, PersonalModel, ProfileNormalizer, TrafficState, SECONDS_PER_DAY,
};
use crate::nn::{tags, ParamSet, SeedStream};

use super::client::to_samples;
use super::{aggregate, client_key, client_update, hhmm, select_clients, AggregationSchedule, ClientState, FederatedConfig, FederatedError};

/// One client's contribution to a round as seen by the server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UploadRecord {
    pub client_id: String,
    pub n: usize,
    pub digest: String,
}

/// Log entry of one aggregation instant. Field order is the JSON field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub date: String,
    pub time: String,
    pub band: usize,
    pub slot: usize,
    pub window_start: String,
    pub window_end: String,
    pub eligible: usize,
    pub uploads: Vec<UploadRecord>,
    pub n_total: usize,
    pub aggregate_digest: String,
    pub skipped: bool,
    /// Simulated time of the aggregation.
    pub sim_time: String,
}

impl RoundRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    /// `global_<date>_<HHMM>.bin`.
    pub fn checkpoint_name(&self) -> String {
        format!("global_{}_{}.bin", self.date, self.time.replace(':', ""))
    }
}

fn iso(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|d| d.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_else(|| ts.to_string())
}

fn date(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|d| d.format("%Y-%m-%d").to_string())
        .unwrap_or_else(|| ts.div_euclid(SECONDS_PER_DAY).to_string())
}

/// Traffic states published at each aggregation instant. A query at time
/// `t` is answered by the latest state published at or before `t`.
#[derive(Clone, Debug, Default)]
pub struct ServedStates {
    states: Vec<(i64, TrafficState)>,
}

impl ServedStates {
    pub fn publish(&mut self, at: i64, state: TrafficState) {
        let pos = self.states.partition_point(|(t, _)| *t <= at);
        self.states.insert(pos, (at, state));
    }

    pub fn lookup(&self, t: i64) -> Option<(i64, &TrafficState)> {
        let pos = self.states.partition_point(|(s, _)| *s <= t);
        pos.checked_sub(1).map(|i| (self.states[i].0, &self.states[i].1))
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// One evaluated trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub client_id: String,
    pub route_seq: usize,
    pub y_true_s: f64,
    pub y_hat_s: f64,
    pub y_final_s: f64,
}

/// In-process federation: a server holding the global model and a pool of
/// clients, stepped one aggregation instant at a time.
pub struct Simulator<'a> {
    net: &'a RoadNetwork,
    model: BaseModel,
    personal_model: PersonalModel,
    calendar: Calendar,
    instants: Vec<(i64, usize)>,
    config: FederatedConfig,
    global: ParamSet,
    clients: Vec<ClientState>,
    round: u64,
    last_instant: Option<i64>,
    records: Vec<RoundRecord>,
    served: ServedStates,
}

impl<'a> Simulator<'a> {
    /// Builds the pool from each client's training trajectories. Clients
    /// without trajectories are dropped. Profiles and the profile
    /// normalizer are computed from the training trajectories.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        net: &'a RoadNetwork,
        model_config: ModelConfig,
        personal_config: PersonalConfig,
        config: FederatedConfig,
        schedule: &AggregationSchedule,
        calendar: Calendar,
        grid: &GridSpec,
        training: BTreeMap<String, Vec<TrajectoryRecord>>,
    ) -> Result<Self, FederatedError> {
        config.validate()?;
        schedule.validate()?;
        if model_config.slots_per_day != calendar.slots_per_day {
            return Err(FederatedError::InvalidConfig(format!(
                "model K = {} but calendar K = {}",
                model_config.slots_per_day, calendar.slots_per_day
            )));
        }
        let model = BaseModel::new(model_config)?;
        let streams = SeedStream::new(config.seed);
        let global = model.init_params(net, &mut streams.rng(&[tags::INIT]));
        let mut profiles = Vec::new();
        for (id, trips) in &training {
            if !trips.is_empty() {
                profiles.push((id.clone(), extract_profile(trips, grid, net, personal_config.top_k)?));
            }
        }
        let normalizer = ProfileNormalizer::fit(profiles.iter().map(|(_, p)| p));
        let personal_model = PersonalModel::new(personal_config, grid.num_cells(), net.num_edges(), normalizer);
        let mut training = training;
        let clients = profiles
            .into_iter()
            .map(|(id, profile)| {
                let personal = personal_model.init_params(&mut streams.rng(&[tags::PERSONAL, u64::MAX, client_key(&id)]));
                let trips = training.remove(&id).unwrap_or_default();
                ClientState::new(id, trips, profile, personal)
            })
            .collect();
        Ok(Self {
            net,
            model,
            personal_model,
            calendar,
            instants: schedule.instants(),
            config,
            global,
            clients,
            round: 0,
            last_instant: None,
            records: Vec::new(),
            served: ServedStates::default(),
        })
    }

    pub fn model(&self) -> &BaseModel {
        &self.model
    }

    pub fn personal_model(&self) -> &PersonalModel {
        &self.personal_model
    }

    pub fn calendar(&self) -> &Calendar {
        &self.calendar
    }

    pub fn config(&self) -> &FederatedConfig {
        &self.config
    }

    pub fn global(&self) -> &ParamSet {
        &self.global
    }

    pub fn set_global(&mut self, params: ParamSet) -> Result<(), FederatedError> {
        self.model.check_params(self.net, &params)?;
        self.global = params;
        Ok(())
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn served(&self) -> &ServedStates {
        &self.served
    }

    pub fn rounds_run(&self) -> u64 {
        self.round
    }

    /// Aggregation instants (unix seconds, band) of the day starting at
    /// `day_start`.
    pub fn day_instants(&self, day_start: i64) -> Vec<(i64, usize)> {
        self.instants.iter().map(|&(s, b)| (day_start + s, b)).collect()
    }

    /// Start of the window ending at `at`: the previous aggregation instant.
    fn window_start(&self, at: i64) -> i64 {
        if let Some(prev) = self.last_instant {
            return prev;
        }
        let sod = at.rem_euclid(SECONDS_PER_DAY);
        let prev = self
            .instants
            .iter()
            .rev()
            .map(|&(s, _)| s)
            .find(|&s| s < sod)
            .unwrap_or_else(|| self.instants.last().expect("non-empty schedule").0 - SECONDS_PER_DAY);
        at - sod + prev
    }

    /// Runs the round at instant `at`: select among clients with data in the
    /// elapsed window, train and noise in parallel, aggregate in client-id
    /// order, publish the new state.
    pub fn run_instant(&mut self, at: i64, band: usize) -> Result<&RoundRecord, FederatedError> {
        let start = self.window_start(at);
        let round = self.round;
        let eligible: Vec<&str> = self
            .clients
            .iter()
            .filter(|c| !c.window(start, at).is_empty())
            .map(|c| c.id.as_str())
            .collect();
        let m = self.config.clients_per_round.min(eligible.len());
        let selected = select_clients(&eligible, m, &SeedStream::new(self.config.seed).child(&[tags::SELECT]), round)?;
        let (model, net, cal, cfg, global) = (&self.model, self.net, &self.calendar, &self.config, &self.global);
        let chosen: Vec<&ClientState> = self.clients.iter().filter(|c| selected.binary_search(&c.id).is_ok()).collect();
        let uploads = chosen
            .par_iter()
            .map(|c| client_update(model, net, cal, global, &c.id, c.window(start, at), cfg, round))
            .collect::<Result<Vec<_>, _>>()?;

        let skipped = uploads.is_empty();
        if !skipped {
            let received: Vec<(usize, &ParamSet)> = uploads.iter().map(|u| (u.n, &u.noised)).collect();
            self.global = aggregate(&received)?;
        }
        let ctx = self.calendar.context(at);
        let state = self.model.traffic_state(self.net, &self.global, ctx)?;
        self.served.publish(at, state);

        let record = RoundRecord {
            round,
            date: date(at),
            time: hhmm(at),
            band,
            slot: ctx.slot,
            window_start: iso(start),
            window_end: iso(at),
            eligible: eligible.len(),
            uploads: uploads
                .iter()
                .map(|u| UploadRecord {
                    client_id: u.client_id.clone(),
                    n: u.n,
                    digest: u.noised.digest(),
                })
                .collect(),
            n_total: uploads.iter().map(|u| u.n).sum(),
            aggregate_digest: self.global.digest(),
            skipped,
            sim_time: iso(at),
        };
        self.round += 1;
        self.last_instant = Some(at);
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    /// Runs every instant of the day starting at `day_start`, then each
    /// client downloads the global model and fine-tunes its personal model
    /// on its trajectories of that day and earlier.
    pub fn run_day(&mut self, day_start: i64) -> Result<Vec<RoundRecord>, FederatedError> {
        let first = self.records.len();
        for (at, band) in self.day_instants(day_start) {
            self.run_instant(at, band)?;
        }
        self.fine_tune_all(day_start + SECONDS_PER_DAY)?;
        Ok(self.records[first..].to_vec())
    }

    /// Download + personal fine-tuning for every client, using trajectories
    /// departing before `until`.
    pub fn fine_tune_all(&mut self, until: i64) -> Result<(), FederatedError> {
        let (model, pm, net, cal, cfg, global) = (&self.model, &self.personal_model, self.net, &self.calendar, &self.config, &self.global);
        let tag = until.div_euclid(SECONDS_PER_DAY) as u64;
        self.clients.par_iter_mut().try_for_each(|c| {
            c.localized_global = Some(global.clone());
            c.fine_tune(model, pm, net, cal, cfg, until, tag)
        })
    }

    fn personal_bias(&self, client_id: &str) -> Result<f64, FederatedError> {
        match self.clients.binary_search_by(|c| c.id.as_str().cmp(client_id)) {
            Ok(i) => {
                let c = &self.clients[i];
                Ok(self.personal_model.personal_bias(&c.profile, &c.personal)?)
            }
            Err(_) => Ok(0.0),
        }
    }

    /// Base prediction from the current global model at each trajectory's
    /// own departure context, plus the driver's personal bias (0 for
    /// drivers outside the pool). `route_seq` numbers each driver's trips in
    /// input order.
    pub fn predict(&self, trips: &[TrajectoryRecord]) -> Result<Vec<Prediction>, FederatedError> {
        let samples = to_samples(&self.calendar, trips.iter());
        let y_hat = self.model.predict(self.net, &self.global, &samples)?;
        self.finish_predictions(trips, y_hat)
    }

    /// Like [`Self::predict`] but answering each trajectory from the state
    /// that was being served at its departure time.
    pub fn predict_served(&self, trips: &[TrajectoryRecord]) -> Result<Vec<Prediction>, FederatedError> {
        let y_hat = trips
            .iter()
            .map(|t| match self.served.lookup(t.departure()) {
                Some((_, s)) => Ok(s.route_sum(&t.route)?),
                None => Ok(0.0),
            })
            .collect::<Result<Vec<f64>, FederatedError>>()?;
        self.finish_predictions(trips, y_hat)
    }

    fn finish_predictions(&self, trips: &[TrajectoryRecord], y_hat: Vec<f64>) -> Result<Vec<Prediction>, FederatedError> {
        let mut seq: BTreeMap<&str, usize> = BTreeMap::new();
        let mut bias: BTreeMap<&str, f64> = BTreeMap::new();
        trips
            .iter()
            .zip(y_hat)
            .map(|(t, y_hat)| {
                let id = t.driver_id();
                let n = seq.entry(id).or_default();
                let route_seq = *n;
                *n += 1;
                let b = match bias.get(id) {
                    Some(b) => *b,
                    None => *bias.entry(id).or_insert(self.personal_bias(id)?),
                };
                Ok(Prediction {
                    client_id: id.to_string(),
                    route_seq,
                    y_true_s: t.travel_time_s,
                    y_hat_s: y_hat,
                    y_final_s: crate::model::predict_final(y_hat, b),
                })
            })
            .collect()
    }
}
