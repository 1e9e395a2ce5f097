use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::TrajectoryRecord;
use crate::graph::RoadNetwork;
use crate::model::{personal_samples, BaseModel, Calendar, DriverProfile, PersonalModel, Sample};
use crate::nn::{sgd_step_in_place, tags, ParamSet, SeedStream};
use crate::privacy::noise_params;

use super::{client_key, FederatedConfig, FederatedError};

/// On-device state of one client. Trajectories never leave this struct;
/// uploads carry parameters and a sample count only.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: String,
    /// Training trajectories sorted by departure.
    pub trajectories: Vec<TrajectoryRecord>,
    pub profile: DriverProfile,
    /// Last downloaded global model, used frozen for personal fine-tuning.
    pub localized_global: Option<ParamSet>,
    pub personal: ParamSet,
}

impl ClientState {
    pub fn new(id: String, mut trajectories: Vec<TrajectoryRecord>, profile: DriverProfile, personal: ParamSet) -> Self {
        trajectories.sort_by_key(|t| t.departure());
        Self {
            id,
            trajectories,
            profile,
            localized_global: None,
            personal,
        }
    }

    /// Trajectories departing in `[start, end)`.
    pub fn window(&self, start: i64, end: i64) -> &[TrajectoryRecord] {
        let lo = self.trajectories.partition_point(|t| t.departure() < start);
        let hi = self.trajectories.partition_point(|t| t.departure() < end);
        &self.trajectories[lo..hi.max(lo)]
    }

    /// Re-fits the personal model on every trajectory departing before
    /// `until`, with base predictions from the frozen localized global model.
    pub fn fine_tune(
        &mut self,
        model: &BaseModel,
        personal_model: &PersonalModel,
        net: &RoadNetwork,
        calendar: &Calendar,
        cfg: &FederatedConfig,
        until: i64,
        tag: u64,
    ) -> Result<(), FederatedError> {
        let Some(global) = &self.localized_global else {
            return Ok(());
        };
        let trips = self.window(i64::MIN, until);
        if trips.is_empty() {
            return Ok(());
        }
        let before = global.digest();
        let samples = to_samples(calendar, trips.iter());
        let y_hat = model.predict(net, global, &samples)?;
        let y: Vec<f64> = samples.iter().map(|s| s.y).collect();
        let mut rng = SeedStream::new(cfg.seed).rng(&[tags::PERSONAL, tag, client_key(&self.id)]);
        let tuned = fine_tune_personal(personal_model, &self.profile, &self.personal, &y, &y_hat, cfg, &mut rng)?;
        if global.digest() != before {
            return Err(FederatedError::FrozenModelChanged(self.id.clone()));
        }
        self.personal = tuned;
        Ok(())
    }
}

pub(crate) fn to_samples<'a>(calendar: &Calendar, trips: impl Iterator<Item = &'a TrajectoryRecord>) -> Vec<Sample<'a>> {
    trips
        .map(|t| Sample {
            route: &t.route,
            ctx: calendar.context(t.departure()),
            y: t.travel_time_s,
        })
        .collect()
}

/// `epochs` passes of minibatch SGD on the base loss, visiting samples in a
/// fresh random order each epoch. Each step's gradient is clipped to global
/// L2 norm `clip`.
#[allow(clippy::too_many_arguments)]
pub fn local_sgd<R: Rng + ?Sized>(
    model: &BaseModel,
    net: &RoadNetwork,
    params: &mut ParamSet,
    samples: &[Sample<'_>],
    epochs: usize,
    lr: f64,
    batch_size: usize,
    clip: f64,
    rng: &mut R,
) -> Result<(), FederatedError> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size.max(1)) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i]).collect();
            let (_, mut grads) = model.loss_and_grad(net, params, &batch)?;
            grads.clip_norm(clip);
            sgd_step_in_place(params, &grads, lr)?;
        }
    }
    Ok(())
}

/// What a client sends back, plus its pre-noise copy (kept on device).
#[derive(Clone, Debug)]
pub struct ClientUpload {
    pub client_id: String,
    /// In-window sample count n_m.
    pub n: usize,
    pub localized: ParamSet,
    pub noised: ParamSet,
}

/// Trains a copy of `global` on the client's in-window trajectories and
/// applies the Laplace mechanism to the result.
#[allow(clippy::too_many_arguments)]
pub fn client_update(
    model: &BaseModel,
    net: &RoadNetwork,
    calendar: &Calendar,
    global: &ParamSet,
    client_id: &str,
    window: &[TrajectoryRecord],
    cfg: &FederatedConfig,
    round: u64,
) -> Result<ClientUpload, FederatedError> {
    let localized = local_update(model, net, calendar, global, client_id, window, cfg, round)?;
    let noised = noise_upload(&localized, client_id, cfg, round)?;
    Ok(ClientUpload {
        client_id: client_id.to_string(),
        n: window.len(),
        localized,
        noised,
    })
}

/// The training half of [`client_update`]: local SGD from `global`, no noise.
#[allow(clippy::too_many_arguments)]
pub fn local_update(
    model: &BaseModel,
    net: &RoadNetwork,
    calendar: &Calendar,
    global: &ParamSet,
    client_id: &str,
    window: &[TrajectoryRecord],
    cfg: &FederatedConfig,
    round: u64,
) -> Result<ParamSet, FederatedError> {
    if window.is_empty() {
        return Err(FederatedError::NoData(client_id.to_string()));
    }
    let samples = to_samples(calendar, window.iter());
    let mut params = global.clone();
    let mut rng = SeedStream::new(cfg.seed).rng(&[tags::LOCAL_SGD, round, client_key(client_id)]);
    local_sgd(model, net, &mut params, &samples, cfg.local_epochs, cfg.base_lr, cfg.batch_size, cfg.grad_clip, &mut rng)?;
    Ok(params)
}

/// The privacy half of [`client_update`], drawing from the client's noise
/// stream for `round`.
pub fn noise_upload(localized: &ParamSet, client_id: &str, cfg: &FederatedConfig, round: u64) -> Result<ParamSet, FederatedError> {
    let mut rng = SeedStream::new(cfg.seed).rng(&[tags::DP_NOISE, round, client_key(client_id)]);
    Ok(noise_params(localized, &cfg.dp(), &mut rng)?)
}

/// `personal_epochs` of per-minibatch SGD on the residual loss with the base
/// predictions `y_hat` held fixed.
pub fn fine_tune_personal<R: Rng + ?Sized>(
    personal_model: &PersonalModel,
    profile: &DriverProfile,
    personal: &ParamSet,
    y: &[f64],
    y_hat: &[f64],
    cfg: &FederatedConfig,
    rng: &mut R,
) -> Result<ParamSet, FederatedError> {
    let samples = personal_samples(profile, y, y_hat)?;
    let mut params = personal.clone();
    if samples.is_empty() {
        return Ok(params);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..cfg.personal_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<_> = chunk.iter().map(|&i| samples[i]).collect();
            let (_, mut grads) = personal_model.loss_and_grad(&params, &batch)?;
            grads.clip_norm(cfg.personal_grad_clip);
            sgd_step_in_place(&mut params, &grads, cfg.personal_lr)?;
        }
    }
    Ok(params)
}
