use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{embedding_backward, embedding_lookup, linear_backward, linear_forward, uniform_init, Bias, GradSet, ParamSet, Tensor};

use super::{ModelError, PersonalConfig};

/// Per-driver habits summarized from their trip history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverProfile {
    /// Start of the longest daily idle gap, hours in [0, 24).
    pub break_start_hour: f64,
    pub break_end_hour: f64,
    /// Most frequent grid cells, padded with the region padding id.
    pub top_regions: Vec<usize>,
    /// Most frequent edge positions, padded with the edge padding id.
    pub top_edges: Vec<usize>,
    pub avg_trip_distance_m: f64,
    pub trips_per_day: f64,
}

impl DriverProfile {
    /// `(break_start, break_end, avg_distance, trips_per_day)`.
    pub fn dense(&self) -> [f64; 4] {
        [
            self.break_start_hour,
            self.break_end_hour,
            self.avg_trip_distance_m,
            self.trips_per_day,
        ]
    }
}

/// Population mean and standard deviation of the dense profile features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileNormalizer {
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

impl Default for ProfileNormalizer {
    fn default() -> Self {
        Self {
            mean: [0.0; 4],
            std: [1.0; 4],
        }
    }
}

impl ProfileNormalizer {
    /// Fits over `profiles`; zero-variance features get unit scale.
    pub fn fit<'a>(profiles: impl IntoIterator<Item = &'a DriverProfile>) -> Self {
        let rows: Vec<[f64; 4]> = profiles.into_iter().map(DriverProfile::dense).collect();
        if rows.is_empty() {
            return Self::default();
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; 4];
        let mut std = [0.0; 4];
        for k in 0..4 {
            mean[k] = rows.iter().map(|r| r[k]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n;
            std[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn apply(&self, p: &DriverProfile) -> [f64; 4] {
        let mut d = p.dense();
        for k in 0..4 {
            d[k] = (d[k] - self.mean[k]) / self.std[k];
        }
        d
    }
}

/// Residual model mapping a driver profile to a travel-time bias in seconds.
///
/// Hidden state: mean region embedding, mean edge embedding and an affine
/// projection of the normalized dense features, concatenated, then one
/// linear layer to a scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonalModel {
    pub config: PersonalConfig,
    /// Number of grid cells; id `num_regions` is the padding id.
    pub num_regions: usize,
    /// Number of network edges; id `num_edges` is the padding id.
    pub num_edges: usize,
    pub normalizer: ProfileNormalizer,
}

struct PersonalCache {
    dense: Tensor,
    hidden: Tensor,
}

impl PersonalModel {
    pub fn new(config: PersonalConfig, num_regions: usize, num_edges: usize, normalizer: ProfileNormalizer) -> Self {
        Self {
            config,
            num_regions,
            num_edges,
            normalizer,
        }
    }

    pub fn region_padding(&self) -> usize {
        self.num_regions
    }

    pub fn edge_padding(&self) -> usize {
        self.num_edges
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let p = self.config.embed_dim;
        let mut ps = ParamSet::new();
        let mut put = |n: &str, t| ps.insert(n.to_string(), t).expect("unique parameter names");
        put("personal.region", uniform_init(rng, &[self.num_regions + 1, p], p));
        put("personal.edge", uniform_init(rng, &[self.num_edges + 1, p], p));
        put("personal.dense.w", uniform_init(rng, &[4, p], 4));
        put("personal.dense.b", uniform_init(rng, &[p], 4));
        put("personal.head.w", uniform_init(rng, &[3 * p, 1], 3 * p));
        put("personal.head.b", uniform_init(rng, &[1], 3 * p));
        ps
    }

    /// All-zero parameters (bias ≡ 0 for every profile).
    pub fn zero_params(&self) -> ParamSet {
        self.init_params(&mut crate::nn::SeedStream::new(0).rng(&[])).zeros_like()
    }

    fn check_profile(&self, profile: &DriverProfile) -> Result<(), ModelError> {
        if profile.top_regions.len() != self.config.top_k || profile.top_edges.len() != self.config.top_k {
            return Err(ModelError::Shape(format!(
                "profile lists must have length {}",
                self.config.top_k
            )));
        }
        Ok(())
    }

    fn forward(&self, profile: &DriverProfile, params: &ParamSet) -> Result<(f64, PersonalCache), ModelError> {
        self.check_profile(profile)?;
        let p = self.config.embed_dim;
        let k = self.config.top_k.max(1) as f64;
        let regions = embedding_lookup(params.get("personal.region")?, &profile.top_regions)?;
        let edges = embedding_lookup(params.get("personal.edge")?, &profile.top_edges)?;
        let dense = Tensor::matrix(1, 4, self.normalizer.apply(profile).to_vec())?;
        let proj = linear_forward(
            &dense,
            params.get("personal.dense.w")?,
            Bias::PerColumn(params.get("personal.dense.b")?),
        )?;
        let mut x = vec![0.0; 3 * p];
        for r in 0..regions.rows() {
            for (j, v) in regions.row(r).iter().enumerate() {
                x[j] += v / k;
            }
        }
        for r in 0..edges.rows() {
            for (j, v) in edges.row(r).iter().enumerate() {
                x[p + j] += v / k;
            }
        }
        x[2 * p..].copy_from_slice(proj.data());
        let hidden = Tensor::matrix(1, 3 * p, x)?;
        let out = linear_forward(
            &hidden,
            params.get("personal.head.w")?,
            Bias::PerColumn(params.get("personal.head.b")?),
        )?;
        Ok((out.data()[0], PersonalCache { dense, hidden }))
    }

    /// Predicted bias in seconds for `profile`.
    pub fn personal_bias(&self, profile: &DriverProfile, params: &ParamSet) -> Result<f64, ModelError> {
        Ok(self.forward(profile, params)?.0)
    }

    fn backward(
        &self,
        profile: &DriverProfile,
        params: &ParamSet,
        cache: &PersonalCache,
        dbias: f64,
        grads: &mut GradSet,
    ) -> Result<(), ModelError> {
        let p = self.config.embed_dim;
        let k = self.config.top_k.max(1) as f64;
        let dy = Tensor::matrix(1, 1, vec![dbias])?;
        let hw = params.get("personal.head.w")?;
        let g = linear_backward(&cache.hidden, hw, Bias::PerColumn(params.get("personal.head.b")?), &dy)?;
        grads.get_mut("personal.head.w")?.add_assign(&g.dw)?;
        grads.get_mut("personal.head.b")?.add_assign(&g.db.expect("bias present"))?;
        let dx = g.dx.data();
        let per_slot = |off: usize, n: usize| {
            let row: Vec<f64> = dx[off..off + p].iter().map(|v| v / k).collect();
            Tensor::from_rows(&vec![row; n])
        };
        embedding_backward(
            grads.get_mut("personal.region")?,
            &profile.top_regions,
            &per_slot(0, profile.top_regions.len())?,
        )?;
        embedding_backward(
            grads.get_mut("personal.edge")?,
            &profile.top_edges,
            &per_slot(p, profile.top_edges.len())?,
        )?;
        let dproj = Tensor::matrix(1, p, dx[2 * p..].to_vec())?;
        let g = linear_backward(
            &cache.dense,
            params.get("personal.dense.w")?,
            Bias::PerColumn(params.get("personal.dense.b")?),
            &dproj,
        )?;
        grads.get_mut("personal.dense.w")?.add_assign(&g.dw)?;
        grads.get_mut("personal.dense.b")?.add_assign(&g.db.expect("bias present"))?;
        Ok(())
    }

    /// `Σ (y − ŷ − bias)²` with ŷ held fixed, and its gradient over the
    /// personal parameters only.
    pub fn loss_and_grad(
        &self,
        params: &ParamSet,
        batch: &[PersonalSample<'_>],
    ) -> Result<(f64, GradSet), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut grads = GradSet::zeros_like(params);
        let mut loss = 0.0;
        for s in batch {
            let (bias, cache) = self.forward(s.profile, params)?;
            let r = s.y - s.y_hat - bias;
            loss += r * r;
            self.backward(s.profile, params, &cache, -2.0 * r, &mut grads)?;
        }
        Ok((loss, grads))
    }
}

/// One observation for the residual fit; `y_hat` comes from the frozen
/// base model.
#[derive(Clone, Copy, Debug)]
pub struct PersonalSample<'a> {
    pub profile: &'a DriverProfile,
    pub y: f64,
    pub y_hat: f64,
}

/// Pairs observed times with frozen base predictions.
pub fn personal_samples<'a>(
    profile: &'a DriverProfile,
    y: &[f64],
    y_hat: &[f64],
) -> Result<Vec<PersonalSample<'a>>, ModelError> {
    if y.len() != y_hat.len() {
        return Err(ModelError::Shape(format!("{} targets vs {} base predictions", y.len(), y_hat.len())));
    }
    Ok(y.iter()
        .zip(y_hat)
        .map(|(&y, &y_hat)| PersonalSample { profile, y, y_hat })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{check_gradients, sgd_step, SeedStream};

    fn model() -> PersonalModel {
        PersonalModel::new(
            PersonalConfig { embed_dim: 3, top_k: 2 },
            4,
            5,
            ProfileNormalizer {
                mean: [12.0, 14.0, 2000.0, 6.0],
                std: [3.0, 3.0, 500.0, 2.0],
            },
        )
    }

    fn profile() -> DriverProfile {
        DriverProfile {
            break_start_hour: 11.5,
            break_end_hour: 13.0,
            top_regions: vec![2, 4],
            top_edges: vec![0, 3],
            avg_trip_distance_m: 2500.0,
            trips_per_day: 7.0,
        }
    }

    #[test]
    fn zero_params_give_zero_bias() {
        let m = model();
        assert_eq!(m.personal_bias(&profile(), &m.zero_params()).unwrap(), 0.0);
    }

    #[test]
    fn constant_head_bias() {
        let m = model();
        let mut p = m.init_params(&mut SeedStream::new(3).rng(&[]));
        p.get_mut("personal.head.w").unwrap().scale(0.0);
        p.get_mut("personal.head.b").unwrap().data_mut()[0] = 7.0;
        assert_eq!(m.personal_bias(&profile(), &p).unwrap(), 7.0);
        let mut other = profile();
        other.trips_per_day = 1.0;
        other.top_edges = vec![5, 5];
        assert_eq!(m.personal_bias(&other, &p).unwrap(), 7.0);
    }

    #[test]
    fn padding_and_overflow() {
        let m = model();
        let p = m.init_params(&mut SeedStream::new(1).rng(&[]));
        let mut pr = profile();
        pr.top_regions = vec![m.region_padding(), m.region_padding()];
        assert!(m.personal_bias(&pr, &p).is_ok());
        pr.top_regions = vec![m.region_padding() + 1, 0];
        assert!(matches!(m.personal_bias(&pr, &p), Err(ModelError::Nn(_))));
        pr.top_regions = vec![0];
        assert!(m.personal_bias(&pr, &p).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = model();
        let pr = profile();
        let mut other = profile();
        other.top_edges = vec![3, 3];
        other.break_start_hour = 20.0;
        for seed in 0..10 {
            let p = m.init_params(&mut SeedStream::new(seed).rng(&[]));
            let batch = [
                PersonalSample { profile: &pr, y: 300.0, y_hat: 290.0 },
                PersonalSample { profile: &other, y: 120.0, y_hat: 125.0 },
            ];
            let rep = check_gradients(|q| m.loss_and_grad(q, &batch).map_err(|e| e.into_nn()), &p, 1e-5).unwrap();
            assert!(rep.max_rel_error < 1e-4, "seed {seed}: {rep:?}");
        }
    }

    #[test]
    fn zero_model_loss_is_residual_sum_of_squares() {
        let m = model();
        let pr = profile();
        let s = personal_samples(&pr, &[10.0, 20.0], &[7.0, 24.0]).unwrap();
        let (loss, _) = m.loss_and_grad(&m.zero_params(), &s).unwrap();
        assert_eq!(loss, 9.0 + 16.0);
        assert!(personal_samples(&pr, &[1.0], &[]).is_err());
        assert!(matches!(m.loss_and_grad(&m.zero_params(), &[]), Err(ModelError::EmptyBatch)));
    }

    #[test]
    fn sgd_recovers_least_squares_slope() {
        // residual = 4 · z(trips_per_day) + 2, z the normalized feature
        let m = PersonalModel::new(PersonalConfig { embed_dim: 1, top_k: 1 }, 1, 1, ProfileNormalizer::default());
        let profiles: Vec<DriverProfile> = (0..6)
            .map(|i| DriverProfile {
                break_start_hour: 0.0,
                break_end_hour: 0.0,
                top_regions: vec![0],
                top_edges: vec![0],
                avg_trip_distance_m: 0.0,
                trips_per_day: i as f64 - 2.5,
            })
            .collect();
        let batch: Vec<PersonalSample> = profiles
            .iter()
            .map(|p| PersonalSample {
                profile: p,
                y: 100.0 + 4.0 * p.trips_per_day + 2.0,
                y_hat: 100.0,
            })
            .collect();
        let mut params = m.zero_params();
        // only the dense path and head bias carry signal; start the chain at 1
        params.get_mut("personal.head.w").unwrap().data_mut()[2] = 1.0;
        for _ in 0..3000 {
            let (_, g) = m.loss_and_grad(&params, &batch).unwrap();
            params = sgd_step(&params, &g, 0.005).unwrap();
        }
        let slope = |p: &ParamSet| p.get("personal.dense.w").unwrap().data()[3] * p.get("personal.head.w").unwrap().data()[2];
        assert!((slope(&params) - 4.0).abs() < 1e-6, "slope {}", slope(&params));
        let fit = |t: f64| {
            let mut pr = profiles[0].clone();
            pr.trips_per_day = t;
            m.personal_bias(&pr, &params).unwrap()
        };
        assert!((fit(0.0) - 2.0).abs() < 1e-6);
    }
}
