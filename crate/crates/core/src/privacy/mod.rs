//! Laplace mechanism on uploaded parameters, the parameter-difference attack
//! that tries to recover which edges a client drove, and its risk score.

mod sweep;

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::edge_indexed_tensors;
use crate::nn::{NnError, ParamSet, Tensor};

pub use sweep::{risk_sweep, write_sweep_csv, SweepConfig, SweepPool, SweepRound, SweepRow, SweepSummary, SweepTable};

#[derive(Debug, Error)]
pub enum PrivacyError {
    #[error("epsilon must be > 0 (or inf), got {0}")]
    InvalidEpsilon(f64),
    #[error("clip bound must be finite and > 0, got {0}")]
    InvalidClip(f64),
    #[error("parameter sets carry no edge-indexed tensors")]
    MissingEdgeTensors,
    #[error("ground-truth edge set is empty")]
    EmptyGroundTruth,
    #[error("risk sweep needs at least two epsilon values")]
    TooFewEpsilons,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{0}")]
    Simulation(String),
}

/// Laplace mechanism settings. `epsilon = inf` disables clipping and noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpConfig {
    pub epsilon: f64,
    pub clip: f64,
    /// When set, only these tensors are clipped and noised.
    pub mask: Option<Vec<String>>,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            epsilon: f64::INFINITY,
            clip: 1.0,
            mask: None,
        }
    }
}

impl DpConfig {
    pub fn new(epsilon: f64, clip: f64) -> Self {
        Self {
            epsilon,
            clip,
            mask: None,
        }
    }

    pub fn validate(&self) -> Result<(), PrivacyError> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(PrivacyError::InvalidEpsilon(self.epsilon));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(PrivacyError::InvalidClip(self.clip));
        }
        Ok(())
    }

    pub fn is_disabled(&self) -> bool {
        self.epsilon == f64::INFINITY
    }

    /// Laplace scale `2·C_clip/ε`; zero when disabled.
    pub fn scale(&self) -> f64 {
        if self.is_disabled() {
            0.0
        } else {
            2.0 * self.clip / self.epsilon
        }
    }
}

/// One draw from Laplace(0, b) by inverting the CDF.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, b: f64) -> f64 {
    // u uniform on (-1/2, 1/2); the open lower end keeps ln finite
    let mut u: f64 = rng.random::<f64>() - 0.5;
    while u == -0.5 {
        u = rng.random::<f64>() - 0.5;
    }
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Clamps every coordinate to `[−C_clip, C_clip]` and adds independent
/// Laplace noise. Tensors are visited in name order, coordinates in storage
/// order, so a given RNG state yields a reproducible result.
pub fn noise_params<R: Rng + ?Sized>(params: &ParamSet, cfg: &DpConfig, rng: &mut R) -> Result<ParamSet, PrivacyError> {
    cfg.validate()?;
    if cfg.is_disabled() {
        return Ok(params.clone());
    }
    let b = cfg.scale();
    let mut out = params.clone();
    for (name, t) in out.iter_mut() {
        if let Some(mask) = &cfg.mask {
            if !mask.iter().any(|m| m == name) {
                continue;
            }
        }
        for v in t.data_mut() {
            *v = v.clamp(-cfg.clip, cfg.clip) + sample_laplace(rng, b);
        }
    }
    Ok(out)
}

/// Row norm used to score per-edge parameter change.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackNorm {
    L1,
    #[default]
    L2,
    Linf,
}

/// Change score per edge: the norm of that edge's rows of every
/// edge-indexed tensor, differenced between `prev` and `uploaded`.
pub fn edge_change_scores(prev: &ParamSet, uploaded: &ParamSet, norm: AttackNorm) -> Result<Vec<f64>, PrivacyError> {
    prev.ensure_congruent(uploaded)?;
    let names = edge_indexed_tensors(prev);
    if names.is_empty() {
        return Err(PrivacyError::MissingEdgeTensors);
    }
    let rows = |t: &Tensor| if t.rank() == 1 { t.len() } else { t.rows() };
    let n = rows(prev.get(&names[0])?);
    let mut acc = vec![0.0; n];
    for name in &names {
        let (a, b) = (prev.get(name)?, uploaded.get(name)?);
        if rows(a) != n {
            return Err(NnError::ShapeMismatch(format!("`{name}` has {} rows, expected {n}", rows(a))).into());
        }
        let width = a.len() / n.max(1);
        for (e, s) in acc.iter_mut().enumerate() {
            let (ra, rb) = (&a.data()[e * width..(e + 1) * width], &b.data()[e * width..(e + 1) * width]);
            for (x, y) in ra.iter().zip(rb) {
                let d = (y - x).abs();
                match norm {
                    AttackNorm::L1 => *s += d,
                    AttackNorm::L2 => *s += d * d,
                    AttackNorm::Linf => *s = s.max(d),
                }
            }
        }
    }
    if norm == AttackNorm::L2 {
        acc.iter_mut().for_each(|s| *s = s.sqrt());
    }
    Ok(acc)
}

/// Top-`k` edges by change score, ties broken by ascending edge index.
pub fn difference_attack(
    prev: &ParamSet,
    uploaded: &ParamSet,
    k: usize,
    norm: AttackNorm,
) -> Result<Vec<usize>, PrivacyError> {
    let scores = edge_change_scores(prev, uploaded, norm)?;
    Ok(top_k(&scores, k))
}

pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// `|Ω ∩ Ω̃| / |Ω|`.
pub fn attack_risk(truth: &BTreeSet<usize>, revealed: &[usize]) -> Result<f64, PrivacyError> {
    if truth.is_empty() {
        return Err(PrivacyError::EmptyGroundTruth);
    }
    let revealed: BTreeSet<usize> = revealed.iter().copied().collect();
    Ok(truth.intersection(&revealed).count() as f64 / truth.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackReport {
    pub client_id: String,
    pub k: usize,
    pub revealed: Vec<usize>,
    pub truth: BTreeSet<usize>,
    pub risk: f64,
}

/// Runs the attack against one client's upload and scores it.
pub fn attack_client(
    client_id: &str,
    prev: &ParamSet,
    uploaded: &ParamSet,
    truth: BTreeSet<usize>,
    k: usize,
    norm: AttackNorm,
) -> Result<AttackReport, PrivacyError> {
    let revealed = difference_attack(prev, uploaded, k, norm)?;
    let risk = attack_risk(&truth, &revealed)?;
    Ok(AttackReport {
        client_id: client_id.to_string(),
        k,
        revealed,
        truth,
        risk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::SeedStream;

    fn edge_params(n: usize, seed: u64) -> ParamSet {
        let mut rng = SeedStream::new(seed).rng(&[]);
        let mut p = ParamSet::new();
        p.insert("edge.id", crate::nn::uniform_init(&mut rng, &[n, 3], 1)).unwrap();
        p.insert("edge.head.b", crate::nn::uniform_init(&mut rng, &[n], 1)).unwrap();
        p.insert("other", crate::nn::uniform_init(&mut rng, &[2, 2], 1)).unwrap();
        p
    }

    #[test]
    fn infinite_epsilon_is_identity() {
        let mut p = edge_params(5, 0);
        p.get_mut("other").unwrap().data_mut()[0] = 5.0;
        let out = noise_params(&p, &DpConfig::default(), &mut SeedStream::new(1).rng(&[])).unwrap();
        assert_eq!(out.to_bytes(), p.to_bytes());
    }

    #[test]
    fn rejects_bad_config() {
        let p = edge_params(2, 0);
        let mut rng = SeedStream::new(1).rng(&[]);
        for eps in [0.0, -1.0, f64::NAN] {
            assert!(matches!(noise_params(&p, &DpConfig::new(eps, 1.0), &mut rng), Err(PrivacyError::InvalidEpsilon(_))));
        }
        assert!(matches!(noise_params(&p, &DpConfig::new(1.0, 0.0), &mut rng), Err(PrivacyError::InvalidClip(_))));
    }

    #[test]
    fn clamps_before_noise() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![5.0; 20_000])).unwrap();
        let out = noise_params(&p, &DpConfig::new(1e6, 1.0), &mut SeedStream::new(2).rng(&[])).unwrap();
        let mean = out.get("w").unwrap().data().iter().sum::<f64>() / 20_000.0;
        assert!((mean - 1.0).abs() < 1e-3, "{mean}");
    }

    #[test]
    fn mask_limits_noise() {
        let p = edge_params(4, 3);
        let cfg = DpConfig {
            mask: Some(vec!["edge.id".into()]),
            ..DpConfig::new(1.0, 1.0)
        };
        let out = noise_params(&p, &cfg, &mut SeedStream::new(4).rng(&[])).unwrap();
        assert_eq!(out.get("other").unwrap(), p.get("other").unwrap());
        assert_ne!(out.get("edge.id").unwrap(), p.get("edge.id").unwrap());
    }

    #[test]
    fn laplace_moments_and_tails() {
        let b = 0.2;
        let mut rng = SeedStream::new(5).rng(&[]);
        let xs: Vec<f64> = (0..100_000).map(|_| sample_laplace(&mut rng, b)).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01);
        assert!((var / (2.0 * b * b) - 1.0).abs() < 0.1);
        let tail = xs.iter().filter(|x| x.abs() > b * 20f64.ln()).count() as f64 / n;
        assert!((tail - 0.05).abs() < 0.01, "{tail}");
    }

    #[test]
    fn unchanged_upload_reveals_first_k() {
        let p = edge_params(10, 0);
        assert_eq!(difference_attack(&p, &p, 3, AttackNorm::L2).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn single_perturbed_edge_ranks_first() {
        let p = edge_params(10, 0);
        for norm in [AttackNorm::L1, AttackNorm::L2, AttackNorm::Linf] {
            let mut q = p.clone();
            q.get_mut("edge.id").unwrap().row_mut(7)[1] += 0.01;
            assert_eq!(difference_attack(&p, &q, 2, norm).unwrap(), vec![7, 0]);
            let mut q = p.clone();
            q.get_mut("edge.head.b").unwrap().data_mut()[4] -= 0.5;
            assert_eq!(difference_attack(&p, &q, 1, norm).unwrap(), vec![4]);
        }
    }

    #[test]
    fn attack_needs_edge_tensors() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(&[3])).unwrap();
        assert!(matches!(difference_attack(&p, &p, 1, AttackNorm::L2), Err(PrivacyError::MissingEdgeTensors)));
        let q = edge_params(3, 0);
        assert!(difference_attack(&q, &edge_params(4, 0), 1, AttackNorm::L2).is_err());
    }

    #[test]
    fn risk_arithmetic() {
        let truth: BTreeSet<usize> = [1, 2, 3, 4].into();
        assert_eq!(attack_risk(&truth, &[4, 3, 2, 1]).unwrap(), 1.0);
        assert_eq!(attack_risk(&truth, &[5, 6]).unwrap(), 0.0);
        assert_eq!(attack_risk(&truth, &[1, 2, 3, 9]).unwrap(), 0.75);
        assert!(matches!(attack_risk(&BTreeSet::new(), &[1]), Err(PrivacyError::EmptyGroundTruth)));
        let single: BTreeSet<usize> = [7].into();
        for revealed in [[7, 1], [0, 1]] {
            let r = attack_risk(&single, &revealed).unwrap();
            assert!(r == 0.0 || r == 1.0);
        }
    }

    #[test]
    fn top_k_ties_and_truncation() {
        assert_eq!(top_k(&[1.0, 3.0, 3.0, 0.0], 3), vec![1, 2, 0]);
        assert_eq!(top_k(&[1.0], 5), vec![0]);
    }
}
