//! Desk-scale stand-in for per-frame feature vectors with integer
//! annotations.
//!
//! Each group draws a feature offset shared by all its samples. A hidden
//! utility (linear term plus a sinusoidal ripple) is mapped onto the score
//! range, rounded to integers, perturbed with rounded Gaussian noise and
//! clamped.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, ScoredSample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_groups: usize,
    pub samples_per_group: usize,
    pub feature_dim: usize,
    /// Standard deviation of the annotation noise, in score units.
    pub noise_sd: f64,
    pub score_range: (f64, f64),
    /// Score units per unit of utility, i.e. the spread of clean scores.
    pub utility_scale: f64,
    /// Standard deviation of the per-group feature offset that moves the
    /// utility (shared expression level of a group).
    pub group_offset_sd: f64,
    /// Standard deviation of a per-group nuisance offset confined to the
    /// directions the utility ignores (identity of a group).
    pub identity_sd: f64,
    /// Weight of the sinusoidal term relative to the linear term.
    pub nonlinearity: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_groups: 120,
            samples_per_group: 20,
            feature_dim: 16,
            noise_sd: 1.5,
            score_range: (-10.0, 10.0),
            utility_scale: 10.0 / 3.0,
            group_offset_sd: 1.0,
            identity_sd: 0.0,
            nonlinearity: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_groups == 0 || self.samples_per_group == 0 || self.feature_dim == 0 {
            return Err(Error::Config(
                "n_groups, samples_per_group and feature_dim must be positive".into(),
            ));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        if !(self.group_offset_sd >= 0.0 && self.group_offset_sd.is_finite()) {
            return Err(Error::Config(format!(
                "group_offset_sd must be >= 0, got {}",
                self.group_offset_sd
            )));
        }
        if !(self.utility_scale > 0.0 && self.utility_scale.is_finite()) {
            return Err(Error::Config(format!(
                "utility_scale must be positive, got {}",
                self.utility_scale
            )));
        }
        if !(self.identity_sd >= 0.0 && self.identity_sd.is_finite()) {
            return Err(Error::Config(format!(
                "identity_sd must be >= 0, got {}",
                self.identity_sd
            )));
        }
        if !self.nonlinearity.is_finite() {
            return Err(Error::Config("nonlinearity must be finite".into()));
        }
        let (lo, hi) = self.score_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!(
                "score_range must satisfy lo < hi, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// The hidden utility and its mapping onto integer scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityModel {
    pub direction: Vec<f64>,
    pub wave: Vec<f64>,
    pub nonlinearity: f64,
    pub scale: f64,
    pub score_range: (f64, f64),
}

const WAVE_FREQUENCY: f64 = 1.5;

impl UtilityModel {
    /// Roughly unit-variance utility of a feature vector.
    pub fn utility(&self, x: &[f64]) -> f64 {
        let dot = |a: &[f64]| a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
        let a = self.nonlinearity;
        // E[sin^2(cZ)] = (1 - exp(-2c^2)) / 2 for standard normal Z
        let ripple_var = (1.0 - (-2.0 * WAVE_FREQUENCY * WAVE_FREQUENCY).exp()) / 2.0;
        (dot(&self.direction) + a * (WAVE_FREQUENCY * dot(&self.wave)).sin()) / (1.0 + a * a * ripple_var).sqrt()
    }

    /// Noise-free integer score.
    pub fn clean_score(&self, x: &[f64]) -> f64 {
        let (lo, hi) = self.score_range;
        (self.scale * self.utility(x)).round().clamp(lo, hi) + 0.0
    }
}

pub struct SyntheticData {
    pub dataset: Dataset,
    /// Hidden utility per sample, aligned with `dataset.samples()`.
    pub utility: Vec<f64>,
    pub model: UtilityModel,
}

fn std_normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Remove from `v` its components along the orthonormal `basis`.
fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let dot: f64 = v.iter().zip(b).map(|(p, q)| p * q).sum();
        v.iter_mut().zip(b).for_each(|(p, q)| *p -= dot * q);
    }
}

/// Orthonormal basis of the span of `vectors`.
fn orthonormal_basis(vectors: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut u = v.to_vec();
        project_out(&mut u, &basis);
        let len = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 1e-9 {
            basis.push(u.into_iter().map(|x| x / len).collect());
        }
    }
    basis
}

fn unit_vector(rng: &mut impl Rng, dim: usize, norm: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| std_normal(rng)).collect();
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 1e-12 {
            return v.into_iter().map(|x| x * norm / len).collect();
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = crate::seed::rng(spec.seed);
    let d = spec.feature_dim;
    // features have per-coordinate variance 1 + offset_sd^2
    let spread = 1.0 / (1.0 + spec.group_offset_sd * spec.group_offset_sd).sqrt();
    let (lo, hi) = spec.score_range;
    let model = UtilityModel {
        direction: unit_vector(&mut rng, d, spread),
        wave: unit_vector(&mut rng, d, spread),
        nonlinearity: spec.nonlinearity,
        scale: spec.utility_scale,
        score_range: spec.score_range,
    };
    let utility_span = orthonormal_basis(&[&model.direction, &model.wave]);
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::Config(e.to_string()))?;

    let width = (spec.n_groups.max(2) - 1).to_string().len();
    let mut samples = Vec::with_capacity(spec.n_groups * spec.samples_per_group);
    let mut utility = Vec::with_capacity(samples.capacity());
    for g in 0..spec.n_groups {
        let offset: Vec<f64> = (0..d).map(|_| spec.group_offset_sd * std_normal(&mut rng)).collect();
        let mut identity: Vec<f64> = (0..d).map(|_| spec.identity_sd * std_normal(&mut rng)).collect();
        project_out(&mut identity, &utility_span);
        let offset: Vec<f64> = offset.iter().zip(&identity).map(|(a, b)| a + b).collect();
        let group = format!("g{g:0width$}");
        for _ in 0..spec.samples_per_group {
            let features: Vec<f64> = offset.iter().map(|o| o + std_normal(&mut rng)).collect();
            let u = model.utility(&features);
            let jitter = if spec.noise_sd > 0.0 {
                noise.sample(&mut rng).round()
            } else {
                0.0
            };
            let score = ((model.scale * u).round() + jitter).clamp(lo, hi) + 0.0;
            utility.push(u);
            samples.push(ScoredSample {
                id: samples.len() as u64,
                group: group.clone(),
                score,
                features,
            });
        }
    }
    Ok(SyntheticData {
        dataset: Dataset::new(samples)?,
        utility,
        model,
    })
}
