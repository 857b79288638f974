//! Synthetic shifted-Gaussian domains for desk-scale adaptation experiments.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::DomainDataset;
use crate::error::{EudaError, Result};

/// Parameters of a two-domain Gaussian mixture.
///
/// Class means sit on the coordinate axes, pairwise `class_separation` apart, in
/// the source domain; the
/// target domain translates every class by the same random direction scaled to
/// `shift_magnitude`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub samples_per_class: usize,
    pub class_separation: f64,
    pub shift_magnitude: f64,
    pub noise_std: f64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(EudaError::config("num_classes", "must be at least 2"));
        }
        if self.feature_dim < 2 {
            return Err(EudaError::config("feature_dim", "must be at least 2"));
        }
        if self.num_classes > self.feature_dim {
            return Err(EudaError::config(
                "num_classes",
                "axis-aligned class means need num_classes <= feature_dim",
            ));
        }
        if self.samples_per_class < 4 {
            return Err(EudaError::config("samples_per_class", "must be at least 4"));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(EudaError::config("class_separation", "must be positive"));
        }
        if !(self.shift_magnitude >= 0.0 && self.shift_magnitude.is_finite()) {
            return Err(EudaError::config("shift_magnitude", "must be non-negative"));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(EudaError::config("noise_std", "must be positive"));
        }
        Ok(())
    }

    /// Mean of class `k` in the source domain: `(ρ/√2)·e_k`, so that every
    /// pair of class means is exactly `class_separation` apart.
    pub fn source_mean(&self, k: usize) -> Array1<f64> {
        let mut m = Array1::zeros(self.feature_dim);
        m[k] = self.class_separation / std::f64::consts::SQRT_2;
        m
    }
}

/// The unit shift direction drawn for `seed`.
pub fn shift_direction(dim: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    loop {
        let v: Array1<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Draws a labeled source domain and a shifted target domain.
///
/// Rows are class-major. Both datasets carry labels; the target's labels are
/// meant for evaluation only.
pub fn synth_shifted_gaussians(
    spec: &SynthSpec,
    seed: u64,
) -> Result<(DomainDataset, DomainDataset)> {
    spec.validate()?;
    let shift = shift_direction(spec.feature_dim, seed) * spec.shift_magnitude;
    let zero = Array1::zeros(spec.feature_dim);
    let source = sample_domain(spec, seed, 1, &zero, "source")?;
    let target = sample_domain(spec, seed, 2, &shift, "target")?;
    Ok((source, target))
}

fn sample_domain(
    spec: &SynthSpec,
    seed: u64,
    stream: u64,
    offset: &Array1<f64>,
    tag: &str,
) -> Result<DomainDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let (c, d, m) = (spec.num_classes, spec.feature_dim, spec.samples_per_class);
    let mut x = Array2::zeros((c * m, d));
    let mut labels = Vec::with_capacity(c * m);
    for k in 0..c {
        let mean = spec.source_mean(k) + offset;
        for i in 0..m {
            let mut row = x.row_mut(k * m + i);
            for j in 0..d {
                let eps: f64 = rng.sample(StandardNormal);
                row[j] = mean[j] + spec.noise_std * eps;
            }
            labels.push(k);
        }
    }
    DomainDataset::from_f64(x, Some(labels), Some(c), tag)
}
