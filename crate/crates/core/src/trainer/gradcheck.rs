//! Central finite-difference check of the full training gradient.

use ndarray::Array2;

use super::{joint_batch, objective, objective_grads, TrainConfig};
use crate::error::Result;
use crate::feature_store::BatchPair;
use crate::network::build_model;

/// Denominator floor for relative errors: `|a − n| / max(|a|, |n|, floor)`.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameters compared.
    pub checked: usize,
    /// Parameters skipped because a perturbation flipped some ReLU.
    pub skipped_at_kink: usize,
}

fn relu_mask(pre: &[Array2<f64>]) -> Vec<bool> {
    pre.iter().flat_map(|a| a.iter().map(|&v| v > 0.0)).collect()
}

/// Compares the analytic gradient of the full objective (network, CE and MMD
/// together) with central differences on every trainable parameter of a model
/// built from `cfg`. Kernel bandwidths are fixed at the unperturbed point.
pub fn grad_check(
    cfg: &TrainConfig,
    batch: &BatchPair,
    num_classes: usize,
    epsilon: f64,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    let params = build_model(batch.dim(), &cfg.bottleneck, num_classes, cfg.seed)?;
    let joint = joint_batch(batch.source_features.view(), batch.target_features.view());
    let labels = &batch.source_labels;
    let base = objective(&params, joint.view(), labels, &cfg.kernel, None, cfg.lambda, cfg.estimator, 0)?;
    let analytic = objective_grads(&params, &base)?;
    let kernel = base.kernel.clone();

    let eval = |p: &crate::network::ModelParams| {
        objective(p, joint.view(), labels, &cfg.kernel, Some(&kernel), cfg.lambda, cfg.estimator, 0)
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped_at_kink: 0,
    };
    let analytic_flat: Vec<Vec<f64>> = analytic.slices().iter().map(|s| s.to_vec()).collect();
    let mut work = params.clone();
    for (group, grads) in analytic_flat.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let original = work.trainable_slices_mut()[group][i];
            work.trainable_slices_mut()[group][i] = original + epsilon;
            let plus = eval(&work)?;
            work.trainable_slices_mut()[group][i] = original - epsilon;
            let minus = eval(&work)?;
            work.trainable_slices_mut()[group][i] = original;

            if relu_mask(&plus.trace.pre_activations) != relu_mask(&minus.trace.pre_activations) {
                report.skipped_at_kink += 1;
                continue;
            }
            let numeric = (plus.breakdown.total - minus.breakdown.total) / (2.0 * epsilon);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            report.max_relative_error = report.max_relative_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
