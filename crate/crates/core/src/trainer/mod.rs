//! The training loop: joint forward, CE + MMD objective, backprop, SGD with
//! momentum, per-epoch target evaluation.

mod config;
mod gradcheck;

use log::{debug, info};
use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{EudaError, Result};
use crate::feature_store::{paired_indices, pairs_per_epoch, DomainDataset};
use crate::kernels::{mmd2_grad_with, Estimator, KernelSpec, ResolvedKernel};
use crate::loss::{sdal_combine, softmax_cross_entropy, LossBreakdown};
use crate::network::{
    argmax_rows, backward, build_model, forward, forward_with, ForwardTrace, ModelParams, NormMode,
    ParamGrads,
};

pub use config::{FlatConfig, Schedule, TrainConfig};
pub use gradcheck::{grad_check, GradCheckReport, GRAD_CHECK_FLOOR};

/// Rows per chunk when evaluating a full dataset.
const EVAL_CHUNK: usize = 1024;
/// Mixed into the seed for batch shuffling so it never shares a stream with initialization.
const SHUFFLE_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// One optimization step's log entry.
///
/// `target_accuracy` is set only on the last step of each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_ce: f64,
    pub loss_mmd: f64,
    pub source_batch_accuracy: f64,
    pub target_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub metrics: Vec<MetricsRecord>,
}

/// Handed to the observer after each epoch.
pub struct EpochReport<'a> {
    pub epoch: usize,
    pub params: &'a ModelParams,
    pub records: &'a [MetricsRecord],
}

/// Learning rate at `step` of `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let Schedule::InvDecay { gamma, alpha } = cfg.schedule;
    let p = step as f64 / total_steps.max(1) as f64;
    cfg.lr0 * (1.0 + gamma * p).powf(-alpha)
}

/// The objective and its seeds for one joint batch.
pub(crate) struct Objective {
    pub breakdown: LossBreakdown,
    pub trace: ForwardTrace,
    pub kernel: ResolvedKernel,
    pub grad_logits: Array2<f64>,
    pub grad_z: Array2<f64>,
    pub source_correct: usize,
}

/// Stacks source rows over target rows. Both domains pass through the same
/// parameters and share one set of standardization statistics.
pub(crate) fn joint_batch(source: ArrayView2<f64>, target: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(0), &[source, target]).expect("widths checked by caller")
}

/// Forward pass plus loss over a joint batch whose first `labels.len()` rows
/// are source. With `fixed_kernel` the bandwidths are taken as given,
/// otherwise they are resolved from this batch's embeddings.
#[allow(clippy::too_many_arguments)]
pub(crate) fn objective(
    params: &ModelParams,
    joint: ArrayView2<f64>,
    labels: &[usize],
    kernel: &KernelSpec,
    fixed_kernel: Option<&ResolvedKernel>,
    lambda: f64,
    estimator: Estimator,
    step: usize,
) -> Result<Objective> {
    let bs = labels.len();
    let trace = forward(params, joint)?;
    if trace.logits.iter().chain(trace.embedding().iter()).any(|v| !v.is_finite()) {
        return Err(EudaError::Divergence {
            step,
            detail: "non-finite activations".into(),
        });
    }
    let z = trace.embedding();
    let (z_s, z_t) = (z.slice(s![..bs, ..]), z.slice(s![bs.., ..]));
    let source_logits = trace.logits.slice(s![..bs, ..]);
    let (ce, ce_grad) = softmax_cross_entropy(source_logits, labels)?;
    let resolved = match fixed_kernel {
        Some(k) => k.clone(),
        None => kernel.resolve(z_s, z_t)?,
    };
    let mmd = mmd2_grad_with(z_s, z_t, &resolved, estimator)?;
    let (breakdown, seeds) = sdal_combine(ce, &ce_grad, mmd.value, &mmd.d_source, &mmd.d_target, lambda)?;
    if !breakdown.total.is_finite() {
        return Err(EudaError::Divergence {
            step,
            detail: format!("loss is {} (ce {}, mmd {})", breakdown.total, ce, mmd.value),
        });
    }

    let n = joint.nrows();
    let mut grad_logits = Array2::zeros((n, params.num_classes()));
    grad_logits.slice_mut(s![..bs, ..]).assign(&seeds.logits);
    let grad_z = concatenate(Axis(0), &[seeds.z_source.view(), seeds.z_target.view()])
        .expect("same embedding width");
    let source_correct = argmax_rows(&source_logits.to_owned())
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(Objective {
        breakdown,
        trace,
        kernel: resolved,
        grad_logits,
        grad_z,
        source_correct,
    })
}

/// Gradient of the objective with respect to every trainable parameter.
pub(crate) fn objective_grads(params: &ModelParams, obj: &Objective) -> Result<ParamGrads> {
    backward(params, &obj.trace, obj.grad_logits.view(), obj.grad_z.view())
}

/// SGD with classical momentum: `v ← μv + g + wd·θ`, `θ ← θ − lr·v`.
pub fn sgd_step(
    params: &mut ModelParams,
    velocity: &mut ParamGrads,
    grads: &ParamGrads,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for ((p, v), g) in params
        .trainable_slices_mut()
        .into_iter()
        .zip(velocity.slices_mut())
        .zip(grads.slices())
    {
        for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
            let g_total = if weight_decay != 0.0 { gi + weight_decay * *pi } else { *gi };
            *vi = momentum * *vi + g_total;
            *pi -= lr * *vi;
        }
    }
}

/// Runs the full training procedure. Target labels are never read.
pub fn train(source: &DomainDataset, target: &DomainDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(source, target, cfg, |_| Ok(()))
}

/// [`train`] with a callback after every epoch, e.g. to flush logs or write
/// periodic checkpoints.
pub fn train_with<F>(
    source: &DomainDataset,
    target: &DomainDataset,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochReport<'_>) -> Result<()>,
{
    cfg.validate()?;
    let source_labels = source
        .labels()
        .ok_or_else(|| EudaError::Contract("source dataset must be labeled".into()))?;
    let num_classes = source.num_classes().expect("labeled datasets carry a class count");
    if source.dim() != target.dim() {
        return Err(EudaError::Shape(format!(
            "source width {} differs from target width {}",
            source.dim(),
            target.dim()
        )));
    }
    let per_epoch = pairs_per_epoch(source.len(), target.len(), cfg.batch_size);
    if per_epoch == 0 {
        return Err(EudaError::Contract("domains too small to form a batch of 2".into()));
    }
    let total_steps = per_epoch * cfg.epochs;

    let mut params = build_model(source.dim(), &cfg.bottleneck, num_classes, cfg.seed)?;
    let mut velocity = ParamGrads::zeros_like(&params);
    let mut metrics = Vec::with_capacity(total_steps);
    let shuffle_seed = cfg.seed ^ SHUFFLE_SEED_SALT;
    info!(
        "training {} -> {}: {} steps, {} trainable parameters",
        source.domain_tag(),
        target.domain_tag(),
        total_steps,
        crate::network::count_trainable(&params)
    );

    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let epoch_start = metrics.len();
        for pair in paired_indices(source.len(), target.len(), cfg.batch_size, shuffle_seed, epoch as u64)? {
            let ys: Vec<usize> = pair.source.iter().map(|&i| source_labels[i]).collect();
            let joint = joint_batch(
                source.gather_rows(&pair.source).view(),
                target.gather_rows(&pair.target).view(),
            );
            let obj = objective(&params, joint.view(), &ys, &cfg.kernel, None, cfg.lambda, cfg.estimator, step)?;
            let grads = objective_grads(&params, &obj)?;
            let lr = lr_at(step, total_steps, cfg);
            params.update_running_stats(&obj.trace);
            sgd_step(&mut params, &mut velocity, &grads, lr, cfg.momentum, cfg.weight_decay);
            if params.trainable_slices_mut().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
                return Err(EudaError::Divergence {
                    step,
                    detail: "parameter update produced non-finite values".into(),
                });
            }

            let b = obj.breakdown;
            debug!("epoch {epoch} step {step}: loss {:.5} (ce {:.5}, mmd {:.5})", b.total, b.ce, b.mmd);
            metrics.push(MetricsRecord {
                epoch,
                step,
                lr,
                loss_total: b.total,
                loss_ce: b.ce,
                loss_mmd: b.mmd,
                source_batch_accuracy: obj.source_correct as f64 / ys.len() as f64,
                target_accuracy: None,
            });
            step += 1;
        }
        if target.is_labeled() {
            let acc = evaluate(&params, target)?;
            if let Some(last) = metrics.last_mut() {
                last.target_accuracy = Some(acc);
            }
            info!("epoch {epoch}: target accuracy {acc:.4}");
        }
        on_epoch(&EpochReport {
            epoch,
            params: &params,
            records: &metrics[epoch_start..],
        })?;
    }
    Ok(TrainOutcome { params, metrics })
}

/// Predicted class per row using running normalization statistics.
pub fn predict(params: &ModelParams, ds: &DomainDataset) -> Result<Vec<usize>> {
    params.check_input_dim(ds.dim())?;
    let mut out = Vec::with_capacity(ds.len());
    let rows: Vec<usize> = (0..ds.len()).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let x = ds.gather_rows(chunk);
        let trace = forward_with(params, x.view(), NormMode::Running)?;
        out.extend(argmax_rows(&trace.logits));
    }
    Ok(out)
}

/// Fraction of rows whose argmax logit equals the label.
pub fn evaluate(params: &ModelParams, ds: &DomainDataset) -> Result<f64> {
    let predictions = predict(params, ds)?;
    let labels = ds
        .evaluation_labels()
        .ok_or_else(|| EudaError::Contract("evaluation needs a labeled dataset".into()))?;
    let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / ds.len() as f64)
}
