//! Source/target feature datasets: storage, codecs, synthesis and batching.

mod batches;
mod format;
mod synth;

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{EudaError, Result};

pub use batches::{paired_batches, paired_indices, pairs_per_epoch, IndexPair};
pub use format::{load_csv, load_dataset, save_dataset, FileFormat};
pub use synth::{shift_direction, synth_shifted_gaussians, SynthSpec};

/// An `n × d` matrix of frozen embeddings with optional class labels.
///
/// Features are stored as `f32` (the on-disk precision) and widened to
/// `f64` whenever rows are handed to the network. Contents are immutable
/// after construction.
///
/// Label reads are instrumented. [`DomainDataset::labels`] is the training
/// accessor and bumps [`DomainDataset::label_reads`]; evaluation goes through
/// a separate crate-private accessor counted in
/// [`DomainDataset::evaluation_label_reads`]. The trainer must never touch
/// target labels through the first path.
#[derive(Debug)]
pub struct DomainDataset {
    features: Array2<f32>,
    labels: Option<Vec<usize>>,
    num_classes: Option<usize>,
    domain_tag: String,
    label_reads: AtomicUsize,
    evaluation_label_reads: AtomicUsize,
}

impl DomainDataset {
    pub fn new(
        features: Array2<f32>,
        labels: Option<Vec<usize>>,
        num_classes: Option<usize>,
        domain_tag: impl Into<String>,
    ) -> Result<Self> {
        let domain_tag = domain_tag.into();
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(EudaError::Data(format!(
                "dataset must have at least one row and one column, got {n}x{d}"
            )));
        }
        if let Some((idx, v)) = features.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(EudaError::Data(format!(
                "non-finite feature {v} at row {}, column {}",
                idx / d,
                idx % d
            )));
        }
        if domain_tag.len() > u16::MAX as usize {
            return Err(EudaError::Contract("domain tag longer than 65535 bytes".into()));
        }
        match (&labels, num_classes) {
            (Some(labels), Some(c)) => {
                if labels.len() != n {
                    return Err(EudaError::Consistency(format!(
                        "{} labels for {n} rows",
                        labels.len()
                    )));
                }
                if c == 0 {
                    return Err(EudaError::Consistency("labeled dataset with zero classes".into()));
                }
                if let Some((row, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= c) {
                    return Err(EudaError::Consistency(format!(
                        "label {y} at row {row} is not below the class count {c}"
                    )));
                }
            }
            (Some(_), None) => {
                return Err(EudaError::Consistency("labels present without a class count".into()))
            }
            (None, _) => {}
        }
        Ok(Self {
            features,
            num_classes: labels.as_ref().and(num_classes),
            labels,
            domain_tag,
            label_reads: AtomicUsize::new(0),
            evaluation_label_reads: AtomicUsize::new(0),
        })
    }

    /// Builds a dataset from `f64` values, rounding each entry to `f32`.
    pub fn from_f64(
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
        num_classes: Option<usize>,
        domain_tag: impl Into<String>,
    ) -> Result<Self> {
        Self::new(features.mapv(|v| v as f32), labels, num_classes, domain_tag)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f32> {
        self.features.view()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    pub fn domain_tag(&self) -> &str {
        &self.domain_tag
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    /// Training-path label accessor. Every call is counted.
    pub fn labels(&self) -> Option<&[usize]> {
        self.label_reads.fetch_add(1, Ordering::Relaxed);
        self.labels.as_deref()
    }

    /// Number of calls made to [`DomainDataset::labels`].
    pub fn label_reads(&self) -> usize {
        self.label_reads.load(Ordering::Relaxed)
    }

    /// Number of label reads made by evaluation.
    pub fn evaluation_label_reads(&self) -> usize {
        self.evaluation_label_reads.load(Ordering::Relaxed)
    }

    pub(crate) fn evaluation_labels(&self) -> Option<&[usize]> {
        self.evaluation_label_reads.fetch_add(1, Ordering::Relaxed);
        self.labels.as_deref()
    }

    /// Label slice for codecs; not instrumented.
    pub(crate) fn raw_labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Copies the given rows into a fresh `f64` matrix, preserving order.
    pub fn gather_rows(&self, rows: &[usize]) -> Array2<f64> {
        self.features.select(Axis(0), rows).mapv(f64::from)
    }

    /// The full feature matrix widened to `f64`.
    pub fn features_f64(&self) -> Array2<f64> {
        self.features.mapv(f64::from)
    }
}

impl Clone for DomainDataset {
    /// Clones the data; read counters start from zero on the copy.
    fn clone(&self) -> Self {
        Self {
            features: self.features.clone(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            domain_tag: self.domain_tag.clone(),
            label_reads: AtomicUsize::new(0),
            evaluation_label_reads: AtomicUsize::new(0),
        }
    }
}

impl PartialEq for DomainDataset {
    fn eq(&self, other: &Self) -> bool {
        self.features == other.features
            && self.labels == other.labels
            && self.num_classes == other.num_classes
            && self.domain_tag == other.domain_tag
    }
}

/// One optimization step's worth of data: a labeled source batch and an
/// unlabeled target batch of the same width.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPair {
    pub source_features: Array2<f64>,
    pub source_labels: Vec<usize>,
    pub target_features: Array2<f64>,
}

impl BatchPair {
    pub fn new(
        source_features: Array2<f64>,
        source_labels: Vec<usize>,
        target_features: Array2<f64>,
    ) -> Result<Self> {
        let (bs, ds) = source_features.dim();
        let (bt, dt) = target_features.dim();
        if bs < 2 || bt < 2 {
            return Err(EudaError::Contract(format!(
                "batch pair needs at least 2 rows per side, got {bs} source and {bt} target"
            )));
        }
        if ds != dt {
            return Err(EudaError::Shape(format!(
                "source width {ds} differs from target width {dt}"
            )));
        }
        if source_labels.len() != bs {
            return Err(EudaError::Contract(format!(
                "{} labels for {bs} source rows",
                source_labels.len()
            )));
        }
        Ok(Self {
            source_features,
            source_labels,
            target_features,
        })
    }

    pub fn source_len(&self) -> usize {
        self.source_features.nrows()
    }

    pub fn target_len(&self) -> usize {
        self.target_features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.source_features.ncols()
    }
}
