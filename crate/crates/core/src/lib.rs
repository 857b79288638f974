//! Unsupervised domain adaptation over frozen feature vectors.
//!
//! A fully connected bottleneck and a linear classifier are trained on
//! labeled source features and unlabeled target features with a combined
//! objective `λ·CE + (1 − λ)·MMD²`, where the MMD term is taken between the
//! bottleneck outputs of the two domains.
//!
//! Module map:
//!
//! * [`feature_store`] - EUDF/CSV codecs, synthetic shifted-Gaussian domains, paired batching
//! * [`network`] - input normalization, bottleneck, classifier, backprop, checkpoints
//! * [`kernels`] - kernels, median heuristic, MMD² estimators and their gradients
//! * [`loss`] - softmax cross-entropy and the combined alignment loss
//! * [`trainer`] - the optimization loop, LR schedule, evaluation, gradient check

pub mod error;
pub mod feature_store;
pub mod kernels;
pub mod loss;
pub mod network;
pub mod trainer;

pub use error::{ErrorClass, EudaError, Result};
pub use feature_store::{BatchPair, DomainDataset, FileFormat, SynthSpec};
pub use kernels::{Estimator, KernelSpec};
pub use loss::LossBreakdown;
pub use network::{BottleneckConfig, ModelParams, ParamGrads};
pub use trainer::{MetricsRecord, TrainConfig};
