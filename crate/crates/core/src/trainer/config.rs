use serde::{Deserialize, Serialize};

use crate::error::{EudaError, Result};
use crate::kernels::{BandwidthMode, Estimator, KernelFamily, KernelSpec, DEFAULT_MEDIAN_MULTIPLIERS};
use crate::network::BottleneckConfig;

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// `lr0 · (1 + gamma·p)^(−alpha)` with training progress `p ∈ [0, 1]`.
    InvDecay { gamma: f64, alpha: f64 },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::InvDecay {
            gamma: 10.0,
            alpha: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the CE term; MMD gets `1 − lambda`.
    pub lambda: f64,
    pub lr0: f64,
    pub schedule: Schedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub kernel: KernelSpec,
    pub bottleneck: BottleneckConfig,
    pub estimator: Estimator,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.7,
            lr0: 3e-2,
            schedule: Schedule::default(),
            momentum: 0.9,
            weight_decay: 0.0,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            kernel: KernelSpec::default(),
            bottleneck: BottleneckConfig::preset("B").expect("preset exists"),
            estimator: Estimator::Biased,
        }
    }
}

fn finite_in(field: &str, v: f64, ok: bool, expect: &str) -> Result<()> {
    if v.is_finite() && ok {
        Ok(())
    } else {
        Err(EudaError::config(field, format!("{v} is not {expect}")))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        finite_in("lambda", self.lambda, (0.0..=1.0).contains(&self.lambda), "in [0, 1]")?;
        finite_in("lr0", self.lr0, self.lr0 > 0.0, "positive")?;
        let Schedule::InvDecay { gamma, alpha } = self.schedule;
        finite_in("gamma", gamma, gamma >= 0.0, "non-negative")?;
        finite_in("alpha", alpha, alpha >= 0.0, "non-negative")?;
        finite_in("momentum", self.momentum, (0.0..1.0).contains(&self.momentum), "in [0, 1)")?;
        finite_in("weight_decay", self.weight_decay, self.weight_decay >= 0.0, "non-negative")?;
        if self.epochs == 0 {
            return Err(EudaError::config("epochs", "must be positive"));
        }
        if self.batch_size < 2 {
            return Err(EudaError::config("batch_size", "must be at least 2"));
        }
        self.kernel.validate()?;
        Ok(())
    }

    /// Overlays the keys present in `flat` on top of `self`.
    pub fn apply(mut self, flat: &FlatConfig) -> Result<Self> {
        if let Some(v) = flat.lambda {
            self.lambda = v;
        }
        if let Some(v) = flat.lr0 {
            self.lr0 = v;
        }
        let Schedule::InvDecay { mut gamma, mut alpha } = self.schedule;
        gamma = flat.gamma.unwrap_or(gamma);
        alpha = flat.alpha.unwrap_or(alpha);
        self.schedule = Schedule::InvDecay { gamma, alpha };
        if let Some(v) = flat.momentum {
            self.momentum = v;
        }
        if let Some(v) = flat.weight_decay {
            self.weight_decay = v;
        }
        if let Some(v) = flat.epochs {
            self.epochs = v;
        }
        if let Some(v) = flat.batch_size {
            self.batch_size = v;
        }
        if let Some(v) = flat.seed {
            self.seed = v;
        }
        if let Some(v) = flat.estimator {
            self.estimator = v;
        }
        if let Some(b) = &flat.bottleneck {
            self.bottleneck = b.parse()?;
        }
        if flat.kernel.is_some() || flat.bandwidths.is_some() || flat.bandwidth_multipliers.is_some() {
            let family = match flat.kernel.as_deref() {
                None => self.kernel.family,
                Some("rbf") => KernelFamily::RbfMulti,
                Some("linear") => KernelFamily::Linear,
                Some(other) => {
                    return Err(EudaError::config("kernel", format!("`{other}` is not rbf or linear")))
                }
            };
            if flat.bandwidths.is_some() && flat.bandwidth_multipliers.is_some() {
                return Err(EudaError::config(
                    "bandwidths",
                    "give either bandwidths or bandwidth_multipliers, not both",
                ));
            }
            let bandwidth = match (&flat.bandwidths, &flat.bandwidth_multipliers) {
                (Some(b), _) => BandwidthMode::Explicit(b.clone()),
                (_, Some(m)) => BandwidthMode::MedianTimes(m.clone()),
                _ if family == self.kernel.family => self.kernel.bandwidth.clone(),
                _ => BandwidthMode::MedianTimes(DEFAULT_MEDIAN_MULTIPLIERS.to_vec()),
            };
            self.kernel = KernelSpec { family, bandwidth };
        }
        self.validate()?;
        Ok(self)
    }

    /// Fully resolved flat representation, suitable for manifests.
    pub fn to_flat(&self) -> FlatConfig {
        let Schedule::InvDecay { gamma, alpha } = self.schedule;
        let (kernel, bandwidths, multipliers) = match (&self.kernel.family, &self.kernel.bandwidth) {
            (KernelFamily::Linear, _) => ("linear", None, None),
            (KernelFamily::RbfMulti, BandwidthMode::Explicit(b)) => ("rbf", Some(b.clone()), None),
            (KernelFamily::RbfMulti, BandwidthMode::MedianTimes(m)) => ("rbf", None, Some(m.clone())),
        };
        FlatConfig {
            lambda: Some(self.lambda),
            lr0: Some(self.lr0),
            gamma: Some(gamma),
            alpha: Some(alpha),
            momentum: Some(self.momentum),
            weight_decay: Some(self.weight_decay),
            epochs: Some(self.epochs),
            batch_size: Some(self.batch_size),
            seed: Some(self.seed),
            kernel: Some(kernel.to_string()),
            bandwidths,
            bandwidth_multipliers: multipliers,
            bottleneck: Some(self.bottleneck.to_string()),
            estimator: Some(self.estimator),
        }
    }
}

/// JSON config file: flat snake_case keys, every key optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// `rbf` or `linear`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<String>,
    /// Explicit RBF bandwidths σ.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidths: Option<Vec<f64>>,
    /// Multipliers on the per-batch median heuristic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth_multipliers: Option<Vec<f64>>,
    /// `S`, `B`, `L`, `H` or `custom:a,b,c`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bottleneck: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimator: Option<Estimator>,
}

impl FlatConfig {
    /// Keys set in `other` win.
    pub fn merged_with(mut self, other: &FlatConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f.clone(); } )* };
        }
        take!(lambda, lr0, gamma, alpha, momentum, weight_decay, epochs, batch_size, seed,
              kernel, bandwidths, bandwidth_multipliers, bottleneck, estimator);
        self
    }
}
