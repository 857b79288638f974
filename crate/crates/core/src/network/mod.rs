//! Input normalization, fully connected bottleneck and linear classifier.
//!
//! ```text
//! X ──standardize──▶ gain⊙x̂+bias ──[affine→ReLU]×L──▶ Z ──affine──▶ logits
//! ```
//!
//! Standardization uses batch statistics during training and running
//! statistics (exponential average, decay 0.9) at evaluation.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{EudaError, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint};

/// Added to the per-dimension standard deviation before dividing.
pub const NORM_EPS: f64 = 1e-5;
/// Decay of the running normalization statistics.
pub const RUNNING_DECAY: f64 = 0.9;

/// Output widths of the bottleneck layers, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BottleneckConfig {
    hidden_sizes: Vec<usize>,
}

impl BottleneckConfig {
    pub fn new(hidden_sizes: Vec<usize>) -> Result<Self> {
        if hidden_sizes.is_empty() {
            return Err(EudaError::config("bottleneck", "needs at least one layer"));
        }
        if hidden_sizes.contains(&0) {
            return Err(EudaError::config("bottleneck", "layer widths must be positive"));
        }
        Ok(Self { hidden_sizes })
    }

    /// The `S`, `B`, `L` and `H` presets.
    pub fn preset(name: &str) -> Option<Self> {
        let sizes: &[usize] = match name {
            "S" => &[256],
            "B" => &[2048, 1024, 512, 256],
            "L" => &[4096, 2048, 1024, 512, 256],
            "H" => &[8192, 4096, 2048, 1024, 512, 256],
            _ => return None,
        };
        Some(Self {
            hidden_sizes: sizes.to_vec(),
        })
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.hidden_sizes
    }

    /// Width of the bottleneck output fed to both the classifier and MMD.
    pub fn embedding_width(&self) -> usize {
        *self.hidden_sizes.last().expect("non-empty by construction")
    }
}

impl FromStr for BottleneckConfig {
    type Err = EudaError;

    /// Parses a preset letter or `custom:a,b,c`.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(p) = Self::preset(s) {
            return Ok(p);
        }
        let list = s.strip_prefix("custom:").ok_or_else(|| {
            EudaError::config("bottleneck", format!("`{s}` is not S, B, L, H or custom:a,b,..."))
        })?;
        let sizes = list
            .split(',')
            .map(|w| w.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| EudaError::config("bottleneck", format!("bad layer list `{list}`")))?;
        Self::new(sizes)
    }
}

impl fmt::Display for BottleneckConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for name in ["S", "B", "L", "H"] {
            if Self::preset(name).as_ref() == Some(self) {
                return f.write_str(name);
            }
        }
        let list: Vec<String> = self.hidden_sizes.iter().map(|w| w.to_string()).collect();
        write!(f, "custom:{}", list.join(","))
    }
}

/// An affine layer `y = x Wᵀ + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

/// Trainable per-dimension affine over standardized inputs, plus the running
/// statistics used at evaluation (not trainable).
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_std: Array1<f64>,
}

/// Full trainable state of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub input_norm: InputNorm,
    pub layers: Vec<Dense>,
    pub classifier: Dense,
}

/// Dimensions of a model, enough to count parameters without allocating them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelShape {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub num_classes: usize,
}

impl ModelShape {
    pub fn new(input_dim: usize, config: &BottleneckConfig, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_sizes: config.hidden_sizes().to_vec(),
            num_classes,
        }
    }

    /// `(name, count)` per parameter group: input norm, each layer, classifier.
    pub fn breakdown(&self) -> Vec<(String, usize)> {
        let mut out = vec![("input_norm".to_string(), 2 * self.input_dim)];
        let mut fan_in = self.input_dim;
        for (k, &w) in self.hidden_sizes.iter().enumerate() {
            out.push((format!("layer{}", k + 1), w * fan_in + w));
            fan_in = w;
        }
        out.push(("classifier".to_string(), self.num_classes * fan_in + self.num_classes));
        out
    }

    pub fn count_trainable(&self) -> usize {
        self.breakdown().iter().map(|(_, n)| n).sum()
    }
}

/// Initializes a model: weights `U(−√(6/fan_in), √(6/fan_in))`, zero biases,
/// unit gain and zero shift on the input norm.
pub fn build_model(
    input_dim: usize,
    config: &BottleneckConfig,
    num_classes: usize,
    seed: u64,
) -> Result<ModelParams> {
    if input_dim == 0 {
        return Err(EudaError::Contract("input dimension must be positive".into()));
    }
    if num_classes < 2 {
        return Err(EudaError::Contract(format!("need at least 2 classes, got {num_classes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = |out: usize, inp: usize| {
        let bound = (6.0 / inp as f64).sqrt();
        Dense {
            weight: Array2::from_shape_simple_fn((out, inp), || rng.random_range(-bound..bound)),
            bias: Array1::zeros(out),
        }
    };
    let mut layers = Vec::with_capacity(config.hidden_sizes().len());
    let mut fan_in = input_dim;
    for &w in config.hidden_sizes() {
        layers.push(init(w, fan_in));
        fan_in = w;
    }
    let classifier = init(num_classes, fan_in);
    Ok(ModelParams {
        input_norm: InputNorm {
            gain: Array1::ones(input_dim),
            bias: Array1::zeros(input_dim),
            running_mean: Array1::zeros(input_dim),
            running_std: Array1::ones(input_dim),
        },
        layers,
        classifier,
    })
}

/// Exact number of trainable scalars (running statistics excluded).
pub fn count_trainable(params: &ModelParams) -> usize {
    params.shape().count_trainable()
}

/// Where standardization statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Batch,
    Running,
}

/// Activations cached by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub batch_mean: Array1<f64>,
    pub batch_std: Array1<f64>,
    /// Standardized inputs `x̂`, before gain and bias.
    pub standardized: Array2<f64>,
    /// `gain ⊙ x̂ + bias`, the input of the first bottleneck layer.
    pub normalized: Array2<f64>,
    pub pre_activations: Vec<Array2<f64>>,
    /// Post-ReLU outputs per layer; the last one is `Z`.
    pub activations: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

impl ForwardTrace {
    pub fn embedding(&self) -> &Array2<f64> {
        self.activations.last().expect("at least one layer")
    }

    pub fn batch_len(&self) -> usize {
        self.logits.nrows()
    }
}

/// Gradients congruent with the trainable part of [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub input_gain: Array1<f64>,
    pub input_bias: Array1<f64>,
    pub layers: Vec<Dense>,
    pub classifier: Dense,
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let d = params.input_dim();
        Self {
            input_gain: Array1::zeros(d),
            input_bias: Array1::zeros(d),
            layers: params
                .layers
                .iter()
                .map(|l| Dense::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            classifier: Dense::zeros(params.classifier.out_dim(), params.classifier.in_dim()),
        }
    }

    /// Flat views in declaration order: gain, bias, each layer (W, b), classifier (W, b).
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.input_gain.as_slice().expect("standard layout"),
            self.input_bias.as_slice().expect("standard layout"),
        ];
        for l in self.layers.iter().chain(std::iter::once(&self.classifier)) {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.input_gain.as_slice_mut().expect("standard layout"),
            self.input_bias.as_slice_mut().expect("standard layout"),
        ];
        for l in self.layers.iter_mut().chain(std::iter::once(&mut self.classifier)) {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl ModelParams {
    pub fn input_dim(&self) -> usize {
        self.input_norm.gain.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim()
    }

    pub fn embedding_width(&self) -> usize {
        self.classifier.in_dim()
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            input_dim: self.input_dim(),
            hidden_sizes: self.layers.iter().map(Dense::out_dim).collect(),
            num_classes: self.num_classes(),
        }
    }

    pub fn bottleneck(&self) -> BottleneckConfig {
        BottleneckConfig {
            hidden_sizes: self.layers.iter().map(Dense::out_dim).collect(),
        }
    }

    /// Checks the shape chain and finiteness of every tensor.
    pub fn validate(&self) -> Result<()> {
        let d = self.input_dim();
        let n = &self.input_norm;
        if d == 0 || n.bias.len() != d || n.running_mean.len() != d || n.running_std.len() != d {
            return Err(EudaError::Shape("input norm vectors disagree in length".into()));
        }
        if self.layers.is_empty() {
            return Err(EudaError::Shape("model has no bottleneck layer".into()));
        }
        let mut fan_in = d;
        for (k, l) in self.layers.iter().chain(std::iter::once(&self.classifier)).enumerate() {
            if l.in_dim() != fan_in || l.bias.len() != l.out_dim() {
                return Err(EudaError::Shape(format!(
                    "layer {k} is {}x{} with bias {}, expected input width {fan_in}",
                    l.out_dim(),
                    l.in_dim(),
                    l.bias.len()
                )));
            }
            fan_in = l.out_dim();
        }
        let finite = n.gain.iter().chain(n.bias.iter()).chain(n.running_mean.iter()).chain(n.running_std.iter())
            .chain(self.layers.iter().chain(std::iter::once(&self.classifier)).flat_map(|l| l.weight.iter().chain(l.bias.iter())))
            .all(|v| v.is_finite());
        if !finite {
            return Err(EudaError::Data("model contains non-finite parameters".into()));
        }
        Ok(())
    }

    /// Errors unless the model consumes `input_dim`-wide features.
    pub fn check_input_dim(&self, input_dim: usize) -> Result<()> {
        if self.input_dim() != input_dim {
            return Err(EudaError::Shape(format!(
                "model expects {}-dimensional features, got {input_dim}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Flat mutable views in the same order as [`ParamGrads::slices`].
    pub fn trainable_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.input_norm.gain.as_slice_mut().expect("standard layout"),
            self.input_norm.bias.as_slice_mut().expect("standard layout"),
        ];
        for l in self.layers.iter_mut().chain(std::iter::once(&mut self.classifier)) {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Blends the batch statistics of `trace` into the running statistics.
    pub fn update_running_stats(&mut self, trace: &ForwardTrace) {
        let n = &mut self.input_norm;
        n.running_mean = &n.running_mean * RUNNING_DECAY + &trace.batch_mean * (1.0 - RUNNING_DECAY);
        n.running_std = &n.running_std * RUNNING_DECAY + &trace.batch_std * (1.0 - RUNNING_DECAY);
    }
}

// NaN passes through so a diverged model is still detectable downstream.
fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| if v < 0.0 { 0.0 } else { v })
}

/// Forward pass with batch statistics.
pub fn forward(params: &ModelParams, x: ArrayView2<f64>) -> Result<ForwardTrace> {
    forward_with(params, x, NormMode::Batch)
}

/// Forward pass; `mode` selects batch or running normalization statistics.
pub fn forward_with(params: &ModelParams, x: ArrayView2<f64>, mode: NormMode) -> Result<ForwardTrace> {
    let (b, d) = x.dim();
    params.check_input_dim(d)?;
    if b == 0 {
        return Err(EudaError::Contract("empty batch".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(EudaError::Contract("non-finite input features".into()));
    }
    let norm = &params.input_norm;
    let (mean, std) = match mode {
        NormMode::Batch => {
            let mean = x.mean_axis(Axis(0)).expect("b > 0");
            let var = x.map_axis(Axis(0), |col| {
                let mu = col.mean().expect("b > 0");
                col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / b as f64
            });
            (mean, var.mapv(f64::sqrt))
        }
        NormMode::Running => (norm.running_mean.clone(), norm.running_std.clone()),
    };
    let standardized = (&x - &mean) / &(&std + NORM_EPS);
    let normalized = &standardized * &norm.gain + &norm.bias;

    let mut pre_activations = Vec::with_capacity(params.layers.len());
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let input = activations.last().unwrap_or(&normalized);
        let a = layer.apply(input);
        activations.push(relu(&a));
        pre_activations.push(a);
    }
    let logits = params.classifier.apply(activations.last().expect("validated"));
    Ok(ForwardTrace {
        batch_mean: mean,
        batch_std: std,
        standardized,
        normalized,
        pre_activations,
        activations,
        logits,
    })
}

/// Reverse-mode gradients of `Σ logits⊙grad_logits + Σ Z⊙grad_z` with respect
/// to every trainable parameter.
///
/// The inputs are frozen features, so the batch statistics are constants with
/// respect to the parameters and contribute no extra terms.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    grad_logits: ArrayView2<f64>,
    grad_z: ArrayView2<f64>,
) -> Result<ParamGrads> {
    let b = trace.batch_len();
    if trace.activations.len() != params.layers.len()
        || trace.normalized.ncols() != params.input_dim()
        || trace.logits.ncols() != params.num_classes()
        || trace.embedding().ncols() != params.embedding_width()
    {
        return Err(EudaError::Contract("trace does not match these parameters".into()));
    }
    if grad_logits.dim() != (b, params.num_classes()) {
        return Err(EudaError::Contract(format!(
            "grad_logits is {:?}, expected ({b}, {})",
            grad_logits.dim(),
            params.num_classes()
        )));
    }
    if grad_z.dim() != (b, params.embedding_width()) {
        return Err(EudaError::Contract(format!(
            "grad_z is {:?}, expected ({b}, {})",
            grad_z.dim(),
            params.embedding_width()
        )));
    }

    let mut grads = ParamGrads::zeros_like(params);
    let z = trace.embedding();
    grads.classifier.weight = grad_logits.t().dot(z);
    grads.classifier.bias = grad_logits.sum_axis(Axis(0));
    let mut upstream = grad_logits.dot(&params.classifier.weight) + grad_z;

    for k in (0..params.layers.len()).rev() {
        let mut da = upstream;
        da.zip_mut_with(&trace.pre_activations[k], |g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
        let input = if k == 0 { &trace.normalized } else { &trace.activations[k - 1] };
        grads.layers[k].weight = da.t().dot(input);
        grads.layers[k].bias = da.sum_axis(Axis(0));
        upstream = da.dot(&params.layers[k].weight);
    }

    grads.input_gain = (&upstream * &trace.standardized).sum_axis(Axis(0));
    grads.input_bias = upstream.sum_axis(Axis(0));
    Ok(grads)
}

/// Row-wise argmax; ties resolve to the lowest class index.
pub fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
