//! Kernels and squared maximum mean discrepancy between two samples.
//!
//! For samples `X` (n rows) and `Y` (m rows) the biased estimator is
//!
//! ```text
//! MMD²_b = 1/n² ΣΣ k(xᵢ,xⱼ) + 1/m² ΣΣ k(yᵢ,yⱼ) − 2/(nm) ΣΣ k(xᵢ,yⱼ)
//! ```
//!
//! and the unbiased estimator drops the diagonal of the two within-sample
//! sums, normalizing them by `n(n−1)` and `m(m−1)`.
//!
//! Block sums are accumulated in sorted order so that both estimators are
//! exactly symmetric in their arguments and invariant to row order.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{EudaError, Result};

/// Multipliers applied to the median heuristic by the default RBF kernel.
pub const DEFAULT_MEDIAN_MULTIPLIERS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Biased,
    Unbiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    /// Sum of Gaussian kernels `exp(−‖a−b‖²/(2σ²))` over a list of bandwidths.
    RbfMulti,
    /// `k(a, b) = a·b`.
    Linear,
}

/// How RBF bandwidths are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthMode {
    /// Fixed bandwidths σ.
    Explicit(Vec<f64>),
    /// Per call, `σ² = multiplier × median_heuristic(X, Y)` for each multiplier.
    MedianTimes(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: BandwidthMode,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::rbf_median(DEFAULT_MEDIAN_MULTIPLIERS.to_vec())
    }
}

impl KernelSpec {
    pub fn linear() -> Self {
        Self {
            family: KernelFamily::Linear,
            bandwidth: BandwidthMode::Explicit(Vec::new()),
        }
    }

    pub fn rbf(bandwidths: Vec<f64>) -> Self {
        Self {
            family: KernelFamily::RbfMulti,
            bandwidth: BandwidthMode::Explicit(bandwidths),
        }
    }

    pub fn rbf_median(multipliers: Vec<f64>) -> Self {
        Self {
            family: KernelFamily::RbfMulti,
            bandwidth: BandwidthMode::MedianTimes(multipliers),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.family == KernelFamily::Linear {
            return Ok(());
        }
        let values = match &self.bandwidth {
            BandwidthMode::Explicit(v) | BandwidthMode::MedianTimes(v) => v,
        };
        if values.is_empty() {
            return Err(EudaError::config("kernel", "rbf kernel needs at least one bandwidth"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(EudaError::config("kernel", "bandwidths must be positive and finite"));
        }
        Ok(())
    }

    /// Fixes the bandwidths for this pair of samples.
    pub fn resolve(&self, source: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<ResolvedKernel> {
        self.validate().map_err(|e| EudaError::Contract(e.to_string()))?;
        Ok(match (&self.family, &self.bandwidth) {
            (KernelFamily::Linear, _) => ResolvedKernel::Linear,
            (KernelFamily::RbfMulti, BandwidthMode::Explicit(sigmas)) => {
                ResolvedKernel::from_sigma_sq(sigmas.iter().map(|s| s * s))
            }
            (KernelFamily::RbfMulti, BandwidthMode::MedianTimes(mults)) => {
                let median = median_heuristic(source, target);
                ResolvedKernel::from_sigma_sq(mults.iter().map(|m| m * median))
            }
        })
    }
}

/// A kernel with concrete bandwidths.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedKernel {
    Linear,
    /// Stored as `σ²` per bandwidth.
    Rbf { sigma_sq: Vec<f64> },
}

impl ResolvedKernel {
    fn from_sigma_sq(values: impl Iterator<Item = f64>) -> Self {
        ResolvedKernel::Rbf {
            sigma_sq: values.collect(),
        }
    }

    pub fn eval(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match self {
            ResolvedKernel::Linear => a.dot(&b),
            ResolvedKernel::Rbf { sigma_sq } => {
                let d2 = sq_dist(a, b);
                sigma_sq.iter().map(|s2| (-d2 / (2.0 * s2)).exp()).sum()
            }
        }
    }

    /// Adds `scale · ∂k(a, b)/∂a` into `out`.
    fn accumulate_grad(&self, a: ArrayView1<f64>, b: ArrayView1<f64>, scale: f64, out: &mut [f64]) {
        match self {
            ResolvedKernel::Linear => {
                for (o, bv) in out.iter_mut().zip(b.iter()) {
                    *o += scale * bv;
                }
            }
            ResolvedKernel::Rbf { sigma_sq } => {
                let d2 = sq_dist(a, b);
                let coef: f64 = sigma_sq.iter().map(|s2| (-d2 / (2.0 * s2)).exp() / s2).sum();
                for ((o, av), bv) in out.iter_mut().zip(a.iter()).zip(b.iter()) {
                    *o -= scale * coef * (av - bv);
                }
            }
        }
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn ordered_sum(mut values: Vec<f64>) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

/// Median of all pairwise squared distances in the pooled sample; `1.0` when
/// that median is zero or there are fewer than two points.
pub fn median_heuristic(source: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
    let rows: Vec<ArrayView1<f64>> = source.rows().into_iter().chain(target.rows()).collect();
    let mut d2 = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d2.push(sq_dist(rows[i], rows[j]));
        }
    }
    if d2.is_empty() {
        return 1.0;
    }
    d2.sort_unstable_by(f64::total_cmp);
    let mid = d2.len() / 2;
    let median = if d2.len() % 2 == 1 {
        d2[mid]
    } else {
        0.5 * (d2[mid - 1] + d2[mid])
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

fn check_inputs(source: ArrayView2<f64>, target: ArrayView2<f64>, min_rows: usize) -> Result<()> {
    if source.nrows() < min_rows || target.nrows() < min_rows {
        return Err(EudaError::Contract(format!(
            "MMD needs at least {min_rows} rows per sample, got {} and {}",
            source.nrows(),
            target.nrows()
        )));
    }
    if source.ncols() != target.ncols() {
        return Err(EudaError::Shape(format!(
            "sample widths differ: {} vs {}",
            source.ncols(),
            target.ncols()
        )));
    }
    if source.iter().chain(target.iter()).any(|v| !v.is_finite()) {
        return Err(EudaError::Contract("non-finite MMD input".into()));
    }
    Ok(())
}

fn block_sum(a: ArrayView2<f64>, b: ArrayView2<f64>, k: &ResolvedKernel, skip_diagonal: bool) -> f64 {
    let mut values = Vec::with_capacity(a.nrows() * b.nrows());
    for (i, ra) in a.rows().into_iter().enumerate() {
        for (j, rb) in b.rows().into_iter().enumerate() {
            if !(skip_diagonal && i == j) {
                values.push(k.eval(ra, rb));
            }
        }
    }
    ordered_sum(values)
}

/// Raw estimate (no clamping) with resolved bandwidths.
pub fn mmd2_estimate(
    source: ArrayView2<f64>,
    target: ArrayView2<f64>,
    kernel: &ResolvedKernel,
    estimator: Estimator,
) -> Result<f64> {
    let min_rows = match estimator {
        Estimator::Biased => 1,
        Estimator::Unbiased => 2,
    };
    check_inputs(source, target, min_rows)?;
    let (n, m) = (source.nrows() as f64, target.nrows() as f64);
    let (skip, wn, wm) = match estimator {
        Estimator::Biased => (false, n * n, m * m),
        Estimator::Unbiased => (true, n * (n - 1.0), m * (m - 1.0)),
    };
    let within = block_sum(source, source, kernel, skip) / wn + block_sum(target, target, kernel, skip) / wm;
    let cross = block_sum(source, target, kernel, false);
    Ok(within - 2.0 * cross / (n * m))
}

/// Biased (V-statistic) MMD², clamped at zero.
pub fn mmd2_biased(source: ArrayView2<f64>, target: ArrayView2<f64>, kernel: &KernelSpec) -> Result<f64> {
    check_inputs(source, target, 1)?;
    let k = kernel.resolve(source, target)?;
    Ok(mmd2_estimate(source, target, &k, Estimator::Biased)?.max(0.0))
}

/// Unbiased (U-statistic) MMD²; may be negative.
pub fn mmd2_unbiased(source: ArrayView2<f64>, target: ArrayView2<f64>, kernel: &KernelSpec) -> Result<f64> {
    check_inputs(source, target, 2)?;
    let k = kernel.resolve(source, target)?;
    mmd2_estimate(source, target, &k, Estimator::Unbiased)
}

/// Value and gradient of MMD² with respect to both samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MmdGrad {
    pub value: f64,
    pub d_source: Array2<f64>,
    pub d_target: Array2<f64>,
}

/// Gradient of the biased estimator; bandwidths are resolved from the inputs
/// and then held constant.
pub fn mmd2_grad(source: ArrayView2<f64>, target: ArrayView2<f64>, kernel: &KernelSpec) -> Result<MmdGrad> {
    check_inputs(source, target, 1)?;
    let k = kernel.resolve(source, target)?;
    mmd2_grad_with(source, target, &k, Estimator::Biased)
}

/// Value and analytic gradient for either estimator with fixed bandwidths.
/// The biased value is clamped at zero; the gradient is not affected.
pub fn mmd2_grad_with(
    source: ArrayView2<f64>,
    target: ArrayView2<f64>,
    kernel: &ResolvedKernel,
    estimator: Estimator,
) -> Result<MmdGrad> {
    let raw = mmd2_estimate(source, target, kernel, estimator)?;
    let value = match estimator {
        Estimator::Biased => raw.max(0.0),
        Estimator::Unbiased => raw,
    };
    let (n, m) = (source.nrows() as f64, target.nrows() as f64);
    let (skip, wn, wm) = match estimator {
        Estimator::Biased => (false, n * n, m * m),
        Estimator::Unbiased => (true, n * (n - 1.0), m * (m - 1.0)),
    };
    let cross = 2.0 / (n * m);
    let side = |own: ArrayView2<f64>, other: ArrayView2<f64>, w_own: f64| {
        let mut grad = Array2::zeros(own.raw_dim());
        for (p, row) in own.rows().into_iter().enumerate() {
            let out = grad.row_mut(p).into_slice().expect("standard layout");
            for (j, rj) in own.rows().into_iter().enumerate() {
                if !(skip && j == p) {
                    kernel.accumulate_grad(row, rj, 2.0 / w_own, out);
                }
            }
            for rj in other.rows() {
                kernel.accumulate_grad(row, rj, -cross, out);
            }
        }
        grad
    };
    Ok(MmdGrad {
        value,
        d_source: side(source, target, wn),
        d_target: side(target, source, wm),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0) + shift)
    }

    /// Literal four-loop estimator, independent of the block-sum path.
    fn brute(x: &Array2<f64>, y: &Array2<f64>, k: &dyn Fn(&[f64], &[f64]) -> f64, unbiased: bool) -> f64 {
        let (n, m) = (x.nrows(), y.nrows());
        let row = |a: &Array2<f64>, i: usize| a.row(i).to_vec();
        let mut xx = 0.0;
        let mut yy = 0.0;
        let mut xy = 0.0;
        for i in 0..n {
            for j in 0..n {
                if !(unbiased && i == j) {
                    xx += k(&row(x, i), &row(x, j));
                }
            }
        }
        for i in 0..m {
            for j in 0..m {
                if !(unbiased && i == j) {
                    yy += k(&row(y, i), &row(y, j));
                }
            }
        }
        for i in 0..n {
            for j in 0..m {
                xy += k(&row(x, i), &row(y, j));
            }
        }
        let (nf, mf) = (n as f64, m as f64);
        if unbiased {
            xx / (nf * (nf - 1.0)) + yy / (mf * (mf - 1.0)) - 2.0 * xy / (nf * mf)
        } else {
            xx / (nf * nf) + yy / (mf * mf) - 2.0 * xy / (nf * mf)
        }
    }

    #[test]
    fn median_of_degenerate_pool_is_one() {
        let a = array![[1.0, 2.0]];
        assert_eq!(median_heuristic(a.view(), a.view()), 1.0);
    }

    #[test]
    fn median_of_three_points() {
        // Squared distances {1, 9, 4} -> 4.
        let a = array![[0.0], [1.0]];
        let b = array![[3.0]];
        assert_eq!(median_heuristic(a.view(), b.view()), 4.0);
    }

    #[test]
    fn median_scales_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 5, 3, 0.0);
        let b = random(&mut rng, 4, 3, 0.5);
        let base = median_heuristic(a.view(), b.view());
        let c = 3.0;
        let scaled = median_heuristic((&a * c).view(), (&b * c).view());
        assert!((scaled - c * c * base).abs() < 1e-12 * scaled);
    }

    #[test]
    fn identical_samples_have_zero_mmd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, 7, 3, 0.0);
        let v = mmd2_biased(a.view(), a.view(), &KernelSpec::default()).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn single_rbf_closed_form() {
        let v = mmd2_biased(array![[0.0]].view(), array![[2.0]].view(), &KernelSpec::rbf(vec![1.0])).unwrap();
        let expected = 2.0 - 2.0 * (-2.0f64).exp();
        assert!((v - expected).abs() < 1e-14);
        assert!((v - 1.72933).abs() < 1e-5);
    }

    #[test]
    fn linear_kernel_is_mean_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 6, 4, 0.0);
        let b = random(&mut rng, 9, 4, 0.3);
        let gap = a.mean_axis(ndarray::Axis(0)).unwrap() - b.mean_axis(ndarray::Axis(0)).unwrap();
        let v = mmd2_biased(a.view(), b.view(), &KernelSpec::linear()).unwrap();
        assert!((v - gap.dot(&gap)).abs() < 1e-12);
    }

    #[test]
    fn estimators_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(&mut rng, 10, 3, 0.0);
        let b = random(&mut rng, 8, 3, 0.4);
        let sigma: f64 = 0.8;
        let k = |x: &[f64], y: &[f64]| {
            let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum();
            (-d2 / (2.0 * sigma * sigma)).exp()
        };
        let spec = KernelSpec::rbf(vec![sigma]);
        let vb = mmd2_biased(a.view(), b.view(), &spec).unwrap();
        let vu = mmd2_unbiased(a.view(), b.view(), &spec).unwrap();
        assert!((vb - brute(&a, &b, &k, false)).abs() < 1e-10);
        assert!((vu - brute(&a, &b, &k, true)).abs() < 1e-10);
    }

    #[test]
    fn duplicated_rows_far_target_unbiased_near_biased() {
        let a = array![[0.0, 0.0], [0.0, 0.0], [0.1, 0.0]];
        let b = array![[10.0, 10.0], [10.5, 10.0], [10.0, 10.5]];
        let spec = KernelSpec::rbf(vec![1.0]);
        let vb = mmd2_biased(a.view(), b.view(), &spec).unwrap();
        let vu = mmd2_unbiased(a.view(), b.view(), &spec).unwrap();
        assert!(vu > 0.0);
        assert!((vu - vb).abs() / vb < 0.5, "biased {vb}, unbiased {vu}");
    }

    #[test]
    fn unbiased_requires_two_rows() {
        let a = array![[0.0]];
        let b = array![[1.0], [2.0]];
        assert!(matches!(mmd2_unbiased(a.view(), b.view(), &KernelSpec::linear()), Err(EudaError::Contract(_))));
        assert!(mmd2_biased(a.view(), b.view(), &KernelSpec::linear()).is_ok());
    }

    #[test]
    fn non_finite_is_contract_error() {
        let a = array![[0.0], [f64::NAN]];
        let b = array![[1.0], [2.0]];
        assert!(matches!(mmd2_biased(a.view(), b.view(), &KernelSpec::default()), Err(EudaError::Contract(_))));
    }

    #[test]
    fn gradient_vanishes_at_coincidence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&mut rng, 6, 3, 0.0);
        let g = mmd2_grad(a.view(), a.view(), &KernelSpec::default()).unwrap();
        assert_eq!(g.value, 0.0);
        let sum = &g.d_source + &g.d_target;
        assert!(sum.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn linear_gradient_rows_equal_scaled_mean_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random(&mut rng, 6, 3, 0.0);
        let b = random(&mut rng, 5, 3, 0.7);
        let gap = a.mean_axis(ndarray::Axis(0)).unwrap() - b.mean_axis(ndarray::Axis(0)).unwrap();
        let g = mmd2_grad(a.view(), b.view(), &KernelSpec::linear()).unwrap();
        for row in g.d_source.rows() {
            for (x, y) in row.iter().zip((&gap * (2.0 / 6.0)).iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    fn fd_check(estimator: Estimator, kernel: ResolvedKernel) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&mut rng, 6, 3, 0.0);
        let b = random(&mut rng, 5, 3, 0.5);
        let g = mmd2_grad_with(a.view(), b.view(), &kernel, estimator).unwrap();
        let h = 1e-5;
        let f = |x: &Array2<f64>, y: &Array2<f64>| mmd2_estimate(x.view(), y.view(), &kernel, estimator).unwrap();
        let mut worst = 0.0f64;
        for (which, analytic) in [(0, &g.d_source), (1, &g.d_target)] {
            for idx in ndarray::indices(analytic.raw_dim()) {
                let (mut xp, mut xm) = ((a.clone(), b.clone()), (a.clone(), b.clone()));
                if which == 0 {
                    xp.0[idx] += h;
                    xm.0[idx] -= h;
                } else {
                    xp.1[idx] += h;
                    xm.1[idx] -= h;
                }
                let num = (f(&xp.0, &xp.1) - f(&xm.0, &xm.1)) / (2.0 * h);
                let ana = analytic[idx];
                worst = worst.max((num - ana).abs() / ana.abs().max(num.abs()).max(1e-3));
            }
        }
        assert!(worst < 1e-6, "{estimator:?} worst relative error {worst}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let rbf = ResolvedKernel::Rbf { sigma_sq: vec![0.5, 2.0] };
        fd_check(Estimator::Biased, rbf.clone());
        fd_check(Estimator::Unbiased, rbf);
        fd_check(Estimator::Biased, ResolvedKernel::Linear);
        fd_check(Estimator::Unbiased, ResolvedKernel::Linear);
    }

    #[test]
    fn shift_increases_biased_mmd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let normal = |rng: &mut ChaCha8Rng, n: usize| {
            Array2::from_shape_simple_fn((n, 2), || rng.sample::<f64, _>(rand_distr::StandardNormal))
        };
        let a = normal(&mut rng, 40);
        let b = normal(&mut rng, 40);
        let values: Vec<f64> = [0.0, 1.0, 2.0, 4.0]
            .iter()
            .map(|&o| mmd2_biased(a.view(), (&b + o).view(), &KernelSpec::default()).unwrap())
            .collect();
        assert!(values.windows(2).all(|w| w[0] < w[1]), "{values:?}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix(n: std::ops::Range<usize>, d: usize) -> impl Strategy<Value = Array2<f64>> {
            n.prop_flat_map(move |rows| {
                proptest::collection::vec(-3.0f64..3.0, rows * d)
                    .prop_map(move |v| Array2::from_shape_vec((rows, d), v).unwrap())
            })
        }

        fn pair() -> impl Strategy<Value = (Array2<f64>, Array2<f64>)> {
            (1usize..5).prop_flat_map(|d| (matrix(2..10, d), matrix(2..10, d)))
        }

        proptest! {
            #[test]
            fn symmetric_exactly((a, b) in pair()) {
                let spec = KernelSpec::default();
                prop_assert_eq!(mmd2_biased(a.view(), b.view(), &spec).unwrap(), mmd2_biased(b.view(), a.view(), &spec).unwrap());
                prop_assert_eq!(mmd2_unbiased(a.view(), b.view(), &spec).unwrap(), mmd2_unbiased(b.view(), a.view(), &spec).unwrap());
            }

            #[test]
            fn row_order_invariant((a, b) in pair(), seed: u64) {
                use rand::seq::SliceRandom;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut order: Vec<usize> = (0..a.nrows()).collect();
                order.shuffle(&mut rng);
                let shuffled = a.select(ndarray::Axis(0), &order);
                let spec = KernelSpec::default();
                let v0 = mmd2_biased(a.view(), b.view(), &spec).unwrap();
                let v1 = mmd2_biased(shuffled.view(), b.view(), &spec).unwrap();
                prop_assert!((v0 - v1).abs() < 1e-12);
                let u0 = mmd2_unbiased(a.view(), b.view(), &spec).unwrap();
                let u1 = mmd2_unbiased(shuffled.view(), b.view(), &spec).unwrap();
                prop_assert!((u0 - u1).abs() < 1e-12);
            }

            #[test]
            fn biased_raw_residue_is_tiny((a, b) in pair()) {
                let k = KernelSpec::default().resolve(a.view(), b.view()).unwrap();
                let raw = mmd2_estimate(a.view(), b.view(), &k, Estimator::Biased).unwrap();
                prop_assert!(raw > -1e-10);
                prop_assert!(mmd2_biased(a.view(), b.view(), &KernelSpec::default()).unwrap() >= 0.0);
            }
        }
    }
}
