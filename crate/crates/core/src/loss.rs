//! Softmax cross-entropy and the weighted CE + MMD combination.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{EudaError, Result};

/// Components of `total = λ·ce + (1 − λ)·mmd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub mmd: f64,
    pub lambda: f64,
}

/// Gradient seeds handed to the network's backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SeededGrads {
    pub logits: Array2<f64>,
    pub z_source: Array2<f64>,
    pub z_target: Array2<f64>,
}

/// Batch-mean cross-entropy of `softmax(logits)` against integer labels, and
/// its gradient `(softmax − onehot) / b`.
pub fn softmax_cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (b, c) = logits.dim();
    if labels.len() != b {
        return Err(EudaError::Contract(format!("{} labels for {b} logit rows", labels.len())));
    }
    if b == 0 {
        return Err(EudaError::Contract("empty batch".into()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= c) {
        return Err(EudaError::Contract(format!("label {y} out of range for {c} classes")));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(EudaError::Contract("non-finite logits".into()));
    }
    let inv_b = 1.0 / b as f64;
    let mut grad = Array2::zeros((b, c));
    let mut total = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        total += log_z - row[labels[i]];
        let mut g = grad.row_mut(i);
        for (j, v) in row.iter().enumerate() {
            g[j] = (v - log_z).exp() * inv_b;
        }
        g[labels[i]] -= inv_b;
    }
    Ok((total * inv_b, grad))
}

/// Combines the two losses and scales their gradient seeds by `λ` and `1 − λ`.
pub fn sdal_combine(
    ce: f64,
    grad_logits: &Array2<f64>,
    mmd: f64,
    grad_z_source: &Array2<f64>,
    grad_z_target: &Array2<f64>,
    lambda: f64,
) -> Result<(LossBreakdown, SeededGrads)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(EudaError::Contract(format!("lambda {lambda} outside [0, 1]")));
    }
    let mu = 1.0 - lambda;
    let breakdown = LossBreakdown {
        total: lambda * ce + mu * mmd,
        ce,
        mmd,
        lambda,
    };
    Ok((
        breakdown,
        SeededGrads {
            logits: grad_logits * lambda,
            z_source: grad_z_source * mu,
            z_target: grad_z_target * mu,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Array2::from_elem((3, 4), 0.7);
        let (ce, _) = softmax_cross_entropy(logits.view(), &[0, 3, 2]).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-12);
        assert!((ce - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn saturated_logit_does_not_overflow() {
        let logits = array![[1000.0, 0.0, 0.0]];
        let (ce, g) = softmax_cross_entropy(logits.view(), &[0]).unwrap();
        assert!(ce.is_finite() && ce.abs() < 1e-12);
        assert!(g.iter().all(|v| v.is_finite() && v.abs() < 1e-12));
        let (ce_wrong, _) = softmax_cross_entropy(logits.view(), &[1]).unwrap();
        assert!((ce_wrong - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn matches_naive_oracle_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits = Array2::from_shape_simple_fn((5, 3), || rng.random_range(-2.0..2.0));
        let labels = [0, 2, 1, 1, 0];
        let (ce, grad) = softmax_cross_entropy(logits.view(), &labels).unwrap();

        // Direct summation: p = exp(l) / Σ exp(l), ce = −mean log p_y.
        let naive = |l: &Array2<f64>| {
            let mut total = 0.0;
            for i in 0..5 {
                let z: f64 = (0..3).map(|j| l[[i, j]].exp()).sum();
                total -= (l[[i, labels[i]]].exp() / z).ln();
            }
            total / 5.0
        };
        assert!((ce - naive(&logits)).abs() < 1e-12);
        for i in 0..5 {
            let z: f64 = (0..3).map(|j| logits[[i, j]].exp()).sum();
            for j in 0..3 {
                let p = logits[[i, j]].exp() / z;
                let expected = (p - if j == labels[i] { 1.0 } else { 0.0 }) / 5.0;
                assert!((grad[[i, j]] - expected).abs() < 1e-12);
            }
        }
        let h = 1e-5;
        for idx in ndarray::indices((5, 3)) {
            let mut lp = logits.clone();
            let mut lm = logits.clone();
            lp[idx] += h;
            lm[idx] -= h;
            let fd = (naive(&lp) - naive(&lm)) / (2.0 * h);
            assert!((fd - grad[idx]).abs() < 1e-8);
        }
    }

    #[test]
    fn out_of_range_label_is_contract_error() {
        let logits = Array2::zeros((1, 2));
        assert!(matches!(softmax_cross_entropy(logits.view(), &[2]), Err(EudaError::Contract(_))));
    }

    #[test]
    fn combine_endpoints_and_arithmetic() {
        let gl = array![[0.5, -0.5]];
        let gs = array![[1.0, 2.0]];
        let gt = array![[-1.0, 3.0]];
        let (b, s) = sdal_combine(2.0, &gl, 0.5, &gs, &gt, 1.0).unwrap();
        assert_eq!(b.total, 2.0);
        assert!(s.z_source.iter().chain(s.z_target.iter()).all(|&v| v == 0.0));
        assert_eq!(s.logits, gl);
        let (b, s) = sdal_combine(2.0, &gl, 0.5, &gs, &gt, 0.0).unwrap();
        assert_eq!(b.total, 0.5);
        assert!(s.logits.iter().all(|&v| v == 0.0));
        let (b, _) = sdal_combine(2.0, &gl, 0.5, &gs, &gt, 0.7).unwrap();
        assert!((b.total - 1.55).abs() < 1e-12);
        assert!(sdal_combine(2.0, &gl, 0.5, &gs, &gt, 1.4).is_err());
        assert!(sdal_combine(2.0, &gl, 0.5, &gs, &gt, -0.1).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn batch() -> impl Strategy<Value = (Array2<f64>, Vec<usize>)> {
            (1usize..6, 2usize..6).prop_flat_map(|(b, c)| {
                (
                    proptest::collection::vec(-20.0f64..20.0, b * c)
                        .prop_map(move |v| Array2::from_shape_vec((b, c), v).unwrap()),
                    proptest::collection::vec(0..c, b),
                )
            })
        }

        proptest! {
            #[test]
            fn shift_invariant_and_rows_sum_to_zero((l, y) in batch(), shift in -100.0f64..100.0) {
                let (ce, g) = softmax_cross_entropy(l.view(), &y).unwrap();
                let (ce_shift, _) = softmax_cross_entropy((&l + shift).view(), &y).unwrap();
                prop_assert!(ce >= 0.0);
                prop_assert!((ce - ce_shift).abs() < 1e-10);
                for row in g.rows() {
                    prop_assert!(row.sum().abs() < 1e-12);
                }
            }

            #[test]
            fn total_is_affine_in_lambda(ce in 0.0f64..5.0, mmd in 0.0f64..5.0, lambda in 0.0f64..=1.0) {
                let z = Array2::zeros((1, 1));
                let (b, _) = sdal_combine(ce, &z, mmd, &z, &z, lambda).unwrap();
                prop_assert!((b.total - (mmd + lambda * (ce - mmd))).abs() < 1e-12);
                prop_assert!((b.total - (b.lambda * b.ce + (1.0 - b.lambda) * b.mmd)).abs() < 1e-12);
            }
        }
    }
}
