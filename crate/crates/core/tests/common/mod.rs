#![allow(dead_code, clippy::needless_range_loop)]

use euda_core::network::{backward, build_model, forward, BottleneckConfig, ModelParams, NORM_EPS};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
}

/// Loop-by-loop forward with batch statistics; returns (Z, logits).
pub fn naive_forward(p: &ModelParams, x: &Array2<f64>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (b, d) = x.dim();
    let mut h: Vec<Vec<f64>> = vec![vec![0.0; d]; b];
    for j in 0..d {
        let mean: f64 = (0..b).map(|i| x[[i, j]]).sum::<f64>() / b as f64;
        let var: f64 = (0..b).map(|i| (x[[i, j]] - mean).powi(2)).sum::<f64>() / b as f64;
        for i in 0..b {
            let st = (x[[i, j]] - mean) / (var.sqrt() + NORM_EPS);
            h[i][j] = p.input_norm.gain[j] * st + p.input_norm.bias[j];
        }
    }
    for layer in &p.layers {
        let (out, inp) = layer.weight.dim();
        h = h
            .iter()
            .map(|row| {
                (0..out)
                    .map(|o| {
                        let mut a = layer.bias[o];
                        for k in 0..inp {
                            a += layer.weight[[o, k]] * row[k];
                        }
                        a.max(0.0)
                    })
                    .collect()
            })
            .collect();
    }
    let (c, w) = p.classifier.weight.dim();
    let logits = h
        .iter()
        .map(|row| {
            (0..c)
                .map(|o| p.classifier.bias[o] + (0..w).map(|k| p.classifier.weight[[o, k]] * row[k]).sum::<f64>())
                .collect()
        })
        .collect();
    (h, logits)
}

pub fn probe(p: &ModelParams, x: &Array2<f64>, gl: &Array2<f64>, gz: &Array2<f64>) -> f64 {
    let (z, logits) = naive_forward(p, x);
    let mut total = 0.0;
    for i in 0..x.nrows() {
        total += logits[i].iter().zip(gl.row(i)).map(|(a, b)| a * b).sum::<f64>();
        total += z[i].iter().zip(gz.row(i)).map(|(a, b)| a * b).sum::<f64>();
    }
    total
}

pub fn pre_activation_signs(p: &ModelParams, x: &Array2<f64>) -> Vec<bool> {
    let t = forward(p, x.view()).unwrap();
    t.pre_activations.iter().flat_map(|a| a.iter().map(|&v| v > 0.0)).collect()
}


/// Worst relative error of `backward` against central differences of the
/// probe objective `Σ logits⊙gl + Σ Z⊙gz`, over `seeds` random instances.
/// Parameters whose perturbation flips any ReLU are skipped.
pub fn network_fd_worst(seeds: u64, eps: f64, floor: f64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..seeds {
        let params = build_model(5, &BottleneckConfig::new(vec![6, 4]).unwrap(), 3, seed).unwrap();
        let x = normal(&mut rng, 7, 5);
        let gl = normal(&mut rng, 7, 3) * 0.1;
        let gz = normal(&mut rng, 7, 4) * 0.1;
        let trace = forward(&params, x.view()).unwrap();
        let analytic = backward(&params, &trace, gl.view(), gz.view()).unwrap();
        let base_signs = pre_activation_signs(&params, &x);

        let groups: Vec<Vec<f64>> = analytic.slices().iter().map(|s| s.to_vec()).collect();
        let mut work = params.clone();
        for (g, grads) in groups.iter().enumerate() {
            for (i, &a) in grads.iter().enumerate() {
                let orig = work.trainable_slices_mut()[g][i];
                work.trainable_slices_mut()[g][i] = orig + eps;
                let plus = probe(&work, &x, &gl, &gz);
                let plus_signs = pre_activation_signs(&work, &x);
                work.trainable_slices_mut()[g][i] = orig - eps;
                let minus = probe(&work, &x, &gl, &gz);
                let minus_signs = pre_activation_signs(&work, &x);
                work.trainable_slices_mut()[g][i] = orig;
                if plus_signs != base_signs || minus_signs != base_signs {
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * eps);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    (worst, checked)
}
