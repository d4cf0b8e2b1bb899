//! Per-channel batch normalization for N×C×H×W activations.
//!
//! Training mode normalizes with the current batch's statistics (biased
//! variance) and folds an unbiased variance estimate into the running
//! statistics. Evaluation mode is a fixed affine map using the running
//! statistics and never mutates state.

use super::{LayerGrad, Mode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Values saved by a training-mode forward pass for the backward pass.
pub struct BnCache {
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward(
    input: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &mut [f64],
    running_var: &mut [f64],
    eps: f64,
    momentum: f64,
    mode: Mode,
) -> Result<(Tensor, Option<BnCache>)> {
    let (n, c, h, w) = input.dims4()?;
    if gamma.len() != c || beta.len() != c || running_mean.len() != c || running_var.len() != c {
        return Err(Error::Dimension(format!(
            "scale/shift/statistic vectors must all have {c} channels"
        )));
    }
    let plane = h * w;
    let per_channel = n * plane;
    let data = input.data();

    let channel_sum = |values: &[f64], ch: usize, f: &mut dyn FnMut(f64)| {
        for s in 0..n {
            let base = (s * c + ch) * plane;
            for &v in &values[base..base + plane] {
                f(v);
            }
        }
    };

    match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::Config(format!(
                    "batch normalization in training mode needs at least 2 samples, got {n}"
                )));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut acc = 0.0;
                channel_sum(data, ch, &mut |v| acc += v);
                mean[ch] = acc / per_channel as f64;
                let mut sq = 0.0;
                let m = mean[ch];
                channel_sum(data, ch, &mut |v| sq += (v - m) * (v - m));
                var[ch] = sq / per_channel as f64;
            }

            let mut inv_std = vec![0.0; c];
            for ch in 0..c {
                inv_std[ch] = 1.0 / (var[ch] + eps).sqrt();
            }

            let mut x_hat = Tensor::zeros(input.shape().to_vec());
            let mut out = Tensor::zeros(input.shape().to_vec());
            {
                let xh = x_hat.data_mut();
                let o = out.data_mut();
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * plane;
                        let (m, is, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
                        for i in base..base + plane {
                            let xn = (data[i] - m) * is;
                            xh[i] = xn;
                            o[i] = g * xn + b;
                        }
                    }
                }
            }

            let unbias = per_channel as f64 / (per_channel as f64 - 1.0);
            for ch in 0..c {
                running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mean[ch];
                running_var[ch] =
                    (1.0 - momentum) * running_var[ch] + momentum * var[ch] * unbias;
            }

            Ok((out, Some(BnCache { x_hat, inv_std })))
        }
        Mode::Eval => {
            let mut out = Tensor::zeros(input.shape().to_vec());
            let o = out.data_mut();
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * plane;
                    let is = 1.0 / (running_var[ch] + eps).sqrt();
                    let (m, g, b) = (running_mean[ch], gamma[ch], beta[ch]);
                    for i in base..base + plane {
                        o[i] = g * (data[i] - m) * is + b;
                    }
                }
            }
            Ok((out, None))
        }
    }
}

/// Training-mode gradients from the cached normalized activations:
/// `dx = gamma * inv_std * (g - mean(g) - x_hat * mean(g * x_hat))`
/// per channel, plus `dgamma = sum(g * x_hat)` and `dbeta = sum(g)`.
pub fn batchnorm_backward(cache: &BnCache, gamma: &[f64], out_grad: &Tensor) -> Result<LayerGrad> {
    let (n, c, h, w) = cache.x_hat.dims4()?;
    if out_grad.shape() != cache.x_hat.shape() {
        return Err(Error::Dimension(format!(
            "out_grad shape {:?} does not match activation shape {:?}",
            out_grad.shape(),
            cache.x_hat.shape()
        )));
    }
    let plane = h * w;
    let per_channel = (n * plane) as f64;
    let xh = cache.x_hat.data();
    let og = out_grad.data();

    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            let mut a = 0.0;
            let mut b = 0.0;
            for i in base..base + plane {
                a += og[i];
                b += og[i] * xh[i];
            }
            sum_g[ch] += a;
            sum_gx[ch] += b;
        }
    }

    let mut input_grad = Tensor::zeros(cache.x_hat.shape().to_vec());
    let ig = input_grad.data_mut();
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            let scale = gamma[ch] * cache.inv_std[ch];
            let mg = sum_g[ch] / per_channel;
            let mgx = sum_gx[ch] / per_channel;
            for i in base..base + plane {
                ig[i] = scale * (og[i] - mg - xh[i] * mgx);
            }
        }
    }

    let gamma_grad = Tensor::new(vec![c], sum_gx)?;
    let beta_grad = Tensor::new(vec![c], sum_g)?;
    Ok(LayerGrad::new(input_grad)
        .with_param("gamma", gamma_grad)
        .with_param("beta", beta_grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::fd_gradient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fresh_stats(c: usize) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; c], vec![1.0; c])
    }

    /// Builds a batch whose per-channel batch mean is exactly 0 and biased
    /// variance exactly 1, so the normalized output's moments are known in
    /// closed form.
    fn standardized_batch(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::uniform(vec![n, c, h, w], -2.0, 2.0, &mut rng);
        let plane = h * w;
        let count = (n * plane) as f64;
        for ch in 0..c {
            let mut mean = 0.0;
            for s in 0..n {
                let base = (s * c + ch) * plane;
                mean += t.data()[base..base + plane].iter().sum::<f64>();
            }
            mean /= count;
            let mut var = 0.0;
            for s in 0..n {
                let base = (s * c + ch) * plane;
                var += t.data()[base..base + plane]
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>();
            }
            var /= count;
            let inv = 1.0 / var.sqrt();
            for s in 0..n {
                let base = (s * c + ch) * plane;
                for v in &mut t.data_mut()[base..base + plane] {
                    *v = (*v - mean) * inv;
                }
            }
        }
        t
    }

    #[test]
    fn normalizes_to_unit_variance_up_to_eps() {
        let eps = 1e-5;
        let input = standardized_batch(4, 3, 5, 5, 9);
        let (mut rm, mut rv) = fresh_stats(3);
        let (out, _) = batchnorm_forward(
            &input,
            &[1.0; 3],
            &[0.0; 3],
            &mut rm,
            &mut rv,
            eps,
            0.1,
            Mode::Train,
        )
        .unwrap();
        let plane = 25;
        let count = (4 * plane) as f64;
        for ch in 0..3 {
            let mut mean = 0.0;
            let mut var = 0.0;
            for s in 0..4 {
                let base = (s * 3 + ch) * plane;
                mean += out.data()[base..base + plane].iter().sum::<f64>();
            }
            mean /= count;
            for s in 0..4 {
                let base = (s * 3 + ch) * plane;
                var += out.data()[base..base + plane]
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>();
            }
            var /= count;
            assert!(mean.abs() < 1e-12, "channel {ch} mean {mean}");
            let expect = 1.0 / (1.0 + eps);
            assert!((var - expect).abs() < 1e-9, "channel {ch} var {var}");
        }
    }

    #[test]
    fn gamma_and_beta_rescale_and_shift() {
        let input = standardized_batch(2, 1, 3, 3, 4);
        let (mut rm, mut rv) = fresh_stats(1);
        let (plain, _) = batchnorm_forward(
            &input, &[1.0], &[0.0], &mut rm, &mut rv, 1e-5, 0.1, Mode::Train,
        )
        .unwrap();
        let (mut rm2, mut rv2) = fresh_stats(1);
        let (scaled, _) = batchnorm_forward(
            &input, &[2.0], &[3.0], &mut rm2, &mut rv2, 1e-5, 0.1, Mode::Train,
        )
        .unwrap();
        for (a, b) in plain.data().iter().zip(scaled.data()) {
            assert!((2.0 * a + 3.0 - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_point_channel_has_closed_form_output() {
        let eps = 1e-5;
        let input = Tensor::new(vec![2, 1, 1, 1], vec![-1.0, 1.0]).unwrap();
        let (mut rm, mut rv) = fresh_stats(1);
        let (out, _) = batchnorm_forward(
            &input, &[1.0], &[0.0], &mut rm, &mut rv, eps, 0.1, Mode::Train,
        )
        .unwrap();
        let want = 1.0 / (1.0 + eps).sqrt();
        assert!((out.data()[0] + want).abs() < 1e-12);
        assert!((out.data()[1] - want).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma_collapses_to_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let input = Tensor::uniform(vec![3, 2, 2, 2], -1.0, 1.0, &mut rng);
        let (mut rm, mut rv) = fresh_stats(2);
        let (out, _) = batchnorm_forward(
            &input,
            &[0.0; 2],
            &[5.0; 2],
            &mut rm,
            &mut rv,
            1e-5,
            0.1,
            Mode::Train,
        )
        .unwrap();
        assert!(out.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn running_stats_blend_with_momentum() {
        let input = Tensor::new(
            vec![2, 1, 1, 2],
            vec![1.0, 3.0, 5.0, 7.0],
        )
        .unwrap();
        let (mut rm, mut rv) = fresh_stats(1);
        batchnorm_forward(
            &input, &[1.0], &[0.0], &mut rm, &mut rv, 1e-5, 0.1, Mode::Train,
        )
        .unwrap();
        // Batch mean 4, biased variance 5, unbiased variance 5 * 4/3.
        assert!((rm[0] - 0.4).abs() < 1e-12);
        assert!((rv[0] - (0.9 + 0.1 * 5.0 * 4.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_uses_running_stats_and_is_pure() {
        let input = Tensor::new(vec![1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut rm = vec![2.0];
        let mut rv = vec![4.0];
        let (out, cache) = batchnorm_forward(
            &input, &[1.0], &[0.0], &mut rm, &mut rv, 0.0, 0.1, Mode::Eval,
        )
        .unwrap();
        assert!(cache.is_none());
        assert_eq!(rm, vec![2.0]);
        assert_eq!(rv, vec![4.0]);
        for (v, want) in out.data().iter().zip([-0.5, 0.0, 0.5]) {
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_training_batch_is_rejected() {
        let input = Tensor::zeros(vec![1, 2, 3, 3]);
        let (mut rm, mut rv) = fresh_stats(2);
        assert!(matches!(
            batchnorm_forward(
                &input,
                &[1.0; 2],
                &[0.0; 2],
                &mut rm,
                &mut rv,
                1e-5,
                0.1,
                Mode::Train
            ),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let input = Tensor::uniform(vec![3, 2, 2, 2], -1.0, 1.0, &mut rng);
        let gamma = vec![1.3, 0.7];
        let beta = vec![0.2, -0.1];
        let proj: Vec<f64> = (0..input.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let loss = |inp: &Tensor, g: &[f64], b: &[f64]| {
            let (mut rm, mut rv) = fresh_stats(2);
            let (o, _) =
                batchnorm_forward(inp, g, b, &mut rm, &mut rv, 1e-5, 0.1, Mode::Train).unwrap();
            o.data().iter().zip(&proj).map(|(v, p)| v * p).sum::<f64>()
        };

        let (mut rm, mut rv) = fresh_stats(2);
        let (_, cache) = batchnorm_forward(
            &input, &gamma, &beta, &mut rm, &mut rv, 1e-5, 0.1, Mode::Train,
        )
        .unwrap();
        let mut og = Tensor::zeros(input.shape().to_vec());
        og.data_mut().copy_from_slice(&proj);
        let grads = batchnorm_backward(&cache.unwrap(), &gamma, &og).unwrap();

        let shape = input.shape().to_vec();
        let num_in = fd_gradient(
            |t| Ok(loss(&Tensor::new(shape.clone(), t.to_vec()).unwrap(), &gamma, &beta)),
            input.data(),
            1e-5,
        )
        .unwrap();
        let num_g = fd_gradient(|t| Ok(loss(&input, t, &beta)), &gamma, 1e-5).unwrap();
        let num_b = fd_gradient(|t| Ok(loss(&input, &gamma, t)), &beta, 1e-5).unwrap();

        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        for (a, n) in grads.input_grad.data().iter().zip(&num_in) {
            assert!(rel(*a, *n) < 1e-5, "input grad {a} vs {n}");
        }
        for (a, n) in grads.param_grads["gamma"].data().iter().zip(&num_g) {
            assert!(rel(*a, *n) < 1e-6);
        }
        for (a, n) in grads.param_grads["beta"].data().iter().zip(&num_b) {
            assert!(rel(*a, *n) < 1e-6);
        }
    }
}
