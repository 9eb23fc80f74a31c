//! Per-channel batch normalization over `N, H, W`.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Hyper-parameters. Running statistics update as
/// `running = (1 - momentum) * running + momentum * batch`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Output plus what the backward pass needs.
#[derive(Clone, Debug)]
pub struct BnForward<T: Real> {
    pub y: Tensor<T>,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Batch mean and unbiased batch variance (train mode only).
    pub batch_stats: Option<(Vec<T>, Vec<T>)>,
}

fn check_affine<T: Real>(x: &Tensor<T>, gamma: &[T], beta: &[T]) -> Result<()> {
    if gamma.len() != x.c() || beta.len() != x.c() {
        return Err(Error::invalid(format!(
            "batchnorm over {} channels given {} / {} affine parameters",
            x.c(),
            gamma.len(),
            beta.len()
        )));
    }
    Ok(())
}

fn affine<T: Real>(
    x: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut y = Vec::with_capacity(x.len());
    let mut xhat = Vec::with_capacity(x.len());
    for i in 0..n {
        for j in 0..c {
            for &v in x.plane(i, j) {
                let xh = (v - mean[j]) * inv_std[j];
                xhat.push(xh);
                y.push(gamma[j] * xh + beta[j]);
            }
        }
    }
    debug_assert_eq!(y.len(), n * c * hw);
    (
        Tensor::new(x.shape(), y).expect("shape"),
        Tensor::new(x.shape(), xhat).expect("shape"),
    )
}

/// Normalize with batch statistics. Requires at least two samples per
/// channel (`N * H * W >= 2`).
pub fn batchnorm_train<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> Result<BnForward<T>> {
    check_affine(x, gamma, beta)?;
    let [n, c, h, w] = x.shape();
    let m = n * h * w;
    if m < 2 {
        return Err(Error::invalid(
            "batchnorm in train mode needs N*H*W >= 2 per channel",
        ));
    }
    let mf = T::from_f64(m as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for j in 0..c {
        let mut s = T::zero();
        for i in 0..n {
            s = s + x.plane(i, j).iter().copied().sum::<T>();
        }
        let mu = s / mf;
        let mut ss = T::zero();
        for i in 0..n {
            ss = ss
                + x.plane(i, j)
                    .iter()
                    .map(|&v| (v - mu) * (v - mu))
                    .sum::<T>();
        }
        mean[j] = mu;
        var[j] = ss / mf;
    }
    let eps = T::from_f64(eps);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (y, xhat) = affine(x, &mean, &inv_std, gamma, beta);
    let bessel = mf / T::from_f64((m - 1) as f64);
    let unbiased = var.iter().map(|&v| v * bessel).collect();
    Ok(BnForward {
        y,
        xhat,
        inv_std,
        batch_stats: Some((mean, unbiased)),
    })
}

/// Per-channel affine map using the running statistics.
pub fn batchnorm_eval<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) -> Result<BnForward<T>> {
    check_affine(x, gamma, beta)?;
    if running_mean.len() != x.c() || running_var.len() != x.c() {
        return Err(Error::invalid(
            "batchnorm running statistics length mismatch",
        ));
    }
    let eps = T::from_f64(eps);
    let inv_std: Vec<T> = running_var
        .iter()
        .map(|&v| T::one() / (v + eps).sqrt())
        .collect();
    let (y, xhat) = affine(x, running_mean, &inv_std, gamma, beta);
    Ok(BnForward {
        y,
        xhat,
        inv_std,
        batch_stats: None,
    })
}

/// Returns `(grad_x, grad_gamma, grad_beta)`; the parameter gradients are
/// per-channel vectors.
pub fn batchnorm_backward<T: Real>(
    grad_y: &Tensor<T>,
    xhat: &Tensor<T>,
    inv_std: &[T],
    gamma: &[T],
    mode: BnMode,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    if grad_y.shape() != xhat.shape() {
        return Err(Error::ShapeMismatch {
            op: "batchnorm_backward",
            lhs: xhat.shape(),
            rhs: grad_y.shape(),
        });
    }
    let [n, c, h, w] = xhat.shape();
    let hw = h * w;
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for j in 0..c {
        for i in 0..n {
            let gp = grad_y.plane(i, j);
            let xp = xhat.plane(i, j);
            dbeta[j] = dbeta[j] + gp.iter().copied().sum::<T>();
            dgamma[j] = dgamma[j] + super::dot(gp, xp);
        }
    }
    let mf = T::from_f64((n * hw) as f64);
    let mut dx = Vec::with_capacity(xhat.len());
    for i in 0..n {
        for j in 0..c {
            let scale = gamma[j] * inv_std[j];
            let gp = grad_y.plane(i, j);
            let xp = xhat.plane(i, j);
            match mode {
                BnMode::Eval => dx.extend(gp.iter().map(|&g| g * scale)),
                BnMode::Train => {
                    let mean_g = dbeta[j] / mf;
                    let mean_gx = dgamma[j] / mf;
                    dx.extend(
                        gp.iter()
                            .zip(xp)
                            .map(|(&g, &xh)| scale * (g - mean_g - xh * mean_gx)),
                    );
                }
            }
        }
    }
    Ok((Tensor::new(xhat.shape(), dx)?, dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_mode_standardizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::from_fn([3, 2, 4, 5], |_, c, _, _| {
            rng.gen_range(-1.0..1.0) * (c as f64 + 1.0) * 3.0 + 7.0
        });
        let out = batchnorm_train(&x, &[1.0, 1.0], &[0.0, 0.0], 1e-5).unwrap();
        for j in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|i| out.y.plane(i, j).to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5, "{m}");
            assert!((v - 1.0).abs() < 1e-5, "{v}");
        }
    }

    #[test]
    fn eval_identity_stats_is_identity() {
        let x = Tensor::<f64>::from_fn([1, 2, 3, 3], |_, c, y, w| (c + y * 3 + w) as f64 - 4.0);
        let out = batchnorm_eval(&x, &[1.0; 2], &[0.0; 2], &[0.0; 2], &[1.0; 2], 1e-5).unwrap();
        let tol = 1e-5 * 8.0;
        assert!(out.y.max_abs_diff(&x) < tol);
    }

    #[test]
    fn single_sample_per_channel_rejected_in_train() {
        let x = Tensor::<f32>::ones([1, 3, 1, 1]);
        assert!(batchnorm_train(&x, &[1.0; 3], &[0.0; 3], 1e-5).is_err());
    }
}
