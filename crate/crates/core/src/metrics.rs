//! Image quality metrics on `[N, C, H, W]` tensors with values in
//! `[0, max_val]`.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_pair<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    if a.is_empty() {
        return Err(Error::Empty(op));
    }
    Ok(())
}

pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check_pair(a, b, "mse")?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(s / a.len() as f64)
}

/// `10 log10(max^2 / MSE)` over the whole tensor; `f64::INFINITY` when the
/// inputs are identical.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, max_val: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / m).log10())
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of one plane.
fn filter(plane: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = g.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| g[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM of two single-channel planes.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, max_val: f64) -> f64 {
    // Images smaller than the window use the largest odd window that fits.
    let mut size = WINDOW.min(h).min(w);
    if size.is_multiple_of(2) {
        size -= 1;
    }
    let g = gaussian_window(size, SIGMA);
    let c1 = (K1 * max_val).powi(2);
    let c2 = (K2 * max_val).powi(2);
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let (mu_a, oh, ow) = filter(a, h, w, &g);
    let (mu_b, _, _) = filter(b, h, w, &g);
    let (aa, _, _) = filter(&prod(a, a), h, w, &g);
    let (bb, _, _) = filter(&prod(b, b), h, w, &g);
    let (ab, _, _) = filter(&prod(a, b), h, w, &g);
    let n = oh * ow;
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    total / n as f64
}

/// SSIM with an 11-tap Gaussian window (sigma 1.5), `K1 = 0.01`,
/// `K2 = 0.03`, valid region only; averaged over channels and images.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>, max_val: f64) -> Result<f64> {
    check_pair(a, b, "ssim")?;
    let [n, c, h, w] = a.shape();
    let mut total = 0.0;
    for i in 0..n {
        for ch in 0..c {
            let pa: Vec<f64> = a.plane(i, ch).iter().map(|v| v.as_f64()).collect();
            let pb: Vec<f64> = b.plane(i, ch).iter().map(|v| v.as_f64()).collect();
            total += ssim_plane(&pa, &pb, h, w, max_val);
        }
    }
    Ok(total / (n * c) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
            ((y * w + x + 7 * c) % 17) as f64 / 17.0
        })
    }

    #[test]
    fn identical_images() {
        let a = ramp(16, 16);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_offset_psnr_is_20db() {
        let a = Tensor::<f64>::full([1, 3, 8, 8], 0.3);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn constant_images_match_closed_form() {
        // Both variances and the covariance vanish, leaving the luminance
        // term only.
        let (x, c) = (0.4, 0.25);
        let a = Tensor::<f64>::full([1, 1, 20, 20], x);
        let b = Tensor::<f64>::full([1, 1, 20, 20], x + c);
        let c1 = 0.01f64.powi(2);
        let want = (2.0 * x * (x + c) + c1) / (x * x + (x + c) * (x + c) + c1);
        assert!((ssim(&a, &b, 1.0).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn window_is_normalized_and_symmetric() {
        let g = gaussian_window(11, 1.5);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(g[i], g[10 - i]);
        }
        assert!(g[5] > g[4]);
    }

    #[test]
    fn small_images_still_score() {
        let a = ramp(4, 6);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let a = ramp(8, 8);
        let b = ramp(8, 12);
        assert!(psnr(&a, &b, 1.0).is_err());
        assert!(ssim(&a, &b, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = Tensor::<f64>::from_fn([1, 2, 12, 13], |_, _, _, _| rng.gen_range(0.0..1.0));
            let b = Tensor::<f64>::from_fn([1, 2, 12, 13], |_, _, _, _| rng.gen_range(0.0..1.0));
            prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
            let (s1, s2) = (ssim(&a, &b, 1.0).unwrap(), ssim(&b, &a, 1.0).unwrap());
            prop_assert!((s1 - s2).abs() < 1e-12);
            prop_assert!(s1 <= 1.0 + 1e-12);
        }
    }
}
