//! Layer kernels with matched forward/backward pairs. These are pure
//! functions over tensors; the autodiff tape in [`crate::autograd`] wires
//! them together.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod linear;
pub mod shuffle;

pub use activation::Activation;
pub use batchnorm::{BatchNormConfig, BnMode};
pub use conv::{conv2d_backward, conv2d_forward, conv2d_reference, ConvGrads, ConvSpec, Padding};
pub use linear::{linear_backward, linear_forward};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};

use crate::tensor::Real;

/// Run `f(chunk_index, chunk)` over consecutive `chunk`-sized pieces of
/// `out`. Each chunk is written by exactly one worker, so results do not
/// depend on the thread count.
pub(crate) fn for_each_chunk<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if chunk == 0 || out.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Dot product with four independent accumulators (lets the compiler
/// vectorize; the summation order is fixed).
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = tail + x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 3.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
