//! Sub-pixel rearrangement: `pixel_shuffle` moves `r^2` channel groups into
//! an `r x r` spatial block; `pixel_unshuffle` is its exact inverse.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `[N, C r^2, H, W] -> [N, C, rH, rW]` with
/// `out[n, c, h r + i, w r + j] = in[n, c r^2 + i r + j, h, w]`.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if r == 0 || c % (r * r) != 0 {
        return Err(Error::invalid(format!(
            "pixel_shuffle: {c} channels not divisible by r^2 = {}",
            r * r
        )));
    }
    let co = c / (r * r);
    let mut out = Tensor::zeros([n, co, h * r, w * r]);
    for b in 0..n {
        for oc in 0..co {
            for i in 0..r {
                for j in 0..r {
                    let src = x.plane(b, oc * r * r + i * r + j);
                    for y in 0..h {
                        for xx in 0..w {
                            out.set(b, oc, y * r + i, xx * r + j, src[y * w + xx]);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `[N, C, rH, rW] -> [N, C r^2, H, W]`.
pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::invalid(format!(
            "pixel_unshuffle: {h}x{w} not divisible by {r}"
        )));
    }
    let (ho, wo) = (h / r, w / r);
    let mut out = Tensor::zeros([n, c * r * r, ho, wo]);
    for b in 0..n {
        for ic in 0..c {
            for i in 0..r {
                for j in 0..r {
                    for y in 0..ho {
                        for xx in 0..wo {
                            let v = x.at(b, ic, y * r + i, xx * r + j);
                            out.set(b, ic * r * r + i * r + j, y, xx, v);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shapes_and_errors() {
        let x = Tensor::<f32>::zeros([1, 8, 4, 4]);
        assert_eq!(pixel_shuffle(&x, 2).unwrap().shape(), [1, 2, 8, 8]);
        assert!(pixel_shuffle(&Tensor::<f32>::zeros([1, 6, 2, 2]), 2).is_err());
        assert!(pixel_unshuffle(&Tensor::<f32>::zeros([1, 1, 5, 4]), 2).is_err());
    }

    #[test]
    fn ramp_round_trip_exhaustive() {
        let x = Tensor::<f64>::from_fn([1, 1, 6, 8], |_, _, y, w| (y * 8 + w) as f64);
        let u = pixel_unshuffle(&x, 2).unwrap();
        assert_eq!(u.shape(), [1, 4, 3, 4]);
        // Every source element appears once, at the documented index.
        for y in 0..6 {
            for w in 0..8 {
                assert_eq!(u.at(0, (y % 2) * 2 + w % 2, y / 2, w / 2), x.at(0, 0, y, w));
            }
        }
        assert_eq!(pixel_shuffle(&u, 2).unwrap(), x);
    }

    proptest! {
        #[test]
        fn unshuffle_inverts_shuffle(c in 1usize..3, h in 1usize..4, w in 1usize..4, r in 1usize..4) {
            let x = Tensor::<f64>::from_fn([2, c * r * r, h, w], |n, ch, y, xx| {
                (((n * 31 + ch) * 17 + y) * 13 + xx) as f64
            });
            let s = pixel_shuffle(&x, r).unwrap();
            prop_assert_eq!(pixel_unshuffle(&s, r).unwrap(), x);
        }
    }
}
