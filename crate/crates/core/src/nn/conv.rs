//! Grouped / depth-wise / dilated 2-D cross-correlation.
//!
//! `conv2d_reference` is the naive direct loop. `conv2d_forward` reorders the
//! loops so the innermost runs over contiguous output rows; every output
//! element still accumulates its taps in (input channel, ky, kx) order
//! starting from zero, with the bias added last, so in `f64` both paths agree
//! bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{dot, for_each_chunk};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    /// Zero padding of `floor(extent / 2)` per side; odd extents only.
    Same,
    Explicit(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
    pub padding: Padding,
    pub bias: bool,
}

impl ConvSpec {
    /// Dense `k x k` convolution, stride 1, "same" padding, with bias.
    pub fn new(in_ch: usize, out_ch: usize, k: usize) -> Self {
        ConvSpec {
            in_ch,
            out_ch,
            kernel: (k, k),
            stride: (1, 1),
            dilation: (1, 1),
            groups: 1,
            padding: Padding::Same,
            bias: true,
        }
    }

    pub fn pointwise(in_ch: usize, out_ch: usize) -> Self {
        Self::new(in_ch, out_ch, 1)
    }

    pub fn depthwise(ch: usize, k: usize, dilation: usize) -> Self {
        ConvSpec {
            groups: ch,
            dilation: (dilation, dilation),
            ..Self::new(ch, ch, k)
        }
    }

    pub fn with_stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn with_padding(mut self, p: Padding) -> Self {
        self.padding = p;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_ch && self.in_ch == self.out_ch
    }

    /// Effective extent `dilation * (kernel - 1) + 1` per axis.
    pub fn extent(&self) -> (usize, usize) {
        (
            self.dilation.0 * (self.kernel.0 - 1) + 1,
            self.dilation.1 * (self.kernel.1 - 1) + 1,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ConvSpec {
            in_ch,
            out_ch,
            kernel,
            stride,
            dilation,
            groups,
            ..
        } = *self;
        if in_ch == 0 || out_ch == 0 || groups == 0 {
            return Err(Error::invalid("conv channels and groups must be positive"));
        }
        if in_ch % groups != 0 || out_ch % groups != 0 {
            return Err(Error::invalid(format!(
                "conv channels {in_ch}->{out_ch} not divisible by groups {groups}"
            )));
        }
        if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::invalid("conv kernel and stride must be positive"));
        }
        if dilation.0 == 0 || dilation.1 == 0 {
            return Err(Error::invalid("conv dilation must be positive"));
        }
        self.resolved_padding().map(|_| ())
    }

    pub fn resolved_padding(&self) -> Result<(usize, usize)> {
        match self.padding {
            Padding::Explicit(ph, pw) => Ok((ph, pw)),
            Padding::Same => {
                let (eh, ew) = self.extent();
                if eh % 2 == 0 || ew % 2 == 0 {
                    return Err(Error::invalid(format!(
                        "\"same\" padding needs odd extents, got {eh}x{ew}"
                    )));
                }
                Ok((eh / 2, ew / 2))
            }
        }
    }

    pub fn weight_shape(&self) -> Shape {
        [
            self.out_ch,
            self.in_ch / self.groups,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    pub fn bias_shape(&self) -> Shape {
        [1, self.out_ch, 1, 1]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = self.resolved_padding()?;
        let (eh, ew) = self.extent();
        if h + 2 * ph < eh || w + 2 * pw < ew {
            return Err(Error::invalid(format!(
                "input {h}x{w} smaller than conv extent {eh}x{ew}"
            )));
        }
        Ok((
            (h + 2 * ph - eh) / self.stride.0 + 1,
            (w + 2 * pw - ew) / self.stride.1 + 1,
        ))
    }

    pub fn num_params(&self) -> usize {
        let w: usize = self.weight_shape().iter().product();
        w + if self.bias { self.out_ch } else { 0 }
    }

    /// Multiply-accumulates for one image of `h x w`, in 64 bits so large
    /// models do not overflow on 32-bit targets.
    pub fn macs(&self, h: usize, w: usize) -> Result<u64> {
        let (oh, ow) = self.output_hw(h, w)?;
        let [o, i, kh, kw] = self.weight_shape();
        Ok([o, i, kh, kw, oh, ow].iter().map(|&v| v as u64).product())
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    stride: (usize, usize),
    dilation: (usize, usize),
    pad: (usize, usize),
}

impl Geometry {
    fn new(spec: &ConvSpec, h: usize, w: usize) -> Result<Self> {
        let (oh, ow) = spec.output_hw(h, w)?;
        Ok(Geometry {
            h,
            w,
            oh,
            ow,
            stride: spec.stride,
            dilation: spec.dilation,
            pad: spec.resolved_padding()?,
        })
    }

    /// Output rows whose tap `ky` lands inside the input, and the input row
    /// of the first one.
    #[inline]
    fn rows(&self, ky: usize) -> (usize, usize, usize) {
        let off = (ky * self.dilation.0) as isize - self.pad.0 as isize;
        let (lo, hi) = valid_range(self.oh, self.h, self.stride.0, off);
        if lo == hi {
            return (0, 0, 0);
        }
        (
            lo,
            hi,
            (lo as isize * self.stride.0 as isize + off) as usize,
        )
    }

    #[inline]
    fn cols(&self, kx: usize) -> (usize, usize, usize) {
        let off = (kx * self.dilation.1) as isize - self.pad.1 as isize;
        let (lo, hi) = valid_range(self.ow, self.w, self.stride.1, off);
        if lo == hi {
            return (0, 0, 0);
        }
        (
            lo,
            hi,
            (lo as isize * self.stride.1 as isize + off) as usize,
        )
    }
}

/// Range `[lo, hi)` of outputs `o` with `0 <= o * stride + off < in_len`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, off: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let last = in_len as isize - 1 - off;
    let hi = if last < 0 {
        0
    } else {
        (last / s + 1).min(out_len as isize)
    };
    let lo = lo.min(out_len as isize);
    (lo as usize, hi.max(lo) as usize)
}

fn check_inputs<T: Real>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<()> {
    spec.validate()?;
    if x.c() != spec.in_ch {
        return Err(Error::invalid(format!(
            "conv expects {} input channels, got {}",
            spec.in_ch,
            x.c()
        )));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::ShapeMismatch {
            op: "conv2d weight",
            lhs: spec.weight_shape(),
            rhs: weight.shape(),
        });
    }
    match (spec.bias, bias) {
        (true, Some(b)) if b.shape() == spec.bias_shape() => Ok(()),
        (true, Some(b)) => Err(Error::ShapeMismatch {
            op: "conv2d bias",
            lhs: spec.bias_shape(),
            rhs: b.shape(),
        }),
        (false, None) => Ok(()),
        (true, None) => Err(Error::invalid("conv spec has bias but none given")),
        (false, Some(_)) => Err(Error::invalid("conv spec has no bias but one given")),
    }
}

/// Naive direct convolution, kept as the reference the fast path is checked
/// against.
pub fn conv2d_reference<T: Real>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    check_inputs(x, spec, weight, bias)?;
    let g = Geometry::new(spec, x.h(), x.w())?;
    let cin_g = spec.in_ch / spec.groups;
    let cout_g = spec.out_ch / spec.groups;
    let (kh, kw) = spec.kernel;
    let mut out = Tensor::zeros([x.n(), spec.out_ch, g.oh, g.ow]);
    for n in 0..x.n() {
        for o in 0..spec.out_ch {
            let grp = o / cout_g;
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = T::zero();
                    for cl in 0..cin_g {
                        let c = grp * cin_g + cl;
                        for ky in 0..kh {
                            let iy =
                                (oy * g.stride.0 + ky * g.dilation.0) as isize - g.pad.0 as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * g.stride.1 + kx * g.dilation.1) as isize
                                    - g.pad.1 as isize;
                                if ix < 0 || ix >= g.w as isize {
                                    continue;
                                }
                                acc = acc
                                    + weight.at(o, cl, ky, kx)
                                        * x.at(n, c, iy as usize, ix as usize);
                            }
                        }
                    }
                    if let Some(b) = bias {
                        acc = acc + b.data()[o];
                    }
                    out.set(n, o, oy, ox, acc);
                }
            }
        }
    }
    Ok(out)
}

pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    check_inputs(x, spec, weight, bias)?;
    let g = Geometry::new(spec, x.h(), x.w())?;
    let cin_g = spec.in_ch / spec.groups;
    let cout_g = spec.out_ch / spec.groups;
    let (kh, kw) = spec.kernel;
    let out_ch = spec.out_ch;
    let wd = weight.data();
    let mut out = vec![T::zero(); x.n() * out_ch * g.oh * g.ow];

    for_each_chunk(&mut out, g.oh * g.ow, |idx, plane| {
        let (n, o) = (idx / out_ch, idx % out_ch);
        let grp = o / cout_g;
        for cl in 0..cin_g {
            let xp = x.plane(n, grp * cin_g + cl);
            for ky in 0..kh {
                let (oy0, oy1, iy0) = g.rows(ky);
                for kx in 0..kw {
                    let wv = wd[((o * cin_g + cl) * kh + ky) * kw + kx];
                    let (ox0, ox1, ix0) = g.cols(kx);
                    let cols = ox1 - ox0;
                    for (r, oy) in (oy0..oy1).enumerate() {
                        let iy = iy0 + r * g.stride.0;
                        let orow = &mut plane[oy * g.ow + ox0..oy * g.ow + ox1];
                        let xrow = &xp[iy * g.w..(iy + 1) * g.w];
                        if g.stride.1 == 1 {
                            for (acc, &xv) in orow.iter_mut().zip(&xrow[ix0..ix0 + cols]) {
                                *acc = *acc + wv * xv;
                            }
                        } else {
                            for (j, acc) in orow.iter_mut().enumerate() {
                                *acc = *acc + wv * xrow[ix0 + j * g.stride.1];
                            }
                        }
                    }
                }
            }
        }
        if let Some(b) = bias {
            let bv = b.data()[o];
            plane.iter_mut().for_each(|v| *v = *v + bv);
        }
    });
    Tensor::new([x.n(), out_ch, g.oh, g.ow], out)
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T: Real> {
    pub grad_x: Option<Tensor<T>>,
    pub grad_w: Tensor<T>,
    pub grad_b: Option<Tensor<T>>,
}

/// Adjoints of [`conv2d_forward`]. `need_grad_x = false` skips the input
/// gradient (e.g. for the network's image input).
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_grad_x: bool,
) -> Result<ConvGrads<T>> {
    spec.validate()?;
    if x.c() != spec.in_ch || weight.shape() != spec.weight_shape() {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward weight",
            lhs: spec.weight_shape(),
            rhs: weight.shape(),
        });
    }
    let g = Geometry::new(spec, x.h(), x.w())?;
    let expect = [x.n(), spec.out_ch, g.oh, g.ow];
    if grad_out.shape() != expect {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward grad_out",
            lhs: expect,
            rhs: grad_out.shape(),
        });
    }
    let cin_g = spec.in_ch / spec.groups;
    let cout_g = spec.out_ch / spec.groups;
    let (kh, kw) = spec.kernel;
    let wd = weight.data();
    let n_batch = x.n();

    let grad_x = if need_grad_x {
        let in_ch = spec.in_ch;
        let mut gx = vec![T::zero(); x.len()];
        for_each_chunk(&mut gx, g.h * g.w, |idx, plane| {
            let (n, c) = (idx / in_ch, idx % in_ch);
            let grp = c / cin_g;
            let cl = c % cin_g;
            for o in grp * cout_g..(grp + 1) * cout_g {
                let gop = grad_out.plane(n, o);
                for ky in 0..kh {
                    let (oy0, oy1, iy0) = g.rows(ky);
                    for kx in 0..kw {
                        let wv = wd[((o * cin_g + cl) * kh + ky) * kw + kx];
                        let (ox0, ox1, ix0) = g.cols(kx);
                        let cols = ox1 - ox0;
                        for (r, oy) in (oy0..oy1).enumerate() {
                            let iy = iy0 + r * g.stride.0;
                            let grow = &gop[oy * g.ow + ox0..oy * g.ow + ox1];
                            let xrow = &mut plane[iy * g.w..(iy + 1) * g.w];
                            if g.stride.1 == 1 {
                                for (acc, &gv) in xrow[ix0..ix0 + cols].iter_mut().zip(grow) {
                                    *acc = *acc + wv * gv;
                                }
                            } else {
                                for (j, &gv) in grow.iter().enumerate() {
                                    let acc = &mut xrow[ix0 + j * g.stride.1];
                                    *acc = *acc + wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        });
        Some(Tensor::new(x.shape(), gx)?)
    } else {
        None
    };

    let mut gw = vec![T::zero(); weight.len()];
    for_each_chunk(&mut gw, cin_g * kh * kw, |o, chunk| {
        let grp = o / cout_g;
        for cl in 0..cin_g {
            let c = grp * cin_g + cl;
            for ky in 0..kh {
                let (oy0, oy1, iy0) = g.rows(ky);
                for kx in 0..kw {
                    let (ox0, ox1, ix0) = g.cols(kx);
                    let cols = ox1 - ox0;
                    let mut acc = T::zero();
                    for n in 0..n_batch {
                        let gop = grad_out.plane(n, o);
                        let xp = x.plane(n, c);
                        for (r, oy) in (oy0..oy1).enumerate() {
                            let iy = iy0 + r * g.stride.0;
                            let grow = &gop[oy * g.ow + ox0..oy * g.ow + ox1];
                            let xrow = &xp[iy * g.w..(iy + 1) * g.w];
                            if g.stride.1 == 1 {
                                acc = acc + dot(grow, &xrow[ix0..ix0 + cols]);
                            } else {
                                for (j, &gv) in grow.iter().enumerate() {
                                    acc = acc + gv * xrow[ix0 + j * g.stride.1];
                                }
                            }
                        }
                    }
                    chunk[(cl * kh + ky) * kw + kx] = acc;
                }
            }
        }
    });

    let grad_b = spec.bias.then(|| {
        let mut gb = Tensor::zeros(spec.bias_shape());
        for o in 0..spec.out_ch {
            let mut acc = T::zero();
            for n in 0..n_batch {
                acc = acc + grad_out.plane(n, o).iter().copied().sum::<T>();
            }
            gb.data_mut()[o] = acc;
        }
        gb
    });

    Ok(ConvGrads {
        grad_x,
        grad_w: Tensor::new(spec.weight_shape(), gw)?,
        grad_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identity_pointwise_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random([2, 3, 5, 4], &mut rng);
        let spec = ConvSpec::pointwise(3, 3).with_bias(false);
        let w = Tensor::from_fn(
            spec.weight_shape(),
            |o, i, _, _| if o == i { 1.0 } else { 0.0 },
        );
        let y = conv2d_forward(&x, &spec, &w, None).unwrap();
        assert_eq!(y, x);

        let back = conv2d_backward(&x, &spec, &w, &x, true).unwrap();
        assert_eq!(back.grad_x.unwrap(), x);
    }

    #[test]
    fn depthwise_ones_counts_taps() {
        let spec = ConvSpec::depthwise(2, 3, 1).with_bias(false);
        let x = Tensor::<f64>::ones([1, 2, 6, 6]);
        let w = Tensor::ones(spec.weight_shape());
        let y = conv2d_forward(&x, &spec, &w, None).unwrap();
        assert_eq!(y.shape(), [1, 2, 6, 6]);
        assert_eq!(y.at(0, 1, 3, 2), 9.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
        assert_eq!(y.at(0, 0, 0, 3), 6.0);
    }

    #[test]
    fn dilated_impulse_support() {
        let spec = ConvSpec::depthwise(1, 7, 3).with_bias(false);
        let mut x = Tensor::<f64>::zeros([1, 1, 32, 32]);
        x.set(0, 0, 16, 16, 1.0);
        let w = Tensor::ones(spec.weight_shape());
        let y = conv2d_forward(&x, &spec, &w, None).unwrap();
        let mut expected = std::collections::BTreeSet::new();
        for i in -3i32..=3 {
            for j in -3i32..=3 {
                expected.insert(((16 + 3 * i) as usize, (16 + 3 * j) as usize));
            }
        }
        let mut got = std::collections::BTreeSet::new();
        for yy in 0..32 {
            for xx in 0..32 {
                if y.at(0, 0, yy, xx) != 0.0 {
                    got.insert((yy, xx));
                }
            }
        }
        assert_eq!(got.len(), 49);
        assert_eq!(got, expected);
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ConvSpec::new(2, 3, 3);
        let x = random([1, 2, 5, 5], &mut rng);
        let w = random(spec.weight_shape(), &mut rng);
        let go = Tensor::zeros([1, 3, 5, 5]);
        let gr = conv2d_backward(&x, &spec, &w, &go, true).unwrap();
        assert!(gr.grad_x.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(gr.grad_w.data().iter().all(|&v| v == 0.0));
        assert!(gr.grad_b.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_specs_rejected() {
        let x = Tensor::<f32>::zeros([1, 4, 8, 8]);
        let even = ConvSpec::depthwise(4, 4, 1);
        let w = Tensor::zeros(even.weight_shape());
        let b = Tensor::zeros(even.bias_shape());
        assert!(conv2d_forward(&x, &even, &w, Some(&b)).is_err());

        let bad_groups = ConvSpec {
            groups: 3,
            ..ConvSpec::new(4, 6, 3)
        };
        assert!(bad_groups.validate().is_err());

        let spec = ConvSpec::new(3, 2, 3);
        let w = Tensor::zeros(spec.weight_shape());
        let b = Tensor::zeros(spec.bias_shape());
        assert!(conv2d_forward(&x, &spec, &w, Some(&b)).is_err());
    }

    #[test]
    fn stride_two_patch_embedding_shape() {
        let spec = ConvSpec::new(3, 5, 2)
            .with_stride(2)
            .with_padding(Padding::Explicit(0, 0));
        assert_eq!(spec.output_hw(64, 32).unwrap(), (32, 16));
        assert_eq!(spec.num_params(), 5 * 3 * 4 + 5);
        assert_eq!(spec.macs(64, 32).unwrap(), 5 * 3 * 4 * 32 * 16);
    }

    #[test]
    fn pointwise_cost_matches_hand_count() {
        let spec = ConvSpec::pointwise(3, 3);
        assert_eq!(spec.num_params(), 12);
        assert_eq!(spec.macs(4, 4).unwrap(), 144);
    }

    #[test]
    fn fast_path_bitwise_matches_reference_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let specs = [
            ConvSpec::new(3, 4, 3),
            ConvSpec::depthwise(4, 5, 1),
            ConvSpec::depthwise(4, 7, 3),
            ConvSpec::depthwise(4, 5, 2).with_bias(false),
            ConvSpec::pointwise(4, 6),
            ConvSpec::new(4, 6, 2)
                .with_stride(2)
                .with_padding(Padding::Explicit(0, 0)),
            ConvSpec {
                groups: 2,
                ..ConvSpec::new(4, 6, 3).with_stride(2)
            },
        ];
        // 3x4 inputs are smaller than the dilated kernel's reach.
        for (spec, (h, w)) in specs.iter().flat_map(|&s| [(s, (9, 10)), (s, (3, 4))]) {
            let x = random([2, spec.in_ch, h, w], &mut rng);
            let w = random(spec.weight_shape(), &mut rng);
            let b = spec.bias.then(|| random(spec.bias_shape(), &mut rng));
            let fast = conv2d_forward(&x, &spec, &w, b.as_ref()).unwrap();
            let slow = conv2d_reference(&x, &spec, &w, b.as_ref()).unwrap();
            assert_eq!(fast.shape(), slow.shape());
            assert!(
                fast.data()
                    .iter()
                    .zip(slow.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits()),
                "{spec:?}"
            );
        }
    }

    #[test]
    fn fast_path_close_to_reference_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let spec = ConvSpec::depthwise(3, 7, 3);
        let x = random([1, 3, 24, 24], &mut rng).cast::<f32>();
        let w = random(spec.weight_shape(), &mut rng).cast::<f32>();
        let b = random(spec.bias_shape(), &mut rng).cast::<f32>();
        let fast = conv2d_forward(&x, &spec, &w, Some(&b)).unwrap();
        let slow = conv2d_reference(&x, &spec, &w, Some(&b)).unwrap();
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn adjoint_identity() {
        // <conv(x), g> == <x, conv^T(g)> and == <w, dW> for a linear map.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (spec, hw) in [
            (ConvSpec::depthwise(3, 5, 2).with_bias(false), (11, 9)),
            (ConvSpec::depthwise(3, 7, 3).with_bias(false), (4, 5)),
        ] {
            check_adjoint(spec, hw, &mut rng);
        }
    }

    fn check_adjoint(spec: ConvSpec, (h, w): (usize, usize), rng: &mut ChaCha8Rng) {
        let x = random([2, 3, h, w], rng);
        let w = random(spec.weight_shape(), rng);
        let y = conv2d_forward(&x, &spec, &w, None).unwrap();
        let gy = random(y.shape(), rng);
        let gr = conv2d_backward(&x, &spec, &w, &gy, true).unwrap();
        let lhs: f64 = y.data().iter().zip(gy.data()).map(|(a, b)| a * b).sum();
        let rhs_x: f64 = x
            .data()
            .iter()
            .zip(gr.grad_x.unwrap().data())
            .map(|(a, b)| a * b)
            .sum();
        let rhs_w: f64 = w
            .data()
            .iter()
            .zip(gr.grad_w.data())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs_x).abs() < 1e-10 * lhs.abs().max(1.0));
        assert!((lhs - rhs_w).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}
