//! The decomposed large-kernel convolution block (DLKCB), the
//! channel-enhanced feed-forward block (CEFN) and the LKD block pairing them.
//!
//! DLKCB emulates a `K x K` depth-wise convolution with a `(2d-1)^2`
//! depth-wise leg followed by a `ceil(K/d)^2` depth-wise leg dilated by `d`,
//! wrapped in 1x1 projections:
//!
//! ```text
//! y = x + beta * PW_out(DW_dil(DW_small(PW_in(BN(x)))))
//! ```
//!
//! CEFN re-weights the channels of a conv feed-forward network with a
//! squeeze-style gate computed from the same normalized input:
//!
//! ```text
//! z = BN_in(x)
//! y = x + alpha * BN_out(FN(z) * CA(z))
//! FN = PW_reduce . GELU . DW3x3 . PW_expand
//! CA = sigmoid . Linear . ReLU . Linear . GAP
//! ```

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::layers::{act, BatchNorm2d, Conv2d, CostRow, Ctx, Init, Linear, Scale};
use crate::nn::{Activation, ConvSpec};
use crate::tensor::Real;

/// A `K x K` depth-wise kernel split into a small dense leg and a dilated
/// leg.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    pub kernel: usize,
    pub dilation: usize,
}

impl Decomposition {
    pub fn new(kernel: usize, dilation: usize) -> Result<Self> {
        let d = Decomposition { kernel, dilation };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "decomposed kernel must be odd, got {}",
                self.kernel
            )));
        }
        if self.dilation == 0 {
            return Err(Error::invalid("dilation must be >= 1"));
        }
        if self.composed_extent() < self.kernel {
            return Err(Error::invalid(format!(
                "decomposition ({}, {}) cannot cover the target kernel",
                self.kernel, self.dilation
            )));
        }
        if self.dilated_extent().is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "decomposition ({}, {}) gives an even dilated extent",
                self.kernel, self.dilation
            )));
        }
        Ok(())
    }

    /// `2d - 1`; always `>= d`, so the composed footprint has no holes.
    pub fn small_kernel(&self) -> usize {
        2 * self.dilation - 1
    }

    /// `ceil(K / d)`.
    pub fn dilated_kernel(&self) -> usize {
        self.kernel.div_ceil(self.dilation)
    }

    pub fn dilated_extent(&self) -> usize {
        self.dilation * (self.dilated_kernel() - 1) + 1
    }

    /// Side of the composed impulse response: `k_small + d (k_dilated - 1)`.
    pub fn composed_extent(&self) -> usize {
        self.small_kernel() + self.dilation * (self.dilated_kernel() - 1)
    }
}

impl Default for Decomposition {
    fn default() -> Self {
        Decomposition {
            kernel: 21,
            dilation: 3,
        }
    }
}

/// How the DLKCB branch is combined with its input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gating {
    /// `x + beta * branch`.
    #[default]
    Residual,
    /// Attention-style: the branch multiplies the projected input before the
    /// residual add.
    Multiply,
}

/// Wiring of the CEFN normalizations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CefnForm {
    /// Pre-norm: `x + alpha * BN_out(FN(BN_in x) * CA(BN_in x))`.
    #[default]
    Standard,
    /// Printed nesting: `x + BN_out(BN_in(FN(x) * (CA(x) * alpha)))`.
    Literal,
}

/// Structural options shared by every block of a network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockOptions {
    /// `None` replaces the decomposition by a plain depth-wise kernel.
    pub decomposition: Option<Decomposition>,
    pub plain_kernel: usize,
    pub use_cefn: bool,
    pub gating: Gating,
    pub cefn_form: CefnForm,
    pub ca_reduction: usize,
    pub mlp_ratio: usize,
    pub scale_init: f64,
}

impl Default for BlockOptions {
    fn default() -> Self {
        BlockOptions {
            decomposition: Some(Decomposition::default()),
            plain_kernel: 7,
            use_cefn: true,
            gating: Gating::Residual,
            cefn_form: CefnForm::Standard,
            ca_reduction: 8,
            mlp_ratio: 4,
            scale_init: 1e-2,
        }
    }
}

#[derive(Clone, Debug)]
enum SpatialMixer {
    Decomposed { small: Conv2d, dilated: Conv2d },
    Plain(Conv2d),
}

#[derive(Clone, Debug)]
pub struct Dlkcb {
    pub channels: usize,
    norm: BatchNorm2d,
    proj_in: Conv2d,
    mixer: SpatialMixer,
    proj_out: Conv2d,
    scale: Scale,
    gating: Gating,
}

impl Dlkcb {
    pub fn new<T: Real>(
        init: &mut Init<'_, T>,
        name: &str,
        channels: usize,
        opts: &BlockOptions,
    ) -> Result<Self> {
        let c = channels;
        let mixer = match opts.decomposition {
            Some(d) => {
                d.validate()?;
                SpatialMixer::Decomposed {
                    small: Conv2d::new(
                        init,
                        &format!("{name}.dw_small"),
                        ConvSpec::depthwise(c, d.small_kernel(), 1),
                    )?,
                    dilated: Conv2d::new(
                        init,
                        &format!("{name}.dw_dilated"),
                        ConvSpec::depthwise(c, d.dilated_kernel(), d.dilation),
                    )?,
                }
            }
            None => SpatialMixer::Plain(Conv2d::new(
                init,
                &format!("{name}.dw"),
                ConvSpec::depthwise(c, opts.plain_kernel, 1),
            )?),
        };
        Ok(Dlkcb {
            channels: c,
            norm: BatchNorm2d::new(init, &format!("{name}.norm"), c)?,
            proj_in: Conv2d::new(init, &format!("{name}.proj_in"), ConvSpec::pointwise(c, c))?,
            mixer,
            proj_out: Conv2d::new(init, &format!("{name}.proj_out"), ConvSpec::pointwise(c, c))?,
            scale: Scale::new(init, &format!("{name}.beta"), c, opts.scale_init)?,
            gating: opts.gating,
        })
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        check_channels(cx, x, self.channels, "dlkcb")?;
        let z = self.norm.forward(cx, x)?;
        let u = self.proj_in.forward(cx, z)?;
        let s = match &self.mixer {
            SpatialMixer::Decomposed { small, dilated } => {
                let s = small.forward(cx, u)?;
                dilated.forward(cx, s)?
            }
            SpatialMixer::Plain(dw) => dw.forward(cx, u)?,
        };
        let a = self.proj_out.forward(cx, s)?;
        let branch = match self.gating {
            Gating::Residual => a,
            Gating::Multiply => cx.graph.mul(u, a)?,
        };
        let scaled = self.scale.forward(cx, branch)?;
        cx.graph.add(x, scaled)
    }

    pub fn cost(&self, h: usize, w: usize, rows: &mut Vec<CostRow>) -> Result<()> {
        self.norm.cost(rows);
        self.proj_in.cost(h, w, rows)?;
        match &self.mixer {
            SpatialMixer::Decomposed { small, dilated } => {
                small.cost(h, w, rows)?;
                dilated.cost(h, w, rows)?;
            }
            SpatialMixer::Plain(dw) => {
                dw.cost(h, w, rows)?;
            }
        }
        self.proj_out.cost(h, w, rows)?;
        self.scale.cost(rows);
        Ok(())
    }
}

/// Squeeze-style channel gate `sigmoid(Linear(ReLU(Linear(GAP x))))`,
/// output `[N, C, 1, 1]`.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub channels: usize,
    pub hidden: usize,
    fc1: Linear,
    fc2: Linear,
}

impl ChannelAttention {
    /// Hidden width `C / reduction`, clamped to at least one unit.
    pub fn new<T: Real>(
        init: &mut Init<'_, T>,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> Result<Self> {
        let hidden = (channels / reduction.max(1)).max(1);
        Ok(ChannelAttention {
            channels,
            hidden,
            fc1: Linear::new(init, &format!("{name}.fc1"), channels, hidden, true)?,
            fc2: Linear::new(init, &format!("{name}.fc2"), hidden, channels, true)?,
        })
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let p = cx.graph.gap(x)?;
        let h = self.fc1.forward(cx, p)?;
        let h = act(cx, h, Activation::Relu);
        let o = self.fc2.forward(cx, h)?;
        Ok(act(cx, o, Activation::Sigmoid))
    }

    pub fn cost(&self, rows: &mut Vec<CostRow>) {
        self.fc1.cost(rows);
        self.fc2.cost(rows);
    }

    pub fn fc_ids(&self) -> [&Linear; 2] {
        [&self.fc1, &self.fc2]
    }
}

#[derive(Clone, Debug)]
pub struct Cefn {
    pub channels: usize,
    norm_in: BatchNorm2d,
    expand: Conv2d,
    dw: Option<Conv2d>,
    reduce: Conv2d,
    attention: Option<ChannelAttention>,
    norm_out: Option<BatchNorm2d>,
    scale: Scale,
    form: CefnForm,
}

impl Cefn {
    pub fn new<T: Real>(
        init: &mut Init<'_, T>,
        name: &str,
        channels: usize,
        opts: &BlockOptions,
    ) -> Result<Self> {
        let c = channels;
        let hidden = opts.mlp_ratio * c;
        if hidden == 0 {
            return Err(Error::invalid("mlp ratio must be positive"));
        }
        let enhanced = opts.use_cefn;
        Ok(Cefn {
            channels: c,
            norm_in: BatchNorm2d::new(init, &format!("{name}.norm_in"), c)?,
            expand: Conv2d::new(
                init,
                &format!("{name}.expand"),
                ConvSpec::pointwise(c, hidden),
            )?,
            dw: if enhanced {
                Some(Conv2d::new(
                    init,
                    &format!("{name}.dw3"),
                    ConvSpec::depthwise(hidden, 3, 1),
                )?)
            } else {
                None
            },
            reduce: Conv2d::new(
                init,
                &format!("{name}.reduce"),
                ConvSpec::pointwise(hidden, c),
            )?,
            attention: if enhanced {
                Some(ChannelAttention::new(
                    init,
                    &format!("{name}.ca"),
                    c,
                    opts.ca_reduction,
                )?)
            } else {
                None
            },
            norm_out: if enhanced {
                Some(BatchNorm2d::new(init, &format!("{name}.norm_out"), c)?)
            } else {
                None
            },
            scale: Scale::new(init, &format!("{name}.alpha"), c, opts.scale_init)?,
            form: opts.cefn_form,
        })
    }

    fn feed_forward<T: Real>(&self, cx: &mut Ctx<'_, T>, z: Var) -> Result<Var> {
        let mut h = self.expand.forward(cx, z)?;
        if let Some(dw) = &self.dw {
            h = dw.forward(cx, h)?;
        }
        let h = act(cx, h, Activation::Gelu);
        self.reduce.forward(cx, h)
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        check_channels(cx, x, self.channels, "cefn")?;
        let (Some(ca), Some(norm_out)) = (&self.attention, &self.norm_out) else {
            // Plain feed-forward network.
            let z = self.norm_in.forward(cx, x)?;
            let f = self.feed_forward(cx, z)?;
            let f = self.scale.forward(cx, f)?;
            return cx.graph.add(x, f);
        };
        match self.form {
            CefnForm::Standard => {
                let z = self.norm_in.forward(cx, x)?;
                let f = self.feed_forward(cx, z)?;
                let gate = ca.forward(cx, z)?;
                let g = cx.graph.mul(f, gate)?;
                let g = norm_out.forward(cx, g)?;
                let g = self.scale.forward(cx, g)?;
                cx.graph.add(x, g)
            }
            CefnForm::Literal => {
                let f = self.feed_forward(cx, x)?;
                let gate = ca.forward(cx, x)?;
                let gate = self.scale.forward(cx, gate)?;
                let g = cx.graph.mul(f, gate)?;
                let g = self.norm_in.forward(cx, g)?;
                let g = norm_out.forward(cx, g)?;
                cx.graph.add(x, g)
            }
        }
    }

    pub fn cost(&self, h: usize, w: usize, rows: &mut Vec<CostRow>) -> Result<()> {
        self.norm_in.cost(rows);
        self.expand.cost(h, w, rows)?;
        if let Some(dw) = &self.dw {
            dw.cost(h, w, rows)?;
        }
        self.reduce.cost(h, w, rows)?;
        if let Some(ca) = &self.attention {
            ca.cost(rows);
        }
        if let Some(n) = &self.norm_out {
            n.cost(rows);
        }
        self.scale.cost(rows);
        Ok(())
    }
}

/// DLKCB followed by CEFN; shape preserving.
#[derive(Clone, Debug)]
pub struct LkdBlock {
    pub dlkcb: Dlkcb,
    pub cefn: Cefn,
}

impl LkdBlock {
    pub fn new<T: Real>(
        init: &mut Init<'_, T>,
        name: &str,
        channels: usize,
        opts: &BlockOptions,
    ) -> Result<Self> {
        Ok(LkdBlock {
            dlkcb: Dlkcb::new(init, &format!("{name}.dlkcb"), channels, opts)?,
            cefn: Cefn::new(init, &format!("{name}.cefn"), channels, opts)?,
        })
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.dlkcb.forward(cx, x)?;
        self.cefn.forward(cx, y)
    }

    pub fn cost(&self, h: usize, w: usize, rows: &mut Vec<CostRow>) -> Result<()> {
        self.dlkcb.cost(h, w, rows)?;
        self.cefn.cost(h, w, rows)
    }
}

fn check_channels<T: Real>(cx: &Ctx<'_, T>, x: Var, expected: usize, op: &str) -> Result<()> {
    let c = cx.graph.value(x).c();
    if c != expected {
        return Err(Error::invalid(format!(
            "{op} built for {expected} channels, got {c}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::param::ParamStore;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    fn set_param(store: &mut ParamStore<f64>, suffix: &str, v: f64) {
        for p in store.params_mut() {
            if p.name.ends_with(suffix) {
                p.value.data_mut().iter_mut().for_each(|x| *x = v);
            }
        }
    }

    #[test]
    fn decomposition_defaults() {
        let d = Decomposition::default();
        assert_eq!((d.small_kernel(), d.dilated_kernel()), (5, 7));
        assert_eq!(d.composed_extent(), 23);
        let d13 = Decomposition::new(13, 3).unwrap();
        assert_eq!((d13.small_kernel(), d13.dilated_kernel()), (5, 5));
        assert_eq!(d13.composed_extent(), 17);
        assert!(Decomposition::new(20, 3).is_err());
        assert!(Decomposition::new(21, 0).is_err());
    }

    #[test]
    fn dlkcb_parameter_count_for_24_channels() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
        };
        let block = Dlkcb::new(&mut init, "b", 24, &BlockOptions::default()).unwrap();
        // BN 2C + PW_in C^2+C + DW5 25C+C + DW7 49C+C + PW_out C^2+C + beta C
        let expected = 2 * 24 + (576 + 24) + (600 + 24) + (1176 + 24) + (576 + 24) + 24;
        assert_eq!(store.num_params(), expected);
        assert_eq!(expected, 3096);
        let mut rows = Vec::new();
        block.cost(8, 8, &mut rows).unwrap();
        assert_eq!(rows.iter().map(|r| r.params).sum::<usize>(), expected);
    }

    fn build<F>(opts: BlockOptions, c: usize, f: F) -> (ParamStore<f64>, F::Output)
    where
        F: BuilderFn,
    {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
        };
        let b = f.build(&mut init, c, &opts);
        (store, b)
    }

    trait BuilderFn {
        type Output;
        fn build(&self, init: &mut Init<'_, f64>, c: usize, opts: &BlockOptions) -> Self::Output;
    }

    struct MkDlkcb;
    impl BuilderFn for MkDlkcb {
        type Output = Dlkcb;
        fn build(&self, init: &mut Init<'_, f64>, c: usize, opts: &BlockOptions) -> Dlkcb {
            Dlkcb::new(init, "d", c, opts).unwrap()
        }
    }

    struct MkCefn;
    impl BuilderFn for MkCefn {
        type Output = Cefn;
        fn build(&self, init: &mut Init<'_, f64>, c: usize, opts: &BlockOptions) -> Cefn {
            Cefn::new(init, "f", c, opts).unwrap()
        }
    }

    struct MkBlock;
    impl BuilderFn for MkBlock {
        type Output = LkdBlock;
        fn build(&self, init: &mut Init<'_, f64>, c: usize, opts: &BlockOptions) -> LkdBlock {
            LkdBlock::new(init, "blk", c, opts).unwrap()
        }
    }

    #[test]
    fn dlkcb_zero_branch_is_identity() {
        let x = random([2, 4, 8, 8], 1);
        for gating in [Gating::Residual, Gating::Multiply] {
            let opts = BlockOptions {
                gating,
                ..Default::default()
            };
            let (mut store, blk) = build(opts, 4, MkDlkcb);
            set_param(&mut store, "beta", 0.0);
            let mut cx = Ctx::new(&mut store, Mode::Train);
            let xv = cx.graph.input(x.clone(), false);
            let y = blk.forward(&mut cx, xv).unwrap();
            assert_eq!(cx.graph.value(y), &x);

            let (mut store, blk) = build(opts, 4, MkDlkcb);
            for p in store.params_mut() {
                if p.name.contains(".dw") || p.name.contains("proj") {
                    p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
                }
            }
            let mut cx = Ctx::new(&mut store, Mode::Eval);
            let xv = cx.graph.input(x.clone(), false);
            let y = blk.forward(&mut cx, xv).unwrap();
            assert_eq!(cx.graph.value(y), &x);
        }
    }

    #[test]
    fn dlkcb_branch_footprint_is_dense_23() {
        let (mut store, blk) = build(BlockOptions::default(), 1, MkDlkcb);
        for p in store.params_mut() {
            let v = if p.name.ends_with(".bias") { 0.0 } else { 1.0 };
            p.value.data_mut().iter_mut().for_each(|x| *x = v);
        }
        let mut x = Tensor::<f64>::zeros([1, 1, 41, 41]);
        x.set(0, 0, 20, 20, 1.0);
        let mut cx = Ctx::new(&mut store, Mode::Eval);
        let xv = cx.graph.input(x.clone(), false);
        let y = blk.forward(&mut cx, xv).unwrap();
        let branch = cx.graph.value(y).sub(&x).unwrap();
        let support: Vec<(usize, usize)> = (0..41)
            .flat_map(|r| (0..41).map(move |c| (r, c)))
            .filter(|&(r, c)| branch.at(0, 0, r, c).abs() > 1e-12)
            .collect();
        assert_eq!(support.len(), 23 * 23);
        assert!(support
            .iter()
            .all(|&(r, c)| (9..=31).contains(&r) && (9..=31).contains(&c)));
    }

    #[test]
    fn channel_attention_properties() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
        };
        let ca = ChannelAttention::new(&mut init, "ca", 16, 8).unwrap();
        assert_eq!(ca.hidden, 2);
        let x = random([2, 16, 5, 5], 3).map(|v| v * 50.0);
        // Reverse the pixel order in every plane.
        let permuted = Tensor::from_fn(x.shape(), |n, c, y, w| x.at(n, c, 4 - y, 4 - w));

        let mut cx = Ctx::new(&mut store, Mode::Eval);
        let a = cx.graph.input(x, false);
        let b = cx.graph.input(permuted, false);
        let ya = ca.forward(&mut cx, a).unwrap();
        let yb = ca.forward(&mut cx, b).unwrap();
        let (ta, tb) = (cx.graph.value(ya).clone(), cx.graph.value(yb).clone());
        assert_eq!(ta.shape(), [2, 16, 1, 1]);
        assert!(ta.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(ta.max_abs_diff(&tb) < 1e-12);

        for p in store.params_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut cx = Ctx::new(&mut store, Mode::Eval);
        let a = cx.graph.input(random([1, 16, 3, 3], 4), false);
        let y = ca.forward(&mut cx, a).unwrap();
        assert!(cx.graph.value(y).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn small_channel_count_clamps_hidden() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
        };
        let ca = ChannelAttention::new(&mut init, "ca", 4, 8).unwrap();
        assert_eq!(ca.hidden, 1);
    }

    #[test]
    fn cefn_zero_cases_are_identity() {
        let x = random([2, 8, 6, 6], 5);
        for form in [CefnForm::Standard, CefnForm::Literal] {
            let opts = BlockOptions {
                cefn_form: form,
                ..Default::default()
            };
            let (mut store, blk) = build(opts, 8, MkCefn);
            for p in store.params_mut() {
                if p.name.contains("reduce") {
                    p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
                }
            }
            // Zero FN output -> zero branch; in train mode BN_out of a zero
            // tensor is beta = 0.
            let mut cx = Ctx::new(&mut store, Mode::Train);
            let xv = cx.graph.input(x.clone(), false);
            let y = blk.forward(&mut cx, xv).unwrap();
            assert!(cx.graph.value(y).max_abs_diff(&x) == 0.0, "{form:?}");
        }
        let (mut store, blk) = build(BlockOptions::default(), 8, MkCefn);
        set_param(&mut store, "alpha", 0.0);
        let mut cx = Ctx::new(&mut store, Mode::Train);
        let xv = cx.graph.input(x.clone(), false);
        let y = blk.forward(&mut cx, xv).unwrap();
        assert_eq!(cx.graph.value(y), &x);
    }

    #[test]
    fn block_shape_and_identity_at_zero_scales() {
        let (mut store, blk) = build(BlockOptions::default(), 24, MkBlock);
        let x = random([1, 24, 16, 16], 7);
        let mut cx = Ctx::new(&mut store, Mode::Eval);
        let xv = cx.graph.input(x.clone(), false);
        let y = blk.forward(&mut cx, xv).unwrap();
        assert_eq!(cx.graph.value(y).shape(), [1, 24, 16, 16]);

        set_param(&mut store, "alpha", 0.0);
        set_param(&mut store, "beta", 0.0);
        let mut cx = Ctx::new(&mut store, Mode::Train);
        let xv = cx.graph.input(x.clone(), false);
        let y = blk.forward(&mut cx, xv).unwrap();
        assert_eq!(cx.graph.value(y), &x);
    }

    #[test]
    fn block_rejects_wrong_channels() {
        let (mut store, blk) = build(BlockOptions::default(), 8, MkBlock);
        let mut cx = Ctx::new(&mut store, Mode::Eval);
        let xv = cx.graph.input(Tensor::zeros([1, 4, 8, 8]), false);
        assert!(blk.forward(&mut cx, xv).is_err());
    }

    #[test]
    fn every_block_parameter_receives_gradient() {
        let (mut store, blk) = build(BlockOptions::default(), 8, MkBlock);
        // Scales at their 1e-2 init still pass gradient everywhere; use a
        // random cotangent so no parameter is trivially orthogonal.
        let x = random([2, 8, 8, 8], 8);
        let r = random([2, 8, 8, 8], 9);
        let mut cx = Ctx::new(&mut store, Mode::Train);
        let xv = cx.graph.input(x, true);
        let y = blk.forward(&mut cx, xv).unwrap();
        let l = cx.graph.weighted_sum(y, &r).unwrap();
        let grads = cx.graph.backward(l, None).unwrap();
        grads.accumulate_into(&mut store).unwrap();
        for p in store.params() {
            assert!(
                p.grad.data().iter().any(|&g| g != 0.0),
                "{} has an all-zero gradient",
                p.name
            );
        }
    }
}
