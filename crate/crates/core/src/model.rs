//! The five-stage U-Net assembly, its configuration presets and the
//! checkpoint format.
//!
//! ```text
//! stem 3x3 -> enc0 -> down -> enc1 -> down -> mid
//!          -> up -> fuse(enc1) -> dec1 -> up -> fuse(enc0) -> dec0
//!          -> head 3x3 -> soft reconstruction (or global residual)
//! ```
//!
//! Checkpoint layout (all text lines end in `\n`):
//!
//! ```text
//! LKDCKPT 1
//! config <LkdConfig as one-line JSON>
//! params <count> buffers <count>
//! param <name>      followed by one LKDT tensor record
//! ...
//! buffer <name>     followed by one LKDT tensor record
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::blocks::{BlockOptions, CefnForm, Decomposition, Gating, LkdBlock};
use crate::error::{Error, Result};
use crate::layers::{act, Conv2d, CostRow, Ctx, Init, Linear, Mode};
use crate::nn::{Activation, ConvSpec, Padding};
use crate::param::ParamStore;
use crate::tensor::{Real, Tensor};

const CHECKPOINT_MAGIC: &str = "LKDCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Network hyper-parameters. Every field has a default (the LKD-T preset), so
/// a JSON document only needs the fields it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LkdConfig {
    /// LKD blocks per stage: enc0, enc1, bottleneck, dec1, dec0.
    pub blocks: [usize; 5],
    pub dims: [usize; 5],
    pub mlp_ratio: [usize; 5],
    pub decomposition: Decomposition,
    /// Decomposed large kernel; otherwise a plain `plain_kernel` DW conv.
    pub use_dlk: bool,
    pub plain_kernel: usize,
    /// Channel-enhanced feed-forward; otherwise `PW -> GELU -> PW`.
    pub use_cefn: bool,
    /// SK fusion on skips; otherwise concatenation and a 1x1 conv.
    pub use_sk_fusion: bool,
    /// Four-channel gain/bias head; otherwise a three-channel global residual.
    pub use_soft_recon: bool,
    pub dlkcb_gating: Gating,
    pub cefn_form: CefnForm,
    pub ca_reduction: usize,
    pub sk_reduction: usize,
    /// Initial value of the per-channel residual scales.
    pub scale_init: f64,
}

impl Default for LkdConfig {
    fn default() -> Self {
        LkdConfig::preset(Variant::T)
    }
}

/// Published model sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    T,
    S,
    B,
    L,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::T, Variant::S, Variant::B, Variant::L];

    pub fn name(self) -> &'static str {
        match self {
            Variant::T => "LKD-T",
            Variant::S => "LKD-S",
            Variant::B => "LKD-B",
            Variant::L => "LKD-L",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().trim_start_matches("lkd-") {
            "t" => Ok(Variant::T),
            "s" => Ok(Variant::S),
            "b" => Ok(Variant::B),
            "l" => Ok(Variant::L),
            _ => Err(Error::invalid(format!("unknown variant {s:?}"))),
        }
    }
}

/// Rungs of the component ablation on LKD-T. `Dlk` and `Cefn` each add one
/// component on top of `Sr`; `Full` has both.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    Base,
    Sf,
    Sr,
    Dlk,
    Cefn,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Base,
        Ablation::Sf,
        Ablation::Sr,
        Ablation::Dlk,
        Ablation::Cefn,
        Ablation::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Base => "Base",
            Ablation::Sf => "+SF",
            Ablation::Sr => "+SR",
            Ablation::Dlk => "+DLK",
            Ablation::Cefn => "+CEFN",
            Ablation::Full => "full",
        }
    }
}

impl LkdConfig {
    pub fn preset(v: Variant) -> Self {
        let blocks = match v {
            Variant::T => [1, 1, 2, 1, 1],
            Variant::S => [2, 2, 4, 2, 2],
            Variant::B => [4, 4, 8, 4, 4],
            Variant::L => [8, 8, 16, 8, 8],
        };
        LkdConfig {
            blocks,
            dims: [24, 48, 96, 48, 24],
            mlp_ratio: [4; 5],
            decomposition: Decomposition::default(),
            use_dlk: true,
            plain_kernel: 7,
            use_cefn: true,
            use_sk_fusion: true,
            use_soft_recon: true,
            dlkcb_gating: Gating::Multiply,
            cefn_form: CefnForm::Standard,
            ca_reduction: 8,
            sk_reduction: 8,
            scale_init: 1e-2,
        }
    }

    /// One block per stage at dims `[8, 16, 32, 16, 8]`, for training runs
    /// that fit a laptop CPU.
    pub fn desk() -> Self {
        LkdConfig {
            blocks: [1; 5],
            dims: [8, 16, 32, 16, 8],
            ..LkdConfig::preset(Variant::T)
        }
    }

    pub fn ablation(step: Ablation) -> Self {
        let (sf, sr, dlk, cefn) = match step {
            Ablation::Base => (false, false, false, false),
            Ablation::Sf => (true, false, false, false),
            Ablation::Sr => (true, true, false, false),
            Ablation::Dlk => (true, true, true, false),
            Ablation::Cefn => (true, true, false, true),
            Ablation::Full => (true, true, true, true),
        };
        LkdConfig {
            use_sk_fusion: sf,
            use_soft_recon: sr,
            use_dlk: dlk,
            use_cefn: cefn,
            ..LkdConfig::preset(Variant::T)
        }
    }

    /// Replace the decomposed kernel by a plain `k x k` depth-wise kernel.
    pub fn with_plain_kernel(mut self, k: usize) -> Self {
        self.use_dlk = false;
        self.plain_kernel = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d[0] != d[4] || d[1] != d[3] {
            return Err(Error::invalid(format!(
                "dims must be symmetric (dims[0]==dims[4], dims[1]==dims[3]), got {d:?}"
            )));
        }
        if d.contains(&0) {
            return Err(Error::invalid("dims must be positive"));
        }
        if self.mlp_ratio.contains(&0) {
            return Err(Error::invalid("mlp_ratio must be positive"));
        }
        if self.use_dlk {
            self.decomposition.validate()?;
        } else if self.plain_kernel.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "plain kernel must be odd, got {}",
                self.plain_kernel
            )));
        }
        if self.ca_reduction == 0 || self.sk_reduction == 0 {
            return Err(Error::invalid("reductions must be positive"));
        }
        if !self.scale_init.is_finite() {
            return Err(Error::invalid("scale_init must be finite"));
        }
        Ok(())
    }

    fn block_options(&self, stage: usize) -> BlockOptions {
        BlockOptions {
            decomposition: self.use_dlk.then_some(self.decomposition),
            plain_kernel: self.plain_kernel,
            use_cefn: self.use_cefn,
            gating: self.dlkcb_gating,
            cefn_form: self.cefn_form,
            ca_reduction: self.ca_reduction,
            mlp_ratio: self.mlp_ratio[stage],
            scale_init: self.scale_init,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: LkdConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }
}

/// Channel-attention fusion of two equally shaped branches:
/// `w = softmax_branch(MLP(GAP(a + b)))`, `out = w_a * a + w_b * b`.
#[derive(Clone, Debug)]
pub struct SkFusion {
    pub channels: usize,
    pub hidden: usize,
    fc1: Linear,
    fc2: Linear,
}

impl SkFusion {
    pub fn new<T: Real>(
        init: &mut Init<'_, T>,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> Result<Self> {
        let hidden = (channels / reduction.max(1)).max(4);
        Ok(SkFusion {
            channels,
            hidden,
            fc1: Linear::new(init, &format!("{name}.fc1"), channels, hidden, false)?,
            fc2: Linear::new(init, &format!("{name}.fc2"), hidden, 2 * channels, false)?,
        })
    }

    /// Per-channel branch weights `[N, 2C, 1, 1]`; `[:, :C]` weighs `a`.
    pub fn weights<T: Real>(&self, cx: &mut Ctx<'_, T>, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (cx.graph.value(a).shape(), cx.graph.value(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: "sk_fusion",
                lhs: sa,
                rhs: sb,
            });
        }
        if sa[1] != self.channels {
            return Err(Error::invalid(format!(
                "sk fusion built for {} channels, got {}",
                self.channels, sa[1]
            )));
        }
        let s = cx.graph.add(a, b)?;
        let p = cx.graph.gap(s)?;
        let h = self.fc1.forward(cx, p)?;
        let h = act(cx, h, Activation::Relu);
        let logits = self.fc2.forward(cx, h)?;
        cx.graph.branch_softmax(logits, 2)
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, a: Var, b: Var) -> Result<Var> {
        let c = self.channels;
        let w = self.weights(cx, a, b)?;
        let wa = cx.graph.slice_channels(w, 0, c)?;
        let wb = cx.graph.slice_channels(w, c, c)?;
        let ya = cx.graph.mul(a, wa)?;
        let yb = cx.graph.mul(b, wb)?;
        cx.graph.add(ya, yb)
    }

    pub fn cost(&self, rows: &mut Vec<CostRow>) {
        self.fc1.cost(rows);
        self.fc2.cost(rows);
    }
}

#[derive(Clone, Debug)]
enum Fusion {
    /// 1x1 projection of the skip, then SK fusion.
    Sk { proj: Conv2d, sk: SkFusion },
    /// Concatenate, then a 1x1 conv back to `C` channels.
    Concat { conv: Conv2d },
}

impl Fusion {
    fn new<T: Real>(init: &mut Init<'_, T>, name: &str, c: usize, cfg: &LkdConfig) -> Result<Self> {
        Ok(if cfg.use_sk_fusion {
            Fusion::Sk {
                proj: Conv2d::new(init, &format!("{name}.proj"), ConvSpec::pointwise(c, c))?,
                sk: SkFusion::new(init, &format!("{name}.sk"), c, cfg.sk_reduction)?,
            }
        } else {
            Fusion::Concat {
                conv: Conv2d::new(init, &format!("{name}.conv"), ConvSpec::pointwise(2 * c, c))?,
            }
        })
    }

    fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, up: Var, skip: Var) -> Result<Var> {
        match self {
            Fusion::Sk { proj, sk } => {
                let s = proj.forward(cx, skip)?;
                sk.forward(cx, up, s)
            }
            Fusion::Concat { conv } => {
                let cat = cx.graph.concat(up, skip)?;
                conv.forward(cx, cat)
            }
        }
    }

    fn cost(&self, h: usize, w: usize, rows: &mut Vec<CostRow>) -> Result<()> {
        match self {
            Fusion::Sk { proj, sk } => {
                proj.cost(h, w, rows)?;
                sk.cost(rows);
            }
            Fusion::Concat { conv } => {
                conv.cost(h, w, rows)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Stage {
    blocks: Vec<LkdBlock>,
}

impl Stage {
    fn new<T: Real>(
        init: &mut Init<'_, T>,
        name: &str,
        cfg: &LkdConfig,
        index: usize,
    ) -> Result<Self> {
        let opts = cfg.block_options(index);
        let blocks = (0..cfg.blocks[index])
            .map(|k| LkdBlock::new(init, &format!("{name}.{k}"), cfg.dims[index], &opts))
            .collect::<Result<_>>()?;
        Ok(Stage { blocks })
    }

    fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, mut x: Var) -> Result<Var> {
        for b in &self.blocks {
            x = b.forward(cx, x)?;
        }
        Ok(x)
    }

    fn cost(&self, h: usize, w: usize, rows: &mut Vec<CostRow>) -> Result<()> {
        self.blocks.iter().try_for_each(|b| b.cost(h, w, rows))
    }
}

/// Layer graph; every weight lives in the owning [`LkdNet`]'s store.
#[derive(Clone, Debug)]
struct Layers {
    stem: Conv2d,
    enc0: Stage,
    down0: Conv2d,
    enc1: Stage,
    down1: Conv2d,
    mid: Stage,
    up1: Conv2d,
    fuse1: Fusion,
    dec1: Stage,
    up0: Conv2d,
    fuse0: Fusion,
    dec0: Stage,
    head: Conv2d,
}

/// Intermediate handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Taps {
    pub input: Var,
    pub bottleneck: Var,
    /// Last decoder feature map, before the head conv.
    pub pre_head: Var,
    /// Unclamped restored image.
    pub output: Var,
}

/// A recorded forward pass, ready for `backward`.
pub struct Trace<T: Real> {
    pub graph: Graph<T>,
    pub taps: Taps,
}

#[derive(Clone, Debug)]
pub struct LkdNet<T: Real = f32> {
    config: LkdConfig,
    layers: Layers,
    store: ParamStore<T>,
}

fn downsample(cin: usize, cout: usize) -> ConvSpec {
    ConvSpec::new(cin, cout, 2)
        .with_stride(2)
        .with_padding(Padding::Explicit(0, 0))
}

impl<T: Real> LkdNet<T> {
    /// Build with uniform `±sqrt(1/fan_in)` weights drawn from `seed`.
    pub fn build(config: LkdConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
        };
        let d = config.dims;
        let head_ch = if config.use_soft_recon { 4 } else { 3 };
        let i = &mut init;
        let layers = Layers {
            stem: Conv2d::new(i, "stem", ConvSpec::new(3, d[0], 3))?,
            enc0: Stage::new(i, "enc0", &config, 0)?,
            down0: Conv2d::new(i, "down0", downsample(d[0], d[1]))?,
            enc1: Stage::new(i, "enc1", &config, 1)?,
            down1: Conv2d::new(i, "down1", downsample(d[1], d[2]))?,
            mid: Stage::new(i, "mid", &config, 2)?,
            up1: Conv2d::new(i, "up1", ConvSpec::pointwise(d[2], 4 * d[3]))?,
            fuse1: Fusion::new(i, "fuse1", d[3], &config)?,
            dec1: Stage::new(i, "dec1", &config, 3)?,
            up0: Conv2d::new(i, "up0", ConvSpec::pointwise(d[3], 4 * d[4]))?,
            fuse0: Fusion::new(i, "fuse0", d[4], &config)?,
            dec0: Stage::new(i, "dec0", &config, 4)?,
            head: Conv2d::new(i, "head", ConvSpec::new(d[4], head_ch, 3))?,
        };
        Ok(LkdNet {
            config,
            layers,
            store,
        })
    }

    pub fn config(&self) -> &LkdConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    pub fn check_input(x: &Tensor<T>) -> Result<()> {
        let [n, c, h, w] = x.shape();
        if n == 0 || c != 3 {
            return Err(Error::invalid(format!(
                "expected a non-empty [N, 3, H, W] image batch, got {:?}",
                x.shape()
            )));
        }
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::invalid(format!(
                "image height and width must be positive multiples of 4, got {h}x{w}"
            )));
        }
        Ok(())
    }

    /// Run the network, recording a graph. Train mode uses batch statistics
    /// and updates the running ones.
    pub fn trace(&mut self, x: Tensor<T>, mode: Mode, input_grad: bool) -> Result<Trace<T>> {
        Self::check_input(&x)?;
        let mut cx = Ctx::new(&mut self.store, mode);
        let taps = self
            .layers
            .forward(&mut cx, x, self.config.use_soft_recon, input_grad)?;
        Ok(Trace {
            graph: cx.graph,
            taps,
        })
    }

    /// Eval-mode restoration, clamped to `[0, 1]`.
    pub fn predict(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let t = self.trace(x.clone(), Mode::Eval, false)?;
        Ok(t.graph
            .value(t.taps.output)
            .map(|v| v.max(T::zero()).min(T::one())))
    }

    /// Per-layer parameter and multiply-accumulate counts at `h x w` input.
    pub fn cost(&self, h: usize, w: usize) -> Result<Vec<CostRow>> {
        let l = &self.layers;
        let mut rows = Vec::new();
        let r = &mut rows;
        let (h0, w0) = l.stem.cost(h, w, r)?;
        l.enc0.cost(h0, w0, r)?;
        let (h1, w1) = l.down0.cost(h0, w0, r)?;
        l.enc1.cost(h1, w1, r)?;
        let (h2, w2) = l.down1.cost(h1, w1, r)?;
        l.mid.cost(h2, w2, r)?;
        l.up1.cost(h2, w2, r)?;
        l.fuse1.cost(h1, w1, r)?;
        l.dec1.cost(h1, w1, r)?;
        l.up0.cost(h1, w1, r)?;
        l.fuse0.cost(h0, w0, r)?;
        l.dec0.cost(h0, w0, r)?;
        l.head.cost(h0, w0, r)?;
        if self.config.use_soft_recon {
            // gain multiply and bias add, one MAC per output value
            r.push(CostRow {
                name: "soft_recon".into(),
                params: 0,
                macs: 3 * (h0 * w0) as u64,
            });
        }
        Ok(rows)
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        writeln!(out, "config {}", serde_json::to_string(&self.config)?)?;
        writeln!(
            out,
            "params {} buffers {}",
            self.store.params().len(),
            self.store.buffers().len()
        )?;
        for p in self.store.params() {
            writeln!(out, "param {}", p.name)?;
            p.value.write_to(out)?;
        }
        for b in self.store.buffers() {
            writeln!(out, "buffer {}", b.name)?;
            b.value.write_to(out)?;
        }
        Ok(())
    }

    pub fn read_from(input: &mut impl BufRead) -> Result<Self> {
        let header = read_line(input)?;
        let mut words = header.split_whitespace();
        if words.next() != Some(CHECKPOINT_MAGIC) {
            return Err(Error::format("not an LKD checkpoint"));
        }
        let version: u32 = parse_word(words.next(), "checkpoint version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let line = read_line(input)?;
        let json = line
            .strip_prefix("config ")
            .ok_or_else(|| Error::format("missing config line"))?;
        let config = LkdConfig::from_json(json)?;

        let line = read_line(input)?;
        let w: Vec<&str> = line.split_whitespace().collect();
        let (np, nb) = match w.as_slice() {
            ["params", p, "buffers", b] => (
                parse_word::<usize>(Some(p), "param count")?,
                parse_word::<usize>(Some(b), "buffer count")?,
            ),
            _ => return Err(Error::format("missing entry counts")),
        };
        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        for k in 0..np + nb {
            let line = read_line(input)?;
            let (kind, name) = line
                .split_once(' ')
                .ok_or_else(|| Error::format(format!("bad entry header {line:?}")))?;
            let expected = if k < np { "param" } else { "buffer" };
            if kind != expected {
                return Err(Error::format(format!(
                    "expected a {expected} entry, found {kind:?}"
                )));
            }
            let t = Tensor::<T>::read_from(input)?;
            let map = if k < np { &mut params } else { &mut buffers };
            if map.insert(name.to_string(), t).is_some() {
                return Err(Error::format(format!("duplicate entry {name:?}")));
            }
        }

        let mut net = LkdNet::build(config, 0)?;
        let mut missing = Vec::new();
        for p in net.store.params_mut() {
            match params.remove(&p.name) {
                Some(t) => assign(&p.name, &mut p.value, t)?,
                None => missing.push(p.name.clone()),
            }
        }
        for b in net.store.buffers_mut() {
            match buffers.remove(&b.name) {
                Some(t) => assign(&b.name, &mut b.value, t)?,
                None => missing.push(b.name.clone()),
            }
        }
        let extra: Vec<String> = params.into_keys().chain(buffers.into_keys()).collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::format(format!(
                "checkpoint does not match its config; missing: [{}]; extra: [{}]",
                missing.join(", "),
                extra.join(", ")
            )));
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

impl Layers {
    fn forward<T: Real>(
        &self,
        cx: &mut Ctx<'_, T>,
        x: Tensor<T>,
        soft_recon: bool,
        input_grad: bool,
    ) -> Result<Taps> {
        let input = cx.graph.input(x, input_grad);
        let s = self.stem.forward(cx, input)?;
        let e0 = self.enc0.forward(cx, s)?;
        let h = self.down0.forward(cx, e0)?;
        let e1 = self.enc1.forward(cx, h)?;
        let h = self.down1.forward(cx, e1)?;
        let bottleneck = self.mid.forward(cx, h)?;

        let h = self.up1.forward(cx, bottleneck)?;
        let h = cx.graph.pixel_shuffle(h, 2)?;
        let h = self.fuse1.forward(cx, h, e1)?;
        let h = self.dec1.forward(cx, h)?;
        let h = self.up0.forward(cx, h)?;
        let h = cx.graph.pixel_shuffle(h, 2)?;
        let h = self.fuse0.forward(cx, h, e0)?;
        let pre_head = self.dec0.forward(cx, h)?;

        let head = self.head.forward(cx, pre_head)?;
        let output = if soft_recon {
            cx.graph.soft_reconstruction(head, input)?
        } else {
            cx.graph.add(head, input)?
        };
        Ok(Taps {
            input,
            bottleneck,
            pre_head,
            output,
        })
    }
}

fn assign<T: Real>(name: &str, dst: &mut Tensor<T>, src: Tensor<T>) -> Result<()> {
    if dst.shape() != src.shape() {
        return Err(Error::format(format!(
            "entry {name:?} has shape {:?}, expected {:?}",
            src.shape(),
            dst.shape()
        )));
    }
    *dst = src;
    Ok(())
}

fn read_line(input: &mut impl BufRead) -> Result<String> {
    let mut buf = Vec::new();
    let n = input.by_ref().take(1 << 20).read_until(b'\n', &mut buf)?;
    if n == 0 || buf.last() != Some(&b'\n') {
        return Err(Error::format("truncated checkpoint"));
    }
    buf.pop();
    String::from_utf8(buf).map_err(|_| Error::format("checkpoint header is not UTF-8"))
}

fn parse_word<V: std::str::FromStr>(w: Option<&str>, what: &str) -> Result<V> {
    w.and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(format!("bad {what}")))
}
