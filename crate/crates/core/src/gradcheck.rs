//! Central finite-difference checks of every backward rule, in `f64`.
//!
//! Each case builds a small randomized subject (a closure over the graph API,
//! a block, or a whole network), reduces its output to a scalar with a fixed
//! random cotangent (a weighted mean), and compares the analytic gradient of every input and
//! parameter against `(f(x + h) - f(x - h)) / 2h` on sampled elements.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::blocks::{
    BlockOptions, Cefn, CefnForm, ChannelAttention, Decomposition, Dlkcb, Gating, LkdBlock,
};
use crate::error::{Error, Result};
use crate::layers::{act, BatchNorm2d, Conv2d, Ctx, Init, Linear, Mode};
use crate::model::{Ablation, LkdConfig, LkdNet, SkFusion};
use crate::nn::{Activation, ConvSpec, Padding};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
/// Elements checked per tensor; smaller tensors are checked exhaustively.
pub const SAMPLES_PER_TENSOR: usize = 8;
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

type Forward = Box<dyn Fn(&mut Ctx<'_, f64>, &[Var]) -> Result<Var>>;

enum Subject {
    Ops {
        store: ParamStore<f64>,
        mode: Mode,
        forward: Forward,
    },
    Net(Box<LkdNet<f64>>, Mode),
}

struct Probe {
    subject: Subject,
    inputs: Vec<Tensor<f64>>,
    cotangent: Option<Tensor<f64>>,
    rng: ChaCha8Rng,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

/// Values with `lo <= |v| < hi` and random sign, to keep clear of kinks at 0.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.gen_range(lo..hi);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Moves every parameter and running statistic off its structured
/// initialization (unit gains, zero biases, tiny scales).
fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for p in store.params_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
    }
    for b in store.buffers_mut() {
        let var = b.name.ends_with("running_var");
        for v in b.value.data_mut() {
            *v = if var {
                rng.gen_range(0.5..1.5)
            } else {
                rng.gen_range(-0.5..0.5)
            };
        }
    }
}

impl Probe {
    fn ops(
        seed: u64,
        mode: Mode,
        build: impl FnOnce(&mut Init<'_, f64>) -> Result<Forward>,
        inputs: impl FnOnce(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
    ) -> Result<Probe> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let forward = build(&mut Init {
            store: &mut store,
            rng: &mut rng,
        })?;
        randomize(&mut store, &mut rng);
        let inputs = inputs(&mut rng);
        Ok(Probe {
            subject: Subject::Ops {
                store,
                mode,
                forward,
            },
            inputs,
            cotangent: None,
            rng,
        })
    }

    fn store_mut(&mut self) -> &mut ParamStore<f64> {
        match &mut self.subject {
            Subject::Ops { store, .. } => store,
            Subject::Net(net, _) => net.store_mut(),
        }
    }

    fn run_parts(&mut self) -> Result<(Graph<f64>, Var, Var)> {
        let (g, root, _, out) = self.run_full()?;
        Ok((g, root, out))
    }

    /// Forward pass; returns the graph, the scalar root and the input nodes.
    fn run(&mut self) -> Result<(Graph<f64>, Var, Vec<Var>)> {
        let (g, root, vars, _) = self.run_full()?;
        Ok((g, root, vars))
    }

    fn run_full(&mut self) -> Result<(Graph<f64>, Var, Vec<Var>, Var)> {
        let (mut graph, out, vars) = match &mut self.subject {
            Subject::Ops {
                store,
                mode,
                forward,
            } => {
                let mut cx = Ctx::new(store, *mode);
                let vars: Vec<Var> = self
                    .inputs
                    .iter()
                    .map(|t| cx.graph.input(t.clone(), true))
                    .collect();
                let out = forward(&mut cx, &vars)?;
                (cx.graph, out, vars)
            }
            Subject::Net(net, mode) => {
                let t = net.trace(self.inputs[0].clone(), *mode, true)?;
                (t.graph, t.taps.output, vec![t.taps.input])
            }
        };
        let shape = graph.value(out).shape();
        if shape == [1, 1, 1, 1] {
            return Ok((graph, out, vars, out));
        }
        // A mean rather than a sum keeps the loss O(1), so the round-off in
        // `f(x + h) - f(x - h)` stays below the relative-error floor where the
        // true gradient is exactly zero (e.g. a bias feeding batch-norm).
        let rng = &mut self.rng;
        let cot = self.cotangent.get_or_insert_with(|| {
            let n = shape.iter().product::<usize>() as f64;
            uniform(rng, shape, -1.0, 1.0).map(|v| v / n)
        });
        let root = graph.weighted_sum(out, cot)?;
        Ok((graph, root, vars, out))
    }

    /// The probe scalar, re-summed with Neumaier compensation so the
    /// finite difference sees the network's round-off and not the reduction's.
    fn loss(&mut self) -> Result<f64> {
        let (g, root, out) = self.run_parts()?;
        let Some(cot) = &self.cotangent else {
            return Ok(g.value(root).data()[0]);
        };
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for (&y, &w) in g.value(out).data().iter().zip(cot.data()) {
            let p = y * w;
            let t = sum + p;
            comp += if sum.abs() >= p.abs() {
                (sum - t) + p
            } else {
                (p - t) + sum
            };
            sum = t;
        }
        Ok(sum + comp)
    }

    fn numeric(&mut self, target: Target, k: usize) -> Result<f64> {
        let orig = self.element(target, k);
        self.set_element(target, k, orig + STEP);
        let up = self.loss()?;
        self.set_element(target, k, orig - STEP);
        let down = self.loss()?;
        self.set_element(target, k, orig);
        Ok((up - down) / (2.0 * STEP))
    }

    fn element(&mut self, target: Target, k: usize) -> f64 {
        match target {
            Target::Input(i) => self.inputs[i].data()[k],
            Target::Param(id) => self.store_mut().param(id).value.data()[k],
        }
    }

    fn set_element(&mut self, target: Target, k: usize, v: f64) {
        match target {
            Target::Input(i) => self.inputs[i].data_mut()[k] = v,
            Target::Param(id) => self.store_mut().param_mut(id).value.data_mut()[k] = v,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Target {
    Input(usize),
    Param(ParamId),
}

/// Outcome of one case at one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub case: &'static str,
    pub seed: u64,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Where the largest error occurred.
    pub worst: String,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err < TOLERANCE
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<22} seed {} checked {:>4} max rel err {:.3e} at {}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.case,
            self.seed,
            self.checked,
            self.max_rel_err,
            self.worst
        )
    }
}

fn check(case: &'static str, seed: u64, mut probe: Probe) -> Result<CheckResult> {
    let (graph, root, vars) = probe.run()?;
    let grads = graph.backward(root, None)?;
    let mut targets: Vec<(Target, String, Tensor<f64>)> = Vec::new();
    for (i, &v) in vars.iter().enumerate() {
        let g = grads
            .get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros_like(&probe.inputs[i]));
        targets.push((Target::Input(i), format!("input{i}"), g));
    }
    let mut pgrads: Vec<(ParamId, Tensor<f64>)> =
        grads.param_grads().map(|(id, g)| (id, g.clone())).collect();
    pgrads.sort_by_key(|p| p.0);
    drop(graph);
    let store = probe.store_mut();
    for (id, g) in pgrads {
        targets.push((Target::Param(id), store.param(id).name.clone(), g));
    }
    // Parameters the graph never touched would silently escape the check.
    let used = targets.len() - vars.len();
    if used != probe.store_mut().params().len() {
        return Err(Error::Numeric(format!(
            "{case}: {} of {} parameters received no gradient",
            probe.store_mut().params().len() - used,
            probe.store_mut().params().len()
        )));
    }

    let mut result = CheckResult {
        case,
        seed,
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    for (target, name, g) in targets {
        let n = g.len();
        let idx: Vec<usize> = if n <= SAMPLES_PER_TENSOR {
            (0..n).collect()
        } else {
            sample(&mut pick, n, SAMPLES_PER_TENSOR).into_vec()
        };
        for k in idx {
            let a = g.data()[k];
            let num = probe.numeric(target, k)?;
            let e = relative_error(a, num);
            result.checked += 1;
            if e > result.max_rel_err || !e.is_finite() {
                result.max_rel_err = if e.is_finite() { e } else { f64::INFINITY };
                result.worst = format!("{name}[{k}] analytic {a:.6e} numeric {num:.6e}");
            }
        }
    }
    Ok(result)
}

type Builder = fn(u64) -> Result<Probe>;

fn conv_case(seed: u64, spec: ConvSpec, shape: Shape) -> Result<Probe> {
    Probe::ops(
        seed,
        Mode::Train,
        |init| {
            let conv = Conv2d::new(init, "conv", spec)?;
            Ok(Box::new(move |cx, v| conv.forward(cx, v[0])))
        },
        |rng| vec![uniform(rng, shape, -1.0, 1.0)],
    )
}

fn activation_case(seed: u64, kind: Activation) -> Result<Probe> {
    Probe::ops(
        seed,
        Mode::Train,
        |_| Ok(Box::new(move |cx, v| Ok(act(cx, v[0], kind)))),
        |rng| vec![away_from_zero(rng, [2, 4, 8, 8], 0.05, 2.0)],
    )
}

fn bn_case(seed: u64, mode: Mode) -> Result<Probe> {
    Probe::ops(
        seed,
        mode,
        |init| {
            let bn = BatchNorm2d::new(init, "bn", 4)?;
            Ok(Box::new(move |cx, v| bn.forward(cx, v[0])))
        },
        |rng| vec![uniform(rng, [2, 4, 8, 8], -1.0, 1.0)],
    )
}

fn block_opts(gating: Gating, form: CefnForm) -> BlockOptions {
    BlockOptions {
        gating,
        cefn_form: form,
        ..BlockOptions::default()
    }
}

fn dlkcb_case(seed: u64, gating: Gating, decomposition: Option<Decomposition>) -> Result<Probe> {
    Probe::ops(
        seed,
        Mode::Train,
        |init| {
            let opts = BlockOptions {
                decomposition,
                ..block_opts(gating, CefnForm::Standard)
            };
            let b = Dlkcb::new(init, "dlkcb", 8, &opts)?;
            Ok(Box::new(move |cx, v| b.forward(cx, v[0])))
        },
        |rng| vec![uniform(rng, [2, 8, 8, 8], -1.0, 1.0)],
    )
}

fn cefn_case(seed: u64, form: CefnForm) -> Result<Probe> {
    Probe::ops(
        seed,
        Mode::Train,
        |init| {
            let b = Cefn::new(init, "cefn", 8, &block_opts(Gating::Residual, form))?;
            Ok(Box::new(move |cx, v| b.forward(cx, v[0])))
        },
        |rng| vec![uniform(rng, [2, 8, 8, 8], -1.0, 1.0)],
    )
}

/// Whole network in eval mode. The running statistics are first warmed on
/// the probe batch, so every batch-norm is a well-scaled affine map and every
/// parameter has a genuine gradient. (Under batch statistics some parameters,
/// such as a bias feeding a batch-norm, have an exactly zero gradient that a
/// step-1e-4 difference can only resolve to about 1e-12.)
fn net_case(seed: u64, config: LkdConfig) -> Result<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = LkdNet::<f64>::build(config, seed)?;
    randomize(net.store_mut(), &mut rng);
    let x = uniform(&mut rng, [2, 3, 8, 8], 0.0, 1.0);
    for _ in 0..WARMUP_PASSES {
        net.trace(x.clone(), Mode::Train, false)?;
    }
    Ok(Probe {
        subject: Subject::Net(Box::new(net), Mode::Eval),
        inputs: vec![x],
        cotangent: None,
        rng,
    })
}

/// Running statistics converge as `0.9^k`; 300 passes leave ~1e-14.
const WARMUP_PASSES: usize = 300;

/// Every named case, in suite order.
const CASES: &[(&str, Builder)] = &[
    ("conv_dense", |s| {
        conv_case(s, ConvSpec::new(3, 4, 3), [2, 3, 6, 6])
    }),
    ("conv_pointwise", |s| {
        conv_case(s, ConvSpec::pointwise(4, 6), [2, 4, 5, 5])
    }),
    ("conv_strided", |s| {
        let spec = ConvSpec::new(3, 4, 2)
            .with_stride(2)
            .with_padding(Padding::Explicit(0, 0));
        conv_case(s, spec, [2, 3, 8, 8])
    }),
    ("conv_strided_same", |s| {
        conv_case(s, ConvSpec::new(2, 3, 3).with_stride(2), [2, 2, 7, 7])
    }),
    ("conv_depthwise", |s| {
        conv_case(s, ConvSpec::depthwise(4, 3, 1), [2, 4, 8, 8])
    }),
    ("conv_depthwise_dilated", |s| {
        conv_case(
            s,
            ConvSpec::depthwise(4, 5, 2).with_bias(false),
            [2, 4, 8, 8],
        )
    }),
    ("conv_dilated_wide", |s| {
        // Reach past the input on every side.
        conv_case(s, ConvSpec::depthwise(2, 7, 3), [1, 2, 5, 6])
    }),
    ("batch_norm_train", |s| bn_case(s, Mode::Train)),
    ("batch_norm_eval", |s| bn_case(s, Mode::Eval)),
    ("relu", |s| activation_case(s, Activation::Relu)),
    ("gelu", |s| activation_case(s, Activation::Gelu)),
    ("sigmoid", |s| activation_case(s, Activation::Sigmoid)),
    ("linear", |s| {
        Probe::ops(
            s,
            Mode::Train,
            |init| {
                let l = Linear::new(init, "fc", 4, 3, true)?;
                Ok(Box::new(move |cx, v| l.forward(cx, v[0])))
            },
            |rng| vec![uniform(rng, [2, 4, 1, 1], -1.0, 1.0)],
        )
    }),
    ("pixel_shuffle", |s| {
        Probe::ops(
            s,
            Mode::Train,
            |_| Ok(Box::new(|cx, v| cx.graph.pixel_shuffle(v[0], 2))),
            |rng| vec![uniform(rng, [2, 8, 4, 4], -1.0, 1.0)],
        )
    }),
    ("pixel_unshuffle", |s| {
        Probe::ops(
            s,
            Mode::Train,
            |_| Ok(Box::new(|cx, v| cx.graph.pixel_unshuffle(v[0], 2))),
            |rng| vec![uniform(rng, [2, 2, 8, 8], -1.0, 1.0)],
        )
    }),
    ("broadcast_arith", |s| {
        Probe::ops(
            s,
            Mode::Train,
            |_| {
                Ok(Box::new(|cx, v| {
                    let g = &mut cx.graph;
                    let m = g.mul(v[0], v[1])?;
                    let a = g.add(m, v[1])?;
                    let d = g.sub(a, v[2])?;
                    g.mul(d, v[2])
                }))
            },
            |rng| {
                vec![
                    uniform(rng, [2, 4, 4, 4], -1.0, 1.0),
                    uniform(rng, [1, 4, 1, 1], -1.0, 1.0),
                    uniform(rng, [2, 4, 4, 4], -1.0, 1.0),
                ]
            },
        )
    }),
    ("two_consumers", |s| {
        Probe::ops(
            s,
            Mode::Train,
            |init| {
                let conv = Conv2d::new(init, "conv", ConvSpec::new(3, 3, 3))?;
                Ok(Box::new(move |cx, v| {
                    let a = conv.forward(cx, v[0])?;
                    let b = act(cx, v[0], Activation::Gelu);
                    cx.graph.add(a, b)
                }))
            },
            |rng| vec![uniform(rng, [2, 3, 6, 6], -1.0, 1.0)],
        )
    }),
    ("gap_concat_slice", |s| {
        Probe::ops(
            s,
            Mode::Train,
            |_| {
                Ok(Box::new(|cx, v| {
                    let g = &mut cx.graph;
                    let c = g.concat(v[0], v[1])?;
                    let p = g.gap(c)?;
                    let a = g.slice_channels(c, 1, 3)?;
                    let q = g.slice_channels(p, 1, 3)?;
                    g.mul(a, q)
                }))
            },
            |rng| {
                vec![
                    uniform(rng, [2, 2, 4, 4], -1.0, 1.0),
                    uniform(rng, [2, 3, 4, 4], -1.0, 1.0),
                ]
            },
        )
    }),
    ("branch_softmax", |s| {
        Probe::ops(
            s,
            Mode::Train,
            |_| Ok(Box::new(|cx, v| cx.graph.branch_softmax(v[0], 2))),
            |rng| vec![uniform(rng, [2, 8, 1, 1], -2.0, 2.0)],
        )
    }),
    ("channel_attention", |s| {
        Probe::ops(
            s,
            Mode::Train,
            |init| {
                let ca = ChannelAttention::new(init, "ca", 8, 4)?;
                Ok(Box::new(move |cx, v| {
                    let w = ca.forward(cx, v[0])?;
                    cx.graph.mul(v[0], w)
                }))
            },
            |rng| vec![uniform(rng, [2, 8, 4, 4], -1.0, 1.0)],
        )
    }),
    ("cefn", |s| cefn_case(s, CefnForm::Standard)),
    ("cefn_literal", |s| cefn_case(s, CefnForm::Literal)),
    ("dlkcb", |s| {
        dlkcb_case(s, Gating::Residual, Some(Decomposition::default()))
    }),
    ("dlkcb_multiply", |s| {
        dlkcb_case(s, Gating::Multiply, Some(Decomposition::default()))
    }),
    ("dlkcb_plain", |s| dlkcb_case(s, Gating::Residual, None)),
    ("lkd_block", |s| {
        Probe::ops(
            s,
            Mode::Train,
            |init| {
                let b = LkdBlock::new(init, "block", 8, &BlockOptions::default())?;
                Ok(Box::new(move |cx, v| b.forward(cx, v[0])))
            },
            |rng| vec![uniform(rng, [2, 8, 8, 8], -1.0, 1.0)],
        )
    }),
    ("sk_fusion", |s| {
        Probe::ops(
            s,
            Mode::Train,
            |init| {
                let sk = SkFusion::new(init, "sk", 4, 8)?;
                Ok(Box::new(move |cx, v| sk.forward(cx, v[0], v[1])))
            },
            |rng| {
                vec![
                    uniform(rng, [2, 4, 4, 4], -1.0, 1.0),
                    uniform(rng, [2, 4, 4, 4], -1.0, 1.0),
                ]
            },
        )
    }),
    ("soft_reconstruction", |s| {
        Probe::ops(
            s,
            Mode::Train,
            |_| Ok(Box::new(|cx, v| cx.graph.soft_reconstruction(v[0], v[1]))),
            |rng| {
                vec![
                    uniform(rng, [2, 4, 4, 4], -1.0, 1.0),
                    uniform(rng, [2, 3, 4, 4], 0.0, 1.0),
                ]
            },
        )
    }),
    ("l1_loss", |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x5555);
        let target = uniform(&mut rng, [2, 3, 4, 4], 0.0, 1.0);
        let offset = away_from_zero(&mut rng, [2, 3, 4, 4], 0.01, 0.5);
        let pred = target.add(&offset)?;
        Probe::ops(
            s,
            Mode::Train,
            move |_| Ok(Box::new(move |cx, v| cx.graph.l1_loss(v[0], &target))),
            move |_| vec![pred],
        )
    }),
    ("model", |s| net_case(s, LkdConfig::desk())),
    ("model_base", |s| {
        let base = LkdConfig::ablation(Ablation::Base);
        let config = LkdConfig {
            blocks: [1; 5],
            dims: [8, 16, 32, 16, 8],
            ..base
        };
        net_case(s, config)
    }),
];

pub fn case_names() -> impl Iterator<Item = &'static str> {
    CASES.iter().map(|c| c.0)
}

/// Run one case at one seed.
pub fn run_case(name: &str, seed: u64) -> Result<CheckResult> {
    let &(case, build) = CASES
        .iter()
        .find(|c| c.0 == name)
        .ok_or_else(|| Error::invalid(format!("unknown gradient check {name:?}")))?;
    check(case, seed, build(seed)?)
}

/// Every case (or only `only`) at every seed.
pub fn run_suite(only: Option<&str>, seeds: &[u64]) -> Result<Vec<CheckResult>> {
    let names: Vec<&str> = match only {
        Some(n) => {
            if !case_names().any(|c| c == n) {
                return Err(Error::invalid(format!("unknown gradient check {n:?}")));
            }
            vec![n]
        }
        None => case_names().collect(),
    };
    let mut out = Vec::new();
    for n in names {
        for &s in seeds {
            out.push(run_case(n, s)?);
        }
    }
    Ok(out)
}
