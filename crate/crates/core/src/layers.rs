//! Parameterized layers. A layer only holds ids into a [`ParamStore`]; all
//! mutable state (weights, grads, running statistics) lives in the store, so
//! a forward pass needs `&self` for the layers and `&mut` for the store.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{BnStats, Graph, Var};
use crate::error::Result;
use crate::nn::{Activation, BatchNormConfig, ConvSpec};
use crate::param::{BufferId, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Everything one forward pass needs.
pub struct Ctx<'a, T: Real> {
    pub graph: Graph<T>,
    pub store: &'a mut ParamStore<T>,
    pub mode: Mode,
}

impl<'a, T: Real> Ctx<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, mode: Mode) -> Self {
        Ctx {
            graph: Graph::new(),
            store,
            mode,
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.graph.param(self.store, id)
    }
}

/// One row of a cost report.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostRow {
    pub name: String,
    pub params: usize,
    pub macs: u64,
}

/// Creates parameters with uniform `±sqrt(1 / fan_in)` initialization.
pub struct Init<'a, T: Real> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<T: Real> Init<'_, T> {
    pub fn uniform(&mut self, name: &str, shape: [usize; 4], fan_in: usize) -> Result<ParamId> {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_, _, _, _| {
            T::from_f64(rng.gen_range(-bound..bound))
        });
        self.store.add_param(name, t)
    }

    pub fn constant(&mut self, name: &str, shape: [usize; 4], v: f64) -> Result<ParamId> {
        self.store
            .add_param(name, Tensor::full(shape, T::from_f64(v)))
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv2d {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        let [_, cin_g, kh, kw] = spec.weight_shape();
        let fan_in = cin_g * kh * kw;
        let weight = init.uniform(&format!("{name}.weight"), spec.weight_shape(), fan_in)?;
        let bias = if spec.bias {
            Some(init.uniform(&format!("{name}.bias"), spec.bias_shape(), fan_in)?)
        } else {
            None
        };
        Ok(Conv2d {
            name: name.to_string(),
            spec,
            weight,
            bias,
        })
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = cx.param(self.weight);
        let b = self.bias.map(|b| cx.param(b));
        cx.graph.conv2d(x, w, b, self.spec)
    }

    /// Appends a cost row; returns the output spatial size.
    pub fn cost(&self, h: usize, w: usize, rows: &mut Vec<CostRow>) -> Result<(usize, usize)> {
        rows.push(CostRow {
            name: self.name.clone(),
            params: self.spec.num_params(),
            macs: self.spec.macs(h, w)?,
        });
        self.spec.output_hw(h, w)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub name: String,
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub config: BatchNormConfig,
}

impl BatchNorm2d {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, channels: usize) -> Result<Self> {
        let shape = [1, channels, 1, 1];
        Ok(BatchNorm2d {
            name: name.to_string(),
            channels,
            gamma: init.constant(&format!("{name}.weight"), shape, 1.0)?,
            beta: init.constant(&format!("{name}.bias"), shape, 0.0)?,
            running_mean: init
                .store
                .add_buffer(format!("{name}.running_mean"), Tensor::zeros(shape))?,
            running_var: init
                .store
                .add_buffer(format!("{name}.running_var"), Tensor::ones(shape))?,
            config: BatchNormConfig::default(),
        })
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let gamma = cx.param(self.gamma);
        let beta = cx.param(self.beta);
        match cx.mode {
            Mode::Train => {
                let (y, stats) =
                    cx.graph
                        .batch_norm(x, gamma, beta, BnStats::Batch, self.config.eps)?;
                if let Some((mean, var)) = stats {
                    let m = T::from_f64(self.config.momentum);
                    let keep = T::one() - m;
                    let rm = cx.store.buffer_mut(self.running_mean).data_mut();
                    for (r, &b) in rm.iter_mut().zip(&mean) {
                        *r = keep * *r + m * b;
                    }
                    let rv = cx.store.buffer_mut(self.running_var).data_mut();
                    for (r, &b) in rv.iter_mut().zip(&var) {
                        *r = keep * *r + m * b;
                    }
                }
                Ok(y)
            }
            Mode::Eval => {
                let mean = cx.store.buffer(self.running_mean).data().to_vec();
                let var = cx.store.buffer(self.running_var).data().to_vec();
                let stats = BnStats::Running {
                    mean: &mean,
                    var: &var,
                };
                Ok(cx
                    .graph
                    .batch_norm(x, gamma, beta, stats, self.config.eps)?
                    .0)
            }
        }
    }

    pub fn cost(&self, rows: &mut Vec<CostRow>) {
        rows.push(CostRow {
            name: self.name.clone(),
            params: 2 * self.channels,
            macs: 0,
        });
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real>(
        init: &mut Init<'_, T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = init.uniform(
            &format!("{name}.weight"),
            [out_features, in_features, 1, 1],
            in_features,
        )?;
        let bias = if bias {
            Some(init.uniform(
                &format!("{name}.bias"),
                [1, out_features, 1, 1],
                in_features,
            )?)
        } else {
            None
        };
        Ok(Linear {
            name: name.to_string(),
            in_features,
            out_features,
            weight,
            bias,
        })
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = cx.param(self.weight);
        let b = self.bias.map(|b| cx.param(b));
        cx.graph.linear(x, w, b)
    }

    pub fn cost(&self, rows: &mut Vec<CostRow>) {
        let w = self.in_features * self.out_features;
        rows.push(CostRow {
            name: self.name.clone(),
            params: w + if self.bias.is_some() {
                self.out_features
            } else {
                0
            },
            macs: w as u64,
        });
    }
}

/// Learnable per-channel multiplier `[1, C, 1, 1]`.
#[derive(Clone, Debug)]
pub struct Scale {
    pub name: String,
    pub channels: usize,
    pub value: ParamId,
}

impl Scale {
    pub fn new<T: Real>(
        init: &mut Init<'_, T>,
        name: &str,
        channels: usize,
        v: f64,
    ) -> Result<Self> {
        Ok(Scale {
            name: name.to_string(),
            channels,
            value: init.constant(name, [1, channels, 1, 1], v)?,
        })
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let s = cx.param(self.value);
        cx.graph.mul(x, s)
    }

    pub fn cost(&self, rows: &mut Vec<CostRow>) {
        rows.push(CostRow {
            name: self.name.clone(),
            params: self.channels,
            macs: 0,
        });
    }
}

pub fn act<T: Real>(cx: &mut Ctx<'_, T>, x: Var, kind: Activation) -> Var {
    cx.graph.activation(x, kind)
}
