//! L1 training with AdamW and cosine annealing, plus evaluation.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::haze::HazePair;
use crate::layers::Mode;
use crate::metrics::{psnr, ssim};
use crate::model::LkdNet;
use crate::param::ParamStore;
use crate::tensor::{Real, Tensor};

pub const METRICS_HEADER: &str = "step,lr,loss,psnr,ssim";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub betas: [f64; 2],
    pub weight_decay: f64,
    pub eps: f64,
    pub steps: usize,
    pub batch: usize,
    pub patch: usize,
    pub lr_min: f64,
    pub seed: u64,
    /// Evaluate every this many steps (and after the last one); 0 disables
    /// the periodic evaluation.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 2e-4,
            betas: [0.9, 0.999],
            weight_decay: 0.01,
            eps: 1e-8,
            steps: 2000,
            batch: 4,
            patch: 64,
            lr_min: 0.0,
            seed: 0,
            eval_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::invalid("batch must be >= 1"));
        }
        if self.patch == 0 || !self.patch.is_multiple_of(4) {
            return Err(Error::invalid(format!(
                "patch must be a positive multiple of 4, got {}",
                self.patch
            )));
        }
        let [b1, b2] = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::invalid("betas must lie in [0, 1)"));
        }
        if !(self.lr0 >= 0.0 && self.lr_min >= 0.0 && self.weight_decay >= 0.0 && self.eps > 0.0) {
            return Err(Error::invalid(
                "lr0, lr_min and weight_decay must be >= 0 and eps > 0",
            ));
        }
        Ok(())
    }
}

/// `lr_min + (lr0 - lr_min) (1 + cos(pi step / total)) / 2`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64, lr_min: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("cosine schedule needs total > 0"));
    }
    if step > total {
        return Err(Error::invalid(format!(
            "step {step} past the end of a {total}-step schedule"
        )));
    }
    let phase = std::f64::consts::PI * step as f64 / total as f64;
    Ok(lr_min + (lr0 - lr_min) * (1.0 + phase.cos()) / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Per-parameter moments and the step counter.
#[derive(Clone, Debug)]
pub struct AdamW<T: Real> {
    pub config: AdamWConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamW<T> {
    pub fn new(store: &ParamStore<T>, config: AdamWConfig) -> Self {
        let zeros = || {
            store
                .params()
                .iter()
                .map(|p| Tensor::zeros_like(&p.value))
                .collect()
        };
        AdamW {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// Decoupled decay `w -= lr wd w`, then the bias-corrected Adam update.
    /// Gradients are zeroed afterwards. A non-finite gradient aborts before
    /// anything is modified.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.m.len() != store.params().len() {
            return Err(Error::invalid(
                "optimizer state does not match the parameters",
            ));
        }
        if let Some(p) = store.params().iter().find(|p| !p.grad.all_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in {}", p.name)));
        }
        self.t += 1;
        let c = self.config;
        let t = self.t as i32;
        let bc1 = T::from_f64(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one, eps) = (T::one(), T::from_f64(c.eps));
        let lr_t = T::from_f64(lr);
        let decay = one - T::from_f64(lr * c.weight_decay);
        for (k, p) in store.params_mut().iter_mut().enumerate() {
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let g = p.grad.data();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                *w = *w * decay;
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w = *w - lr_t * mhat / (vhat.sqrt() + eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

/// One evaluation-point record of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub lr: f64,
    /// Mean training loss since the previous record.
    pub loss: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.step, r.lr, r.loss, r.psnr, r.ssim).expect("string write");
    }
    s
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub metrics: Vec<MetricRow>,
    /// Training loss of every step.
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub psnr: f64,
    pub ssim: f64,
    /// Scores of the hazy input itself, the do-nothing baseline.
    pub hazy_psnr: f64,
    pub hazy_ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub images: Vec<ImageScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_hazy_psnr: f64,
    pub mean_hazy_ssim: f64,
}

impl EvalReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("image,psnr,ssim,hazy_psnr,hazy_ssim\n");
        for (k, r) in self.images.iter().enumerate() {
            writeln!(
                s,
                "{k},{},{},{},{}",
                r.psnr, r.ssim, r.hazy_psnr, r.hazy_ssim
            )
            .expect("string write");
        }
        writeln!(
            s,
            "mean,{},{},{},{}",
            self.mean_psnr, self.mean_ssim, self.mean_hazy_psnr, self.mean_hazy_ssim
        )
        .expect("string write");
        s
    }
}

/// Full-image, eval-mode scores (outputs clamped to `[0, 1]`).
pub fn evaluate(net: &mut LkdNet<f32>, pairs: &[HazePair]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluate"));
    }
    let mut images = Vec::with_capacity(pairs.len());
    for p in pairs {
        let out = net.predict(&p.hazy)?;
        images.push(ImageScore {
            psnr: psnr(&out, &p.clean, 1.0)?,
            ssim: ssim(&out, &p.clean, 1.0)?,
            hazy_psnr: psnr(&p.hazy, &p.clean, 1.0)?,
            hazy_ssim: ssim(&p.hazy, &p.clean, 1.0)?,
        });
    }
    let mean = |f: fn(&ImageScore) -> f64| images.iter().map(f).sum::<f64>() / images.len() as f64;
    Ok(EvalReport {
        mean_psnr: mean(|r| r.psnr),
        mean_ssim: mean(|r| r.ssim),
        mean_hazy_psnr: mean(|r| r.hazy_psnr),
        mean_hazy_ssim: mean(|r| r.hazy_ssim),
        images,
    })
}

/// Random `patch x patch` crops from `batch` random pairs.
pub fn sample_batch(
    pairs: &[HazePair],
    batch: usize,
    patch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let mut hazy = Vec::with_capacity(batch * 3 * patch * patch);
    let mut clean = Vec::with_capacity(batch * 3 * patch * patch);
    for _ in 0..batch {
        let p = &pairs[rng.gen_range(0..pairs.len())];
        let [_, _, h, w] = p.hazy.shape();
        if h < patch || w < patch {
            return Err(Error::invalid(format!(
                "patch {patch} is larger than a {h}x{w} training image"
            )));
        }
        let oy = rng.gen_range(0..=h - patch);
        let ox = rng.gen_range(0..=w - patch);
        for (src, dst) in [(&p.hazy, &mut hazy), (&p.clean, &mut clean)] {
            for c in 0..3 {
                let plane = src.plane(0, c);
                for y in oy..oy + patch {
                    dst.extend_from_slice(&plane[y * w + ox..y * w + ox + patch]);
                }
            }
        }
    }
    let shape = [batch, 3, patch, patch];
    Ok((Tensor::new(shape, hazy)?, Tensor::new(shape, clean)?))
}

/// Forward, L1 loss and backward on one batch; gradients are accumulated
/// into the store. Returns the loss.
pub fn train_step(net: &mut LkdNet<f32>, hazy: Tensor<f32>, clean: &Tensor<f32>) -> Result<f64> {
    let mut trace = net.trace(hazy, Mode::Train, false)?;
    let loss = trace.graph.l1_loss(trace.taps.output, clean)?;
    let value = trace.graph.value(loss).data()[0].as_f64();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("training loss became {value}")));
    }
    let grads = trace.graph.backward(loss, None)?;
    grads.accumulate_into(net.store_mut())?;
    Ok(value)
}

/// Run the training loop. `on_eval` is called after every evaluation point
/// with the model in its just-evaluated state (for checkpointing); a numeric
/// failure returns an error before the failing update is applied, so the last
/// state passed to `on_eval` remains the last good one.
pub fn train(
    net: &mut LkdNet<f32>,
    train_set: &[HazePair],
    eval_set: &[HazePair],
    cfg: &TrainConfig,
    mut on_eval: impl FnMut(&LkdNet<f32>, &MetricRow) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("train"));
    }
    let mut report = TrainReport::default();
    if cfg.steps == 0 {
        return Ok(report);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(
        net.store(),
        AdamWConfig {
            beta1: cfg.betas[0],
            beta2: cfg.betas[1],
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        },
    );
    net.store_mut().zero_grads();
    let mut window = 0.0;
    let mut window_len = 0usize;
    for step in 0..cfg.steps {
        let lr = cosine_lr(step, cfg.steps, cfg.lr0, cfg.lr_min)?;
        let (hazy, clean) = sample_batch(train_set, cfg.batch, cfg.patch, &mut rng)?;
        let loss = train_step(net, hazy, &clean)?;
        opt.step(net.store_mut(), lr)?;
        report.losses.push(loss);
        window += loss;
        window_len += 1;

        let done = step + 1;
        let due = cfg.eval_every > 0 && done % cfg.eval_every == 0;
        if due || done == cfg.steps {
            let (p, s) = if eval_set.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let e = evaluate(net, eval_set)?;
                (e.mean_psnr, e.mean_ssim)
            };
            let row = MetricRow {
                step: done,
                lr,
                loss: window / window_len as f64,
                psnr: p,
                ssim: s,
            };
            on_eval(net, &row)?;
            report.metrics.push(row);
            window = 0.0;
            window_len = 0;
        }
    }
    Ok(report)
}
