//! Effective receptive field: how strongly each input pixel drives the
//! center unit of a feature map, and the area ratio `r(t)` holding a fraction
//! `t` of that contribution.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{heatmap, write_ppm};
use crate::layers::Mode;
use crate::model::LkdNet;
use crate::tensor::{Real, Tensor};

/// Thresholds of the reported `r(t)` table.
pub const THRESHOLDS: [f64; 4] = [0.2, 0.3, 0.5, 0.99];

/// Feature map whose center pixel is probed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tap {
    /// Output of the bottleneck stage.
    Bottleneck,
    /// Last decoder features, just before the head conv.
    #[default]
    Output,
}

impl std::str::FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bottleneck" => Ok(Tap::Bottleneck),
            "output" | "pre_head" => Ok(Tap::Output),
            _ => Err(Error::invalid(format!(
                "unknown tap {s:?} (expected bottleneck or output)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErfConfig {
    pub samples: usize,
    pub size: usize,
    pub seed: u64,
    pub tap: Tap,
}

impl Default for ErfConfig {
    fn default() -> Self {
        ErfConfig {
            samples: 16,
            size: 128,
            seed: 0,
            tap: Tap::Output,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErfReport {
    /// `[1, 1, H, W]` sum over samples and input channels of `|d center / d input|`.
    pub map: Tensor<f64>,
    pub r_table: Vec<(f64, f64)>,
    pub config: ErfConfig,
    /// Spatial mixer of the probed model, e.g. `dlk-21/3` or `plain-9`.
    pub model: String,
}

#[derive(Serialize)]
struct Meta<'a> {
    model: &'a str,
    #[serde(flatten)]
    config: &'a ErfConfig,
    r: Vec<[f64; 2]>,
}

impl ErfReport {
    pub fn ratio(&self, t: f64) -> Result<f64> {
        area_ratio(&self.map, t)
    }

    pub fn table_text(&self) -> String {
        let mut s = String::from("t,r\n");
        for (t, r) in &self.r_table {
            writeln!(s, "{t},{r}").expect("string write");
        }
        s
    }

    /// `erf_map.lkdt`, `erf_heat.ppm`, `erf_ratio.csv` and `erf_meta.json`
    /// in `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("erf_map.lkdt"))?);
        self.map.write_to(&mut f)?;
        std::io::Write::flush(&mut f)?;
        write_ppm(dir.join("erf_heat.ppm"), &heatmap(&self.map)?)?;
        std::fs::write(dir.join("erf_ratio.csv"), self.table_text())?;
        let meta = Meta {
            model: &self.model,
            config: &self.config,
            r: self.r_table.iter().map(|&(t, r)| [t, r]).collect(),
        };
        let json =
            serde_json::to_string_pretty(&meta).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(dir.join("erf_meta.json"), json + "\n")?;
        Ok(())
    }
}

/// Smallest fraction of pixels, taken in descending contribution order,
/// whose mass reaches `t` of the total.
pub fn area_ratio(map: &Tensor<f64>, t: f64) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::invalid(format!("threshold {t} outside (0, 1]")));
    }
    if map.is_empty() {
        return Err(Error::Empty("area_ratio"));
    }
    if map.data().iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::invalid(
            "contribution map must be finite and non-negative",
        ));
    }
    let mut v = map.data().to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    // Summing in the same order as the scan makes the last prefix equal the
    // total exactly.
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("contribution map has zero total mass"));
    }
    let goal = t * total;
    let mut acc = 0.0;
    for (k, x) in v.iter().enumerate() {
        acc += x;
        if acc >= goal {
            return Ok((k + 1) as f64 / v.len() as f64);
        }
    }
    Ok(1.0)
}

pub fn erf_probe<T: Real>(net: &mut LkdNet<T>, cfg: &ErfConfig) -> Result<ErfReport> {
    if cfg.samples == 0 {
        return Err(Error::invalid("erf probe needs at least one sample"));
    }
    let s = cfg.size;
    let mut map = Tensor::<f64>::zeros([1, 1, s, s]);
    for k in 0..cfg.samples {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k as u64);
        let x = Tensor::from_fn([1, 3, s, s], |_, _, _, _| {
            T::from_f64(rng.gen_range(0.0..1.0))
        });
        let mut trace = net.trace(x, Mode::Eval, true)?;
        let taps = trace.taps;
        let feat = match cfg.tap {
            Tap::Bottleneck => taps.bottleneck,
            Tap::Output => taps.pre_head,
        };
        let [_, c, h, w] = trace.graph.value(feat).shape();
        let mut mask = Tensor::<T>::zeros([1, c, h, w]);
        for ch in 0..c {
            mask.set(0, ch, h / 2, w / 2, T::one());
        }
        let root = trace.graph.weighted_sum(feat, &mask)?;
        let grads = trace.graph.backward(root, None)?;
        let g = grads
            .get(taps.input)
            .ok_or_else(|| Error::Numeric("input received no gradient".into()))?;
        for ch in 0..3 {
            for (m, v) in map.data_mut().iter_mut().zip(g.plane(0, ch)) {
                *m += v.as_f64().abs();
            }
        }
    }
    if !map.all_finite() {
        return Err(Error::Numeric("non-finite ERF contribution".into()));
    }
    let r_table = THRESHOLDS
        .iter()
        .map(|&t| Ok((t, area_ratio(&map, t)?)))
        .collect::<Result<_>>()?;
    let c = net.config();
    let model = match (c.use_dlk, c.decomposition) {
        (true, d) => format!("dlk-{}/{}", d.kernel, d.dilation),
        (false, _) => format!("plain-{}", c.plain_kernel),
    };
    Ok(ErfReport {
        map,
        r_table,
        config: cfg.clone(),
        model,
    })
}
