//! Parameter and multiply-accumulate accounting, and the closed-form cost
//! formulas for a decomposed depth-wise kernel.

use std::fmt::Write as _;

use crate::blocks::Decomposition;
use crate::error::Result;
use crate::layers::CostRow;
use crate::model::LkdNet;
use crate::tensor::Real;

/// Per-layer counts at one input resolution. FLOPs are reported both as
/// MACs and as `2 * MACs`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub height: usize,
    pub width: usize,
    pub rows: Vec<CostRow>,
}

impl CostReport {
    pub fn of<T: Real>(net: &LkdNet<T>, height: usize, width: usize) -> Result<Self> {
        Ok(CostReport {
            height,
            width,
            rows: net.cost(height, width)?,
        })
    }

    pub fn total_params(&self) -> usize {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    pub fn total_flops(&self) -> u64 {
        2 * self.total_macs()
    }

    /// `name,params,macs,flops` rows followed by a `total` row.
    pub fn csv(&self) -> String {
        let mut s = String::from("name,params,macs,flops\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{}", r.name, r.params, r.macs, 2 * r.macs).expect("string write");
        }
        writeln!(
            s,
            "total,{},{},{}",
            self.total_params(),
            self.total_macs(),
            self.total_flops()
        )
        .expect("string write");
        s
    }
}

/// The printed parameter formula `C (ceil(K/d)^2 C + (2d - 1)^2)`, evaluated
/// literally.
pub fn eq3(kernel: usize, dilation: usize, channels: usize) -> u64 {
    let kd = kernel.div_ceil(dilation) as u64;
    let ks = (2 * dilation - 1) as u64;
    let c = channels as u64;
    c * (kd * kd * c + ks * ks)
}

/// Cost formula `P(K, d) H W`.
pub fn eq4(kernel: usize, dilation: usize, channels: usize, h: usize, w: usize) -> u64 {
    eq3(kernel, dilation, channels) * (h * w) as u64
}

/// Exact weight counts (no biases) for one `K x K` depth-wise kernel and its
/// decomposition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelCounts {
    pub kernel: usize,
    pub dilation: usize,
    pub channels: usize,
    /// `C K^2`.
    pub direct: u64,
    /// `C (2d-1)^2 + C ceil(K/d)^2`.
    pub legs: u64,
    /// `legs + C^2`, the decomposition with its 1x1 projection.
    pub legs_pw: u64,
    pub eq3: u64,
}

impl KernelCounts {
    pub fn new(d: Decomposition, channels: usize) -> Result<Self> {
        d.validate()?;
        let c = channels as u64;
        let ks = d.small_kernel() as u64;
        let kd = d.dilated_kernel() as u64;
        let k = d.kernel as u64;
        let legs = c * ks * ks + c * kd * kd;
        Ok(KernelCounts {
            kernel: d.kernel,
            dilation: d.dilation,
            channels,
            direct: c * k * k,
            legs,
            legs_pw: legs + c * c,
            eq3: eq3(d.kernel, d.dilation, channels),
        })
    }

    /// Parameters saved by decomposing (negative when the decomposition is
    /// larger).
    pub fn gap(&self) -> i64 {
        self.direct as i64 - self.legs_pw as i64
    }
}

/// Direct vs decomposed counts over a sweep of kernel sizes.
pub fn compare_direct_vs_decomposed(
    kernels: &[usize],
    dilation: usize,
    channels: usize,
) -> Result<Vec<KernelCounts>> {
    kernels
        .iter()
        .map(|&k| KernelCounts::new(Decomposition::new(k, dilation)?, channels))
        .collect()
}

pub fn compare_csv(rows: &[KernelCounts]) -> String {
    let mut s = String::from("kernel,dilation,channels,direct,legs,legs_pw,eq3,gap\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.kernel,
            r.dilation,
            r.channels,
            r.direct,
            r.legs,
            r.legs_pw,
            r.eq3,
            r.gap()
        )
        .expect("string write");
    }
    s
}

/// The printed formula next to the exact count of the layers it describes.
/// The two disagree (the formula puts `C^2` on the dilated-leg term); both
/// are shown side by side.
pub fn eq3_report(kernel: usize, dilation: usize, channels: usize) -> Result<String> {
    let k = KernelCounts::new(Decomposition::new(kernel, dilation)?, channels)?;
    let d = Decomposition::new(kernel, dilation)?;
    let mut s = String::new();
    writeln!(s, "K={kernel} d={dilation} C={channels}").expect("string write");
    writeln!(
        s,
        "legs: {0}x{0} depth-wise + {1}x{1} depth-wise dilated (d={dilation})",
        d.small_kernel(),
        d.dilated_kernel()
    )
    .expect("string write");
    writeln!(s, "formula P = C(ceil(K/d)^2 C + (2d-1)^2) = {}", k.eq3).expect("string write");
    writeln!(
        s,
        "exact legs + 1x1 = C ceil(K/d)^2 + C (2d-1)^2 + C^2 = {}",
        k.legs_pw
    )
    .expect("string write");
    writeln!(s, "exact legs only = {}", k.legs).expect("string write");
    writeln!(s, "direct {kernel}x{kernel} depth-wise = {}", k.direct).expect("string write");
    writeln!(
        s,
        "discrepancy formula - exact = {}",
        k.eq3 as i64 - k.legs_pw as i64
    )
    .expect("string write");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LkdConfig, Variant};

    #[test]
    fn formula_values() {
        assert_eq!(eq3(13, 3, 1), 50);
        assert_eq!(eq3(21, 3, 24), 28824);
        assert_eq!(eq4(13, 3, 1, 4, 4), 800);
    }

    #[test]
    fn exact_kernel_counts() {
        let k = KernelCounts::new(Decomposition::default(), 24).unwrap();
        assert_eq!(k.direct, 10584);
        assert_eq!(k.legs, 1776);
        assert_eq!(k.legs_pw, 1776 + 576);
        let rows = compare_direct_vs_decomposed(&[7, 13, 21, 31], 3, 24).unwrap();
        assert!(rows.windows(2).all(|w| w[0].gap() < w[1].gap()));
        assert!(compare_csv(&rows).starts_with("kernel,dilation,channels,direct"));
    }

    #[test]
    fn report_shows_both_values() {
        let r = eq3_report(21, 3, 24).unwrap();
        assert!(r.contains("= 28824"));
        assert!(r.contains("= 2352"));
        assert!(r.contains("discrepancy formula - exact = 26472"));
    }

    #[test]
    fn totals_equal_row_sums() {
        let net = LkdNet::<f32>::build(LkdConfig::preset(Variant::T), 0).unwrap();
        let rep = CostReport::of(&net, 64, 64).unwrap();
        assert_eq!(rep.total_params(), net.num_params());
        let csv = rep.csv();
        let last = csv.lines().last().unwrap();
        assert_eq!(
            last,
            format!(
                "total,{},{},{}",
                rep.total_params(),
                rep.total_macs(),
                2 * rep.total_macs()
            )
        );
    }
}
