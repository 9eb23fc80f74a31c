use std::collections::BTreeSet;

use lkd::analysis::{compare_csv, compare_direct_vs_decomposed, eq3, eq4, CostReport, Footprint};
use lkd::blocks::Decomposition;
use lkd::model::{LkdConfig, LkdNet, Variant};
use lkd::nn::{conv2d_reference, ConvSpec};
use lkd::Tensor;

/// Support of an impulse pushed through all-ones depth-wise convs of the two
/// legs, computed by plain convolution rather than by offset arithmetic.
fn indicator_support(d: Decomposition) -> BTreeSet<(i64, i64)> {
    let r = (d.small_kernel() / 2 + d.dilation * (d.dilated_kernel() / 2)) as i64;
    let size = (2 * r + 5) as usize;
    let c = (size / 2) as i64;
    let mut x = Tensor::<f64>::zeros([1, 1, size, size]);
    x.set(0, 0, c as usize, c as usize, 1.0);
    let legs = [(d.small_kernel(), 1), (d.dilated_kernel(), d.dilation)];
    for (k, dil) in legs {
        let spec = ConvSpec {
            bias: false,
            ..ConvSpec::depthwise(1, k, dil)
        };
        x = conv2d_reference(&x, &spec, &Tensor::full([1, 1, k, k], 1.0), None).unwrap();
    }
    let mut out = BTreeSet::new();
    for y in 0..size {
        for xx in 0..size {
            if x.at(0, 0, y, xx) != 0.0 {
                out.insert((y as i64 - c, xx as i64 - c));
            }
        }
    }
    out
}

#[test]
fn footprint_matches_indicator_convolution() {
    for (k, d) in [(21, 3), (13, 3), (7, 1), (9, 1), (31, 5), (17, 2)] {
        let dec = Decomposition::new(k, d).unwrap();
        let fp = Footprint::new(dec).unwrap();
        assert_eq!(fp.offsets, indicator_support(dec), "K={k} d={d}");
        assert_eq!(fp.holes(), 0, "K={k} d={d}");
        assert!(fp.covers(k));
    }
}

#[test]
fn footprint_reference_cases() {
    let f21 = Footprint::new(Decomposition::new(21, 3).unwrap()).unwrap();
    assert_eq!(f21.extent(), 23);
    assert_eq!(
        f21.to_string(),
        "legs 5×5 + 7×7(d=3), extent 23, holes 0, covers 21: yes"
    );
    let f13 = Footprint::new(Decomposition::new(13, 3).unwrap()).unwrap();
    assert_eq!(
        f13.to_string(),
        "legs 5×5 + 5×5(d=3), extent 17, holes 0, covers 13: yes"
    );
    let g = f13.grid();
    assert_eq!(g.len(), 17);
    assert!(g
        .iter()
        .all(|row| row.len() == 17 && row.iter().all(|&b| b)));
}

#[test]
fn formula_values() {
    assert_eq!(eq3(13, 3, 1), 50);
    assert_eq!(eq3(21, 3, 24), 28824);
    assert_eq!(eq4(21, 3, 24, 64, 64), 28824 * 4096);
}

#[test]
fn direct_vs_decomposed_table() {
    let rows = compare_direct_vs_decomposed(&[9, 13, 21], 3, 24).unwrap();
    let r21 = rows[2];
    assert_eq!(r21.direct, 24 * 441);
    assert_eq!(r21.legs, 24 * 25 + 24 * 49);
    assert_eq!(r21.legs_pw, 2352);
    assert_eq!(r21.gap(), 10584 - 2352);
    let csv = compare_csv(&rows);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.contains("21,3,24,10584,1776,2352,28824,8232"), "{csv}");
}

#[test]
fn cost_report_totals_agree_with_the_model() {
    let net = LkdNet::<f32>::build(LkdConfig::preset(Variant::T), 0).unwrap();
    let rep = CostReport::of(&net, 256, 256).unwrap();
    assert_eq!(rep.total_params(), net.num_params());
    assert_eq!(rep.total_params(), 344_518);
    assert_eq!(rep.total_macs(), 3_347_258_400);
    assert_eq!(rep.total_flops(), 2 * rep.total_macs());
    let csv = rep.csv();
    assert!(csv.starts_with("name,params,macs,flops\n"));
    assert!(
        csv.trim_end()
            .ends_with("total,344518,3347258400,6694516800"),
        "{}",
        csv.lines().last().unwrap()
    );
}
