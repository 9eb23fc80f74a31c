//! Browser bindings for three interactive views: the footprint of a
//! decomposed large kernel, a haze preview, and the per-layer cost table.
//! The plain functions are usable natively; the `#[wasm_bindgen]` wrappers
//! turn their errors into JS exceptions.

use lkd::analysis::{CostReport, Footprint};
use lkd::blocks::Decomposition;
use lkd::haze::{
    apply_haze, item_rng, procedural_image, transmission, DepthField, DepthKind, HazeParams,
};
use lkd::image::quantize;
use lkd::model::{LkdConfig, LkdNet, Variant};
use lkd::{Error, Result, Tensor};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Largest preview side; keeps a slider drag responsive.
pub const MAX_PREVIEW: usize = 512;

/// `{"summary", "extent", "holes", "covers", "grid"}` with `grid` as rows of
/// 0/1.
pub fn footprint_json(kernel: usize, dilation: usize) -> Result<String> {
    let fp = Footprint::new(Decomposition::new(kernel, dilation)?)?;
    let grid: Vec<Vec<u8>> = fp
        .grid()
        .into_iter()
        .map(|row| row.into_iter().map(u8::from).collect())
        .collect();
    Ok(json!({
        "summary": fp.to_string(),
        "extent": fp.extent(),
        "holes": fp.holes(),
        "covers": fp.covers(kernel),
        "grid": grid,
    })
    .to_string())
}

fn depth_kind(name: &str, seed: u64) -> Result<DepthKind> {
    Ok(match name {
        "ramp" => DepthKind::LinearRamp { angle: 1.2 },
        "radial" => DepthKind::Radial { center: [0.5, 0.5] },
        "noise" => DepthKind::SmoothedNoise { cell: 16, seed },
        _ => {
            return Err(Error::Invalid(format!(
                "unknown depth kind {name:?} (expected ramp, radial or noise)"
            )))
        }
    })
}

fn blit(rgba: &mut [u8], stride: usize, x0: usize, img: &Tensor<f64>) {
    let [_, c, h, w] = img.shape();
    for y in 0..h {
        for x in 0..w {
            let px = 4 * (y * stride + x0 + x);
            for ch in 0..3 {
                rgba[px + ch] = quantize(img.at(0, ch.min(c - 1), y, x));
            }
            rgba[px + 3] = 255;
        }
    }
}

/// RGBA bytes of three `size x size` panels side by side: clean scene,
/// transmission map, hazy image.
pub fn haze_preview_rgba(
    size: usize,
    beta: f64,
    airlight: f64,
    depth: &str,
    seed: u64,
) -> Result<Vec<u8>> {
    if size == 0 || size > MAX_PREVIEW {
        return Err(Error::Invalid(format!(
            "preview size must be in 1..={MAX_PREVIEW}, got {size}"
        )));
    }
    if !(0.0..=1.0).contains(&airlight) || !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Invalid(
            "airlight must be in [0, 1] and beta finite and non-negative".into(),
        ));
    }
    let clean = procedural_image(size, &mut item_rng(seed, 0));
    let field = DepthField::generate(depth_kind(depth, seed)?, size, size)?;
    let t = transmission(&field.values, beta)?;
    let params = HazeParams {
        airlight: [airlight; 3],
        beta,
        depth: field,
    };
    let hazy = apply_haze(&clean, &params)?;
    let stride = 3 * size;
    let mut rgba = vec![0u8; 4 * stride * size];
    blit(&mut rgba, stride, 0, &clean);
    blit(&mut rgba, stride, size, &t);
    blit(&mut rgba, stride, 2 * size, &hazy);
    Ok(rgba)
}

/// Per-layer `name,params,macs,flops` CSV with a total row.
pub fn cost_csv_for(variant: &str, hw: usize) -> Result<String> {
    let cfg = match variant {
        "t" => LkdConfig::preset(Variant::T),
        "s" => LkdConfig::preset(Variant::S),
        "b" => LkdConfig::preset(Variant::B),
        "l" => LkdConfig::preset(Variant::L),
        "desk" => LkdConfig::desk(),
        _ => {
            return Err(Error::Invalid(format!(
                "unknown variant {variant:?} (expected t, s, b, l or desk)"
            )))
        }
    };
    if hw == 0 || !hw.is_multiple_of(4) {
        return Err(Error::Invalid(format!(
            "input side must be a positive multiple of 4, got {hw}"
        )));
    }
    let net = LkdNet::<f32>::build(cfg, 0)?;
    Ok(CostReport::of(&net, hw, hw)?.csv())
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn footprint(kernel: usize, dilation: usize) -> std::result::Result<String, JsError> {
    footprint_json(kernel, dilation).map_err(js)
}

#[wasm_bindgen]
pub fn haze_preview(
    size: usize,
    beta: f64,
    airlight: f64,
    depth: &str,
    seed: u32,
) -> std::result::Result<Vec<u8>, JsError> {
    haze_preview_rgba(size, beta, airlight, depth, seed.into()).map_err(js)
}

#[wasm_bindgen]
pub fn cost_csv(variant: &str, hw: usize) -> std::result::Result<String, JsError> {
    cost_csv_for(variant, hw).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn footprint_grid_is_dense() {
        let v: serde_json::Value = serde_json::from_str(&footprint_json(13, 3).unwrap()).unwrap();
        assert_eq!(
            v["summary"],
            "legs 5×5 + 5×5(d=3), extent 17, holes 0, covers 13: yes"
        );
        assert_eq!(v["grid"].as_array().unwrap().len(), 17);
        assert!(footprint_json(12, 3).is_err());
    }

    #[test]
    fn preview_has_three_panels() {
        let px = haze_preview_rgba(16, 1.0, 0.9, "noise", 3).unwrap();
        assert_eq!(px.len(), 4 * 48 * 16);
        assert!(px.chunks(4).all(|p| p[3] == 255));
        // Zero scattering: the hazy panel equals the clean one.
        let clear = haze_preview_rgba(8, 0.0, 0.9, "ramp", 1).unwrap();
        for row in clear.chunks(4 * 24) {
            assert_eq!(&row[..32], &row[64..96]);
        }
        assert!(haze_preview_rgba(8, 1.0, 0.9, "fog", 1).is_err());
        assert!(haze_preview_rgba(0, 1.0, 0.9, "ramp", 1).is_err());
    }

    #[test]
    fn cost_table_total() {
        let csv = cost_csv_for("t", 256).unwrap();
        assert!(csv
            .trim_end()
            .ends_with("total,344518,3347258400,6694516800"));
        assert!(cost_csv_for("xl", 256).is_err());
        assert!(cost_csv_for("t", 30).is_err());
    }
}
