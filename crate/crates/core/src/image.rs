//! Binary PPM (P6, 8-bit) input and output, plus a heat colormap for
//! rendering scalar maps.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Encode an `[1, 3, H, W]` tensor with values in `[0, 1]` (clamped).
pub fn encode_ppm<T: Real>(img: &Tensor<T>) -> Result<Vec<u8>> {
    let [n, c, h, w] = img.shape();
    if n != 1 || c != 3 {
        return Err(Error::invalid(format!(
            "PPM needs a [1, 3, H, W] image, got {:?}",
            img.shape()
        )));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                out.push(quantize(img.at(0, ch, y, x).as_f64()));
            }
        }
    }
    Ok(out)
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0;
    let mut fields = [0usize; 3];
    if bytes.get(..2) != Some(b"P6") {
        return Err(Error::format("not a binary PPM (P6)"));
    }
    pos += 2;
    for f in &mut fields {
        // whitespace and '#' comments between header fields
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("bad PPM header"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(format!(
            "only 8-bit PPM is supported, maxval {maxval}"
        )));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format("bad PPM header"));
    }
    pos += 1;
    let body = &bytes[pos..];
    if body.len() < 3 * w * h {
        return Err(Error::format("truncated PPM payload"));
    }
    Ok(Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
        body[3 * (y * w + x) + c] as f32 / 255.0
    }))
}

pub fn write_ppm<T: Real>(path: impl AsRef<Path>, img: &Tensor<T>) -> Result<()> {
    fs::write(path, encode_ppm(img)?)?;
    Ok(())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let p = path.as_ref();
    let bytes =
        fs::read(p).map_err(|e| Error::invalid(format!("cannot read {}: {e}", p.display())))?;
    decode_ppm(&bytes)
}

/// Map `v` in `[0, 1]` through a black-red-yellow-white ramp.
pub fn heat_color(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    [
        (3.0 * v).min(1.0),
        (3.0 * v - 1.0).clamp(0.0, 1.0),
        (3.0 * v - 2.0).clamp(0.0, 1.0),
    ]
}

/// Render a `[1, 1, H, W]` map as a color image after `log(1 + x)` scaling
/// and normalization to `[0, 1]`.
pub fn heatmap<T: Real>(map: &Tensor<T>) -> Result<Tensor<f64>> {
    let [n, c, h, w] = map.shape();
    if n != 1 || c != 1 {
        return Err(Error::invalid(format!(
            "heatmap needs a [1, 1, H, W] map, got {:?}",
            map.shape()
        )));
    }
    let logged: Vec<f64> = map
        .data()
        .iter()
        .map(|v| v.as_f64().max(0.0).ln_1p())
        .collect();
    let (lo, hi) = logged
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    Ok(Tensor::from_fn([1, 3, h, w], |_, ch, y, x| {
        heat_color((logged[y * w + x] - lo) / span)[ch]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_on_grid_values() {
        let img = Tensor::<f32>::from_fn([1, 3, 5, 7], |_, c, y, x| {
            ((c * 31 + y * 7 + x * 3) % 256) as f32 / 255.0
        });
        let bytes = encode_ppm(&img).unwrap();
        assert!(bytes.starts_with(b"P6\n7 5\n255\n"));
        assert_eq!(decode_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn comments_and_errors() {
        let mut bytes = b"P6 # made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0]);
        let t = decode_ppm(&bytes).unwrap();
        assert_eq!(t.at(0, 0, 0, 0), 1.0);
        assert_eq!(t.at(0, 1, 0, 1), 1.0);
        assert!(decode_ppm(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n").is_err());
        assert!(encode_ppm(&Tensor::<f32>::zeros([1, 1, 2, 2])).is_err());
    }

    #[test]
    fn heatmap_spans_the_ramp() {
        let m = Tensor::<f64>::from_fn([1, 1, 1, 3], |_, _, _, x| x as f64);
        let h = heatmap(&m).unwrap();
        assert_eq!(
            [h.at(0, 0, 0, 0), h.at(0, 1, 0, 0), h.at(0, 2, 0, 0)],
            [0.0; 3]
        );
        assert_eq!(
            [h.at(0, 0, 0, 2), h.at(0, 1, 0, 2), h.at(0, 2, 0, 2)],
            [1.0; 3]
        );
    }
}
