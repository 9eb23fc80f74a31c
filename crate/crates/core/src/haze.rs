//! Atmospheric scattering: `I = J t + A (1 - t)` with `t = exp(-beta d)`,
//! plus a procedural paired-dataset generator and its on-disk layout.
//!
//! A dataset directory holds `clean/NNNN.ppm`, `hazy/NNNN.ppm` and a
//! `manifest.txt` with one `hazy clean a_r a_g a_b beta` line per pair
//! (paths relative to the directory, `#` starts a comment).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{read_ppm, write_ppm};
use crate::tensor::{Real, Tensor};

/// Default lower bound on the transmission accepted by [`invert_haze`].
pub const T_MIN: f64 = 1e-3;

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DepthKind {
    /// Depth grows linearly along `angle` (radians).
    LinearRamp { angle: f64 },
    /// Depth grows with distance from `center` (fractions of width, height).
    Radial { center: [f64; 2] },
    /// Bilinearly interpolated random lattice with `cell` pixels per cell.
    SmoothedNoise { cell: usize, seed: u64 },
}

/// Scene depth `[1, 1, H, W]`, non-negative and finite.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthField {
    pub kind: DepthKind,
    pub values: Tensor<f64>,
}

impl DepthField {
    /// Generate a field normalized to `[0, 1]`.
    pub fn generate(kind: DepthKind, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::invalid("depth field needs a positive size"));
        }
        let raw = match kind {
            DepthKind::LinearRamp { angle } => {
                let (s, c) = angle.sin_cos();
                Tensor::from_fn([1, 1, h, w], |_, _, y, x| {
                    c * x as f64 / w as f64 + s * y as f64 / h as f64
                })
            }
            DepthKind::Radial { center } => {
                let (cx, cy) = (center[0] * w as f64, center[1] * h as f64);
                Tensor::from_fn([1, 1, h, w], |_, _, y, x| {
                    (x as f64 - cx).hypot(y as f64 - cy)
                })
            }
            DepthKind::SmoothedNoise { cell, seed } => {
                let cell = cell.max(1);
                let (gh, gw) = (h / cell + 2, w / cell + 2);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.gen::<f64>()).collect();
                Tensor::from_fn([1, 1, h, w], |_, _, y, x| {
                    let (fy, fx) = (y as f64 / cell as f64, x as f64 / cell as f64);
                    let (iy, ix) = (fy as usize, fx as usize);
                    let (ty, tx) = (fy - iy as f64, fx - ix as f64);
                    let at = |r: usize, c: usize| lattice[r * gw + c];
                    let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
                    let bot = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
                    top * (1.0 - ty) + bot * ty
                })
            }
        };
        Ok(DepthField {
            kind,
            values: normalize(raw),
        })
    }

    pub fn from_values(values: Tensor<f64>) -> Result<Self> {
        check_depth(&values)?;
        Ok(DepthField {
            kind: DepthKind::LinearRamp { angle: 0.0 },
            values,
        })
    }
}

fn normalize(t: Tensor<f64>) -> Tensor<f64> {
    let lo = t.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    t.map(|v| (v - lo) / span)
}

fn check_depth(d: &Tensor<f64>) -> Result<()> {
    let [n, c, _, _] = d.shape();
    if n != 1 || c != 1 {
        return Err(Error::invalid(format!(
            "depth must be [1, 1, H, W], got {:?}",
            d.shape()
        )));
    }
    if d.data().iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::invalid("depth must be finite and non-negative"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct HazeParams {
    /// Global atmospheric light per channel, each in `[0, 1]`.
    pub airlight: [f64; 3],
    /// Scattering coefficient, `>= 0`.
    pub beta: f64,
    pub depth: DepthField,
}

/// `t = exp(-beta d)` elementwise.
pub fn transmission(depth: &Tensor<f64>, beta: f64) -> Result<Tensor<f64>> {
    check_depth(depth)?;
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::invalid(format!(
            "scattering coefficient must be finite and >= 0, got {beta}"
        )));
    }
    Ok(depth.map(|d| (-beta * d).exp()))
}

fn check_airlight(a: &[f64; 3]) -> Result<()> {
    if a.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid(format!("airlight {a:?} outside [0, 1]")));
    }
    Ok(())
}

fn check_image_vs_map<T: Real>(img: &Tensor<T>, t: &Tensor<f64>, op: &'static str) -> Result<()> {
    let [_, c, h, w] = img.shape();
    if c != 3 || t.shape() != [1, 1, h, w] {
        return Err(Error::ShapeMismatch {
            op,
            lhs: img.shape(),
            rhs: t.shape(),
        });
    }
    Ok(())
}

/// `I = J t + A (1 - t)` for a given transmission map `[1, 1, H, W]`.
pub fn apply_transmission<T: Real>(
    clean: &Tensor<T>,
    airlight: [f64; 3],
    t: &Tensor<f64>,
) -> Result<Tensor<T>> {
    check_image_vs_map(clean, t, "apply_haze")?;
    check_airlight(&airlight)?;
    if clean
        .data()
        .iter()
        .any(|v| !(0.0..=1.0).contains(&v.as_f64()))
    {
        return Err(Error::invalid("clean image values must lie in [0, 1]"));
    }
    Ok(Tensor::from_fn(clean.shape(), |n, c, y, x| {
        let tv = t.at(0, 0, y, x);
        let j = clean.at(n, c, y, x).as_f64();
        T::from_f64(j * tv + airlight[c] * (1.0 - tv))
    }))
}

pub fn apply_haze<T: Real>(clean: &Tensor<T>, params: &HazeParams) -> Result<Tensor<T>> {
    let t = transmission(&params.depth.values, params.beta)?;
    apply_transmission(clean, params.airlight, &t)
}

/// `J = (I - A (1 - t)) / t`, refusing transmissions below `t_min`.
pub fn invert_haze<T: Real>(
    hazy: &Tensor<T>,
    airlight: [f64; 3],
    t: &Tensor<f64>,
    t_min: f64,
) -> Result<Tensor<T>> {
    check_image_vs_map(hazy, t, "invert_haze")?;
    if let Some(bad) = t.data().iter().find(|&&v| v.is_nan() || v < t_min) {
        return Err(Error::invalid(format!(
            "transmission {bad} below the inversion floor {t_min}"
        )));
    }
    Ok(Tensor::from_fn(hazy.shape(), |n, c, y, x| {
        let tv = t.at(0, 0, y, x);
        let i = hazy.at(n, c, y, x).as_f64();
        T::from_f64((i - airlight[c] * (1.0 - tv)) / tv)
    }))
}

/// Smooth background gradient with 3 to 7 flat-colored rectangles, discs and
/// bands blended on top.
pub fn procedural_image(size: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let h = size;
    let w = size;
    let c0: [f64; 3] = rng.gen();
    let c1: [f64; 3] = rng.gen();
    let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (s, c) = ang.sin_cos();
    let mut img = Tensor::from_fn([1, 3, h, w], |_, ch, y, x| {
        let u = 0.5 + 0.5 * (c * (x as f64 / w as f64 - 0.5) + s * (y as f64 / h as f64 - 0.5));
        c0[ch] * (1.0 - u) + c1[ch] * u
    });
    let shapes = rng.gen_range(3..=7);
    for _ in 0..shapes {
        let color: [f64; 3] = rng.gen();
        let alpha = rng.gen_range(0.6..=1.0);
        let kind = rng.gen_range(0..3);
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let r = rng.gen_range(0.08..0.3) * size as f64;
        let r2 = rng.gen_range(0.08..0.3) * size as f64;
        let (bs, bc) = rng.gen_range(0.0..std::f64::consts::PI).sin_cos();
        let inside = |y: usize, x: usize| {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            match kind {
                0 => dx.abs() < r && dy.abs() < r2,
                1 => dx.hypot(dy) < r,
                _ => (bc * dx + bs * dy).abs() < 0.3 * r,
            }
        };
        for y in 0..h {
            for x in 0..w {
                if inside(y, x) {
                    for (ch, &col) in color.iter().enumerate() {
                        let v = img.at(0, ch, y, x);
                        img.set(0, ch, y, x, v * (1.0 - alpha) + col * alpha);
                    }
                }
            }
        }
    }
    img
}

/// Where clean images come from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanSource {
    #[default]
    Procedural,
    /// PPM files, cycled in name order and randomly cropped to `size`.
    Directory(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n: usize,
    pub size: usize,
    pub source: CleanSource,
    pub seed: u64,
    pub airlight: [f64; 2],
    pub beta: [f64; 2],
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n: 200,
            size: 64,
            source: CleanSource::Procedural,
            seed: 0,
            airlight: [0.7, 1.0],
            beta: [0.4, 2.0],
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || !self.size.is_multiple_of(4) {
            return Err(Error::invalid(format!(
                "image size must be a positive multiple of 4, got {}",
                self.size
            )));
        }
        let [a0, a1] = self.airlight;
        if !(0.0 <= a0 && a0 <= a1 && a1 <= 1.0) {
            return Err(Error::invalid(
                "airlight range must satisfy 0 <= lo <= hi <= 1",
            ));
        }
        let [b0, b1] = self.beta;
        if !(0.0 <= b0 && b0 <= b1 && b1.is_finite()) {
            return Err(Error::invalid("beta range must satisfy 0 <= lo <= hi"));
        }
        Ok(())
    }
}

/// One training example; images are `[1, 3, H, W]` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HazePair {
    pub hazy: Tensor<f32>,
    pub clean: Tensor<f32>,
    pub airlight: [f64; 3],
    pub beta: f64,
}

/// Item `k` draws from its own ChaCha stream, so the set does not depend on
/// generation order or thread count.
pub fn item_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64 + 1);
    rng
}

fn sample_params(cfg: &DataConfig, rng: &mut ChaCha8Rng, size: usize) -> Result<HazeParams> {
    // Grayish-white airlight: a shared level with a small per-channel tint.
    let [a0, a1] = cfg.airlight;
    let base = if a1 > a0 { rng.gen_range(a0..=a1) } else { a0 };
    let mut airlight = [0.0; 3];
    for a in &mut airlight {
        *a = (base + rng.gen_range(-0.03..=0.03)).clamp(a0, a1);
    }
    let [b0, b1] = cfg.beta;
    let beta = if b1 > b0 { rng.gen_range(b0..=b1) } else { b0 };
    let kind = match rng.gen_range(0..3) {
        0 => DepthKind::LinearRamp {
            angle: rng.gen_range(0.0..std::f64::consts::TAU),
        },
        1 => DepthKind::Radial {
            center: [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
        },
        _ => DepthKind::SmoothedNoise {
            cell: (size / 4).max(1),
            seed: rng.gen(),
        },
    };
    Ok(HazeParams {
        airlight,
        beta,
        depth: DepthField::generate(kind, size, size)?,
    })
}

fn random_crop(img: &Tensor<f32>, size: usize, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
    let [_, _, h, w] = img.shape();
    if h < size || w < size {
        return Err(Error::invalid(format!(
            "clean image {h}x{w} is smaller than the requested {size}x{size}"
        )));
    }
    let oy = rng.gen_range(0..=h - size);
    let ox = rng.gen_range(0..=w - size);
    Ok(Tensor::from_fn([1, 3, size, size], |_, c, y, x| {
        img.at(0, c, oy + y, ox + x)
    }))
}

fn list_ppm(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e?.path();
        if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")) {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!(
            "no .ppm files in {}",
            dir.display()
        )));
    }
    Ok(files)
}

fn make_item(cfg: &DataConfig, k: usize, sources: &[Tensor<f32>]) -> Result<HazePair> {
    let mut rng = item_rng(cfg.seed, k);
    let clean: Tensor<f64> = if sources.is_empty() {
        procedural_image(cfg.size, &mut rng)
    } else {
        random_crop(&sources[k % sources.len()], cfg.size, &mut rng)?.cast()
    };
    let params = sample_params(cfg, &mut rng, cfg.size)?;
    let hazy = apply_haze(&clean, &params)?;
    Ok(HazePair {
        hazy: hazy.cast(),
        clean: clean.cast(),
        airlight: params.airlight,
        beta: params.beta,
    })
}

pub fn make_dataset(cfg: &DataConfig) -> Result<Vec<HazePair>> {
    cfg.validate()?;
    if cfg.n == 0 {
        return Ok(Vec::new());
    }
    let sources = match &cfg.source {
        CleanSource::Procedural => Vec::new(),
        CleanSource::Directory(dir) => list_ppm(dir)?
            .iter()
            .map(read_ppm)
            .collect::<Result<Vec<_>>>()?,
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..cfg.n)
            .into_par_iter()
            .map(|k| make_item(cfg, k, &sources))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..cfg.n).map(|k| make_item(cfg, k, &sources)).collect()
    }
}

/// Write pairs as 8-bit PPMs plus a manifest. Returns the manifest path.
pub fn save_dataset(pairs: &[HazePair], dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("clean"))?;
    fs::create_dir_all(dir.join("hazy"))?;
    let mut manifest = String::from("# hazy clean a_r a_g a_b beta\n");
    for (k, p) in pairs.iter().enumerate() {
        let hazy = format!("hazy/{k:04}.ppm");
        let clean = format!("clean/{k:04}.ppm");
        write_ppm(dir.join(&hazy), &p.hazy)?;
        write_ppm(dir.join(&clean), &p.clean)?;
        let [r, g, b] = p.airlight;
        writeln!(manifest, "{hazy} {clean} {r} {g} {b} {}", p.beta).expect("string write");
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest)?;
    Ok(path)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<HazePair>> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || {
            Error::format(format!(
                "{}:{}: malformed manifest line",
                path.display(),
                i + 1
            ))
        };
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let hazy = read_ppm(dir.join(f[0]))?;
        let clean = read_ppm(dir.join(f[1]))?;
        if hazy.shape() != clean.shape() {
            return Err(Error::ShapeMismatch {
                op: "load_dataset",
                lhs: hazy.shape(),
                rhs: clean.shape(),
            });
        }
        pairs.push(HazePair {
            hazy,
            clean,
            airlight: [num(f[2])?, num(f[3])?, num(f[4])?],
            beta: num(f[5])?,
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, proptest};

    fn random_clean(seed: u64, h: usize, w: usize) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([1, 3, h, w], |_, _, _, _| rng.gen_range(0.0..=1.0))
    }

    fn params(seed: u64, beta: f64, h: usize, w: usize) -> HazeParams {
        let kind = DepthKind::SmoothedNoise { cell: 3, seed };
        HazeParams {
            airlight: [0.8, 0.85, 0.9],
            beta,
            depth: DepthField::generate(kind, h, w).unwrap(),
        }
    }

    #[test]
    fn transmission_values() {
        let d = Tensor::from_fn([1, 1, 1, 2], |_, _, _, x| [0.0, 2f64.ln()][x]);
        let t = transmission(&d, 1.0).unwrap();
        assert_eq!(t.at(0, 0, 0, 0), 1.0);
        assert!((t.at(0, 0, 0, 1) - 0.5).abs() < 1e-15);
        assert!(transmission(&d, 0.0)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 1.0));
        assert!(transmission(&d.map(|v| -v - 1.0), 1.0).is_err());
        assert!(transmission(&d, -0.1).is_err());
    }

    #[test]
    fn apply_haze_limits() {
        let j = random_clean(1, 6, 5);
        let p0 = params(1, 0.0, 6, 5);
        assert_eq!(apply_haze(&j, &p0).unwrap(), j);

        let air = Tensor::from_fn([1, 3, 6, 5], |_, c, _, _| p0.airlight[c]);
        let p = params(2, 1.3, 6, 5);
        assert!(apply_haze(&air, &p).unwrap().max_abs_diff(&air) < 1e-15);

        let deep = DepthField::from_values(Tensor::full([1, 1, 6, 5], 1e3)).unwrap();
        let far = HazeParams { depth: deep, ..p };
        assert!(apply_haze(&j, &far).unwrap().max_abs_diff(&air) < 1e-12);

        let wrong = params(1, 1.0, 4, 4);
        assert!(apply_haze(&j, &wrong).is_err());
    }

    #[test]
    fn inversion_guards() {
        let j = random_clean(3, 4, 4);
        let t = Tensor::full([1, 1, 4, 4], 1.0);
        assert_eq!(invert_haze(&j, [0.9; 3], &t, T_MIN).unwrap(), j);
        let thin = Tensor::full([1, 1, 4, 4], 1e-4);
        assert!(invert_haze(&j, [0.9; 3], &thin, T_MIN).is_err());
    }

    #[test]
    fn generated_depths_are_unit_normalized() {
        for kind in [
            DepthKind::LinearRamp { angle: 0.7 },
            DepthKind::Radial { center: [0.3, 0.6] },
            DepthKind::SmoothedNoise { cell: 4, seed: 9 },
        ] {
            let d = DepthField::generate(kind, 16, 12).unwrap();
            let v = d.values.data();
            assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
            assert!(v.contains(&0.0) && v.contains(&1.0), "{kind:?}");
        }
    }

    #[test]
    fn dataset_is_deterministic_and_order_free() {
        let cfg = DataConfig {
            n: 6,
            size: 16,
            seed: 4,
            ..Default::default()
        };
        let a = make_dataset(&cfg).unwrap();
        let b = make_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        let prefix = make_dataset(&DataConfig {
            n: 3,
            ..cfg.clone()
        })
        .unwrap();
        assert_eq!(&a[..3], &prefix[..]);
        assert!(make_dataset(&DataConfig {
            n: 0,
            ..cfg.clone()
        })
        .unwrap()
        .is_empty());
        assert!(make_dataset(&DataConfig { size: 18, ..cfg }).is_err());
    }

    #[test]
    fn dataset_disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = make_dataset(&DataConfig {
            n: 3,
            size: 8,
            ..Default::default()
        })
        .unwrap();
        save_dataset(&pairs, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (p, q) in pairs.iter().zip(&back) {
            assert!(p.hazy.max_abs_diff(&q.hazy) <= 0.5 / 255.0 + 1e-6);
            assert_eq!(p.beta, q.beta);
            assert_eq!(p.airlight, q.airlight);
        }
        // the saved clean images can seed a directory source
        let src = make_dataset(&DataConfig {
            n: 4,
            size: 4,
            source: CleanSource::Directory(dir.path().join("clean")),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(src.len(), 4);
        let missing = DataConfig {
            source: CleanSource::Directory(dir.path().join("nope")),
            ..Default::default()
        };
        assert!(make_dataset(&missing).is_err());
    }

    proptest! {
        #[test]
        fn hazy_is_between_clean_and_airlight(seed in 0u64..500, beta in 0.0f64..3.0) {
            let j = random_clean(seed, 5, 7);
            let p = params(seed, beta, 5, 7);
            let i = apply_haze(&j, &p).unwrap();
            for ((n, c, y, x), v) in iter_idx(&i) {
                let (jv, a) = (j.at(n, c, y, x), p.airlight[c]);
                prop_assert!(v >= jv.min(a) - 1e-15 && v <= jv.max(a) + 1e-15);
            }
        }

        #[test]
        fn more_scattering_moves_toward_airlight(seed in 0u64..500, b0 in 0.0f64..2.0, db in 0.0f64..2.0) {
            let j = random_clean(seed, 5, 7);
            let p = params(seed, b0, 5, 7);
            let q = HazeParams { beta: b0 + db, ..p.clone() };
            let (i0, i1) = (apply_haze(&j, &p).unwrap(), apply_haze(&j, &q).unwrap());
            for ((n, c, y, x), v0) in iter_idx(&i0) {
                let a = p.airlight[c];
                prop_assert!((i1.at(n, c, y, x) - a).abs() <= (v0 - a).abs() + 1e-15);
            }
        }
    }

    fn iter_idx(t: &Tensor<f64>) -> Vec<((usize, usize, usize, usize), f64)> {
        let [n, c, h, w] = t.shape();
        let mut out = Vec::new();
        for a in 0..n {
            for b in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        out.push(((a, b, y, x), t.at(a, b, y, x)));
                    }
                }
            }
        }
        out
    }
}
