use lkd::haze::{
    apply_haze, apply_transmission, invert_haze, load_dataset, make_dataset, save_dataset,
    transmission, DataConfig, DepthField, DepthKind, HazeParams, T_MIN,
};
use lkd::metrics::psnr;
use lkd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mean PSNR(hazy, clean) of the default 200-pair set, generated once and
/// frozen. Any change to the generator moves it.
const DEFAULT_SET_HAZY_PSNR: f64 = 15.9818;

fn random_case(seed: u64) -> (Tensor<f64>, HazeParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (rng.gen_range(1..24), rng.gen_range(1..24));
    let clean = Tensor::from_fn([1, 3, h, w], |_, _, _, _| rng.gen::<f64>());
    let depth = Tensor::from_fn([1, 1, h, w], |_, _, _, _| rng.gen_range(0.0..1.0));
    let params = HazeParams {
        airlight: [
            rng.gen_range(0.7..=1.0),
            rng.gen_range(0.7..=1.0),
            rng.gen_range(0.7..=1.0),
        ],
        beta: rng.gen_range(0.4..=2.0),
        depth: DepthField::from_values(depth).unwrap(),
    };
    (clean, params)
}

#[test]
fn round_trip_over_100_seeds() {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (clean, p) = random_case(seed);
        let hazy = apply_haze(&clean, &p).unwrap();
        let t = transmission(&p.depth.values, p.beta).unwrap();
        let back = invert_haze(&hazy, p.airlight, &t, T_MIN).unwrap();
        worst = worst.max(back.max_abs_diff(&clean));
    }
    assert!(worst < 1e-6, "max round-trip error {worst}");
}

#[test]
fn zero_beta_leaves_the_image_unchanged() {
    let (clean, mut p) = random_case(7);
    p.beta = 0.0;
    assert_eq!(apply_haze(&clean, &p).unwrap(), clean);
}

#[test]
fn airlight_colored_scene_is_a_fixed_point() {
    let (_, p) = random_case(8);
    let [_, _, h, w] = p.depth.values.shape();
    let scene = Tensor::from_fn([1, 3, h, w], |_, c, _, _| p.airlight[c]);
    let hazy = apply_haze(&scene, &p).unwrap();
    assert!(hazy.max_abs_diff(&scene) < 1e-15);
}

#[test]
fn deep_scene_tends_to_airlight() {
    let (clean, p) = random_case(9);
    let far = HazeParams {
        depth: DepthField::from_values(p.depth.values.map(|_| 100.0)).unwrap(),
        beta: 1.0,
        ..p.clone()
    };
    let hazy = apply_haze(&clean, &far).unwrap();
    for c in 0..3 {
        assert!(hazy
            .plane(0, c)
            .iter()
            .all(|&v| (v - p.airlight[c]).abs() < 1e-12));
    }
}

#[test]
fn transmission_closed_forms() {
    let d = Tensor::new([1, 1, 1, 2], vec![0.0, std::f64::consts::LN_2]).unwrap();
    let t = transmission(&d, 1.0).unwrap();
    assert_eq!(t.data()[0], 1.0);
    assert!((t.data()[1] - 0.5).abs() < 1e-15);
    assert!(transmission(&d.map(|v| -v - 1.0), 1.0).is_err());
}

#[test]
fn inversion_refuses_thin_transmission() {
    let (clean, p) = random_case(10);
    let t = transmission(&p.depth.values, p.beta).unwrap().map(|_| 1e-4);
    let hazy = apply_transmission(&clean, p.airlight, &t).unwrap();
    assert!(invert_haze(&hazy, p.airlight, &t, T_MIN).is_err());
}

#[test]
fn mismatched_depth_is_rejected() {
    let (clean, p) = random_case(11);
    let [_, _, h, w] = clean.shape();
    let wrong = HazeParams {
        depth: DepthField::from_values(Tensor::zeros([1, 1, h + 1, w])).unwrap(),
        ..p
    };
    assert!(apply_haze(&clean, &wrong).is_err());
}

#[test]
fn depth_generators_are_normalized() {
    for kind in [
        DepthKind::LinearRamp { angle: 0.7 },
        DepthKind::Radial { center: [0.3, 0.6] },
        DepthKind::SmoothedNoise { cell: 8, seed: 3 },
    ] {
        let d = DepthField::generate(kind, 20, 28).unwrap();
        let lo = d
            .values
            .data()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let hi = d.values.data().iter().copied().fold(0.0, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0), "{kind:?}");
    }
}

fn small(n: usize, seed: u64) -> DataConfig {
    DataConfig {
        n,
        size: 16,
        seed,
        ..DataConfig::default()
    }
}

#[test]
fn dataset_is_deterministic_and_order_free() {
    let a = make_dataset(&small(12, 5)).unwrap();
    let b = make_dataset(&small(12, 5)).unwrap();
    assert_eq!(a, b);
    // Item k does not depend on how many items come before or after it.
    let c = make_dataset(&small(4, 5)).unwrap();
    assert_eq!(&a[..4], &c[..]);
    assert_ne!(make_dataset(&small(12, 6)).unwrap(), a);
}

#[test]
fn dataset_matches_under_one_thread() {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let serial = pool.install(|| make_dataset(&small(10, 2)).unwrap());
    assert_eq!(serial, make_dataset(&small(10, 2)).unwrap());
}

#[test]
fn empty_dataset_is_fine() {
    assert!(make_dataset(&small(0, 0)).unwrap().is_empty());
}

#[test]
fn size_must_be_a_multiple_of_four() {
    let cfg = DataConfig {
        size: 18,
        ..small(1, 0)
    };
    assert!(make_dataset(&cfg).is_err());
}

#[test]
fn pairs_are_convex_combinations() {
    for p in make_dataset(&small(8, 1)).unwrap() {
        for c in 0..3 {
            let a = p.airlight[c] as f32;
            for (&i, &j) in p.hazy.plane(0, c).iter().zip(p.clean.plane(0, c)) {
                assert!(i >= j.min(a) - 1e-6 && i <= j.max(a) + 1e-6);
            }
        }
    }
}

#[test]
fn default_set_hazy_psnr_is_frozen() {
    let pairs = make_dataset(&DataConfig::default()).unwrap();
    assert_eq!(pairs.len(), 200);
    let mean = pairs
        .iter()
        .map(|p| psnr(&p.hazy, &p.clean, 1.0).unwrap())
        .sum::<f64>()
        / pairs.len() as f64;
    assert!(
        (mean - DEFAULT_SET_HAZY_PSNR).abs() < 0.01,
        "mean hazy PSNR {mean}"
    );
}

#[test]
fn save_and_load_round_trip() {
    let pairs = make_dataset(&small(3, 4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&pairs, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in pairs.iter().zip(&back) {
        // 8-bit storage: within half a quantization step.
        assert!(a.hazy.max_abs_diff(&b.hazy) <= 0.5 / 255.0 + 1e-6);
        assert!(a.clean.max_abs_diff(&b.clean) <= 0.5 / 255.0 + 1e-6);
        assert_eq!(a.airlight, b.airlight);
        assert_eq!(a.beta, b.beta);
    }
}

#[test]
fn directory_source_and_bad_directory() {
    let src = tempfile::tempdir().unwrap();
    let img = Tensor::<f32>::from_fn([1, 3, 20, 24], |_, c, y, x| {
        ((c * 7 + y * 3 + x) % 17) as f32 / 16.0
    });
    lkd::image::write_ppm(src.path().join("a.ppm"), &img).unwrap();
    let cfg = DataConfig {
        source: lkd::haze::CleanSource::Directory(src.path().to_path_buf()),
        ..small(3, 0)
    };
    let pairs = make_dataset(&cfg).unwrap();
    assert_eq!(pairs[0].clean.shape(), [1, 3, 16, 16]);
    let missing = DataConfig {
        source: lkd::haze::CleanSource::Directory(src.path().join("nope")),
        ..small(1, 0)
    };
    assert!(make_dataset(&missing).is_err());
}
