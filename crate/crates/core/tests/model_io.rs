use std::io::{BufRead, Cursor};

use lkd::layers::{Conv2d, Init};
use lkd::model::{Ablation, LkdConfig, LkdNet, Variant};
use lkd::nn::ConvSpec;
use lkd::param::ParamStore;
use lkd::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Bytes of an `LKDT` record header: magic, version, dtype, four u64 dims.
const RECORD_HEADER: u64 = 4 + 2 + 1 + 32;

/// Parameter count recovered from the byte lengths of the `param` records.
fn payload_param_count(bytes: &[u8]) -> usize {
    let mut cur = Cursor::new(bytes);
    let mut line = String::new();
    for _ in 0..3 {
        line.clear();
        cur.read_line(&mut line).unwrap();
    }
    let mut total = 0;
    loop {
        line.clear();
        if cur.read_line(&mut line).unwrap() == 0 {
            break;
        }
        let start = cur.position();
        Tensor::<f32>::read_from(&mut cur).unwrap();
        let len = cur.position() - start - RECORD_HEADER;
        if line.starts_with("param ") {
            assert_eq!(len % 4, 0);
            total += (len / 4) as usize;
        }
    }
    total
}

#[test]
fn checkpoint_payload_matches_parameter_count() {
    let mut configs: Vec<LkdConfig> = vec![LkdConfig::preset(Variant::T), LkdConfig::desk()];
    configs.extend(Ablation::ALL.iter().map(|&a| LkdConfig::ablation(a)));
    for cfg in configs {
        let net = LkdNet::<f32>::build(cfg, 1).unwrap();
        let mut bytes = Vec::new();
        net.write_to(&mut bytes).unwrap();
        assert_eq!(payload_param_count(&bytes), net.num_params());
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let mut net = LkdNet::<f32>::build(LkdConfig::desk().with_plain_kernel(9), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    net.save(&path).unwrap();
    let mut back = LkdNet::<f32>::load(&path).unwrap();
    assert_eq!(back.config(), net.config());
    assert_eq!(back.store(), net.store());
    let x = Tensor::from_fn([1, 3, 16, 16], |_, c, y, x| ((c + y * x) % 5) as f32 / 4.0);
    assert_eq!(net.predict(&x).unwrap(), back.predict(&x).unwrap());
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let net = LkdNet::<f32>::build(LkdConfig::desk(), 0).unwrap();
    let mut bytes = Vec::new();
    net.write_to(&mut bytes).unwrap();
    bytes.truncate(bytes.len() - 10);
    assert!(LkdNet::<f32>::read_from(&mut Cursor::new(bytes)).is_err());
    assert!(LkdNet::<f32>::read_from(&mut Cursor::new(b"hello\n".to_vec())).is_err());
}

#[test]
fn config_json_round_trip_and_defaults() {
    for v in Variant::ALL {
        let cfg = LkdConfig::preset(v);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(LkdConfig::from_json(&json).unwrap(), cfg);
    }
    assert_eq!(LkdConfig::from_json("{}").unwrap(), LkdConfig::default());
    assert_eq!(LkdConfig::default(), LkdConfig::preset(Variant::T));
    let partial = LkdConfig::from_json(r#"{"use_cefn": false}"#).unwrap();
    assert!(!partial.use_cefn);
    assert!(LkdConfig::from_json(r#"{"use_cefm": false}"#).is_err());
}

#[test]
fn pointwise_conv_cost_example() {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut init = Init {
        store: &mut store,
        rng: &mut rng,
    };
    let conv = Conv2d::new(&mut init, "pw", ConvSpec::pointwise(3, 3)).unwrap();
    let mut rows = Vec::new();
    conv.cost(4, 4, &mut rows).unwrap();
    assert_eq!(rows[0].params, 12);
    assert_eq!(rows[0].macs, 144);
    assert_eq!(store.num_params(), 12);
}
