//! Dataset files and run configs through the filesystem.

use proptest::prelude::*;
use scorecl_core::augment::Image;
use scorecl_core::config::{parse_config, parse_config_str, DatasetSpec, RunConfig};
use scorecl_core::contrastive::{Method, SimclrForm, WeightMode, WeightNorm};
use scorecl_core::data::{
    cifar10_bytes, load_cifar10_binary, parse_raw, raw_bytes, read_raw, write_raw, LabeledDataset, CIFAR_RECORD,
};

fn record(label: u8, fill: impl Fn(usize) -> u8) -> Vec<u8> {
    let mut r = vec![label];
    r.extend((0..3072).map(fill));
    r
}

#[test]
fn cifar_batches_concatenate_in_file_order() {
    let dir = tempfile::tempdir().unwrap();
    let a = [record(1, |i| (i % 256) as u8), record(9, |_| 255)].concat();
    let b = record(0, |i| if i < 1024 { 0 } else { 200 });
    let (pa, pb) = (dir.path().join("data_batch_1.bin"), dir.path().join("data_batch_2.bin"));
    std::fs::write(&pa, &a).unwrap();
    std::fs::write(&pb, &b).unwrap();
    let ds = load_cifar10_binary(&[&pa, &pb]).unwrap();
    assert_eq!(ds.labels, vec![1, 9, 0]);
    assert_eq!(ds.images.len(), 3);
    // planar red, green, blue -> interleaved; pixel (0, 1) red is byte 1
    assert_eq!(ds.images[0].get(0, 1, 0), 1.0 / 255.0);
    assert_eq!(ds.images[0].get(0, 0, 1), (1024 % 256) as f32 / 255.0);
    assert_eq!(ds.images[2].get(31, 31, 0), 0.0);
    assert_eq!(ds.images[2].get(31, 31, 2), 200.0 / 255.0);
    assert_eq!(cifar10_bytes(&ds).unwrap(), [a, b].concat());
}

#[test]
fn truncated_cifar_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("short.bin");
    std::fs::write(&p, vec![0u8; CIFAR_RECORD + 5]).unwrap();
    let err = load_cifar10_binary(&[&p]).unwrap_err().to_string();
    assert!(err.contains("short.bin"), "{err}");
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, r#"{"seed": 4, "dataset": {"kind": "synth", "n": 64}, "cl": {"method": "vicreg"}}"#).unwrap();
    let cfg = parse_config(&path).unwrap();
    assert_eq!(cfg.cl.lr, Some(1e-3));
    std::fs::write(&path, cfg.to_json()).unwrap();
    assert_eq!(parse_config(&path).unwrap(), cfg);

    std::fs::write(&path, r#"{"seed": 4, "dataset": {"kind": "synth"}, "cl": {"lr_sched": "cos"}}"#).unwrap();
    let err = parse_config(&path).unwrap_err().to_string();
    assert!(err.contains("lr_sched"), "{err}");
}

fn dataset(pixels: &[u8], n: usize, res: usize, classes: usize) -> LabeledDataset {
    let per = res * res * 3;
    let images = (0..n)
        .map(|i| Image::new(res, res, 3, pixels[i * per..(i + 1) * per].iter().map(|&b| b as f32 / 255.0).collect()))
        .collect::<Result<Vec<_>, _>>()
        .unwrap();
    LabeledDataset::new(images, (0..n).map(|i| i % classes).collect(), classes).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn raw_files_round_trip(n in 1usize..6, res in 1usize..6, classes in 1usize..5, seed in any::<u8>()) {
        let pixels: Vec<u8> = (0..n * res * res * 3).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        let ds = dataset(&pixels, n, res, classes);
        let bytes = raw_bytes(&ds).unwrap();
        let back = parse_raw(&bytes).unwrap();
        prop_assert_eq!(&back.labels, &ds.labels);
        prop_assert_eq!(&back.images, &ds.images);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.raw");
        write_raw(&p, &ds).unwrap();
        prop_assert_eq!(read_raw(&p).unwrap().images, ds.images);
    }

    #[test]
    fn echoed_configs_reparse_identically(
        seed in any::<u64>(),
        method in prop::sample::select(Method::ALL.to_vec()),
        mode in prop::sample::select(vec![WeightMode::Constant, WeightMode::Score, WeightMode::Pixel, WeightMode::Random]),
        norm in prop::sample::select(vec![WeightNorm::Raw, WeightNorm::BatchMean]),
        form in prop::sample::select(vec![SimclrForm::Alg1, SimclrForm::Eq6]),
        tau in 0.01f64..2.0,
        epochs in 0usize..100,
    ) {
        let mut cfg = RunConfig::new(seed, DatasetSpec::synth());
        cfg.cl.method = method;
        cfg.cl.weight_mode = mode;
        cfg.cl.weight_norm = norm;
        cfg.cl.simclr_form = form;
        cfg.cl.tau = tau;
        cfg.cl.epochs = epochs;
        let cfg = cfg.resolve().unwrap();
        let echoed = parse_config_str(&cfg.to_json(), "echo").unwrap();
        prop_assert_eq!(echoed, cfg);
    }
}
