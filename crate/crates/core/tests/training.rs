//! Encoder training: frozen score model, determinism, label blindness and
//! the constant-weight identity, plus the files a run leaves behind.

use std::fs;

use scorecl_core::augment::AugPolicy;
use scorecl_core::checkpoint::{load_checkpoint, save_score_model};
use scorecl_core::config::{ClConfig, DatasetSpec, RunConfig};
use scorecl_core::contrastive::{Method, WeightMode};
use scorecl_core::data::{synth_shapes, LabeledDataset};
use scorecl_core::nn::{init_params, Architecture, ParamSet};
use scorecl_core::score::ScoreModel;
use scorecl_core::trainer::{
    compute_weights, encoder_architecture, sample_pairs, step_loss, train_cl, TrainOptions, BEST_CHECKPOINT,
    LAST_CHECKPOINT, METRICS_FILE,
};
use scorecl_core::{CheckpointError, Error};

fn setup(method: Method, mode: WeightMode) -> (RunConfig, LabeledDataset) {
    let mut cfg = RunConfig::new(9, DatasetSpec::synth());
    let batch = if method == Method::Wmse { 40 } else { 8 };
    cfg.cl = ClConfig { method, weight_mode: mode, epochs: 2, batch, ..ClConfig::default() };
    cfg.aug = AugPolicy { view_size: 16, ..AugPolicy::default() };
    (cfg.resolve().unwrap(), synth_shapes(40, 16, 4, 2).unwrap())
}

fn score_model() -> ScoreModel<f32> {
    ScoreModel::init(&Architecture::ScoreNet { channels: 3, widths: [4, 4, 4] }, vec![1.0, 0.3, 0.1], 4).unwrap()
}

fn bits(p: &ParamSet<f32>) -> Vec<u32> {
    p.tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn score_checkpoint_is_untouched_by_training() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("score.ckpt");
    let model = score_model();
    save_score_model(&path, &model, 0, serde_json::Value::Null).unwrap();
    let before = fs::read(&path).unwrap();

    let (mut cfg, ds) = setup(Method::Simclr, WeightMode::Score);
    cfg.cl.epochs = 1;
    let opts = TrainOptions { out_dir: Some(dir.path().join("run")), weighted_constant: false };
    train_cl(&cfg, &ds, Some(&model), &opts).unwrap();
    assert_eq!(fs::read(&path).unwrap(), before);

    let again = dir.path().join("again.ckpt");
    save_score_model(&again, &model, 0, serde_json::Value::Null).unwrap();
    assert_eq!(fs::read(&again).unwrap(), before);
}

#[test]
fn no_gradient_reaches_score_parameters() {
    let (cfg, ds) = setup(Method::Simclr, WeightMode::Score);
    let base = score_model();
    // even a tracked score model contributes only constants
    let tracked_score = base.with_params(base.params().track()).unwrap();
    let pairs = sample_pairs(&cfg, &ds, &(0..8).collect::<Vec<_>>(), 0, 0).unwrap();
    let w = compute_weights(&cfg, &pairs, Some(&tracked_score), 0, 0).unwrap();
    let enc: ParamSet<f32> = init_params(&encoder_architecture(&cfg, 3), 1).unwrap();
    let tracked = enc.track();
    let grads = step_loss(&cfg, &tracked, &pairs, &w, true).unwrap().backward().unwrap();
    for (name, t) in tracked_score.params().iter() {
        assert!(!grads.contains(t.id().unwrap()), "gradient for score parameter {name}");
    }
    assert!(tracked.tensors().iter().any(|t| grads.contains(t.id().unwrap())));
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let model = score_model();
    let (cfg, ds) = setup(Method::Simclr, WeightMode::Score);
    let outs: Vec<_> = dirs
        .iter()
        .map(|d| {
            let opts = TrainOptions { out_dir: Some(d.path().to_path_buf()), weighted_constant: false };
            train_cl(&cfg, &ds, Some(&model), &opts).unwrap()
        })
        .collect();
    assert_eq!(outs[0].metrics, outs[1].metrics);
    assert_eq!(bits(&outs[0].encoder), bits(&outs[1].encoder));
    for f in [METRICS_FILE, LAST_CHECKPOINT, BEST_CHECKPOINT] {
        assert_eq!(fs::read(dirs[0].path().join(f)).unwrap(), fs::read(dirs[1].path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn labels_are_never_read() {
    let (cfg, ds) = setup(Method::Vicreg, WeightMode::Pixel);
    let mut relabelled = ds.clone();
    relabelled.labels.reverse();
    relabelled.labels.iter_mut().for_each(|l| *l = (*l + 1) % 4);
    let a = train_cl(&cfg, &ds, None, &TrainOptions::default()).unwrap();
    let b = train_cl(&cfg, &relabelled, None, &TrainOptions::default()).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(bits(&a.encoder), bits(&b.encoder));
}

#[test]
fn constant_mode_equals_unit_weights_for_every_method() {
    for method in Method::ALL {
        let (cfg, ds) = setup(method, WeightMode::Constant);
        let base = train_cl(&cfg, &ds, None, &TrainOptions::default()).unwrap();
        let opts = TrainOptions { out_dir: None, weighted_constant: true };
        let unit = train_cl(&cfg, &ds, None, &opts).unwrap();
        assert_eq!(base.metrics, unit.metrics, "{method}");
        assert_eq!(bits(&base.encoder), bits(&unit.encoder), "{method}");
        assert!(base.metrics.rows.iter().all(|r| r.loss.is_finite() && r.mean_weight == 1.0));
    }
}

#[test]
fn truncated_encoder_checkpoint_names_the_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, ds) = setup(Method::Simclr, WeightMode::Constant);
    let opts = TrainOptions { out_dir: Some(dir.path().to_path_buf()), weighted_constant: false };
    let out = train_cl(&cfg, &ds, None, &opts).unwrap();
    let path = dir.path().join(LAST_CHECKPOINT);
    let (params, header) = load_checkpoint(&path).unwrap();
    assert_eq!(bits(&params), bits(&out.encoder));
    assert_eq!(header.step, out.metrics.rows.len() as u64);
    assert!(header.wall_clock.is_none());

    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    match load_checkpoint(&path) {
        Err(Error::Checkpoint(CheckpointError::Truncated { tensor, .. })) => {
            assert_eq!(&tensor, params.names().last().unwrap())
        }
        other => panic!("expected truncation, got {other:?}"),
    }
}

#[test]
fn metrics_csv_matches_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, ds) = setup(Method::Simsiam, WeightMode::Random);
    let opts = TrainOptions { out_dir: Some(dir.path().to_path_buf()), weighted_constant: false };
    let out = train_cl(&cfg, &ds, None, &opts).unwrap();
    let text = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(text, out.metrics.to_csv());
    // 40 images, batch 8, 2 epochs
    assert_eq!(text.lines().count(), 1 + 10);
    assert!(out.metrics.rows.iter().all(|r| r.wall_seconds == 0.0));
}
