//! Contrastive training loop: view sampling, pair weights, loss, optimizer
//! step, per-step metrics and per-epoch checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use scorecl_autodiff::Tensor;

use crate::augment::{images_to_tensor, sample_view_pair, Image, ViewPair};
use crate::checkpoint::{save_checkpoint, CheckpointHeader};
use crate::config::{Optimizer, RunConfig, Sampling};
use crate::contrastive::{
    info_nce, median_threshold_indices, pixel_distance, pair_weights, simclr_weighted, simsiam_loss,
    simsiam_weighted, vicreg_loss, vicreg_weighted, wmse_loss, wmse_weighted, Method, WeightLayout, WeightMode,
    WeightVector,
};
use crate::data::{batch_iter, BatchMode, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, cosine_lr, encoder_forward, init_params, predictor_forward, sgd_momentum_step, Architecture,
    OptimizerState, ParamSet,
};
use crate::rng;
use crate::score::{score_distance, score_distance_field, score_fields, score_values, ScoreModel};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub mean_weight: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub const HEADER: &'static str = "epoch,step,lr,loss,mean_weight,wall_seconds";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{},{}", r.epoch, r.step, r.lr, r.loss, r.mean_weight, r.wall_seconds)
                .expect("write to string");
        }
        out
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }

    /// Mean loss of each epoch, in order.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.rows {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.loss;
            out[r.epoch].1 += 1;
        }
        out.into_iter().filter(|(_, n)| *n > 0).map(|(s, n)| s / n as f64).collect()
    }
}

/// Knobs outside the run config.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Directory receiving `metrics.csv` and the last / best encoder checkpoints.
    pub out_dir: Option<PathBuf>,
    /// Route constant mode through the weighted loss with unit weights
    /// instead of the base loss.
    pub weighted_constant: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub encoder: ParamSet<f32>,
    pub metrics: MetricsLog,
}

pub const LAST_CHECKPOINT: &str = "encoder_last.ckpt";
pub const BEST_CHECKPOINT: &str = "encoder_best.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";

pub fn encoder_architecture(cfg: &RunConfig, channels: usize) -> Architecture {
    Architecture::encoder(channels, cfg.cl.method == Method::Simsiam)
}

/// View pairs for the given source indices; view streams `2·round` and
/// `2·round + 1` keep the second draw of median sampling independent.
pub fn sample_pairs(
    cfg: &RunConfig,
    ds: &LabeledDataset,
    indices: &[usize],
    epoch: usize,
    round: usize,
) -> Result<Vec<ViewPair>> {
    indices
        .iter()
        .map(|&i| {
            let mut ra = rng::sample_stream(cfg.seed, epoch, i, 2 * round);
            let mut rb = rng::sample_stream(cfg.seed, epoch, i, 2 * round + 1);
            sample_view_pair(&ds.images[i], &cfg.aug, i, &mut ra, &mut rb)
        })
        .collect()
}

fn doubled_views(pairs: &[ViewPair]) -> Vec<&Image> {
    pairs.iter().map(|p| &p.view_a).chain(pairs.iter().map(|p| &p.view_b)).collect()
}

fn need_score<'a>(score: Option<&'a ScoreModel<f32>>, what: &str) -> Result<&'a ScoreModel<f32>> {
    score.ok_or_else(|| Error::Config(format!("{what} requires a score model")))
}

/// Distance between views `i` and `k` of the doubled batch, for a mode.
struct ViewDistances {
    mode: WeightMode,
    values: Vec<f64>,
    fields: Vec<crate::score::ScoreField>,
    random_key: [u64; 3],
}

impl ViewDistances {
    fn new(
        mode: WeightMode,
        pairs: &[ViewPair],
        score: Option<&ScoreModel<f32>>,
        random_key: [u64; 3],
    ) -> Result<Self> {
        let views = doubled_views(pairs);
        let (values, fields) = match mode {
            WeightMode::Score => (score_values(need_score(score, "weight mode score")?, &views)?, Vec::new()),
            WeightMode::ScoreField => (Vec::new(), score_fields(need_score(score, "weight mode score_field")?, &views)?),
            _ => (Vec::new(), Vec::new()),
        };
        Ok(ViewDistances { mode, values, fields, random_key })
    }

    fn between(&self, views: &[&Image], i: usize, k: usize) -> Result<f64> {
        match self.mode {
            WeightMode::Constant => Ok(1.0),
            WeightMode::Score => Ok(score_distance(self.values[i], self.values[k])),
            WeightMode::ScoreField => score_distance_field(&self.fields[i], &self.fields[k]),
            WeightMode::Pixel => pixel_distance(views[i].pixels(), views[k].pixels()),
            WeightMode::Random => {
                let [seed, epoch, step] = self.random_key;
                Ok(rng::stream(&[seed, 0x7A, epoch, step, i as u64, k as u64]).gen::<f64>())
            }
        }
    }
}

/// Per-pair distances between view a and view b of each pair.
fn pair_distances(
    mode: WeightMode,
    pairs: &[ViewPair],
    score: Option<&ScoreModel<f32>>,
    key: [u64; 3],
) -> Result<Vec<f64>> {
    let d = ViewDistances::new(mode, pairs, score, key)?;
    let views = doubled_views(pairs);
    let b = pairs.len();
    (0..b).map(|i| d.between(&views, i, i + b)).collect()
}

/// Pair weights for one step in the configured mode and layout.
pub fn compute_weights(
    cfg: &RunConfig,
    pairs: &[ViewPair],
    score: Option<&ScoreModel<f32>>,
    epoch: usize,
    step: usize,
) -> Result<WeightVector> {
    let loss = cfg.cl.loss();
    let b = pairs.len();
    let layout = if loss.matrix_weights() { WeightLayout::Matrix } else { WeightLayout::PerPair };
    let key = [cfg.seed, epoch as u64, step as u64];
    match (loss.weight_mode, layout) {
        (WeightMode::Constant, _) => Ok(WeightVector::ones(b, layout)),
        (WeightMode::Score, _) => {
            let model = need_score(score, "weight mode score")?;
            let v = score_values(model, &doubled_views(pairs))?;
            pair_weights(&v[..b], &v[b..], &loss)
        }
        (mode, WeightLayout::PerPair) => WeightVector::per_pair(pair_distances(mode, pairs, score, key)?, loss.weight_norm),
        (mode, WeightLayout::Matrix) => {
            let d = ViewDistances::new(mode, pairs, score, key)?;
            let views = doubled_views(pairs);
            let mut err = None;
            let w = WeightVector::matrix(b, loss.weight_norm, |i, k| match d.between(&views, i, k) {
                Ok(v) => v,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            })?;
            err.map_or(Ok(w), Err)
        }
    }
}

/// Distance used to rank pairs for median sampling: the weight mode's own
/// distance, or the score distance in constant mode.
fn selection_distances(
    cfg: &RunConfig,
    pairs: &[ViewPair],
    score: Option<&ScoreModel<f32>>,
    epoch: usize,
    step: usize,
) -> Result<Vec<f64>> {
    let mode = match cfg.cl.weight_mode {
        WeightMode::Constant => WeightMode::Score,
        m => m,
    };
    pair_distances(mode, pairs, score, [cfg.seed, epoch as u64, step as u64])
}

/// Loss of one step for `params` (tracked or not) on the given pairs.
pub fn step_loss(
    cfg: &RunConfig,
    params: &ParamSet<f32>,
    pairs: &[ViewPair],
    weights: &WeightVector,
    weighted: bool,
) -> Result<Tensor<f32>> {
    let b = pairs.len();
    let loss = cfg.cl.loss();
    let batch = images_to_tensor::<f32>(&doubled_views(pairs))?;
    let (_, proj) = encoder_forward(params, &batch)?;
    let za = proj.slice_rows(0, b)?;
    let zb = proj.slice_rows(b, 2 * b)?;
    match loss.method {
        Method::Simclr if weighted => simclr_weighted(&za, &zb, weights, &loss),
        Method::Simclr => info_nce(&za, &zb, loss.tau),
        Method::Simsiam => {
            let p = predictor_forward(params, &proj)?;
            let (pa, pb) = (p.slice_rows(0, b)?, p.slice_rows(b, 2 * b)?);
            if weighted {
                simsiam_weighted(&pa, &za, &pb, &zb, weights)
            } else {
                simsiam_loss(&pa, &za, &pb, &zb)
            }
        }
        Method::Wmse if weighted => wmse_weighted(&[&za, &zb], weights, loss.whiten_eps),
        Method::Wmse => wmse_loss(&[&za, &zb], loss.whiten_eps),
        Method::Vicreg if weighted => vicreg_weighted(&za, &zb, weights, &loss),
        Method::Vicreg => vicreg_loss(&za, &zb, &loss),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn header(cfg: &RunConfig, params: &ParamSet<f32>, step: usize) -> CheckpointHeader {
    let mut h = CheckpointHeader::new(params, step as u64, serde_json::to_value(cfg).expect("config serializes"));
    if cfg.wall_clock {
        h.wall_clock = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs_f64());
    }
    h
}

/// Trains the encoder. Labels are never read. A score model is required for
/// the score weight modes and for median sampling in constant mode.
pub fn train_cl(
    cfg: &RunConfig,
    ds: &LabeledDataset,
    score: Option<&ScoreModel<f32>>,
    opts: &TrainOptions,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let cl = &cfg.cl;
    if cl.weight_mode.needs_score() || (cl.sampling == Sampling::MedianThreshold && cl.weight_mode == WeightMode::Constant)
    {
        need_score(score, &format!("weight mode {} with sampling {}", cl.weight_mode, cl.sampling))?;
    }
    let first = ds.images.first().ok_or_else(|| Error::Data("training set is empty".into()))?;
    if ds.len() < cl.batch && cl.epochs > 0 {
        return Err(Error::Config(format!("cl.batch = {} exceeds the {} training images", cl.batch, ds.len())));
    }
    let arch = encoder_architecture(cfg, first.channels());
    if let Architecture::Encoder { proj_dim, .. } = arch {
        if cl.method == Method::Wmse && 2 * cl.batch <= proj_dim {
            return Err(Error::Config(format!(
                "wmse whitens 2·batch = {} rows, which must exceed the projection width {proj_dim}",
                2 * cl.batch
            )));
        }
    }
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut params: ParamSet<f32> = init_params(&arch, cfg.seed)?;
    let mut state = OptimizerState::new(&params);
    let steps_per_epoch = ds.len() / cl.batch;
    let total = cl.epochs * steps_per_epoch;
    let warmup = ((cl.warmup_frac * total as f64).round() as usize).min(total.saturating_sub(1));
    let base_lr = cl.resolved_lr();
    let weighted = cl.weight_mode != WeightMode::Constant || opts.weighted_constant;
    let started = Instant::now();

    let mut metrics = MetricsLog::default();
    let mut best = f64::INFINITY;
    let mut step = 0;
    for epoch in 0..cl.epochs {
        for idx in batch_iter(ds.len(), cl.batch, epoch, cfg.seed, BatchMode::DropLast)? {
            let mut pairs = sample_pairs(cfg, ds, &idx, epoch, 0)?;
            if cl.sampling == Sampling::MedianThreshold {
                pairs.extend(sample_pairs(cfg, ds, &idx, epoch, 1)?);
                let keep = median_threshold_indices(&selection_distances(cfg, &pairs, score, epoch, step)?)?;
                let mut slots: Vec<Option<ViewPair>> = pairs.into_iter().map(Some).collect();
                pairs = keep.into_iter().map(|i| slots[i].take().expect("distinct indices")).collect();
            }
            let weights = compute_weights(cfg, &pairs, score, epoch, step)?;
            let tracked = params.track();
            let loss = step_loss(cfg, &tracked, &pairs, &weights, weighted)?;
            let value = loss.item() as f64;
            if !value.is_finite() {
                if let Some(dir) = &opts.out_dir {
                    write_file(&dir.join(METRICS_FILE), metrics.to_csv().as_bytes())?;
                }
                return Err(Error::Divergence { epoch, step, loss: value });
            }
            let mut grads = tracked.gradients(&loss.backward()?)?;
            let lr = cosine_lr(step, total, warmup, base_lr)?;
            match cl.resolved_optimizer() {
                Optimizer::Sgd => sgd_momentum_step(&mut params, &grads, &mut state, lr, cl.momentum, cl.weight_decay)?,
                Optimizer::Adam => {
                    if cl.weight_decay > 0.0 {
                        for (g, w) in grads.iter_mut().zip(params.tensors()) {
                            *g = g.add(&w.scale(cl.weight_decay))?;
                        }
                    }
                    adam_step(&mut params, &grads, &mut state, lr, 0.9, 0.999, 1e-8)?
                }
            }
            metrics.rows.push(MetricsRow {
                epoch,
                step,
                lr,
                loss: value,
                mean_weight: weights.mean(),
                wall_seconds: if cfg.wall_clock { started.elapsed().as_secs_f64() } else { 0.0 },
            });
            step += 1;
        }

        if let Some(dir) = &opts.out_dir {
            let epoch_loss = metrics.epoch_losses().last().copied().unwrap_or(f64::INFINITY);
            save_checkpoint(&dir.join(LAST_CHECKPOINT), &params, &header(cfg, &params, step))?;
            if epoch_loss < best {
                best = epoch_loss;
                save_checkpoint(&dir.join(BEST_CHECKPOINT), &params, &header(cfg, &params, step))?;
            }
            write_file(&dir.join(METRICS_FILE), metrics.to_csv().as_bytes())?;
        }
    }
    if let Some(dir) = &opts.out_dir {
        if cl.epochs == 0 || steps_per_epoch == 0 {
            save_checkpoint(&dir.join(LAST_CHECKPOINT), &params, &header(cfg, &params, step))?;
            write_file(&dir.join(METRICS_FILE), metrics.to_csv().as_bytes())?;
        }
    }
    Ok(TrainOutput { encoder: params, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugPolicy;
    use crate::config::{ClConfig, DatasetSpec};
    use crate::data::synth_shapes;

    fn small(method: Method, mode: WeightMode) -> (RunConfig, LabeledDataset) {
        let mut cfg = RunConfig::new(5, DatasetSpec::synth());
        cfg.cl = ClConfig { method, weight_mode: mode, epochs: 2, batch: 8, ..ClConfig::default() };
        cfg.aug = AugPolicy { view_size: 16, ..AugPolicy::default() };
        (cfg.resolve().unwrap(), synth_shapes(20, 16, 4, 1).unwrap())
    }

    #[test]
    fn zero_epochs_returns_initial_encoder() {
        let (mut cfg, ds) = small(Method::Simclr, WeightMode::Constant);
        cfg.cl.epochs = 0;
        let out = train_cl(&cfg, &ds, None, &TrainOptions::default()).unwrap();
        let init: ParamSet<f32> = init_params(&encoder_architecture(&cfg, 3), cfg.seed).unwrap();
        assert_eq!(out.encoder.tensors(), init.tensors());
        assert!(out.metrics.rows.is_empty());
    }

    #[test]
    fn drop_last_step_count_and_lr() {
        let (cfg, ds) = small(Method::Simclr, WeightMode::Constant);
        let out = train_cl(&cfg, &ds, None, &TrainOptions::default()).unwrap();
        // 20 images, batch 8 → 2 steps per epoch
        assert_eq!(out.metrics.rows.len(), 4);
        let steps: Vec<usize> = out.metrics.rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 1, 2, 3]);
        assert!(out.metrics.rows.iter().all(|r| r.loss.is_finite() && r.mean_weight == 1.0 && r.wall_seconds == 0.0));
    }

    #[test]
    fn every_method_and_baseline_runs() {
        for method in Method::ALL {
            for mode in [WeightMode::Constant, WeightMode::Random, WeightMode::Pixel] {
                let (mut cfg, mut ds) = small(method, mode);
                cfg.cl.epochs = 1;
                if method == Method::Wmse {
                    // whitening needs 2·batch > projection width
                    cfg.cl.batch = 40;
                    ds = synth_shapes(40, 16, 4, 1).unwrap();
                }
                let out = train_cl(&cfg, &ds, None, &TrainOptions::default()).unwrap();
                for r in &out.metrics.rows {
                    assert!(r.loss.is_finite(), "{method} {mode}");
                    assert!((r.mean_weight - 1.0).abs() < 1e-6, "{method} {mode}");
                }
            }
        }
    }

    #[test]
    fn score_modes_need_a_model() {
        let (cfg, ds) = small(Method::Simclr, WeightMode::Score);
        assert!(matches!(train_cl(&cfg, &ds, None, &TrainOptions::default()), Err(Error::Config(_))));
    }

    #[test]
    fn eq6_random_weights_run() {
        let (mut cfg, ds) = small(Method::Simclr, WeightMode::Random);
        cfg.cl.simclr_form = crate::contrastive::SimclrForm::Eq6;
        let out = train_cl(&cfg, &ds, None, &TrainOptions::default()).unwrap();
        assert!(out.metrics.rows.iter().all(|r| (r.mean_weight - 1.0).abs() < 1e-6));
    }

    #[test]
    fn median_sampling_with_pixel_distance() {
        let (mut cfg, ds) = small(Method::Simclr, WeightMode::Pixel);
        cfg.cl.sampling = Sampling::MedianThreshold;
        let out = train_cl(&cfg, &ds, None, &TrainOptions::default()).unwrap();
        assert_eq!(out.metrics.rows.len(), 4);
        let (mut cfg, _) = small(Method::Simclr, WeightMode::Constant);
        cfg.cl.sampling = Sampling::MedianThreshold;
        assert!(train_cl(&cfg, &ds, None, &TrainOptions::default()).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let log = MetricsLog {
            rows: vec![MetricsRow { epoch: 0, step: 0, lr: 0.5, loss: 1.25, mean_weight: 1.0, wall_seconds: 0.0 }],
        };
        assert_eq!(log.to_csv(), "epoch,step,lr,loss,mean_weight,wall_seconds\n0,0,0.5,1.25,1,0\n");
        assert_eq!(log.epoch_losses(), vec![1.25]);
    }
}
