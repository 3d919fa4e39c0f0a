//! Noise-conditional score model trained by denoising score matching.
//!
//! Conditioning on σ is done by output scaling: the network's raw output is
//! divided by σ, so one set of weights serves the whole ladder. With the
//! weighting λ(σ) = σ² the per-level objective becomes `½‖raw(x̃) + ε‖²`.

use rand::Rng;
use rand_distr::StandardNormal;
use scorecl_autodiff::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::augment::{images_to_tensor, Image};
use crate::data::{batch_iter, BatchMode};
use crate::error::{Error, Result};
use crate::nn::{adam_step, cosine_lr, init_params, Architecture, OptimizerState, ParamSet};
use crate::rng;

/// `levels` values geometric from `max` down to `min`.
pub fn geometric_ladder(max: f64, min: f64, levels: usize) -> Result<Vec<f64>> {
    if levels == 0 || !(max > 0.0) || !(min > 0.0) || min > max {
        return Err(Error::Invalid(format!("σ ladder max {max}, min {min}, levels {levels}")));
    }
    if levels == 1 {
        return Ok(vec![max]);
    }
    if min == max {
        return Err(Error::Invalid("a ladder with several levels needs max > min".into()));
    }
    let ratio = (min / max).ln() / (levels - 1) as f64;
    Ok((0..levels)
        .map(|i| if i + 1 == levels { min } else { max * (ratio * i as f64).exp() })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel<T: Real> {
    params: ParamSet<T>,
    sigmas: Vec<f64>,
}

/// Estimated `∇ log p` with the layout of the model input (`[C,H,W]` for
/// images, `[d]` for vectors).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreField {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl<T: Real> ScoreModel<T> {
    pub fn new(params: ParamSet<T>, sigmas: Vec<f64>) -> Result<Self> {
        if !matches!(
            params.architecture(),
            Architecture::ScoreNet { .. } | Architecture::AffineScore { .. }
        ) {
            return Err(Error::Invalid("score model needs a score architecture".into()));
        }
        if sigmas.is_empty() || sigmas.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Invalid(format!("σ ladder {sigmas:?} must be nonempty and positive")));
        }
        if sigmas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Invalid(format!("σ ladder {sigmas:?} must be strictly decreasing")));
        }
        Ok(ScoreModel { params, sigmas })
    }

    pub fn init(arch: &Architecture, sigmas: Vec<f64>, seed: u64) -> Result<Self> {
        ScoreModel::new(init_params(arch, seed)?, sigmas)
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn levels(&self) -> usize {
        self.sigmas.len()
    }

    /// σ at a 1-based ladder index.
    pub fn sigma(&self, index: usize) -> Result<f64> {
        if index == 0 || index > self.sigmas.len() {
            return Err(Error::Invalid(format!(
                "σ index {index} outside 1..={}",
                self.sigmas.len()
            )));
        }
        Ok(self.sigmas[index - 1])
    }

    /// Same ladder with different parameter tensors (e.g. a tracked copy).
    pub fn with_params(&self, params: ParamSet<T>) -> Result<Self> {
        if params.architecture() != self.params.architecture() {
            return Err(Error::Invalid("parameter set has a different architecture".into()));
        }
        Ok(ScoreModel { params, sigmas: self.sigmas.clone() })
    }

    /// Network output before the 1/σ scaling.
    pub fn raw_forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let p = &self.params;
        match p.architecture() {
            Architecture::AffineScore { dim } => {
                if x.rank() != 2 || x.shape()[1] != *dim {
                    return Err(Error::Invalid(format!("affine score expects [B,{dim}], got {:?}", x.shape())));
                }
                p.apply("affine", x)
            }
            Architecture::ScoreNet { channels, .. } => {
                match x.shape() {
                    [_, c, h, w] if c == channels && h % 4 == 0 && w % 4 == 0 => {}
                    s => {
                        return Err(Error::Invalid(format!(
                            "score net expects [B,{channels},H,W] with H, W divisible by 4, got {s:?}"
                        )))
                    }
                }
                let h1 = p.apply("enc1", x)?.relu();
                let h2 = p.apply("enc2", &h1)?.relu();
                let h3 = p.apply("enc3", &h2)?.relu();
                let d3 = p.apply("dec3", &h3)?.upsample_nearest2()?.add(&h2)?.relu();
                let d2 = p.apply("dec2", &d3)?.upsample_nearest2()?.add(&h1)?.relu();
                p.apply("out", &d2)
            }
            Architecture::Encoder { .. } => unreachable!("checked at construction"),
        }
    }

    /// Score of a batch at one ladder level: raw output divided by σ.
    pub fn forward(&self, x: &Tensor<T>, sigma_index: usize) -> Result<Tensor<T>> {
        let sigma = self.sigma(sigma_index)?;
        Ok(self.raw_forward(x)?.scale(1.0 / sigma))
    }
}

/// Score field of one image at a 1-based ladder index.
pub fn score_forward<T: Real>(model: &ScoreModel<T>, img: &Image, sigma_index: usize) -> Result<ScoreField> {
    let x: Tensor<T> = images_to_tensor(&[img])?;
    let out = model.forward(&x, sigma_index)?;
    Ok(ScoreField { shape: out.shape()[1..].to_vec(), values: out.to_f64_vec() })
}

const EVAL_CHUNK: usize = 64;

/// Score fields of many images at the smallest σ, evaluated in chunks.
pub fn score_fields<T: Real>(model: &ScoreModel<T>, images: &[&Image]) -> Result<Vec<ScoreField>> {
    let frozen = model.with_params(model.params.detach())?;
    let mut fields = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_CHUNK) {
        let x: Tensor<T> = images_to_tensor(chunk)?;
        let out = frozen.forward(&x, frozen.levels())?;
        let per = out.len() / chunk.len();
        let shape = out.shape()[1..].to_vec();
        for values in out.to_f64_vec().chunks(per) {
            fields.push(ScoreField { shape: shape.clone(), values: values.to_vec() });
        }
    }
    Ok(fields)
}

/// Mean absolute score at the smallest σ on the un-noised image.
pub fn score_value<T: Real>(model: &ScoreModel<T>, img: &Image) -> Result<f64> {
    Ok(field_mean_abs(&score_forward(model, img, model.levels())?))
}

/// [`score_value`] for many images.
pub fn score_values<T: Real>(model: &ScoreModel<T>, images: &[&Image]) -> Result<Vec<f64>> {
    Ok(score_fields(model, images)?.iter().map(field_mean_abs).collect())
}

pub fn field_mean_abs(field: &ScoreField) -> f64 {
    field.values.iter().map(|v| v.abs()).sum::<f64>() / field.values.len() as f64
}

/// L1 distance between two scalar score values.
pub fn score_distance(v1: f64, v2: f64) -> f64 {
    (v1 - v2).abs()
}

/// Mean absolute difference between two score fields.
pub fn score_distance_field(f1: &ScoreField, f2: &ScoreField) -> Result<f64> {
    if f1.shape != f2.shape {
        return Err(Error::Invalid(format!(
            "score fields have shapes {:?} and {:?}",
            f1.shape, f2.shape
        )));
    }
    Ok(f1.values.iter().zip(&f2.values).map(|(a, b)| (a - b).abs()).sum::<f64>() / f1.values.len() as f64)
}

/// Standard normal noise shaped like `like`.
pub fn draw_noise<T: Real, R: Rng + ?Sized>(like: &Tensor<T>, rng: &mut R) -> Tensor<T> {
    let data: Vec<T> = (0..like.len()).map(|_| T::from_f64(rng.sample(StandardNormal))).collect();
    Tensor::new(like.shape(), data).expect("same shape")
}

fn batch_rows<T: Real>(t: &Tensor<T>) -> Result<usize> {
    match t.shape().first() {
        Some(&b) if t.rank() >= 2 => Ok(b),
        _ => Err(Error::Invalid(format!("expected a batch, got shape {:?}", t.shape()))),
    }
}

/// Per-sample weighted DSM: sample `b` is perturbed with σ = `sigmas[b]`
/// and its ½‖s − target‖² is multiplied by `weights[b]`; the result is the
/// batch mean.
pub fn dsm_loss_per_sample<T: Real>(
    model: &ScoreModel<T>,
    batch: &Tensor<T>,
    sigmas: &[f64],
    weights: &[f64],
    noise: &Tensor<T>,
) -> Result<Tensor<T>> {
    let b = batch_rows(batch)?;
    if sigmas.len() != b || weights.len() != b || noise.shape() != batch.shape() {
        return Err(Error::Invalid("per-sample σ, weights and noise must match the batch".into()));
    }
    let per = batch.len() / b;
    let (x, eps) = (batch.data(), noise.data());
    let mut noisy = Vec::with_capacity(batch.len());
    let mut target = Vec::with_capacity(batch.len());
    let mut inv_sigma = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let s = sigmas[i / per];
        let e = eps[i].as_f64();
        noisy.push(T::from_f64(x[i].as_f64() + s * e));
        target.push(T::from_f64(-e / s));
        inv_sigma.push(T::from_f64(1.0 / s));
    }
    let shape = batch.shape();
    let raw = model.raw_forward(&Tensor::new(shape, noisy)?)?;
    let score = raw.mul(&Tensor::new(shape, inv_sigma)?)?;
    let diff = score.sub(&Tensor::new(shape, target)?)?;
    let axes: Vec<usize> = (1..diff.rank()).collect();
    let per_sample = diff.l2norm_sq(Some(&axes))?;
    let w = Tensor::from_f64(&[b], weights)?;
    Ok(per_sample.mul(&w)?.sum().scale(0.5 / b as f64))
}

/// DSM at one 1-based ladder level with given noise.
pub fn dsm_loss_with_noise<T: Real>(
    model: &ScoreModel<T>,
    batch: &Tensor<T>,
    sigma_index: usize,
    noise: &Tensor<T>,
) -> Result<Tensor<T>> {
    let sigma = model.sigma(sigma_index)?;
    let b = batch_rows(batch)?;
    dsm_loss_per_sample(model, batch, &vec![sigma; b], &vec![1.0; b], noise)
}

/// DSM at one level: `mean_b ½‖s(x̃_b) + ε_b/σ‖²` with `x̃ = x + σε`.
pub fn dsm_loss_single<T: Real, R: Rng + ?Sized>(
    model: &ScoreModel<T>,
    batch: &Tensor<T>,
    sigma_index: usize,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let noise = draw_noise(batch, rng);
    dsm_loss_with_noise(model, batch, sigma_index, &noise)
}

/// `(1/L) Σ_i σ_i²·single_i`, fresh noise per level.
pub fn dsm_loss_unified<T: Real, R: Rng + ?Sized>(
    model: &ScoreModel<T>,
    batch: &Tensor<T>,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let levels = model.levels();
    let mut total: Option<Tensor<T>> = None;
    for i in 1..=levels {
        let sigma = model.sigma(i)?;
        let term = dsm_loss_single(model, batch, i, rng)?.scale(sigma * sigma);
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    Ok(total.expect("at least one level").scale(1.0 / levels as f64))
}

/// One level per sample, drawn uniformly; an unbiased estimate of
/// [`dsm_loss_unified`] at the cost of a single forward pass.
pub fn dsm_loss_sampled<T: Real, R: Rng + ?Sized>(
    model: &ScoreModel<T>,
    batch: &Tensor<T>,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let b = batch_rows(batch)?;
    let sigmas: Vec<f64> = (0..b).map(|_| model.sigmas[rng.gen_range(0..model.levels())]).collect();
    let weights: Vec<f64> = sigmas.iter().map(|s| s * s).collect();
    let noise = draw_noise(batch, rng);
    dsm_loss_per_sample(model, batch, &sigmas, &weights, &noise)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DsmObjective {
    /// Every ladder level for every sample.
    Unified,
    /// One random level per sample.
    Sampled,
}

fn default_score_epochs() -> usize {
    30
}
fn default_score_batch() -> usize {
    64
}
fn default_score_lr() -> f64 {
    1e-3
}
fn default_sigma_max() -> f64 {
    1.0
}
fn default_sigma_min() -> f64 {
    0.01
}
fn default_levels() -> usize {
    10
}
fn default_widths() -> [usize; 3] {
    [32, 64, 128]
}
fn default_objective() -> DsmObjective {
    DsmObjective::Sampled
}

/// Score-model training recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    #[serde(default = "default_score_epochs")]
    pub epochs: usize,
    #[serde(default = "default_score_batch")]
    pub batch: usize,
    #[serde(default = "default_score_lr")]
    pub lr: f64,
    #[serde(default = "default_sigma_max")]
    pub sigma_max: f64,
    #[serde(default = "default_sigma_min")]
    pub sigma_min: f64,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_widths")]
    pub widths: [usize; 3],
    #[serde(default = "default_objective")]
    pub objective: DsmObjective,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            epochs: default_score_epochs(),
            batch: default_score_batch(),
            lr: default_score_lr(),
            sigma_max: default_sigma_max(),
            sigma_min: default_sigma_min(),
            levels: default_levels(),
            widths: default_widths(),
            objective: default_objective(),
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("score.batch must be positive".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("score.lr = {} must be positive", self.lr)));
        }
        geometric_ladder(self.sigma_max, self.sigma_min, self.levels).map_err(|e| Error::Config(e.to_string()))?;
        if self.widths.contains(&0) {
            return Err(Error::Config("score.widths must be positive".into()));
        }
        Ok(())
    }

    pub fn ladder(&self) -> Result<Vec<f64>> {
        geometric_ladder(self.sigma_max, self.sigma_min, self.levels)
    }
}

/// Adam on the DSM objective with cosine decay (no warmup). `data` holds
/// the training set as `[N, …]`. Returns the model and per-epoch mean loss.
pub fn train_score_model<T: Real>(
    data: &Tensor<T>,
    arch: &Architecture,
    cfg: &ScoreConfig,
    seed: u64,
) -> Result<(ScoreModel<T>, Vec<f64>)> {
    cfg.validate()?;
    let n = batch_rows(data)?;
    let mut model = ScoreModel::init(arch, cfg.ladder()?, seed)?;
    let steps_per_epoch = n.div_ceil(cfg.batch);
    let total = cfg.epochs * steps_per_epoch;
    let mut state = OptimizerState::new(&model.params);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        let batches = batch_iter(n, cfg.batch, epoch, seed, BatchMode::KeepLast)?;
        for idx in &batches {
            let batch = data.select_rows(idx)?;
            let tracked = model.with_params(model.params.track())?;
            let mut rng = rng::stream(&[seed, 0xD5, epoch as u64, step as u64]);
            let loss = match cfg.objective {
                DsmObjective::Sampled => dsm_loss_sampled(&tracked, &batch, &mut rng)?,
                DsmObjective::Unified => dsm_loss_unified(&tracked, &batch, &mut rng)?,
            };
            let value = loss.item().as_f64();
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, step, loss: value });
            }
            let grads = tracked.params.gradients(&loss.backward()?)?;
            let lr = cosine_lr(step, total, 0, cfg.lr)?;
            adam_step(&mut model.params, &grads, &mut state, lr, 0.9, 0.999, 1e-8)?;
            sum += value;
            step += 1;
        }
        history.push(sum / batches.len() as f64);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn tiny_net() -> Architecture {
        Architecture::ScoreNet { channels: 3, widths: [2, 3, 4] }
    }

    fn zero_model(arch: &Architecture, sigmas: Vec<f64>) -> ScoreModel<f64> {
        let p: ParamSet<f64> = init_params(arch, 0).unwrap();
        let zeroed: Vec<(String, Tensor<f64>)> =
            p.iter().map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape()))).collect();
        ScoreModel::new(ParamSet::from_parts(arch, zeroed).unwrap(), sigmas).unwrap()
    }

    fn pattern(n: usize, salt: usize) -> Vec<f64> {
        (0..n).map(|i| (((i * 31 + salt * 7) % 19) as f64) / 18.0).collect()
    }

    #[test]
    fn ladder_is_geometric() {
        let l = geometric_ladder(1.0, 0.01, 10).unwrap();
        assert_eq!(l.len(), 10);
        assert_eq!(l[0], 1.0);
        assert_eq!(l[9], 0.01);
        let r = l[1] / l[0];
        for w in l.windows(2) {
            assert!((w[1] / w[0] - r).abs() < 1e-12);
        }
        assert!(geometric_ladder(0.01, 1.0, 3).is_err());
    }

    #[test]
    fn ladder_must_decrease() {
        assert!(ScoreModel::<f64>::init(&tiny_net(), vec![0.5, 0.5], 0).is_err());
        assert!(ScoreModel::<f64>::init(&tiny_net(), vec![0.5, -0.1], 0).is_err());
        assert!(ScoreModel::<f64>::init(&Architecture::encoder(3, false), vec![1.0], 0).is_err());
    }

    #[test]
    fn zero_network_gives_zero_field() {
        let m = zero_model(&tiny_net(), vec![1.0, 0.1]);
        let img = Image::new(8, 8, 3, pattern(192, 1).iter().map(|&v| v as f32).collect()).unwrap();
        let f = score_forward(&m, &img, 2).unwrap();
        assert_eq!(f.shape, vec![3, 8, 8]);
        assert!(f.values.iter().all(|&v| v == 0.0));
        assert_eq!(score_value(&m, &img).unwrap(), 0.0);
        assert!(score_forward(&m, &img, 0).is_err());
        assert!(score_forward(&m, &img, 3).is_err());
    }

    #[test]
    fn halving_sigma_doubles_the_field() {
        let m: ScoreModel<f64> = ScoreModel::init(&tiny_net(), vec![0.5, 0.25], 3).unwrap();
        let img = Image::new(8, 8, 3, pattern(192, 2).iter().map(|&v| v as f32).collect()).unwrap();
        let a = score_forward(&m, &img, 1).unwrap();
        let b = score_forward(&m, &img, 2).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn full_size_field_shape() {
        let m: ScoreModel<f32> = ScoreModel::init(&Architecture::score_net(3), vec![1.0], 0).unwrap();
        let img = Image::filled(32, 32, 3, 0.4);
        assert_eq!(score_forward(&m, &img, 1).unwrap().shape, vec![3, 32, 32]);
    }

    #[test]
    fn zero_model_single_loss_closed_form() {
        let m = zero_model(&tiny_net(), vec![0.5]);
        let x = Tensor::new(&[2, 3, 4, 4], pattern(96, 3)).unwrap();
        let eps = draw_noise(&x, &mut stream(&[1]));
        let loss = dsm_loss_with_noise(&m, &x, 1, &eps).unwrap().item();
        let want = eps.data().iter().map(|e| 0.5 * (e / 0.5).powi(2)).sum::<f64>() / 2.0;
        assert!((loss - want).abs() < 1e-12 * want);
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        // clean batch at zero: x̃ = σε, and W = −I/σ gives raw = −ε, score = −ε/σ
        let sigma = 0.5;
        let arch = Architecture::AffineScore { dim: 3 };
        let mut p: ParamSet<f64> = init_params(&arch, 0).unwrap();
        let w = -1.0 / sigma;
        p.set("affine.weight", Tensor::new(&[3, 3], vec![w, 0.0, 0.0, 0.0, w, 0.0, 0.0, 0.0, w]).unwrap())
            .unwrap();
        let m = ScoreModel::new(p, vec![sigma]).unwrap();
        let x = Tensor::zeros(&[4, 3]);
        let eps = draw_noise(&x, &mut stream(&[2]));
        assert!(dsm_loss_with_noise(&m, &x, 1, &eps).unwrap().item().abs() < 1e-24);
    }

    #[test]
    fn single_loss_matches_pixel_loop() {
        let m: ScoreModel<f64> = ScoreModel::init(&tiny_net(), vec![0.8, 0.3], 5).unwrap();
        let x = Tensor::new(&[2, 3, 4, 4], pattern(96, 4)).unwrap();
        let eps = draw_noise(&x, &mut stream(&[3]));
        let sigma = 0.3;
        let loss = dsm_loss_with_noise(&m, &x, 2, &eps).unwrap().item();

        let noisy: Vec<f64> = x.data().iter().zip(eps.data()).map(|(a, e)| a + sigma * e).collect();
        let raw = m.raw_forward(&Tensor::new(&[2, 3, 4, 4], noisy).unwrap()).unwrap();
        let mut total = 0.0;
        for i in 0..96 {
            let s = raw.data()[i] / sigma;
            let t = -eps.data()[i] / sigma;
            total += 0.5 * (s - t) * (s - t);
        }
        assert!((loss - total / 2.0).abs() < 1e-10);
    }

    #[test]
    fn unified_with_one_level_scales_single() {
        let m: ScoreModel<f64> = ScoreModel::init(&tiny_net(), vec![0.6], 1).unwrap();
        let x = Tensor::new(&[2, 3, 4, 4], pattern(96, 5)).unwrap();
        let u = dsm_loss_unified(&m, &x, &mut stream(&[4])).unwrap().item();
        let s = dsm_loss_single(&m, &x, 1, &mut stream(&[4])).unwrap().item();
        assert!((u - 0.36 * s).abs() < 1e-12 * u);
    }

    #[test]
    fn unified_matches_per_level_average() {
        let ladder = vec![1.0, 0.5, 0.25];
        let m: ScoreModel<f64> = ScoreModel::init(&tiny_net(), ladder.clone(), 2).unwrap();
        let x = Tensor::new(&[2, 3, 4, 4], pattern(96, 6)).unwrap();
        let u = dsm_loss_unified(&m, &x, &mut stream(&[5])).unwrap().item();
        let mut rng = stream(&[5]);
        let mut acc = 0.0;
        for (i, s) in ladder.iter().enumerate() {
            acc += s * s * dsm_loss_single(&m, &x, i + 1, &mut rng).unwrap().item();
        }
        assert!((u - acc / 3.0).abs() < 1e-12 * u);
    }

    #[test]
    fn zero_model_unified_cancels_sigma() {
        let ladder = vec![1.0, 0.3, 0.05];
        let m = zero_model(&tiny_net(), ladder.clone());
        let x = Tensor::new(&[2, 3, 4, 4], pattern(96, 7)).unwrap();
        let u = dsm_loss_unified(&m, &x, &mut stream(&[6])).unwrap().item();
        let mut rng = stream(&[6]);
        let mut want = 0.0;
        for _ in &ladder {
            let eps = draw_noise(&x, &mut rng);
            want += eps.data().iter().map(|e| 0.5 * e * e).sum::<f64>() / 2.0;
        }
        assert!((u - want / 3.0).abs() < 1e-12 * u);
    }

    #[test]
    fn score_value_and_distances() {
        let f = ScoreField { shape: vec![4], values: vec![-2.0, -2.0, -2.0, -2.0] };
        assert_eq!(field_mean_abs(&f), 2.0);
        let g = ScoreField { shape: vec![4], values: vec![-1.5, -1.5, -1.5, -1.5] };
        assert_eq!(score_distance_field(&f, &g).unwrap(), 0.5);
        assert_eq!(score_distance_field(&f, &f).unwrap(), 0.0);
        let h = ScoreField { shape: vec![2, 2], values: vec![0.0; 4] };
        assert!(score_distance_field(&f, &h).is_err());
        assert!((score_distance(0.5, 0.2) - 0.3).abs() < 1e-15);
        assert_eq!(score_distance(0.7, 0.7), 0.0);
    }

    #[test]
    fn batched_values_match_single_calls() {
        let m: ScoreModel<f64> = ScoreModel::init(&tiny_net(), vec![1.0, 0.1], 4).unwrap();
        let imgs: Vec<Image> = (0..3)
            .map(|k| Image::new(8, 8, 3, pattern(192, k).iter().map(|&v| v as f32).collect()).unwrap())
            .collect();
        let refs: Vec<&Image> = imgs.iter().collect();
        let batched = score_values(&m, &refs).unwrap();
        for (img, v) in imgs.iter().zip(&batched) {
            assert!((score_value(&m, img).unwrap() - v).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let data = Tensor::new(&[4, 3, 4, 4], pattern(192, 8)).unwrap();
        let cfg = ScoreConfig { epochs: 0, levels: 2, sigma_min: 0.5, ..ScoreConfig::default() };
        let (m, hist) = train_score_model::<f64>(&data, &tiny_net(), &cfg, 11).unwrap();
        assert!(hist.is_empty());
        assert_eq!(m, ScoreModel::init(&tiny_net(), cfg.ladder().unwrap(), 11).unwrap());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = Tensor::new(&[16, 3, 4, 4], pattern(768, 9)).unwrap();
        let cfg = ScoreConfig { epochs: 6, batch: 8, lr: 1e-2, levels: 3, sigma_min: 0.1, ..ScoreConfig::default() };
        let (a, ha) = train_score_model::<f64>(&data, &tiny_net(), &cfg, 3).unwrap();
        let (b, hb) = train_score_model::<f64>(&data, &tiny_net(), &cfg, 3).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert!(ha.last().unwrap() < ha.first().unwrap());
    }
}
