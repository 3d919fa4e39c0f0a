//! Contrastive objectives (SimCLR / InfoNCE, SimSiam, W-MSE, VICReg) in base
//! and pair-weighted form, and the pair weights themselves.
//!
//! Weights are plain `f64` values and enter every loss as constants, so no
//! gradient reaches them or whatever produced them.

use rand::Rng;
use scorecl_autodiff::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::augment::ViewPair;
use crate::error::{Error, Result};
use crate::names::named_enum;
use crate::score::score_distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Simclr,
    Simsiam,
    Wmse,
    Vicreg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Constant,
    Score,
    ScoreField,
    Random,
    Pixel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightNorm {
    Raw,
    BatchMean,
}

/// Where SimCLR weights enter: multiplying each anchor's loss, or inside the
/// softmax fraction as a full view-by-view matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimclrForm {
    Alg1,
    Eq6,
}

named_enum!(Method, "method");
named_enum!(WeightMode, "weight mode");
named_enum!(WeightNorm, "weight norm");
named_enum!(SimclrForm, "SimCLR form");

impl Method {
    pub const ALL: [Method; 4] = [Method::Simclr, Method::Simsiam, Method::Wmse, Method::Vicreg];
}

impl WeightMode {
    pub fn needs_score(self) -> bool {
        matches!(self, WeightMode::Score | WeightMode::ScoreField)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_eps_var")]
    pub eps_var: f64,
    /// Ridge added to the W-MSE covariance before its Cholesky factor.
    #[serde(default = "default_whiten_eps")]
    pub whiten_eps: f64,
    #[serde(default = "default_weight_mode")]
    pub weight_mode: WeightMode,
    #[serde(default = "default_weight_norm")]
    pub weight_norm: WeightNorm,
    #[serde(default = "default_simclr_form")]
    pub simclr_form: SimclrForm,
}

fn default_method() -> Method {
    Method::Simclr
}
fn default_tau() -> f64 {
    0.5
}
fn default_lambda() -> f64 {
    25.0
}
fn default_mu() -> f64 {
    25.0
}
fn default_nu() -> f64 {
    1.0
}
fn default_eps_var() -> f64 {
    1e-4
}
fn default_whiten_eps() -> f64 {
    1e-6
}
fn default_weight_mode() -> WeightMode {
    WeightMode::Constant
}
fn default_weight_norm() -> WeightNorm {
    WeightNorm::BatchMean
}
fn default_simclr_form() -> SimclrForm {
    SimclrForm::Alg1
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            method: default_method(),
            tau: default_tau(),
            lambda: default_lambda(),
            mu: default_mu(),
            nu: default_nu(),
            eps_var: default_eps_var(),
            whiten_eps: default_whiten_eps(),
            weight_mode: default_weight_mode(),
            weight_norm: default_weight_norm(),
            simclr_form: default_simclr_form(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Error::Config(format!("loss.{what} = {v} out of range"));
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(bad("tau", self.tau));
        }
        for (what, v) in [("lambda", self.lambda), ("mu", self.mu), ("nu", self.nu)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(bad(what, v));
            }
        }
        if !(self.eps_var > 0.0) || !self.eps_var.is_finite() {
            return Err(bad("eps_var", self.eps_var));
        }
        if !(self.whiten_eps >= 0.0) || !self.whiten_eps.is_finite() {
            return Err(bad("whiten_eps", self.whiten_eps));
        }
        Ok(())
    }

    /// True when weights are a view-by-view matrix rather than one per pair.
    pub fn matrix_weights(&self) -> bool {
        self.method == Method::Simclr && self.simclr_form == SimclrForm::Eq6
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightLayout {
    /// One weight per positive pair, length `B`.
    PerPair,
    /// `2B×2B` row-major matrix over the doubled batch (views a, then views b).
    Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    values: Vec<f64>,
    layout: WeightLayout,
}

impl WeightVector {
    pub fn ones(pairs: usize, layout: WeightLayout) -> Self {
        let len = match layout {
            WeightLayout::PerPair => pairs,
            WeightLayout::Matrix => 4 * pairs * pairs,
        };
        WeightVector { values: vec![1.0; len], layout }
    }

    pub fn per_pair(values: Vec<f64>, norm: WeightNorm) -> Result<Self> {
        WeightVector { values, layout: WeightLayout::PerPair }.normalized(norm)
    }

    /// Matrix weights for `pairs` positive pairs from a distance over the
    /// `2B` view indices.
    pub fn matrix(pairs: usize, norm: WeightNorm, mut dist: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let n = 2 * pairs;
        let values = (0..n * n).map(|k| dist(k / n, k % n)).collect();
        WeightVector { values, layout: WeightLayout::Matrix }.normalized(norm)
    }

    fn normalized(mut self, norm: WeightNorm) -> Result<Self> {
        if let Some((i, &w)) = self.values.iter().enumerate().find(|(_, w)| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::Invalid(format!("weight {i} = {w} must be finite and nonnegative")));
        }
        if norm == WeightNorm::BatchMean && !self.values.is_empty() {
            let mean = self.mean();
            if mean < 1e-8 {
                self.values.iter_mut().for_each(|w| *w = 1.0);
            } else {
                self.values.iter_mut().for_each(|w| *w /= mean);
            }
        }
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> WeightLayout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Number of positive pairs these weights cover.
    pub fn pairs(&self) -> usize {
        match self.layout {
            WeightLayout::PerPair => self.values.len(),
            WeightLayout::Matrix => (self.values.len() as f64).sqrt() as usize / 2,
        }
    }

    fn expect(&self, layout: WeightLayout, pairs: usize, op: &str) -> Result<()> {
        if self.layout != layout || self.pairs() != pairs || self.values.len() != WeightVector::ones(pairs, layout).len()
        {
            return Err(Error::Invalid(format!(
                "{op}: {:?} weights of length {} do not fit {pairs} pairs as {layout:?}",
                self.layout,
                self.values.len()
            )));
        }
        Ok(())
    }
}

/// Weights from the two views' score values: `|a_i − b_i|` per pair, or
/// `|v_i − v_k|` over the doubled batch `v = a ++ b` for matrix layouts.
/// Constant mode ignores the values.
pub fn pair_weights(a: &[f64], b: &[f64], cfg: &LossConfig) -> Result<WeightVector> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!("{} score values for view a, {} for view b", a.len(), b.len())));
    }
    let layout = if cfg.matrix_weights() { WeightLayout::Matrix } else { WeightLayout::PerPair };
    if cfg.weight_mode == WeightMode::Constant {
        return Ok(WeightVector::ones(a.len(), layout));
    }
    match layout {
        WeightLayout::PerPair => {
            WeightVector::per_pair(a.iter().zip(b).map(|(&x, &y)| score_distance(x, y)).collect(), cfg.weight_norm)
        }
        WeightLayout::Matrix => {
            let v: Vec<f64> = a.iter().chain(b).copied().collect();
            WeightVector::matrix(a.len(), cfg.weight_norm, |i, k| score_distance(v[i], v[k]))
        }
    }
}

/// Mean absolute pixel difference of two images' pixel buffers.
pub fn pixel_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Invalid(format!("pixel distance of {} vs {} values", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum::<f64>() / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Random,
    Pixel,
}

/// Score-free pair weight: a uniform draw, or the mean absolute pixel
/// difference between the two views.
pub fn baseline_weight<R: Rng + ?Sized>(pair: &ViewPair, mode: Baseline, rng: &mut R) -> Result<f64> {
    if !pair.view_a.same_dims(&pair.view_b) {
        return Err(Error::Invalid("baseline weight needs equally shaped views".into()));
    }
    match mode {
        Baseline::Random => Ok(rng.gen::<f64>()),
        Baseline::Pixel => pixel_distance(pair.view_a.pixels(), pair.view_b.pixels()),
    }
}

/// Indices (ascending) of the half with the largest distances; equal
/// distances keep the lower index first.
pub fn median_threshold_indices(distances: &[f64]) -> Result<Vec<usize>> {
    if distances.len() % 2 != 0 {
        return Err(Error::Invalid(format!("median selection needs an even count, got {}", distances.len())));
    }
    if let Some(i) = distances.iter().position(|d| !d.is_finite()) {
        return Err(Error::Invalid(format!("distance {i} is not finite")));
    }
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&i, &j| distances[j].total_cmp(&distances[i]).then(i.cmp(&j)));
    order.truncate(distances.len() / 2);
    order.sort_unstable();
    Ok(order)
}

pub fn median_threshold_select<'a, P>(pairs: &'a [P], distances: &[f64]) -> Result<Vec<&'a P>> {
    if pairs.len() != distances.len() {
        return Err(Error::Invalid(format!("{} pairs but {} distances", pairs.len(), distances.len())));
    }
    Ok(median_threshold_indices(distances)?.into_iter().map(|i| &pairs[i]).collect())
}

fn rows_cols<T: Real>(z: &Tensor<T>, op: &str) -> Result<(usize, usize)> {
    match *z.shape() {
        [b, p] => Ok((b, p)),
        _ => Err(Error::Invalid(format!("{op}: expected a [B,P] batch, got {:?}", z.shape()))),
    }
}

fn same_batch<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<(usize, usize)> {
    let dims = rows_cols(a, op)?;
    if a.shape() != b.shape() {
        return Err(Error::Invalid(format!("{op}: batches {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(dims)
}

/// Rows scaled to unit L2 norm.
pub fn normalize_rows<T: Real>(z: &Tensor<T>, op: &'static str) -> Result<Tensor<T>> {
    let (_, p) = rows_cols(z, op)?;
    let sq = z.l2norm_sq(Some(&[1]))?;
    if let Some(row) = sq.data().iter().position(|v| !(v.as_f64() > 0.0)) {
        return Err(Error::ZeroNorm { op, row });
    }
    Ok(z.div(&sq.sqrt()?.repeat_cols(p)?)?)
}

fn weight_tensor<T: Real>(values: impl IntoIterator<Item = f64>) -> Result<Tensor<T>> {
    let v: Vec<f64> = values.into_iter().collect();
    Ok(Tensor::from_f64(&[v.len()], &v)?)
}

struct Doubled<T: Real> {
    logits: Tensor<T>,
    positives: Tensor<T>,
}

/// Cosine logits over the doubled batch and each anchor's positive logit.
fn doubled<T: Real>(za: &Tensor<T>, zb: &Tensor<T>, tau: f64, op: &'static str) -> Result<Doubled<T>> {
    let (b, _) = same_batch(za, zb, op)?;
    if b < 2 {
        return Err(Error::Invalid(format!("{op}: batch of {b} has no negatives")));
    }
    if !(tau > 0.0) {
        return Err(Error::Invalid(format!("{op}: temperature {tau} must be positive")));
    }
    let (na, nb) = (normalize_rows(za, op)?, normalize_rows(zb, op)?);
    let z = Tensor::concat_rows(&[&na, &nb])?;
    let partner = Tensor::concat_rows(&[&nb, &na])?;
    Ok(Doubled {
        logits: z.matmul(&z.t()?)?.scale(1.0 / tau),
        positives: z.mul(&partner)?.sum_axes(&[1])?.scale(1.0 / tau),
    })
}

fn off_diagonal<T: Real>(n: usize) -> Vec<T> {
    (0..n * n).map(|k| if k / n == k % n { T::zero() } else { T::one() }).collect()
}

/// Per-anchor InfoNCE terms over the doubled batch, length `2B`; anchor `i`
/// pairs with `(i + B) mod 2B`.
pub fn info_nce_terms<T: Real>(za: &Tensor<T>, zb: &Tensor<T>, tau: f64) -> Result<Tensor<T>> {
    let d = doubled(za, zb, tau, "info_nce")?;
    let n = 2 * za.shape()[0];
    Ok(d.logits.weighted_logsumexp_rows(&off_diagonal(n))?.sub(&d.positives)?)
}

pub fn info_nce<T: Real>(za: &Tensor<T>, zb: &Tensor<T>, tau: f64) -> Result<Tensor<T>> {
    Ok(info_nce_terms(za, zb, tau)?.mean())
}

/// Smallest positive weight used inside the eq6 fraction, keeping its log finite.
pub const EQ6_WEIGHT_FLOOR: f64 = 1e-8;

pub fn simclr_weighted<T: Real>(za: &Tensor<T>, zb: &Tensor<T>, w: &WeightVector, cfg: &LossConfig) -> Result<Tensor<T>> {
    let b = za.shape().first().copied().unwrap_or(0);
    match cfg.simclr_form {
        SimclrForm::Alg1 => {
            w.expect(WeightLayout::PerPair, b, "simclr_weighted")?;
            let terms = info_nce_terms(za, zb, cfg.tau)?;
            let per_anchor = weight_tensor(w.values().iter().chain(w.values()).copied())?;
            Ok(terms.mul(&per_anchor)?.mean())
        }
        SimclrForm::Eq6 => {
            w.expect(WeightLayout::Matrix, b, "simclr_weighted")?;
            let d = doubled(za, zb, cfg.tau, "simclr_weighted")?;
            let n = 2 * b;
            let mut m = w.values().to_vec();
            let mut log_pos = Vec::with_capacity(n);
            for i in 0..n {
                m[i * n + i] = 0.0;
                let p = (i + b) % n;
                let wp = m[i * n + p].max(EQ6_WEIGHT_FLOOR);
                m[i * n + p] = wp;
                log_pos.push(wp.ln());
            }
            let m: Vec<T> = m.into_iter().map(T::from_f64).collect();
            let lse = d.logits.weighted_logsumexp_rows(&m)?;
            Ok(lse.sub(&d.positives)?.sub(&weight_tensor(log_pos)?)?.mean())
        }
    }
}

/// Negative cosine similarity per row, length `B`.
fn neg_cosine<T: Real>(p: &Tensor<T>, z: &Tensor<T>, op: &'static str) -> Result<Tensor<T>> {
    same_batch(p, z, op)?;
    Ok(normalize_rows(p, op)?.mul(&normalize_rows(z, op)?)?.sum_axes(&[1])?.neg())
}

fn simsiam_terms<T: Real>(p1: &Tensor<T>, z1: &Tensor<T>, p2: &Tensor<T>, z2: &Tensor<T>) -> Result<Tensor<T>> {
    let a = neg_cosine(p1, &z2.detach(), "simsiam")?;
    let b = neg_cosine(p2, &z1.detach(), "simsiam")?;
    Ok(a.add(&b)?.scale(0.5))
}

/// Symmetric negative cosine between predictions and the other view's
/// stop-gradient projections.
pub fn simsiam_loss<T: Real>(p1: &Tensor<T>, z1: &Tensor<T>, p2: &Tensor<T>, z2: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(simsiam_terms(p1, z1, p2, z2)?.mean())
}

pub fn simsiam_weighted<T: Real>(
    p1: &Tensor<T>,
    z1: &Tensor<T>,
    p2: &Tensor<T>,
    z2: &Tensor<T>,
    w: &WeightVector,
) -> Result<Tensor<T>> {
    w.expect(WeightLayout::PerPair, p1.shape().first().copied().unwrap_or(0), "simsiam_weighted")?;
    let terms = simsiam_terms(p1, z1, p2, z2)?;
    Ok(terms.mul(&weight_tensor(w.values().iter().copied())?)?.mean())
}

/// Centres `z` and maps it through the inverse Cholesky factor of its
/// covariance `ZcᵀZc/(B−1) + εI`, giving identity covariance.
pub fn whiten<T: Real>(z: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let (b, p) = rows_cols(z, "whiten")?;
    if b <= p {
        return Err(Error::Invalid(format!("whiten: batch {b} must exceed dimension {p}")));
    }
    let centred = z.sub(&z.mean_axes(&[0])?.repeat_rows(b)?)?;
    let cov = centred.t()?.matmul(&centred)?.scale(1.0 / (b - 1) as f64);
    let ridge = Tensor::<T>::eye(p).scale(eps);
    let factor = cov
        .add(&ridge)?
        .cholesky()
        .map_err(|e| Error::Invalid(format!("whiten: covariance of a {b}×{p} batch with eps {eps}: {e}")))?;
    Ok(centred.solve_lower_transposed(&factor)?)
}

fn wmse_pairs(views: usize) -> Vec<(usize, usize)> {
    (0..views).flat_map(|a| (a + 1..views).map(move |b| (a, b))).collect()
}

/// W-MSE over `m ≥ 2` views of `N` sources. Per-pair weights cover either
/// the `N` sources (shared by every view pair) or all `N·m(m−1)/2` view
/// pairs ordered by view pair, then source.
pub fn wmse_weighted<T: Real>(views: &[&Tensor<T>], w: &WeightVector, eps: f64) -> Result<Tensor<T>> {
    let m = views.len();
    if m < 2 {
        return Err(Error::Invalid(format!("wmse: needs at least two views, got {m}")));
    }
    let (n, p) = rows_cols(views[0], "wmse")?;
    for v in &views[1..] {
        same_batch(views[0], v, "wmse")?;
    }
    if n * m <= p {
        return Err(Error::Invalid(format!("wmse: {m} views of {n} rows do not exceed dimension {p}")));
    }
    let pairs = wmse_pairs(m);
    let per_view_pair = match w.len() {
        l if l == n => false,
        l if l == n * pairs.len() => true,
        l => {
            return Err(Error::Invalid(format!("wmse: {l} weights fit neither {n} sources nor {} view pairs", n * pairs.len())))
        }
    };
    if w.layout() != WeightLayout::PerPair {
        return Err(Error::Invalid("wmse: weights must be per pair".into()));
    }
    let white = normalize_rows(&whiten(&Tensor::concat_rows(views)?, eps)?, "wmse")?;
    let mut total: Option<Tensor<T>> = None;
    for (k, &(a, b)) in pairs.iter().enumerate() {
        let diff = white.slice_rows(a * n, (a + 1) * n)?.sub(&white.slice_rows(b * n, (b + 1) * n)?)?;
        let dist = diff.l2norm_sq(Some(&[1]))?;
        let slice = if per_view_pair { &w.values()[k * n..(k + 1) * n] } else { w.values() };
        let term = dist.mul(&weight_tensor(slice.iter().copied())?)?.sum();
        total = Some(match total {
            None => term,
            Some(t) => t.add(&term)?,
        });
    }
    let scale = 2.0 / (n * m * (m - 1)) as f64;
    Ok(total.expect("at least one pair").scale(scale))
}

pub fn wmse_loss<T: Real>(views: &[&Tensor<T>], eps: f64) -> Result<Tensor<T>> {
    let n = views.first().map(|v| v.shape()[0]).unwrap_or(0);
    wmse_weighted(views, &WeightVector::ones(n, WeightLayout::PerPair), eps)
}

/// `(1/P)·Σ_j max(0, 1 − √(Var_j + ε))` with unbiased per-dimension variance.
fn vicreg_variance<T: Real>(centred: &Tensor<T>, b: usize, eps: f64) -> Result<(Tensor<T>, Tensor<T>)> {
    let var = centred.square().sum_axes(&[0])?.scale(1.0 / (b - 1) as f64);
    let hinge = var.shift(eps).sqrt()?.neg().shift(1.0).relu().mean();
    Ok((hinge, var))
}

/// `(1/P)·Σ_{i≠j} C_ij²` for the covariance `C` of centred `Z`.
fn vicreg_covariance<T: Real>(centred: &Tensor<T>, var: &Tensor<T>, b: usize, p: usize) -> Result<Tensor<T>> {
    let cov = centred.t()?.matmul(centred)?.scale(1.0 / (b - 1) as f64);
    Ok(cov.l2norm_sq(None)?.sub(&var.l2norm_sq(None)?)?.scale(1.0 / p as f64))
}

fn vicreg_regularizers<T: Real>(z: &Tensor<T>, cfg: &LossConfig) -> Result<Tensor<T>> {
    let (b, p) = rows_cols(z, "vicreg")?;
    let centred = z.sub(&z.mean_axes(&[0])?.repeat_rows(b)?)?;
    let (v, var) = vicreg_variance(&centred, b, cfg.eps_var)?;
    let c = vicreg_covariance(&centred, &var, b, p)?;
    Ok(v.scale(cfg.mu).add(&c.scale(cfg.nu))?)
}

pub fn vicreg_weighted<T: Real>(z: &Tensor<T>, z2: &Tensor<T>, w: &WeightVector, cfg: &LossConfig) -> Result<Tensor<T>> {
    let (b, _) = same_batch(z, z2, "vicreg")?;
    if b < 2 {
        return Err(Error::Invalid("vicreg: batch must hold at least two rows".into()));
    }
    w.expect(WeightLayout::PerPair, b, "vicreg_weighted")?;
    let sq = z.sub(z2)?.l2norm_sq(Some(&[1]))?;
    let invariance = sq.mul(&weight_tensor(w.values().iter().copied())?)?.mean().scale(cfg.lambda);
    Ok(invariance.add(&vicreg_regularizers(z, cfg)?)?.add(&vicreg_regularizers(z2, cfg)?)?)
}

pub fn vicreg_loss<T: Real>(z: &Tensor<T>, z2: &Tensor<T>, cfg: &LossConfig) -> Result<Tensor<T>> {
    let (b, _) = same_batch(z, z2, "vicreg")?;
    vicreg_weighted(z, z2, &WeightVector::ones(b, WeightLayout::PerPair), cfg)
}
