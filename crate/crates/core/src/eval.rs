//! Frozen-representation evaluation (k-NN, linear probe) and the score-value
//! analyses, each emitted as a CSV table.

use std::fmt::Write as _;

use scorecl_autodiff::Tensor;

use crate::augment::{apply_fixed, grid_magnitudes, images_to_tensor, magnitude_grid, Image, TransformId};
use crate::error::{Error, Result};
use crate::nn::{encoder_forward, ParamSet};
use crate::score::{score_distance, score_values, ScoreModel};

/// Backbone embeddings (before the projector), one row per image.
pub fn embed(params: &ParamSet<f32>, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
    let frozen = params.detach();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(256) {
        let (emb, _) = encoder_forward(&frozen, &images_to_tensor::<f32>(chunk)?)?;
        let d = emb.shape()[1];
        out.extend(emb.to_f64_vec().chunks(d).map(<[f64]>::to_vec));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Cosine,
    Euclidean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnReport {
    pub k: usize,
    pub accuracy: f64,
    /// Accuracy per class id; `None` for classes absent from the test set.
    pub per_class: Vec<Option<f64>>,
    pub n_test: usize,
    pub predictions: Vec<usize>,
}

fn dims(rows: &[Vec<f64>], what: &str) -> Result<usize> {
    let d = rows.first().map(Vec::len).ok_or_else(|| Error::Invalid(format!("{what} is empty")))?;
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Invalid(format!("{what} rows differ in length")));
    }
    Ok(d)
}

fn unit_rows(rows: &[Vec<f64>], op: &'static str) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0) {
                return Err(Error::ZeroNorm { op, row: i });
            }
            Ok(r.iter().map(|v| v / n).collect())
        })
        .collect()
}

fn similarity(a: &[f64], b: &[f64], metric: Metric) -> f64 {
    match metric {
        Metric::Cosine => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        Metric::Euclidean => -a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
    }
}

/// Majority vote over the `k` most similar training rows. Neighbours tie by
/// lower training index; votes tie by larger summed similarity, then by the
/// smaller class id.
pub fn knn_eval(
    train: &[Vec<f64>],
    train_labels: &[usize],
    test: &[Vec<f64>],
    test_labels: &[usize],
    k: usize,
    metric: Metric,
) -> Result<KnnReport> {
    let d = dims(train, "training embeddings")?;
    if dims(test, "test embeddings")? != d {
        return Err(Error::Invalid("train and test embeddings differ in width".into()));
    }
    if train.len() != train_labels.len() || test.len() != test_labels.len() {
        return Err(Error::Invalid("embedding and label counts differ".into()));
    }
    if k == 0 || k > train.len() {
        return Err(Error::Invalid(format!("k = {k} must lie in 1..={}", train.len())));
    }
    let (train, test) = match metric {
        Metric::Cosine => (unit_rows(train, "knn train")?, unit_rows(test, "knn test")?),
        Metric::Euclidean => (train.to_vec(), test.to_vec()),
    };
    let classes = train_labels.iter().chain(test_labels).max().map_or(0, |m| m + 1);

    let mut predictions = Vec::with_capacity(test.len());
    for q in &test {
        let sims: Vec<f64> = train.iter().map(|t| similarity(q, t, metric)).collect();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.sort_by(|&i, &j| sims[j].total_cmp(&sims[i]).then(i.cmp(&j)));
        let mut votes = vec![0usize; classes];
        let mut mass = vec![0f64; classes];
        for &i in &order[..k] {
            votes[train_labels[i]] += 1;
            mass[train_labels[i]] += sims[i];
        }
        let best = (0..classes)
            .filter(|&c| votes[c] > 0)
            .max_by(|&a, &b| votes[a].cmp(&votes[b]).then(mass[a].total_cmp(&mass[b])).then(b.cmp(&a)))
            .expect("k ≥ 1 votes");
        predictions.push(best);
    }
    Ok(report(k, predictions, test_labels, classes))
}

fn report(k: usize, predictions: Vec<usize>, labels: &[usize], classes: usize) -> KnnReport {
    let mut hit = vec![0usize; classes];
    let mut seen = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        seen[l] += 1;
        hit[l] += usize::from(p == l);
    }
    let correct: usize = hit.iter().sum();
    KnnReport {
        k,
        accuracy: correct as f64 / labels.len() as f64,
        per_class: (0..classes).map(|c| (seen[c] > 0).then(|| hit[c] as f64 / seen[c] as f64)).collect(),
        n_test: labels.len(),
        predictions,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    /// Training cross-entropy after the last epoch (before it, for 0 epochs).
    pub final_loss: f64,
}

/// Shifts and scales every column to zero mean and unit variance using the
/// training rows' statistics; constant columns are only centred.
pub fn standardize(train: &mut [Vec<f64>], test: &mut [Vec<f64>]) -> Result<()> {
    let d = dims(train, "training embeddings")?;
    if !test.is_empty() && dims(test, "test embeddings")? != d {
        return Err(Error::Invalid("train and test embeddings differ in width".into()));
    }
    let n = train.len() as f64;
    for j in 0..d {
        let mean = train.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = train.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let scale = if var > 1e-16 { var.sqrt() } else { 1.0 };
        for r in train.iter_mut().chain(test.iter_mut()) {
            r[j] = (r[j] - mean) / scale;
        }
    }
    Ok(())
}

/// Softmax regression on frozen embeddings, full-batch gradient descent from
/// zero weights. Argmax ties go to the larger training-class prior, then the
/// smaller class id.
pub fn linear_probe(
    train: &[Vec<f64>],
    train_labels: &[usize],
    test: &[Vec<f64>],
    test_labels: &[usize],
    epochs: usize,
    lr: f64,
) -> Result<ProbeReport> {
    let d = dims(train, "training embeddings")?;
    if dims(test, "test embeddings")? != d {
        return Err(Error::Invalid("train and test embeddings differ in width".into()));
    }
    if train.len() != train_labels.len() || test.len() != test_labels.len() {
        return Err(Error::Invalid("embedding and label counts differ".into()));
    }
    let classes = train_labels.iter().chain(test_labels).max().map_or(0, |m| m + 1);
    let n = train.len();
    let x = Tensor::<f64>::new(&[n, d], train.concat())?;
    let mut onehot = vec![0.0; n * classes];
    for (i, &l) in train_labels.iter().enumerate() {
        onehot[i * classes + l] = 1.0;
    }
    let onehot = Tensor::new(&[n, classes], onehot)?;
    let ones = vec![1.0; n * classes];

    let mut w = Tensor::<f64>::zeros(&[d, classes]);
    let mut b = Tensor::<f64>::zeros(&[classes]);
    let loss_of = |w: &Tensor<f64>, b: &Tensor<f64>| -> Result<Tensor<f64>> {
        let logits = x.matmul(w)?.add(&b.repeat_rows(n)?)?;
        let picked = logits.mul(&onehot)?.sum_axes(&[1])?;
        Ok(logits.weighted_logsumexp_rows(&ones)?.sub(&picked)?.mean())
    };
    for _ in 0..epochs {
        let (tw, tb) = (w.requires_grad(), b.requires_grad());
        let grads = loss_of(&tw, &tb)?.backward()?;
        w = w.sub(&grads.get_or_zeros(&tw).scale(lr))?;
        b = b.sub(&grads.get_or_zeros(&tb).scale(lr))?;
    }
    let final_loss = loss_of(&w, &b)?.item();

    let mut prior = vec![0usize; classes];
    for &l in train_labels {
        prior[l] += 1;
    }
    let (wv, bv) = (w.to_vec(), b.to_vec());
    let predictions: Vec<usize> = test
        .iter()
        .map(|row| {
            let logit = |c: usize| bv[c] + row.iter().enumerate().map(|(j, v)| v * wv[j * classes + c]).sum::<f64>();
            (0..classes)
                .max_by(|&a, &c| logit(a).total_cmp(&logit(c)).then(prior[a].cmp(&prior[c])).then(c.cmp(&a)))
                .expect("at least one class")
        })
        .collect();
    let correct = predictions.iter().zip(test_labels).filter(|(p, l)| p == l).count();
    Ok(ProbeReport { accuracy: correct as f64 / test.len() as f64, predictions, final_loss })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Curve,
    Histogram,
    PairGrid,
    Contour,
}

impl TableKind {
    pub fn name(self) -> &'static str {
        match self {
            TableKind::Curve => "curve",
            TableKind::Histogram => "hist",
            TableKind::PairGrid => "pair_grid",
            TableKind::Contour => "contour",
        }
    }
}

/// Rectangular table of finite values. The first `magnitude_columns` columns
/// hold augmentation magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisTable {
    pub kind: TableKind,
    pub columns: Vec<String>,
    pub magnitude_columns: usize,
    pub rows: Vec<Vec<f64>>,
}

impl AnalysisTable {
    pub fn new(kind: TableKind, columns: &[&str], magnitude_columns: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(r) = rows.iter().position(|r| r.len() != columns.len()) {
            return Err(Error::Invalid(format!("table row {r} does not have {} columns", columns.len())));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("{} table holds a non-finite value", kind.name())));
        }
        Ok(AnalysisTable {
            kind,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            magnitude_columns,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, v)| if i < self.magnitude_columns { six_significant(*v) } else { v.to_string() })
                .collect();
            writeln!(out, "{}", cells.join(",")).expect("write to string");
        }
        out
    }
}

/// Decimal literal with six significant digits.
pub fn six_significant(v: f64) -> String {
    if v == 0.0 {
        return "0.00000".into();
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{v:.decimals$}");
    // rounding can carry into a new leading digit, e.g. 9.999996 → 10.00000
    if s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len() > 6 && decimals > 0 {
        format!("{v:.prec$}", prec = decimals - 1)
    } else {
        s
    }
}

/// Mean score value over `images` at each magnitude of a 1-D grid.
pub fn score_magnitude_curve(
    model: &ScoreModel<f32>,
    images: &[&Image],
    id: TransformId,
    steps: usize,
) -> Result<AnalysisTable> {
    if images.is_empty() {
        return Err(Error::Invalid("score curve needs at least one image".into()));
    }
    let ms = grid_magnitudes(steps)?;
    let mut sums = vec![0.0; ms.len()];
    for img in images {
        let cells = magnitude_grid(img, id, None, steps)?;
        let refs: Vec<&Image> = cells.iter().map(|c| &c.image).collect();
        for (s, v) in sums.iter_mut().zip(score_values(model, &refs)?) {
            *s += v;
        }
    }
    let rows = ms.iter().zip(&sums).map(|(&m, &s)| vec![m, s / images.len() as f64]).collect();
    AnalysisTable::new(TableKind::Curve, &["magnitude", "score_value"], 1, rows)
}

pub const HISTOGRAM_BINS: usize = 50;

/// Fixed-width bins over the pooled range; bins are left-closed and the last
/// one also holds the maximum.
pub fn histogram_table(original: &[f64], augmented: &[f64], bins: usize) -> Result<AnalysisTable> {
    if bins == 0 {
        return Err(Error::Invalid("histogram needs at least one bin".into()));
    }
    let pooled = original.iter().chain(augmented);
    if pooled.clone().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("histogram input holds a non-finite value".into()));
    }
    let lo = pooled.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = pooled.copied().fold(f64::NEG_INFINITY, f64::max);
    // an empty or single-valued pool still gets well-defined unit-width bins
    let (lo, width) = match (lo.is_finite(), hi > lo) {
        (false, _) => (0.0, 1.0 / bins as f64),
        (true, false) => (lo, 1.0 / bins as f64),
        (true, true) => (lo, (hi - lo) / bins as f64),
    };
    let bin = |v: f64| (((v - lo) / width).floor() as usize).min(bins - 1);
    let mut counts = vec![[0usize; 2]; bins];
    for (col, values) in [original, augmented].into_iter().enumerate() {
        for &v in values {
            counts[bin(v)][col] += 1;
        }
    }
    let rows = counts
        .iter()
        .enumerate()
        .map(|(i, c)| vec![lo + i as f64 * width, lo + (i + 1) as f64 * width, c[0] as f64, c[1] as f64])
        .collect();
    AnalysisTable::new(TableKind::Histogram, &["bin_left", "bin_right", "original", "augmented"], 0, rows)
}

pub fn score_histogram(model: &ScoreModel<f32>, originals: &[&Image], augmented: &[&Image]) -> Result<AnalysisTable> {
    histogram_table(&score_values(model, originals)?, &score_values(model, augmented)?, HISTOGRAM_BINS)
}

/// Pair grid: mean over images of `|value(id_a, m_i) − value(id_b, m_j)|`.
/// Contour: mean score value with `id_a` at `m_i` then `id_b` at `m_j`.
pub fn pair_score_grid(
    model: &ScoreModel<f32>,
    images: &[&Image],
    id_a: TransformId,
    id_b: TransformId,
    steps: usize,
    kind: TableKind,
) -> Result<AnalysisTable> {
    if images.is_empty() {
        return Err(Error::Invalid("pair grid needs at least one image".into()));
    }
    let ms = grid_magnitudes(steps)?;
    let s = ms.len();
    let mut grid = vec![0.0; s * s];
    for img in images {
        match kind {
            TableKind::PairGrid => {
                let line = |id: TransformId| -> Result<Vec<f64>> {
                    let views = ms.iter().map(|&m| Ok(apply_fixed(img, id, m)?.0)).collect::<Result<Vec<Image>>>()?;
                    score_values(model, &views.iter().collect::<Vec<_>>())
                };
                let va = line(id_a)?;
                let vb = if id_a == id_b { va.clone() } else { line(id_b)? };
                for i in 0..s {
                    for j in 0..s {
                        grid[i * s + j] += score_distance(va[i], vb[j]);
                    }
                }
            }
            TableKind::Contour => {
                let cells = magnitude_grid(img, id_a, Some(id_b), steps)?;
                let refs: Vec<&Image> = cells.iter().map(|c| &c.image).collect();
                for (g, v) in grid.iter_mut().zip(score_values(model, &refs)?) {
                    *g += v;
                }
            }
            other => return Err(Error::Invalid(format!("pair_score_grid cannot build a {} table", other.name()))),
        }
    }
    let value = if kind == TableKind::PairGrid { "score_distance" } else { "score_value" };
    let rows = (0..s * s).map(|k| vec![ms[k / s], ms[k % s], grid[k] / images.len() as f64]).collect();
    AnalysisTable::new(kind, &["magnitude_a", "magnitude_b", value], 2, rows)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Invalid(format!("correlation of {} and {} values", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Invalid("correlation with a constant series".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Ranks from 1, ties sharing their average rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&ranks(x), &ranks(y))
}
