//! Parameter sets, layer forwards, optimizers and the learning-rate schedule.

use rand::Rng;
use scorecl_autodiff::{GradientMap, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Network topology. Every parameter shape follows from this value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Stride-2 3×3 conv stack, global average pool, linear embedding, then
    /// a two-layer projector and optionally the SimSiam predictor.
    Encoder {
        in_channels: usize,
        widths: Vec<usize>,
        embed_dim: usize,
        proj_hidden: usize,
        proj_dim: usize,
        predictor: bool,
    },
    /// Three-level conv encoder-decoder with additive skips.
    ScoreNet { channels: usize, widths: [usize; 3] },
    /// `x·W + b` on flat vectors.
    AffineScore { dim: usize },
}

impl Architecture {
    /// The desk-scale backbone with a 128→128→64 projector.
    pub fn encoder(in_channels: usize, predictor: bool) -> Self {
        Architecture::Encoder {
            in_channels,
            widths: vec![32, 64, 128],
            embed_dim: 128,
            proj_hidden: 128,
            proj_dim: 64,
            predictor,
        }
    }

    pub fn score_net(channels: usize) -> Self {
        Architecture::ScoreNet { channels, widths: [32, 64, 128] }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::Invalid(format!("architecture {self:?}: {reason}")));
        match self {
            Architecture::Encoder { in_channels, widths, embed_dim, proj_hidden, proj_dim, predictor } => {
                if widths.is_empty() {
                    return bad("no conv layers");
                }
                if [*in_channels, *embed_dim, *proj_hidden, *proj_dim].contains(&0) || widths.contains(&0) {
                    return bad("zero-sized layer");
                }
                if *predictor && (*proj_dim < 2 || proj_dim % 2 != 0) {
                    return bad("predictor needs an even projection width");
                }
            }
            Architecture::ScoreNet { channels, widths } => {
                if *channels == 0 || widths.contains(&0) {
                    return bad("zero-sized layer");
                }
            }
            Architecture::AffineScore { dim } => {
                if *dim == 0 {
                    return bad("zero dimension");
                }
            }
        }
        Ok(())
    }

    /// `(name, shape)` of every parameter tensor in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        expected_entries(&self.layers())
    }

    pub fn layers(&self) -> Vec<Layer> {
        let conv = |name: &str, in_ch, out_ch, stride| Layer {
            name: name.to_string(),
            kind: LayerKind::Conv { in_ch, out_ch, kernel: 3, stride, padding: 1 },
        };
        let linear = |name: &str, in_dim, out_dim| Layer {
            name: name.to_string(),
            kind: LayerKind::Linear { in_dim, out_dim },
        };
        match self {
            Architecture::Encoder { in_channels, widths, embed_dim, proj_hidden, proj_dim, predictor } => {
                let mut layers = Vec::new();
                let mut prev = *in_channels;
                for (i, &w) in widths.iter().enumerate() {
                    layers.push(conv(&format!("conv{}", i + 1), prev, w, 2));
                    prev = w;
                }
                layers.push(linear("embed", prev, *embed_dim));
                layers.push(linear("proj1", *embed_dim, *proj_hidden));
                layers.push(linear("proj2", *proj_hidden, *proj_dim));
                if *predictor {
                    layers.push(linear("pred1", *proj_dim, proj_dim / 2));
                    layers.push(linear("pred2", proj_dim / 2, *proj_dim));
                }
                layers
            }
            Architecture::ScoreNet { channels, widths: [w1, w2, w3] } => vec![
                conv("enc1", *channels, *w1, 1),
                conv("enc2", *w1, *w2, 2),
                conv("enc3", *w2, *w3, 2),
                conv("dec3", *w3, *w2, 1),
                conv("dec2", *w2, *w1, 1),
                conv("out", *w1, *channels, 1),
            ],
            Architecture::AffineScore { dim } => vec![linear("affine", *dim, *dim)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize },
    /// Weight stored `[in_dim, out_dim]`.
    Linear { in_dim: usize, out_dim: usize },
}

impl LayerKind {
    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerKind::Conv { in_ch, out_ch, kernel, .. } => vec![out_ch, in_ch, kernel, kernel],
            LayerKind::Linear { in_dim, out_dim } => vec![in_dim, out_dim],
        }
    }

    pub fn out_dim(&self) -> usize {
        match *self {
            LayerKind::Conv { out_ch, .. } => out_ch,
            LayerKind::Linear { out_dim, .. } => out_dim,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerKind::Conv { in_ch, kernel, .. } => in_ch * kernel * kernel,
            LayerKind::Linear { in_dim, .. } => in_dim,
        }
    }
}

/// Named parameter tensors in architecture order: for each layer,
/// `<layer>.weight` then `<layer>.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T: Real> {
    arch: Architecture,
    layers: Vec<Layer>,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

fn expected_entries(layers: &[Layer]) -> Vec<(String, Vec<usize>)> {
    layers
        .iter()
        .flat_map(|l| {
            [
                (format!("{}.weight", l.name), l.kind.weight_shape()),
                (format!("{}.bias", l.name), vec![l.kind.out_dim()]),
            ]
        })
        .collect()
}

/// Kaiming-uniform weights with bound √(6/fan_in); zero biases.
pub fn init_params<T: Real>(arch: &Architecture, seed: u64) -> Result<ParamSet<T>> {
    arch.validate()?;
    let layers = arch.layers();
    let mut rng = rng::stream(&[seed, 0x1A17]);
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for layer in &layers {
        let bound = (6.0 / layer.kind.fan_in() as f64).sqrt();
        let shape = layer.kind.weight_shape();
        let n: usize = shape.iter().product();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        names.push(format!("{}.weight", layer.name));
        tensors.push(Tensor::from_f64(&shape, &w)?);
        names.push(format!("{}.bias", layer.name));
        tensors.push(Tensor::zeros(&[layer.kind.out_dim()]));
    }
    Ok(ParamSet { arch: arch.clone(), layers, names, tensors })
}

impl<T: Real> ParamSet<T> {
    /// Builds a set from explicit tensors, which must match the
    /// architecture's names, order and shapes.
    pub fn from_parts(arch: &Architecture, parts: Vec<(String, Tensor<T>)>) -> Result<Self> {
        arch.validate()?;
        let layers = arch.layers();
        let expected = expected_entries(&layers);
        if parts.len() != expected.len() {
            return Err(Error::Invalid(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                parts.len()
            )));
        }
        for ((name, t), (want_name, want_shape)) in parts.iter().zip(&expected) {
            if name != want_name || t.shape() != want_shape.as_slice() {
                return Err(Error::Invalid(format!(
                    "parameter {name} {:?} does not match {want_name} {want_shape:?}",
                    t.shape()
                )));
            }
        }
        let (names, tensors) = parts.into_iter().unzip();
        Ok(ParamSet { arch: arch.clone(), layers, names, tensors })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| Error::Invalid(format!("no parameter named {name}")))
    }

    /// Replaces one tensor, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Invalid(format!("no parameter named {name}")))?;
        if value.shape() != self.tensors[i].shape() {
            return Err(Error::Invalid(format!(
                "parameter {name}: shape {:?} does not match {:?}",
                value.shape(),
                self.tensors[i].shape()
            )));
        }
        self.tensors[i] = value;
        Ok(())
    }

    pub fn layer(&self, name: &str) -> Result<&Layer> {
        self.layers
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::Invalid(format!("no layer named {name}")))
    }

    /// Same values as fresh gradient-tracked leaves.
    pub fn track(&self) -> Self {
        self.map(Tensor::requires_grad)
    }

    pub fn detach(&self) -> Self {
        self.map(Tensor::detach)
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            arch: self.arch.clone(),
            layers: self.layers.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    fn map(&self, f: impl Fn(&Tensor<T>) -> Tensor<T>) -> Self {
        ParamSet {
            arch: self.arch.clone(),
            layers: self.layers.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(f).collect(),
        }
    }

    /// Gradients for every parameter, in order. `self` must be the tracked
    /// set the loss was built from.
    pub fn gradients(&self, map: &GradientMap<T>) -> Result<Vec<Tensor<T>>> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(name, t)| map.get(t).cloned().ok_or_else(|| Error::MissingGradient(name.clone())))
            .collect()
    }

    /// Applies a conv or linear layer including its bias.
    pub fn apply(&self, layer: &str, x: &Tensor<T>) -> Result<Tensor<T>> {
        let spec = self.layer(layer)?;
        let w = self.get(&format!("{layer}.weight"))?;
        let b = self.get(&format!("{layer}.bias"))?;
        match spec.kind {
            LayerKind::Conv { stride, padding, .. } => Ok(x.conv2d(w, stride, padding)?.add_channel_bias(b)?),
            LayerKind::Linear { .. } => linear(x, w, b),
        }
    }
}

/// `x[B,in]·W[in,out] + b[out]`
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let rows = x.shape().first().copied().unwrap_or(1);
    Ok(x.matmul(w)?.add(&b.repeat_rows(rows)?)?)
}

/// Backbone embedding `[B,D]` (consumed by k-NN) and projector output
/// `[B,P]` (consumed by the losses).
pub fn encoder_forward<T: Real>(params: &ParamSet<T>, images: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let Architecture::Encoder { in_channels, widths, .. } = params.architecture() else {
        return Err(Error::Invalid("encoder_forward needs an encoder architecture".into()));
    };
    match images.shape() {
        [_, c, _, _] if c == in_channels => {}
        s => {
            return Err(Error::Invalid(format!(
                "encoder expects [B,{in_channels},H,W] images, got {s:?}"
            )))
        }
    }
    let mut h = images.clone();
    for i in 0..widths.len() {
        h = params.apply(&format!("conv{}", i + 1), &h)?.relu();
    }
    let pooled = h.mean_axes(&[2, 3])?;
    let embedding = params.apply("embed", &pooled)?;
    let projection = params.apply("proj2", &params.apply("proj1", &embedding)?.relu())?;
    Ok((embedding, projection))
}

/// SimSiam prediction head, `P → P/2 → P` with a relu between.
pub fn predictor_forward<T: Real>(params: &ParamSet<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
    match params.architecture() {
        Architecture::Encoder { predictor: true, proj_dim, .. } => {
            if z.rank() != 2 || z.shape()[1] != *proj_dim {
                return Err(Error::Invalid(format!("predictor expects [B,{proj_dim}], got {:?}", z.shape())));
            }
        }
        _ => return Err(Error::Invalid("architecture has no predictor head".into())),
    }
    params.apply("pred2", &params.apply("pred1", z)?.relu())
}

/// Per-parameter optimizer buffers. SGD uses only the first buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let zeros: Vec<Vec<T>> = params.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        OptimizerState { step: 0, first: zeros.clone(), second: zeros }
    }
}

fn check_grads<T: Real>(params: &ParamSet<T>, grads: &[Tensor<T>], state: &OptimizerState<T>) -> Result<()> {
    if grads.len() < params.len() {
        return Err(Error::MissingGradient(params.names()[grads.len()].clone()));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Invalid(format!(
                "gradient for {name} has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    if state.first.len() != params.len() {
        return Err(Error::Invalid("optimizer state does not match parameter set".into()));
    }
    Ok(())
}

/// `v ← μ·v + (g + wd·w)`, `w ← w − lr·v`.
pub fn sgd_momentum_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    check_grads(params, grads, state)?;
    let (lr, mu, wd) = (T::from_f64(lr), T::from_f64(momentum), T::from_f64(weight_decay));
    for (i, g) in grads.iter().enumerate().take(params.len()) {
        let w = params.tensors[i].to_vec();
        let v = &mut state.first[i];
        let updated: Vec<T> = w
            .iter()
            .zip(g.data())
            .zip(v.iter_mut())
            .map(|((&w, &g), v)| {
                *v = mu * *v + (g + wd * w);
                w - lr * *v
            })
            .collect();
        params.tensors[i] = Tensor::new(g.shape(), updated)?;
    }
    state.step += 1;
    Ok(())
}

/// Bias-corrected Adam.
pub fn adam_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    check_grads(params, grads, state)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = T::from_f64(1.0 - beta1.powi(t));
    let c2 = T::from_f64(1.0 - beta2.powi(t));
    let (lr, b1, b2, eps) = (T::from_f64(lr), T::from_f64(beta1), T::from_f64(beta2), T::from_f64(eps));
    let one = T::one();
    for (i, g) in grads.iter().enumerate().take(params.len()) {
        let w = params.tensors[i].to_vec();
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        let updated: Vec<T> = (0..w.len())
            .map(|j| {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                w[j] - lr * m_hat / (v_hat.sqrt() + eps)
            })
            .collect();
        params.tensors[i] = Tensor::new(g.shape(), updated)?;
    }
    Ok(())
}

/// Linear warmup to `base_lr`, then half-cosine decay to 0 at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, warmup_steps: usize, base_lr: f64) -> Result<f64> {
    if step > total_steps || warmup_steps >= total_steps {
        return Err(Error::Invalid(format!(
            "cosine_lr: need step ≤ total and warmup < total, got step {step}, total {total_steps}, warmup {warmup_steps}"
        )));
    }
    if step < warmup_steps {
        return Ok(base_lr * (step + 1) as f64 / warmup_steps as f64);
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_encoder(predictor: bool) -> Architecture {
        Architecture::Encoder {
            in_channels: 3,
            widths: vec![4, 6],
            embed_dim: 8,
            proj_hidden: 8,
            proj_dim: 6,
            predictor,
        }
    }

    #[test]
    fn biases_start_at_zero_and_init_is_seeded() {
        let a: ParamSet<f64> = init_params(&tiny_encoder(true), 3).unwrap();
        let b: ParamSet<f64> = init_params(&tiny_encoder(true), 3).unwrap();
        let c: ParamSet<f64> = init_params(&tiny_encoder(true), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (name, t) in a.iter() {
            if name.ends_with(".bias") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn kaiming_bound_for_fan_in_27() {
        let p: ParamSet<f64> = init_params(&Architecture::encoder(3, false), 0).unwrap();
        let w = p.get("conv1.weight").unwrap();
        let bound = (6.0f64 / 27.0).sqrt();
        assert!((bound - 0.471_404_520_791_031_7).abs() < 1e-15);
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        // the bound is nearly reached with 864 draws
        assert!(w.data().iter().any(|v| v.abs() > 0.9 * bound));
    }

    #[test]
    fn encoder_output_shapes() {
        let p: ParamSet<f64> = init_params(&Architecture::encoder(3, false), 1).unwrap();
        let x = Tensor::full(&[4, 3, 8, 8], 0.3);
        let (e, z) = encoder_forward(&p, &x).unwrap();
        assert_eq!(e.shape(), &[4, 128]);
        assert_eq!(z.shape(), &[4, 64]);
    }

    #[test]
    fn identical_images_give_identical_rows() {
        let p: ParamSet<f64> = init_params(&tiny_encoder(false), 2).unwrap();
        let one: Vec<f64> = (0..3 * 8 * 8).map(|i| ((i * 7) % 11) as f64 / 11.0).collect();
        let batch: Vec<f64> = one.iter().chain(&one).chain(&one).copied().collect();
        let (e, z) = encoder_forward(&p, &Tensor::new(&[3, 3, 8, 8], batch).unwrap()).unwrap();
        for out in [e, z] {
            let w = out.shape()[1];
            let rows: Vec<&[f64]> = out.data().chunks(w).collect();
            assert_eq!(rows[0], rows[1]);
            assert_eq!(rows[0], rows[2]);
        }
    }

    #[test]
    fn one_layer_encoder_matches_hand_trace() {
        let arch = Architecture::Encoder {
            in_channels: 1,
            widths: vec![1],
            embed_dim: 1,
            proj_hidden: 1,
            proj_dim: 1,
            predictor: false,
        };
        let mut p: ParamSet<f64> = init_params(&arch, 0).unwrap();
        // kernel with a single 1 at the centre: stride-2 conv samples x[0,0], x[0,2], x[2,0], x[2,2]
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        p.set("conv1.weight", Tensor::new(&[1, 1, 3, 3], k).unwrap()).unwrap();
        p.set("conv1.bias", Tensor::new(&[1], vec![-1.0]).unwrap()).unwrap();
        p.set("embed.weight", Tensor::new(&[1, 1], vec![2.0]).unwrap()).unwrap();
        p.set("embed.bias", Tensor::new(&[1], vec![0.5]).unwrap()).unwrap();
        p.set("proj1.weight", Tensor::new(&[1, 1], vec![-1.0]).unwrap()).unwrap();
        p.set("proj2.weight", Tensor::new(&[1, 1], vec![3.0]).unwrap()).unwrap();
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let (e, z) = encoder_forward(&p, &Tensor::new(&[1, 1, 4, 4], x).unwrap()).unwrap();
        // samples 0, 2, 8, 10 → minus 1 → relu → mean = (0+1+7+9)/4 = 4.25
        assert_eq!(e.data(), &[2.0 * 4.25 + 0.5]);
        // proj1 = relu(−9) = 0
        assert_eq!(z.data(), &[0.0]);

        let zeros = Tensor::zeros(&[2, 1, 4, 4]);
        let (e0, _) = encoder_forward(&p, &zeros).unwrap();
        assert_eq!(e0.data(), &[0.5, 0.5]);
    }

    #[test]
    fn identity_predictor_on_supported_inputs() {
        // P→P/2→P cannot be the identity on all of ℝᴾ. With W1 keeping the
        // first P/2 coordinates and W2 copying them back it is the identity
        // on nonnegative inputs supported there.
        let arch = tiny_encoder(true);
        let mut p: ParamSet<f64> = init_params(&arch, 0).unwrap();
        let (pd, h) = (6, 3);
        let mut w1 = vec![0.0; pd * h];
        let mut w2 = vec![0.0; h * pd];
        for i in 0..h {
            w1[i * h + i] = 1.0;
            w2[i * pd + i] = 1.0;
        }
        p.set("pred1.weight", Tensor::new(&[pd, h], w1).unwrap()).unwrap();
        p.set("pred2.weight", Tensor::new(&[h, pd], w2).unwrap()).unwrap();
        let z = Tensor::new(&[2, 6], vec![0.1, 0.7, 2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.5, 0.0, 0.0, 0.0]).unwrap();
        let out = predictor_forward(&p, &z).unwrap();
        assert_eq!(out.shape(), &[2, 6]);
        assert_eq!(out.data(), z.data());
    }

    #[test]
    fn predictor_matches_loop_oracle() {
        let p: ParamSet<f64> = init_params(&tiny_encoder(true), 9).unwrap();
        let z: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = predictor_forward(&p, &Tensor::new(&[2, 6], z.clone()).unwrap()).unwrap();
        let w1 = p.get("pred1.weight").unwrap().data();
        let w2 = p.get("pred2.weight").unwrap().data();
        for r in 0..2 {
            let hidden: Vec<f64> = (0..3)
                .map(|j| (0..6).map(|i| z[r * 6 + i] * w1[i * 3 + j]).sum::<f64>().max(0.0))
                .collect();
            for k in 0..6 {
                let want: f64 = (0..3).map(|j| hidden[j] * w2[j * 6 + k]).sum();
                assert!((out.data()[r * 6 + k] - want).abs() < 1e-12);
            }
        }
    }

    fn scalar_set(w: f64) -> ParamSet<f64> {
        let arch = Architecture::AffineScore { dim: 1 };
        let mut p = init_params(&arch, 0).unwrap();
        p.set("affine.weight", Tensor::new(&[1, 1], vec![w]).unwrap()).unwrap();
        p
    }

    fn grads(g: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::new(&[1, 1], vec![g]).unwrap(), Tensor::zeros(&[1])]
    }

    #[test]
    fn sgd_plain_step_and_fixed_point() {
        let mut p = scalar_set(0.0);
        let mut s = OptimizerState::new(&p);
        sgd_momentum_step(&mut p, &grads(1.0), &mut s, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(p.get("affine.weight").unwrap().data(), &[-1.0]);

        let mut q = scalar_set(0.25);
        let mut s = OptimizerState::new(&q);
        sgd_momentum_step(&mut q, &grads(0.0), &mut s, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(q.get("affine.weight").unwrap().data(), &[0.25]);
    }

    #[test]
    fn sgd_momentum_two_step_recurrence() {
        let (lr, mu, wd) = (0.1, 0.9, 0.01);
        let mut p = scalar_set(0.5);
        let mut s = OptimizerState::new(&p);
        let (mut w, mut v) = (0.5f64, 0.0f64);
        for g in [1.0, -0.5] {
            sgd_momentum_step(&mut p, &grads(g), &mut s, lr, mu, wd).unwrap();
            v = mu * v + g + wd * w;
            w -= lr * v;
        }
        assert!((p.get("affine.weight").unwrap().data()[0] - w).abs() < 1e-15);
        assert_eq!(s.step, 2);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = scalar_set(0.3);
        let mut s = OptimizerState::new(&p);
        adam_step(&mut p, &grads(-4.2), &mut s, 0.01, 0.9, 0.999, 1e-12).unwrap();
        assert!((p.get("affine.weight").unwrap().data()[0] - 0.31).abs() < 1e-12);
    }

    #[test]
    fn adam_three_step_recurrence() {
        let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
        let mut p = scalar_set(1.0);
        let mut s = OptimizerState::new(&p);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (t, g) in [0.3, -1.2, 0.7].into_iter().enumerate() {
            adam_step(&mut p, &grads(g), &mut s, lr, b1, b2, eps).unwrap();
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32 + 1));
            let vh = v / (1.0 - b2.powi(t as i32 + 1));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((p.get("affine.weight").unwrap().data()[0] - w).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut p = scalar_set(0.7);
        let before = p.clone();
        let mut s = OptimizerState::new(&p);
        for _ in 0..3 {
            adam_step(&mut p, &grads(0.0), &mut s, 0.1, 0.9, 0.999, 1e-8).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn missing_gradient_is_reported() {
        let mut p = scalar_set(0.0);
        let mut s = OptimizerState::new(&p);
        let err = sgd_momentum_step(&mut p, &grads(1.0)[..1], &mut s, 0.1, 0.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(ref n) if n == "affine.bias"));
    }

    #[test]
    fn gradients_come_back_in_order() {
        let p: ParamSet<f64> = init_params(&tiny_encoder(false), 0).unwrap();
        let tracked = p.track();
        let x = Tensor::full(&[2, 3, 8, 8], 0.5);
        let (_, z) = encoder_forward(&tracked, &x).unwrap();
        let map = z.square().sum().backward().unwrap();
        let g = tracked.gradients(&map).unwrap();
        for (gi, pi) in g.iter().zip(p.tensors()) {
            assert_eq!(gi.shape(), pi.shape());
        }
    }

    #[test]
    fn cosine_boundaries() {
        let base = 0.5;
        assert_eq!(cosine_lr(10, 110, 10, base).unwrap(), base);
        assert!(cosine_lr(110, 110, 10, base).unwrap().abs() < 1e-15);
        assert!((cosine_lr(60, 110, 10, base).unwrap() - base / 2.0).abs() < 1e-15);
        assert_eq!(cosine_lr(0, 110, 10, base).unwrap(), base / 10.0);
        assert!(cosine_lr(111, 110, 10, base).is_err());
        assert!(cosine_lr(0, 10, 10, base).is_err());
    }
}
