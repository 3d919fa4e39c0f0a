//! Image transforms with recorded parameters.
//!
//! Every transform is split into parameter sampling and a pure application
//! step, so an [`AugRecord`] replays to a bit-identical image.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use scorecl_autodiff::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `H×W×C` pixels in `[0,1]`, stored row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::Invalid(format!("image dims {height}×{width}×{channels}")));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::Invalid(format!(
                "image {height}×{width}×{channels} needs {} pixels, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Invalid(format!("pixel {i} = {} outside [0,1]", pixels[i])));
        }
        Ok(Image { height, width, channels, pixels })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Image::new(height, width, channels, vec![value.clamp(0.0, 1.0); height * width * channels])
            .expect("valid dims")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        (self.height, self.width, self.channels) == (other.height, other.width, other.channels)
    }

    /// Builds an image from f64 values, clamping into `[0,1]`.
    fn from_values(like: &Image, height: usize, width: usize, values: impl Iterator<Item = f64>) -> Image {
        let pixels: Vec<f32> = values.map(|v| v.clamp(0.0, 1.0) as f32).collect();
        debug_assert_eq!(pixels.len(), height * width * like.channels);
        Image { height, width, channels: like.channels, pixels }
    }

    fn map_pixels(&self, f: impl Fn(f64) -> f64) -> Image {
        Image::from_values(self, self.height, self.width, self.pixels.iter().map(|&p| f(p as f64)))
    }

    /// ITU-R 601 luma per pixel (the pixel itself for one channel).
    fn luma(&self) -> Vec<f64> {
        self.pixels
            .chunks(self.channels)
            .map(|px| {
                if self.channels == 3 {
                    0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64
                } else {
                    px[0] as f64
                }
            })
            .collect()
    }
}

/// Stacks images into a `[B,C,H,W]` tensor.
pub fn images_to_tensor<T: Real>(images: &[&Image]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::Invalid("empty image batch".into()))?;
    let (h, w, c) = (first.height, first.width, first.channels);
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if !img.same_dims(first) {
            return Err(Error::Invalid("images in a batch must share dimensions".into()));
        }
        for ch in 0..c {
            for p in 0..h * w {
                data.push(T::from_f64(img.pixels[p * c + ch] as f64));
            }
        }
    }
    Ok(Tensor::new(&[images.len(), c, h, w], data)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformId {
    CropResize,
    Hflip,
    Brightness,
    Contrast,
    Saturation,
    Hue,
    Grayscale,
    GaussianBlur,
    ShearX,
    TranslateX,
    Posterize,
    Solarize,
}

impl TransformId {
    pub const ALL: [TransformId; 12] = [
        TransformId::CropResize,
        TransformId::Hflip,
        TransformId::Brightness,
        TransformId::Contrast,
        TransformId::Saturation,
        TransformId::Hue,
        TransformId::Grayscale,
        TransformId::GaussianBlur,
        TransformId::ShearX,
        TransformId::TranslateX,
        TransformId::Posterize,
        TransformId::Solarize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformId::CropResize => "crop_resize",
            TransformId::Hflip => "hflip",
            TransformId::Brightness => "brightness",
            TransformId::Contrast => "contrast",
            TransformId::Saturation => "saturation",
            TransformId::Hue => "hue",
            TransformId::Grayscale => "grayscale",
            TransformId::GaussianBlur => "gaussian_blur",
            TransformId::ShearX => "shear_x",
            TransformId::TranslateX => "translate_x",
            TransformId::Posterize => "posterize",
            TransformId::Solarize => "solarize",
        }
    }
}

impl fmt::Display for TransformId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown transform {s:?}")))
    }
}

/// Concrete parameters of one applied transform.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformParams {
    CropResize {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
        out_height: usize,
        out_width: usize,
        /// Set when no sampled window fit and the centre crop was used.
        fallback: bool,
    },
    Hflip { applied: bool },
    /// Additive offset.
    Brightness { delta: f64 },
    /// Scale of deviations from the mean luma.
    Contrast { factor: f64 },
    /// Scale of deviations from per-pixel luma.
    Saturation { factor: f64 },
    /// Hue rotation in turns.
    Hue { shift: f64 },
    Grayscale { applied: bool },
    GaussianBlur { sigma: f64 },
    /// Horizontal displacement per row from the centre row.
    ShearX { shear: f64 },
    /// Horizontal shift in pixels.
    TranslateX { shift: f64 },
    Posterize { bits: u32 },
    /// Pixels strictly above the threshold are inverted.
    Solarize { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugEntry {
    pub id: TransformId,
    pub magnitude: f64,
    pub params: TransformParams,
}

/// Transforms in application order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugRecord {
    pub entries: Vec<AugEntry>,
}

impl AugRecord {
    /// Magnitude of the first entry with the given id, if any.
    pub fn magnitude_of(&self, id: TransformId) -> Option<f64> {
        self.entries.iter().find(|e| e.id == id).map(|e| e.magnitude)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub view_a: Image,
    pub view_b: Image,
    pub rec_a: AugRecord,
    pub rec_b: AugRecord,
    pub source_index: usize,
}

const FILL: f64 = 0.5;
const CROP_ATTEMPTS: usize = 10;

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn check_magnitude(m: f64) -> Result<()> {
    if (0.0..=1.0).contains(&m) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("magnitude {m} outside [0,1]")))
    }
}

/// Area fraction kept by a crop of magnitude `m`.
fn crop_area(m: f64) -> f64 {
    1.0 - 0.8 * m
}

fn centre_crop(h: usize, w: usize, area: f64, out_height: usize, out_width: usize, fallback: bool) -> TransformParams {
    let scale = area.sqrt();
    let ch = ((h as f64 * scale).round() as usize).clamp(1, h);
    let cw = ((w as f64 * scale).round() as usize).clamp(1, w);
    TransformParams::CropResize {
        top: (h - ch) / 2,
        left: (w - cw) / 2,
        height: ch,
        width: cw,
        out_height,
        out_width,
        fallback,
    }
}

/// RandomResizedCrop window: area fraction and aspect drawn uniformly,
/// up to ten attempts, then a centre crop.
fn sample_crop<R: Rng + ?Sized>(
    h: usize,
    w: usize,
    area_range: (f64, f64),
    ratio_range: (f64, f64),
    out: (usize, usize),
    rng: &mut R,
) -> (f64, TransformParams) {
    let total = (h * w) as f64;
    let mut last_area = area_range.1;
    for _ in 0..CROP_ATTEMPTS {
        let area = uniform(rng, area_range.0, area_range.1);
        let ratio = uniform(rng, ratio_range.0, ratio_range.1);
        last_area = area;
        let cw = (area * total * ratio).sqrt().round() as usize;
        let ch = (area * total / ratio).sqrt().round() as usize;
        if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
            let top = rng.gen_range(0..=h - ch);
            let left = rng.gen_range(0..=w - cw);
            let params = TransformParams::CropResize {
                top,
                left,
                height: ch,
                width: cw,
                out_height: out.0,
                out_width: out.1,
                fallback: false,
            };
            return (area, params);
        }
    }
    (last_area, centre_crop(h, w, last_area, out.0, out.1, true))
}

/// Stochastic parameters for `id` at magnitude `m`.
fn sample_params<R: Rng + ?Sized>(img: &Image, id: TransformId, m: f64, rng: &mut R) -> TransformParams {
    let signed = |rng: &mut R| uniform(rng, -1.0, 1.0);
    let sign = |rng: &mut R| if rng.gen::<bool>() { 1.0 } else { -1.0 };
    match id {
        TransformId::CropResize => {
            let a = crop_area(m);
            sample_crop(img.height, img.width, (a, a), (0.75, 4.0 / 3.0), (img.height, img.width), rng).1
        }
        TransformId::Hflip => TransformParams::Hflip { applied: true },
        TransformId::Grayscale => TransformParams::Grayscale { applied: true },
        TransformId::Brightness => TransformParams::Brightness { delta: 0.4 * m * signed(rng) },
        TransformId::Contrast => TransformParams::Contrast { factor: 1.0 + 0.4 * m * signed(rng) },
        TransformId::Saturation => TransformParams::Saturation { factor: 1.0 + 0.4 * m * signed(rng) },
        TransformId::Hue => TransformParams::Hue { shift: 0.1 * m * signed(rng) },
        TransformId::ShearX => TransformParams::ShearX { shear: 0.3 * m * sign(rng) },
        TransformId::TranslateX => TransformParams::TranslateX { shift: 0.3 * m * img.width as f64 * sign(rng) },
        _ => fixed_params(img, id, m),
    }
}

/// Deterministic parameters used by magnitude grids: positive direction,
/// centred crop with the image's aspect, all-or-nothing transforms on iff `m > 0`.
pub fn fixed_params(img: &Image, id: TransformId, m: f64) -> TransformParams {
    match id {
        TransformId::CropResize => centre_crop(img.height, img.width, crop_area(m), img.height, img.width, false),
        TransformId::Hflip => TransformParams::Hflip { applied: m > 0.0 },
        TransformId::Grayscale => TransformParams::Grayscale { applied: m > 0.0 },
        TransformId::Brightness => TransformParams::Brightness { delta: 0.4 * m },
        TransformId::Contrast => TransformParams::Contrast { factor: 1.0 + 0.4 * m },
        TransformId::Saturation => TransformParams::Saturation { factor: 1.0 + 0.4 * m },
        TransformId::Hue => TransformParams::Hue { shift: 0.1 * m },
        TransformId::GaussianBlur => TransformParams::GaussianBlur { sigma: 2.0 * m },
        TransformId::ShearX => TransformParams::ShearX { shear: 0.3 * m },
        TransformId::TranslateX => TransformParams::TranslateX { shift: 0.3 * m * img.width as f64 },
        TransformId::Posterize => TransformParams::Posterize { bits: 8 - (4.0 * m).floor() as u32 },
        TransformId::Solarize => TransformParams::Solarize { threshold: 1.0 - m },
    }
}

/// Applies `id` at magnitude `m` with stochastic parameters drawn from `rng`.
pub fn apply_transform<R: Rng + ?Sized>(
    img: &Image,
    id: TransformId,
    magnitude: f64,
    rng: &mut R,
) -> Result<(Image, AugEntry)> {
    check_magnitude(magnitude)?;
    let params = sample_params(img, id, magnitude, rng);
    let out = apply_params(img, &params)?;
    Ok((out, AugEntry { id, magnitude, params }))
}

/// Deterministic counterpart of [`apply_transform`].
pub fn apply_fixed(img: &Image, id: TransformId, magnitude: f64) -> Result<(Image, AugEntry)> {
    check_magnitude(magnitude)?;
    let params = fixed_params(img, id, magnitude);
    let out = apply_params(img, &params)?;
    Ok((out, AugEntry { id, magnitude, params }))
}

pub fn replay(img: &Image, record: &AugRecord) -> Result<Image> {
    record.entries.iter().try_fold(img.clone(), |acc, e| apply_params(&acc, &e.params))
}

pub fn apply_params(img: &Image, params: &TransformParams) -> Result<Image> {
    Ok(match *params {
        TransformParams::CropResize { top, left, height, width, out_height, out_width, .. } => {
            if height == 0 || width == 0 || top + height > img.height || left + width > img.width {
                return Err(Error::Invalid(format!(
                    "crop window {height}×{width} at ({top},{left}) outside {}×{}",
                    img.height, img.width
                )));
            }
            if out_height == 0 || out_width == 0 {
                return Err(Error::Invalid("crop output size must be positive".into()));
            }
            resize_window(img, top, left, height, width, out_height, out_width)
        }
        TransformParams::Hflip { applied } => {
            if !applied {
                return Ok(img.clone());
            }
            let c = img.channels;
            let mut pixels = Vec::with_capacity(img.pixels.len());
            for row in img.pixels.chunks(img.width * c) {
                for px in row.chunks(c).rev() {
                    pixels.extend_from_slice(px);
                }
            }
            Image { pixels, ..*img }
        }
        TransformParams::Brightness { delta } => {
            if delta == 0.0 {
                return Ok(img.clone());
            }
            img.map_pixels(|p| p + delta)
        }
        TransformParams::Contrast { factor } => {
            if factor == 1.0 {
                return Ok(img.clone());
            }
            let luma = img.luma();
            let mu = luma.iter().sum::<f64>() / luma.len() as f64;
            img.map_pixels(|p| mu + factor * (p - mu))
        }
        TransformParams::Saturation { factor } => {
            if factor == 1.0 || img.channels == 1 {
                return Ok(img.clone());
            }
            let luma = img.luma();
            let values = img
                .pixels
                .iter()
                .enumerate()
                .map(|(i, &p)| luma[i / 3] + factor * (p as f64 - luma[i / 3]));
            Image::from_values(img, img.height, img.width, values)
        }
        TransformParams::Hue { shift } => {
            if shift == 0.0 || img.channels == 1 {
                return Ok(img.clone());
            }
            let values = img.pixels.chunks(3).flat_map(|px| {
                let (h, s, v) = rgb_to_hsv(px[0] as f64, px[1] as f64, px[2] as f64);
                let (r, g, b) = hsv_to_rgb((h + shift).rem_euclid(1.0), s, v);
                [r, g, b]
            });
            Image::from_values(img, img.height, img.width, values)
        }
        TransformParams::Grayscale { applied } => {
            if !applied || img.channels == 1 {
                return Ok(img.clone());
            }
            let values = img.luma().into_iter().flat_map(|l| [l, l, l]);
            Image::from_values(img, img.height, img.width, values)
        }
        TransformParams::GaussianBlur { sigma } => {
            if sigma == 0.0 {
                return Ok(img.clone());
            }
            if !(sigma > 0.0) || !sigma.is_finite() {
                return Err(Error::Invalid(format!("blur sigma {sigma}")));
            }
            gaussian_blur(img, sigma)
        }
        TransformParams::ShearX { shear } => {
            if shear == 0.0 {
                return Ok(img.clone());
            }
            let cy = (img.height as f64 - 1.0) / 2.0;
            resample_rows(img, |y, x| x as f64 + shear * (y as f64 - cy))
        }
        TransformParams::TranslateX { shift } => {
            if shift == 0.0 {
                return Ok(img.clone());
            }
            resample_rows(img, |_, x| x as f64 - shift)
        }
        TransformParams::Posterize { bits } => {
            if bits >= 8 {
                return Ok(img.clone());
            }
            let mask = (0xFFu32 << (8 - bits)) as u8;
            img.map_pixels(|p| ((p * 255.0).round() as u8 & mask) as f64 / 255.0)
        }
        TransformParams::Solarize { threshold } => img.map_pixels(|p| if p > threshold { 1.0 - p } else { p }),
    })
}

/// Bilinear resize of a window with half-pixel centres; reads outside the
/// window clamp to its edge.
fn resize_window(img: &Image, top: usize, left: usize, h: usize, w: usize, oh: usize, ow: usize) -> Image {
    let c = img.channels;
    let (sy, sx) = (h as f64 / oh as f64, w as f64 / ow as f64);
    let axis = |i: usize, scale: f64, len: usize| {
        let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(len - 1), s - i0 as f64)
    };
    let mut pixels = Vec::with_capacity(oh * ow * c);
    for i in 0..oh {
        let (y0, y1, fy) = axis(i, sy, h);
        for j in 0..ow {
            let (x0, x1, fx) = axis(j, sx, w);
            for ch in 0..c {
                let at = |y: usize, x: usize| img.get(top + y, left + x, ch) as f64;
                let upper = at(y0, x0) + fx * (at(y0, x1) - at(y0, x0));
                let lower = at(y1, x0) + fx * (at(y1, x1) - at(y1, x0));
                pixels.push((upper + fy * (lower - upper)).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Image { height: oh, width: ow, channels: c, pixels }
}

/// Linear interpolation along x of source column `src(y, x)`, with a grey
/// fill outside the image.
fn resample_rows(img: &Image, src: impl Fn(usize, usize) -> f64) -> Image {
    let c = img.channels;
    let mut values = Vec::with_capacity(img.pixels.len());
    for y in 0..img.height {
        for x in 0..img.width {
            let s = src(y, x);
            let x0 = s.floor();
            let f = s - x0;
            let read = |xi: f64, ch: usize| {
                if xi < 0.0 || xi > (img.width - 1) as f64 {
                    FILL
                } else {
                    img.get(y, xi as usize, ch) as f64
                }
            };
            for ch in 0..c {
                let a = read(x0, ch);
                values.push(if f == 0.0 { a } else { a + f * (read(x0 + 1.0, ch) - a) });
            }
        }
    }
    Image::from_values(img, img.height, img.width, values.into_iter())
}

fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let radius = (2.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / norm).collect();
    let (h, w, c) = (img.height as isize, img.width as isize, img.channels);
    let src: Vec<f64> = img.pixels.iter().map(|&p| p as f64).collect();
    let idx = |y: isize, x: isize, ch: usize| (y as usize * w as usize + x as usize) * c + ch;

    let mut horiz = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                horiz[idx(y, x, ch)] = weights
                    .iter()
                    .enumerate()
                    .map(|(k, wk)| wk * src[idx(y, (x + k as isize - radius).clamp(0, w - 1), ch)])
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[idx(y, x, ch)] = weights
                    .iter()
                    .enumerate()
                    .map(|(k, wk)| wk * horiz[idx((y + k as isize - radius).clamp(0, h - 1), x, ch)])
                    .sum();
            }
        }
    }
    Image::from_values(img, img.height, img.width, out.into_iter())
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn default_view_size() -> usize {
    32
}
fn default_crop_scale() -> [f64; 2] {
    [0.2, 1.0]
}
fn default_crop_ratio() -> [f64; 2] {
    [0.75, 4.0 / 3.0]
}
fn default_half() -> f64 {
    0.5
}
fn default_jitter_p() -> f64 {
    0.8
}
fn default_jitter_strength() -> f64 {
    0.4
}
fn default_hue() -> f64 {
    0.1
}
fn default_grayscale_p() -> f64 {
    0.2
}

/// View-sampling recipe: random resized crop, flip, colour jitter in the
/// fixed order brightness, contrast, saturation, hue, then grayscale and
/// optional blur.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugPolicy {
    #[serde(default = "default_view_size")]
    pub view_size: usize,
    #[serde(default = "default_crop_scale")]
    pub crop_scale: [f64; 2],
    #[serde(default = "default_crop_ratio")]
    pub crop_ratio: [f64; 2],
    #[serde(default = "default_half")]
    pub hflip_p: f64,
    #[serde(default = "default_jitter_p")]
    pub jitter_p: f64,
    #[serde(default = "default_jitter_strength")]
    pub brightness: f64,
    #[serde(default = "default_jitter_strength")]
    pub contrast: f64,
    #[serde(default = "default_jitter_strength")]
    pub saturation: f64,
    #[serde(default = "default_hue")]
    pub hue: f64,
    #[serde(default = "default_grayscale_p")]
    pub grayscale_p: f64,
    #[serde(default)]
    pub blur_p: f64,
}

impl Default for AugPolicy {
    fn default() -> Self {
        AugPolicy {
            view_size: default_view_size(),
            crop_scale: default_crop_scale(),
            crop_ratio: default_crop_ratio(),
            hflip_p: default_half(),
            jitter_p: default_jitter_p(),
            brightness: default_jitter_strength(),
            contrast: default_jitter_strength(),
            saturation: default_jitter_strength(),
            hue: default_hue(),
            grayscale_p: default_grayscale_p(),
            blur_p: 0.0,
        }
    }
}

impl AugPolicy {
    /// Every gate off and the crop fixed to the full image.
    pub fn disabled(view_size: usize) -> Self {
        AugPolicy {
            view_size,
            crop_scale: [1.0, 1.0],
            hflip_p: 0.0,
            jitter_p: 0.0,
            grayscale_p: 0.0,
            blur_p: 0.0,
            ..AugPolicy::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Config(format!("aug policy: {what}")));
        if self.view_size == 0 {
            return bad("view_size must be positive".into());
        }
        for (name, p) in [
            ("hflip_p", self.hflip_p),
            ("jitter_p", self.jitter_p),
            ("grayscale_p", self.grayscale_p),
            ("blur_p", self.blur_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        for (name, s, max) in [
            ("brightness", self.brightness, 0.4),
            ("contrast", self.contrast, 0.4),
            ("saturation", self.saturation, 0.4),
            ("hue", self.hue, 0.1),
        ] {
            if !(0.0..=max).contains(&s) {
                return bad(format!("{name} = {s} outside [0, {max}]"));
            }
        }
        let [lo, hi] = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("crop_scale {:?} must satisfy 0 < lo ≤ hi ≤ 1", self.crop_scale));
        }
        let [lo, hi] = self.crop_ratio;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("crop_ratio {:?} must satisfy 0 < lo ≤ hi", self.crop_ratio));
        }
        Ok(())
    }
}

/// One augmented view following `policy`.
pub fn sample_view<R: Rng + ?Sized>(img: &Image, policy: &AugPolicy, rng: &mut R) -> Result<(Image, AugRecord)> {
    let mut record = AugRecord::default();
    let mut current = img.clone();
    let mut push = |current: &mut Image, id: TransformId, magnitude: f64, params: TransformParams| -> Result<()> {
        *current = apply_params(current, &params)?;
        record.entries.push(AugEntry { id, magnitude, params });
        Ok(())
    };

    let out = (policy.view_size, policy.view_size);
    let (area, crop) = sample_crop(
        img.height,
        img.width,
        (policy.crop_scale[0], policy.crop_scale[1]),
        (policy.crop_ratio[0], policy.crop_ratio[1]),
        out,
        rng,
    );
    push(&mut current, TransformId::CropResize, ((1.0 - area) / 0.8).clamp(0.0, 1.0), crop)?;

    if rng.gen::<f64>() < policy.hflip_p {
        push(&mut current, TransformId::Hflip, 1.0, TransformParams::Hflip { applied: true })?;
    }
    if rng.gen::<f64>() < policy.jitter_p {
        let jitter = [
            (TransformId::Brightness, policy.brightness / 0.4),
            (TransformId::Contrast, policy.contrast / 0.4),
            (TransformId::Saturation, policy.saturation / 0.4),
            (TransformId::Hue, policy.hue / 0.1),
        ];
        for (id, m) in jitter {
            if m > 0.0 {
                let m = m.min(1.0);
                let params = sample_params(&current, id, m, rng);
                push(&mut current, id, m, params)?;
            }
        }
    }
    if rng.gen::<f64>() < policy.grayscale_p {
        push(&mut current, TransformId::Grayscale, 1.0, TransformParams::Grayscale { applied: true })?;
    }
    if rng.gen::<f64>() < policy.blur_p {
        let m = rng.gen::<f64>();
        push(&mut current, TransformId::GaussianBlur, m, TransformParams::GaussianBlur { sigma: 2.0 * m })?;
    }
    Ok((current, record))
}

/// Two independent views of one source image, each from its own stream.
pub fn sample_view_pair<R: Rng + ?Sized>(
    img: &Image,
    policy: &AugPolicy,
    source_index: usize,
    rng_a: &mut R,
    rng_b: &mut R,
) -> Result<ViewPair> {
    policy.validate()?;
    let (view_a, rec_a) = sample_view(img, policy, rng_a)?;
    let (view_b, rec_b) = sample_view(img, policy, rng_b)?;
    Ok(ViewPair { view_a, view_b, rec_a, rec_b, source_index })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    /// One magnitude per transform axis.
    pub magnitudes: Vec<f64>,
    pub image: Image,
    pub record: AugRecord,
}

/// Uniform magnitudes `0, 1/(steps−1), …, 1`; a single step is just `0`.
pub fn grid_magnitudes(steps: usize) -> Result<Vec<f64>> {
    match steps {
        0 => Err(Error::Invalid("magnitude grid needs at least one step".into())),
        1 => Ok(vec![0.0]),
        _ => Ok((0..steps).map(|i| i as f64 / (steps - 1) as f64).collect()),
    }
}

/// Deterministic images over a 1-D grid of `id_x`, or the 2-D grid of
/// `id_x` followed by `id_y` (row-major, `id_x` outer).
pub fn magnitude_grid(img: &Image, id_x: TransformId, id_y: Option<TransformId>, steps: usize) -> Result<Vec<GridCell>> {
    let ms = grid_magnitudes(steps)?;
    let mut cells = Vec::new();
    for &mx in &ms {
        let (ix, ex) = apply_fixed(img, id_x, mx)?;
        match id_y {
            None => cells.push(GridCell {
                magnitudes: vec![mx],
                image: ix,
                record: AugRecord { entries: vec![ex] },
            }),
            Some(id_y) => {
                for &my in &ms {
                    let (iy, ey) = apply_fixed(&ix, id_y, my)?;
                    cells.push(GridCell {
                        magnitudes: vec![mx, my],
                        image: iy,
                        record: AugRecord { entries: vec![ex.clone(), ey] },
                    });
                }
            }
        }
    }
    Ok(cells)
}
