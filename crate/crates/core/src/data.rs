//! CIFAR-10 binary files, the synthetic shapes dataset and shuffled batching.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use scorecl_autodiff::{Real, Tensor};

use crate::augment::{images_to_tensor, Image};
use crate::error::{Error, Result};
use crate::rng;

pub const CIFAR_RECORD: usize = 3073;
const CIFAR_SIDE: usize = 32;
const CIFAR_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl LabeledDataset {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Data(format!("{} images but {} labels", images.len(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Data(format!("label {bad} outside 0..{class_count}")));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|i| !i.same_dims(first)) {
                return Err(Error::Data("images differ in shape".into()));
            }
        }
        Ok(LabeledDataset { images, labels, class_count })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_refs(&self) -> Vec<&Image> {
        self.images.iter().collect()
    }

    /// All images as `[N,C,H,W]`.
    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        images_to_tensor(&self.image_refs())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses 3073-byte records: a label byte, then 1024 bytes each of the red,
/// green and blue planes.
pub fn parse_cifar10(bytes: &[u8]) -> Result<LabeledDataset> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Data(format!(
            "CIFAR-10 data of {} bytes is not a multiple of {CIFAR_RECORD}",
            bytes.len()
        )));
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (r, rec) in bytes.chunks(CIFAR_RECORD).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::Data(format!("record {r}: label byte {label} ≥ 10")));
        }
        let mut pixels = Vec::with_capacity(3 * plane);
        for p in 0..plane {
            for c in 0..3 {
                pixels.push(rec[1 + c * plane + p] as f32 / 255.0);
            }
        }
        images.push(Image::new(CIFAR_SIDE, CIFAR_SIDE, 3, pixels)?);
        labels.push(label);
    }
    LabeledDataset::new(images, labels, CIFAR_CLASSES)
}

pub fn load_cifar10_binary<P: AsRef<Path>>(paths: &[P]) -> Result<LabeledDataset> {
    let mut all = LabeledDataset { images: Vec::new(), labels: Vec::new(), class_count: CIFAR_CLASSES };
    for path in paths {
        let path = path.as_ref();
        let part = parse_cifar10(&read_file(path)?).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        all.images.extend(part.images);
        all.labels.extend(part.labels);
    }
    Ok(all)
}

fn to_byte(p: f32) -> u8 {
    (p * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Inverse of [`parse_cifar10`].
pub fn cifar10_bytes(ds: &LabeledDataset) -> Result<Vec<u8>> {
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut out = Vec::with_capacity(ds.len() * CIFAR_RECORD);
    for (img, &label) in ds.images.iter().zip(&ds.labels) {
        if (img.height(), img.width(), img.channels()) != (CIFAR_SIDE, CIFAR_SIDE, 3) || label >= CIFAR_CLASSES {
            return Err(Error::Data("only 32×32×3 images with labels below 10 fit CIFAR-10".into()));
        }
        out.push(label as u8);
        for c in 0..3 {
            for p in 0..plane {
                out.push(to_byte(img.pixels()[p * 3 + c]));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Circle,
    Square,
    Triangle,
    Cross,
}

impl Shape {
    fn of_class(class: usize) -> Shape {
        [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Cross][class]
    }

    /// Point test in units of the shape radius, relative to its centre.
    fn contains(self, dx: f64, dy: f64) -> bool {
        match self {
            Shape::Circle => dx * dx + dy * dy <= 1.0,
            Shape::Square => dx.abs() <= 0.85 && dy.abs() <= 0.85,
            Shape::Triangle => {
                // apex up at (0,−1), base at y = 0.75 spanning x ∈ [−0.95, 0.95]
                let t = (dy + 1.0) / 1.75;
                (0.0..=1.0).contains(&t) && dx.abs() <= 0.95 * t
            }
            Shape::Cross => (dx.abs() <= 1.0 && dy.abs() <= 0.3) || (dy.abs() <= 1.0 && dx.abs() <= 0.3),
        }
    }
}

fn luma(c: &[f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

const SUPERSAMPLE: usize = 4;

fn render_shape(class: usize, res: usize, rng: &mut impl Rng) -> Image {
    let shape = Shape::of_class(class);
    let r = res as f64;
    let bg: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    // foreground far enough from the background in luma to stay visible
    let mut fg: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    for _ in 0..16 {
        if (luma(&fg) - luma(&bg)).abs() >= 0.25 {
            break;
        }
        fg = [rng.gen(), rng.gen(), rng.gen()];
    }
    let radius = r * rng.gen_range(0.2..0.35);
    let cx = r * rng.gen_range(0.3..0.7);
    let cy = r * rng.gen_range(0.3..0.7);
    let shade = rng.gen_range(-0.15..0.15);

    let mut pixels = Vec::with_capacity(res * res * 3);
    for y in 0..res {
        for x in 0..res {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                    if shape.contains((px - cx) / radius, (py - cy) / radius) {
                        hits += 1;
                    }
                }
            }
            let cover = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
            let light = shade * ((x as f64 + 0.5) / r - 0.5);
            for c in 0..3 {
                let back = (bg[c] + light).clamp(0.0, 1.0);
                pixels.push((back + cover * (fg[c] - back)).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Image::new(res, res, 3, pixels).expect("valid render")
}

/// Anti-aliased circle / square / triangle / cross images; class `i mod
/// class_count` for sample `i`, random placement, size and colours.
pub fn synth_shapes(n: usize, resolution: usize, class_count: usize, seed: u64) -> Result<LabeledDataset> {
    if n == 0 || resolution == 0 || class_count == 0 {
        return Err(Error::Invalid("synth_shapes needs n, resolution and class_count ≥ 1".into()));
    }
    if class_count > 4 {
        return Err(Error::Invalid(format!("synth_shapes has 4 shapes, {class_count} classes requested")));
    }
    let labels: Vec<usize> = (0..n).map(|i| i % class_count).collect();
    let images = labels
        .iter()
        .enumerate()
        .map(|(i, &class)| render_shape(class, resolution, &mut rng::stream(&[seed, 0x5A, i as u64])))
        .collect();
    LabeledDataset::new(images, labels, class_count)
}

/// Raw export: u32 LE header (n, resolution, channels, class_count), n label
/// bytes, then every image's pixel bytes row-major with channels innermost.
pub fn raw_bytes(ds: &LabeledDataset) -> Result<Vec<u8>> {
    let (res, channels) = match ds.images.first() {
        Some(img) if img.height() == img.width() => (img.height(), img.channels()),
        Some(_) => return Err(Error::Data("raw export needs square images".into())),
        None => (0, 0),
    };
    if ds.labels.iter().any(|&l| l > u8::MAX as usize) {
        return Err(Error::Data("raw export stores labels as bytes".into()));
    }
    let mut out = Vec::new();
    for v in [ds.len(), res, channels, ds.class_count] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend(ds.labels.iter().map(|&l| l as u8));
    for img in &ds.images {
        out.extend(img.pixels().iter().map(|&p| to_byte(p)));
    }
    Ok(out)
}

pub fn parse_raw(bytes: &[u8]) -> Result<LabeledDataset> {
    if bytes.len() < 16 {
        return Err(Error::Data(format!("raw dataset of {} bytes has no header", bytes.len())));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    let (n, res, channels, class_count) = (field(0), field(1), field(2), field(3));
    let per = res * res * channels;
    let expected = 16 + n + n * per;
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "raw dataset header promises {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let labels: Vec<usize> = bytes[16..16 + n].iter().map(|&b| b as usize).collect();
    let images = bytes[16 + n..]
        .chunks(per.max(1))
        .take(n)
        .map(|px| Image::new(res, res, channels, px.iter().map(|&b| b as f32 / 255.0).collect()))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Data(e.to_string()))?;
    LabeledDataset::new(images, labels, class_count)
}

pub fn write_raw(path: &Path, ds: &LabeledDataset) -> Result<()> {
    fs::write(path, raw_bytes(ds)?).map_err(|e| Error::io(path, e))
}

pub fn read_raw(path: &Path) -> Result<LabeledDataset> {
    parse_raw(&read_file(path)?).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// Training: a short final batch is dropped.
    DropLast,
    /// Evaluation: every index is kept.
    KeepLast,
}

/// Shuffled index batches for one epoch; the permutation depends only on
/// `(seed, epoch)`.
pub fn batch_iter(n: usize, batch: usize, epoch: usize, seed: u64, mode: BatchMode) -> Result<Vec<Vec<usize>>> {
    if batch == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(&[seed, 0xBA7C, epoch as u64]));
    Ok(order
        .chunks(batch)
        .filter(|c| mode == BatchMode::KeepLast || c.len() == batch)
        .map(<[usize]>::to_vec)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let mut bytes = vec![0u8; 2 * CIFAR_RECORD];
        bytes[0] = 3;
        bytes[1] = 0;
        bytes[CIFAR_RECORD] = 7;
        bytes[CIFAR_RECORD + 1] = 255;
        // second record: green plane starts at offset 1 + 1024
        bytes[CIFAR_RECORD + 1 + 1024] = 128;
        bytes
    }

    #[test]
    fn crafted_records_parse_exactly() {
        let ds = parse_cifar10(&fixture()).unwrap();
        assert_eq!(ds.labels, vec![3, 7]);
        assert_eq!(ds.images[0].get(0, 0, 0), 0.0);
        assert_eq!(ds.images[1].get(0, 0, 0), 1.0);
        assert_eq!(ds.images[1].get(0, 0, 1), 128.0 / 255.0);
        assert_eq!(cifar10_bytes(&ds).unwrap(), fixture());
    }

    #[test]
    fn cifar_size_and_label_errors() {
        assert!(parse_cifar10(&[]).unwrap().is_empty());
        assert!(matches!(parse_cifar10(&vec![0u8; 3072]), Err(Error::Data(_))));
        let mut bad = vec![0u8; CIFAR_RECORD];
        bad[0] = 10;
        assert!(matches!(parse_cifar10(&bad), Err(Error::Data(_))));
    }

    #[test]
    fn synth_is_seeded_balanced_and_in_range() {
        let a = synth_shapes(100, 16, 4, 7).unwrap();
        let b = synth_shapes(100, 16, 4, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_shapes(100, 16, 4, 8).unwrap());
        for c in 0..4 {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 25);
        }
        assert!(a.images.iter().all(|i| i.pixels().iter().all(|p| (0.0..=1.0).contains(p))));
        assert!(synth_shapes(10, 16, 5, 0).is_err());
    }

    #[test]
    fn raw_round_trip() {
        let ds = synth_shapes(6, 8, 3, 1).unwrap();
        let bytes = raw_bytes(&ds).unwrap();
        let back = parse_raw(&bytes).unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(raw_bytes(&back).unwrap(), bytes);
        assert!(parse_raw(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn batches_cover_indices_once() {
        let b = batch_iter(10, 10, 0, 3, BatchMode::DropLast).unwrap();
        assert_eq!(b.len(), 1);
        let mut all = b[0].clone();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        assert_eq!(batch_iter(10, 4, 0, 3, BatchMode::DropLast).unwrap().len(), 2);
        let keep = batch_iter(10, 4, 0, 3, BatchMode::KeepLast).unwrap();
        assert_eq!(keep.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert!(batch_iter(10, 0, 0, 3, BatchMode::KeepLast).is_err());
    }

    #[test]
    fn epochs_shuffle_differently() {
        let e0 = batch_iter(50, 50, 0, 1, BatchMode::KeepLast).unwrap();
        let e1 = batch_iter(50, 50, 1, 1, BatchMode::KeepLast).unwrap();
        let same = e0[0].iter().zip(&e1[0]).filter(|(a, b)| a == b).count();
        // two independent permutations of 50 share ~1 fixed position on average
        assert!(same < 10, "{same} positions agree");
    }
}
