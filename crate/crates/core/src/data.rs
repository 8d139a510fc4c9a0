//! Labelled image datasets: a procedural generator and IDX file I/O.
//!
//! IDX is the big-endian container used by the classic handwritten-digit
//! datasets. Images use magic `0x00000803` followed by `N, H, W`; labels use
//! `0x00000801` followed by `N`. All payloads are unsigned bytes.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{argument, shape, Error, Result};
use crate::tensor::Tensor4;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `(N, C, H, W)`.
    pub images: Tensor4,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Tensor4, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if labels.len() != images.dims()[0] {
            return Err(shape(format!("{} labels for {} images", labels.len(), images.dims()[0])));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(argument(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self { images, labels, classes, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)` of one sample.
    pub fn sample_dims(&self) -> [usize; 3] {
        let [_, c, h, w] = self.images.dims();
        [c, h, w]
    }

    /// Mean and population standard deviation over every pixel.
    pub fn pixel_stats(&self) -> (f64, f64) {
        let d = self.images.data();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// Gathers the given samples into one minibatch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor4, Vec<usize>) {
        let [c, h, w] = self.sample_dims();
        let per = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor4::new([indices.len(), c, h, w], data).expect("batch dims"), labels)
    }
}

/// Oriented sinusoidal gratings: class `k` of `classes` has orientation
/// `π·k/classes`. Phase, spatial frequency and contrast are jittered per
/// sample and Gaussian pixel noise is added; pixels are clamped to `[0, 1]`.
/// Samples are interleaved by class (`label = i mod classes`).
pub fn generate_synthetic(classes: usize, samples_per_class: usize, size: usize, seed: u64) -> Result<Dataset> {
    if classes == 0 || samples_per_class == 0 || size == 0 {
        return Err(argument("classes, samples per class and size must all be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.15).expect("valid sigma");
    let n = classes * samples_per_class;
    let mut data = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    let centre = (size as f64 - 1.0) / 2.0;
    for i in 0..n {
        let label = i % classes;
        let theta = PI * label as f64 / classes as f64 + rng.random_range(-0.06..0.06);
        let cycles = rng.random_range(2.0..3.5);
        let phase = rng.random_range(0.0..2.0 * PI);
        let contrast = rng.random_range(0.25..0.45);
        let (dir_y, dir_x) = theta.sin_cos();
        for y in 0..size {
            for x in 0..size {
                let (py, px) = (y as f64 - centre, x as f64 - centre);
                let t = (px * dir_x + py * dir_y) / size as f64;
                let v = 0.5 + contrast * (2.0 * PI * cycles * t + phase).sin() + noise.sample(&mut rng);
                data.push(v.clamp(0.0, 1.0));
            }
        }
        labels.push(label);
    }
    Dataset::new(Tensor4::new([n, 1, size, size], data)?, labels, classes, Split::Train)
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, message: message.into() }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let b = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| format_err(offset, format!("truncated header: need 4 bytes, file has {}", bytes.len())))?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses an IDX image file into `(N, H, W, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(0, format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let n = read_u32(bytes, 4)? as usize;
    let h = read_u32(bytes, 8)? as usize;
    let w = read_u32(bytes, 12)? as usize;
    let need = n * h * w;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(format_err(16 + payload.len(), format!("truncated pixel data: need {need} bytes, found {}", payload.len())));
    }
    Ok((n, h, w, &payload[..need]))
}

/// Parses an IDX label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(0, format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n = read_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(format_err(8 + payload.len(), format!("truncated label data: need {n} bytes, found {}", payload.len())));
    }
    Ok(&payload[..n])
}

/// Loads an IDX image/label pair; pixels are scaled to `[0, 1]` and the
/// class count is one more than the largest label.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;
    let (n, h, w, pixels) = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if labels.len() != n {
        return Err(format_err(4, format!("{n} images but {} labels", labels.len())));
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(format_err(4, "empty dataset"));
    }
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(Tensor4::new([n, 1, h, w], data)?, labels, classes, Split::Train)
}

/// Serializes a single-channel dataset as an IDX pair; pixels are rounded
/// to `round(255 · v)` after clamping to `[0, 1]`.
pub fn encode_idx(dataset: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let [n, c, h, w] = dataset.images.dims();
    if c != 1 {
        return Err(argument(format!("IDX stores single-channel images, got {c} channels")));
    }
    if dataset.classes > 256 {
        return Err(argument("IDX labels are bytes; at most 256 classes"));
    }
    let mut images = Vec::with_capacity(16 + n * h * w);
    for v in [IDX_IMAGES_MAGIC, n as u32, h as u32, w as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend(dataset.images.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut labels = Vec::with_capacity(8 + n);
    for v in [IDX_LABELS_MAGIC, n as u32] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    labels.extend(dataset.labels.iter().map(|&l| l as u8));
    Ok((images, labels))
}

pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (images, labels) = encode_idx(dataset)?;
    fs::write(images_path, images)?;
    fs::write(labels_path, labels)?;
    Ok(())
}
