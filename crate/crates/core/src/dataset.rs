//! MNIST IDX ingestion, normalization, and deterministic mini-batching.
//!
//! IDX files carry a 4-byte big-endian magic (`0x00000803` for images,
//! `0x00000801` for labels), one 4-byte big-endian size per axis, then the
//! row-major `u8` payload.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::seed;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

/// Number of leading training-file examples kept for training.
pub const TRAIN_PREFIX: usize = 55_000;

/// A stack of greyscale images with intensities scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ImageTensor {
    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.values[i * n..(i + 1) * n]
    }
}

fn read_header(bytes: &[u8], magic: u32, axes: usize) -> Result<(Vec<usize>, &[u8])> {
    let header_len = 4 * (axes + 1);
    if bytes.len() < 4 {
        return Err(Error::Truncated { expected: header_len, actual: bytes.len() });
    }
    let found = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    if found != magic {
        return Err(Error::BadMagic { expected: magic, found });
    }
    if bytes.len() < header_len {
        return Err(Error::Truncated { expected: header_len, actual: bytes.len() });
    }
    let dims: Vec<usize> = (0..axes)
        .map(|a| u32::from_be_bytes(bytes[4 + 4 * a..8 + 4 * a].try_into().unwrap()) as usize)
        .collect();
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|p| p.checked_add(header_len))
        .ok_or(Error::Truncated { expected: usize::MAX, actual: bytes.len() })?;
    if bytes.len() < payload {
        return Err(Error::Truncated { expected: payload, actual: bytes.len() });
    }
    Ok((dims, &bytes[header_len..payload]))
}

/// Decodes an IDX3 image file, dividing every intensity by 255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<ImageTensor> {
    let (dims, payload) = read_header(bytes, IMAGE_MAGIC, 3)?;
    Ok(ImageTensor {
        count: dims[0],
        rows: dims[1],
        cols: dims[2],
        values: payload.iter().map(|&b| f64::from(b) / 255.0).collect(),
    })
}

/// Decodes an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let (_, payload) = read_header(bytes, LABEL_MAGIC, 1)?;
    if let Some(index) = payload.iter().position(|&l| l as usize >= NUM_CLASSES) {
        return Err(Error::LabelOutOfRange { index, value: payload[index] });
    }
    Ok(payload.to_vec())
}

/// Encodes images back to IDX3, rounding each intensity to the nearest `k/255`.
pub fn write_idx_images(images: &ImageTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.values.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for d in [images.count, images.rows, images.cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(images.values.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Labelled images. Pixels are stored flat, one `rows * cols` block per image.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: usize,
    cols: usize,
    pixels: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(images: ImageTensor, labels: Vec<u8>) -> Result<Self> {
        if images.count != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} images but {} labels",
                images.count,
                labels.len()
            )));
        }
        if let Some(index) = labels.iter().position(|&l| l as usize >= NUM_CLASSES) {
            return Err(Error::LabelOutOfRange { index, value: labels[index] });
        }
        if images.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::ShapeMismatch("pixel value outside [0, 1]".into()));
        }
        Ok(Self { rows: images.rows, cols: images.cols, pixels: images.values, labels })
    }

    pub fn from_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Self> {
        Self::new(parse_idx_images(image_bytes)?, parse_idx_labels(label_bytes)?)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.pixels_per_image();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// The first `n` examples in file order.
    pub fn prefix(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[..n * self.pixels_per_image()].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut pixels = Vec::with_capacity(indices.len() * self.pixels_per_image());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        Dataset {
            rows: self.rows,
            cols: self.cols,
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Examples whose label is in `classes`, in file order.
    pub fn filter_classes(&self, classes: &[u8]) -> Dataset {
        let keep: Vec<usize> =
            (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect();
        self.subset(&keep)
    }

    /// Gathers the given examples into an `N x rows x cols x 1` tensor.
    pub fn batch_tensor(&self, indices: &[usize]) -> Tensor {
        let n = self.pixels_per_image();
        let mut values = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            values.extend_from_slice(self.image(i));
        }
        Tensor::from_vec(vec![indices.len(), self.rows, self.cols, 1], values)
            .expect("batch tensor shape")
    }
}

/// Paths of the four standard MNIST files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    /// The conventional uncompressed file names inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn load_train(&self, prefix: usize) -> Result<Dataset> {
        Ok(load_pair(&self.train_images, &self.train_labels)?.prefix(prefix))
    }

    pub fn load_test(&self) -> Result<Dataset> {
        load_pair(&self.test_images, &self.test_labels)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn load_pair(images: &Path, labels: &Path) -> Result<Dataset> {
    let images = parse_idx_images(&read_file(images)?).map_err(|e| e.in_file(images))?;
    let labels = parse_idx_labels(&read_file(labels)?).map_err(|e| e.in_file(labels))?;
    Dataset::new(images, labels)
}

/// Visiting order for stochastic training.
///
/// Step `s` covers positions `s * batch_size ..` of an endless stream made of
/// consecutive epochs. Epoch 0 uses `first_order`; epoch `e >= 1` uses a
/// Fisher-Yates shuffle driven by `seed::mix(epoch_seed, e)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub epoch_seed: u64,
    pub order: Vec<usize>,
}

impl BatchPlan {
    /// A plan whose first epoch is itself shuffled from the seed.
    pub fn new(count: usize, batch_size: usize, epoch_seed: u64) -> Self {
        Self { batch_size, epoch_seed, order: epoch_permutation(count, epoch_seed, 0) }
    }

    pub fn with_order(order: Vec<usize>, batch_size: usize, epoch_seed: u64) -> Self {
        Self { batch_size, epoch_seed, order }
    }

    pub fn count(&self) -> usize {
        self.order.len()
    }

    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        if epoch == 0 {
            self.order.clone()
        } else {
            epoch_permutation(self.count(), self.epoch_seed, epoch)
        }
    }

    /// Dataset indices visited at `step`.
    pub fn batch_indices(&self, step: u64) -> Result<Vec<usize>> {
        let count = self.count();
        if count == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.batch_size == 0 || self.batch_size > count {
            return Err(Error::ShapeMismatch(format!(
                "batch size {} for {} examples",
                self.batch_size, count
            )));
        }
        let start = step * self.batch_size as u64;
        let mut out = Vec::with_capacity(self.batch_size);
        let mut cached: Option<(u64, Vec<usize>)> = None;
        for pos in start..start + self.batch_size as u64 {
            let epoch = pos / count as u64;
            let offset = (pos % count as u64) as usize;
            if cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
                cached = Some((epoch, self.epoch_order(epoch)));
            }
            out.push(cached.as_ref().unwrap().1[offset]);
        }
        Ok(out)
    }
}

fn epoch_permutation(count: usize, epoch_seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut seed::rng(seed::mix(epoch_seed, epoch)));
    order
}

/// One mini-batch: an `N x 28 x 28 x 1` tensor plus labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub images: Tensor,
    pub labels: Vec<u8>,
}

pub fn next_batch(dataset: &Dataset, plan: &BatchPlan, step: u64) -> Result<Batch> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if plan.count() != dataset.len() {
        return Err(Error::ShapeMismatch(format!(
            "plan covers {} examples, dataset has {}",
            plan.count(),
            dataset.len()
        )));
    }
    let indices = plan.batch_indices(step)?;
    let images = dataset.batch_tensor(&indices);
    let labels = indices.iter().map(|&i| dataset.label(i)).collect();
    Ok(Batch { indices, images, labels })
}
