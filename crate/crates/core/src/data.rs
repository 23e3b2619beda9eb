//! MNIST in the IDX container: parsing, normalization, shuffled batching.
//!
//! IDX headers are big-endian `u32`s: magic, item count, then rows and cols
//! for image files. Payloads must match the header exactly. Files starting
//! with the gzip magic are decompressed transparently.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const MNIST_SIDE: usize = 28;
pub const N_CLASSES: usize = 10;
pub const MNIST_MEAN: f32 = 0.1307;
pub const MNIST_STD: f32 = 0.3081;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }

    pub fn expected_len(self) -> usize {
        match self {
            Split::Train => 60_000,
            Split::Test => 10_000,
        }
    }
}

/// Decoded image file: `count` images of `rows×cols` pixels scaled to [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct Images {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f32>,
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0).ok_or(Error::Truncated { expected: 4, found: bytes.len() })?;
    if found == expected {
        return Ok(());
    }
    let hint = match (expected, found) {
        (IMAGE_MAGIC, LABEL_MAGIC) => " (label file passed as images)",
        (LABEL_MAGIC, IMAGE_MAGIC) => " (image file passed as labels)",
        _ => "",
    };
    Err(Error::BadMagic { expected, found, hint })
}

fn check_payload(actual: usize, expected: usize) -> Result<()> {
    match actual.cmp(&expected) {
        std::cmp::Ordering::Less => Err(Error::Truncated { expected, found: actual }),
        std::cmp::Ordering::Greater => Err(Error::TrailingBytes { expected, found: actual }),
        std::cmp::Ordering::Equal => Ok(()),
    }
}

/// Parses an image file whose images must be `rows×cols`.
pub fn parse_idx_images_sized(bytes: &[u8], rows: usize, cols: usize) -> Result<Images> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let header = |i: usize| be_u32(bytes, 4 * i).ok_or(Error::Truncated { expected: 16, found: bytes.len() });
    let (count, r, c) = (header(1)? as usize, header(2)? as usize, header(3)? as usize);
    if (r, c) != (rows, cols) {
        return Err(Error::DimMismatch {
            rows: r,
            cols: c,
            expected_rows: rows,
            expected_cols: cols,
        });
    }
    let payload = &bytes[16..];
    let expected = count
        .checked_mul(rows * cols)
        .ok_or(Error::Truncated { expected: usize::MAX, found: payload.len() })?;
    check_payload(payload.len(), expected)?;
    let pixels = payload.iter().map(|&b| f32::from(b) / 255.0).collect();
    Ok(Images { count, rows, cols, pixels })
}

/// Parses a 28×28 image file.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Images> {
    parse_idx_images_sized(bytes, MNIST_SIDE, MNIST_SIDE)
}

/// Parses a label file; every label must be a digit.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = be_u32(bytes, 4).ok_or(Error::Truncated { expected: 8, found: bytes.len() })? as usize;
    let payload = &bytes[8..];
    check_payload(payload.len(), count)?;
    if let Some((index, &label)) = payload.iter().enumerate().find(|(_, &l)| l as usize >= N_CLASSES) {
        return Err(Error::LabelOutOfRange { index, label });
    }
    Ok(payload.to_vec())
}

pub fn write_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Reads a file, inflating it when it carries the gzip magic.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let file_err = |source| Error::File { path: path.to_path_buf(), source };
    let raw = fs::read(path).map_err(file_err)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(file_err)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn find_file(dir: &Path, stem: &str, kind: &str) -> Result<PathBuf> {
    let names = [
        format!("{stem}-{kind}-idx{}-ubyte", if kind == "images" { 3 } else { 1 }),
        format!("{stem}-{kind}.idx{}-ubyte", if kind == "images" { 3 } else { 1 }),
    ];
    for name in &names {
        for candidate in [dir.join(name), dir.join(format!("{name}.gz"))] {
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
    }
    Err(Error::File {
        path: dir.join(&names[0]),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found (also tried .gz)"),
    })
}

/// Standardized images with their labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub rows: usize,
    pub cols: usize,
    /// `len · rows · cols` standardized pixels.
    pub pixels: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Dataset {
    /// Pairs parsed images with labels and standardizes the pixels.
    pub fn from_parts(images: Images, labels: Vec<u8>) -> Result<Self> {
        if images.count != labels.len() {
            return Err(Error::CountMismatch {
                images: images.count,
                labels: labels.len(),
            });
        }
        let mut pixels = images.pixels;
        normalize(&mut pixels);
        Ok(Self {
            rows: images.rows,
            cols: images.cols,
            pixels,
            labels,
        })
    }

    pub fn from_idx_bytes(images: &[u8], labels: &[u8]) -> Result<Self> {
        Self::from_parts(parse_idx_images(images)?, parse_idx_labels(labels)?)
    }

    /// Loads `{train,t10k}-{images,labels}` from `dir`, optionally gzipped.
    pub fn load(dir: &Path, split: Split) -> Result<Self> {
        let images = read_maybe_gz(&find_file(dir, split.stem(), "images")?)?;
        let labels = read_maybe_gz(&find_file(dir, split.stem(), "labels")?)?;
        Self::from_idx_bytes(&images, &labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` samples (or all of them).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let px = self.rows * self.cols;
        Self {
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[..n * px].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Gathers samples `idx` into an image tensor `[B, rows, cols]`.
    pub fn batch<T: Scalar>(&self, idx: &[usize]) -> Result<Batch<T>> {
        let px = self.rows * self.cols;
        let mut data = Vec::with_capacity(idx.len() * px);
        for &i in idx {
            data.extend(self.pixels[i * px..(i + 1) * px].iter().map(|&p| T::of(f64::from(p))));
        }
        Ok(Batch {
            images: Tensor::new(data, &[idx.len(), self.rows, self.cols])?,
            labels: idx.iter().map(|&i| self.labels[i] as usize).collect(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Batch<T: Scalar> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

/// `(x - 0.1307) / 0.3081` in place.
pub fn normalize(pixels: &mut [f32]) {
    for p in pixels {
        *p = (*p - MNIST_MEAN) / MNIST_STD;
    }
}

/// Sample order for one epoch: a Fisher–Yates permutation drawn from a
/// ChaCha stream keyed by `(seed, epoch)`, or the identity.
pub fn epoch_order(n: usize, seed: u64, epoch: usize, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
    }
    order
}

/// Index batches of size `batch`; the final partial batch is kept.
pub fn batch_indices(n: usize, batch: usize, seed: u64, epoch: usize, shuffle: bool) -> Vec<Vec<usize>> {
    let batch = batch.max(1);
    epoch_order(n, seed, epoch, shuffle)
        .chunks(batch)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Materialized batches for one epoch, in order.
pub fn batch_iter<'a, T: Scalar>(
    ds: &'a Dataset,
    batch: usize,
    seed: u64,
    epoch: usize,
    shuffle: bool,
) -> impl Iterator<Item = Result<Batch<T>>> + 'a {
    batch_indices(ds.len(), batch, seed, epoch, shuffle)
        .into_iter()
        .map(move |idx| ds.batch(&idx))
}
