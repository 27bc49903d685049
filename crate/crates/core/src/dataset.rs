//! Labeled image datasets and the MNIST IDX decoder.

use ndarray::{s, Array3, Array4, ArrayView3};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// `N×C×H×W` images in `[0, 1]` with integer class labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    images: Array4<f32>,
    labels: Vec<u8>,
    num_classes: usize,
    split: Split,
}

impl LabeledDataset {
    pub fn new(images: Array4<f32>, labels: Vec<u8>, num_classes: usize, split: Split) -> Result<Self> {
        if images.shape()[0] != labels.len() {
            return Err(Error::CountMismatch {
                images: images.shape()[0],
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        if images.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("pixel values outside [0, 1]".into()));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn images(&self) -> &Array4<f32> {
        &self.images
    }

    /// `(C, H, W)` of a single image.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn image(&self, index: usize) -> ArrayView3<'_, f32> {
        self.images.slice(s![index, .., .., ..])
    }

    pub fn image_f64(&self, index: usize) -> Array3<f64> {
        self.image(index).mapv(f64::from)
    }

    /// First `n` examples (or all if fewer).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images.slice(s![..n, .., .., ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    /// Examples `[start, end)`.
    pub fn range(&self, start: usize, end: usize) -> Self {
        let end = end.min(self.len());
        let start = start.min(end);
        Self {
            images: self.images.slice(s![start..end, .., .., ..]).to_owned(),
            labels: self.labels[start..end].to_vec(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::TruncatedPayload {
            needed: offset + 4,
            available: bytes.len(),
        })
}

/// Decoded IDX image file: `n` images of `rows×cols` raw bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn decode_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)? as usize;
    let cols = read_u32_be(bytes, 12)? as usize;
    let payload = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or(Error::DimOverflow)?;
    let needed = 16 + payload;
    if bytes.len() < needed {
        return Err(Error::TruncatedPayload {
            needed,
            available: bytes.len(),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..needed].to_vec(),
    })
}

pub fn decode_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(Error::TruncatedPayload {
            needed,
            available: bytes.len(),
        });
    }
    Ok(bytes[8..needed].to_vec())
}

/// Builds an `N×1×H×W` dataset from raw IDX image and label files, scaling
/// bytes to `[0, 1]` by `v / 255`.
pub fn mnist_from_idx(image_bytes: &[u8], label_bytes: &[u8], split: Split) -> Result<LabeledDataset> {
    let images = decode_idx_images(image_bytes)?;
    let labels = decode_idx_labels(label_bytes)?;
    if images.count != labels.len() {
        return Err(Error::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let scaled: Vec<f32> = images.pixels.iter().map(|&b| f32::from(b) / 255.0).collect();
    let array = Array4::from_shape_vec((images.count, 1, images.rows, images.cols), scaled)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    LabeledDataset::new(array, labels, 10, split)
}

/// Serializes images and labels to IDX bytes. Used to build fixtures.
pub fn encode_idx(images: &IdxImages, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + images.pixels.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.count as u32).to_be_bytes());
    img.extend_from_slice(&(images.rows as u32).to_be_bytes());
    img.extend_from_slice(&(images.cols as u32).to_be_bytes());
    img.extend_from_slice(&images.pixels);
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}
