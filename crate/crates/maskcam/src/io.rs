//! On-disk formats: MNIST IDX files, tensors, PSFs with metadata sidecars,
//! checkpoints and PNG previews.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use flate2::read::GzDecoder;
use maskcam_core::codec::{decode_tensor, encode_tensor};
use maskcam_core::dataset::{mnist_from_idx, LabeledDataset, Split};
use maskcam_core::optics::{IntensityPsf, PsfMetadata};
use maskcam_core::Tensor;
use ndarray::{Array2, Array3, Axis};

/// Reads `path`, or `path.gz` decompressed when only the gzip file exists.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    if path.exists() {
        return fs::read(path).with_context(|| format!("reading {}", path.display()));
    }
    let gz = PathBuf::from(format!("{}.gz", path.display()));
    let file = fs::File::open(&gz).with_context(|| format!("opening {} (or {})", gz.display(), path.display()))?;
    let mut bytes = Vec::new();
    GzDecoder::new(file)
        .read_to_end(&mut bytes)
        .with_context(|| format!("decompressing {}", gz.display()))?;
    Ok(bytes)
}

/// Loads an MNIST split from the standard IDX file names in `dir`.
pub fn load_mnist(dir: &Path, split: Split) -> Result<LabeledDataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let images = read_maybe_gz(&dir.join(format!("{prefix}-images-idx3-ubyte")))?;
    let labels = read_maybe_gz(&dir.join(format!("{prefix}-labels-idx1-ubyte")))?;
    mnist_from_idx(&images, &labels, split).with_context(|| format!("decoding MNIST {prefix} files in {}", dir.display()))
}

/// Writes through a temporary sibling and renames, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let tmp = PathBuf::from(format!("{}.partial", path.display()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming {} to {}", tmp.display(), path.display()))
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    write_atomic(path, &encode_tensor(tensor))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_tensor(&bytes).with_context(|| format!("decoding tensor {}", path.display()))
}

pub fn array3_tensor(a: &Array3<f64>) -> Tensor {
    Tensor::from_array(a.clone().into_dyn()).expect("finite extents")
}

pub fn tensor_array3(t: &Tensor) -> Result<Array3<f64>> {
    t.array()
        .clone()
        .into_dimensionality()
        .with_context(|| format!("expected a 3-D tensor, got shape {:?}", t.shape()))
}

/// Sidecar path holding the metadata of the PSF stored at `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

/// Saves the PSF tensor at `path` and its metadata next to it.
pub fn save_psf(path: &Path, psf: &IntensityPsf) -> Result<()> {
    write_tensor(path, &psf.to_tensor())?;
    write_atomic(&sidecar_path(path), psf.metadata().to_text().as_bytes())
}

pub fn load_psf(path: &Path) -> Result<IntensityPsf> {
    let tensor = read_tensor(path)?;
    let meta_path = sidecar_path(path);
    let text = fs::read_to_string(&meta_path).with_context(|| format!("reading PSF metadata {}", meta_path.display()))?;
    let meta = PsfMetadata::from_text(&text)?;
    Ok(IntensityPsf::from_tensor(&tensor, meta)?)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"MCKP";

/// Named arrays in one file: magic, `u32` count, then per entry a `u32`
/// name length, the UTF-8 name, a `u64` byte length and an encoded tensor.
pub fn encode_checkpoint(entries: &[(String, Vec<usize>, Vec<f64>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, shape, data) in entries {
        let t = Tensor::new(shape, data.clone()).with_context(|| format!("checkpoint entry {name}"))?;
        let bytes = encode_tensor(&t);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&bytes);
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let chunk = bytes.get(pos..pos + n).context("truncated checkpoint")?;
        pos += n;
        Ok(chunk)
    };
    if take(4)? != CHECKPOINT_MAGIC {
        bail!("not a checkpoint file");
    }
    let count = u32::from_le_bytes(take(4)?.try_into()?) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(4)?.try_into()?) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec()).context("checkpoint entry name")?;
        let len = u64::from_le_bytes(take(8)?.try_into()?) as usize;
        let tensor = decode_tensor(take(len)?).with_context(|| format!("checkpoint entry {name}"))?;
        out.push((name, tensor));
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, entries: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
    write_atomic(path, &encode_checkpoint(entries)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_checkpoint(&bytes)
}

/// Maps `[0, 1]` to `0..=255`, rounding half up. Out-of-range values are
/// clamped; returns the quantized bytes and how many values were clamped.
pub fn quantize(values: impl Iterator<Item = f64>) -> (Vec<u8>, usize) {
    let mut clamped = 0;
    let bytes = values
        .map(|v| {
            if !(0.0..=1.0).contains(&v) {
                clamped += 1;
            }
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            (v * 255.0 + 0.5).floor() as u8
        })
        .collect();
    (bytes, clamped)
}

fn warn_clamped(path: &Path, clamped: usize) {
    if clamped > 0 {
        log::warn!("{}: clamped {clamped} values outside [0, 1]", path.display());
    }
}

/// Writes a grayscale PNG of values in `[0, 1]`.
pub fn write_png_gray(path: &Path, img: &Array2<f64>) -> Result<()> {
    let (h, w) = img.dim();
    let (bytes, clamped) = quantize(img.iter().copied());
    warn_clamped(path, clamped);
    let buf = image::GrayImage::from_raw(w as u32, h as u32, bytes).context("PNG buffer size")?;
    encode_png(path, image::DynamicImage::ImageLuma8(buf))
}

/// Writes a `C×H×W` image with one or three channels as PNG.
pub fn write_png(path: &Path, img: &Array3<f64>) -> Result<()> {
    match img.dim().0 {
        1 => write_png_gray(path, &img.index_axis(Axis(0), 0).to_owned()),
        3 => {
            let (_, h, w) = img.dim();
            let interleaved = img.view().permuted_axes([1, 2, 0]);
            let (bytes, clamped) = quantize(interleaved.iter().copied());
            warn_clamped(path, clamped);
            let buf = image::RgbImage::from_raw(w as u32, h as u32, bytes).context("PNG buffer size")?;
            encode_png(path, image::DynamicImage::ImageRgb8(buf))
        }
        c => bail!("cannot write a {c}-channel PNG"),
    }
}

fn encode_png(path: &Path, img: image::DynamicImage) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .context("encoding PNG")?;
    write_atomic(path, &bytes)
}

/// Reads a PNG as a `C×H×W` array in `[0, 1]` (gray or RGB).
pub fn read_png(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?;
    let gray = matches!(img.color().channel_count(), 1 | 2);
    if gray {
        let g = img.to_luma8();
        let (w, h) = g.dimensions();
        Ok(Array3::from_shape_fn((1, h as usize, w as usize), |(_, r, c)| {
            f64::from(g.get_pixel(c as u32, r as u32)[0]) / 255.0
        }))
    } else {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Ok(Array3::from_shape_fn((3, h as usize, w as usize), |(ch, r, c)| {
            f64::from(rgb.get_pixel(c as u32, r as u32)[ch]) / 255.0
        }))
    }
}

/// Scales by the maximum so the brightest value maps to 1.
pub fn normalize_peak(img: &Array3<f64>) -> Array3<f64> {
    let peak = img.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        img / peak
    } else {
        img.clone()
    }
}
