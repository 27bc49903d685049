//! Scene-to-sensor measurement pipeline: geometric scene preparation,
//! convolution with the PSF, sensor downsampling and shot noise.

mod convolve;
mod resize;

use ndarray::{s, Array2, Array3, Axis};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use convolve::Convolver;
pub use resize::{Resample1d, Resampler};

use crate::error::{Error, Result};
use crate::optics::{IntensityPsf, PsfMetadata};
use crate::rng::Rng;

/// Photon count per unit intensity used to draw shot noise.
pub const PHOTON_GAIN: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// Height of the object in the scene plane, meters.
    pub object_height: f64,
    pub d1: f64,
    pub d2: f64,
    pub downsample: usize,
    /// Target SNR in dB; `f64::INFINITY` disables noise.
    pub target_snr_db: f64,
    /// Object-plane translation `(dy, dx)` in meters.
    pub shift: (f64, f64),
}

impl SceneConfig {
    /// MNIST digits 12 cm tall at 40 cm, 4 mm mask gap, 40 dB SNR.
    pub fn mnist(downsample: usize) -> Self {
        Self {
            object_height: 0.12,
            d1: 0.40,
            d2: 4e-3,
            downsample,
            target_snr_db: 40.0,
            shift: (0.0, 0.0),
        }
    }

    /// `|M| = d2/d1`.
    pub fn magnification(&self) -> f64 {
        self.d2 / self.d1
    }

    /// Object height projected onto the sensor.
    pub fn sensor_height(&self) -> f64 {
        self.object_height * self.magnification()
    }

    /// Checks the configuration against a sensor plane of `plane_height` meters.
    pub fn validate(&self, plane_height: f64) -> Result<()> {
        for (name, v) in [("object_height", self.object_height), ("d1", self.d1), ("d2", self.d2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.downsample == 0 {
            return Err(Error::InvalidArgument("downsample factor must be at least 1".into()));
        }
        if self.target_snr_db.is_nan() {
            return Err(Error::InvalidArgument("target SNR is NaN".into()));
        }
        if !(self.shift.0.is_finite() && self.shift.1.is_finite()) {
            return Err(Error::InvalidArgument("shift must be finite".into()));
        }
        if self.sensor_height() > plane_height {
            return Err(Error::ObjectTooLarge {
                object: self.sensor_height(),
                sensor: plane_height,
            });
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "object_height={:e}\nd1={:e}\nd2={:e}\ndownsample={}\ntarget_snr_db={}\nshift_y={:e}\nshift_x={:e}\n",
            self.object_height,
            self.d1,
            self.d2,
            self.downsample,
            self.target_snr_db,
            self.shift.0,
            self.shift.1
        )
    }
}

/// Sensor measurement with the configuration and PSF it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorEmbedding {
    pub values: Array3<f64>,
    /// Hex digest over the scene configuration and PSF metadata.
    pub provenance: String,
}

pub fn provenance_hash(cfg: &SceneConfig, meta: &PsfMetadata) -> String {
    let mut h = Sha256::new();
    h.update(cfg.to_text().as_bytes());
    h.update(meta.to_text().as_bytes());
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Object height in PSF pixels.
pub fn object_pixels(cfg: &SceneConfig, pitch_y: f64) -> usize {
    (cfg.sensor_height() / pitch_y).round() as usize
}

/// Bilinear translation by `(dy, dx)` pixels; samples falling outside are zero.
pub fn translate(img: &Array2<f64>, dy: f64, dx: f64) -> Array2<f64> {
    if dy == 0.0 && dx == 0.0 {
        return img.clone();
    }
    let (h, w) = img.dim();
    let at = |r: i64, c: i64| -> f64 {
        if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
            0.0
        } else {
            img[[r as usize, c as usize]]
        }
    };
    Array2::from_shape_fn((h, w), |(r, c)| {
        let (y, x) = (r as f64 - dy, c as f64 - dx);
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        let (y0, x0) = (y0 as i64, x0 as i64);
        (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
            + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1))
    })
}

/// Places an image in the PSF frame at the physical size it would have on the sensor.
///
/// The image is resized so its height spans the object's projected height,
/// padded to `dims` with the odd remainder on the bottom/right, then shifted
/// by `cfg.shift·|M|/pitch` pixels. A grayscale image is broadcast to
/// `channels`; otherwise the channel counts must match.
pub fn prep_scene(image: &Array3<f64>, cfg: &SceneConfig, pitch: (f64, f64), dims: (usize, usize), channels: usize) -> Result<Array3<f64>> {
    let (c_in, h, w) = image.dim();
    if c_in != 1 && c_in != channels {
        return Err(Error::ShapeMismatch {
            expected: vec![channels, h, w],
            actual: vec![c_in, h, w],
        });
    }
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scene image".into()));
    }
    cfg.validate(dims.0 as f64 * pitch.0)?;
    let scale = object_pixels(cfg, pitch.0) as f64 / h as f64;
    let (rh, rw) = (
        ((scale * h as f64).round() as usize).max(1),
        ((scale * w as f64).round() as usize).max(1),
    );
    if rh > dims.0 || rw > dims.1 {
        return Err(Error::ObjectTooLarge {
            object: cfg.sensor_height(),
            sensor: dims.0 as f64 * pitch.0,
        });
    }
    let (top, left) = ((dims.0 - rh) / 2, (dims.1 - rw) / 2);
    let dy = cfg.shift.0 * cfg.magnification() / pitch.0;
    let dx = cfg.shift.1 * cfg.magnification() / pitch.1;
    let fits = |start: usize, len: usize, d: f64, total: usize| {
        let lo = start as f64 + d;
        lo > -1.0 && lo + len as f64 - 1.0 < total as f64
    };
    if !fits(top, rh, dy, dims.0) || !fits(left, rw, dx, dims.1) {
        return Err(Error::ShiftOutOfFrame);
    }

    let resampler = Resampler::new((h, w), (rh, rw));
    let mut out = Array3::zeros((channels, dims.0, dims.1));
    for c in 0..channels {
        let src = image.index_axis(Axis(0), if c_in == 1 { 0 } else { c }).to_owned();
        let mut plane = Array2::zeros(dims);
        plane
            .slice_mut(s![top..top + rh, left..left + rw])
            .assign(&resampler.apply(&src));
        out.index_axis_mut(Axis(0), c).assign(&translate(&plane, dy, dx));
    }
    Ok(out)
}

fn check_same_dims(a: &Array3<f64>, b: &Array3<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected: b.shape().to_vec(),
            actual: a.shape().to_vec(),
        });
    }
    Ok(())
}

/// Per-channel linear convolution, center-cropped to the input dims.
pub fn fft_convolve(scene: &Array3<f64>, psf: &Array3<f64>) -> Result<Array3<f64>> {
    check_same_dims(scene, psf)?;
    let mut out = Array3::zeros(scene.dim());
    for c in 0..scene.dim().0 {
        let conv = Convolver::new(&psf.index_axis(Axis(0), c).to_owned());
        out.index_axis_mut(Axis(0), c)
            .assign(&conv.convolve(&scene.index_axis(Axis(0), c).to_owned()));
    }
    Ok(out)
}

/// Output dims after downsampling by `factor` (floor).
pub fn downsampled_dims(dims: (usize, usize), factor: usize) -> Result<(usize, usize)> {
    if factor == 0 {
        return Err(Error::InvalidArgument("downsample factor must be at least 1".into()));
    }
    let out = (dims.0 / factor, dims.1 / factor);
    if out.0 == 0 || out.1 == 0 {
        return Err(Error::InvalidArgument(format!(
            "downsampling {}×{} by {factor} leaves no pixels",
            dims.0, dims.1
        )));
    }
    Ok(out)
}

/// Bilinear area-consistent resize of every channel by `1/factor`.
pub fn downsample(img: &Array3<f64>, factor: usize) -> Result<Array3<f64>> {
    let (c, h, w) = img.dim();
    let out_dims = downsampled_dims((h, w), factor)?;
    if factor == 1 {
        return Ok(img.clone());
    }
    let r = Resampler::new((h, w), out_dims);
    let mut out = Array3::zeros((c, out_dims.0, out_dims.1));
    for ch in 0..c {
        out.index_axis_mut(Axis(0), ch)
            .assign(&r.apply(&img.index_axis(Axis(0), ch).to_owned()));
    }
    Ok(out)
}

fn variance<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    values.map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Poisson noise scaled to reach `target_snr_db` relative to `img`, before
/// it is added. Returns an all-zero array for an infinite target.
pub fn scaled_shot_noise(img: &Array3<f64>, target_snr_db: f64, rng: &mut Rng) -> Result<Array3<f64>> {
    if img.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("noise input".into()));
    }
    if let Some(&v) = img.iter().find(|&&v| v < 0.0) {
        return Err(Error::NegativeRate(v));
    }
    let (lo, hi) = img.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let signal_var = variance(img.iter());
    if lo == hi || signal_var == 0.0 {
        return Err(Error::ZeroVariance);
    }
    if target_snr_db == f64::INFINITY {
        return Ok(Array3::zeros(img.dim()));
    }
    let mut noise = Array3::zeros(img.dim());
    for (n, &v) in noise.iter_mut().zip(img.iter()) {
        *n = rng.poisson(v * PHOTON_GAIN)? / PHOTON_GAIN - v;
    }
    let noise_var = variance(noise.iter());
    if noise_var == 0.0 {
        return Ok(noise);
    }
    let k = (signal_var / (noise_var * 10f64.powf(target_snr_db / 10.0))).sqrt();
    noise.mapv_inplace(|n| k * n);
    Ok(noise)
}

/// Adds SNR-calibrated shot noise and clamps the result at zero.
pub fn shot_noise(img: &Array3<f64>, target_snr_db: f64, rng: &mut Rng) -> Result<Array3<f64>> {
    let noise = scaled_shot_noise(img, target_snr_db, rng)?;
    Ok((img + &noise).mapv(|v| v.max(0.0)))
}

/// Realized SNR in dB of `noisy` against `clean`.
pub fn realized_snr_db(clean: &Array3<f64>, noisy: &Array3<f64>) -> f64 {
    let diff = noisy - clean;
    10.0 * (variance(clean.iter()) / variance(diff.iter())).log10()
}

/// Runs the full measurement pipeline for one image.
///
/// Single-channel images are convolved with the channel-mean PSF and yield a
/// one-channel embedding; multi-channel images use the matching PSF channels.
pub fn simulate_example(image: &Array3<f64>, cfg: &SceneConfig, psf: &IntensityPsf, rng: &mut Rng) -> Result<SensorEmbedding> {
    SensorSimulator::new(psf, cfg, image.dim().0 == 1)?.simulate(image, rng)
}

/// Reusable pipeline for one PSF and scene configuration.
#[derive(Debug, Clone)]
pub struct SensorSimulator {
    cfg: SceneConfig,
    pitch: (f64, f64),
    dims: (usize, usize),
    convolvers: Vec<Convolver>,
    down: Resampler,
    provenance: String,
}

impl SensorSimulator {
    /// With `grayscale`, the PSF is averaged over channels and the pipeline is single-channel.
    pub fn new(psf: &IntensityPsf, cfg: &SceneConfig, grayscale: bool) -> Result<Self> {
        let meta = psf.metadata();
        let dims = psf.dims();
        cfg.validate(dims.0 as f64 * meta.pitch.0)?;
        let out_dims = downsampled_dims(dims, cfg.downsample)?;
        let convolvers = if grayscale {
            vec![Convolver::new(&psf.grayscale())]
        } else {
            psf.values()
                .outer_iter()
                .map(|p| Convolver::new(&p.to_owned()))
                .collect()
        };
        Ok(Self {
            cfg: cfg.clone(),
            pitch: meta.pitch,
            dims,
            convolvers,
            down: Resampler::new(dims, out_dims),
            provenance: provenance_hash(cfg, meta),
        })
    }

    pub fn channels(&self) -> usize {
        self.convolvers.len()
    }

    pub fn config(&self) -> &SceneConfig {
        &self.cfg
    }

    pub fn output_dims(&self) -> (usize, usize, usize) {
        let (h, w) = self.down.output_dims();
        (self.channels(), h, w)
    }

    pub fn prep(&self, image: &Array3<f64>) -> Result<Array3<f64>> {
        prep_scene(image, &self.cfg, self.pitch, self.dims, self.channels())
    }

    /// Noise-free measurement at sensor resolution.
    pub fn measure_clean(&self, image: &Array3<f64>) -> Result<Array3<f64>> {
        let scene = self.prep(image)?;
        let (c, h, w) = self.output_dims();
        let mut out = Array3::zeros((c, h, w));
        for (ch, conv) in self.convolvers.iter().enumerate() {
            let v = conv.convolve(&scene.index_axis(Axis(0), ch).to_owned());
            let v = if self.cfg.downsample == 1 { v } else { self.down.apply(&v) };
            out.index_axis_mut(Axis(0), ch).assign(&v);
        }
        Ok(out)
    }

    pub fn simulate(&self, image: &Array3<f64>, rng: &mut Rng) -> Result<SensorEmbedding> {
        let clean = self.measure_clean(image)?;
        Ok(SensorEmbedding {
            values: shot_noise(&clean, self.cfg.target_snr_db, rng)?,
            provenance: self.provenance.clone(),
        })
    }

    /// Simulates every image in parallel; item `i` draws noise from `rng.derive(i)`.
    pub fn simulate_batch(&self, images: &[Array3<f64>], rng: &Rng) -> Result<Vec<SensorEmbedding>> {
        images
            .par_iter()
            .enumerate()
            .map(|(i, img)| self.simulate(img, &mut rng.derive(i as u64)))
            .collect()
    }
}
