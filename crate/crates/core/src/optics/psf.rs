//! Intensity PSF synthesis for a mask-based encoder.
//!
//! Per wavelength: a point source at distance `d1` yields a spherical
//! wavefront at the mask, the mask multiplies it sample-wise, the product
//! propagates `d2` to the sensor, and the PSF is the squared modulus.

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;

use super::field::{check_positive, spherical_wavefront, Propagator, SimGrid};
use super::mask::{ColorFilter, MaskGeometry, MaskLayout, MaskWeights};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsfChannel {
    pub wavelength: f64,
    /// Color filter the channel sees through; `None` for unfiltered masks.
    pub filter: Option<ColorFilter>,
}

/// Red, green and blue at 640, 550 and 460 nm.
pub fn rgb_channels() -> Vec<PsfChannel> {
    ColorFilter::ALL
        .iter()
        .map(|&f| PsfChannel {
            wavelength: f.wavelength(),
            filter: Some(f),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpticalSetup {
    /// Scene-to-mask distance in meters.
    pub d1: f64,
    /// Mask-to-sensor distance in meters.
    pub d2: f64,
    pub grid: SimGrid,
    pub channels: Vec<PsfChannel>,
}

impl OpticalSetup {
    /// MNIST geometry (40 cm scene distance, 4 mm mask gap) on the desk grid.
    pub fn mnist_desk() -> Self {
        Self {
            d1: 0.40,
            d2: 4e-3,
            grid: SimGrid::desk(),
            channels: rgb_channels(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("d1", self.d1)?;
        check_positive("d2", self.d2)?;
        if self.channels.is_empty() {
            return Err(Error::InvalidArgument("at least one wavelength is required".into()));
        }
        for ch in &self.channels {
            check_positive("wavelength", ch.wavelength)?;
        }
        Ok(())
    }
}

/// Provenance of a simulated PSF; serialized as `key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfMetadata {
    pub d1: f64,
    pub d2: f64,
    pub pitch: (f64, f64),
    pub wavelengths: Vec<f64>,
    pub geometry_hash: String,
}

impl PsfMetadata {
    pub fn to_text(&self) -> String {
        let wl: Vec<String> = self.wavelengths.iter().map(|w| format!("{w:e}")).collect();
        format!(
            "d1={:e}\nd2={:e}\npitch_y={:e}\npitch_x={:e}\nwavelengths={}\ngeometry_hash={}\n",
            self.d1,
            self.d2,
            self.pitch.0,
            self.pitch.1,
            wl.join(","),
            self.geometry_hash
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut d1 = None;
        let mut d2 = None;
        let mut py = None;
        let mut px = None;
        let mut wavelengths = None;
        let mut hash = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("malformed metadata line {line:?}")))?;
            let value = value.trim();
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad number for {key}: {v:?}")))
            };
            match key.trim() {
                "d1" => d1 = Some(num(value)?),
                "d2" => d2 = Some(num(value)?),
                "pitch_y" => py = Some(num(value)?),
                "pitch_x" => px = Some(num(value)?),
                "wavelengths" => {
                    wavelengths = Some(value.split(',').map(|w| num(w.trim())).collect::<Result<Vec<_>>>()?)
                }
                "geometry_hash" => hash = Some(value.to_string()),
                _ => {}
            }
        }
        let missing = |k: &str| Error::InvalidArgument(format!("metadata missing key {k}"));
        Ok(Self {
            d1: d1.ok_or_else(|| missing("d1"))?,
            d2: d2.ok_or_else(|| missing("d2"))?,
            pitch: (py.ok_or_else(|| missing("pitch_y"))?, px.ok_or_else(|| missing("pitch_x"))?),
            wavelengths: wavelengths.ok_or_else(|| missing("wavelengths"))?,
            geometry_hash: hash.ok_or_else(|| missing("geometry_hash"))?,
        })
    }
}

/// Non-negative `C×H×W` intensity PSF.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityPsf {
    values: Array3<f64>,
    meta: PsfMetadata,
}

impl IntensityPsf {
    pub fn new(values: Array3<f64>, meta: PsfMetadata) -> Result<Self> {
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("PSF values must be finite and non-negative".into()));
        }
        if values.shape()[0] != meta.wavelengths.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![meta.wavelengths.len()],
                actual: vec![values.shape()[0]],
            });
        }
        Ok(Self { values, meta })
    }

    pub fn from_tensor(tensor: &Tensor, meta: PsfMetadata) -> Result<Self> {
        let values = tensor
            .array()
            .clone()
            .into_dimensionality()
            .map_err(|_| Error::ShapeMismatch {
                expected: vec![meta.wavelengths.len(), 0, 0],
                actual: tensor.shape().to_vec(),
            })?;
        Self::new(values, meta)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_array(self.values.clone().into_dyn()).expect("PSF values are finite")
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn metadata(&self) -> &PsfMetadata {
        &self.meta
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.values.shape()[1], self.values.shape()[2])
    }

    /// Mean over channels.
    pub fn grayscale(&self) -> Array2<f64> {
        self.values.mean_axis(Axis(0)).expect("at least one channel")
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            values: &self.values * alpha,
            meta: self.meta.clone(),
        }
    }
}

/// Precomputed per-wavelength optics for repeated PSF evaluation.
#[derive(Debug, Clone)]
pub(crate) struct ChannelOptics {
    pub(crate) incident: Array2<Complex64>,
    pub(crate) propagator: Propagator,
    pub(crate) filter: Option<ColorFilter>,
}

impl ChannelOptics {
    /// Sensor-plane field for a real mask amplitude.
    pub(crate) fn sensor_field(&self, amplitude: &Array2<f64>) -> Array2<Complex64> {
        let mut field = &self.incident * &amplitude.mapv(|a| Complex64::new(a, 0.0));
        self.propagator.apply(&mut field);
        field
    }
}

/// PSF simulator for a fixed geometry and optical setup; reused across weight updates.
#[derive(Debug, Clone)]
pub struct PsfSimulator {
    setup: OpticalSetup,
    layout: MaskLayout,
    geometry_hash: String,
    pub(crate) channels: Vec<ChannelOptics>,
}

impl PsfSimulator {
    pub fn new(geometry: &MaskGeometry, setup: &OpticalSetup) -> Result<Self> {
        setup.validate()?;
        let layout = MaskLayout::new(geometry, &setup.grid)?;
        let channels = build_channels(setup)?;
        Ok(Self {
            setup: setup.clone(),
            layout,
            geometry_hash: geometry.hash(),
            channels,
        })
    }

    pub fn setup(&self) -> &OpticalSetup {
        &self.setup
    }

    pub fn layout(&self) -> &MaskLayout {
        &self.layout
    }

    pub fn num_weights(&self) -> usize {
        self.layout.num_subpixels()
    }

    pub fn metadata(&self) -> PsfMetadata {
        metadata_for(&self.setup, &self.geometry_hash)
    }

    pub(crate) fn check_weights(&self, weights: &MaskWeights) -> Result<()> {
        if weights.len() != self.num_weights() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.num_weights()],
                actual: vec![weights.len()],
            });
        }
        Ok(())
    }

    pub fn simulate(&self, weights: &MaskWeights) -> Result<IntensityPsf> {
        self.check_weights(weights)?;
        let (h, w) = self.setup.grid.shape();
        let mut values = Array3::zeros((self.channels.len(), h, w));
        for (c, optics) in self.channels.iter().enumerate() {
            let amplitude = self.layout.amplitude(weights, optics.filter);
            let field = optics.sensor_field(&amplitude);
            values
                .index_axis_mut(Axis(0), c)
                .assign(&field.mapv(|v| v.norm_sqr()));
        }
        IntensityPsf::new(values, self.metadata())
    }
}

fn build_channels(setup: &OpticalSetup) -> Result<Vec<ChannelOptics>> {
    setup
        .channels
        .iter()
        .map(|ch| {
            Ok(ChannelOptics {
                incident: spherical_wavefront(&setup.grid, setup.d1, ch.wavelength)?.values,
                propagator: Propagator::new(&setup.grid, setup.d2, ch.wavelength)?,
                filter: ch.filter,
            })
        })
        .collect()
}

fn metadata_for(setup: &OpticalSetup, geometry_hash: &str) -> PsfMetadata {
    PsfMetadata {
        d1: setup.d1,
        d2: setup.d2,
        pitch: setup.grid.pitch,
        wavelengths: setup.channels.iter().map(|c| c.wavelength).collect(),
        geometry_hash: geometry_hash.to_string(),
    }
}

/// One-shot PSF simulation; see [`PsfSimulator`] for repeated use.
pub fn simulate_psf(geometry: &MaskGeometry, weights: &MaskWeights, setup: &OpticalSetup) -> Result<IntensityPsf> {
    PsfSimulator::new(geometry, setup)?.simulate(weights)
}

/// PSF of a fixed real amplitude mask applied identically on every channel.
pub fn simulate_psf_from_amplitude(amplitude: &Array2<f64>, setup: &OpticalSetup, tag: &str) -> Result<IntensityPsf> {
    setup.validate()?;
    if amplitude.dim() != setup.grid.shape() {
        return Err(Error::ShapeMismatch {
            expected: vec![setup.grid.rows, setup.grid.cols],
            actual: amplitude.shape().to_vec(),
        });
    }
    let channels = build_channels(setup)?;
    let (h, w) = setup.grid.shape();
    let mut values = Array3::zeros((channels.len(), h, w));
    for (c, optics) in channels.iter().enumerate() {
        let field = optics.sensor_field(amplitude);
        values
            .index_axis_mut(Axis(0), c)
            .assign(&field.mapv(|v| v.norm_sqr()));
    }
    IntensityPsf::new(values, metadata_for(setup, tag))
}
