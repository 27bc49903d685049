//! Programmable-mask geometry and rasterization onto the simulation grid.
//!
//! A mask is a lattice of rectangular sub-pixel apertures separated by opaque
//! deadspace. Each sub-pixel carries a real amplitude weight in `[0, 1]` and a
//! color filter; filters are modeled as ideal indicators at the three design
//! wavelengths, so a red sub-pixel transmits only on the red channel.

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::field::SimGrid;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColorFilter {
    Red,
    Green,
    Blue,
}

impl ColorFilter {
    pub const ALL: [ColorFilter; 3] = [ColorFilter::Red, ColorFilter::Green, ColorFilter::Blue];

    pub fn index(self) -> usize {
        match self {
            ColorFilter::Red => 0,
            ColorFilter::Green => 1,
            ColorFilter::Blue => 2,
        }
    }

    /// Design wavelength of the filter in meters.
    pub fn wavelength(self) -> f64 {
        match self {
            ColorFilter::Red => 640e-9,
            ColorFilter::Green => 550e-9,
            ColorFilter::Blue => 460e-9,
        }
    }
}

/// Lattice axis along which the R, G, B filters cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColorAxis {
    Rows,
    Cols,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskGeometry {
    /// Center-to-center spacing `(py, px)` in meters.
    pub subpixel_pitch: (f64, f64),
    /// Transmissive aperture `(ay, ax)` in meters.
    pub subpixel_size: (f64, f64),
    /// Sub-pixels overlapping the full sensor, `(rows, cols)`.
    pub full_grid: (usize, usize),
    /// Fraction of the sensor height left exposed; rows are cropped symmetrically.
    pub crop_fraction: f64,
    pub color_axis: ColorAxis,
}

impl MaskGeometry {
    /// ST7735R LCD over the IMX477R sensor, uncropped.
    ///
    /// 0.06×0.18 mm apertures on a 0.073×0.22 mm pitch; the filters
    /// cycle along the fine-pitch axis (three sub-pixels per color pixel).
    pub fn st7735r() -> Self {
        Self {
            subpixel_pitch: (0.073e-3, 0.22e-3),
            subpixel_size: (0.06e-3, 0.18e-3),
            full_grid: (64, 22),
            crop_fraction: 1.0,
            color_axis: ColorAxis::Rows,
        }
    }

    /// ST7735R cropped so that 80% of the sensor is exposed (51×22 sub-pixels).
    pub fn st7735r_cropped() -> Self {
        crop_aperture(&Self::st7735r(), 0.8).expect("valid preset")
    }

    pub fn validate(&self) -> Result<()> {
        let (py, px) = self.subpixel_pitch;
        let (ay, ax) = self.subpixel_size;
        if !(py > 0.0 && px > 0.0 && ay > 0.0 && ax > 0.0) {
            return Err(Error::InvalidArgument("mask dimensions must be positive".into()));
        }
        if ay > py || ax > px {
            return Err(Error::InvalidArgument(format!(
                "aperture ({ay}, {ax}) exceeds pitch ({py}, {px})"
            )));
        }
        if !(self.crop_fraction > 0.0 && self.crop_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "crop fraction {} outside (0, 1]",
                self.crop_fraction
            )));
        }
        let (rows, cols) = self.active_grid();
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyAperture(self.crop_fraction));
        }
        Ok(())
    }

    /// Area fill factor `(ay·ax)/(py·px)`.
    pub fn fill_factor(&self) -> f64 {
        let (ly, lx) = self.linear_fill_factor();
        ly * lx
    }

    /// Per-axis fill factors `(ay/py, ax/px)`.
    pub fn linear_fill_factor(&self) -> (f64, f64) {
        (
            self.subpixel_size.0 / self.subpixel_pitch.0,
            self.subpixel_size.1 / self.subpixel_pitch.1,
        )
    }

    /// Active `(rows, cols)` after cropping.
    pub fn active_grid(&self) -> (usize, usize) {
        let rows = (self.crop_fraction * self.full_grid.0 as f64 + 1e-9).floor() as usize;
        (rows, self.full_grid.1)
    }

    pub fn num_subpixels(&self) -> usize {
        let (r, c) = self.active_grid();
        r * c
    }

    /// Color filter of active sub-pixel `k` (row-major over the active grid).
    pub fn color_of(&self, k: usize) -> ColorFilter {
        let (_, cols) = self.active_grid();
        let along = match self.color_axis {
            ColorAxis::Rows => k / cols,
            ColorAxis::Cols => k % cols,
        };
        ColorFilter::ALL[along % 3]
    }

    /// Center of active sub-pixel `k` relative to the optical axis, `(y, x)` in meters.
    pub fn center_of(&self, k: usize) -> (f64, f64) {
        let (rows, cols) = self.active_grid();
        let (r, c) = (k / cols, k % cols);
        (
            (r as f64 - (rows as f64 - 1.0) / 2.0) * self.subpixel_pitch.0,
            (c as f64 - (cols as f64 - 1.0) / 2.0) * self.subpixel_pitch.1,
        )
    }

    /// Stable hex digest of the geometry.
    pub fn hash(&self) -> String {
        let text = format!(
            "pitch={:e},{:e};size={:e},{:e};grid={}x{};crop={:e};axis={:?}",
            self.subpixel_pitch.0,
            self.subpixel_pitch.1,
            self.subpixel_size.0,
            self.subpixel_size.1,
            self.full_grid.0,
            self.full_grid.1,
            self.crop_fraction,
            self.color_axis
        );
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Geometry exposing `fraction` of the sensor height, centered.
pub fn crop_aperture(geometry: &MaskGeometry, fraction: f64) -> Result<MaskGeometry> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::EmptyAperture(fraction));
    }
    let cropped = MaskGeometry {
        crop_fraction: fraction,
        ..geometry.clone()
    };
    if cropped.num_subpixels() == 0 {
        return Err(Error::EmptyAperture(fraction));
    }
    cropped.validate()?;
    Ok(cropped)
}

/// Real amplitude weights, one per active sub-pixel, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskWeights(Vec<f64>);

impl MaskWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("mask weight {bad} outside [0, 1]")));
        }
        Ok(Self(values))
    }

    /// Weights outside `[0, 1]` are allowed here; used for homogeneity and
    /// finite-difference checks that probe past the feasible set.
    pub fn unconstrained(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn uniform(rng: &mut Rng, count: usize) -> Self {
        Self((0..count).map(|_| rng.next_f64()).collect())
    }

    pub fn constant(count: usize, value: f64) -> Self {
        Self(vec![value; count])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self(self.0.iter().map(|w| w * alpha).collect())
    }

    /// Projects onto the box `[0, 1]^K`.
    pub fn project(&mut self) {
        self.0.iter_mut().for_each(|w| *w = w.clamp(0.0, 1.0));
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

const DEADSPACE: u32 = u32::MAX;

/// Assignment of simulation-grid samples to sub-pixels.
///
/// Each sub-pixel footprint is `round(a/pitch)` samples per axis, placed on
/// the samples nearest its center. Samples outside every footprint are
/// deadspace. Since every sample belongs to at most one sub-pixel, the
/// rasterized amplitude is linear in each weight.
#[derive(Debug, Clone)]
pub struct MaskLayout {
    owners: Array2<u32>,
    colors: Vec<ColorFilter>,
}

impl MaskLayout {
    pub fn new(geometry: &MaskGeometry, grid: &SimGrid) -> Result<Self> {
        geometry.validate()?;
        let (ay, ax) = geometry.subpixel_size;
        let samples_y = ay / grid.pitch.0;
        let samples_x = ax / grid.pitch.1;
        if samples_y < 1.0 {
            return Err(Error::GridTooCoarse {
                axis: "rows",
                samples: samples_y,
            });
        }
        if samples_x < 1.0 {
            return Err(Error::GridTooCoarse {
                axis: "cols",
                samples: samples_x,
            });
        }
        let ny = samples_y.round() as i64;
        let nx = samples_x.round() as i64;

        let mut owners = Array2::from_elem(grid.shape(), DEADSPACE);
        let k_total = geometry.num_subpixels();
        for k in 0..k_total {
            let (cy, cx) = geometry.center_of(k);
            let row0 = footprint_start(cy / grid.pitch.0 + (grid.rows / 2) as f64, ny);
            let col0 = footprint_start(cx / grid.pitch.1 + (grid.cols / 2) as f64, nx);
            if row0 < 0 || col0 < 0 || row0 + ny > grid.rows as i64 || col0 + nx > grid.cols as i64 {
                return Err(Error::MaskOutOfBounds(format!(
                    "sub-pixel {k} footprint at ({row0}, {col0}) exceeds {}x{} grid",
                    grid.rows, grid.cols
                )));
            }
            for r in row0..row0 + ny {
                for c in col0..col0 + nx {
                    let cell = &mut owners[[r as usize, c as usize]];
                    if *cell != DEADSPACE {
                        return Err(Error::GridTooCoarse {
                            axis: "deadspace",
                            samples: (geometry.subpixel_pitch.0 - ay) / grid.pitch.0,
                        });
                    }
                    *cell = k as u32;
                }
            }
        }
        let colors = (0..k_total).map(|k| geometry.color_of(k)).collect();
        Ok(Self { owners, colors })
    }

    pub fn num_subpixels(&self) -> usize {
        self.colors.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.owners.dim()
    }

    /// Sub-pixel owning sample `(r, c)`, if any.
    pub fn owner(&self, r: usize, c: usize) -> Option<usize> {
        match self.owners[[r, c]] {
            DEADSPACE => None,
            k => Some(k as usize),
        }
    }

    pub fn color(&self, k: usize) -> ColorFilter {
        self.colors[k]
    }

    /// Amplitude seen through `filter`; `None` ignores the color filters.
    pub fn amplitude(&self, weights: &MaskWeights, filter: Option<ColorFilter>) -> Array2<f64> {
        let w = weights.as_slice();
        self.owners.mapv(|k| match k {
            DEADSPACE => 0.0,
            k if filter.is_none_or(|f| self.colors[k as usize] == f) => w[k as usize],
            _ => 0.0,
        })
    }

    /// Adds `Σ_samples grad[s]` into `out[k]` for every sample of sub-pixel `k`
    /// visible through `filter`. Adjoint of [`Self::amplitude`].
    pub fn accumulate_grad(&self, grad: &Array2<f64>, filter: Option<ColorFilter>, out: &mut [f64]) {
        for (&k, &g) in self.owners.iter().zip(grad.iter()) {
            if k != DEADSPACE && filter.is_none_or(|f| self.colors[k as usize] == f) {
                out[k as usize] += g;
            }
        }
    }
}

fn footprint_start(center_index: f64, n: i64) -> i64 {
    (center_index - (n as f64 - 1.0) / 2.0 + 0.5).floor() as i64
}

/// Per-channel (R, G, B) amplitude grids of the mask on `grid`.
pub fn rasterize_mask(geometry: &MaskGeometry, weights: &MaskWeights, grid: &SimGrid) -> Result<Vec<Array2<f64>>> {
    if weights.len() != geometry.num_subpixels() {
        return Err(Error::ShapeMismatch {
            expected: vec![geometry.num_subpixels()],
            actual: vec![weights.len()],
        });
    }
    let layout = MaskLayout::new(geometry, grid)?;
    Ok(ColorFilter::ALL
        .iter()
        .map(|&f| layout.amplitude(weights, Some(f)))
        .collect())
}
