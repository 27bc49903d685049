//! Complex fields and bandlimited angular-spectrum propagation.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft2;

/// Sampling of a simulation plane: `rows×cols` samples at `pitch = (py, px)` meters.
///
/// Sample `(i, j)` sits at `((i - rows/2)·py, (j - cols/2)·px)` with integer
/// division, so the optical axis always falls exactly on a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimGrid {
    pub rows: usize,
    pub cols: usize,
    pub pitch: (f64, f64),
}

/// Pixel pitch of the IMX477R sensor.
pub const SENSOR_PIXEL_PITCH: f64 = 1.55e-6;
/// Full IMX477R resolution.
pub const SENSOR_SHAPE: (usize, usize) = (3040, 4056);

impl SimGrid {
    pub fn new(rows: usize, cols: usize, pitch_y: f64, pitch_x: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("simulation grid must be non-empty".into()));
        }
        if !(pitch_y > 0.0 && pitch_x > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "pitch must be positive, got ({pitch_y}, {pitch_x})"
            )));
        }
        Ok(Self {
            rows,
            cols,
            pitch: (pitch_y, pitch_x),
        })
    }

    /// Grid of `rows×cols` samples spanning a plane of `size = (height, width)` meters.
    pub fn covering(rows: usize, cols: usize, size: (f64, f64)) -> Result<Self> {
        Self::new(rows, cols, size.0 / rows as f64, size.1 / cols as f64)
    }

    /// Sensor downsampled by 8: 380×507 samples at 12.4 µm.
    pub fn sensor_downsampled_8() -> Self {
        Self {
            rows: 380,
            cols: 507,
            pitch: (12.4e-6, 12.4e-6),
        }
    }

    /// Desk-scale 96×128 grid covering the same plane as [`Self::sensor_downsampled_8`].
    pub fn desk() -> Self {
        let full = Self::sensor_downsampled_8();
        Self::covering(96, 128, full.plane_size()).expect("valid preset")
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Physical extent `(height, width)` in meters.
    pub fn plane_size(&self) -> (f64, f64) {
        (self.rows as f64 * self.pitch.0, self.cols as f64 * self.pitch.1)
    }

    pub fn y(&self, row: usize) -> f64 {
        (row as f64 - (self.rows / 2) as f64) * self.pitch.0
    }

    pub fn x(&self, col: usize) -> f64 {
        (col as f64 - (self.cols / 2) as f64) * self.pitch.1
    }

    /// FFT-ordered spatial frequency of row index `row` (cycles per meter).
    pub fn freq_y(&self, row: usize) -> f64 {
        fft_freq(row, self.rows) / (self.rows as f64 * self.pitch.0)
    }

    pub fn freq_x(&self, col: usize) -> f64 {
        fft_freq(col, self.cols) / (self.cols as f64 * self.pitch.1)
    }
}

fn fft_freq(k: usize, n: usize) -> f64 {
    if k < n.div_ceil(2) {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

#[derive(Debug, Clone)]
pub struct ComplexField {
    pub values: Array2<Complex64>,
    pub pitch: (f64, f64),
    pub wavelength: f64,
}

impl ComplexField {
    pub fn new(values: Array2<Complex64>, pitch: (f64, f64), wavelength: f64) -> Result<Self> {
        if !(pitch.0 > 0.0 && pitch.1 > 0.0) {
            return Err(Error::InvalidArgument("field pitch must be positive".into()));
        }
        check_positive("wavelength", wavelength)?;
        Ok(Self {
            values,
            pitch,
            wavelength,
        })
    }

    pub fn grid(&self) -> SimGrid {
        let (rows, cols) = self.values.dim();
        SimGrid {
            rows,
            cols,
            pitch: self.pitch,
        }
    }

    pub fn intensity(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm_sqr())
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }
}

pub(crate) fn check_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {value}")))
    }
}

/// `N_F = a² / (d·λ)`.
pub fn fresnel_number(aperture: f64, distance: f64, wavelength: f64) -> Result<f64> {
    check_positive("aperture", aperture)?;
    check_positive("distance", distance)?;
    check_positive("wavelength", wavelength)?;
    Ok(aperture * aperture / (distance * wavelength))
}

/// Field of a point source at distance `d1`, sampled on `grid`:
/// `exp(j·2π/λ·sqrt(‖x‖² + d1²))`.
pub fn spherical_wavefront(grid: &SimGrid, d1: f64, wavelength: f64) -> Result<ComplexField> {
    check_positive("d1", d1)?;
    check_positive("wavelength", wavelength)?;
    let k = 2.0 * PI / wavelength;
    let values = Array2::from_shape_fn(grid.shape(), |(r, c)| {
        let (y, x) = (grid.y(r), grid.x(c));
        Complex64::from_polar(1.0, k * (y * y + x * x + d1 * d1).sqrt())
    });
    ComplexField::new(values, grid.pitch, wavelength)
}

/// Per-axis bandlimit `sqrt((d2/S)² + 1) / λ` for a plane of extent `S`.
pub fn band_limit(extent: f64, d2: f64, wavelength: f64) -> f64 {
    ((d2 / extent).powi(2) + 1.0).sqrt() / wavelength
}

/// Bandlimited angular-spectrum transfer function in FFT order.
///
/// Inside the rect window `|u_y| ≤ u_limit_y, |u_x| ≤ u_limit_x` and for
/// propagating frequencies (`‖λu‖ ≤ 1`) the response is the unit phase
/// `exp(j·2π/λ·d2·sqrt(1 − ‖λu‖²))`; everywhere else it is zero.
pub fn free_space_transfer(grid: &SimGrid, d2: f64, wavelength: f64) -> Result<Array2<Complex64>> {
    check_positive("d2", d2)?;
    check_positive("wavelength", wavelength)?;
    let (height, width) = grid.plane_size();
    let limit_y = band_limit(height, d2, wavelength);
    let limit_x = band_limit(width, d2, wavelength);
    let k = 2.0 * PI / wavelength;
    Ok(Array2::from_shape_fn(grid.shape(), |(r, c)| {
        let (uy, ux) = (grid.freq_y(r), grid.freq_x(c));
        let radial = (wavelength * uy).powi(2) + (wavelength * ux).powi(2);
        if uy.abs() <= limit_y && ux.abs() <= limit_x && radial <= 1.0 {
            Complex64::from_polar(1.0, k * d2 * (1.0 - radial).sqrt())
        } else {
            Complex64::default()
        }
    }))
}

/// Free-space propagator for a fixed grid, distance and wavelength.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub(crate) fft: Fft2,
    pub(crate) transfer: Array2<Complex64>,
}

impl Propagator {
    pub fn new(grid: &SimGrid, d2: f64, wavelength: f64) -> Result<Self> {
        Ok(Self {
            fft: Fft2::new(grid.rows, grid.cols),
            transfer: free_space_transfer(grid, d2, wavelength)?,
        })
    }

    pub fn transfer(&self) -> &Array2<Complex64> {
        &self.transfer
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    /// Propagates `values` in place. Returns the spectrum after filtering.
    pub fn apply(&self, values: &mut Array2<Complex64>) {
        self.fft.forward(values);
        *values *= &self.transfer;
        self.fft.inverse(values);
    }

    /// Adjoint of [`Self::apply`]: the same chain with the conjugate filter.
    pub fn apply_adjoint(&self, values: &mut Array2<Complex64>) {
        self.fft.forward(values);
        values.zip_mut_with(&self.transfer, |v, h| *v *= h.conj());
        self.fft.inverse(values);
    }
}

/// `IFFT(FFT(field) · H)`; output pitch equals input pitch.
pub fn propagate(field: &ComplexField, d2: f64) -> Result<ComplexField> {
    let propagator = Propagator::new(&field.grid(), d2, field.wavelength)?;
    let mut values = field.values.clone();
    propagator.apply(&mut values);
    ComplexField::new(values, field.pitch, field.wavelength)
}
