//! Linear 2-D convolution against a fixed kernel via zero-padded FFTs.
//!
//! The full linear convolution of two `H×W` planes is `(2H−1)×(2W−1)`; the
//! output keeps the `H×W` window starting at `(H/2, W/2)`, so a kernel with a
//! unit impulse at its center sample reproduces the scene.

use ndarray::{s, Array2};
use num_complex::Complex64;

use crate::fft::{next_fast_len, Fft2};

#[derive(Debug, Clone)]
pub struct Convolver {
    dims: (usize, usize),
    fft: Fft2,
    kernel_spectrum: Array2<Complex64>,
}

impl Convolver {
    pub fn new(kernel: &Array2<f64>) -> Self {
        let dims = kernel.dim();
        let padded = (next_fast_len(2 * dims.0 - 1), next_fast_len(2 * dims.1 - 1));
        let fft = Fft2::new(padded.0, padded.1);
        let kernel_spectrum = spectrum_of(&fft, kernel, (0, 0));
        Self {
            dims,
            fft,
            kernel_spectrum,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    fn crop_offset(&self) -> (usize, usize) {
        (self.dims.0 / 2, self.dims.1 / 2)
    }

    /// Zero-padded spectrum of a scene plane.
    pub fn scene_spectrum(&self, scene: &Array2<f64>) -> Array2<Complex64> {
        assert_eq!(scene.dim(), self.dims, "scene and kernel dims differ");
        spectrum_of(&self.fft, scene, (0, 0))
    }

    /// `scene ∗ kernel`, center-cropped, with negative round-off clamped to zero.
    pub fn convolve(&self, scene: &Array2<f64>) -> Array2<f64> {
        self.convolve_spectrum(&self.scene_spectrum(scene))
    }

    pub fn convolve_spectrum(&self, scene_spectrum: &Array2<Complex64>) -> Array2<f64> {
        self.linear_from_spectrum(scene_spectrum).mapv(|v| v.max(0.0))
    }

    /// The convolution without clamping, for signed inputs.
    pub fn apply_linear(&self, x: &Array2<f64>) -> Array2<f64> {
        self.linear_from_spectrum(&self.scene_spectrum(x))
    }

    fn linear_from_spectrum(&self, scene_spectrum: &Array2<Complex64>) -> Array2<f64> {
        let mut prod = scene_spectrum * &self.kernel_spectrum;
        self.fft.inverse(&mut prod);
        let (r0, c0) = self.crop_offset();
        let (h, w) = self.dims;
        prod.slice(s![r0..r0 + h, c0..c0 + w]).mapv(|v| v.re)
    }

    /// Spectrum of an output-plane gradient placed at its full-convolution offset.
    pub fn gradient_spectrum(&self, grad: &Array2<f64>) -> Array2<Complex64> {
        assert_eq!(grad.dim(), self.dims, "gradient dims differ");
        spectrum_of(&self.fft, grad, self.crop_offset())
    }

    /// Adjoint with respect to the scene: `Aᵀg` where `A x = crop(x ∗ kernel)`.
    pub fn adjoint(&self, grad: &Array2<f64>) -> Array2<f64> {
        let mut prod = self.gradient_spectrum(grad);
        prod.zip_mut_with(&self.kernel_spectrum, |g, k| *g *= k.conj());
        self.fft.inverse(&mut prod);
        let (h, w) = self.dims;
        prod.slice(s![..h, ..w]).mapv(|v| v.re)
    }

    /// Accumulates `FFT(g)·conj(FFT(scene))` into `acc`; after summing over a
    /// batch, [`Self::kernel_grad`] turns it into the gradient with respect to
    /// the kernel.
    pub fn accumulate_kernel_grad(
        &self,
        scene_spectrum: &Array2<Complex64>,
        grad: &Array2<f64>,
        acc: &mut Array2<Complex64>,
    ) {
        let g = self.gradient_spectrum(grad);
        ndarray::Zip::from(acc)
            .and(&g)
            .and(scene_spectrum)
            .for_each(|a, &g, &s| *a += g * s.conj());
    }

    pub fn zero_accumulator(&self) -> Array2<Complex64> {
        Array2::zeros(self.fft.shape())
    }

    pub fn kernel_grad(&self, mut acc: Array2<Complex64>) -> Array2<f64> {
        self.fft.inverse(&mut acc);
        let (h, w) = self.dims;
        acc.slice(s![..h, ..w]).mapv(|v| v.re)
    }
}

fn spectrum_of(fft: &Fft2, plane: &Array2<f64>, offset: (usize, usize)) -> Array2<Complex64> {
    let (h, w) = plane.dim();
    let mut buf = Array2::<Complex64>::zeros(fft.shape());
    buf.slice_mut(s![offset.0..offset.0 + h, offset.1..offset.1 + w])
        .zip_mut_with(plane, |b, &v| *b = Complex64::new(v, 0.0));
    fft.forward(&mut buf);
    buf
}
