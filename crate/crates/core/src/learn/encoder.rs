//! Differentiable optical encoder: mask weights → PSF → sensor embeddings,
//! with a recorded tape for reverse-mode gradients down to the weights.
//!
//! Forward, per batch:
//! 1. per channel `c`: amplitude `a_c = A_c(w)`, sensor field `U_c = P(s_c ⊙ a_c)`
//!    with `s_c` the incident spherical wave and `P` free-space propagation;
//! 2. grayscale PSF `p = mean_c |U_c|²`;
//! 3. per image: `v = Down(crop(x ∗ p))`, plus shot noise held constant.
//!
//! Backward runs the adjoints in reverse: bilinear resize, convolution with
//! respect to the kernel (accumulated in the frequency domain over the
//! batch), `∂|U|²/∂U = 2U` under the `∂/∂Re + i∂/∂Im` convention, the
//! propagator adjoint, `Re(conj(s)·G)` for the real amplitude, and the
//! scatter-add from grid samples to sub-pixels.

use ndarray::{Array2, Array3, Axis, Zip};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::optics::{MaskGeometry, MaskWeights, OpticalSetup, PsfSimulator};
use crate::rng::Rng;
use crate::simcam::{downsampled_dims, prep_scene, shot_noise, Convolver, Resampler, SceneConfig};

#[derive(Debug, Clone)]
pub struct LearnedEncoder {
    psf: PsfSimulator,
    scene: SceneConfig,
    down: Resampler,
}

/// Forward intermediates of one batch.
#[derive(Debug, Clone)]
pub struct GradTape {
    pub weights: MaskWeights,
    pub amplitudes: Vec<Array2<f64>>,
    pub fields: Vec<Array2<Complex64>>,
    pub psf: Array2<f64>,
    convolver: Option<Convolver>,
    pub scenes: Vec<Array2<f64>>,
    scene_spectra: Vec<Array2<Complex64>>,
    pub convolved: Vec<Array2<f64>>,
    pub clean: Vec<Array2<f64>>,
    /// Additive noise actually applied, `embedding − clean`.
    pub noise: Vec<Array2<f64>>,
    pub embeddings: Vec<Array2<f64>>,
}

impl GradTape {
    pub fn batch_size(&self) -> usize {
        self.embeddings.len()
    }
}

impl LearnedEncoder {
    pub fn new(geometry: &MaskGeometry, setup: &OpticalSetup, scene: &SceneConfig) -> Result<Self> {
        let psf = PsfSimulator::new(geometry, setup)?;
        let dims = setup.grid.shape();
        scene.validate(setup.grid.plane_size().0)?;
        let out = downsampled_dims(dims, scene.downsample)?;
        Ok(Self {
            psf,
            scene: scene.clone(),
            down: Resampler::new(dims, out),
        })
    }

    pub fn num_weights(&self) -> usize {
        self.psf.num_weights()
    }

    pub fn simulator(&self) -> &PsfSimulator {
        &self.psf
    }

    pub fn scene_config(&self) -> &SceneConfig {
        &self.scene
    }

    /// Embedding `(rows, cols)`.
    pub fn output_dims(&self) -> (usize, usize) {
        self.down.output_dims()
    }

    /// Places a grayscale image in the PSF frame.
    pub fn prep(&self, image: &Array3<f64>) -> Result<Array2<f64>> {
        let grid = &self.psf.setup().grid;
        let scene = prep_scene(image, &self.scene, grid.pitch, grid.shape(), 1)?;
        Ok(scene.index_axis_move(Axis(0), 0))
    }

    /// Per-channel fields and the grayscale PSF for `weights`.
    fn psf_forward(&self, weights: &MaskWeights) -> Result<(Vec<Array2<f64>>, Vec<Array2<Complex64>>, Array2<f64>)> {
        if weights.len() != self.num_weights() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.num_weights()],
                actual: vec![weights.len()],
            });
        }
        let layout = self.psf.layout();
        let mut amplitudes = Vec::new();
        let mut fields = Vec::new();
        let mut psf = Array2::zeros(self.psf.setup().grid.shape());
        for optics in &self.psf.channels {
            let amp = layout.amplitude(weights, optics.filter);
            let field = optics.sensor_field(&amp);
            Zip::from(&mut psf).and(&field).for_each(|p, u| *p += u.norm_sqr());
            amplitudes.push(amp);
            fields.push(field);
        }
        psf /= self.psf.channels.len() as f64;
        Ok((amplitudes, fields, psf))
    }

    /// Grayscale PSF for `weights`.
    pub fn psf(&self, weights: &MaskWeights) -> Result<Array2<f64>> {
        Ok(self.psf_forward(weights)?.2)
    }

    /// Runs the forward pass on prepared scenes. With `noise = (rng, first)`,
    /// item `i` draws shot noise from `rng.derive(first + i)`.
    pub fn forward(&self, weights: &MaskWeights, scenes: Vec<Array2<f64>>, noise: Option<(&Rng, u64)>) -> Result<GradTape> {
        let (amplitudes, fields, psf) = self.psf_forward(weights)?;
        let mut tape = GradTape {
            weights: weights.clone(),
            amplitudes,
            fields,
            psf,
            convolver: None,
            scenes,
            scene_spectra: Vec::new(),
            convolved: Vec::new(),
            clean: Vec::new(),
            noise: Vec::new(),
            embeddings: Vec::new(),
        };
        self.run_measurements(&mut tape, noise)?;
        Ok(tape)
    }

    fn run_measurements(&self, tape: &mut GradTape, noise: Option<(&Rng, u64)>) -> Result<()> {
        let conv = Convolver::new(&tape.psf);
        let identity = self.scene.downsample == 1;
        let items: Vec<Result<_>> = tape
            .scenes
            .par_iter()
            .enumerate()
            .map(|(i, scene)| {
                let spectrum = conv.scene_spectrum(scene);
                let convolved = conv.convolve_spectrum(&spectrum);
                let clean = if identity { convolved.clone() } else { self.down.apply(&convolved) };
                let embedding = match noise {
                    Some((rng, first)) => {
                        let noisy = shot_noise(
                            &clean.clone().insert_axis(Axis(0)),
                            self.scene.target_snr_db,
                            &mut rng.derive(first + i as u64),
                        )?;
                        noisy.index_axis_move(Axis(0), 0)
                    }
                    None => clean.clone(),
                };
                Ok((spectrum, convolved, clean, embedding))
            })
            .collect();
        for item in items {
            let (spectrum, convolved, clean, embedding) = item?;
            tape.noise.push(&embedding - &clean);
            tape.scene_spectra.push(spectrum);
            tape.convolved.push(convolved);
            tape.clean.push(clean);
            tape.embeddings.push(embedding);
        }
        tape.convolver = Some(conv);
        Ok(())
    }

    /// Recomputes the embeddings from the tape's weights, scenes and recorded noise.
    pub fn replay(&self, tape: &GradTape) -> Result<Vec<Array2<f64>>> {
        let psf = self.psf(&tape.weights)?;
        let conv = Convolver::new(&psf);
        tape.scenes
            .iter()
            .zip(&tape.noise)
            .map(|(scene, noise)| {
                let v = conv.convolve(scene);
                let v = if self.scene.downsample == 1 { v } else { self.down.apply(&v) };
                Ok(v + noise)
            })
            .collect()
    }

    /// Gradient of the batch loss with respect to the grayscale PSF, given
    /// `upstream[i] = ∂L/∂embedding_i`.
    pub fn grad_wrt_psf(&self, tape: &GradTape, upstream: &[Array2<f64>]) -> Result<Array2<f64>> {
        let conv = tape.convolver.as_ref().ok_or(Error::IncompleteTape("convolver"))?;
        if tape.scene_spectra.len() != tape.batch_size() {
            return Err(Error::IncompleteTape("scene spectra"));
        }
        if upstream.len() != tape.batch_size() {
            return Err(Error::ShapeMismatch {
                expected: vec![tape.batch_size()],
                actual: vec![upstream.len()],
            });
        }
        let out_dims = self.output_dims();
        if let Some(g) = upstream.iter().find(|g| g.dim() != out_dims) {
            return Err(Error::ShapeMismatch {
                expected: vec![out_dims.0, out_dims.1],
                actual: g.shape().to_vec(),
            });
        }
        let identity = self.scene.downsample == 1;
        let terms: Vec<Array2<Complex64>> = upstream
            .par_iter()
            .zip(tape.scene_spectra.par_iter())
            .map(|(g, spectrum)| {
                let full = if identity { g.clone() } else { self.down.adjoint(g) };
                let mut acc = conv.zero_accumulator();
                conv.accumulate_kernel_grad(spectrum, &full, &mut acc);
                acc
            })
            .collect();
        let mut acc = conv.zero_accumulator();
        for t in &terms {
            acc += t;
        }
        Ok(conv.kernel_grad(acc))
    }

    /// Gradient of a scalar loss with respect to the grayscale PSF, pulled
    /// back to the mask weights.
    pub fn psf_grad_to_weights(&self, tape: &GradTape, grad_psf: &Array2<f64>) -> Result<Vec<f64>> {
        if tape.fields.len() != self.psf.channels.len() {
            return Err(Error::IncompleteTape("sensor fields"));
        }
        let scale = 1.0 / self.psf.channels.len() as f64;
        let mut out = vec![0.0; self.num_weights()];
        for (optics, field) in self.psf.channels.iter().zip(&tape.fields) {
            let mut g = Array2::zeros(field.dim());
            Zip::from(&mut g)
                .and(field)
                .and(grad_psf)
                .for_each(|g, &u, &gp| *g = u * (2.0 * scale * gp));
            optics.propagator.apply_adjoint(&mut g);
            let grad_amp = Zip::from(&g)
                .and(&optics.incident)
                .map_collect(|&g, &s| (s.conj() * g).re);
            self.psf.layout().accumulate_grad(&grad_amp, optics.filter, &mut out);
        }
        Ok(out)
    }

    /// `∂L/∂w` given `∂L/∂embedding_i` for each item on the tape.
    pub fn grad_wrt_mask(&self, tape: &GradTape, upstream: &[Array2<f64>]) -> Result<Vec<f64>> {
        let grad_psf = self.grad_wrt_psf(tape, upstream)?;
        self.psf_grad_to_weights(tape, &grad_psf)
    }
}
