//! Non-negative least-squares recovery by projected gradient descent.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::optics::{MaskWeights, PsfSimulator};
use crate::rng::Rng;
use crate::simcam::{downsampled_dims, Convolver, Resampler};

/// Power-method iterations used to estimate the Lipschitz constant.
pub const POWER_ITERATIONS: usize = 30;
/// Default PGD iteration budget.
pub const DEFAULT_ITERATIONS: usize = 500;
/// Step size as a fraction of `1/L`.
pub const STEP_FRACTION: f64 = 0.9;

/// `A = Down ∘ conv_H`: linear convolution with the PSF, cropped to the PSF
/// frame, followed by the sensor downsampling.
#[derive(Debug, Clone)]
pub struct ForwardOp {
    conv: Convolver,
    down: Option<Resampler>,
}

impl ForwardOp {
    pub fn new(psf: &Array2<f64>, downsample: usize) -> Result<Self> {
        if psf.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("PSF".into()));
        }
        let dims = psf.dim();
        let out = downsampled_dims(dims, downsample)?;
        Ok(Self {
            conv: Convolver::new(psf),
            down: (downsample != 1).then(|| Resampler::new(dims, out)),
        })
    }

    pub fn input_dims(&self) -> (usize, usize) {
        self.conv.dims()
    }

    pub fn output_dims(&self) -> (usize, usize) {
        self.down.as_ref().map_or(self.conv.dims(), Resampler::output_dims)
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let v = self.conv.apply_linear(x);
        match &self.down {
            Some(d) => d.apply(&v),
            None => v,
        }
    }

    pub fn adjoint(&self, y: &Array2<f64>) -> Array2<f64> {
        match &self.down {
            Some(d) => self.conv.adjoint(&d.adjoint(y)),
            None => self.conv.adjoint(y),
        }
    }

    /// Largest eigenvalue of `AᵀA` by power iteration from the all-ones vector.
    pub fn lipschitz(&self, iterations: usize) -> f64 {
        let mut v = Array2::from_elem(self.input_dims(), 1.0);
        let mut estimate = 0.0;
        for _ in 0..iterations {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            v.mapv_inplace(|x| x / norm);
            let w = self.adjoint(&self.apply(&v));
            estimate = w.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>();
            v = w;
        }
        estimate
    }
}

/// Measurement, PSF and solver settings for one recovery.
#[derive(Debug, Clone)]
pub struct ReconProblem {
    pub measurement: Array2<f64>,
    pub psf: Array2<f64>,
    pub downsample: usize,
    pub iterations: usize,
    pub step_fraction: f64,
}

impl ReconProblem {
    pub fn new(measurement: Array2<f64>, psf: Array2<f64>, downsample: usize) -> Result<Self> {
        let problem = Self {
            measurement,
            psf,
            downsample,
            iterations: DEFAULT_ITERATIONS,
            step_fraction: STEP_FRACTION,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let expected = downsampled_dims(self.psf.dim(), self.downsample)?;
        if self.measurement.dim() != expected {
            return Err(Error::ShapeMismatch {
                expected: vec![expected.0, expected.1],
                actual: self.measurement.shape().to_vec(),
            });
        }
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "step fraction must lie in (0, 1], got {}",
                self.step_fraction
            )));
        }
        if self.measurement.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Final iterate at PSF resolution.
    pub image: Array2<f64>,
    /// `½‖Ax_t − y‖²` for `t = 0..=iterations`.
    pub objective: Vec<f64>,
    pub lipschitz: f64,
    pub step: f64,
}

/// Iterates `x ← max(0, x − η·Aᵀ(Ax − y))` from `x₀ = 0` with `η = 0.9/L`.
pub fn pgd_reconstruct(problem: &ReconProblem) -> Result<Reconstruction> {
    pgd_with_observer(problem, |_| {})
}

/// As [`pgd_reconstruct`], calling `observe` on every iterate after `x₀`.
pub fn pgd_with_observer(problem: &ReconProblem, mut observe: impl FnMut(&Array2<f64>)) -> Result<Reconstruction> {
    problem.validate()?;
    let op = ForwardOp::new(&problem.psf, problem.downsample)?;
    let lipschitz = op.lipschitz(POWER_ITERATIONS);
    if !(lipschitz.is_finite() && lipschitz > 0.0) {
        return Err(Error::NonFinite(format!("Lipschitz estimate {lipschitz}")));
    }
    let step = problem.step_fraction / lipschitz;
    let y = &problem.measurement;
    let mut x = Array2::zeros(op.input_dims());
    let mut objective = Vec::with_capacity(problem.iterations + 1);
    let mut residual = op.apply(&x) - y;
    for t in 0..=problem.iterations {
        let f = 0.5 * residual.iter().map(|r| r * r).sum::<f64>();
        if !f.is_finite() {
            return Err(Error::NonFinite(format!("PGD objective at iteration {t}")));
        }
        objective.push(f);
        if t == problem.iterations {
            break;
        }
        let grad = op.adjoint(&residual);
        Zip::from(&mut x).and(&grad).for_each(|xi, &g| *xi = (*xi - step * g).max(0.0));
        observe(&x);
        residual = op.apply(&x) - y;
    }
    Ok(Reconstruction {
        image: x,
        objective,
        lipschitz,
        step,
    })
}

/// Draws decoy mask weights uniformly in `[0, 1]`.
pub fn decoy_weights(simulator: &PsfSimulator, rng: &mut Rng) -> MaskWeights {
    MaskWeights::uniform(rng, simulator.num_weights())
}

/// Recovers `measurement` using the grayscale PSF that `weights` would produce.
pub fn reconstruct_with_weights(
    measurement: &Array2<f64>,
    simulator: &PsfSimulator,
    weights: &MaskWeights,
    downsample: usize,
    iterations: usize,
) -> Result<Reconstruction> {
    let psf = simulator.simulate(weights)?.grayscale();
    pgd_reconstruct(&ReconProblem::new(measurement.clone(), psf, downsample)?.with_iterations(iterations))
}

/// Attack by an adversary who knows the optics but not the mask pattern:
/// reconstructs against the PSF of freshly randomized weights.
pub fn wrong_psf_attack(
    measurement: &Array2<f64>,
    simulator: &PsfSimulator,
    downsample: usize,
    iterations: usize,
    rng: &mut Rng,
) -> Result<Reconstruction> {
    let decoy = decoy_weights(simulator, rng);
    reconstruct_with_weights(measurement, simulator, &decoy, downsample, iterations)
}
