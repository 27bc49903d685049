//! Adversaries against optical embeddings: convex recovery with a known or
//! decoy PSF, plaintext-trained decoders, and image quality scoring.

mod decoder;
mod metrics;
mod pgd;
mod report;

pub use decoder::*;
pub use metrics::{mse, psnr, ssim, ssim_with_range, SSIM_K1, SSIM_K2, SSIM_WINDOW};
pub use pgd::{
    decoy_weights, pgd_reconstruct, pgd_with_observer, reconstruct_with_weights, wrong_psf_attack, ForwardOp,
    ReconProblem, Reconstruction, DEFAULT_ITERATIONS, POWER_ITERATIONS, STEP_FRACTION,
};
pub use report::*;
