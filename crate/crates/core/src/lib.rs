//! Digital twin of a lensless camera with a programmable amplitude mask.
//!
//! The crate covers the full numerical path: wave-optics PSF synthesis for
//! an LCD-style mask ([`optics`]), sensor measurement simulation
//! ([`simcam`]), end-to-end learning of mask weights together with a
//! classifier ([`learn`]), and reconstruction attacks with image-quality
//! scoring ([`attack`]). Everything here is pure computation over in-memory
//! buffers; files, images and the command line live in the `maskcam` crate.

pub mod attack;
pub mod codec;
pub mod dataset;
pub mod error;
pub mod fft;
pub mod learn;
pub mod optics;
pub mod rng;
pub mod simcam;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Dtype, Tensor};
