//! Wave optics: fields, propagation, programmable masks and PSF synthesis.

mod field;
mod mask;
mod mls;
mod psf;

pub use field::{
    band_limit, free_space_transfer, fresnel_number, propagate, spherical_wavefront, ComplexField,
    Propagator, SimGrid, SENSOR_PIXEL_PITCH, SENSOR_SHAPE,
};
pub use mask::{
    crop_aperture, rasterize_mask, ColorAxis, ColorFilter, MaskGeometry, MaskLayout, MaskWeights,
};
pub use mls::{coded_aperture_amplitude, generate_mls_coded_aperture, max_len_seq};
pub use psf::{
    rgb_channels, simulate_psf, simulate_psf_from_amplitude, IntensityPsf, OpticalSetup,
    PsfChannel, PsfMetadata, PsfSimulator,
};
