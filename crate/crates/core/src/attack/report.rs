//! Good versus decoy PSF recovery across embedding resolutions.

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;

use super::metrics::{psnr, ssim};
use super::pgd::{decoy_weights, pgd_reconstruct, ReconProblem};
use crate::error::{Error, Result};
use crate::optics::{IntensityPsf, PsfSimulator};
use crate::rng::Rng;
use crate::simcam::{downsampled_dims, SceneConfig, SensorSimulator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsfKind {
    Good,
    Bad,
}

impl PsfKind {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Good => "good",
            Self::Bad => "bad",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackRow {
    /// Embedding resolution `(rows, cols)`.
    pub resolution: (usize, usize),
    pub psf_kind: PsfKind,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
    pub n_images: usize,
}

/// One recovered scene next to its ground truth.
#[derive(Debug, Clone)]
pub struct AttackCase {
    pub downsample: usize,
    pub truth: Array2<f64>,
    pub good: Array2<f64>,
    pub bad: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct AttackReport {
    pub rows: Vec<AttackRow>,
    pub cases: Vec<AttackCase>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSettings {
    /// Scene geometry and noise; its `downsample` field is overridden per resolution.
    pub scene: SceneConfig,
    pub downsamples: Vec<usize>,
    pub iterations: usize,
    pub seed: u64,
}

/// Grayscale PSF of uniformly random decoy weights drawn from `seed`.
pub fn decoy_psf(simulator: &PsfSimulator, seed: u64) -> Result<Array2<f64>> {
    let weights = decoy_weights(simulator, &mut Rng::for_stage(seed, "decoy"));
    Ok(simulator.simulate(&weights)?.grayscale())
}

/// Downsampling factor that maps `psf_dims` onto `resolution` exactly.
pub fn downsample_for_resolution(psf_dims: (usize, usize), resolution: (usize, usize)) -> Result<usize> {
    let bad = || {
        Error::InvalidArgument(format!(
            "resolution {}x{} is not an integer reduction of {}x{}",
            resolution.0, resolution.1, psf_dims.0, psf_dims.1
        ))
    };
    if resolution.0 == 0 || resolution.1 == 0 || psf_dims.0 % resolution.0 != 0 {
        return Err(bad());
    }
    let d = psf_dims.0 / resolution.0;
    if downsampled_dims(psf_dims, d)? != resolution {
        return Err(bad());
    }
    Ok(d)
}

/// Recovers every image at every resolution with the true PSF and with the
/// adversary's decoy PSF, reporting mean PSNR/SSIM against the prepared scene.
pub fn attack_report(
    images: &[Array2<f64>],
    true_psf: &IntensityPsf,
    decoy_psf: &Array2<f64>,
    settings: &AttackSettings,
) -> Result<AttackReport> {
    if images.is_empty() {
        return Err(Error::NotEnoughData("attack needs at least one image".into()));
    }
    if settings.downsamples.is_empty() {
        return Err(Error::InvalidArgument("no attack resolutions given".into()));
    }
    let good_psf = true_psf.grayscale();
    let dims = true_psf.dims();
    if decoy_psf.dim() != dims {
        return Err(Error::ShapeMismatch {
            expected: vec![dims.0, dims.1],
            actual: decoy_psf.shape().to_vec(),
        });
    }
    let noise = Rng::for_stage(settings.seed, "attack-noise");

    let mut rows = Vec::new();
    let mut cases = Vec::new();
    for &d in &settings.downsamples {
        let resolution = downsampled_dims(dims, d)?;
        let scene = SceneConfig {
            downsample: d,
            ..settings.scene.clone()
        };
        let sensor = SensorSimulator::new(true_psf, &scene, true)?;
        let results = images
            .par_iter()
            .enumerate()
            .map(|(i, img)| -> Result<(AttackCase, [f64; 4])> {
                let img3: Array3<f64> = img.clone().insert_axis(Axis(0));
                let truth = sensor.prep(&img3)?.index_axis_move(Axis(0), 0);
                let y = sensor
                    .simulate(&img3, &mut noise.derive(i as u64))?
                    .values
                    .index_axis_move(Axis(0), 0);
                let solve = |psf: &Array2<f64>| -> Result<Array2<f64>> {
                    let problem = ReconProblem::new(y.clone(), psf.clone(), d)?.with_iterations(settings.iterations);
                    Ok(pgd_reconstruct(&problem)?.image)
                };
                let good = solve(&good_psf)?;
                let bad = solve(decoy_psf)?;
                let scores = [
                    psnr(&good, &truth, 1.0)?,
                    ssim(&good, &truth)?,
                    psnr(&bad, &truth, 1.0)?,
                    ssim(&bad, &truth)?,
                ];
                Ok((AttackCase { downsample: d, truth, good, bad }, scores))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = results.len();
        let mean = |k: usize| results.iter().map(|(_, s)| s[k]).sum::<f64>() / n as f64;
        for (kind, k) in [(PsfKind::Good, 0), (PsfKind::Bad, 2)] {
            rows.push(AttackRow {
                resolution,
                psf_kind: kind,
                psnr_mean: mean(k),
                ssim_mean: mean(k + 1),
                n_images: n,
            });
        }
        cases.extend(results.into_iter().map(|(c, _)| c));
    }
    Ok(AttackReport { rows, cases })
}

/// CSV with header `resolution,psf_kind,psnr_mean,ssim_mean,n_images`.
pub fn attack_rows_csv(rows: &[AttackRow]) -> String {
    let mut out = String::from("resolution,psf_kind,psnr_mean,ssim_mean,n_images\n");
    for r in rows {
        out.push_str(&format!(
            "{}x{},{},{:.6},{:.6},{}\n",
            r.resolution.0,
            r.resolution.1,
            r.psf_kind.tag(),
            r.psnr_mean,
            r.ssim_mean,
            r.n_images
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_to_factor() {
        assert_eq!(downsample_for_resolution((96, 128), (24, 32)).unwrap(), 4);
        assert_eq!(downsample_for_resolution((96, 128), (96, 128)).unwrap(), 1);
        assert!(downsample_for_resolution((96, 128), (24, 30)).is_err());
        assert!(downsample_for_resolution((96, 128), (25, 32)).is_err());
    }

    #[test]
    fn csv_layout() {
        let rows = vec![AttackRow {
            resolution: (24, 32),
            psf_kind: PsfKind::Bad,
            psnr_mean: 11.5,
            ssim_mean: 0.25,
            n_images: 10,
        }];
        assert_eq!(
            attack_rows_csv(&rows),
            "resolution,psf_kind,psnr_mean,ssim_mean,n_images\n24x32,bad,11.500000,0.250000,10\n"
        );
    }
}
