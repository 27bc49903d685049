use maskcam_core::attack::{pgd_reconstruct, psnr, ssim, ForwardOp, ReconProblem};
use maskcam_core::learn::Standardizer;
use maskcam_core::optics::{rgb_channels, ColorAxis, MaskGeometry, MaskWeights, OpticalSetup, PsfSimulator, SimGrid};
use maskcam_core::simcam::{downsampled_dims, fft_convolve, shot_noise, Resampler};
use maskcam_core::Rng;
use ndarray::{Array2, Array3};
use proptest::prelude::*;

fn plane(dims: (usize, usize), seed: u64, lo: f64, hi: f64) -> Array2<f64> {
    let mut rng = Rng::new(seed, 0);
    Array2::from_shape_fn(dims, |_| rng.uniform_in(lo, hi))
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a * b).sum()
}

fn small_simulator() -> PsfSimulator {
    let geometry = MaskGeometry {
        subpixel_pitch: (36e-6, 36e-6),
        subpixel_size: (27e-6, 27e-6),
        full_grid: (4, 4),
        crop_fraction: 1.0,
        color_axis: ColorAxis::Rows,
    };
    let setup = OpticalSetup {
        d1: 0.4,
        d2: 0.5e-3,
        grid: SimGrid::new(16, 16, 9e-6, 9e-6).unwrap(),
        channels: rgb_channels(),
    };
    PsfSimulator::new(&geometry, &setup).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn convolution_is_linear(rows in 2usize..20, cols in 2usize..20, a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
        let x1 = plane((rows, cols), seed, 0.0, 1.0).insert_axis(ndarray::Axis(0));
        let x2 = plane((rows, cols), seed ^ 1, 0.0, 1.0).insert_axis(ndarray::Axis(0));
        let psf = plane((rows, cols), seed ^ 2, 0.0, 1.0).insert_axis(ndarray::Axis(0));
        // Non-negative combinations keep the clamp inactive.
        let (a, b) = (a.abs(), b.abs());
        let lhs = fft_convolve(&(&x1 * a + &x2 * b), &psf).unwrap();
        let rhs = fft_convolve(&x1, &psf).unwrap() * a + fft_convolve(&x2, &psf).unwrap() * b;
        let scale = rhs.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        let err = lhs.iter().zip(&rhs).fold(0.0f64, |m, (l, r)| m.max((l - r).abs()));
        prop_assert!(err <= 1e-9 * scale);
    }

    #[test]
    fn resampler_adjoint(inr in 1usize..40, inc in 1usize..40, outr in 1usize..40, outc in 1usize..40, seed in any::<u64>()) {
        let r = Resampler::new((inr, inc), (outr, outc));
        let x = plane((inr, inc), seed, -1.0, 1.0);
        let y = plane((outr, outc), seed ^ 7, -1.0, 1.0);
        let lhs = dot(&r.apply(&x), &y);
        let rhs = dot(&x, &r.adjoint(&y));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0));
    }

    #[test]
    fn resampler_preserves_constants_and_range(inr in 1usize..40, inc in 1usize..40, outr in 1usize..40, outc in 1usize..40, seed in any::<u64>()) {
        let r = Resampler::new((inr, inc), (outr, outc));
        let c = Array2::from_elem((inr, inc), 0.625);
        prop_assert!(r.apply(&c).iter().all(|v| (v - 0.625).abs() < 1e-12));
        let x = plane((inr, inc), seed, 0.0, 1.0);
        let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        prop_assert!(r.apply(&x).iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn forward_operator_adjoint(rows in 4usize..24, cols in 4usize..24, d in 1usize..5, seed in any::<u64>()) {
        prop_assume!(downsampled_dims((rows, cols), d).is_ok());
        let psf = plane((rows, cols), seed, 0.0, 1.0);
        let op = ForwardOp::new(&psf, d).unwrap();
        let x = plane((rows, cols), seed ^ 3, -1.0, 1.0);
        let y = plane(op.output_dims(), seed ^ 5, -1.0, 1.0);
        let lhs = dot(&op.apply(&x), &y);
        let rhs = dot(&x, &op.adjoint(&y));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-12));
    }

    #[test]
    fn pgd_descends_and_stays_feasible(rows in 6usize..16, cols in 6usize..16, d in 1usize..3, seed in any::<u64>()) {
        let psf = plane((rows, cols), seed, 0.0, 1.0).mapv(|v| v * v);
        let truth = plane((rows, cols), seed ^ 9, 0.0, 1.0);
        let op = ForwardOp::new(&psf, d).unwrap();
        let y = op.apply(&truth) + plane(op.output_dims(), seed ^ 11, -0.05, 0.05);
        let rec = pgd_reconstruct(&ReconProblem::new(y, psf, d).unwrap().with_iterations(60)).unwrap();
        let f0 = rec.objective[0];
        prop_assert!(rec.objective.windows(2).all(|w| w[1] <= w[0] + 1e-12 * f0));
        prop_assert!(rec.image.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn quality_metrics_are_symmetric_and_bounded(rows in 8usize..24, cols in 8usize..24, seed in any::<u64>()) {
        let a = plane((rows, cols), seed, 0.0, 1.0);
        let b = plane((rows, cols), seed ^ 13, 0.0, 1.0);
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        let s = ssim(&a, &b).unwrap();
        prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
        prop_assert!(psnr(&a, &a, 1.0).unwrap().is_infinite());
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shot_noise_is_nonnegative_and_seeded(rows in 2usize..16, cols in 2usize..16, snr in 10.0f64..60.0, seed in any::<u64>()) {
        let img = Array3::from_shape_fn((1, rows, cols), |(_, r, c)| ((r * 7 + c * 3) % 5) as f64 + 0.5);
        let a = shot_noise(&img, snr, &mut Rng::new(seed, 1)).unwrap();
        let b = shot_noise(&img, snr, &mut Rng::new(seed, 1)).unwrap();
        prop_assert!(a.iter().all(|&v| v >= 0.0));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn projection_lands_in_box_and_is_idempotent(values in proptest::collection::vec(-2.0f64..3.0, 1..64)) {
        let mut w = MaskWeights::unconstrained(values);
        w.project();
        prop_assert!(w.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let once = w.clone();
        w.project();
        prop_assert_eq!(w, once);
    }

    #[test]
    fn standardized_train_split_has_zero_mean_unit_std(n in 3usize..40, f in 1usize..12, seed in any::<u64>()) {
        let x = plane((n, f), seed, -5.0, 9.0);
        let s = Standardizer::fit(&x).unwrap();
        let z = s.apply(&x).unwrap();
        for col in z.columns() {
            let mean = col.sum() / n as f64;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((std - 1.0).abs() < 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn psf_is_quadratic_in_weights(alpha in 0.0f64..1.0, seed in any::<u64>()) {
        let sim = small_simulator();
        let w = MaskWeights::uniform(&mut Rng::new(seed, 0), sim.num_weights());
        let base = sim.simulate(&w).unwrap();
        let scaled = sim.simulate(&w.scaled(alpha)).unwrap();
        let peak = base.values().iter().fold(0.0f64, |m, v| m.max(*v));
        for (s, b) in scaled.values().iter().zip(base.values()) {
            prop_assert!((s - alpha * alpha * b).abs() <= 1e-12 * peak);
        }
    }

    #[test]
    fn psf_is_nonnegative(seed in any::<u64>()) {
        let sim = small_simulator();
        let w = MaskWeights::uniform(&mut Rng::new(seed, 0), sim.num_weights());
        prop_assert!(sim.simulate(&w).unwrap().values().iter().all(|&v| v >= 0.0));
    }
}
