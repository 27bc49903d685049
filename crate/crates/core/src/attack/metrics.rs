//! Image quality metrics.

use ndarray::Array2;

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_dims(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("metrics need non-empty images".into()));
    }
    Ok(())
}

pub fn mse(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    check_dims(a, b)?;
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `10·log10(peak²/MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(a: &Array2<f64>, b: &Array2<f64>, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Summed-area table with a zero first row and column.
fn integral(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let mut out = Array2::zeros((h + 1, w + 1));
    for r in 0..h {
        let mut row_sum = 0.0;
        for c in 0..w {
            row_sum += img[[r, c]];
            out[[r + 1, c + 1]] = out[[r, c + 1]] + row_sum;
        }
    }
    out
}

fn window_sum(table: &Array2<f64>, r: usize, c: usize, n: usize) -> f64 {
    table[[r + n, c + n]] - table[[r, c + n]] - table[[r + n, c]] + table[[r, c]]
}

/// Mean structural similarity over every 8×8 window (stride 1), with
/// uniform weights, sample covariances, `K1 = 0.01`, `K2 = 0.03` and
/// dynamic range `range`.
pub fn ssim_with_range(a: &Array2<f64>, b: &Array2<f64>, range: f64) -> Result<f64> {
    check_dims(a, b)?;
    let n = SSIM_WINDOW;
    let (h, w) = a.dim();
    if h < n || w < n {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs images of at least {n}×{n}, got {h}×{w}"
        )));
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let sa = integral(a);
    let sb = integral(b);
    let saa = integral(&(a * a));
    let sbb = integral(&(b * b));
    let sab = integral(&(a * b));
    let np = (n * n) as f64;
    let cov_norm = np / (np - 1.0);
    let mut total = 0.0;
    for r in 0..=h - n {
        for c in 0..=w - n {
            let ma = window_sum(&sa, r, c, n) / np;
            let mb = window_sum(&sb, r, c, n) / np;
            let va = cov_norm * (window_sum(&saa, r, c, n) / np - ma * ma);
            let vb = cov_norm * (window_sum(&sbb, r, c, n) / np - mb * mb);
            let vab = cov_norm * (window_sum(&sab, r, c, n) / np - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * vab + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / ((h - n + 1) * (w - n + 1)) as f64)
}

/// SSIM with dynamic range 1.
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    ssim_with_range(a, b, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Direct evaluation of the same SSIM definition, window by window.
    fn ssim_direct(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let n = SSIM_WINDOW;
        let (h, w) = a.dim();
        let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
        let mut vals = Vec::new();
        for r in 0..=h - n {
            for c in 0..=w - n {
                let xs: Vec<f64> = (0..n * n).map(|k| a[[r + k / n, c + k % n]]).collect();
                let ys: Vec<f64> = (0..n * n).map(|k| b[[r + k / n, c + k % n]]).collect();
                let m = (n * n) as f64;
                let mx = xs.iter().sum::<f64>() / m;
                let my = ys.iter().sum::<f64>() / m;
                let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / (m - 1.0);
                let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / (m - 1.0);
                let cxy = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (m - 1.0);
                vals.push(((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)));
            }
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn identical_images() {
        let img = Array2::from_shape_fn((12, 10), |(r, c)| (r * c) as f64 / 120.0);
        assert_eq!(psnr(&img, &img, 1.0).unwrap(), f64::INFINITY);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_closed_form() {
        let a = Array2::zeros((4, 4));
        let b = Array2::from_elem((4, 4), 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn ramp_versus_inverted_ramp() {
        let ramp = Array2::from_shape_fn((16, 20), |(r, c)| (r + c) as f64 / 34.0);
        let inverted = ramp.mapv(|v| 1.0 - v);
        let fast = ssim(&ramp, &inverted).unwrap();
        let direct = ssim_direct(&ramp, &inverted);
        assert!((fast - direct).abs() < 1e-10, "{fast} vs {direct}");
        assert!(fast < 0.0);
    }

    #[test]
    fn metrics_are_symmetric_and_match_direct() {
        let mut rng = Rng::new(0, 0);
        let a = Array2::from_shape_fn((14, 17), |_| rng.next_f64());
        let b = Array2::from_shape_fn((14, 17), |_| rng.next_f64());
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim_direct(&a, &b)).abs() < 1e-10);
    }

    #[test]
    fn errors() {
        let a = Array2::zeros((4, 4));
        let b = Array2::zeros((4, 5));
        assert!(psnr(&a, &b, 1.0).is_err());
        assert!(ssim(&a, &a).is_err());
    }
}
