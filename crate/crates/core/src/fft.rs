//! 2-D FFTs over row-major complex grids.
//!
//! Forward transforms are unnormalized and inverse transforms carry the
//! `1/N` factor, matching the usual `fft2`/`ifft2` convention.

use std::sync::{Arc, Mutex, OnceLock};

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut p = planner().lock().expect("FFT planner poisoned");
        Self {
            rows,
            cols,
            row_fwd: p.plan_fft_forward(cols),
            row_inv: p.plan_fft_inverse(cols),
            col_fwd: p.plan_fft_forward(rows),
            col_inv: p.plan_fft_inverse(rows),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn forward(&self, grid: &mut Array2<Complex64>) {
        self.apply(grid, false);
    }

    pub fn inverse(&self, grid: &mut Array2<Complex64>) {
        self.apply(grid, true);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        grid.mapv_inplace(|v| v * scale);
    }

    fn apply(&self, grid: &mut Array2<Complex64>, inverse: bool) {
        assert_eq!(grid.dim(), (self.rows, self.cols), "grid shape does not match plan");
        let (row_plan, col_plan) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        let data = grid
            .as_slice_mut()
            .expect("FFT grids must be in standard layout");

        let scratch_len = row_plan
            .get_inplace_scratch_len()
            .max(col_plan.get_inplace_scratch_len());
        let mut scratch = vec![Complex64::default(); scratch_len];

        row_plan.process_with_scratch(data, &mut scratch);

        let mut transposed = vec![Complex64::default(); data.len()];
        transpose(data, &mut transposed, self.rows, self.cols);
        col_plan.process_with_scratch(&mut transposed, &mut scratch);
        transpose(&transposed, data, self.cols, self.rows);
    }
}

/// `src` is `rows×cols`; `dst` receives the `cols×rows` transpose.
fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const BLOCK: usize = 16;
    for r0 in (0..rows).step_by(BLOCK) {
        for c0 in (0..cols).step_by(BLOCK) {
            for r in r0..(r0 + BLOCK).min(rows) {
                for c in c0..(c0 + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Smallest integer `≥ n` whose only prime factors are 2, 3 and 5.
pub fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}
