//! Separable bilinear resampling with an explicit adjoint.
//!
//! Output sample `i` sits at input coordinate `(i + 0.5)·in/out − 0.5`. When
//! shrinking, the triangle kernel is stretched by the scale factor so each
//! output pixel averages the whole input area it covers; when enlarging this
//! reduces to ordinary bilinear interpolation. Taps falling outside the
//! input are mirrored about the edge samples and all weights are normalized,
//! so constants are reproduced exactly.

use ndarray::Array2;

#[derive(Debug, Clone, PartialEq)]
pub struct Resample1d {
    in_len: usize,
    out_len: usize,
    /// Per output sample: `(input index, weight)` taps.
    taps: Vec<Vec<(usize, f64)>>,
}

fn mirror(mut j: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    j = j.rem_euclid(period);
    if j >= n as i64 {
        j = period - j;
    }
    j as usize
}

impl Resample1d {
    pub fn bilinear(in_len: usize, out_len: usize) -> Self {
        assert!(in_len > 0 && out_len > 0, "resample lengths must be positive");
        let scale = in_len as f64 / out_len as f64;
        let support = scale.max(1.0);
        let taps = (0..out_len)
            .map(|i| {
                let center = (i as f64 + 0.5) * scale;
                let lo = (center - support - 0.5).floor() as i64;
                let hi = (center + support + 0.5).ceil() as i64;
                let mut row: Vec<(usize, f64)> = Vec::new();
                for j in lo..=hi {
                    let x = (j as f64 + 0.5 - center) / support;
                    let w = 1.0 - x.abs();
                    if w <= 0.0 {
                        continue;
                    }
                    let idx = mirror(j, in_len);
                    match row.iter_mut().find(|(k, _)| *k == idx) {
                        Some(entry) => entry.1 += w,
                        None => row.push((idx, w)),
                    }
                }
                let total: f64 = row.iter().map(|(_, w)| w).sum();
                row.iter_mut().for_each(|(_, w)| *w /= total);
                row.sort_by_key(|(k, _)| *k);
                row
            })
            .collect();
        Self {
            in_len,
            out_len,
            taps,
        }
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }

    pub fn is_identity(&self) -> bool {
        self.in_len == self.out_len
            && self
                .taps
                .iter()
                .enumerate()
                .all(|(i, t)| t.len() == 1 && t[0].0 == i && t[0].1 == 1.0)
    }

    fn apply_strided(&self, input: &[f64], stride: usize, output: &mut [f64], out_stride: usize) {
        for (i, taps) in self.taps.iter().enumerate() {
            output[i * out_stride] = taps.iter().map(|&(j, w)| w * input[j * stride]).sum();
        }
    }

    fn adjoint_strided(&self, input: &[f64], stride: usize, output: &mut [f64], out_stride: usize) {
        for j in 0..self.in_len {
            output[j * out_stride] = 0.0;
        }
        for (i, taps) in self.taps.iter().enumerate() {
            let g = input[i * stride];
            for &(j, w) in taps {
                output[j * out_stride] += w * g;
            }
        }
    }
}

/// Separable 2-D resampler: rows then columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampler {
    rows: Resample1d,
    cols: Resample1d,
}

impl Resampler {
    pub fn new(input: (usize, usize), output: (usize, usize)) -> Self {
        Self {
            rows: Resample1d::bilinear(input.0, output.0),
            cols: Resample1d::bilinear(input.1, output.1),
        }
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.rows.in_len, self.cols.in_len)
    }

    pub fn output_dims(&self) -> (usize, usize) {
        (self.rows.out_len, self.cols.out_len)
    }

    pub fn apply(&self, img: &Array2<f64>) -> Array2<f64> {
        assert_eq!(img.dim(), self.input_dims(), "resampler input shape");
        let (h, w) = self.input_dims();
        let (oh, ow) = self.output_dims();
        let src = img.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        // Columns first: h×w → h×ow.
        let mut mid = vec![0.0; h * ow];
        for r in 0..h {
            self.cols.apply_strided(&src[r * w..], 1, &mut mid[r * ow..], 1);
        }
        let mut out = vec![0.0; oh * ow];
        for c in 0..ow {
            self.rows.apply_strided(&mid[c..], ow, &mut out[c..], ow);
        }
        Array2::from_shape_vec((oh, ow), out).expect("shape")
    }

    pub fn adjoint(&self, grad: &Array2<f64>) -> Array2<f64> {
        assert_eq!(grad.dim(), self.output_dims(), "resampler adjoint shape");
        let (h, w) = self.input_dims();
        let (_oh, ow) = self.output_dims();
        let src = grad.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        let mut mid = vec![0.0; h * ow];
        for c in 0..ow {
            self.rows.adjoint_strided(&src[c..], ow, &mut mid[c..], ow);
        }
        let mut out = vec![0.0; h * w];
        for r in 0..h {
            self.cols.adjoint_strided(&mid[r * ow..], 1, &mut out[r * w..], 1);
        }
        Array2::from_shape_vec((h, w), out).expect("shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn same_size_is_identity() {
        let r = Resample1d::bilinear(7, 7);
        assert!(r.is_identity());
    }

    #[test]
    fn constants_are_reproduced() {
        for (inp, out) in [((96, 128), (24, 32)), ((28, 28), (24, 24)), ((28, 28), (56, 56)), ((96, 128), (3, 4))] {
            let img = Array2::from_elem(inp, 0.37);
            let res = Resampler::new(inp, out).apply(&img);
            assert!(res.iter().all(|v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn pixel_checkerboard_halves() {
        let img = Array2::from_shape_fn((8, 12), |(r, c)| ((r + c) % 2) as f64);
        let res = Resampler::new((8, 12), (4, 6)).apply(&img);
        assert!(res.iter().all(|v| (v - 0.5).abs() < 1e-12), "{res:?}");
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = Rng::new(4, 4);
        for (inp, out) in [((10, 14), (5, 7)), ((9, 9), (13, 4)), ((96, 128), (3, 4))] {
            let r = Resampler::new(inp, out);
            let x = Array2::from_shape_fn(inp, |_| rng.next_f64() - 0.5);
            let y = Array2::from_shape_fn(out, |_| rng.next_f64() - 0.5);
            let lhs = (&r.apply(&x) * &y).sum();
            let rhs = (&x * &r.adjoint(&y)).sum();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn mirror_indexing() {
        assert_eq!(mirror(-1, 5), 1);
        assert_eq!(mirror(5, 5), 3);
        assert_eq!(mirror(-7, 5), 1);
        assert_eq!(mirror(3, 1), 0);
    }
}
