//! Maximum-length-sequence coded apertures.

use ndarray::Array2;

use super::field::SimGrid;
use crate::error::{Error, Result};

/// Feedback taps per register width, as offsets from the output cell.
fn taps(bits: u32) -> Option<&'static [usize]> {
    Some(match bits {
        2 => &[1],
        3 => &[2],
        4 => &[3],
        5 => &[3],
        6 => &[5],
        7 => &[6],
        8 => &[7, 6, 1],
        9 => &[5],
        10 => &[7],
        _ => return None,
    })
}

/// Binary MLS of length `2^bits − 1` from a Fibonacci LFSR seeded with all ones.
///
/// The register is a ring buffer: each step emits the cell at the current
/// index, XORs it with the tapped cells, and writes the feedback back in place.
pub fn max_len_seq(bits: u32) -> Result<Vec<u8>> {
    let taps = taps(bits).ok_or_else(|| {
        Error::InvalidArgument(format!("no tap table for a {bits}-bit register"))
    })?;
    let n = bits as usize;
    let len = (1usize << bits) - 1;
    let mut state = vec![1u8; n];
    let mut idx = 0;
    let mut seq = Vec::with_capacity(len);
    for _ in 0..len {
        let mut feedback = state[idx];
        seq.push(feedback);
        for &t in taps {
            feedback ^= state[(t + idx) % n];
        }
        state[idx] = feedback;
        idx = (idx + 1) % n;
    }
    Ok(seq)
}

/// 126×126 binary mask: the length-63 MLS repeated twice, outer product with itself.
pub fn generate_mls_coded_aperture() -> Array2<u8> {
    let seq = max_len_seq(6).expect("6-bit taps are tabulated");
    let tiled: Vec<u8> = seq.iter().chain(seq.iter()).copied().collect();
    Array2::from_shape_fn((tiled.len(), tiled.len()), |(r, c)| tiled[r] * tiled[c])
}

/// Samples a binary mask onto `grid`, scaled so its height covers
/// `coverage` of the plane height, centered. Each sample takes the value of
/// the mask cell containing its center.
pub fn coded_aperture_amplitude(mask: &Array2<u8>, grid: &SimGrid, coverage: f64) -> Result<Array2<f64>> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::InvalidArgument(format!("coverage {coverage} outside (0, 1]")));
    }
    let (mr, mc) = mask.dim();
    let feature = coverage * grid.plane_size().0 / mr as f64;
    let (half_h, half_w) = (feature * mr as f64 / 2.0, feature * mc as f64 / 2.0);
    if half_w * 2.0 > grid.plane_size().1 {
        return Err(Error::MaskOutOfBounds("coded aperture wider than the plane".into()));
    }
    Ok(Array2::from_shape_fn(grid.shape(), |(r, c)| {
        let (y, x) = (grid.y(r) + half_h, grid.x(c) + half_w);
        if y < 0.0 || x < 0.0 {
            return 0.0;
        }
        let (i, j) = ((y / feature) as usize, (x / feature) as usize);
        if i < mr && j < mc {
            f64::from(mask[[i, j]])
        } else {
            0.0
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_bit_sequence_reference() {
        let seq: String = max_len_seq(6).unwrap().iter().map(|b| b.to_string()).collect();
        assert_eq!(
            seq,
            "111111010101100110111011010010011100010111100101000110000100000"
        );
    }

    #[test]
    fn sequence_is_balanced() {
        for bits in 2..=10 {
            let seq = max_len_seq(bits).unwrap();
            let ones = seq.iter().filter(|&&b| b == 1).count();
            assert_eq!(seq.len(), (1 << bits) - 1);
            assert_eq!(ones, 1 << (bits - 1), "bits={bits}");
        }
    }

    #[test]
    fn sequence_has_two_level_autocorrelation() {
        // Property of a maximal-length sequence; checks the period is maximal.
        let seq = max_len_seq(6).unwrap();
        let pm: Vec<i32> = seq.iter().map(|&b| if b == 1 { 1 } else { -1 }).collect();
        for shift in 1..63 {
            let acc: i32 = (0..63).map(|i| pm[i] * pm[(i + shift) % 63]).sum();
            assert_eq!(acc, -1, "shift {shift}");
        }
    }

    #[test]
    fn coded_aperture_structure() {
        let m = generate_mls_coded_aperture();
        assert_eq!(m.dim(), (126, 126));
        assert!(m.iter().all(|&v| v <= 1));
        for i in 0..63 {
            assert_eq!(m.row(i), m.row(i + 63));
        }
        // Rank one: every nonzero row equals the first nonzero row.
        let reference = m.row(0).to_owned();
        for row in m.rows() {
            assert!(row.iter().all(|&v| v == 0) || row == reference);
        }
    }

    #[test]
    fn coded_aperture_covers_requested_height() {
        let grid = SimGrid::sensor_downsampled_8();
        let amp = coded_aperture_amplitude(&generate_mls_coded_aperture(), &grid, 0.8).unwrap();
        let rows_touched = amp.rows().into_iter().filter(|r| r.iter().any(|&v| v > 0.0)).count();
        // 0.8 · 380 = 304 rows span the mask, of which half-ish are open.
        assert!(rows_touched > 100 && rows_touched <= 304, "{rows_touched}");
    }
}
