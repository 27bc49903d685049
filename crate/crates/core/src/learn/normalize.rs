//! Per-feature standardization with statistics from the training split.

use ndarray::{Array1, Array2, Axis};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Lower bound on the standard deviation used for scaling.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    /// Fits mean and (population) standard deviation per column of `train`.
    pub fn fit(train: &Array2<f64>) -> Result<Self> {
        if train.nrows() == 0 {
            return Err(Error::NotEnoughData("cannot fit statistics on zero rows".into()));
        }
        let mean = train.mean_axis(Axis(0)).expect("non-empty");
        let var = (train - &mean).mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty");
        Ok(Self {
            mean,
            std: var.mapv(|v| v.sqrt().max(STD_FLOOR)),
        })
    }

    pub fn features(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.features() {
            return Err(Error::ShapeMismatch {
                expected: vec![x.nrows(), self.features()],
                actual: x.shape().to_vec(),
            });
        }
        Ok((x - &self.mean) / &self.std)
    }

    /// Digest of the statistics, used to show they do not depend on test data.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for v in self.mean.iter().chain(self.std.iter()) {
            h.update(v.to_le_bytes());
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
