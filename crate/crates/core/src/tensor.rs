//! Dense row-major tensors.
//!
//! Values are held as `f64` regardless of the storage dtype; a tensor tagged
//! [`Dtype::F32`] only ever holds values that are exactly representable in
//! `f32`, so a save/load cycle through the raw format is bit-exact.

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(Error::UnknownDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    data: ArrayD<f64>,
    dtype: Dtype,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::with_dtype(shape, data, Dtype::F64)
    }

    /// Builds an `f32`-tagged tensor; the values are widened losslessly.
    pub fn from_f32(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let wide = data.into_iter().map(f64::from).collect();
        Self::with_dtype(shape, wide, Dtype::F32)
    }

    fn with_dtype(shape: &[usize], data: Vec<f64>, dtype: Dtype) -> Result<Self> {
        let count = element_count(shape)?;
        if count != data.len() {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                actual: vec![data.len()],
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {bad}")));
        }
        let data = ArrayD::from_shape_vec(IxDyn(shape), data)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(Self { data, dtype })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            data: ArrayD::zeros(IxDyn(shape)),
            dtype: Dtype::F64,
        }
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(&[], vec![value])
    }

    /// Wraps an existing array. Fails on non-finite entries.
    pub fn from_array(data: ArrayD<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("array contains NaN or Inf".into()));
        }
        Ok(Self {
            data,
            dtype: Dtype::F64,
        })
    }

    /// Narrows the values to `f32` precision and tags the tensor accordingly.
    pub fn to_f32(&self) -> Self {
        Self {
            data: self.data.mapv(|v| v as f32 as f64),
            dtype: Dtype::F32,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn ndim(&self) -> usize {
        self.data.ndim()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn array(&self) -> &ArrayD<f64> {
        &self.data
    }

    pub fn into_array(self) -> ArrayD<f64> {
        self.data
    }

    /// Row-major element iterator.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().copied()
    }
}

pub(crate) fn element_count(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::DimOverflow)
}
