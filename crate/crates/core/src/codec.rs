//! Raw tensor container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | field                                  |
//! |--------------|----------------------------------------|
//! | 4            | magic `"LTNS"`                         |
//! | 4            | `u32` version, currently 1             |
//! | 1            | `u8` dtype: 1 = f32, 2 = f64           |
//! | 1            | `u8` ndim                              |
//! | 8 × ndim     | `u64` extents                          |
//! | rest         | row-major payload in the stated dtype  |

use crate::error::{Error, Result};
use crate::tensor::{element_count, Dtype, Tensor};

pub const MAGIC: &[u8; 4] = b"LTNS";
pub const VERSION: u32 = 1;

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let dtype = t.dtype();
    let mut out = Vec::with_capacity(10 + 8 * t.ndim() + dtype.size() * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype.code());
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        Dtype::F32 => t
            .values()
            .for_each(|v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => t.values().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let header = bytes.get(..10).ok_or(Error::TruncatedPayload {
        needed: 10,
        available: bytes.len(),
    })?;
    if &header[..4] != MAGIC {
        return Err(Error::BadMagic {
            expected: u32::from_be_bytes(*MAGIC),
            found: u32::from_be_bytes([header[0], header[1], header[2], header[3]]),
        });
    }
    let version = u32::from_le_bytes([header[4], header[5], header[6], header[7]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = Dtype::from_code(header[8])?;
    let ndim = header[9] as usize;

    let dims_end = 10 + 8 * ndim;
    let dims_bytes = bytes.get(10..dims_end).ok_or(Error::TruncatedPayload {
        needed: dims_end,
        available: bytes.len(),
    })?;
    let shape = dims_bytes
        .chunks_exact(8)
        .map(|c| {
            let v = u64::from_le_bytes(c.try_into().expect("chunk of 8"));
            usize::try_from(v).map_err(|_| Error::DimOverflow)
        })
        .collect::<Result<Vec<_>>>()?;

    let count = element_count(&shape)?;
    let payload_len = count.checked_mul(dtype.size()).ok_or(Error::DimOverflow)?;
    let needed = dims_end.checked_add(payload_len).ok_or(Error::DimOverflow)?;
    let payload = bytes.get(dims_end..needed).ok_or(Error::TruncatedPayload {
        needed,
        available: bytes.len(),
    })?;

    match dtype {
        Dtype::F32 => {
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            Tensor::from_f32(&shape, data)
        }
        Dtype::F64 => {
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            Tensor::new(&shape, data)
        }
    }
}
