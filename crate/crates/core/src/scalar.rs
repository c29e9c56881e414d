//! Generic scalar abstraction over the float type used by the numeric core.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

/// Floating point scalar: f32 or f64.
///
/// Everything numeric in this crate (tensors, rasterization, color math,
/// metrics) is generic over this trait. Production code runs at `f32`
/// (see the aliases at the crate root); gradient checks instantiate the
/// same code at `f64` for tighter finite-difference tolerances.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssignOps
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Shorthand for lossy conversion from f64 (panics only on NaN input,
    /// which we never feed it).
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant convertible to scalar")
    }

    /// Lossy widening to f64 for accumulation and reporting.
    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    /// Raw little-endian byte encoding used by the checkpoint/raster formats.
    fn write_le(self, out: &mut Vec<u8>);
    /// Inverse of [`Scalar::write_le`].
    fn read_le(bytes: &[u8]) -> Self;
    /// Payload width in bytes.
    const BYTE_WIDTH: usize;
    /// Dtype tag stored in serialized headers (0 = f32, 1 = f64).
    const DTYPE_TAG: u8;
}

impl Scalar for f32 {
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
    const BYTE_WIDTH: usize = 4;
    const DTYPE_TAG: u8 = 0;
}

impl Scalar for f64 {
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
    const BYTE_WIDTH: usize = 8;
    const DTYPE_TAG: u8 = 1;
}
