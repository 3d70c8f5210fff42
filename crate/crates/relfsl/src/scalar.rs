//! Element type abstraction: f32 for training, f64 for verification.

use num_traits::{Float, NumAssignOps, NumCast};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating element of all tensors. The crate is written against this trait
/// so every kernel, gradient rule, and oracle runs identically in 32-bit
/// (training) and 64-bit (verification) precision.
pub trait Scalar:
    Float + NumAssignOps + Sum<Self> + Default + Debug + Display + Send + Sync + 'static
{
    /// Width in bits, surfaced through the CLI `--bits` flag.
    const BITS: u32;
    /// Checkpoint dtype code: 0 = f32, 1 = f64.
    const DTYPE_CODE: u8;

    fn from_f64(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("finite f64 converts to scalar")
    }

    fn as_f64(self) -> f64 {
        <f64 as NumCast>::from(self).expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    const BITS: u32 = 32;
    const DTYPE_CODE: u8 = 0;
}

impl Scalar for f64 {
    const BITS: u32 = 64;
    const DTYPE_CODE: u8 = 1;
}
