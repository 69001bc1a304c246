//! Minimal dense-tensor substrate: the neural operators the model needs,
//! reverse-mode gradients for all of them, and a finite-difference checker.

mod attention;
mod gradcheck;
pub mod ops;
mod tape;
mod tensor;


pub use attention::{multi_head_attention, AttentionVars};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Scalar type for all tensor computation. Implemented for `f32` (compute
/// precision) and `f64` (verification precision).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + rustfft::FftNum
    + 'static
{
    /// 32 or 64; recorded in reports.
    const BITS: u32;

    fn erf(self) -> Self;
}

impl Real for f32 {
    const BITS: u32 = 32;

    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Real for f64 {
    const BITS: u32 = 64;

    fn erf(self) -> Self {
        libm::erf(self)
    }
}

/// Casts an `f64` constant into the active precision.
#[inline]
pub fn real<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("finite constant")
}
