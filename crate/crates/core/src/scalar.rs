use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::num::ParseFloatError;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar the numeric stack is generic over.
///
/// Everything downstream (tensors, optimizers, learners, pools) is written
/// against this trait; `f64` is the default instantiation used by the harness
/// and the CLI (see the type aliases at the crate root).
pub trait Scalar:
    Float + FromPrimitive + Sum + FromStr<Err = ParseFloatError> + Debug + Display + Send + Sync + 'static
{
    /// Convert from `f64`. Exact for `f64`, rounded for `f32`.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Scalar")
    }

    /// Widen to `f64`. Exact for both `f32` and `f64`.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar widens to f64")
    }

    /// Bit pattern used by the checkpoint format. Round-trips exactly for
    /// both `f32` (widened) and `f64`.
    fn encode_bits(self) -> u64 {
        self.as_f64().to_bits()
    }

    fn decode_bits(bits: u64) -> Self {
        Self::of(f64::from_bits(bits))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_round_trip() {
        for &x in &[0.0f64, -0.0, 1.5, -3.25e-7, f64::MAX, f64::MIN_POSITIVE] {
            assert_eq!(f64::decode_bits(x.encode_bits()).to_bits(), x.to_bits());
        }
        for &x in &[0.0f32, -1.5, 7.25e-3, f32::MAX] {
            assert_eq!(f32::decode_bits(x.encode_bits()).to_bits(), x.to_bits());
        }
    }
}
