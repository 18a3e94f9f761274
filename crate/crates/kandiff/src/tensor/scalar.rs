use std::fmt;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type for tensors. f64 backs the verification
/// suite (tight tolerances), f32 backs training (speed).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    const DTYPE: &'static str;

    fn fl(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("scalar from f64")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar to f64")
    }

    fn to_le_bytes_vec(self) -> Vec<u8>;
    fn from_le_slice(bytes: &[u8]) -> Self;
    /// Byte width of one element in checkpoint files.
    const BYTES: usize;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }

    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }

    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}
