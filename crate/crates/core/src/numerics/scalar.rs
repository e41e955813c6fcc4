use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar the engine is generic over: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossless for `f32` and `f64`.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real always widens to f64")
    }

    fn from_usize_exact(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to every Real")
    }
}

impl Real for f32 {}
impl Real for f64 {}
