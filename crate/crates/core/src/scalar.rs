use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point type the chain kernel and gradient engines run on.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Smallest probability treated as nonzero inside a logarithm.
    fn prob_floor() -> Self;

    /// Relative tolerance used when validating generator row sums.
    fn row_sum_tol() -> Self;
}

impl Scalar for f64 {
    fn prob_floor() -> Self {
        1e-300
    }

    fn row_sum_tol() -> Self {
        1e-10
    }
}

impl Scalar for f32 {
    fn prob_floor() -> Self {
        1e-37
    }

    fn row_sum_tol() -> Self {
        1e-4
    }
}

#[inline]
pub(crate) fn lit<T: Scalar>(v: f64) -> T {
    nalgebra::convert(v)
}

#[inline]
pub(crate) fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}
