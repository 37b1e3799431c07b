//! Scalar abstraction so the numeric core runs at `f32` or `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar usable throughout the crate.
///
/// Adds the conversions, serde bounds, and the matmul dispatch hook the model
/// code needs on top of `num_traits::Float`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// SIMD lane count used for padded matrix layouts.
    const LANES: usize;

    /// Shorthand for converting an `f64` constant.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }

    /// Lossy view as `f64` (exact for `f64`, widened for `f32`).
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    fn erf(self) -> Self;

    /// Backend selection for [`crate::simd::gemm_bstream`]; not called
    /// directly.
    #[doc(hidden)]
    #[allow(clippy::too_many_arguments)]
    fn gemm_bstream_dispatch(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_rs: usize,
        a_cs: usize,
        b: &[Self],
        b_rs: usize,
        accumulate: bool,
        c: &mut [Self],
        c_rs: usize,
        post: crate::simd::PostOp<'_, Self>,
    );
}

impl Scalar for f64 {
    const LANES: usize = 8;

    fn erf(self) -> Self {
        libm::erf(self)
    }

    fn gemm_bstream_dispatch(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_rs: usize,
        a_cs: usize,
        b: &[Self],
        b_rs: usize,
        accumulate: bool,
        c: &mut [Self],
        c_rs: usize,
        post: crate::simd::PostOp<'_, Self>,
    ) {
        #[cfg(target_arch = "x86_64")]
        if crate::simd::avx512::available() {
            crate::simd::avx512::k64::gemm(m, k, n, a, a_rs, a_cs, b, b_rs, accumulate, c, c_rs, post);
            return;
        }
        crate::simd::gemm_portable(m, k, n, a, a_rs, a_cs, b, b_rs, accumulate, c, c_rs, post);
    }
}

impl Scalar for f32 {
    const LANES: usize = 16;

    fn erf(self) -> Self {
        libm::erff(self)
    }

    fn gemm_bstream_dispatch(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_rs: usize,
        a_cs: usize,
        b: &[Self],
        b_rs: usize,
        accumulate: bool,
        c: &mut [Self],
        c_rs: usize,
        post: crate::simd::PostOp<'_, Self>,
    ) {
        #[cfg(target_arch = "x86_64")]
        if crate::simd::avx512::available() {
            crate::simd::avx512::k32::gemm(m, k, n, a, a_rs, a_cs, b, b_rs, accumulate, c, c_rs, post);
            return;
        }
        crate::simd::gemm_portable(m, k, n, a, a_rs, a_cs, b, b_rs, accumulate, c, c_rs, post);
    }
}

/// Standard normal density.
pub fn normal_pdf<T: Scalar>(x: T) -> T {
    let inv_sqrt_2pi = T::of(0.3989422804014327);
    inv_sqrt_2pi * (-x * x / T::of(2.0)).exp()
}

/// Standard normal CDF via the error function.
pub fn normal_cdf<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    half * (T::one() + (x / T::of(std::f64::consts::SQRT_2)).erf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0f64) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.0f64) - 0.8413447460685429).abs() < 1e-12);
        assert!((normal_cdf(-1.96f64) - 0.024997895148220435).abs() < 1e-12);
    }
}
