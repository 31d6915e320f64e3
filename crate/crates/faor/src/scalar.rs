//! Float abstraction shared by the resampler and the tensor engine.
//!
//! f64 is used for geometry, oracles and gradient checks; f32 for training
//! and inference.

use num_traits::Float;

pub trait Scalar:
    Float + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;

    /// tanh for bulk activation use. f64 delegates to libm (the gradient
    /// checks need the exact function); f32 uses a clamped odd rational
    /// approximation (max error ~1e-7) that vectorizes, since libm tanhf
    /// otherwise dominates the training profile.
    fn tanh_bulk(self) -> Self;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
    #[inline]
    fn tanh_bulk(self) -> Self {
        const CLAMP: f32 = 7.905_311_3;
        const A1: f32 = 4.893_525e-3;
        const A3: f32 = 6.372_619_3e-4;
        const A5: f32 = 1.485_722_4e-5;
        const A7: f32 = 5.122_297e-8;
        const A9: f32 = -8.604_672e-11;
        const A11: f32 = 2.000_188e-13;
        const A13: f32 = -2.760_768_5e-16;
        const B0: f32 = 4.893_525_6e-3;
        const B2: f32 = 2.268_434_6e-3;
        const B4: f32 = 1.185_347e-4;
        const B6: f32 = 1.198_258_4e-6;
        let x = self.clamp(-CLAMP, CLAMP);
        let x2 = x * x;
        let p = x * (A1 + x2 * (A3 + x2 * (A5 + x2 * (A7 + x2 * (A9 + x2 * (A11 + x2 * A13))))));
        let q = B0 + x2 * (B2 + x2 * (B4 + x2 * B6));
        p / q
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64_lossy(self) -> f64 {
        self
    }
    #[inline]
    fn tanh_bulk(self) -> Self {
        self.tanh()
    }
}
