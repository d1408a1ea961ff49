//! Scalar abstraction for the numeric core.
//!
//! Everything numerical in this crate is generic over [`Real`], so the same
//! recursions run in `f32` or `f64`. Concrete aliases for the common choice
//! live at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// Floating-point scalar usable throughout the filter.
///
/// Extends `num_traits::Float` with the random draws the samplers need, so
/// generic code never has to thread `Distribution` bounds around.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Convert an `f64` constant into this scalar type.
    #[inline]
    fn cast(x: f64) -> Self {
        Self::from_f64(x).expect("constant not representable in scalar type")
    }

    /// Round-trip into `f64` (used for rendering and f64-precision special
    /// functions; `f32` widens exactly).
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }

    /// One standard normal draw.
    fn sample_standard_normal<G: Rng + ?Sized>(rng: &mut G) -> Self;

    /// One uniform draw in `[0, 1)`.
    fn sample_unit<G: Rng + ?Sized>(rng: &mut G) -> Self;

    /// One `Gamma(shape, scale)` draw. Panics if `shape <= 0` or
    /// `scale <= 0`; callers validate parameters first.
    fn sample_gamma<G: Rng + ?Sized>(rng: &mut G, shape: Self, scale: Self) -> Self;
}

macro_rules! impl_real {
    ($ty:ty) => {
        impl Real for $ty {
            #[inline]
            fn sample_standard_normal<G: Rng + ?Sized>(rng: &mut G) -> Self {
                StandardNormal.sample(rng)
            }

            #[inline]
            fn sample_unit<G: Rng + ?Sized>(rng: &mut G) -> Self {
                rng.random::<$ty>()
            }

            #[inline]
            fn sample_gamma<G: Rng + ?Sized>(rng: &mut G, shape: Self, scale: Self) -> Self {
                Gamma::<$ty>::new(shape, scale)
                    .expect("invalid gamma parameters")
                    .sample(rng)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Draw from `N(mean, sd^2)`; `sd` may be zero.
#[inline]
pub fn sample_normal<R: Real, G: Rng + ?Sized>(rng: &mut G, mean: R, sd: R) -> R {
    if sd == R::zero() {
        return mean;
    }
    mean + sd * R::sample_standard_normal(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn draws_work_for_both_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: f64 = Real::sample_standard_normal(&mut rng);
        let b: f32 = Real::sample_standard_normal(&mut rng);
        assert!(a.is_finite() && b.is_finite());
        let u: f64 = Real::sample_unit(&mut rng);
        assert!((0.0..1.0).contains(&u));
        let g: f64 = Real::sample_gamma(&mut rng, 2.0, 4.0);
        assert!(g > 0.0);
    }

    #[test]
    fn cast_round_trips() {
        assert_eq!(<f64 as Real>::cast(1.5), 1.5);
        assert_eq!(<f32 as Real>::cast(0.25), 0.25f32);
    }
}
