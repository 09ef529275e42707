//! Floating-point abstraction and numerically stable softmax primitives.
//!
//! Everything in this crate is generic over [`Scalar`], implemented for
//! `f32` and `f64`. Solvers accumulate values like `r_max/(1−γ)`, so the
//! exponentials that appear in softmax and log-sum-exp are always evaluated
//! in max-shifted form; the helpers here are the only places that call
//! `exp`/`ln` on raw value rows.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar used by all tables, solvers, and environments.
///
/// Implemented for `f32` and `f64`; the crate root exports `f64`-specialized
/// type aliases for the common case.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts from an `f64` constant. Lossy for `f32` in the usual way;
    /// never panics for finite input.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 representable in scalar type")
    }

    /// Widens to `f64` (exact for both supported types).
    fn to64(self) -> f64 {
        self.to_f64().expect("scalar widens to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Stable `ln Σ_i exp(x_i)` via max subtraction.
///
/// Returns `-∞` for an empty slice (the sum of zero exponentials).
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let m = match xs
        .iter()
        .copied()
        .fold(None, |acc: Option<T>, x| Some(acc.map_or(x, |a| a.max(x))))
    {
        Some(m) => m,
        None => return T::neg_infinity(),
    };
    if m.is_infinite() {
        // All -inf rows collapse to -inf; a +inf entry dominates.
        return m;
    }
    let sum: T = xs.iter().map(|&x| (x - m).exp()).sum();
    m + sum.ln()
}

/// Softmax value operator `α·ln Σ_i exp(x_i/α)`, evaluated as
/// `m + α·ln Σ_i exp((x_i − m)/α)` with `m = max_i x_i` so that no
/// exponential overflows regardless of the magnitude of `x`.
pub fn scaled_log_sum_exp<T: Scalar>(xs: &[T], alpha: T) -> T {
    debug_assert!(alpha > T::zero(), "temperature must be positive");
    let m = match xs
        .iter()
        .copied()
        .fold(None, |acc: Option<T>, x| Some(acc.map_or(x, |a| a.max(x))))
    {
        Some(m) => m,
        None => return T::neg_infinity(),
    };
    if m.is_infinite() {
        return m;
    }
    let sum: T = xs.iter().map(|&x| ((x - m) / alpha).exp()).sum();
    m + alpha * sum.ln()
}

/// Stable softmax of `x/α`: returns a fresh probability vector summing to 1.
pub fn softmax<T: Scalar>(xs: &[T], alpha: T) -> Vec<T> {
    let mut out = vec![T::zero(); xs.len()];
    softmax_into(xs, alpha, &mut out);
    out
}

/// Stable softmax of `x/α` written into `out` (same length as `xs`).
pub fn softmax_into<T: Scalar>(xs: &[T], alpha: T, out: &mut [T]) {
    debug_assert_eq!(xs.len(), out.len());
    debug_assert!(alpha > T::zero(), "temperature must be positive");
    let m = xs.iter().copied().fold(T::neg_infinity(), |a, x| a.max(x));
    let mut z = T::zero();
    for (o, &x) in out.iter_mut().zip(xs) {
        let e = ((x - m) / alpha).exp();
        *o = e;
        z += e;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn log_sum_exp_matches_naive_on_small_values() {
        let xs = [0.3_f64, -1.2, 0.7];
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert_relative_eq!(log_sum_exp(&xs), naive, max_relative = 1e-15);
    }

    #[test]
    fn log_sum_exp_survives_huge_inputs() {
        let xs = [1e4_f64, 1e4 - 3.0];
        let v = log_sum_exp(&xs);
        assert!(v.is_finite());
        assert_relative_eq!(v, 1e4 + (1.0 + (-3.0_f64).exp()).ln(), max_relative = 1e-12);
    }

    #[test]
    fn log_sum_exp_empty_is_negative_infinity() {
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn scaled_variant_reduces_to_plain_at_unit_temperature() {
        let xs = [0.1_f64, 2.0, -0.4];
        assert_relative_eq!(
            scaled_log_sum_exp(&xs, 1.0),
            log_sum_exp(&xs),
            max_relative = 1e-15
        );
    }

    #[test]
    fn scaled_variant_approaches_max_at_low_temperature() {
        let xs = [1.0_f64, 0.0];
        let v = scaled_log_sum_exp(&xs, 1e-3);
        assert!((v - 1.0).abs() < 1e-2);
    }

    #[test]
    fn softmax_rows_normalize_and_order() {
        let p = softmax(&[1.0_f64, 0.0], 1.0);
        assert_relative_eq!(p[0] + p[1], 1.0, max_relative = 1e-15);
        assert!(p[0] > p[1]);
        // softmax(1,0) at α=1, reference value e/(1+e).
        assert_relative_eq!(p[0], 0.731_058_578_630_004_9, max_relative = 1e-12);
    }

    #[test]
    fn softmax_high_temperature_is_near_uniform() {
        let p = softmax(&[1.0_f64, 0.0], 100.0);
        assert!((p[0] - 0.5).abs() < 1e-2);
    }

    #[test]
    fn works_in_single_precision() {
        let p = softmax(&[1.0_f32, 0.0], 1.0);
        assert!((p[0] - 0.731_058_6_f32).abs() < 1e-5);
        let v = scaled_log_sum_exp(&[1.0_f32, 0.0], 1.0);
        assert!((v - 1.313_261_7_f32).abs() < 1e-5);
    }
}
