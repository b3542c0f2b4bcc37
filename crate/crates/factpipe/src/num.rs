//! Scalar abstraction for scores and statistics.
//!
//! Ranking and aggregation math is written against [`Real`] so the same code
//! runs at `f32` or `f64`; the crate root pins [`crate::Score`] (`f64`) as the
//! concrete type the pipeline uses.

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar with the conversions the metrics and ranking code
/// need.
pub trait Real:
    Float + FromPrimitive + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Lossy conversion from `usize`, used to turn counts into means.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Lossy conversion from `f64` literals and parsed JSON numbers.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 representable in scalar type")
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
}

/// Mean of a slice; zero for an empty slice.
pub fn mean<R: Real>(values: &[R]) -> R {
    if values.is_empty() {
        return R::zero();
    }
    let sum = values.iter().fold(R::zero(), |acc, &v| acc + v);
    sum / R::from_count(values.len())
}

/// Sample standard deviation (n - 1 denominator); zero when fewer than two
/// values.
pub fn sample_std<R: Real>(values: &[R]) -> R {
    if values.len() < 2 {
        return R::zero();
    }
    let m = mean(values);
    let ss = values
        .iter()
        .fold(R::zero(), |acc, &v| acc + (v - m) * (v - m));
    (ss / R::from_count(values.len() - 1)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_empty_is_zero() {
        assert_eq!(mean::<f64>(&[]), 0.0);
    }

    #[test]
    fn sample_std_matches_hand_computation() {
        // values {1, 2, 3}: mean 2, ss = 2, std = sqrt(2/2) = 1
        let std = sample_std(&[1.0_f64, 2.0, 3.0]);
        assert!((std - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sample_std_of_singleton_is_zero() {
        assert_eq!(sample_std::<f64>(&[5.0]), 0.0);
        assert_eq!(sample_std::<f32>(&[]), 0.0);
    }

    #[test]
    fn works_at_both_precisions() {
        let m32 = mean(&[1.0_f32, 2.0]);
        let m64 = mean(&[1.0_f64, 2.0]);
        assert!((f64::from(m32) - m64).abs() < 1e-6);
    }
}
