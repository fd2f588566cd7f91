//! Floating-point scalar abstraction.
//!
//! Every numerical routine in the crate is written against [`Scalar`], so the
//! same forward pass and decompositions can run in `f64` (the precision the
//! reconstruction guarantees are stated for) or in `f32` (to observe how
//! those guarantees break down at single precision).

use std::iter::Sum;

use ndarray::NdFloat;
use num_traits::{FloatConst, FromPrimitive};

pub trait Scalar: NdFloat + FloatConst + FromPrimitive + Sum + Default {
    /// Short name used in diagnostics ("f32", "f64").
    const NAME: &'static str;

    /// Gauss error function.
    fn erf(self) -> Self;

    /// Lossy conversion from `f64`; rounds to nearest for narrower types.
    fn of(v: f64) -> Self;

    fn to_f64_lossless(self) -> f64;
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn erf(self) -> Self {
        libm::erf(self)
    }

    fn of(v: f64) -> Self {
        v
    }

    fn to_f64_lossless(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn erf(self) -> Self {
        libm::erff(self)
    }

    fn of(v: f64) -> Self {
        v as f32
    }

    fn to_f64_lossless(self) -> f64 {
        f64::from(self)
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum<T> {
    sum: T,
    compensation: T,
}

impl<T: Scalar> CompensatedSum<T> {
    pub fn new() -> Self {
        Self {
            sum: T::zero(),
            compensation: T::zero(),
        }
    }

    pub fn add(&mut self, value: T) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> T {
        self.sum + self.compensation
    }
}

impl<T: Scalar> Extend<T> for CompensatedSum<T> {
    fn extend<I: IntoIterator<Item = T>>(&mut self, iter: I) {
        for v in iter {
            self.add(v);
        }
    }
}

/// Compensated sum of an iterator.
pub fn compensated_sum<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    let mut acc = CompensatedSum::new();
    acc.extend(values);
    acc.total()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancelled_terms() {
        let values = [1.0e16, 1.0, -1.0e16];
        assert_eq!(compensated_sum(values), 1.0);
        let naive: f64 = values.iter().sum();
        assert_eq!(naive, 0.0);
    }

    #[test]
    fn erf_matches_known_values() {
        assert!((Scalar::erf(0.5_f64) - 0.520_499_877_813_046_5).abs() < 1e-15);
        assert!((Scalar::erf(0.5_f32) - 0.520_499_9).abs() < 1e-6);
    }
}
