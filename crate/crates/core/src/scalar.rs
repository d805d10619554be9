//! Generic floating-point scalar used throughout the numeric core.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
///
/// The accuracy contracts documented on the individual operations assume
/// `f64`; an `f32` instantiation runs the same algorithms at the precision
/// the type supports.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + NumAssign + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static
{
    /// Shorthand for converting an `f64` constant into `Self`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("constant representable in scalar type")
    }

    /// Shorthand for converting a `usize` into `Self`.
    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Lossy view as `f64`, used for diagnostics and error messages.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Log-sum-exp accumulator for sums of nonnegative terms given in log form.
///
/// Tracks the running maximum exponent so that `ln Σ exp(l_i)` is formed
/// without overflow; `-inf` inputs (terms equal to zero) are absorbed.
#[derive(Clone, Copy, Debug)]
pub struct LogSum<T> {
    max: T,
    sum: T,
}

impl<T: Scalar> Default for LogSum<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> LogSum<T> {
    pub fn new() -> Self {
        Self {
            max: T::neg_infinity(),
            sum: T::zero(),
        }
    }

    pub fn add_log(&mut self, l: T) {
        if l == T::neg_infinity() {
            return;
        }
        if l > self.max {
            if self.max == T::neg_infinity() {
                self.max = l;
                self.sum = T::one();
            } else {
                self.sum = self.sum * (self.max - l).exp() + T::one();
                self.max = l;
            }
        } else {
            self.sum += (l - self.max).exp();
        }
    }

    /// ln of the accumulated sum; `-inf` if nothing was added.
    pub fn ln_value(&self) -> T {
        if self.max == T::neg_infinity() {
            T::neg_infinity()
        } else {
            self.max + self.sum.ln()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsum_matches_direct() {
        let logs = [-3.0, -1.5, -700.0, 0.25];
        let mut acc = LogSum::<f64>::new();
        for &l in &logs {
            acc.add_log(l);
        }
        let direct: f64 = logs.iter().map(|l| l.exp()).sum();
        assert!((acc.ln_value() - direct.ln()).abs() < 1e-14);
    }

    #[test]
    fn logsum_handles_huge_exponents() {
        let mut acc = LogSum::<f64>::new();
        acc.add_log(1000.0);
        acc.add_log(1000.0 + (1.0f64).ln());
        // exp(1000) + exp(1000 + ln 1) = 2 e^1000
        assert!((acc.ln_value() - (1000.0 + 2.0f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn logsum_empty_is_neg_inf() {
        let acc = LogSum::<f64>::new();
        assert!(acc.ln_value().is_infinite() && acc.ln_value() < 0.0);
    }
}
