use std::fmt;
use std::ops::{Add, Sub};

/// Simulated time in seconds. Non-negative by construction.
#[derive(Clone, Copy, PartialEq, PartialOrd, Debug, Default)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    pub fn new(seconds: f64) -> SimTime {
        assert!(
            seconds >= 0.0 && seconds.is_finite(),
            "SimTime must be finite and non-negative, got {seconds}"
        );
        SimTime(seconds)
    }

    pub fn seconds(self) -> f64 {
        self.0
    }

    pub fn min(self, other: SimTime) -> SimTime {
        if self.0 <= other.0 {
            self
        } else {
            other
        }
    }

    pub fn max(self, other: SimTime) -> SimTime {
        if self.0 >= other.0 {
            self
        } else {
            other
        }
    }
}

// Times are always computed, never NaN; total order is safe.
impl Eq for SimTime {}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.partial_cmp(&other.0).expect("SimTime is never NaN")
    }
}

impl Add<f64> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: f64) -> SimTime {
        SimTime::new(self.0 + rhs)
    }
}

impl Sub<SimTime> for SimTime {
    type Output = f64;
    fn sub(self, rhs: SimTime) -> f64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", fmt_sig9(self.0))
    }
}

/// Formats a float with exactly 9 significant digits. Used for every float
/// that lands in a CSV export so repeated runs are byte-identical.
pub fn fmt_sig9(x: f64) -> String {
    format!("{x:.8e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_and_arithmetic() {
        let a = SimTime::new(1.0);
        let b = SimTime::new(2.5);
        assert!(a < b);
        assert_eq!(b - a, 1.5);
        assert_eq!((a + 1.5), b);
        assert_eq!(a.min(b), a);
        assert_eq!(a.max(b), b);
    }

    #[test]
    #[should_panic]
    fn negative_time_rejected() {
        SimTime::new(-1.0);
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig9(8.0), "8.00000000e0");
        assert_eq!(fmt_sig9(0.25), "2.50000000e-1");
        assert_eq!(fmt_sig9(123456789.0), "1.23456789e8");
    }
}
