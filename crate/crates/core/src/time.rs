//! Integer picosecond time base shared by every simulated component.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

/// Simulated time in picoseconds.
///
/// All device timings are integers in this unit so that sums of stage
/// latencies are exact. Arithmetic panics past `2^63` ps (about 106 days of
/// simulated time), which is treated as a simulator bug.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(u64);

const LIMIT: u64 = 1 << 63;

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_ps(ps: u64) -> Self {
        SimTime(ps)
    }

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns * 1_000)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * 1_000_000)
    }

    /// Converts a fractional microsecond value, rounding to the nearest
    /// picosecond (`59.975` becomes exactly `59_975_000` ps).
    pub fn from_us_f64(us: f64) -> Self {
        Self::from_ps_f64(us * 1e6)
    }

    pub fn from_ns_f64(ns: f64) -> Self {
        Self::from_ps_f64(ns * 1e3)
    }

    fn from_ps_f64(ps: f64) -> Self {
        assert!(
            ps.is_finite() && ps >= 0.0 && ps < LIMIT as f64,
            "time value {ps} ps out of range"
        );
        SimTime(ps.round() as u64)
    }

    pub const fn as_ps(self) -> u64 {
        self.0
    }

    pub fn as_ns_f64(self) -> f64 {
        self.0 as f64 / 1e3
    }

    pub fn as_us_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e12
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }

    pub fn mul(self, n: u64) -> SimTime {
        let v = self.0.checked_mul(n).filter(|v| *v < LIMIT);
        SimTime(v.expect("simulated time overflow"))
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        let v = self.0 + rhs.0;
        assert!(v < LIMIT, "simulated time overflow");
        SimTime(v)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(
            self.0
                .checked_sub(rhs.0)
                .expect("negative simulated time interval"),
        )
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ps", self.0)
    }
}

/// Time to move `bytes` at `bytes_per_sec`, rounded up to a whole picosecond.
pub fn transfer_time(bytes: u64, bytes_per_sec: f64) -> SimTime {
    if bytes == 0 {
        return SimTime::ZERO;
    }
    assert!(bytes_per_sec > 0.0, "transfer rate must be positive");
    SimTime::from_ps((bytes as f64 * 1e12 / bytes_per_sec).ceil() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractional_microseconds_are_exact() {
        assert_eq!(SimTime::from_us_f64(59.975).as_ps(), 59_975_000);
        assert_eq!(SimTime::from_us_f64(820.62).as_ps(), 820_620_000);
        assert_eq!(SimTime::from_us_f64(104.956).as_ps(), 104_956_000);
        assert_eq!(SimTime::from_ns_f64(13.75).as_ps(), 13_750);
    }

    #[test]
    fn transfer_rounds_up() {
        assert_eq!(transfer_time(0, 1e9), SimTime::ZERO);
        assert_eq!(transfer_time(4096, 4e9).as_ps(), 1_024_000);
        assert_eq!(transfer_time(1, 3e12).as_ps(), 1);
    }

    #[test]
    #[should_panic(expected = "overflow")]
    fn overflow_guard() {
        let _ = SimTime::from_ps(LIMIT - 1) + SimTime::from_ps(1);
    }
}
