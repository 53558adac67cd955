//! Closed real intervals with outward-widened primitive operations.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of ULPs each primitive result is widened by on either side.
///
/// This stands in for directed rounding: every endpoint computed in
/// round-to-nearest arithmetic is pushed outward by this many representable
/// steps, which dominates the error of one IEEE operation (and of the libm
/// transcendental functions, which are accurate to within 1 ULP).
pub const ROUNDING_SLACK_ULPS: u32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

fn down(mut x: f64, ulps: u32) -> f64 {
    for _ in 0..ulps {
        x = x.next_down();
    }
    x
}

fn up(mut x: f64, ulps: u32) -> f64 {
    for _ in 0..ulps {
        x = x.next_up();
    }
    x
}

impl Interval {
    /// Panics if `lo > hi` or either endpoint is NaN.
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "invalid interval [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn try_new(lo: f64, hi: f64) -> Option<Self> {
        (lo <= hi).then_some(Self { lo, hi })
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        let m = 0.5 * (self.lo + self.hi);
        m.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(0.0)
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    /// Magnitude: the largest absolute value in the interval.
    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    /// Widens both endpoints outward by `ulps` representable steps.
    pub fn widen(self, ulps: u32) -> Interval {
        Interval {
            lo: down(self.lo, ulps),
            hi: up(self.hi, ulps),
        }
    }

    fn rounded(lo: f64, hi: f64) -> Interval {
        Interval { lo, hi }.widen(ROUNDING_SLACK_ULPS)
    }

    fn clamp_lo(self, floor: f64) -> Interval {
        Interval {
            lo: self.lo.max(floor),
            hi: self.hi.max(floor),
        }
    }

    fn clamp_unit(self) -> Interval {
        Interval {
            lo: self.lo.clamp(-1.0, 1.0),
            hi: self.hi.clamp(-1.0, 1.0),
        }
    }

    pub fn add(&self, o: &Interval) -> Interval {
        let r = Interval::rounded(self.lo + o.lo, self.hi + o.hi);
        if self.lo >= 0.0 && o.lo >= 0.0 {
            r.clamp_lo(0.0)
        } else {
            r
        }
    }

    pub fn sub(&self, o: &Interval) -> Interval {
        Interval::rounded(self.lo - o.hi, self.hi - o.lo)
    }

    pub fn neg(&self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }

    pub fn mul(&self, o: &Interval) -> Interval {
        let p = [
            self.lo * o.lo,
            self.lo * o.hi,
            self.hi * o.lo,
            self.hi * o.hi,
        ];
        // 0 * inf shows up as NaN; the product of a zero endpoint is zero.
        let p = p.map(|v| if v.is_nan() { 0.0 } else { v });
        let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let r = Interval::rounded(lo, hi);
        let same_sign = (self.lo >= 0.0 && o.lo >= 0.0) || (self.hi <= 0.0 && o.hi <= 0.0);
        if same_sign {
            r.clamp_lo(0.0)
        } else {
            r
        }
    }

    pub fn scale(&self, c: f64) -> Interval {
        self.mul(&Interval::point(c))
    }

    /// Returns `None` when the divisor contains zero.
    pub fn div(&self, o: &Interval) -> Option<Interval> {
        if o.contains_zero() {
            return None;
        }
        let recip = Interval::rounded(1.0 / o.hi, 1.0 / o.lo);
        Some(self.mul(&recip))
    }

    /// Integer power with the tightened rule for even exponents.
    /// Returns `None` for a negative exponent over an interval containing 0.
    pub fn powi(&self, k: i32) -> Option<Interval> {
        if k == 0 {
            return Some(Interval::point(1.0));
        }
        if k < 0 {
            let pos = self.powi(-k)?;
            return Interval::point(1.0).div(&pos);
        }
        let ulps = ROUNDING_SLACK_ULPS + k.unsigned_abs();
        let a = self.lo.powi(k);
        let b = self.hi.powi(k);
        let r = if k % 2 == 0 {
            if self.lo >= 0.0 {
                Interval { lo: a, hi: b }
            } else if self.hi <= 0.0 {
                Interval { lo: b, hi: a }
            } else {
                Interval { lo: 0.0, hi: a.max(b) }
            }
            .widen(ulps)
            .clamp_lo(0.0)
        } else {
            Interval { lo: a, hi: b }.widen(ulps)
        };
        Some(r)
    }

    /// Returns `None` when the interval dips below zero.
    pub fn sqrt(&self) -> Option<Interval> {
        if self.lo < 0.0 {
            return None;
        }
        Some(Interval::rounded(self.lo.sqrt(), self.hi.sqrt()).clamp_lo(0.0))
    }

    pub fn exp(&self) -> Interval {
        Interval::rounded(self.lo.exp(), self.hi.exp()).clamp_lo(0.0)
    }

    pub fn abs(&self) -> Interval {
        if self.lo >= 0.0 {
            *self
        } else if self.hi <= 0.0 {
            self.neg()
        } else {
            Interval {
                lo: 0.0,
                hi: self.mag(),
            }
        }
    }

    pub fn min(&self, o: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(o.lo),
            hi: self.hi.min(o.hi),
        }
    }

    pub fn max(&self, o: &Interval) -> Interval {
        Interval {
            lo: self.lo.max(o.lo),
            hi: self.hi.max(o.hi),
        }
    }

    pub fn sin(&self) -> Interval {
        periodic_range(self, 0.0, f64::sin)
    }

    pub fn cos(&self) -> Interval {
        // cos(x) = sin(x + pi/2); critical points shift accordingly.
        periodic_range(self, FRAC_PI_2, f64::cos)
    }
}

/// Range of a unit-amplitude periodic function whose maxima sit at
/// `pi/2 - phase + 2 k pi` and minima at `-pi/2 - phase + 2 k pi`.
fn periodic_range(x: &Interval, phase: f64, f: fn(f64) -> f64) -> Interval {
    if !x.lo.is_finite() || !x.hi.is_finite() || x.width() >= TAU {
        return Interval { lo: -1.0, hi: 1.0 };
    }
    let a = f(x.lo);
    let b = f(x.hi);
    let mut r = Interval::rounded(a.min(b), a.max(b));
    if contains_critical(x, FRAC_PI_2 - phase) {
        r.hi = 1.0;
    }
    if contains_critical(x, -FRAC_PI_2 - phase) {
        r.lo = -1.0;
    }
    r.clamp_unit()
}

/// Whether `offset + 2 k pi` lies in `x` for some integer k, decided
/// conservatively: points within a relative 1e-12 of an endpoint count.
fn contains_critical(x: &Interval, offset: f64) -> bool {
    let slack = 1e-12 * (1.0 + x.lo.abs().max(x.hi.abs()));
    let k_lo = ((x.lo - slack - offset) / TAU).ceil();
    let k_hi = ((x.hi + slack - offset) / TAU).floor();
    if k_lo <= k_hi {
        return true;
    }
    // Guard against the division above rounding across an integer.
    [k_lo - 1.0, k_lo, k_hi, k_hi + 1.0].iter().any(|k| {
        let c = offset + k * TAU;
        c >= x.lo - slack && c <= x.hi + slack
    })
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}
