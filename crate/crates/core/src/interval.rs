//! Closed-interval arithmetic over f64 with an explicit undefined outcome.
//!
//! Intervals here answer one question: can an expression fault anywhere in a
//! given input box? Bounds are computed in plain double precision with no
//! outward rounding; the goal is validity classification, not a rigorous
//! enclosure. Any operation whose exact result has no finite enclosure
//! (division across zero, log of a non-positive range, overflow) yields
//! [`Interval::Undefined`], and undefined absorbs through every operator.

use crate::ops::OperatorId;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

/// A closed interval `[lo, hi]` with finite bounds, or `Undefined`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interval {
    Defined { lo: f64, hi: f64 },
    Undefined,
}

impl Interval {
    /// Builds `[lo, hi]`, collapsing to `Undefined` unless both bounds are
    /// finite and ordered.
    pub fn new(lo: f64, hi: f64) -> Interval {
        if lo.is_finite() && hi.is_finite() && lo <= hi {
            Interval::Defined { lo, hi }
        } else {
            Interval::Undefined
        }
    }

    /// The degenerate interval `[v, v]`.
    pub fn point(v: f64) -> Interval {
        Interval::new(v, v)
    }

    pub fn is_defined(&self) -> bool {
        matches!(self, Interval::Defined { .. })
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        match *self {
            Interval::Defined { lo, hi } => Some((lo, hi)),
            Interval::Undefined => None,
        }
    }

    /// Membership test. `Undefined` contains nothing; non-finite points are
    /// never contained.
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Interval::Defined { lo, hi } => x.is_finite() && lo <= x && x <= hi,
            Interval::Undefined => false,
        }
    }
}

/// Applies `op` to the interval arguments. Unary operators ignore `cd`;
/// binary operators require it.
///
/// Panics if a binary operator is called without a right interval: that is a
/// caller error, not an undefined result.
pub fn compute_interval(op: OperatorId, ab: Interval, cd: Option<Interval>) -> Interval {
    let Some((a, b)) = ab.bounds() else {
        return Interval::Undefined;
    };
    if op.is_binary() {
        let cd = cd.unwrap_or_else(|| panic!("binary operator {op:?} needs a right interval"));
        let Some((c, d)) = cd.bounds() else {
            return Interval::Undefined;
        };
        match op {
            OperatorId::Add => Interval::new(a + c, b + d),
            OperatorId::Sub => Interval::new(a - d, b - c),
            OperatorId::Mul => cross_extrema(a, b, c, d, |x, y| x * y),
            OperatorId::Div => {
                if c <= 0.0 && d >= 0.0 {
                    Interval::Undefined
                } else {
                    cross_extrema(a, b, c, d, |x, y| x / y)
                }
            }
            _ => unreachable!(),
        }
    } else {
        match op {
            OperatorId::Sin => periodic_range(a, b, FRAC_PI_2, -FRAC_PI_2, f64::sin),
            OperatorId::Cos => periodic_range(a, b, 0.0, PI, f64::cos),
            OperatorId::Exp => Interval::new(a.exp(), b.exp()),
            OperatorId::Log => {
                if a <= 0.0 {
                    Interval::Undefined
                } else {
                    Interval::new(a.ln(), b.ln())
                }
            }
            _ => unreachable!(),
        }
    }
}

/// Min/max over the four endpoint combinations. Inputs are finite and, for
/// division, the denominators are nonzero, so no NaN can appear; overflow to
/// infinity collapses via `Interval::new`.
fn cross_extrema(a: f64, b: f64, c: f64, d: f64, f: impl Fn(f64, f64) -> f64) -> Interval {
    let products = [f(a, c), f(a, d), f(b, c), f(b, d)];
    let mut lo = products[0];
    let mut hi = products[0];
    for p in products {
        lo = lo.min(p);
        hi = hi.max(p);
    }
    Interval::new(lo, hi)
}

/// Exact range of sin or cos over `[a, b]`: endpoint values, widened to +1 /
/// -1 whenever a maximising / minimising phase point lies in the interval.
/// `max_at` and `min_at` are the phase offsets of those points (period 2pi).
fn periodic_range(a: f64, b: f64, max_at: f64, min_at: f64, f: impl Fn(f64) -> f64) -> Interval {
    // The phase test below multiplies a period count back up; for huge
    // arguments that product loses enough precision to misplace a critical
    // point, so give up and return the full range.
    const PHASE_LIMIT: f64 = 1e12;
    if b - a >= TAU || a.abs() > PHASE_LIMIT || b.abs() > PHASE_LIMIT {
        return Interval::new(-1.0, 1.0);
    }
    let fa = f(a);
    let fb = f(b);
    let mut lo = fa.min(fb);
    let mut hi = fa.max(fb);
    if contains_phase(a, b, max_at) {
        hi = 1.0;
    }
    if contains_phase(a, b, min_at) {
        lo = -1.0;
    }
    Interval::new(lo, hi)
}

/// Whether some point `offset + k * 2pi` (integer k) lies in `[a, b]`.
fn contains_phase(a: f64, b: f64, offset: f64) -> bool {
    let k = ((a - offset) / TAU).ceil();
    offset + k * TAU <= b
}
