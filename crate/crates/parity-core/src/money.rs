//! Integer-cent money arithmetic.
//!
//! Every amount that moves between ledgers is a whole number of cents so
//! conservation identities hold exactly. Fractional results round half away
//! from zero, which is what `f64::round` does.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};

/// A signed USD amount in whole cents.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Cents(pub i64);

impl Cents {
    pub const ZERO: Cents = Cents(0);

    /// Rounds a USD float to the nearest cent.
    pub fn from_usd(usd: f64) -> Cents {
        Cents((usd * 100.0).round() as i64)
    }

    pub fn to_usd(self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// `self * f`, rounded to the nearest cent.
    pub fn mul_frac(self, f: f64) -> Cents {
        Cents((self.0 as f64 * f).round() as i64)
    }

    /// `self * num / den`, rounded to the nearest cent.
    pub fn scale(self, num: f64, den: f64) -> Cents {
        Cents((self.0 as f64 * num / den).round() as i64)
    }

    pub fn abs(self) -> Cents {
        Cents(self.0.abs())
    }

    pub fn min(self, other: Cents) -> Cents {
        Cents(self.0.min(other.0))
    }

    pub fn max(self, other: Cents) -> Cents {
        Cents(self.0.max(other.0))
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl Add for Cents {
    type Output = Cents;
    fn add(self, rhs: Cents) -> Cents {
        Cents(self.0 + rhs.0)
    }
}

impl Sub for Cents {
    type Output = Cents;
    fn sub(self, rhs: Cents) -> Cents {
        Cents(self.0 - rhs.0)
    }
}

impl Neg for Cents {
    type Output = Cents;
    fn neg(self) -> Cents {
        Cents(-self.0)
    }
}

impl AddAssign for Cents {
    fn add_assign(&mut self, rhs: Cents) {
        self.0 += rhs.0;
    }
}

impl SubAssign for Cents {
    fn sub_assign(&mut self, rhs: Cents) {
        self.0 -= rhs.0;
    }
}

impl Sum for Cents {
    fn sum<I: Iterator<Item = Cents>>(iter: I) -> Cents {
        Cents(iter.map(|c| c.0).sum())
    }
}

impl fmt::Debug for Cents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

impl fmt::Display for Cents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let a = self.0.unsigned_abs();
        write!(f, "{}{}.{:02}", sign, a / 100, a % 100)
    }
}

/// Splits `total` across `weights` so the parts sum to `total` exactly.
///
/// Largest-remainder apportionment over the (possibly signed) ideal shares
/// `total * w_i`; any leftover cents go to the indices with the largest
/// fractional remainders, ties resolved by index order.
pub fn apportion(total: Cents, weights: &[f64]) -> Vec<Cents> {
    if weights.is_empty() {
        return Vec::new();
    }
    let wsum: f64 = weights.iter().sum();
    if wsum == 0.0 {
        let mut out = vec![Cents::ZERO; weights.len()];
        out[0] = total;
        return out;
    }
    let mut parts: Vec<i64> = Vec::with_capacity(weights.len());
    let mut fracs: Vec<(usize, f64)> = Vec::with_capacity(weights.len());
    let mut assigned: i64 = 0;
    for (i, w) in weights.iter().enumerate() {
        let ideal = total.0 as f64 * w / wsum;
        let fl = ideal.floor();
        parts.push(fl as i64);
        assigned += fl as i64;
        fracs.push((i, ideal - fl));
    }
    let mut leftover = total.0 - assigned;
    // leftover is non-negative because every part was floored
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut k = 0;
    while leftover > 0 {
        parts[fracs[k % fracs.len()].0] += 1;
        leftover -= 1;
        k += 1;
    }
    parts.into_iter().map(Cents).collect()
}
