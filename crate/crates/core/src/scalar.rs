//! Scalar abstractions.
//!
//! Counting code (subset and multinomial dynamic programs) is written once
//! against [`Scalar`] and instantiated with `f64` for speed or with
//! [`Exact`] rationals when results must be reproducible bit for bit.
//! Continuous code (curves, estimators) is written against [`Real`].

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Arbitrary-precision rational used by the exact evaluation paths.
pub type Exact = Ratio<BigInt>;

/// A number that supports field arithmetic and conversion from counts.
pub trait Scalar: Clone + Num + FromPrimitive + ToPrimitive + PartialOrd + Debug {}

impl<T> Scalar for T where T: Clone + Num + FromPrimitive + ToPrimitive + PartialOrd + Debug {}

/// Floating point scalar for curves, statistics and estimators.
pub trait Real: Float + FromPrimitive + Debug + Default + Send + Sync + 'static {}

impl<T> Real for T where T: Float + FromPrimitive + Debug + Default + Send + Sync + 'static {}

pub(crate) fn from_usize<T: Scalar>(v: usize) -> T {
    T::from_usize(v).expect("count representable in scalar")
}

pub(crate) fn real<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("f64 representable in scalar")
}

/// Pascal triangle rows `0..=n`; `table[a][b] = C(a, b)`.
pub(crate) fn binomial_table<T: Scalar>(n: usize) -> Vec<Vec<T>> {
    let mut table: Vec<Vec<T>> = Vec::with_capacity(n + 1);
    for a in 0..=n {
        let mut row = Vec::with_capacity(a + 1);
        for b in 0..=a {
            if b == 0 || b == a {
                row.push(T::one());
            } else {
                let prev = &table[a - 1];
                row.push(prev[b - 1].clone() + prev[b].clone());
            }
        }
        table.push(row);
    }
    table
}

/// `C(n, k)` as a saturating `u128`.
pub fn binomial_u128(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        match acc.checked_mul((n - i) as u128) {
            Some(v) => acc = v / (i as u128 + 1),
            None => return u128::MAX,
        }
    }
    acc
}

pub(crate) fn to_f64<T: ToPrimitive>(v: &T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pascal_matches_closed_form() {
        let t: Vec<Vec<u64>> = binomial_table(20);
        for (n, row) in t.iter().enumerate() {
            for (k, &v) in row.iter().enumerate().take(n + 1) {
                assert_eq!(v as u128, binomial_u128(n, k));
            }
        }
        assert_eq!(binomial_u128(32, 5), 201_376);
        assert_eq!(binomial_u128(3, 4), 0);
    }

    #[test]
    fn binomial_saturates() {
        assert_eq!(binomial_u128(400, 200), u128::MAX);
    }
}
