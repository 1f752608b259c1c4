//! Exact integer combinatorics used by the moment formulas.

use crate::{Error, Result};

/// Falling factorial k (k-1) ... (k-s+1) in exact integer arithmetic.
///
/// Returns 0 when s > k and 1 when s = 0. Panics if the product overflows
/// u128, which cannot happen for the k <= 10^6, s <= 4 range the moment
/// code uses.
pub fn falling_factorial(k: u64, s: u64) -> u128 {
    if s > k {
        return 0;
    }
    let mut prod: u128 = 1;
    for j in 0..s {
        prod = prod
            .checked_mul((k - j) as u128)
            .expect("falling_factorial overflowed u128");
    }
    prod
}

/// Stirling number of the second kind S(k, s): partitions of a k-set into
/// s nonempty blocks.
///
/// Arguments are capped at 64; within that range intermediate values can
/// still exceed u128 (for instance S(64, 32)), which reports Overflow
/// rather than wrapping.
pub fn stirling2(k: u32, s: u32) -> Result<u128> {
    if k > 64 || s > 64 {
        return Err(Error::domain(
            "stirling2",
            format!("arguments capped at 64, got k={k}, s={s}"),
        ));
    }
    if s > k {
        return Ok(0);
    }
    if k == 0 {
        return Ok(1); // S(0, 0) = 1 by convention.
    }
    if s == 0 {
        return Ok(0);
    }
    // S(n, j) = j S(n-1, j) + S(n-1, j-1), rolling one row at a time.
    let mut row: Vec<u128> = vec![0; s as usize + 1];
    row[0] = 1; // row for n = 0
    for n in 1..=k {
        let top = (s.min(n)) as usize;
        for j in (1..=top).rev() {
            let carry = (j as u128)
                .checked_mul(row[j])
                .and_then(|v| v.checked_add(row[j - 1]))
                .ok_or(Error::Overflow("stirling2 exceeded u128"))?;
            row[j] = carry;
        }
        row[0] = 0; // S(n, 0) = 0 for n >= 1
    }
    Ok(row[s as usize])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn falling_factorial_small_cases() {
        assert_eq!(falling_factorial(10, 3), 720);
        assert_eq!(falling_factorial(4, 0), 1);
        assert_eq!(falling_factorial(3, 5), 0);
        // n(n-1)(n-2)(n-3) = n^4 - 6n^3 + 11n^2 - 6n at n = 10^6.
        assert_eq!(falling_factorial(1_000_000, 4), 999_994_000_010_999_994_000_000);
    }

    #[test]
    fn stirling2_known_row() {
        // Partitions of a 4-set: 1, 7, 6, 1 blocks of sizes 1..4.
        assert_eq!(stirling2(4, 1).unwrap(), 1);
        assert_eq!(stirling2(4, 2).unwrap(), 7);
        assert_eq!(stirling2(4, 3).unwrap(), 6);
        assert_eq!(stirling2(4, 4).unwrap(), 1);
        assert_eq!(stirling2(5, 2).unwrap(), 15);
        assert_eq!(stirling2(0, 0).unwrap(), 1);
        assert_eq!(stirling2(6, 0).unwrap(), 0);
        assert_eq!(stirling2(3, 7).unwrap(), 0);
    }

    #[test]
    fn stirling2_moment_identity() {
        // sum_s S(k, s) m_(s) = m^k connects Stirling numbers to falling
        // factorials, covering every entry the conversion code touches.
        for k in 1..=8u32 {
            for m in 1..=6u64 {
                let mut total: u128 = 0;
                for s in 0..=k {
                    total += stirling2(k, s).unwrap() * falling_factorial(m, s as u64);
                }
                assert_eq!(total, (m as u128).pow(k), "identity fails at k={k}, m={m}");
            }
        }
    }

    #[test]
    fn stirling2_bounds_and_overflow() {
        assert!(stirling2(70, 3).is_err());
        assert!(matches!(
            stirling2(64, 32),
            Err(Error::Overflow(_))
        ));
        // Large-but-representable entries still succeed.
        assert!(stirling2(64, 2).is_ok());
    }
}
