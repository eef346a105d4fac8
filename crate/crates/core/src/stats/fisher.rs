//! Fisher's exact test for 2x2 tables.
//!
//! The two-sided p-value sums, over all tables with the observed marginals,
//! the probabilities of tables no more probable than the observed one.
//! Conditioned on the marginals every table probability is
//! `C(r1, a) * C(r2, c1 - a) / C(n, c1)`, so both the comparison and the sum
//! run on exact integers; floating point enters only in the final division.

use num_bigint::BigUint;

use super::StatsError;

fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::from(0u32);
    }
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

fn ratio_to_f64(num: &BigUint, den: &BigUint) -> f64 {
    if num == &BigUint::from(0u32) {
        return 0.0;
    }
    // Truncate each side to its top 53 bits and track the dropped exponents.
    let ns = num.bits().saturating_sub(53);
    let ds = den.bits().saturating_sub(53);
    let num_s = u64::try_from(num >> ns).expect("top bits fit u64") as f64;
    let den_s = u64::try_from(den >> ds).expect("top bits fit u64") as f64;
    (num_s / den_s) * 2f64.powi(ns as i32 - ds as i32)
}

/// Two-sided Fisher exact p-value for `[[a, b], [c, d]]`.
pub fn fisher_exact_2x2(table: [[u64; 2]; 2]) -> Result<f64, StatsError> {
    let [[a, b], [c, d]] = table;
    let n = a + b + c + d;
    if n == 0 {
        return Err(StatsError::EmptyTable);
    }
    let r1 = a + b;
    let r2 = c + d;
    let c1 = a + c;
    // Degenerate marginals leave a single admissible table: p = 1.
    if r1 == 0 || r2 == 0 || c1 == 0 || c1 == n {
        return Ok(1.0);
    }

    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let weight = |aa: u64| binomial(r1, aa) * binomial(r2, c1 - aa);
    let observed = weight(a);

    let mut tail = BigUint::from(0u32);
    let mut total = BigUint::from(0u32);
    for aa in lo..=hi {
        let w = weight(aa);
        if w <= observed {
            tail += &w;
        }
        total += w;
    }
    Ok(ratio_to_f64(&tail, &total).min(1.0))
}
