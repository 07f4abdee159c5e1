//! Factorials and binomials used by the channel and moment code.

use std::sync::OnceLock;

const TABLE_LEN: usize = 171;

fn ln_factorial_table() -> &'static [f64; TABLE_LEN] {
    static TABLE: OnceLock<[f64; TABLE_LEN]> = OnceLock::new();
    TABLE.get_or_init(|| {
        // n! is finite in f64 up to 170; the running product carries at most
        // n/2 ulp of relative error, far tighter than a log-sum.
        let mut table = [0.0; TABLE_LEN];
        let mut fact = 1.0f64;
        for (n, slot) in table.iter_mut().enumerate().skip(1) {
            fact *= n as f64;
            *slot = fact.ln();
        }
        table
    })
}

/// ln(n!).
pub fn ln_factorial(n: u64) -> f64 {
    if (n as usize) < TABLE_LEN {
        return ln_factorial_table()[n as usize];
    }
    // Stirling series; the first omitted term is below 1e-19 for n > 170.
    let x = n as f64;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv / 12.0 * (1.0 - inv2 / 30.0 * (1.0 - inv2 * 2.0 / 7.0 * (1.0 - inv2 * 3.0 / 4.0)));
    x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + series
}

/// Binomial coefficient C(n, k) as an exact integer.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc·(n−i) is divisible by (i+1) at every step.
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Double factorial (2k−1)!! = 1·3·5·…·(2k−1), with (−1)!! = 1.
pub fn odd_double_factorial(k: u64) -> u128 {
    (1..=k).map(|i| (2 * i - 1) as u128).product()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_factorial_small_values() {
        assert_eq!(ln_factorial(0), 0.0);
        assert_eq!(ln_factorial(1), 0.0);
        assert!((ln_factorial(5) - 120f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn stirling_joins_table() {
        // ln 171! = ln 170! + ln 171
        let joined = ln_factorial(170) + 171f64.ln();
        assert!((ln_factorial(171) - joined).abs() < 1e-12);
        let joined = ln_factorial(1000) + 1001f64.ln();
        assert!((ln_factorial(1001) - joined).abs() < 1e-11);
    }

    #[test]
    fn binomials_and_double_factorials() {
        assert_eq!(binomial(4, 2), 6);
        assert_eq!(binomial(32, 16), 601_080_390);
        assert_eq!(binomial(3, 5), 0);
        assert_eq!(odd_double_factorial(0), 1);
        assert_eq!(odd_double_factorial(3), 15);
        assert_eq!(odd_double_factorial(6), 10395);
    }
}
