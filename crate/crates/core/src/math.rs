//! Exact discrete-probability kernel.
//!
//! Binomial coefficients are evaluated in log space from a cached table of
//! log-factorials, probabilities are exponentiated once and accumulated in
//! linear space.

use std::sync::OnceLock;

use crate::error::{Error, Result};

const LN_FACT_TABLE: usize = 4096;

fn ln_fact_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = vec![0.0; LN_FACT_TABLE];
        for i in 2..LN_FACT_TABLE {
            t[i] = t[i - 1] + (i as f64).ln();
        }
        t
    })
}

/// `ln(n!)`.
pub fn ln_factorial(n: u32) -> f64 {
    let n = n as usize;
    let table = ln_fact_table();
    if n < LN_FACT_TABLE {
        table[n]
    } else {
        // Stirling series; the table covers every group size used in practice.
        let x = n as f64 + 1.0;
        (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * x)
            - 1.0 / (360.0 * x.powi(3))
    }
}

/// Natural log of `C(n, x)`; `-inf` outside `0..=n` (so `C(0, x) = 1{x = 0}`).
pub fn binom_coeff_log(n: u32, x: i64) -> f64 {
    if x < 0 || x > n as i64 {
        return f64::NEG_INFINITY;
    }
    let x = x as u32;
    ln_factorial(n) - ln_factorial(x) - ln_factorial(n - x)
}

/// Binomial probability `C(n,x) p^x (1-p)^(n-x)`; zero outside the support.
pub fn binom_pmf(x: i64, n: u32, p: f64) -> f64 {
    if x < 0 || x > n as i64 {
        return 0.0;
    }
    if p <= 0.0 {
        return if x == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if x == n as i64 { 1.0 } else { 0.0 };
    }
    let xf = x as f64;
    let lp = binom_coeff_log(n, x) + xf * p.ln() + (n as f64 - xf) * (-p).ln_1p();
    lp.exp()
}

/// The full PMF `b(0..=n | n, p)`.
pub fn binom_pmf_vec(n: u32, p: f64) -> Vec<f64> {
    (0..=n as i64).map(|x| binom_pmf(x, n, p)).collect()
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for v in iter {
            s.add(v);
        }
        s
    }
}

/// Compensated sum of a slice.
pub fn stable_sum(values: &[f64]) -> f64 {
    values.iter().copied().collect::<CompensatedSum>().value()
}

/// Odds ratios of each experimental arm against the control.
///
/// Components are strictly positive for interior probabilities; boundary
/// probabilities map to the sentinels `0` and `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct OddsRatioVector {
    pub theta: Vec<f64>,
}

impl OddsRatioVector {
    pub fn ones(k: usize) -> Self {
        Self {
            theta: vec![1.0; k],
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Arms whose null hypothesis is true (`theta_k == 1`).
    pub fn null_mask(&self) -> u32 {
        self.theta
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == 1.0)
            .fold(0, |m, (k, _)| m | (1 << k))
    }

    /// A success-probability vector realising these odds ratios with `p_0 = 1/2`.
    pub fn to_probabilities(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.theta.len() + 1);
        p.push(0.5);
        for &t in &self.theta {
            p.push(if t.is_infinite() { 1.0 } else { t / (1.0 + t) });
        }
        p
    }
}

/// `theta_k = p_k (1 - p_0) / (p_0 (1 - p_k))` for `k = 1..K`.
///
/// Fails on boundary probabilities; use [`odds_ratio_vector_extended`] where
/// the sentinel mapping is wanted.
pub fn odds_ratio_vector(p: &[f64]) -> Result<OddsRatioVector> {
    if p.len() < 2 {
        return Err(Error::Degenerate(
            "need at least one experimental arm".into(),
        ));
    }
    if let Some(bad) = p.iter().find(|&&v| v <= 0.0 || v >= 1.0 || v.is_nan()) {
        return Err(Error::Degenerate(format!(
            "success probability {bad} is not in the open interval (0,1)"
        )));
    }
    Ok(odds_ratio_vector_extended(p))
}

/// Like [`odds_ratio_vector`] but maps boundary `p_k` to `0`/`+inf`
/// (ties at a boundary control probability give `1`).
pub fn odds_ratio_vector_extended(p: &[f64]) -> OddsRatioVector {
    let p0 = p[0];
    let theta = p[1..]
        .iter()
        .map(|&pk| {
            if pk == p0 {
                1.0
            } else if pk <= 0.0 || p0 >= 1.0 {
                0.0
            } else if pk >= 1.0 || p0 <= 0.0 {
                f64::INFINITY
            } else {
                pk * (1.0 - p0) / (p0 * (1.0 - pk))
            }
        })
        .collect();
    OddsRatioVector { theta }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn choose_exact(n: u64, x: u64) -> f64 {
        (1..=x).fold(1.0, |acc, i| acc * (n - x + i) as f64 / i as f64)
    }

    #[test]
    fn coefficient_examples() {
        assert_eq!(binom_coeff_log(0, 0), 0.0);
        assert_abs_diff_eq!(binom_coeff_log(5, 2), 10f64.ln(), epsilon = 1e-14);
        assert_eq!(binom_coeff_log(3, 4), f64::NEG_INFINITY);
        assert_eq!(binom_coeff_log(0, 1), f64::NEG_INFINITY);
        assert_eq!(binom_coeff_log(4, -1), f64::NEG_INFINITY);
    }

    #[test]
    fn pmf_examples() {
        assert_abs_diff_eq!(binom_pmf(1, 2, 0.5), 0.5, epsilon = 1e-15);
        // 10 * 0.09 * 0.343
        assert_abs_diff_eq!(binom_pmf(2, 5, 0.3), 0.3087, epsilon = 1e-13);
        assert_eq!(binom_pmf(0, 0, 0.7), 1.0);
        assert_eq!(binom_pmf(6, 5, 0.3), 0.0);
        assert_eq!(binom_pmf(0, 4, 0.0), 1.0);
        assert_eq!(binom_pmf(4, 4, 1.0), 1.0);
        assert_eq!(binom_pmf(3, 4, 1.0), 0.0);
    }

    #[test]
    fn pmf_matches_factorial_arithmetic() {
        for n in 0..=30u64 {
            for x in 0..=n {
                let p: f64 = 0.37;
                let direct = choose_exact(n, x) * p.powi(x as i32) * (1.0 - p).powi((n - x) as i32);
                let got = binom_pmf(x as i64, n as u32, p);
                assert!((got - direct).abs() <= 1e-13 * direct.max(1e-300) + 1e-300);
            }
        }
    }

    #[test]
    fn pmf_sums_to_one_and_is_symmetric() {
        for n in 0..=60u32 {
            for i in 0..=20 {
                let p = i as f64 * 0.05;
                let v = binom_pmf_vec(n, p);
                assert_abs_diff_eq!(stable_sum(&v), 1.0, epsilon = 1e-9);
                for x in 0..=n as i64 {
                    let a = binom_pmf(x, n, p);
                    let b = binom_pmf(n as i64 - x, n, 1.0 - p);
                    assert_abs_diff_eq!(a, b, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn odds_ratio_examples() {
        assert_eq!(odds_ratio_vector(&[0.5, 0.5]).unwrap().theta, vec![1.0]);
        let t = odds_ratio_vector(&[0.7, 0.85]).unwrap().theta;
        assert_abs_diff_eq!(t[0], 0.85 * 0.3 / (0.7 * 0.15), epsilon = 1e-12);
        assert_abs_diff_eq!(t[0], 2.428_571_428_571_4, epsilon = 1e-12);
        let t = odds_ratio_vector(&[0.7, 0.7, 0.85]).unwrap().theta;
        assert_eq!(t[0], 1.0);
        assert_abs_diff_eq!(t[1], 2.428_571_428_571_4, epsilon = 1e-12);
    }

    #[test]
    fn odds_ratio_degenerate() {
        assert!(odds_ratio_vector(&[0.0, 0.3]).is_err());
        assert!(odds_ratio_vector(&[0.3, 1.0]).is_err());
        let ext = odds_ratio_vector_extended(&[0.0, 0.0, 0.2]);
        assert_eq!(ext.theta, vec![1.0, f64::INFINITY]);
        let ext = odds_ratio_vector_extended(&[0.4, 0.0, 1.0]);
        assert_eq!(ext.theta, vec![0.0, f64::INFINITY]);
    }

    #[test]
    fn odds_ratio_monotone() {
        let mut last = 0.0;
        for i in 1..99 {
            let pk = i as f64 / 100.0;
            let t = odds_ratio_vector(&[0.4, pk]).unwrap().theta[0];
            assert!(t > last);
            last = t;
        }
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::new();
        s.add(1.0);
        for _ in 0..1000 {
            s.add(1e-17);
        }
        s.add(-1.0);
        assert_abs_diff_eq!(s.value(), 1e-14, epsilon = 1e-20);
    }
}
