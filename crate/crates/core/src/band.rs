use std::fmt;

/// Closed integer interval `[lo, hi]`; `i64::MIN`/`i64::MAX` stand for the
/// infinite ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Band {
    pub lo: i64,
    pub hi: i64,
}

impl Band {
    pub const ALL: Band = Band {
        lo: i64::MIN,
        hi: i64::MAX,
    };

    /// Open interval `(a, b)`.
    pub fn open(a: i64, b: i64) -> Self {
        Band {
            lo: a.saturating_add(1),
            hi: b.saturating_sub(1),
        }
    }

    /// `[a, inf)`.
    pub fn at_least(a: i64) -> Self {
        Band {
            lo: a,
            hi: i64::MAX,
        }
    }

    /// `(-inf, b]`.
    pub fn at_most(b: i64) -> Self {
        Band {
            lo: i64::MIN,
            hi: b,
        }
    }

    pub fn contains(&self, t: i64) -> bool {
        self.lo <= t && t <= self.hi
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    pub fn is_unbounded(&self) -> bool {
        *self == Band::ALL
    }

    pub fn intersect(&self, other: &Band) -> Band {
        Band {
            lo: self.lo.max(other.lo),
            hi: self.hi.min(other.hi),
        }
    }

    /// Shifts both finite ends by `d`.
    pub fn shift(&self, d: i64) -> Band {
        let mv = |v: i64| {
            if v == i64::MIN || v == i64::MAX {
                v
            } else {
                v + d
            }
        };
        Band {
            lo: mv(self.lo),
            hi: mv(self.hi),
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.lo == i64::MIN, self.hi == i64::MAX) {
            (true, true) => write!(f, "(-inf,inf)"),
            (true, false) => write!(f, "(-inf,{}]", self.hi),
            (false, true) => write!(f, "[{},inf)", self.lo),
            (false, false) => write!(f, "[{},{}]", self.lo, self.hi),
        }
    }
}

/// Probability mass of `x` in `[lo, hi]` from a prefix-sum table
/// (`cdf[i] = P(x <= i)`).
#[inline]
pub(crate) fn mass(cdf: &[f64], lo: i64, hi: i64) -> f64 {
    let top = cdf.len() as i64 - 1;
    let hi = hi.min(top);
    let lo = lo.max(0);
    if hi < lo {
        return 0.0;
    }
    let upper = cdf[hi as usize];
    if lo == 0 {
        upper
    } else {
        upper - cdf[lo as usize - 1]
    }
}

/// Upper tail `P(x >= v)` from a survival table (`surv[i] = P(x >= i)`).
#[inline]
pub(crate) fn upper_tail(surv: &[f64], v: i64) -> f64 {
    if v <= 0 {
        1.0
    } else if v as usize >= surv.len() {
        0.0
    } else {
        surv[v as usize]
    }
}

/// `P(x <= v)` from a cdf table.
#[inline]
pub(crate) fn lower_tail(cdf: &[f64], v: i64) -> f64 {
    if v < 0 {
        0.0
    } else if v as usize >= cdf.len() {
        1.0
    } else {
        cdf[v as usize]
    }
}

pub(crate) fn cdf_of(pmf: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    pmf.iter()
        .map(|&v| {
            acc += v;
            acc
        })
        .collect()
}

/// `surv[i] = P(x >= i)`, accumulated from the top for accuracy in the tail.
pub(crate) fn surv_of(pmf: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; pmf.len()];
    let mut acc = 0.0;
    for i in (0..pmf.len()).rev() {
        acc += pmf[i];
        out[i] = acc;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn open_band() {
        let b = Band::open(2, 5);
        assert!(!b.contains(2));
        assert!(b.contains(3) && b.contains(4));
        assert!(!b.contains(5));
        assert!(Band::open(2, 3).is_empty());
        assert_eq!(format!("{}", Band::at_least(4)), "[4,inf)");
        assert_eq!(Band::ALL.shift(3), Band::ALL);
    }

    #[test]
    fn tails() {
        let pmf = [0.25, 0.5, 0.25];
        let cdf = cdf_of(&pmf);
        let surv = surv_of(&pmf);
        assert_eq!(mass(&cdf, -3, 1), 0.75);
        assert_eq!(mass(&cdf, 1, 9), 0.75);
        assert_eq!(mass(&cdf, 2, 1), 0.0);
        assert_eq!(upper_tail(&surv, 2), 0.25);
        assert_eq!(upper_tail(&surv, -1), 1.0);
        assert_eq!(lower_tail(&cdf, 5), 1.0);
    }
}
