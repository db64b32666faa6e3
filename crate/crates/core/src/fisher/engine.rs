//! Unconditional building blocks shared by outcome probabilities and boundary
//! determination.
//!
//! Everything here is expressed as joint probabilities at a success vector
//! `p`. Conditional quantities given `z_j` follow by dividing by `P(Z_j = z_j)`;
//! the conditional law depends on `p` only through the odds ratios, so the
//! boundary rules evaluate these blocks at a pseudo vector with `p_0 = 1/2`.

use crate::config::StageSizes;
use crate::math::binom_pmf_vec;

/// Stage-one classification thresholds for one value of `z1`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StageOneRule {
    /// continuation band on `T_k1` is `[lo, hi]` (possibly empty)
    pub lo: i64,
    pub hi: i64,
}

impl StageOneRule {
    pub fn new(f1: i64, e1: i64) -> Self {
        Self {
            lo: f1 + 1,
            hi: e1 - 1,
        }
    }

    pub fn width(&self) -> usize {
        (self.hi - self.lo + 1).max(0) as usize
    }
}

/// Odometer over `(n+1)^len` tuples.
fn advance(idx: &mut [usize], top: usize) -> bool {
    for v in idx.iter_mut() {
        if *v < top {
            *v += 1;
            return true;
        }
        *v = 0;
    }
    false
}

/// Result of enumerating the stage-one lattice.
#[derive(Debug, Clone)]
pub(crate) struct StageOne {
    pub k: usize,
    pub z1_max: usize,
    /// `P(Z1 = z1)`
    pub g1: Vec<f64>,
    /// `P(Z1 = z1, stop at stage one with rejection set R)`, indexed `[z1][R]`
    /// (`R = 0` is the all-accepted outcome)
    pub stop: Vec<Vec<f64>>,
    /// `W[S][z1][T_S]`: joint probability that exactly the arms in `S`
    /// continue with stage-one statistics `T_S` (flattened over the band,
    /// first arm fastest) and every other arm is accepted
    pub cont: Vec<Vec<Vec<f64>>>,
    pub rules: Vec<StageOneRule>,
}

/// Enumerates every stage-one lattice point once.
pub(crate) fn stage_one(sizes: &StageSizes, p: &[f64], f1: i64, e1: &[i64]) -> StageOne {
    let k = p.len() - 1;
    let z1_max = sizes.stage1_total(k) as usize;
    let b0 = binom_pmf_vec(sizes.c1, p[0]);
    let bk: Vec<Vec<f64>> = p[1..]
        .iter()
        .map(|&pk| binom_pmf_vec(sizes.e1, pk))
        .collect();
    let rules: Vec<StageOneRule> = e1.iter().map(|&e| StageOneRule::new(f1, e)).collect();
    let n_sets = 1usize << k;
    let mut g1 = vec![0.0; z1_max + 1];
    let mut stop = vec![vec![0.0; n_sets]; z1_max + 1];
    let mut cont: Vec<Vec<Vec<f64>>> = (0..n_sets)
        .map(|s| {
            let m = (s as u32).count_ones();
            rules
                .iter()
                .map(|r| {
                    if s == 0 {
                        Vec::new()
                    } else {
                        vec![0.0; r.width().pow(m)]
                    }
                })
                .collect()
        })
        .collect();

    let top = sizes.e1 as usize;
    let mut idx = vec![0usize; k];
    loop {
        let w_arms: f64 = idx.iter().zip(&bk).map(|(&x, b)| b[x]).product();
        if w_arms > 0.0 {
            let s_arms: usize = idx.iter().sum();
            for (x0, &w0) in b0.iter().enumerate() {
                if w0 == 0.0 {
                    continue;
                }
                let w = w0 * w_arms;
                let z1 = x0 + s_arms;
                g1[z1] += w;
                let rule = rules[z1];
                let mut rej = 0usize;
                let mut set = 0usize;
                for (a, &x) in idx.iter().enumerate() {
                    let t = x as i64 - x0 as i64;
                    if t > rule.hi {
                        rej |= 1 << a;
                    } else if t >= rule.lo {
                        set |= 1 << a;
                    }
                }
                if rej != 0 || set == 0 {
                    stop[z1][rej] += w;
                } else {
                    let width = rule.width();
                    let mut flat = 0usize;
                    let mut mult = 1usize;
                    for (a, &x) in idx.iter().enumerate() {
                        if set >> a & 1 == 1 {
                            flat += (x as i64 - x0 as i64 - rule.lo) as usize * mult;
                            mult *= width;
                        }
                    }
                    cont[set][z1][flat] += w;
                }
            }
        }
        if !advance(&mut idx, top) {
            break;
        }
    }
    StageOne {
        k,
        z1_max,
        g1,
        stop,
        cont,
        rules,
    }
}

/// Joint CDF of the stage-two increments `U_k = x_k2 - x02` over a set of
/// present arms, one slice per stage-two total `z2`.
#[derive(Debug, Clone)]
pub(crate) struct StageTwoSlice {
    pub m: usize,
    /// `c2`: `U = -c2` maps to index 0
    pub offset: i64,
    pub width: usize,
    /// cumulative in every dimension, first arm fastest
    pub cdf: Vec<f64>,
    /// `P(Z2 = z2)` for this presence pattern
    pub total: f64,
}

impl StageTwoSlice {
    /// `P(Z2 = z2, U_a <= caps[a])`; `i64::MAX` leaves a coordinate free.
    #[inline]
    pub fn cdf_at(&self, caps: &[i64]) -> f64 {
        let mut flat = 0usize;
        let mut mult = 1usize;
        for &c in caps {
            let i = if c == i64::MAX {
                self.width as i64 - 1
            } else {
                c + self.offset
            };
            if i < 0 {
                return 0.0;
            }
            let i = (i as usize).min(self.width - 1);
            flat += i * mult;
            mult *= self.width;
        }
        self.cdf[flat]
    }
}

/// Stage-two tables for the arms in `set` (bitmask) at probabilities `p`.
pub(crate) struct StageTwo {
    pub m: usize,
    b0: Vec<f64>,
    bk: Vec<Vec<f64>>,
    c2: usize,
    e2: usize,
}

impl StageTwo {
    pub fn new(sizes: &StageSizes, p: &[f64], set: u32) -> Self {
        let arms: Vec<usize> = (0..p.len() - 1).filter(|a| set >> a & 1 == 1).collect();
        Self {
            m: arms.len(),
            b0: binom_pmf_vec(sizes.c2, p[0]),
            bk: arms
                .iter()
                .map(|&a| binom_pmf_vec(sizes.e2, p[1 + a]))
                .collect(),
            c2: sizes.c2 as usize,
            e2: sizes.e2 as usize,
        }
    }

    pub fn z2_max(&self) -> usize {
        self.c2 + self.m * self.e2
    }

    /// Builds the slice for one `z2`.
    pub fn slice(&self, z2: usize) -> StageTwoSlice {
        let m = self.m;
        let width = self.c2 + self.e2 + 1;
        let mut cdf = vec![0.0; width.pow(m as u32)];
        let mut total = 0.0;
        let mut idx = vec![0usize; m.saturating_sub(1)];
        for (x0, &w0) in self.b0.iter().enumerate() {
            if w0 == 0.0 || x0 > z2 {
                continue;
            }
            idx.iter_mut().for_each(|v| *v = 0);
            loop {
                let partial: usize = idx.iter().sum();
                if x0 + partial <= z2 {
                    let last = z2 - x0 - partial;
                    if last <= self.e2 {
                        let mut w = w0 * self.bk[m - 1][last];
                        for (a, &x) in idx.iter().enumerate() {
                            w *= self.bk[a][x];
                        }
                        if w > 0.0 {
                            let mut flat = 0usize;
                            let mut mult = 1usize;
                            for &x in idx.iter().chain(std::iter::once(&last)) {
                                flat += (x + self.c2 - x0) * mult;
                                mult *= width;
                            }
                            cdf[flat] += w;
                            total += w;
                        }
                    }
                }
                if !advance(&mut idx, self.e2) {
                    break;
                }
            }
        }
        // prefix sums along each dimension
        let mut stride = 1usize;
        for _ in 0..m {
            let block = stride * width;
            for start in (0..cdf.len()).step_by(block) {
                for j in 1..width {
                    for s in 0..stride {
                        let i = start + j * stride + s;
                        cdf[i] += cdf[i - stride];
                    }
                }
            }
            stride = block;
        }
        StageTwoSlice {
            m,
            offset: self.c2 as i64,
            width,
            cdf,
            total,
        }
    }
}

/// In-place inversion from "all of `J` below their caps" probabilities to
/// exact patterns: afterwards `a[A]` is the probability that exactly the
/// coordinates in `A` are below their caps.
pub(crate) fn superset_mobius(a: &mut [f64], m: usize) {
    for bit in 0..m {
        for mask in 0..a.len() {
            if mask >> bit & 1 == 0 {
                a[mask] -= a[mask | 1 << bit];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AllocationRatios;

    #[test]
    fn stage_one_mass_is_complete() {
        let s = AllocationRatios::default().sizes(3).unwrap();
        let p = [0.3, 0.5, 0.6];
        let z1_max = s.stage1_total(2) as usize;
        let e1: Vec<i64> = (0..=z1_max).map(|z| 1 + (z as i64 % 3)).collect();
        let st = stage_one(&s, &p, -1, &e1);
        let mut total: f64 = st.g1.iter().sum();
        assert!((total - 1.0).abs() < 1e-13);
        total = 0.0;
        for z in 0..=z1_max {
            total += st.stop[z].iter().sum::<f64>();
            for set in 1..4 {
                total += st.cont[set][z].iter().sum::<f64>();
            }
        }
        assert!((total - 1.0).abs() < 1e-13);
    }

    #[test]
    fn slice_cdf_matches_direct_count() {
        let s = AllocationRatios::default().sizes(2).unwrap();
        let p = [0.4, 0.3, 0.7];
        let st = StageTwo::new(&s, &p, 0b11);
        let b = |n: u32, x: usize, q: f64| crate::math::binom_pmf(x as i64, n, q);
        for z2 in 0..=st.z2_max() {
            let slice = st.slice(z2);
            for u1 in -3i64..=3 {
                for u2 in -3i64..=3 {
                    let mut direct = 0.0;
                    for x0 in 0..=2usize {
                        for x1 in 0..=2usize {
                            for x2 in 0..=2usize {
                                if x0 + x1 + x2 == z2
                                    && x1 as i64 - x0 as i64 <= u1
                                    && x2 as i64 - x0 as i64 <= u2
                                {
                                    direct += b(2, x0, 0.4) * b(2, x1, 0.3) * b(2, x2, 0.7);
                                }
                            }
                        }
                    }
                    assert!((slice.cdf_at(&[u1, u2]) - direct).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn mobius_two_dims() {
        // P(A below), P(B below), P(both below), total
        let (pa, pb, pab, tot) = (0.5, 0.4, 0.3, 1.0);
        let mut a = [tot, pa, pb, pab];
        superset_mobius(&mut a, 2);
        assert!((a[3] - 0.3).abs() < 1e-15);
        assert!((a[1] - 0.2).abs() < 1e-15);
        assert!((a[2] - 0.1).abs() < 1e-15);
        assert!((a[0] - 0.4).abs() < 1e-15);
    }
}
