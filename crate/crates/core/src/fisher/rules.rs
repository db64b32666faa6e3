//! Boundary determination: stage-one error spending, the futility bound, and
//! stage-two boundaries from the unspent error.

use crate::config::{grid_values, Control, StageSizes};
use crate::math::{binom_pmf_vec, OddsRatioVector};

use super::engine::{stage_one, StageOne, StageTwo, StageTwoSlice};

/// Comparison used for every "probability at most cap" rule.
#[inline]
pub(crate) fn within(v: f64, cap: f64) -> bool {
    v <= cap + 1e-12 * cap.abs() + 1e-15
}

/// Odds-ratio vectors over which error rates are maximised.
///
/// Weak control uses `theta = 1` only. Strong control uses the log-spaced
/// grid `2^-6, ..., 2^6` per component. The boundaries treat arms
/// symmetrically, so only sorted vectors are kept, and at least one arm must
/// have a true null for a familywise error to be possible.
pub fn theta_domain(k: usize, control: Control) -> Vec<OddsRatioVector> {
    match control {
        Control::Weak => vec![OddsRatioVector::ones(k)],
        Control::Strong => {
            let levels: Vec<f64> = (-6..=6).map(|e| 2f64.powi(e)).collect();
            let mut out = Vec::new();
            let mut idx = vec![0usize; k];
            loop {
                if idx.windows(2).all(|w| w[0] <= w[1]) {
                    let theta: Vec<f64> = idx.iter().map(|&i| levels[i]).collect();
                    if theta.contains(&1.0) {
                        out.push(OddsRatioVector { theta });
                    }
                }
                let mut carry = true;
                for v in idx.iter_mut() {
                    if *v + 1 < levels.len() {
                        *v += 1;
                        carry = false;
                        break;
                    }
                    *v = 0;
                }
                if carry {
                    break;
                }
            }
            out
        }
    }
}

/// `alpha_I1(z1 | e, theta)` for every `z1` and every `e` in `[-c1, e1 + 1]`.
#[derive(Debug, Clone)]
pub struct AlphaI1Table {
    pub e_lo: i64,
    /// `rows[z1][e - e_lo]`
    pub rows: Vec<Vec<f64>>,
}

impl AlphaI1Table {
    pub fn compute(sizes: &StageSizes, theta: &OddsRatioVector) -> Self {
        let k = theta.len();
        let p = theta.to_probabilities();
        let null = theta.null_mask();
        let z1_max = sizes.stage1_total(k) as usize;
        let e_lo = -(sizes.c1 as i64);
        let width = (sizes.c1 + sizes.e1 + 2) as usize;
        // hist[z1][t - e_lo] of the largest null-arm statistic; the last
        // column collects lattices that cannot reject any null
        let mut hist = vec![vec![0.0; width + 1]; z1_max + 1];
        let b0 = binom_pmf_vec(sizes.c1, p[0]);
        let bk: Vec<Vec<f64>> = p[1..].iter().map(|&q| binom_pmf_vec(sizes.e1, q)).collect();
        let top = sizes.e1 as usize;
        let mut idx = vec![0usize; k];
        'outer: loop {
            let w_arms: f64 = idx.iter().zip(&bk).map(|(&x, b)| b[x]).product();
            if w_arms > 0.0 {
                let s: usize = idx.iter().sum();
                for (x0, &w0) in b0.iter().enumerate() {
                    let w = w0 * w_arms;
                    if w == 0.0 {
                        continue;
                    }
                    let max_null = idx
                        .iter()
                        .enumerate()
                        .filter(|(a, _)| null >> a & 1 == 1)
                        .map(|(_, &x)| x as i64 - x0 as i64)
                        .max();
                    let col = match max_null {
                        Some(t) => (t - e_lo) as usize,
                        None => width,
                    };
                    hist[x0 + s][col] += w;
                }
            }
            for v in idx.iter_mut() {
                if *v < top {
                    *v += 1;
                    continue 'outer;
                }
                *v = 0;
            }
            break;
        }
        let rows = hist
            .into_iter()
            .map(|h| {
                let g: f64 = h.iter().sum();
                let mut row = vec![0.0; width];
                let mut acc = 0.0;
                for i in (0..width).rev() {
                    acc += h[i];
                    row[i] = if g > 0.0 { acc / g } else { 0.0 };
                }
                row
            })
            .collect();
        Self { e_lo, rows }
    }

    /// Elementwise maximum over several odds-ratio vectors.
    pub fn max_of(tables: &[AlphaI1Table]) -> AlphaI1Table {
        let mut out = tables[0].clone();
        for t in &tables[1..] {
            for (r, s) in out.rows.iter_mut().zip(&t.rows) {
                for (a, b) in r.iter_mut().zip(s) {
                    *a = a.max(*b);
                }
            }
        }
        out
    }

    pub fn z1_max(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn value(&self, z1: usize, e: i64) -> f64 {
        let row = &self.rows[z1];
        let i = e - self.e_lo;
        if i <= 0 {
            row[0]
        } else if i as usize >= row.len() {
            0.0
        } else {
            row[i as usize]
        }
    }

    /// Minimal `e` per `z1` with `alpha_I1 <= alpha1`.
    pub fn boundaries(&self, alpha1: f64) -> Vec<i64> {
        self.rows
            .iter()
            .map(|row| {
                let i = row
                    .iter()
                    .position(|&v| within(v, alpha1))
                    .unwrap_or(row.len() - 1);
                self.e_lo + i as i64
            })
            .collect()
    }

    /// Error spent at stage one for each `z1` under the given boundaries.
    pub fn spent(&self, e1: &[i64]) -> Vec<f64> {
        e1.iter()
            .enumerate()
            .map(|(z1, &e)| self.value(z1, e))
            .collect()
    }
}

/// `alpha_I1(z1 | e1z1, theta)`.
pub fn alpha_i1(z1: usize, e1z1: i64, theta: &OddsRatioVector, sizes: &StageSizes) -> f64 {
    AlphaI1Table::compute(sizes, theta).value(z1, e1z1)
}

/// `beta_II1(z1 | f1, theta)`: conditional probability that arm 1 is at or
/// below the futility bound.
pub fn beta_ii1(z1: usize, f1: i64, theta: &OddsRatioVector, sizes: &StageSizes) -> f64 {
    let k = theta.len();
    let p = theta.to_probabilities();
    let z1_max = sizes.stage1_total(k) as usize;
    if z1 > z1_max {
        return 0.0;
    }
    // reuse the lattice walk with a rejection threshold above every T
    let never = vec![sizes.e1 as i64 + 1; z1_max + 1];
    let st = stage_one(sizes, &p, f1, &never);
    joint_arm1_accept(&st, z1) / st.g1[z1]
}

fn joint_arm1_accept(st: &StageOne, z1: usize) -> f64 {
    // with no rejections possible, arm 1 accepted <=> arm 1 not in the
    // continuing set
    let mut v = st.stop[z1][0];
    for (set, w) in st.cont.iter().enumerate().skip(1) {
        if set & 1 == 0 {
            v += w[z1].iter().sum::<f64>();
        }
    }
    v
}

/// `sum_z1 beta_II1(z1 | f1, theta(p)) g(z1 | p)` via the conditional route.
pub fn marginal_type_two_conditional(f1: i64, p: &[f64], sizes: &StageSizes) -> f64 {
    let z1_max = sizes.stage1_total(p.len() - 1) as usize;
    let never = vec![sizes.e1 as i64 + 1; z1_max + 1];
    let st = stage_one(sizes, p, f1, &never);
    (0..=z1_max).map(|z| joint_arm1_accept(&st, z)).sum()
}

/// Worst-case (over `p`) distribution function of `T_11 = x_11 - x_01` when
/// arm 1 has success probability `p + delta_1`.
#[derive(Debug, Clone)]
pub struct BetaCurve {
    pub t_lo: i64,
    pub max_cdf: Vec<f64>,
}

impl BetaCurve {
    pub fn compute(sizes: &StageSizes, delta1: f64, max_delta: f64, p_step: f64) -> Self {
        let t_lo = -(sizes.c1 as i64);
        let width = (sizes.c1 + sizes.e1 + 1) as usize;
        let mut max_cdf = vec![0.0f64; width];
        for p in grid_values(0.0, 1.0 - max_delta, p_step) {
            let b0 = binom_pmf_vec(sizes.c1, p);
            let b1 = binom_pmf_vec(sizes.e1, (p + delta1).min(1.0));
            let mut pmf = vec![0.0; width];
            for (x0, &u) in b0.iter().enumerate() {
                for (x1, &v) in b1.iter().enumerate() {
                    pmf[x1 + sizes.c1 as usize - x0] += u * v;
                }
            }
            let mut acc = 0.0;
            for (m, v) in max_cdf.iter_mut().zip(pmf) {
                acc += v;
                *m = m.max(acc);
            }
        }
        Self { t_lo, max_cdf }
    }

    /// Largest `f1` whose worst-case stage-one type-II error is at most
    /// `beta1`; `-c1 - 1` when none qualifies.
    pub fn f1_for(&self, beta1: f64) -> i64 {
        match self.max_cdf.iter().rposition(|&v| within(v, beta1)) {
            Some(i) => self.t_lo + i as i64,
            None => self.t_lo - 1,
        }
    }

    pub fn value(&self, f1: i64) -> f64 {
        let i = f1 - self.t_lo;
        if i < 0 {
            0.0
        } else if i as usize >= self.max_cdf.len() {
            1.0
        } else {
            self.max_cdf[i as usize]
        }
    }
}

/// Precomputed pieces of the stage-two rule at one odds-ratio vector.
struct E2Context {
    st: StageOne,
    null: u32,
    p: Vec<f64>,
    wsum: Vec<Vec<f64>>,
}

impl E2Context {
    fn new(sizes: &StageSizes, theta: &OddsRatioVector, f1: i64, e1: &[i64]) -> Self {
        let p = theta.to_probabilities();
        let st = stage_one(sizes, &p, f1, e1);
        let wsum = st
            .cont
            .iter()
            .map(|per_z| per_z.iter().map(|w| w.iter().sum()).collect())
            .collect();
        Self {
            st,
            null: theta.null_mask(),
            p,
            wsum,
        }
    }

    /// Sets of size `m` containing at least one true-null arm.
    fn sets(&self, m: usize) -> Vec<u32> {
        (1u32..1 << self.st.k)
            .filter(|s| s.count_ones() as usize == m && s & self.null != 0)
            .collect()
    }

    /// Joint probability (given `z1`, `z2`) of continuing with the arms of
    /// `sets` and rejecting at least one continuing true null at stage two.
    fn alpha(&self, sets: &[u32], slices: &[StageTwoSlice], z1: usize, e2: i64) -> f64 {
        let g1 = self.st.g1[z1];
        if g1 <= 0.0 {
            return 0.0;
        }
        let rule = self.st.rules[z1];
        let width = rule.width();
        let mut total = 0.0;
        for (&set, slice) in sets.iter().zip(slices) {
            let wsum = self.wsum[set as usize][z1];
            if wsum == 0.0 || slice.total <= 0.0 {
                continue;
            }
            let w = &self.st.cont[set as usize][z1];
            let m = slice.m;
            let null_local: Vec<bool> = (0..self.st.k)
                .filter(|a| set >> a & 1 == 1)
                .map(|a| self.null >> a & 1 == 1)
                .collect();
            let mut caps = [i64::MAX; crate::outcome::MAX_ARMS];
            let mut kept = 0.0;
            for (flat, &wt) in w.iter().enumerate() {
                if wt == 0.0 {
                    continue;
                }
                let mut rest = flat;
                for a in 0..m {
                    let t = rule.lo + (rest % width) as i64;
                    rest /= width;
                    caps[a] = if null_local[a] { e2 - t - 1 } else { i64::MAX };
                }
                kept += wt * slice.cdf_at(&caps[..m]);
            }
            total += wsum - kept / slice.total;
        }
        (total / g1).max(0.0)
    }
}

/// `alpha_I2(m, z2, z1 | e2)` for stage-one boundaries `(f1, e1)`.
#[allow(clippy::too_many_arguments)]
pub fn alpha_i2(
    m: usize,
    z2: usize,
    z1: usize,
    e2: i64,
    f1: i64,
    e1: &[i64],
    theta: &OddsRatioVector,
    sizes: &StageSizes,
) -> f64 {
    let ctx = E2Context::new(sizes, theta, f1, e1);
    let sets = ctx.sets(m);
    let slices: Vec<StageTwoSlice> = sets
        .iter()
        .map(|&s| StageTwo::new(sizes, &ctx.p, s))
        .map(|t| {
            if z2 <= t.z2_max() {
                t.slice(z2)
            } else {
                empty_slice(&t)
            }
        })
        .collect();
    ctx.alpha(&sets, &slices, z1, e2)
}

fn empty_slice(t: &StageTwo) -> StageTwoSlice {
    let mut s = t.slice(0);
    s.cdf.iter_mut().for_each(|v| *v = 0.0);
    s.total = 0.0;
    s
}

/// Stage-two rejection boundaries `e2[m-1][z1][z2]`.
///
/// Each entry is the smallest integer in the reachable range whose stage-two
/// error is at most `(alpha - spent[z1]) / K`, maximised over `thetas`.
pub fn determine_e2(
    sizes: &StageSizes,
    alpha: f64,
    f1: i64,
    e1: &[i64],
    spent: &[f64],
    thetas: &[OddsRatioVector],
) -> Vec<Vec<Vec<i64>>> {
    let k = thetas[0].len();
    let z1_max = sizes.stage1_total(k) as usize;
    let c2 = sizes.c2 as i64;
    let e2n = sizes.e2 as i64;
    let range = |z1: usize| {
        let lo = f1 + 1 - c2;
        let hi = (e1[z1] - 1).max(f1) + e2n + 1;
        (lo, hi)
    };
    let mut out: Vec<Vec<Vec<i64>>> = (1..=k)
        .map(|m| vec![vec![i64::MIN; sizes.stage2_total(m) as usize + 1]; z1_max + 1])
        .collect();
    for theta in thetas {
        let ctx = E2Context::new(sizes, theta, f1, e1);
        for m in 1..=k {
            let sets = ctx.sets(m);
            let twos: Vec<StageTwo> = sets
                .iter()
                .map(|&s| StageTwo::new(sizes, &ctx.p, s))
                .collect();
            let z2_max = sizes.stage2_total(m) as usize;
            for z2 in 0..=z2_max {
                let slices: Vec<StageTwoSlice> = twos.iter().map(|t| t.slice(z2)).collect();
                for z1 in 0..=z1_max {
                    let (lo, hi) = range(z1);
                    let cap = (alpha - spent[z1]) / k as f64;
                    let e = if cap < 0.0 {
                        hi
                    } else if sets.is_empty() || ctx.st.rules[z1].width() == 0 {
                        lo
                    } else {
                        // smallest e in [lo, hi] with alpha(e) <= cap; alpha(hi) = 0
                        let (mut a, mut b) = (lo, hi);
                        while a < b {
                            let mid = a + (b - a) / 2;
                            if within(ctx.alpha(&sets, &slices, z1, mid), cap) {
                                b = mid;
                            } else {
                                a = mid + 1;
                            }
                        }
                        a
                    };
                    let cell = &mut out[m - 1][z1][z2];
                    *cell = (*cell).max(e);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AllocationRatios;

    #[test]
    fn theta_domain_sizes() {
        assert_eq!(theta_domain(2, Control::Weak).len(), 1);
        assert_eq!(theta_domain(1, Control::Strong).len(), 1);
        // sorted pairs with at least one 1: 13 choices of the partner
        assert_eq!(theta_domain(2, Control::Strong).len(), 13);
        assert!(theta_domain(3, Control::Strong)
            .iter()
            .all(|t| t.theta.contains(&1.0)));
    }

    #[test]
    fn alpha_i1_extremes() {
        let s = AllocationRatios::default().sizes(3).unwrap();
        let one = OddsRatioVector::ones(2);
        let t = AlphaI1Table::compute(&s, &one);
        for z1 in 0..=t.z1_max() {
            assert!((t.value(z1, -3) - 1.0).abs() < 1e-12);
            assert_eq!(t.value(z1, 4), 0.0);
            assert_eq!(t.value(z1, 100), 0.0);
        }
        let e1 = t.boundaries(0.1);
        for (z1, &e) in e1.iter().enumerate() {
            assert!(t.value(z1, e) <= 0.1 + 1e-12);
            assert!(t.value(z1, e - 1) > 0.1);
        }
    }

    #[test]
    fn e1_nonincreasing_in_alpha1() {
        let s = AllocationRatios::default().sizes(10).unwrap();
        let t = AlphaI1Table::compute(&s, &OddsRatioVector::ones(2));
        let mut prev = t.boundaries(0.01);
        for a in grid_values(0.02, 0.14, 0.01) {
            let cur = t.boundaries(a);
            assert!(cur.iter().zip(&prev).all(|(c, p)| c <= p));
            prev = cur;
        }
    }

    #[test]
    fn beta_extremes_and_marginal_identity() {
        let s = AllocationRatios::default().sizes(4).unwrap();
        let th = OddsRatioVector {
            theta: vec![2.0, 1.0],
        };
        for z1 in 0..=12 {
            assert_eq!(beta_ii1(z1, -5, &th, &s), 0.0);
            assert!((beta_ii1(z1, 4, &th, &s) - 1.0).abs() < 1e-12);
        }
        let p = [0.4, 0.55, 0.55];
        for f1 in -4..=4 {
            let direct: f64 = {
                let b0 = binom_pmf_vec(4, 0.4);
                let b1 = binom_pmf_vec(4, 0.55);
                let mut v = 0.0;
                for (x0, u) in b0.iter().enumerate() {
                    for (x1, w) in b1.iter().enumerate() {
                        if x1 as i64 - x0 as i64 <= f1 {
                            v += u * w;
                        }
                    }
                }
                v
            };
            assert!((marginal_type_two_conditional(f1, &p, &s) - direct).abs() < 1e-13);
        }
    }

    #[test]
    fn f1_monotone_in_beta1() {
        let s = AllocationRatios::default().sizes(20).unwrap();
        let c = BetaCurve::compute(&s, 0.15, 0.15, 0.01);
        let mut prev = c.f1_for(1e-12);
        let tiny = BetaCurve::compute(
            &AllocationRatios::default().sizes(3).unwrap(),
            0.15,
            0.15,
            0.01,
        );
        assert_eq!(tiny.f1_for(1e-4), -4);
        for b in grid_values(0.01, 0.19, 0.01) {
            let f = c.f1_for(b);
            assert!(f >= prev);
            assert!(c.value(f) <= b + 1e-12 && c.value(f + 1) > b);
            prev = f;
        }
    }

    #[test]
    fn e2_minimal_and_within_budget() {
        let s = AllocationRatios::default().sizes(4).unwrap();
        let one = OddsRatioVector::ones(2);
        let t = AlphaI1Table::compute(&s, &one);
        let e1 = t.boundaries(0.05);
        let spent = t.spent(&e1);
        let f1 = -1;
        let e2 = determine_e2(&s, 0.15, f1, &e1, &spent, std::slice::from_ref(&one));
        for m in 1..=2 {
            for z1 in 0..e1.len() {
                for z2 in 0..e2[m - 1][z1].len() {
                    let e = e2[m - 1][z1][z2];
                    let cap = (0.15 - spent[z1]) / 2.0;
                    let a = alpha_i2(m, z2, z1, e, f1, &e1, &one, &s);
                    assert!(a <= cap + 1e-12);
                    if e > f1 + 1 - s.c2 as i64 {
                        assert!(alpha_i2(m, z2, z1, e - 1, f1, &e1, &one, &s) > cap);
                    }
                }
            }
        }
    }
}
