//! Two-stage design based on exact binomial tests of `T_kj` against fixed
//! boundaries `f = (f1, f2)`, `e = (e1, e2)` with `e2 = f2 + 1`.

use serde::{Deserialize, Serialize};

use crate::band::{cdf_of, lower_tail, mass, surv_of, upper_tail, Band};
use crate::config::{AllocationRatios, StageSizes, TrialConfig};
use crate::error::{Error, Result};
use crate::math::binom_pmf_vec;
use crate::outcome::{OutcomePair, OutcomeSpace, MAX_ARMS};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinomialDesign {
    #[serde(rename = "K")]
    pub k: usize,
    pub n: u32,
    pub f: [i64; 2],
    pub e: [i64; 2],
    pub ratios: RatiosKey,
}

/// Allocation ratios stored bit-exactly so designs can be hashed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "AllocationRatios", into = "AllocationRatios")]
pub struct RatiosKey([u64; 3]);

impl From<AllocationRatios> for RatiosKey {
    fn from(r: AllocationRatios) -> Self {
        RatiosKey([r.r_c2.to_bits(), r.r_e1.to_bits(), r.r_e2.to_bits()])
    }
}

impl From<RatiosKey> for AllocationRatios {
    fn from(k: RatiosKey) -> Self {
        AllocationRatios {
            r_c2: f64::from_bits(k.0[0]),
            r_e1: f64::from_bits(k.0[1]),
            r_e2: f64::from_bits(k.0[2]),
        }
    }
}

impl BinomialDesign {
    pub fn new(
        k: usize,
        n: u32,
        f: [i64; 2],
        e: [i64; 2],
        ratios: AllocationRatios,
    ) -> Result<Self> {
        let d = Self {
            k,
            n,
            f,
            e,
            ratios: ratios.into(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn ratios(&self) -> AllocationRatios {
        self.ratios.into()
    }

    pub fn sizes(&self) -> StageSizes {
        self.ratios()
            .sizes(self.n)
            .expect("validated design has integral group sizes")
    }

    /// Checks membership in the design space (any `n` with integral sizes).
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > MAX_ARMS {
            return Err(Error::ArmCount(self.k));
        }
        let s = self.ratios().sizes(self.n).ok_or_else(|| {
            Error::Validation(format!("group sizes not integral for n={}", self.n))
        })?;
        let [f1, f2] = self.f;
        let [e1, e2] = self.e;
        let (c1, a1, c2, a2) = (s.c1 as i64, s.e1 as i64, s.c2 as i64, s.e2 as i64);
        let fail = |msg: String| Err(Error::Validation(msg));
        if e2 != f2 + 1 {
            return fail(format!("e2 ({e2}) must equal f2 + 1 ({})", f2 + 1));
        }
        if f1 >= e1 - 1 {
            return fail(format!("need f1 < e1 - 1, got f1={f1}, e1={e1}"));
        }
        if !(-c1..=a1 - 2).contains(&f1) {
            return fail(format!("f1={f1} outside [{}, {}]", -c1, a1 - 2));
        }
        if !(-c1 + 2..=a1).contains(&e1) {
            return fail(format!("e1={e1} outside [{}, {}]", -c1 + 2, a1));
        }
        if !(f1 + 1 - c2..=e1 - 1 + a2).contains(&f2) {
            return fail(format!(
                "f2={f2} outside [{}, {}]",
                f1 + 1 - c2,
                e1 - 1 + a2
            ));
        }
        Ok(())
    }

    /// `n (r_C2 + K r_E2)`.
    pub fn max_sample_size(&self) -> u32 {
        self.sizes().max_total(self.k)
    }
}

/// `T_kj = sum_{m<=j} x_km - sum_{m<=j} x_0m` for each arm.
///
/// `control[m]` and `arms[k][m]` are the stage-`m+1` success counts.
pub fn test_statistics(control: &[i64], arms: &[Vec<i64>], stage: usize) -> Vec<i64> {
    let c: i64 = control[..stage].iter().sum();
    arms.iter()
        .map(|a| a[..stage].iter().sum::<i64>() - c)
        .collect()
}

/// Range of `T_kj` consistent with outcome `o` (arm `k` zero-based, `stage` 1 or 2).
pub fn band_e(k: usize, stage: u8, o: &OutcomePair, d: &BinomialDesign) -> Band {
    let omega = o.omega(k);
    let j = stage as usize;
    let (f, e) = (d.f[j - 1], d.e[j - 1]);
    if stage < omega {
        Band::open(d.f[0], d.e[0])
    } else if stage > omega {
        Band::ALL
    } else if o.psi(k) {
        Band::at_least(e)
    } else if stage == o.last_stage() && o.rejects_any() {
        Band::at_most(e - 1)
    } else {
        Band::at_most(f)
    }
}

/// Stage-wise binomial tables for every arm at one probability vector.
#[derive(Debug, Clone)]
pub(crate) struct ArmTables {
    pub pmf1: Vec<f64>,
    pub cdf1: Vec<f64>,
    pub surv1: Vec<f64>,
    pub pmf2: Vec<f64>,
    pub cdf2: Vec<f64>,
    pub surv2: Vec<f64>,
}

impl ArmTables {
    pub fn new(n1: u32, n2: u32, p: f64) -> Self {
        let pmf1 = binom_pmf_vec(n1, p);
        let pmf2 = binom_pmf_vec(n2, p);
        Self {
            cdf1: cdf_of(&pmf1),
            surv1: surv_of(&pmf1),
            cdf2: cdf_of(&pmf2),
            surv2: surv_of(&pmf2),
            pmf1,
            pmf2,
        }
    }

    /// `P(x1 - x01 in b1, x1 + x2 - x01 - x02 in b2)`.
    fn joint(&self, x01: i64, x02: i64, b1: Band, b2: Band) -> f64 {
        let b1 = b1.shift(x01);
        if b2.is_unbounded() {
            return mass(&self.cdf1, b1.lo, b1.hi);
        }
        let lo = b1.lo.max(0);
        let hi = b1.hi.min(self.pmf1.len() as i64 - 1);
        let mut acc = 0.0;
        for x1 in lo..=hi {
            let b2s = b2.shift(x01 + x02 - x1);
            acc += self.pmf1[x1 as usize] * mass(&self.cdf2, b2s.lo, b2s.hi);
        }
        acc
    }
}

fn arm_tables(s: &StageSizes, p: &[f64]) -> (ArmTables, Vec<ArmTables>) {
    let control = ArmTables::new(s.c1, s.c2, p[0]);
    let arms = p[1..]
        .iter()
        .map(|&pk| ArmTables::new(s.e1, s.e2, pk))
        .collect();
    (control, arms)
}

/// Exact probability of terminal outcome `o` under `p`.
///
/// Conditions on the control counts `(x01, x02)`, given which the arms are
/// independent, so each arm contributes the probability of its own pair of
/// bands.
pub fn outcome_prob_binomial(d: &BinomialDesign, p: &[f64], o: &OutcomePair) -> f64 {
    let s = d.sizes();
    let (control, arms) = arm_tables(&s, p);
    let bands: Vec<(Band, Band)> = (0..d.k)
        .map(|k| (band_e(k, 1, o, d), band_e(k, 2, o, d)))
        .collect();
    let needs_stage2 = bands.iter().any(|(_, b2)| !b2.is_unbounded());
    let mut total = 0.0;
    for x01 in 0..=s.c1 as i64 {
        let w1 = control.pmf1[x01 as usize];
        if w1 == 0.0 {
            continue;
        }
        if !needs_stage2 {
            let prod: f64 = arms
                .iter()
                .zip(&bands)
                .map(|(a, &(b1, b2))| a.joint(x01, 0, b1, b2))
                .product();
            total += w1 * prod;
            continue;
        }
        for x02 in 0..=s.c2 as i64 {
            let w = w1 * control.pmf2[x02 as usize];
            if w == 0.0 {
                continue;
            }
            let prod: f64 = arms
                .iter()
                .zip(&bands)
                .map(|(a, &(b1, b2))| a.joint(x01, x02, b1, b2))
                .product();
            total += w * prod;
        }
    }
    total
}

/// Probabilities of every outcome in `space` (same order).
pub fn outcome_distribution(d: &BinomialDesign, p: &[f64], space: &OutcomeSpace) -> Vec<f64> {
    let s = d.sizes();
    let k = d.k;
    let (control, arms) = arm_tables(&s, p);
    let [f1, f2] = d.f;
    let [e1, e2] = d.e;
    let acc_hi = f1.min(e1 - 1);
    let mut probs = vec![0.0; space.len()];
    let full = (1u32 << k) - 1;

    let mut rej1 = vec![0.0; k];
    let mut notrej1 = vec![0.0; k];
    let mut acc1 = vec![0.0; k];
    let mut crej = vec![0.0; k];
    let mut cacc = vec![0.0; k];
    for x01 in 0..=s.c1 as i64 {
        let w1 = control.pmf1[x01 as usize];
        if w1 == 0.0 {
            continue;
        }
        for (a, arm) in arms.iter().enumerate() {
            rej1[a] = upper_tail(&arm.surv1, x01 + e1);
            notrej1[a] = lower_tail(&arm.cdf1, x01 + e1 - 1);
            acc1[a] = lower_tail(&arm.cdf1, x01 + acc_hi);
        }
        for r in 1..=full {
            let pr: f64 = (0..k)
                .map(|a| if r >> a & 1 == 1 { rej1[a] } else { notrej1[a] })
                .product();
            probs[space.index_of_masks(r, 0)] += w1 * pr;
        }
        probs[space.index_of_masks(0, 0)] += w1 * acc1.iter().product::<f64>();

        let cont_lo = x01 + f1 + 1;
        let cont_hi = x01 + e1 - 1;
        for x02 in 0..=s.c2 as i64 {
            let w = w1 * control.pmf2[x02 as usize];
            if w == 0.0 {
                continue;
            }
            for (a, arm) in arms.iter().enumerate() {
                let (mut r, mut q) = (0.0, 0.0);
                for x1 in cont_lo.max(0)..=cont_hi.min(s.e1 as i64) {
                    let pm = arm.pmf1[x1 as usize];
                    // T2 = x1 - x01 + x2 - x02
                    let shift = x01 + x02 - x1;
                    r += pm * upper_tail(&arm.surv2, e2 + shift);
                    q += pm * lower_tail(&arm.cdf2, f2 + shift);
                }
                crej[a] = r;
                cacc[a] = q;
            }
            for st in 1..=full {
                let base: f64 = (0..k)
                    .filter(|a| st >> a & 1 == 0)
                    .map(|a| acc1[a])
                    .product();
                if base == 0.0 {
                    continue;
                }
                // enumerate rejection patterns R within st
                let mut r = st;
                loop {
                    let pr: f64 = (0..k)
                        .filter(|a| st >> a & 1 == 1)
                        .map(|a| if r >> a & 1 == 1 { crej[a] } else { cacc[a] })
                        .product();
                    probs[space.index_of_masks(r, st)] += w * base * pr;
                    if r == 0 {
                        break;
                    }
                    r = (r - 1) & st;
                }
            }
        }
    }
    probs
}

/// Fast evaluator for the design search: all designs with the same `n` and
/// probability vector share the binomial tables.
#[derive(Debug, Clone)]
pub struct BinomialKernel {
    sizes: StageSizes,
    control: ArmTables,
    arms: Vec<ArmTables>,
    /// index of the first arm with identical probability, for power shortcuts
    distinct: Vec<(usize, u32)>,
}

impl BinomialKernel {
    pub fn new(sizes: StageSizes, p: &[f64]) -> Self {
        let (control, arms) = arm_tables(&sizes, p);
        let mut distinct: Vec<(usize, u32)> = Vec::new();
        for k in 0..arms.len() {
            match distinct.iter_mut().find(|(j, _)| p[1 + *j] == p[1 + k]) {
                Some(slot) => slot.1 += 1,
                None => distinct.push((k, 1)),
            }
        }
        Self {
            sizes,
            control,
            arms,
            distinct,
        }
    }

    pub fn sizes(&self) -> &StageSizes {
        &self.sizes
    }

    /// `P(no hypothesis rejected)`.
    pub fn no_reject(&self, f1: i64, e1: i64, f2: i64) -> f64 {
        let s = &self.sizes;
        let e2 = f2 + 1;
        let mut total = 0.0;
        for x01 in 0..=s.c1 as i64 {
            let w1 = self.control.pmf1[x01 as usize];
            if w1 < 1e-300 {
                continue;
            }
            let cont_lo = (x01 + f1 + 1).max(0);
            let cont_hi = (x01 + e1 - 1).min(s.e1 as i64);
            let mut inner = 0.0;
            for x02 in 0..=s.c2 as i64 {
                let w2 = self.control.pmf2[x02 as usize];
                if w2 < 1e-300 {
                    continue;
                }
                let mut prod = 1.0;
                for &(a, mult) in &self.distinct {
                    let arm = &self.arms[a];
                    let mut crej = 0.0;
                    for x1 in cont_lo..=cont_hi {
                        crej += arm.pmf1[x1 as usize] * upper_tail(&arm.surv2, e2 + x01 + x02 - x1);
                    }
                    let keep = lower_tail(&arm.cdf1, x01 + e1 - 1) - crej;
                    prod *= keep.max(0.0).powi(mult as i32);
                }
                inner += w2 * prod;
            }
            total += w1 * inner;
        }
        total
    }

    /// `P(some arm rejected at stage one)`; equals the rejection probability
    /// for the largest admissible `f2`.
    pub fn stage1_reject(&self, e1: i64) -> f64 {
        let mut none = 0.0;
        for x01 in 0..=self.sizes.c1 as i64 {
            let w1 = self.control.pmf1[x01 as usize];
            let mut prod = 1.0;
            for &(a, mult) in &self.distinct {
                prod *= lower_tail(&self.arms[a].cdf1, x01 + e1 - 1).powi(mult as i32);
            }
            none += w1 * prod;
        }
        1.0 - none
    }

    /// `P(every arm accepted at stage one)`.
    pub fn stage1_all_accept(&self, f1: i64) -> f64 {
        let mut total = 0.0;
        for x01 in 0..=self.sizes.c1 as i64 {
            let w1 = self.control.pmf1[x01 as usize];
            let mut prod = 1.0;
            for &(a, mult) in &self.distinct {
                prod *= lower_tail(&self.arms[a].cdf1, x01 + f1).powi(mult as i32);
            }
            total += w1 * prod;
        }
        total
    }

    /// Expected total sample size; depends on stage-one boundaries only.
    pub fn ess(&self, f1: i64, e1: i64) -> f64 {
        let s = &self.sizes;
        let k = self.arms.len();
        let mut p_stage2 = 0.0;
        let mut arm_cont = 0.0;
        let mut m = vec![0.0; k];
        let mut r = vec![0.0; k];
        for x01 in 0..=s.c1 as i64 {
            let w1 = self.control.pmf1[x01 as usize];
            if w1 == 0.0 {
                continue;
            }
            for (a, arm) in self.arms.iter().enumerate() {
                m[a] = lower_tail(&arm.cdf1, x01 + e1 - 1);
                r[a] = lower_tail(&arm.cdf1, x01 + f1.min(e1 - 1));
            }
            let pm: f64 = m.iter().product();
            let pr: f64 = r.iter().product();
            p_stage2 += w1 * (pm - pr);
            for a in 0..k {
                let others: f64 = (0..k).filter(|&b| b != a).map(|b| m[b]).product();
                arm_cont += w1 * (m[a] - r[a]) * others;
            }
        }
        s.stage1_total(k) as f64 + s.c2 as f64 * p_stage2 + s.e2 as f64 * arm_cont
    }
}

/// Every design in the design space for this `n`, ordered by ascending
/// `(f1, e1, f2)`. Empty when the group sizes are not integral.
pub fn enumerate_design_space(cfg: &TrialConfig, n: u32) -> Vec<BinomialDesign> {
    let Some(s) = cfg.ratios.sizes(n) else {
        return Vec::new();
    };
    let (c1, a1, c2, a2) = (s.c1 as i64, s.e1 as i64, s.c2 as i64, s.e2 as i64);
    let mut out = Vec::new();
    for f1 in -c1..=a1 - 2 {
        for e1 in (f1 + 2).max(-c1 + 2)..=a1 {
            for f2 in f1 + 1 - c2..=e1 - 1 + a2 {
                out.push(BinomialDesign {
                    k: cfg.k,
                    n,
                    f: [f1, f2],
                    e: [e1, f2 + 1],
                    ratios: cfg.ratios.into(),
                });
            }
        }
    }
    out
}

/// Stage-one boundary pairs `(f1, e1)` of the design space for this `n`.
pub fn stage1_pairs(s: &StageSizes) -> Vec<(i64, i64)> {
    let (c1, a1) = (s.c1 as i64, s.e1 as i64);
    let mut out = Vec::new();
    for f1 in -c1..=a1 - 2 {
        for e1 in (f1 + 2).max(-c1 + 2)..=a1 {
            out.push((f1, e1));
        }
    }
    out
}

/// Admissible `f2` range for given stage-one boundaries.
pub fn f2_range(s: &StageSizes, f1: i64, e1: i64) -> (i64, i64) {
    (f1 + 1 - s.c2 as i64, e1 - 1 + s.e2 as i64)
}

/// Runs the binomial conduct on observed stage counts.
///
/// `stage2` is consulted only when the study continues.
pub fn conduct_binomial(
    d: &BinomialDesign,
    stage1: &[i64],
    stage2: Option<&[i64]>,
) -> Result<OutcomePair> {
    if stage1.len() != d.k + 1 {
        return Err(Error::Validation(format!(
            "expected {} stage-one counts",
            d.k + 1
        )));
    }
    let t1: Vec<i64> = stage1[1..].iter().map(|x| x - stage1[0]).collect();
    let mut psi = 0u32;
    let mut decided = 0u32;
    for (k, &t) in t1.iter().enumerate() {
        if t >= d.e[0] {
            psi |= 1 << k;
            decided |= 1 << k;
        } else if t <= d.f[0] {
            decided |= 1 << k;
        }
    }
    let full = (1u32 << d.k) - 1;
    if psi != 0 || decided == full {
        return Ok(OutcomePair::from_masks(d.k, psi, 0));
    }
    let cont = full & !decided;
    let x2 = stage2.ok_or_else(|| Error::Validation("stage-two counts required".into()))?;
    if x2.len() != d.k + 1 {
        return Err(Error::Validation(format!(
            "expected {} stage-two counts",
            d.k + 1
        )));
    }
    for k in 0..d.k {
        if cont >> k & 1 == 1 && t1[k] + x2[k + 1] - x2[0] >= d.e[1] {
            psi |= 1 << k;
        }
    }
    Ok(OutcomePair::from_masks(d.k, psi, cont))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn design(k: usize, n: u32, f: [i64; 2], e: [i64; 2]) -> BinomialDesign {
        BinomialDesign::new(k, n, f, e, AllocationRatios::default()).unwrap()
    }

    #[test]
    fn statistics() {
        assert_eq!(test_statistics(&[3], &[vec![5]], 1), vec![2]);
        assert_eq!(test_statistics(&[3, 4], &[vec![5, 2]], 2), vec![0]);
        assert_eq!(test_statistics(&[0], &[vec![0], vec![0]], 1), vec![0, 0]);
    }

    #[test]
    fn band_cases() {
        let d = design(2, 10, [1, 4], [5, 5]);
        let stage2 = OutcomePair::new(&[1, 0], &[2, 2]).unwrap();
        assert_eq!(band_e(0, 1, &stage2, &d), Band::open(1, 5));
        assert_eq!(band_e(0, 2, &stage2, &d), Band::at_least(5));
        assert_eq!(band_e(1, 2, &stage2, &d), Band::at_most(4));
        let early = OutcomePair::new(&[1, 0], &[1, 1]).unwrap();
        assert_eq!(band_e(0, 1, &early, &d), Band::at_least(5));
        assert_eq!(band_e(1, 1, &early, &d), Band::at_most(4));
        assert_eq!(band_e(0, 2, &early, &d), Band::ALL);
        let dropped = OutcomePair::new(&[0, 1], &[1, 2]).unwrap();
        assert_eq!(band_e(0, 1, &dropped, &d), Band::at_most(1));
        assert_eq!(band_e(1, 2, &dropped, &d), Band::at_least(5));
    }

    #[test]
    fn distribution_sums_to_one_and_matches_single_outcomes() {
        let d = design(2, 4, [0, 2], [3, 3]);
        let space = OutcomeSpace::enumerate(2).unwrap();
        for p in [
            [0.3, 0.3, 0.3],
            [0.2, 0.6, 0.4],
            [0.0, 0.5, 1.0],
            [0.5, 0.5, 0.9],
        ] {
            let probs = outcome_distribution(&d, &p, &space);
            assert_abs_diff_eq!(probs.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            for (o, &pr) in space.iter().zip(&probs) {
                assert_abs_diff_eq!(outcome_prob_binomial(&d, &p, o), pr, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn kernel_matches_distribution() {
        let d = design(2, 6, [0, 3], [3, 4]);
        let space = OutcomeSpace::enumerate(2).unwrap();
        for p in [[0.4, 0.4, 0.4], [0.3, 0.45, 0.45], [0.2, 0.5, 0.35]] {
            let probs = outcome_distribution(&d, &p, &space);
            let no_rej: f64 = space
                .iter()
                .zip(&probs)
                .filter(|(o, _)| !o.rejects_any())
                .map(|(_, p)| p)
                .sum();
            let kern = BinomialKernel::new(d.sizes(), &p);
            assert_abs_diff_eq!(kern.no_reject(0, 3, 3), no_rej, epsilon = 1e-13);
        }
    }

    #[test]
    fn design_space_rules() {
        let cfg = TrialConfig::example(1);
        let designs = enumerate_design_space(&cfg, 2);
        // f1 in {-2,-1,0}; e1 in {max(f1+2,0)..2}; f2 in {f1-1..e1+1}
        let mut expected = 0;
        for f1 in -2i64..=0 {
            for e1 in (f1 + 2).max(0)..=2 {
                expected += (e1 + 1) - (f1 - 1) + 1;
            }
        }
        assert_eq!(designs.len() as i64, expected);
        assert!(designs
            .iter()
            .all(|d| d.e[1] == d.f[1] + 1 && d.validate().is_ok()));
        let mut odd = cfg.clone();
        odd.ratios.r_e1 = 1.5;
        odd.ratios.r_e2 = 3.0;
        assert!(enumerate_design_space(&odd, 3).is_empty());
    }

    #[test]
    fn conduct_rules() {
        let d = design(2, 10, [0, 4], [4, 5]);
        let o = conduct_binomial(&d, &[5, 9, 6], None).unwrap();
        assert_eq!((o.psi_vec(), o.omega_vec()), (vec![1, 0], vec![1, 1]));
        let o = conduct_binomial(&d, &[5, 5, 3], None).unwrap();
        assert_eq!((o.psi_vec(), o.omega_vec()), (vec![0, 0], vec![1, 1]));
        let o = conduct_binomial(&d, &[5, 7, 3], Some(&[4, 7, 0])).unwrap();
        assert_eq!((o.psi_vec(), o.omega_vec()), (vec![1, 0], vec![2, 1]));
        assert!(conduct_binomial(&d, &[5, 7, 3], None).is_err());
    }

    #[test]
    fn ess_kernel_matches_distribution() {
        let d = design(2, 5, [0, 2], [3, 3]);
        let space = OutcomeSpace::enumerate(2).unwrap();
        let p = [0.35, 0.5, 0.45];
        let probs = outcome_distribution(&d, &p, &space);
        let s = d.sizes();
        let ess: f64 = space
            .iter()
            .zip(&probs)
            .map(|(o, pr)| {
                let mut total = s.c1 + 2 * s.e1;
                if o.last_stage() == 2 {
                    total += s.c2;
                }
                total += s.e2 * o.stage2_mask().count_ones();
                total as f64 * pr
            })
            .sum();
        assert_abs_diff_eq!(BinomialKernel::new(s, &p).ess(0, 3), ess, epsilon = 1e-12);
    }
}
