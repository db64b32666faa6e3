//! Exact terminal-outcome probabilities of a Fisher design.

use crate::config::StageSizes;
use crate::outcome::MAX_ARMS;

use super::engine::{stage_one, superset_mobius, StageTwo};
use super::FisherBoundaries;

/// Probability of every `(psi, stage2)` pair, indexed by
/// `psi | stage2 << K` (invalid codes stay zero).
pub(crate) fn outcome_table(sizes: &StageSizes, b: &FisherBoundaries, p: &[f64]) -> Vec<f64> {
    let k = b.k;
    let mut out = vec![0.0; 1 << (2 * k)];
    let st = stage_one(sizes, p, b.f1, &b.e1);
    for z1 in 0..=st.z1_max {
        for (rej, &v) in st.stop[z1].iter().enumerate() {
            out[rej] += v;
        }
    }
    for set in 1u32..1 << k {
        let m = set.count_ones() as usize;
        let local: Vec<usize> = (0..k).filter(|a| set >> a & 1 == 1).collect();
        let conts = &st.cont[set as usize];
        let active: Vec<usize> = (0..=st.z1_max)
            .filter(|&z| conts[z].iter().any(|&w| w > 0.0))
            .collect();
        if active.is_empty() {
            continue;
        }
        let two = StageTwo::new(sizes, p, set);
        let mut pattern = vec![0.0; 1 << m];
        let mut caps = [i64::MAX; MAX_ARMS];
        let mut acc = vec![0.0; 1 << m];
        for z2 in 0..=two.z2_max() {
            let slice = two.slice(z2);
            if slice.total <= 0.0 {
                continue;
            }
            for &z1 in &active {
                let rule = st.rules[z1];
                let width = rule.width();
                let e2 = b.e2(m, z1, z2);
                for (flat, &w) in conts[z1].iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let mut rest = flat;
                    let mut thr = [0i64; MAX_ARMS];
                    for t in thr.iter_mut().take(m) {
                        *t = e2 - (rule.lo + (rest % width) as i64) - 1;
                        rest /= width;
                    }
                    for (j, slot) in pattern.iter_mut().enumerate() {
                        for a in 0..m {
                            caps[a] = if j >> a & 1 == 1 { thr[a] } else { i64::MAX };
                        }
                        *slot = slice.cdf_at(&caps[..m]);
                    }
                    superset_mobius(&mut pattern, m);
                    for (j, v) in pattern.iter().enumerate() {
                        acc[j] += w * v;
                    }
                }
            }
        }
        // acc[j]: local arms in j accepted, the rest of the set rejected
        let full = (1usize << m) - 1;
        for (j, &v) in acc.iter().enumerate() {
            let rejected_local = full & !j;
            let psi = local
                .iter()
                .enumerate()
                .filter(|(a, _)| rejected_local >> a & 1 == 1)
                .fold(0u32, |mm, (_, &g)| mm | 1 << g);
            out[(psi | set << k) as usize] += v;
        }
    }
    out
}

/// `P(no null hypothesis rejected)`, skipping the per-pattern split.
pub(crate) fn no_reject(sizes: &StageSizes, b: &FisherBoundaries, p: &[f64]) -> f64 {
    let k = b.k;
    let st = stage_one(sizes, p, b.f1, &b.e1);
    let mut total: f64 = (0..=st.z1_max).map(|z| st.stop[z][0]).sum();
    let mut caps = [i64::MAX; MAX_ARMS];
    for set in 1u32..1 << k {
        let m = set.count_ones() as usize;
        let conts = &st.cont[set as usize];
        let active: Vec<usize> = (0..=st.z1_max)
            .filter(|&z| conts[z].iter().any(|&w| w > 0.0))
            .collect();
        if active.is_empty() {
            continue;
        }
        let two = StageTwo::new(sizes, p, set);
        for z2 in 0..=two.z2_max() {
            let slice = two.slice(z2);
            if slice.total <= 0.0 {
                continue;
            }
            for &z1 in &active {
                let rule = st.rules[z1];
                let width = rule.width();
                let e2 = b.e2(m, z1, z2);
                for (flat, &w) in conts[z1].iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let mut rest = flat;
                    for c in caps.iter_mut().take(m) {
                        *c = e2 - (rule.lo + (rest % width) as i64) - 1;
                        rest /= width;
                    }
                    total += w * slice.cdf_at(&caps[..m]);
                }
            }
        }
    }
    total
}

/// Expected sample size with the stage-one continuation pattern weighted by
/// its conditional law at `theta = 1` and `z1` drawn from `P(Z1 = z1 | p)`.
///
/// Agrees with the exact ESS whenever all odds ratios are one.
pub(crate) fn ess_null_conditional(sizes: &StageSizes, b: &FisherBoundaries, p: &[f64]) -> f64 {
    let k = b.k;
    let truth = stage_one(sizes, p, b.f1, &b.e1);
    let null = stage_one(sizes, &vec![0.5; k + 1], b.f1, &b.e1);
    let base = sizes.stage1_total(k) as f64;
    let mut ess = 0.0;
    for z1 in 0..=truth.z1_max {
        let g = null.g1[z1];
        if g <= 0.0 || truth.g1[z1] <= 0.0 {
            continue;
        }
        let extra: f64 = (1..1usize << k)
            .map(|s| {
                let m = (s as u32).count_ones();
                let w: f64 = null.cont[s][z1].iter().sum();
                w * (sizes.c2 + m * sizes.e2) as f64
            })
            .sum();
        ess += truth.g1[z1] * (base + extra / g);
    }
    ess
}
