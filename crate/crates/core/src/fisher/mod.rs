//! Two-stage design built on conditional (Fisher exact) tests.
//!
//! Stage-one rejection bounds depend on the stage-one success total `z1`,
//! stage-two bounds on `(m, z1, z2)` with `m` the number of continuing arms.

mod conditional;
mod engine;
mod prob;
mod rules;
mod search;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::band::Band;
use crate::config::{AllocationRatios, Control, StageSizes};
use crate::error::{Error, Result};
use crate::outcome::{OutcomePair, OutcomeSpace, MAX_ARMS};

pub use conditional::{conditional_pmf, g_pmf, g_pmf_vec, StagePresence};
pub use rules::{
    alpha_i1, alpha_i2, beta_ii1, determine_e2, marginal_type_two_conditional, theta_domain,
    AlphaI1Table, BetaCurve,
};
pub use search::{find_min_n, fixed_stage_one, power_check, FisherSweep, StageOneCache, SweepCell};

/// Stopping boundaries of a Fisher design.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FisherBoundaries {
    pub k: usize,
    pub f1: i64,
    /// `e1[z1]`
    pub e1: Vec<i64>,
    /// `f2[m - 1][z1][z2]`; `e2 = f2 + 1`
    pub f2: Vec<Vec<Vec<i64>>>,
}

impl FisherBoundaries {
    #[inline]
    pub fn e2(&self, m: usize, z1: usize, z2: usize) -> i64 {
        self.f2[m - 1][z1][z2] + 1
    }

    pub fn f2_at(&self, m: usize, z1: usize, z2: usize) -> i64 {
        self.f2[m - 1][z1][z2]
    }

    /// Effective acceptance bound at `z1`. Rejection takes precedence, so
    /// when `e1[z1] <= f1` the acceptance region ends at `e1[z1] - 1`.
    pub fn accept_bound(&self, z1: usize) -> i64 {
        self.f1.min(self.e1[z1] - 1)
    }

    /// Checks that the maps cover their full index ranges.
    pub fn check_shape(&self, sizes: &StageSizes) -> Result<()> {
        let z1_len = sizes.stage1_total(self.k) as usize + 1;
        if self.e1.len() != z1_len {
            return Err(Error::Validation(format!(
                "e1 has {} entries, expected {z1_len}",
                self.e1.len()
            )));
        }
        if self.f2.len() != self.k {
            return Err(Error::Validation(format!(
                "f2 has {} m-blocks, expected {}",
                self.f2.len(),
                self.k
            )));
        }
        for (i, block) in self.f2.iter().enumerate() {
            let z2_len = sizes.stage2_total(i + 1) as usize + 1;
            if block.len() != z1_len || block.iter().any(|row| row.len() != z2_len) {
                return Err(Error::Validation(format!(
                    "f2 block m={} must be {z1_len} x {z2_len}",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// How the stage-one boundaries are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StageOneRule {
    /// `e1` from the `alpha1` spending cap, `f1` from the `beta1` cap.
    Spending { alpha1: f64, beta1: f64 },
    /// Boundaries imposed from outside (e.g. a fixed reference rule).
    Imposed { f1: i64, e1: Vec<i64> },
}

/// Everything the boundaries are regenerated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherSpec {
    #[serde(rename = "K")]
    pub k: usize,
    pub n: u32,
    pub alpha: f64,
    /// `(0, delta_1, ..., delta_K)`
    pub delta: Vec<f64>,
    pub p_grid_step: f64,
    pub control: Control,
    pub ratios: AllocationRatios,
    pub stage_one: StageOneRule,
}

/// A fully determined Fisher design.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherDesign {
    pub spec: FisherSpec,
    pub boundaries: FisherBoundaries,
    sizes: StageSizes,
}

impl FisherDesign {
    /// Determines all boundaries from the specification.
    pub fn build(spec: FisherSpec) -> Result<Self> {
        let sizes = spec_sizes(&spec)?;
        let cache = StageOneCache::new(&sizes, spec.k, spec.control, &spec.delta, spec.p_grid_step);
        Self::build_with(spec, &cache)
    }

    /// As [`FisherDesign::build`], reusing stage-one tables for this `n`.
    pub fn build_with(spec: FisherSpec, cache: &StageOneCache) -> Result<Self> {
        let sizes = spec_sizes(&spec)?;
        if cache.sizes != sizes {
            return Err(Error::Consistency(
                "stage-one cache built for a different n".into(),
            ));
        }
        let (f1, e1) = match &spec.stage_one {
            StageOneRule::Spending { alpha1, beta1 } => {
                if !(*alpha1 > 0.0 && *alpha1 < spec.alpha) || !(*beta1 > 0.0 && *beta1 < 1.0) {
                    return Err(Error::Config(format!(
                        "alpha1 must lie in (0, alpha) and beta1 in (0, 1); got {alpha1}, {beta1}"
                    )));
                }
                (cache.f1_for(*beta1), cache.e1_for(*alpha1))
            }
            StageOneRule::Imposed { f1, e1 } => {
                if e1.len() != sizes.stage1_total(spec.k) as usize + 1 {
                    return Err(Error::Validation(
                        "imposed e1 does not cover every z1".into(),
                    ));
                }
                (*f1, e1.clone())
            }
        };
        let boundaries = cache.complete(spec.alpha, f1, e1);
        Ok(Self {
            spec,
            boundaries,
            sizes,
        })
    }

    /// A design from explicit boundaries, used for audits and oracles.
    pub fn from_boundaries(spec: FisherSpec, boundaries: FisherBoundaries) -> Result<Self> {
        let sizes = spec_sizes(&spec)?;
        if boundaries.k != spec.k {
            return Err(Error::ArmCount(boundaries.k));
        }
        boundaries.check_shape(&sizes)?;
        Ok(Self {
            spec,
            boundaries,
            sizes,
        })
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    pub fn n(&self) -> u32 {
        self.spec.n
    }

    pub fn sizes(&self) -> &StageSizes {
        &self.sizes
    }

    pub fn max_sample_size(&self) -> u32 {
        self.sizes.max_total(self.spec.k)
    }

    pub fn alpha1(&self) -> Option<f64> {
        match self.spec.stage_one {
            StageOneRule::Spending { alpha1, .. } => Some(alpha1),
            StageOneRule::Imposed { .. } => None,
        }
    }

    pub fn beta1(&self) -> Option<f64> {
        match self.spec.stage_one {
            StageOneRule::Spending { beta1, .. } => Some(beta1),
            StageOneRule::Imposed { .. } => None,
        }
    }

    /// Probabilities over `space`, in its canonical order.
    pub fn outcome_distribution(&self, p: &[f64], space: &OutcomeSpace) -> Vec<f64> {
        let table = prob::outcome_table(&self.sizes, &self.boundaries, p);
        space.iter().map(|o| table[o.code()]).collect()
    }

    /// `P(no hypothesis rejected | p)`.
    pub fn no_reject_probability(&self, p: &[f64]) -> f64 {
        prob::no_reject(&self.sizes, &self.boundaries, p)
    }

    /// ESS with the stage-one continuation law taken at `theta = 1`
    /// given `z1`; see [`prob::ess_null_conditional`].
    pub fn ess_null_conditional(&self, p: &[f64]) -> f64 {
        prob::ess_null_conditional(&self.sizes, &self.boundaries, p)
    }

    /// Regenerates the boundaries and compares them with the stored ones.
    pub fn revalidate(&self) -> Result<()> {
        let fresh = Self::build(self.spec.clone())?;
        if fresh.boundaries != self.boundaries {
            return Err(Error::Consistency(
                "stored boundaries differ from those regenerated from the design parameters".into(),
            ));
        }
        Ok(())
    }

    pub fn to_file(&self) -> FisherDesignFile {
        let b = &self.boundaries;
        let mut f2 = BTreeMap::new();
        for (i, block) in b.f2.iter().enumerate() {
            let rows: BTreeMap<Index, Vec<i64>> = block
                .iter()
                .cloned()
                .enumerate()
                .map(|(z, r)| (Index(z), r))
                .collect();
            f2.insert(Index(i + 1), rows);
        }
        FisherDesignFile {
            method: "fisher".into(),
            n: self.spec.n,
            alpha1: self.alpha1(),
            beta1: self.beta1(),
            control: self.spec.control,
            ratios: self.spec.ratios,
            spec: self.spec.clone(),
            f1: b.f1,
            e1: b.e1.clone(),
            f2,
        }
    }

    /// Loads a design file, rebuilding and cross-checking the boundaries.
    pub fn from_file(file: &FisherDesignFile) -> Result<Self> {
        if file.method != "fisher" {
            return Err(Error::Validation(format!(
                "expected method \"fisher\", got \"{}\"",
                file.method
            )));
        }
        if file.n != file.spec.n
            || file.control != file.spec.control
            || file.ratios != file.spec.ratios
        {
            return Err(Error::Validation(
                "design header disagrees with its parameter block".into(),
            ));
        }
        let k = file.spec.k;
        let mut f2 = Vec::with_capacity(k);
        for m in 1..=k {
            let block = file
                .f2
                .get(&Index(m))
                .ok_or_else(|| Error::Validation(format!("f2 is missing block m={m}")))?;
            let rows: Vec<Vec<i64>> = block.values().cloned().collect();
            if block.keys().enumerate().any(|(i, z)| i != z.0) {
                return Err(Error::Validation(format!("f2 block m={m} has gaps in z1")));
            }
            f2.push(rows);
        }
        let stored = FisherBoundaries {
            k,
            f1: file.f1,
            e1: file.e1.clone(),
            f2,
        };
        let d = Self::from_boundaries(file.spec.clone(), stored)?;
        d.revalidate()?;
        Ok(d)
    }
}

fn spec_sizes(spec: &FisherSpec) -> Result<StageSizes> {
    if spec.k == 0 || spec.k > MAX_ARMS {
        return Err(Error::ArmCount(spec.k));
    }
    if spec.delta.len() != spec.k + 1 {
        return Err(Error::Config("delta must have K+1 entries".into()));
    }
    spec.ratios.validate()?;
    spec.ratios
        .sizes(spec.n)
        .ok_or_else(|| Error::Config(format!("n = {} does not give integral group sizes", spec.n)))
}

/// On-disk Fisher design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherDesignFile {
    pub method: String,
    pub n: u32,
    pub alpha1: Option<f64>,
    pub beta1: Option<f64>,
    pub control: Control,
    pub ratios: AllocationRatios,
    pub spec: FisherSpec,
    pub f1: i64,
    pub e1: Vec<i64>,
    /// `f2[m][z1][z2]`
    pub f2: BTreeMap<Index, BTreeMap<Index, Vec<i64>>>,
}

/// Integer map key. Besides numbers it accepts the decimal strings that JSON
/// object keys become when serde buffers a document, e.g. under a tagged
/// enum whose tag comes after the content.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Index(pub usize);

impl<'de> Deserialize<'de> for Index {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = Index;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a non-negative integer or its decimal string")
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<Index, E> {
                usize::try_from(v).map(Index).map_err(E::custom)
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<Index, E> {
                v.parse().map(Index).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

/// Stage-one interval `B_F1` on `T_k1` for outcome `o` (zero-based arm `k`).
pub fn band_f1(k: usize, z1: usize, o: &OutcomePair, b: &FisherBoundaries) -> Band {
    let e1 = b.e1[z1];
    if o.omega(k) == 2 {
        Band::open(b.f1, e1)
    } else if o.psi(k) {
        Band::at_least(e1)
    } else if o.last_stage() == 1 && o.rejects_any() {
        Band::at_most(e1 - 1)
    } else {
        // accepted at stage one, whether or not the study continued
        Band::at_most(b.accept_bound(z1))
    }
}

/// Stage-two interval `B_F2` on `T_k2`; `m` is the number of arms in stage two.
pub fn band_f2(k: usize, z1: usize, z2: usize, o: &OutcomePair, b: &FisherBoundaries) -> Band {
    if o.omega(k) == 1 {
        return Band::ALL;
    }
    let m = o.stage2_mask().count_ones() as usize;
    let e2 = b.e2(m, z1, z2);
    if o.psi(k) {
        Band::at_least(e2)
    } else {
        Band::at_most(e2 - 1)
    }
}

/// `P(o | p)` for a Fisher design.
pub fn outcome_prob_fisher(d: &FisherDesign, p: &[f64], o: &OutcomePair) -> f64 {
    prob::outcome_table(&d.sizes, &d.boundaries, p)[o.code()]
}

fn check_counts(x: &[i64], k: usize, control_max: u32, arm_max: u32, stage: u8) -> Result<()> {
    if x.len() != k + 1 {
        return Err(Error::Validation(format!(
            "stage {stage} data must have K+1 = {} counts",
            k + 1
        )));
    }
    for (i, &v) in x.iter().enumerate() {
        let max = if i == 0 { control_max } else { arm_max };
        if v < 0 || v > max as i64 {
            return Err(Error::Validation(format!(
                "stage {stage} count {v} for group {i} outside [0, {max}]"
            )));
        }
    }
    Ok(())
}

/// Runs the decision rules on observed success counts `(x_0, x_1, ..., x_K)`
/// per stage. Stage-two entries of dropped arms are ignored.
pub fn conduct_fisher(
    d: &FisherDesign,
    stage1: &[i64],
    stage2: Option<&[i64]>,
) -> Result<OutcomePair> {
    let k = d.k();
    let s = d.sizes;
    let b = &d.boundaries;
    check_counts(stage1, k, s.c1, s.e1, 1)?;
    let z1 = stage1.iter().sum::<i64>() as usize;
    let e1 = b.e1[z1];
    let mut rej = 0u32;
    let mut cont = 0u32;
    let t1: Vec<i64> = (0..k).map(|a| stage1[a + 1] - stage1[0]).collect();
    for (a, &t) in t1.iter().enumerate() {
        if t >= e1 {
            rej |= 1 << a;
        } else if t > b.f1 {
            cont |= 1 << a;
        }
    }
    if rej != 0 || cont == 0 {
        return Ok(OutcomePair::from_masks(k, rej, 0));
    }
    let x2 = stage2
        .ok_or_else(|| Error::Validation("study continues but no stage-two data given".into()))?;
    check_counts(x2, k, s.c2, s.e2, 2)?;
    let m = cont.count_ones() as usize;
    let z2 = (x2[0]
        + (0..k)
            .filter(|a| cont >> a & 1 == 1)
            .map(|a| x2[a + 1])
            .sum::<i64>()) as usize;
    let e2 = b.e2(m, z1, z2);
    let mut psi = 0u32;
    for (a, &t) in t1.iter().enumerate() {
        if cont >> a & 1 == 1 && t + x2[a + 1] - x2[0] >= e2 {
            psi |= 1 << a;
        }
    }
    Ok(OutcomePair::from_masks(k, psi, cont))
}

#[cfg(test)]
mod tests;
