//! Minimal-`n` search and the `(alpha1, beta1)` grid sweep.

use std::collections::HashMap;

use log::{debug, info};
use rayon::prelude::*;

use crate::config::{Control, StageSizes, TrialConfig};
use crate::error::{Error, Result};
use crate::math::OddsRatioVector;
use crate::pgrid::first_violation_below;

use super::rules::{determine_e2, theta_domain, AlphaI1Table, BetaCurve};
use super::{FisherBoundaries, FisherDesign, FisherSpec, StageOneRule};

/// Upper end of the `n` scan when the configuration sets none.
pub const DEFAULT_N_CAP: u32 = 300;

/// Stage-one tables for one `n`, shared by every `(alpha1, beta1)`.
#[derive(Debug, Clone)]
pub struct StageOneCache {
    pub sizes: StageSizes,
    pub k: usize,
    thetas: Vec<OddsRatioVector>,
    alpha_i1: AlphaI1Table,
    beta: BetaCurve,
}

impl StageOneCache {
    pub fn new(sizes: &StageSizes, k: usize, control: Control, delta: &[f64], p_step: f64) -> Self {
        let thetas = theta_domain(k, control);
        let tables: Vec<AlphaI1Table> = thetas
            .iter()
            .map(|t| AlphaI1Table::compute(sizes, t))
            .collect();
        let max_delta = delta[1..].iter().copied().fold(0.0, f64::max);
        Self {
            sizes: *sizes,
            k,
            alpha_i1: AlphaI1Table::max_of(&tables),
            beta: BetaCurve::compute(sizes, delta[1], max_delta, p_step),
            thetas,
        }
    }

    pub fn e1_for(&self, alpha1: f64) -> Vec<i64> {
        self.alpha_i1.boundaries(alpha1)
    }

    pub fn f1_for(&self, beta1: f64) -> i64 {
        self.beta.f1_for(beta1)
    }

    pub fn alpha_table(&self) -> &AlphaI1Table {
        &self.alpha_i1
    }

    /// Adds stage-two boundaries to fixed stage-one boundaries.
    pub fn complete(&self, alpha: f64, f1: i64, e1: Vec<i64>) -> FisherBoundaries {
        let spent = self.alpha_i1.spent(&e1);
        let e2 = determine_e2(&self.sizes, alpha, f1, &e1, &spent, &self.thetas);
        let f2 = e2
            .into_iter()
            .map(|block| {
                block
                    .into_iter()
                    .map(|row| row.into_iter().map(|e| e - 1).collect())
                    .collect()
            })
            .collect();
        FisherBoundaries {
            k: self.k,
            f1,
            e1,
            f2,
        }
    }
}

/// Checks `min_p FWP((p,...,p) + delta) >= 1 - beta`. Returns the first
/// violating `(p, FWP)` found, or `None` when the constraint holds.
pub fn power_check(d: &FisherDesign, cfg: &TrialConfig, hint: Option<f64>) -> Option<(f64, f64)> {
    let mut fwp = |p: f64| 1.0 - d.no_reject_probability(&cfg.alternative(p));
    first_violation_below(
        &mut fwp,
        0.0,
        1.0 - cfg.max_delta(),
        cfg.p_grid_step,
        cfg.p_refine,
        1.0 - cfg.beta - 1e-12,
        hint,
    )
}

fn spec_for(cfg: &TrialConfig, n: u32, stage_one: StageOneRule) -> FisherSpec {
    FisherSpec {
        k: cfg.k,
        n,
        alpha: cfg.alpha,
        delta: cfg.delta.clone(),
        p_grid_step: cfg.p_grid_step,
        control: cfg.control,
        ratios: cfg.ratios,
        stage_one,
    }
}

fn n_range(cfg: &TrialConfig) -> impl Iterator<Item = (u32, StageSizes)> + '_ {
    let hi = cfg.n_max.unwrap_or(DEFAULT_N_CAP);
    (cfg.n_min + 1..=hi).filter_map(move |n| cfg.ratios.sizes(n).map(|s| (n, s)))
}

fn scan<F>(cfg: &TrialConfig, mut rule: F) -> Result<FisherDesign>
where
    F: FnMut(u32, &StageSizes) -> StageOneRule,
{
    let mut hint = None;
    for (n, sizes) in n_range(cfg) {
        let cache = StageOneCache::new(&sizes, cfg.k, cfg.control, &cfg.delta, cfg.p_grid_step);
        let d = FisherDesign::build_with(spec_for(cfg, n, rule(n, &sizes)), &cache)?;
        match power_check(&d, cfg, hint) {
            None => return Ok(d),
            Some((p, v)) => {
                debug!("n={n}: FWP {v:.5} at p={p:.4} below target");
                hint = Some(p);
            }
        }
    }
    Err(Error::Infeasible(format!(
        "no n in ({}, {}] meets the power requirement",
        cfg.n_min,
        cfg.n_max.unwrap_or(DEFAULT_N_CAP)
    )))
}

/// Smallest `n` whose design for `(alpha1, beta1)` meets the power
/// requirement.
pub fn find_min_n(cfg: &TrialConfig, alpha1: f64, beta1: f64) -> Result<FisherDesign> {
    scan(cfg, |_, _| StageOneRule::Spending { alpha1, beta1 })
}

/// Smallest `n` for the design with `f1 = -1` and `e1[z1] = ceil(n delta_1) + 1`
/// imposed, stage two from the error-spending rule.
pub fn fixed_stage_one(cfg: &TrialConfig) -> Result<FisherDesign> {
    let k = cfg.k;
    let d1 = cfg.delta[1];
    scan(cfg, |n, sizes| {
        let e = (n as f64 * d1 - 1e-9).ceil() as i64 + 1;
        StageOneRule::Imposed {
            f1: -1,
            e1: vec![e; sizes.stage1_total(k) as usize + 1],
        }
    })
}

/// Result of the minimal-`n` search for one `(alpha1, beta1)`.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub alpha1: f64,
    pub beta1: f64,
    pub design: Option<FisherDesign>,
}

/// Minimal-`n` designs over the `A1 x B1` grid.
///
/// Works through `n` in increasing order; pairs whose stage-one boundaries
/// coincide at a given `n` share one stage-two determination and one power
/// check.
pub struct FisherSweep {
    pub cells: Vec<SweepCell>,
    pub designs_built: usize,
}

impl FisherSweep {
    pub fn run(cfg: &TrialConfig, alpha1s: &[f64], beta1s: &[f64]) -> Result<Self> {
        let mut cells: Vec<SweepCell> = alpha1s
            .iter()
            .flat_map(|&a| {
                beta1s.iter().map(move |&b| SweepCell {
                    alpha1: a,
                    beta1: b,
                    design: None,
                })
            })
            .collect();
        let mut open: Vec<usize> = (0..cells.len()).collect();
        let mut hint: Option<f64> = None;
        let mut built = 0usize;
        for (n, sizes) in n_range(cfg) {
            if open.is_empty() {
                break;
            }
            let cache = StageOneCache::new(&sizes, cfg.k, cfg.control, &cfg.delta, cfg.p_grid_step);
            let mut groups: HashMap<(i64, Vec<i64>), Vec<usize>> = HashMap::new();
            let mut keys: Vec<(i64, Vec<i64>)> = Vec::new();
            for &i in &open {
                let key = (cache.f1_for(cells[i].beta1), cache.e1_for(cells[i].alpha1));
                groups
                    .entry(key.clone())
                    .or_insert_with(|| {
                        keys.push(key);
                        Vec::new()
                    })
                    .push(i);
            }
            let results: Vec<(FisherBoundaries, Option<(f64, f64)>)> = keys
                .par_iter()
                .map(|(f1, e1)| {
                    let b = cache.complete(cfg.alpha, *f1, e1.clone());
                    let spec = spec_for(
                        cfg,
                        n,
                        StageOneRule::Imposed {
                            f1: *f1,
                            e1: e1.clone(),
                        },
                    );
                    let d = FisherDesign::from_boundaries(spec, b.clone())
                        .expect("shape by construction");
                    let v = power_check(&d, cfg, hint);
                    (b, v)
                })
                .collect();
            built += keys.len();
            let mut passed = 0usize;
            let mut fails: Vec<f64> = Vec::new();
            for (key, (b, v)) in keys.iter().zip(results) {
                match v {
                    None => {
                        for &i in &groups[key] {
                            let spec = spec_for(
                                cfg,
                                n,
                                StageOneRule::Spending {
                                    alpha1: cells[i].alpha1,
                                    beta1: cells[i].beta1,
                                },
                            );
                            cells[i].design = Some(FisherDesign::from_boundaries(spec, b.clone())?);
                            passed += 1;
                        }
                    }
                    Some((p, _)) => fails.push(p),
                }
            }
            if let Some(p) = most_common(&fails) {
                hint = Some(p);
            }
            open.retain(|&i| cells[i].design.is_none());
            info!(
                "n={n}: {} boundary sets, {passed} pairs resolved, {} open",
                keys.len(),
                open.len()
            );
        }
        Ok(Self {
            cells,
            designs_built: built,
        })
    }
}

fn most_common(v: &[f64]) -> Option<f64> {
    let mut counts: Vec<(f64, usize)> = Vec::new();
    for &p in v {
        match counts.iter_mut().find(|(q, _)| (q - p).abs() < 1e-12) {
            Some(c) => c.1 += 1,
            None => counts.push((p, 1)),
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.total_cmp(&a.0)))
        .map(|c| c.0)
}
