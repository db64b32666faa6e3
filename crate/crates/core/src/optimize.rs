//! Weighted objective and the two design searches: exhaustive over the
//! binomial design space, and the `(alpha1, beta1)` grid for Fisher designs.

use std::borrow::Cow;
use std::collections::HashMap;
use std::time::Instant;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binomial::{f2_range, stage1_pairs, BinomialDesign, BinomialKernel};
use crate::config::{grid_values, Control, StageSizes, TrialConfig, Weights};
use crate::error::{Error, Result};
use crate::fisher::FisherSweep;
use crate::math::binom_pmf_vec;
use crate::oc::{ess_scored, max_fwer_common_p, min_fwp, Design};
use crate::pgrid::first_violation_below;
use crate::report::DesignPayload;

/// Number of runners-up kept in a result.
pub const ALTERNATIVES: usize = 10;

/// The three objective terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub ess_null: f64,
    pub ess_alt: f64,
    pub max_n: f64,
    pub value: f64,
}

impl ObjectiveTerms {
    fn new(ess_null: f64, ess_alt: f64, max_n: f64, w: Weights) -> Self {
        let [w1, w2, w3] = w.0;
        Self {
            ess_null,
            ess_alt,
            max_n,
            value: w1 * ess_null + w2 * ess_alt + w3 * max_n,
        }
    }

    fn reweigh(&self, w: Weights) -> Self {
        Self::new(self.ess_null, self.ess_alt, self.max_n, w)
    }
}

/// `w1 ESS(p_ESS) + w2 ESS(p_ESS + delta) + w3 max N`.
pub fn objective(design: &Design, cfg: &TrialConfig, w: Weights) -> ObjectiveTerms {
    ObjectiveTerms::new(
        ess_scored(design, &cfg.p_ess, cfg.ess_model),
        ess_scored(design, &cfg.p_ess_alt(), cfg.ess_model),
        design.max_sample_size() as f64,
        w,
    )
}

/// Constraint values of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub max_fwer: f64,
    pub fwer_argmax: f64,
    pub min_fwp: f64,
    pub fwp_argmin: f64,
    pub alpha: f64,
    pub beta: f64,
    pub satisfied: bool,
}

/// Evaluates both constraints over the common-`p` lines at `step`.
pub fn check_constraints(design: &Design, cfg: &TrialConfig, step: f64) -> ConstraintReport {
    let fwer = max_fwer_common_p(design, step, cfg.p_refine);
    let (p, fwp) = min_fwp(design, &cfg.delta, step, cfg.p_refine);
    ConstraintReport {
        max_fwer: fwer.max_fwer,
        fwer_argmax: fwer.argmax_p[0],
        min_fwp: fwp,
        fwp_argmin: p,
        alpha: cfg.alpha,
        beta: cfg.beta,
        satisfied: fwer.max_fwer <= cfg.alpha + 1e-12 && fwp >= 1.0 - cfg.beta - 1e-12,
    }
}

/// A ranked design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub design: DesignPayload,
    pub n: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    pub objective: ObjectiveTerms,
}

/// Outcome of one search for one weight vector.
#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub method: &'static str,
    pub weights: Weights,
    pub design: Design,
    pub alpha1: Option<f64>,
    pub beta1: Option<f64>,
    pub objective: ObjectiveTerms,
    pub constraints: ConstraintReport,
    pub alternatives: Vec<Ranked>,
    pub candidates_evaluated: usize,
    pub wall_time_s: f64,
}

impl OptimizationResult {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "method": self.method,
            "weights": self.weights.0,
            "design": DesignPayload::from(&self.design),
            "alpha1": self.alpha1,
            "beta1": self.beta1,
            "objective": self.objective,
            "constraints": self.constraints,
            "alternatives": self.alternatives,
            "candidates_evaluated": self.candidates_evaluated,
            "wall_time_s": self.wall_time_s,
        })
    }
}

fn rank_cmp(a: &ObjectiveTerms, an: u32, b: &ObjectiveTerms, bn: u32) -> std::cmp::Ordering {
    a.value
        .total_cmp(&b.value)
        .then(an.cmp(&bn))
        .then(a.max_n.total_cmp(&b.max_n))
}

// ---------------------------------------------------------------------------
// single-stage reference

/// Smallest per-group size of the one-look design that rejects `H0k` when
/// `x_k - x_0 >= e`, meeting both constraints on the `p` grid.
pub fn single_stage_n(cfg: &TrialConfig) -> Result<u32> {
    let k = cfg.k;
    let null_grid = grid_values(0.0, 1.0, cfg.p_grid_step);
    let alt_grid = grid_values(0.0, 1.0 - cfg.max_delta(), cfg.p_grid_step);
    // P(no T_k >= e) for e = lo..=hi
    let none = |m: u32, p: &[f64]| -> Vec<f64> {
        let b0 = binom_pmf_vec(m, p[0]);
        let cdfs: Vec<Vec<f64>> = p[1..]
            .iter()
            .map(|&q| {
                let mut acc = 0.0;
                binom_pmf_vec(m, q)
                    .into_iter()
                    .map(|v| {
                        acc += v;
                        acc
                    })
                    .collect()
            })
            .collect();
        let mi = m as i64;
        (-mi..=mi + 1)
            .map(|e| {
                b0.iter()
                    .enumerate()
                    .map(|(x0, &w)| {
                        let top = x0 as i64 + e - 1;
                        w * cdfs
                            .iter()
                            .map(|c| {
                                if top < 0 {
                                    0.0
                                } else {
                                    c[(top as usize).min(c.len() - 1)]
                                }
                            })
                            .product::<f64>()
                    })
                    .sum()
            })
            .collect()
    };
    for m in 1..=2000u32 {
        let mut worst = vec![0.0f64; 2 * m as usize + 2];
        for &p in &null_grid {
            for (w, v) in worst.iter_mut().zip(none(m, &vec![p; k + 1])) {
                *w = w.max(1.0 - v);
            }
        }
        let Some(i) = worst.iter().position(|&v| v <= cfg.alpha + 1e-12) else {
            continue;
        };
        let power = alt_grid
            .iter()
            .map(|&p| 1.0 - none(m, &cfg.alternative(p))[i])
            .fold(f64::INFINITY, f64::min);
        if power >= 1.0 - cfg.beta - 1e-12 {
            debug!(
                "single-stage reference: n = {m}, e = {}",
                i as i64 - m as i64
            );
            return Ok(m);
        }
    }
    Err(Error::Infeasible(
        "no single-stage design up to n = 2000".into(),
    ))
}

/// Binomial search cap `ceil(0.75 n_fixed)` unless the config sets one.
pub fn binomial_n_max(cfg: &TrialConfig) -> Result<u32> {
    match cfg.n_max {
        Some(v) => Ok(v),
        None => Ok((0.75 * single_stage_n(cfg)? as f64 - 1e-9).ceil() as u32),
    }
}

// ---------------------------------------------------------------------------
// binomial search

/// Kernels on a `p` grid, built on demand for off-grid points.
struct KernelLine {
    lo: f64,
    step: f64,
    ps: Vec<f64>,
    kernels: Vec<BinomialKernel>,
    sizes: StageSizes,
    point: Box<dyn Fn(f64) -> Vec<f64> + Send + Sync>,
}

impl KernelLine {
    fn new(
        sizes: StageSizes,
        lo: f64,
        hi: f64,
        step: f64,
        point: Box<dyn Fn(f64) -> Vec<f64> + Send + Sync>,
    ) -> Self {
        let ps = grid_values(lo, hi, step);
        let kernels = ps
            .iter()
            .map(|&p| BinomialKernel::new(sizes, &point(p)))
            .collect();
        Self {
            lo,
            step,
            ps,
            kernels,
            sizes,
            point,
        }
    }

    fn at(&self, p: f64) -> Cow<'_, BinomialKernel> {
        let i = ((p - self.lo) / self.step).round();
        if i >= 0.0 && (i as usize) < self.ps.len() && (self.ps[i as usize] - p).abs() < 1e-9 {
            Cow::Borrowed(&self.kernels[i as usize])
        } else {
            Cow::Owned(BinomialKernel::new(self.sizes, &(self.point)(p)))
        }
    }
}

struct Level {
    sizes: StageSizes,
    null: KernelLine,
    alt: KernelLine,
}

#[derive(Debug, Clone, Copy)]
struct Stage1Candidate {
    n: u32,
    f1: i64,
    e1: i64,
    ess_null: f64,
    ess_alt: f64,
    max_n: f64,
}

/// Feasibility search for fixed `(n, f1, e1)`: the smallest `f2` with
/// `max FWER <= alpha`, provided it also meets the power requirement.
fn smallest_feasible_f2(
    level: &Level,
    cfg: &TrialConfig,
    f1: i64,
    e1: i64,
    refine: bool,
) -> Option<i64> {
    let s = &level.sizes;
    let step = cfg.p_grid_step;
    let hi_p = 1.0 - cfg.max_delta();
    let power_floor = 1.0 - cfg.beta - 1e-12;
    // power is at most P(some arm not accepted at stage one)
    let mut bound = |p: f64| 1.0 - level.alt.at(p).stage1_all_accept(f1);
    if first_violation_below(&mut bound, 0.0, hi_p, step, false, power_floor, None).is_some() {
        return None;
    }
    let fwer_ok = |f2: Option<i64>| {
        let mut neg = |p: f64| {
            let kern = level.null.at(p);
            -match f2 {
                Some(f2) => 1.0 - kern.no_reject(f1, e1, f2),
                None => kern.stage1_reject(e1),
            }
        };
        first_violation_below(
            &mut neg,
            0.0,
            1.0,
            step,
            refine,
            -cfg.alpha - 1e-12,
            Some(0.5),
        )
        .is_none()
    };
    if !fwer_ok(None) {
        return None;
    }
    let (mut lo, mut hi) = f2_range(s, f1, e1);
    if fwer_ok(Some(lo)) {
        hi = lo;
    } else {
        // fwer_ok(hi) holds: stage two can no longer reject
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if fwer_ok(Some(mid)) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    let f2 = hi;
    let mut fwp = |p: f64| 1.0 - level.alt.at(p).no_reject(f1, e1, f2);
    first_violation_below(&mut fwp, 0.0, hi_p, step, refine, power_floor, None)
        .is_none()
        .then_some(f2)
}

/// Exhaustive search of the binomial design space for every weight vector
/// in `cfg`.
///
/// Stage-one triples `(n, f1, e1)` fix the objective, so they are visited in
/// objective order and only the first feasible ones need a stage-two
/// boundary. Ties are broken by `n`, then max N, then `(f1, e1, f2)`.
pub fn optimize_binomial(cfg: &TrialConfig) -> Result<Vec<OptimizationResult>> {
    cfg.validate()?;
    let start = Instant::now();
    let n_max = binomial_n_max(cfg)?;
    info!("binomial search over n in ({}, {n_max}]", cfg.n_min);
    let levels: HashMap<u32, Level> = (cfg.n_min + 1..=n_max)
        .into_par_iter()
        .filter_map(|n| {
            let sizes = cfg.ratios.sizes(n)?;
            let k = cfg.k;
            let delta = cfg.delta.clone();
            let null = KernelLine::new(
                sizes,
                0.0,
                1.0,
                cfg.p_grid_step,
                Box::new(move |p| vec![p; k + 1]),
            );
            let alt = KernelLine::new(
                sizes,
                0.0,
                1.0 - cfg.max_delta(),
                cfg.p_grid_step,
                Box::new(move |p| delta.iter().map(|d| (p + d).min(1.0)).collect()),
            );
            Some((n, Level { sizes, null, alt }))
        })
        .collect();
    if levels.is_empty() {
        return Err(Error::Config(format!(
            "no n in ({}, {n_max}] gives integral group sizes",
            cfg.n_min
        )));
    }
    let p_alt = cfg.p_ess_alt();
    let mut cands: Vec<Stage1Candidate> = levels
        .par_iter()
        .flat_map_iter(|(&n, level)| {
            let kn = BinomialKernel::new(level.sizes, &cfg.p_ess);
            let ka = BinomialKernel::new(level.sizes, &p_alt);
            let max_n = level.sizes.max_total(cfg.k) as f64;
            stage1_pairs(&level.sizes)
                .into_iter()
                .map(move |(f1, e1)| Stage1Candidate {
                    n,
                    f1,
                    e1,
                    ess_null: kn.ess(f1, e1),
                    ess_alt: ka.ess(f1, e1),
                    max_n,
                })
                .collect::<Vec<_>>()
        })
        .collect();
    cands.sort_by_key(|c| (c.n, c.f1, c.e1));
    info!("{} stage-one triples", cands.len());

    let mut feasible: HashMap<(u32, i64, i64), Option<i64>> = HashMap::new();
    let mut out = Vec::new();
    for &w in &cfg.weights {
        let terms = |c: &Stage1Candidate| ObjectiveTerms::new(c.ess_null, c.ess_alt, c.max_n, w);
        let mut order: Vec<(ObjectiveTerms, &Stage1Candidate)> =
            cands.iter().map(|c| (terms(c), c)).collect();
        order.sort_by(|a, b| {
            rank_cmp(&a.0, a.1.n, &b.0, b.1.n)
                .then(a.1.f1.cmp(&b.1.f1))
                .then(a.1.e1.cmp(&b.1.e1))
        });
        let mut found: Vec<(ObjectiveTerms, BinomialDesign)> = Vec::new();
        let chunk = rayon::current_num_threads().max(1) * 4;
        let mut visited = 0usize;
        for block in order.chunks(chunk) {
            let todo: Vec<&Stage1Candidate> = block
                .iter()
                .map(|x| x.1)
                .filter(|c| !feasible.contains_key(&(c.n, c.f1, c.e1)))
                .collect();
            let res: Vec<((u32, i64, i64), Option<i64>)> = todo
                .par_iter()
                .map(|c| {
                    (
                        (c.n, c.f1, c.e1),
                        smallest_feasible_f2(&levels[&c.n], cfg, c.f1, c.e1, false),
                    )
                })
                .collect();
            feasible.extend(res);
            for (t, c) in block {
                visited += 1;
                let Some(f2) = feasible[&(c.n, c.f1, c.e1)] else {
                    continue;
                };
                let d = BinomialDesign::new(cfg.k, c.n, [c.f1, f2], [c.e1, f2 + 1], cfg.ratios)?;
                if found.is_empty() && cfg.p_refine {
                    // the winner must also hold off the grid
                    match smallest_feasible_f2(&levels[&c.n], cfg, c.f1, c.e1, true) {
                        Some(g) if g == f2 => {}
                        other => {
                            warn!("n={} f1={} e1={}: grid-feasible f2={f2} fails refinement ({other:?})", c.n, c.f1, c.e1);
                            continue;
                        }
                    }
                }
                found.push((*t, d));
            }
            if found.len() > ALTERNATIVES {
                break;
            }
        }
        let Some((best_terms, best)) = found.first().cloned() else {
            return Err(Error::Infeasible(format!(
                "no binomial design with n <= {n_max} meets the constraints ({visited} stage-one triples checked)"
            )));
        };
        let design = Design::Binomial(best);
        let constraints = check_constraints(&design, cfg, cfg.p_grid_step / 2.0);
        if !constraints.satisfied {
            warn!("binomial optimum fails the half-step re-verification: {constraints:?}");
        }
        info!("w={w}: {visited} triples visited");
        out.push(OptimizationResult {
            method: "binomial",
            weights: w,
            objective: best_terms,
            alternatives: found[1..]
                .iter()
                .take(ALTERNATIVES)
                .map(|(t, d)| Ranked {
                    design: DesignPayload::Binomial(d.clone()),
                    n: d.n,
                    alpha1: None,
                    beta1: None,
                    objective: *t,
                })
                .collect(),
            design,
            alpha1: None,
            beta1: None,
            constraints,
            candidates_evaluated: feasible.len(),
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Fisher grid search

/// Grid search over `A1 x B1`; one sweep serves every weight vector.
///
/// Cells are ranked by objective, then `n`, then max N, then
/// `(alpha1, beta1)`.
pub fn optimize_fisher(cfg: &TrialConfig) -> Result<Vec<OptimizationResult>> {
    cfg.validate()?;
    let start = Instant::now();
    let a1 = cfg.alpha1_grid.values();
    let b1 = cfg.beta1_grid.values();
    let sweep = FisherSweep::run(cfg, &a1, &b1)?;
    let mut scored: Vec<(usize, ObjectiveTerms, Design)> = Vec::new();
    let mut memo: HashMap<(u32, i64, Vec<i64>), ObjectiveTerms> = HashMap::new();
    let unit = Weights([0.0, 0.0, 0.0]);
    for (i, cell) in sweep.cells.iter().enumerate() {
        let Some(d) = &cell.design else {
            info!("alpha1={} beta1={}: no feasible n", cell.alpha1, cell.beta1);
            continue;
        };
        let key = (d.n(), d.boundaries.f1, d.boundaries.e1.clone());
        let design = Design::Fisher(d.clone());
        let t = *memo
            .entry(key)
            .or_insert_with(|| objective(&design, cfg, unit));
        scored.push((i, t, design));
    }
    if scored.is_empty() {
        return Err(Error::Infeasible(
            "no (alpha1, beta1) pair yields a feasible design".into(),
        ));
    }
    let mut out = Vec::new();
    for &w in &cfg.weights {
        let mut order: Vec<(usize, ObjectiveTerms, &Design)> = scored
            .iter()
            .map(|(i, t, d)| (*i, t.reweigh(w), d))
            .collect();
        order.sort_by(|a, b| rank_cmp(&a.1, a.2.n(), &b.1, b.2.n()).then(a.0.cmp(&b.0)));
        let (i, terms, design) = order[0];
        let design = design.clone();
        let constraints = check_constraints(&design, cfg, cfg.p_grid_step);
        let cell = &sweep.cells[i];
        let alternatives = order[1..]
            .iter()
            .take(ALTERNATIVES)
            .map(|(j, t, d)| Ranked {
                design: DesignPayload::from(*d),
                n: d.n(),
                alpha1: Some(sweep.cells[*j].alpha1),
                beta1: Some(sweep.cells[*j].beta1),
                objective: *t,
            })
            .collect();
        out.push(OptimizationResult {
            method: "fisher",
            weights: w,
            design,
            alpha1: Some(cell.alpha1),
            beta1: Some(cell.beta1),
            objective: terms,
            constraints,
            alternatives,
            candidates_evaluated: sweep.designs_built,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    if cfg.control == Control::Strong {
        info!("strong control requested: run verify-strong on the reported designs");
    }
    Ok(out)
}
