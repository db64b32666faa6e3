//! Operating characteristics: familywise error, familywise power, expected
//! sample size, their extremes over `p`, and Monte Carlo replay.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binomial::{conduct_binomial, outcome_distribution, BinomialDesign, BinomialKernel};
use crate::config::{grid_values, EssModel, StageSizes};
use crate::error::{Error, Result};
use crate::fisher::{conduct_fisher, FisherDesign};
use crate::outcome::{null_mask, OutcomePair, OutcomeSpace};
use crate::pgrid::{grid_max, grid_min};

const NORMALIZATION_TOL: f64 = 1e-9;

/// Either design family.
#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    Binomial(BinomialDesign),
    Fisher(FisherDesign),
}

impl Design {
    pub fn method(&self) -> &'static str {
        match self {
            Design::Binomial(_) => "binomial",
            Design::Fisher(_) => "fisher",
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Design::Binomial(d) => d.k,
            Design::Fisher(d) => d.k(),
        }
    }

    pub fn n(&self) -> u32 {
        match self {
            Design::Binomial(d) => d.n,
            Design::Fisher(d) => d.n(),
        }
    }

    pub fn sizes(&self) -> StageSizes {
        match self {
            Design::Binomial(d) => d.sizes(),
            Design::Fisher(d) => *d.sizes(),
        }
    }

    pub fn max_sample_size(&self) -> u32 {
        self.sizes().max_total(self.k())
    }

    /// Outcome probabilities in the canonical order of `space`.
    pub fn outcome_distribution(&self, p: &[f64], space: &OutcomeSpace) -> Vec<f64> {
        match self {
            Design::Binomial(d) => outcome_distribution(d, p, space),
            Design::Fisher(d) => d.outcome_distribution(p, space),
        }
    }

    /// `P(no rejection | p)`.
    pub fn no_reject(&self, p: &[f64]) -> f64 {
        match self {
            Design::Binomial(d) => {
                BinomialKernel::new(d.sizes(), p).no_reject(d.f[0], d.e[0], d.f[1])
            }
            Design::Fisher(d) => d.no_reject_probability(p),
        }
    }

    pub fn conduct(&self, stage1: &[i64], stage2: Option<&[i64]>) -> Result<OutcomePair> {
        match self {
            Design::Binomial(d) => conduct_binomial(d, stage1, stage2),
            Design::Fisher(d) => conduct_fisher(d, stage1, stage2),
        }
    }
}

/// Total number of subjects when the study ends in outcome `o`.
pub fn outcome_sample_size(s: &StageSizes, o: &OutcomePair) -> u32 {
    let m = o.stage2_mask().count_ones();
    let stage2 = if m > 0 { s.c2 + m * s.e2 } else { 0 };
    s.stage1_total(o.arms()) + stage2
}

/// Exact operating characteristics at one `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OCReport {
    pub p: Vec<f64>,
    pub fwer: f64,
    pub fwp: f64,
    pub ess: f64,
    pub per_arm_reject: Vec<f64>,
}

fn check_p(k: usize, p: &[f64]) -> Result<()> {
    if p.len() != k + 1 {
        return Err(Error::Validation(format!(
            "p must have K+1 = {} entries, got {}",
            k + 1,
            p.len()
        )));
    }
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Validation(format!(
            "p entries must lie in [0,1], got {p:?}"
        )));
    }
    Ok(())
}

/// Operating characteristics at `p`, with a normalization gate.
pub fn oc_at(design: &Design, p: &[f64]) -> Result<OCReport> {
    let k = design.k();
    check_p(k, p)?;
    let space = OutcomeSpace::enumerate(k)?;
    let probs = design.outcome_distribution(p, &space);
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Consistency(format!(
            "outcome probabilities sum to {total:.12}, not 1"
        )));
    }
    Ok(summarize(design, p, &space, &probs))
}

fn summarize(design: &Design, p: &[f64], space: &OutcomeSpace, probs: &[f64]) -> OCReport {
    let k = design.k();
    let sizes = design.sizes();
    let nulls = null_mask(p);
    let mut fwer = 0.0;
    let mut fwp = 0.0;
    let mut ess = 0.0;
    let mut per_arm = vec![0.0; k];
    for (o, &pr) in space.iter().zip(probs) {
        if o.rejects_any() {
            fwp += pr;
        }
        if o.rejects_any_of(nulls) {
            fwer += pr;
        }
        for (a, v) in per_arm.iter_mut().enumerate() {
            if o.psi(a) {
                *v += pr;
            }
        }
        ess += pr * outcome_sample_size(&sizes, o) as f64;
    }
    OCReport {
        p: p.to_vec(),
        fwer,
        fwp,
        ess,
        per_arm_reject: per_arm,
    }
}

/// `FWER(p)`; uses the no-rejection shortcut when every null holds.
pub fn fwer_at(design: &Design, p: &[f64]) -> f64 {
    let k = design.k();
    let nulls = null_mask(p);
    if nulls == 0 {
        return 0.0;
    }
    if nulls == (1 << k) - 1 {
        return (1.0 - design.no_reject(p)).max(0.0);
    }
    let space = OutcomeSpace::enumerate(k).expect("arm count checked by the design");
    let probs = design.outcome_distribution(p, &space);
    space
        .iter()
        .zip(&probs)
        .filter(|(o, _)| o.rejects_any_of(nulls))
        .map(|(_, v)| v)
        .sum()
}

/// `FWP(p)`: probability of at least one rejection.
pub fn fwp_at(design: &Design, p: &[f64]) -> f64 {
    (1.0 - design.no_reject(p)).max(0.0)
}

/// Expected sample size at `p`.
pub fn ess_at(design: &Design, p: &[f64]) -> f64 {
    match design {
        Design::Binomial(d) => BinomialKernel::new(d.sizes(), p).ess(d.f[0], d.e[0]),
        Design::Fisher(_) => {
            let space =
                OutcomeSpace::enumerate(design.k()).expect("arm count checked by the design");
            let probs = design.outcome_distribution(p, &space);
            let s = design.sizes();
            space
                .iter()
                .zip(&probs)
                .map(|(o, v)| v * outcome_sample_size(&s, o) as f64)
                .sum()
        }
    }
}

/// ESS under the chosen scoring model; see [`EssModel`].
pub fn ess_scored(design: &Design, p: &[f64], model: EssModel) -> f64 {
    match (design, model) {
        (Design::Fisher(d), EssModel::NullConditional) => d.ess_null_conditional(p),
        _ => ess_at(design, p),
    }
}

/// Largest FWER found and where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxFwerResult {
    pub argmax_p: Vec<f64>,
    pub max_fwer: f64,
    pub search_trace: Vec<(Vec<f64>, f64)>,
}

/// Maximum of `FWER((p, ..., p))` over `[0, 1]`.
pub fn max_fwer_common_p(design: &Design, step: f64, refine: bool) -> MaxFwerResult {
    let k = design.k();
    let mut f = |p: f64| fwer_at(design, &vec![p; k + 1]);
    let e = grid_max(&mut f, 0.0, 1.0, step, refine);
    MaxFwerResult {
        argmax_p: vec![e.p; k + 1],
        max_fwer: e.value,
        search_trace: e
            .trace
            .into_iter()
            .map(|(p, v)| (vec![p; k + 1], v))
            .collect(),
    }
}

/// Minimum of `FWP((p, ..., p) + delta)` over `[0, 1 - max delta]`.
pub fn min_fwp(design: &Design, delta: &[f64], step: f64, refine: bool) -> (f64, f64) {
    let hi = 1.0 - delta[1..].iter().copied().fold(0.0, f64::max);
    let mut f = |p: f64| {
        let v: Vec<f64> = delta.iter().map(|d| (p + d).min(1.0)).collect();
        fwp_at(design, &v)
    };
    let e = grid_min(&mut f, 0.0, hi, step, refine);
    (e.p, e.value)
}

/// Search settings for [`max_fwer_full`].
#[derive(Debug, Clone, Copy)]
pub struct FullSearch {
    pub budget: usize,
    pub seed: u64,
    pub restarts: usize,
}

impl FullSearch {
    pub fn new(budget: usize, seed: u64) -> Self {
        Self {
            budget,
            seed,
            restarts: 20,
        }
    }
}

/// Maximal FWER over `[0,1]^{K+1}`.
///
/// The null hypotheses are point nulls `p_k = p_0`, so a configuration is a
/// nonempty set of true nulls (sharing `p_0`) plus free success
/// probabilities for the remaining arms. Each configuration gets a share of
/// the restarts; every restart runs a compass search whose step shrinks from
/// 0.1 to 0.001.
pub fn max_fwer_full(design: &Design, search: FullSearch) -> Result<MaxFwerResult> {
    if search.budget < 1000 {
        return Err(Error::Validation(format!(
            "search budget must be at least 1000, got {}",
            search.budget
        )));
    }
    let k = design.k();
    let configs: Vec<u32> = (1u32..1 << k).rev().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
    let mut trace: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut best: (Vec<f64>, f64) = (vec![0.5; k + 1], f64::NEG_INFINITY);
    let per_restart = (search.budget / search.restarts.max(1)).max(k + 2);
    let restarts = search.restarts.max(configs.len());
    let mut used = 0usize;
    for r in 0..restarts {
        let nulls = configs[r % configs.len()];
        let free: Vec<usize> = (0..k).filter(|a| nulls >> a & 1 == 0).collect();
        let dim = 1 + free.len();
        let expand = |x: &[f64]| -> Vec<f64> {
            let mut p = vec![x[0]; k + 1];
            for (i, &a) in free.iter().enumerate() {
                p[a + 1] = x[i + 1];
            }
            p
        };
        let mut x: Vec<f64> = if r == 0 {
            vec![0.5; dim]
        } else {
            (0..dim).map(|_| rng.random::<f64>()).collect()
        };
        let eval = |x: &[f64], trace: &mut Vec<(Vec<f64>, f64)>, used: &mut usize| {
            let p = expand(x);
            let v = fwer_at(design, &p);
            trace.push((p, v));
            *used += 1;
            v
        };
        let mut fx = eval(&x, &mut trace, &mut used);
        let mut step = 0.1;
        let mut local = 1usize;
        while step >= 1e-3 && local < per_restart {
            let mut moved = false;
            for i in 0..dim {
                for dir in [1.0, -1.0] {
                    let mut y = x.clone();
                    y[i] = (y[i] + dir * step).clamp(0.0, 1.0);
                    if y[i] == x[i] {
                        continue;
                    }
                    let fy = eval(&y, &mut trace, &mut used);
                    local += 1;
                    if fy > fx + 1e-15 {
                        x = y;
                        fx = fy;
                        moved = true;
                        break;
                    }
                }
                if moved || local >= per_restart {
                    break;
                }
            }
            if !moved {
                step /= 2.0;
            }
        }
        if fx > best.1 {
            best = (expand(&x), fx);
        }
    }
    // include the common-p grid so the result dominates the diagonal search
    let diag = max_fwer_common_p(design, 0.01, true);
    if diag.max_fwer > best.1 {
        best = (diag.argmax_p.clone(), diag.max_fwer);
    }
    trace.extend(diag.search_trace);
    log::debug!("full-space FWER search used {used} local evaluations");
    Ok(MaxFwerResult {
        argmax_p: best.0,
        max_fwer: best.1,
        search_trace: trace,
    })
}

/// Distance of `p` from the diagonal `p_0 = p_1 = ... = p_K`.
pub fn distance_to_diagonal(p: &[f64]) -> f64 {
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    p.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max)
}

/// Monte Carlo estimate with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub p: Vec<f64>,
    pub reps: u64,
    pub seed: u64,
    pub fwer: f64,
    pub fwer_se: f64,
    pub fwp: f64,
    pub fwp_se: f64,
    pub ess: f64,
    pub ess_se: f64,
    pub per_arm_reject: Vec<f64>,
}

const SIM_CHUNK: u64 = 10_000;

#[derive(Default, Clone)]
struct SimTotals {
    fwer: u64,
    fwp: u64,
    n_sum: f64,
    n_sq: f64,
    per_arm: Vec<u64>,
}

/// Replays the decision rules on simulated data. Chunk `i` draws from its
/// own ChaCha stream of the master seed, so results do not depend on the
/// number of worker threads.
pub fn simulate(design: &Design, p: &[f64], reps: u64, seed: u64) -> Result<SimReport> {
    let k = design.k();
    check_p(k, p)?;
    if reps < 10_000 {
        return Err(Error::Validation(format!(
            "at least 10^4 replications are required, got {reps}"
        )));
    }
    let s = design.sizes();
    let nulls = null_mask(p);
    let dist =
        |n: u32, q: f64| Binomial::new(n as u64, q).map_err(|e| Error::Validation(e.to_string()));
    let d1: Vec<Binomial> = std::iter::once(dist(s.c1, p[0]))
        .chain(p[1..].iter().map(|&q| dist(s.e1, q)))
        .collect::<Result<_>>()?;
    let d2: Vec<Binomial> = std::iter::once(dist(s.c2, p[0]))
        .chain(p[1..].iter().map(|&q| dist(s.e2, q)))
        .collect::<Result<_>>()?;
    let chunks = reps.div_ceil(SIM_CHUNK);
    let parts: Vec<Result<SimTotals>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let count = SIM_CHUNK.min(reps - c * SIM_CHUNK);
            let mut t = SimTotals {
                per_arm: vec![0; k],
                ..Default::default()
            };
            let mut x1 = vec![0i64; k + 1];
            let mut x2 = vec![0i64; k + 1];
            for _ in 0..count {
                for (x, d) in x1.iter_mut().zip(&d1) {
                    *x = d.sample(&mut rng) as i64;
                }
                let o = match design.conduct(&x1, None) {
                    Ok(o) => o,
                    Err(_) => {
                        for (x, d) in x2.iter_mut().zip(&d2) {
                            *x = d.sample(&mut rng) as i64;
                        }
                        design.conduct(&x1, Some(&x2))?
                    }
                };
                if o.rejects_any() {
                    t.fwp += 1;
                }
                if o.rejects_any_of(nulls) {
                    t.fwer += 1;
                }
                for (a, v) in t.per_arm.iter_mut().enumerate() {
                    *v += o.psi(a) as u64;
                }
                let n = outcome_sample_size(&s, &o) as f64;
                t.n_sum += n;
                t.n_sq += n * n;
            }
            Ok(t)
        })
        .collect();
    let mut tot = SimTotals {
        per_arm: vec![0; k],
        ..Default::default()
    };
    for part in parts {
        let part = part?;
        tot.fwer += part.fwer;
        tot.fwp += part.fwp;
        tot.n_sum += part.n_sum;
        tot.n_sq += part.n_sq;
        for (a, b) in tot.per_arm.iter_mut().zip(&part.per_arm) {
            *a += b;
        }
    }
    let r = reps as f64;
    let prop = |c: u64| c as f64 / r;
    let se = |q: f64| (q * (1.0 - q) / r).sqrt();
    let ess = tot.n_sum / r;
    let var = (tot.n_sq / r - ess * ess).max(0.0) * r / (r - 1.0);
    Ok(SimReport {
        p: p.to_vec(),
        reps,
        seed,
        fwer: prop(tot.fwer),
        fwer_se: se(prop(tot.fwer)),
        fwp: prop(tot.fwp),
        fwp_se: se(prop(tot.fwp)),
        ess,
        ess_se: (var / r).sqrt(),
        per_arm_reject: tot.per_arm.iter().map(|&c| prop(c)).collect(),
    })
}

/// One row of the operating-characteristic curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub p: f64,
    pub fwer: f64,
    /// `FWP((p,...,p) + delta)`; `None` beyond `1 - max delta`
    pub fwp: Option<f64>,
    pub ess_null: f64,
    pub ess_alt: Option<f64>,
}

/// Curves over `p in [lo, hi]`: null quantities at `(p,...,p)`, alternative
/// quantities at `(p,...,p) + delta` where defined.
pub fn curves(design: &Design, delta: &[f64], lo: f64, hi: f64, step: f64) -> Vec<CurveRow> {
    curves_scored(design, delta, lo, hi, step, EssModel::Exact)
}

/// As [`curves`], with both ESS columns computed under `model`.
pub fn curves_scored(
    design: &Design,
    delta: &[f64],
    lo: f64,
    hi: f64,
    step: f64,
    model: EssModel,
) -> Vec<CurveRow> {
    let k = design.k();
    let alt_hi = 1.0 - delta[1..].iter().copied().fold(0.0, f64::max);
    grid_values(lo, hi, step)
        .into_par_iter()
        .map(|p| {
            let null = vec![p; k + 1];
            let (fwp, ess_alt) = if p <= alt_hi + 1e-12 {
                let alt: Vec<f64> = delta.iter().map(|d| (p + d).min(1.0)).collect();
                (
                    Some(fwp_at(design, &alt)),
                    Some(ess_scored(design, &alt, model)),
                )
            } else {
                (None, None)
            };
            CurveRow {
                p,
                fwer: fwer_at(design, &null),
                fwp,
                ess_null: ess_scored(design, &null, model),
                ess_alt,
            }
        })
        .collect()
}

/// CSV with header `p,fwer,fwp,ess_null,ess_alt`; undefined cells are empty.
pub fn curves_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("p,fwer,fwp,ess_null,ess_alt\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{:.6},{:.6},{},{:.6},{}\n",
            r.p,
            r.fwer,
            opt(r.fwp),
            r.ess_null,
            opt(r.ess_alt)
        ));
    }
    out
}
