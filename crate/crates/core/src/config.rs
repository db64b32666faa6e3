//! Problem statement: error rates, effect sizes, allocation, weights and search ranges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::outcome::MAX_ARMS;

const INTEGRAL_TOL: f64 = 1e-9;

/// Cumulative allocation multipliers of the stage-one control group size `n`.
///
/// The control arm has `r_C1 = 1` fixed; stage zero (`r_C0 = r_E0 = 0`) is
/// implicit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationRatios {
    #[serde(rename = "rC2")]
    pub r_c2: f64,
    #[serde(rename = "rE1")]
    pub r_e1: f64,
    #[serde(rename = "rE2")]
    pub r_e2: f64,
}

impl Default for AllocationRatios {
    fn default() -> Self {
        Self {
            r_c2: 2.0,
            r_e1: 1.0,
            r_e2: 2.0,
        }
    }
}

/// Per-stage group sizes (not cumulative) for a given `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StageSizes {
    pub n: u32,
    /// control, stage one
    pub c1: u32,
    /// each experimental arm, stage one
    pub e1: u32,
    /// control, stage two
    pub c2: u32,
    /// each continuing experimental arm, stage two
    pub e2: u32,
}

impl StageSizes {
    /// Stage-one total over control and `k` arms.
    pub fn stage1_total(&self, k: usize) -> u32 {
        self.c1 + k as u32 * self.e1
    }

    /// Stage-two total with `m` continuing arms.
    pub fn stage2_total(&self, m: usize) -> u32 {
        self.c2 + m as u32 * self.e2
    }

    pub fn max_total(&self, k: usize) -> u32 {
        self.stage1_total(k) + self.stage2_total(k)
    }
}

fn as_integer(v: f64) -> Option<u32> {
    let r = v.round();
    if (v - r).abs() < INTEGRAL_TOL && r >= 0.0 {
        Some(r as u32)
    } else {
        None
    }
}

impl AllocationRatios {
    pub fn validate(&self) -> Result<()> {
        let ok = self.r_e1 > 0.0 && self.r_c2 >= 1.0 && self.r_e2 >= self.r_e1;
        if !ok || !self.r_c2.is_finite() || !self.r_e2.is_finite() {
            return Err(Error::Config(format!(
                "allocation ratios must satisfy rC2 >= 1, rE2 >= rE1 > 0 (got rC2={}, rE1={}, rE2={})",
                self.r_c2, self.r_e1, self.r_e2
            )));
        }
        Ok(())
    }

    /// Cumulative control multiplier `r_Cj`.
    pub fn control(&self, stage: usize) -> f64 {
        [0.0, 1.0, self.r_c2][stage]
    }

    /// Cumulative experimental multiplier `r_Ej`.
    pub fn arm(&self, stage: usize) -> f64 {
        [0.0, self.r_e1, self.r_e2][stage]
    }

    /// Group sizes for `n`, or `None` when `r_C2 n`, `r_E1 n`, `r_E2 n` are
    /// not all positive integers.
    pub fn sizes(&self, n: u32) -> Option<StageSizes> {
        if n == 0 {
            return None;
        }
        let nf = n as f64;
        let c2_cum = as_integer(self.r_c2 * nf)?;
        let e1 = as_integer(self.r_e1 * nf)?;
        let e2_cum = as_integer(self.r_e2 * nf)?;
        if e1 == 0 || c2_cum < n || e2_cum < e1 {
            return None;
        }
        Some(StageSizes {
            n,
            c1: n,
            e1,
            c2: c2_cum - n,
            e2: e2_cum - e1,
        })
    }
}

/// Objective weights `(w1, w2, w3)` on `ESS(p_ESS)`, `ESS(p_ESS + delta)` and
/// the maximal sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Weights(pub [f64; 3]);

impl Weights {
    pub fn new(w1: f64, w2: f64, w3: f64) -> Result<Self> {
        Self::try_from([w1, w2, w3])
    }
}

impl TryFrom<[f64; 3]> for Weights {
    type Error = Error;

    fn try_from(w: [f64; 3]) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!(
                "weights must be nonnegative, got {w:?}"
            )));
        }
        if w[0] + w[1] <= 0.0 {
            return Err(Error::Config(format!(
                "weights need w1 + w2 > 0, got {w:?}"
            )));
        }
        Ok(Self(w))
    }
}

impl From<Weights> for [f64; 3] {
    fn from(w: Weights) -> Self {
        w.0
    }
}

impl std::fmt::Display for Weights {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let fmt = |v: f64| {
            if v != 0.0 && v.abs() < 1e-3 {
                format!("{v:e}")
            } else {
                format!("{v}")
            }
        };
        write!(
            f,
            "({},{},{})",
            fmt(self.0[0]),
            fmt(self.0[1]),
            fmt(self.0[2])
        )
    }
}

/// Familywise error-rate control requirement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Control {
    #[default]
    Weak,
    Strong,
}

impl std::fmt::Display for Control {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Control::Weak => "weak",
            Control::Strong => "strong",
        })
    }
}

/// How a Fisher design's expected sample size is scored.
///
/// `Exact` averages the sample size over the true distribution at `p`.
/// `NullConditional` keeps `P(Z1 = z1 | p)` but takes the stage-one
/// continuation pattern from its conditional law at `theta = 1`; the two
/// agree whenever every odds ratio is one. Binomial designs always use the
/// exact value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EssModel {
    #[default]
    Exact,
    NullConditional,
}

/// An arithmetic grid `start, start+step, ..., stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn new(start: f64, stop: f64, step: f64) -> Self {
        Self { start, stop, step }
    }

    pub fn values(&self) -> Vec<f64> {
        grid_values(self.start, self.stop, self.step)
    }
}

/// Evenly spaced points from `lo` to `hi` inclusive, rounded to 1e-10 so
/// nominal values like 0.07 compare equal to their literals.
pub fn grid_values(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if step <= 0.0 || hi < lo {
        return vec![lo];
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    (0..count)
        .map(|i| ((lo + i as f64 * step) * 1e10).round() / 1e10)
        .collect()
}

/// Validated problem statement shared by both design families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    /// `(0, delta_1, ..., delta_K)`
    pub delta: Vec<f64>,
    /// `(p_0, ..., p_K)` at which expected sample size is scored
    pub p_ess: Vec<f64>,
    pub ratios: AllocationRatios,
    pub weights: Vec<Weights>,
    pub control: Control,
    /// Designs use `n_min < n <= n_max`.
    pub n_min: u32,
    /// `None` means: derived from the single-stage design (binomial) or a
    /// generous default cap (Fisher).
    pub n_max: Option<u32>,
    pub alpha1_grid: GridSpec,
    pub beta1_grid: GridSpec,
    pub p_grid_step: f64,
    /// Golden-section refinement around the grid optimum of every max/min over `p`.
    pub p_refine: bool,
    pub ess_model: EssModel,
    pub seed: u64,
}

impl TrialConfig {
    /// The phase II example: alpha 0.15, beta 0.2, delta 0.15, p_ESS 0.7,
    /// doubling allocation, the seven weight vectors of the comparison.
    pub fn example(k: usize) -> Self {
        let weights = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [1e-5, 0.0, 1.0],
            [1.0, 1.0, 0.0],
            [1.0, 0.0, 1.0],
            [0.0, 1.0, 1.0],
            [1.0, 1.0, 1.0],
        ]
        .into_iter()
        .map(Weights)
        .collect();
        let mut delta = vec![0.15; k + 1];
        delta[0] = 0.0;
        Self {
            k,
            alpha: 0.15,
            beta: 0.2,
            delta,
            p_ess: vec![0.7; k + 1],
            ratios: AllocationRatios::default(),
            weights,
            control: Control::Weak,
            n_min: 0,
            n_max: None,
            alpha1_grid: GridSpec::new(0.01, 0.14, 0.01),
            beta1_grid: GridSpec::new(0.01, 0.19, 0.01),
            p_grid_step: 0.01,
            p_refine: true,
            ess_model: EssModel::Exact,
            seed: 20_170_101,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > MAX_ARMS {
            return Err(Error::ArmCount(self.k));
        }
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.alpha) || !unit(self.beta) {
            return Err(Error::Config(format!(
                "alpha and beta must lie in (0,1), got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if self.delta.len() != self.k + 1 || self.delta[0] != 0.0 {
            return Err(Error::Config("delta must be (0, delta_1..delta_K)".into()));
        }
        if self.delta[1..].iter().any(|&d| !(d > 0.0 && d < 1.0)) {
            return Err(Error::Config("every delta_k must lie in (0,1)".into()));
        }
        if self.p_ess.len() != self.k + 1 || self.p_ess.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Config("p_ess must be K+1 probabilities".into()));
        }
        if self
            .p_ess
            .iter()
            .zip(&self.delta)
            .any(|(p, d)| p + d > 1.0 + 1e-12)
        {
            return Err(Error::Config("p_ess + delta must stay within [0,1]".into()));
        }
        self.ratios.validate()?;
        if self.weights.is_empty() {
            return Err(Error::Config(
                "at least one weight vector is required".into(),
            ));
        }
        for w in &self.weights {
            Weights::try_from(w.0)?;
        }
        if !(self.p_grid_step > 0.0 && self.p_grid_step <= 0.05) {
            return Err(Error::Config("p_grid_step must lie in (0, 0.05]".into()));
        }
        let check_grid = |g: &GridSpec, upper: f64, name: &str| -> Result<()> {
            let v = g.values();
            if g.step <= 0.0 || v.iter().any(|&x| !(x > 0.0 && x < upper)) {
                return Err(Error::Config(format!(
                    "{name} grid must lie inside (0, {upper})"
                )));
            }
            Ok(())
        };
        check_grid(&self.alpha1_grid, self.alpha, "alpha1")?;
        check_grid(&self.beta1_grid, self.beta, "beta1")?;
        if let Some(max) = self.n_max {
            if max <= self.n_min {
                return Err(Error::Config(format!(
                    "n_max ({max}) must exceed n_min ({})",
                    self.n_min
                )));
            }
            if !(self.n_min + 1..=max).any(|n| self.ratios.sizes(n).is_some()) {
                return Err(Error::Config(format!(
                    "no n in ({}, {max}] makes rC2*n, rE1*n and rE2*n integral",
                    self.n_min
                )));
            }
        }
        Ok(())
    }

    /// `max_k delta_k`.
    pub fn max_delta(&self) -> f64 {
        self.delta[1..].iter().copied().fold(0.0, f64::max)
    }

    /// `(p, ..., p) + delta`.
    pub fn alternative(&self, p: f64) -> Vec<f64> {
        self.delta.iter().map(|d| (p + d).min(1.0)).collect()
    }

    pub fn common(&self, p: f64) -> Vec<f64> {
        vec![p; self.k + 1]
    }

    pub fn p_ess_alt(&self) -> Vec<f64> {
        self.p_ess
            .iter()
            .zip(&self.delta)
            .map(|(p, d)| (p + d).min(1.0))
            .collect()
    }

    /// `n (r_C2 + K r_E2)`.
    pub fn max_sample_size(&self, n: u32) -> f64 {
        n as f64 * (self.ratios.r_c2 + self.k as f64 * self.ratios.r_e2)
    }
}

/// Scalar-or-vector JSON value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrVec {
    Scalar(f64),
    Vector(Vec<f64>),
}

/// Grid pair used by the Fisher sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherGrid {
    pub alpha1: GridSpec,
    pub beta1: GridSpec,
}

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// On-disk configuration (JSON). Missing fields take the example defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub delta: Option<ScalarOrVec>,
    #[serde(default)]
    pub p_ess: Option<ScalarOrVec>,
    #[serde(default)]
    pub ratios: Option<AllocationRatios>,
    #[serde(default)]
    pub weights: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    pub control: Option<Control>,
    #[serde(default)]
    pub n_min: Option<u32>,
    #[serde(default)]
    pub n_max: Option<u32>,
    #[serde(default)]
    pub fisher_grid: Option<FisherGrid>,
    #[serde(default)]
    pub p_grid_step: Option<f64>,
    #[serde(default)]
    pub p_refine: Option<bool>,
    #[serde(default)]
    pub ess_model: Option<EssModel>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_schema() -> u32 {
    CONFIG_SCHEMA_VERSION
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Applies defaults and broadcasting, then validates.
    pub fn resolve(&self) -> Result<TrialConfig> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.k == 0 || self.k > MAX_ARMS {
            return Err(Error::ArmCount(self.k));
        }
        let k = self.k;
        let mut cfg = TrialConfig::example(k);
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(b) = self.beta {
            cfg.beta = b;
        }
        if let Some(d) = &self.delta {
            cfg.delta = match d {
                ScalarOrVec::Scalar(v) => {
                    let mut d = vec![*v; k + 1];
                    d[0] = 0.0;
                    d
                }
                ScalarOrVec::Vector(v) if v.len() == k => {
                    std::iter::once(0.0).chain(v.iter().copied()).collect()
                }
                ScalarOrVec::Vector(v) if v.len() == k + 1 => v.clone(),
                ScalarOrVec::Vector(v) => {
                    return Err(Error::Config(format!(
                        "delta has {} entries, expected {k} or {}",
                        v.len(),
                        k + 1
                    )))
                }
            };
        }
        if let Some(p) = &self.p_ess {
            cfg.p_ess = match p {
                ScalarOrVec::Scalar(v) => vec![*v; k + 1],
                ScalarOrVec::Vector(v) if v.len() == k + 1 => v.clone(),
                ScalarOrVec::Vector(v) => {
                    return Err(Error::Config(format!(
                        "p_ess has {} entries, expected {}",
                        v.len(),
                        k + 1
                    )))
                }
            };
        }
        if let Some(r) = self.ratios {
            cfg.ratios = r;
        }
        if let Some(w) = &self.weights {
            cfg.weights = w
                .iter()
                .map(|&w| Weights::try_from(w))
                .collect::<Result<_>>()?;
        }
        if let Some(c) = self.control {
            cfg.control = c;
        }
        if let Some(v) = self.n_min {
            cfg.n_min = v;
        }
        cfg.n_max = self.n_max;
        if let Some(g) = &self.fisher_grid {
            cfg.alpha1_grid = g.alpha1;
            cfg.beta1_grid = g.beta1;
        }
        if let Some(s) = self.p_grid_step {
            cfg.p_grid_step = s;
        }
        if let Some(r) = self.p_refine {
            cfg.p_refine = r;
        }
        if let Some(m) = self.ess_model {
            cfg.ess_model = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
