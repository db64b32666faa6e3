//! Serializable design payloads and design reports.

use serde::{Deserialize, Serialize};

use crate::binomial::BinomialDesign;
use crate::config::{EssModel, TrialConfig};
use crate::error::{Error, Result};
use crate::fisher::{FisherDesign, FisherDesignFile};
use crate::oc::{ess_scored, oc_at, Design, OCReport};
use crate::optimize::{check_constraints, ConstraintReport, ObjectiveTerms};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// A design as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "design", rename_all = "lowercase")]
pub enum DesignPayload {
    Binomial(BinomialDesign),
    Fisher(FisherDesignFile),
}

impl From<&Design> for DesignPayload {
    fn from(d: &Design) -> Self {
        match d {
            Design::Binomial(b) => DesignPayload::Binomial(b.clone()),
            Design::Fisher(f) => DesignPayload::Fisher(f.to_file()),
        }
    }
}

impl DesignPayload {
    /// Validates the payload; Fisher boundaries are regenerated and compared.
    pub fn to_design(&self) -> Result<Design> {
        match self {
            DesignPayload::Binomial(b) => {
                b.validate()?;
                Ok(Design::Binomial(b.clone()))
            }
            DesignPayload::Fisher(f) => Ok(Design::Fisher(FisherDesign::from_file(f)?)),
        }
    }
}

/// Where a report came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub version: String,
    pub timestamp: String,
}

/// A design with its operating characteristics at `p_ESS` and
/// `p_ESS + delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub schema_version: u32,
    pub method: String,
    pub design: DesignPayload,
    pub n: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weights: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub objective: Option<ObjectiveTerms>,
    pub ess_model: EssModel,
    pub oc_null: OCReport,
    pub oc_alt: OCReport,
    /// `(ESS(p_ESS), ESS(p_ESS + delta))` under `ess_model`
    pub ess_scored: (f64, f64),
    pub max_n: u32,
    pub constraints: ConstraintReport,
    pub provenance: Provenance,
}

impl DesignReport {
    pub fn build(design: &Design, cfg: &TrialConfig, provenance: Provenance) -> Result<Self> {
        let alt = cfg.p_ess_alt();
        let (alpha1, beta1) = match design {
            Design::Fisher(f) => (f.alpha1(), f.beta1()),
            Design::Binomial(_) => (None, None),
        };
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            method: design.method().into(),
            design: design.into(),
            n: design.n(),
            alpha1,
            beta1,
            weights: None,
            objective: None,
            ess_model: cfg.ess_model,
            oc_null: oc_at(design, &cfg.p_ess)?,
            oc_alt: oc_at(design, &alt)?,
            ess_scored: (
                ess_scored(design, &cfg.p_ess, cfg.ess_model),
                ess_scored(design, &alt, cfg.ess_model),
            ),
            max_n: design.max_sample_size(),
            constraints: check_constraints(design, cfg, cfg.p_grid_step),
            provenance,
        })
    }

    /// Re-evaluates the stored design and compares every OC number.
    pub fn recheck(&self) -> Result<Design> {
        let d = self.design.to_design()?;
        for stored in [&self.oc_null, &self.oc_alt] {
            let fresh = oc_at(&d, &stored.p)?;
            let diffs = [
                (fresh.fwer - stored.fwer).abs(),
                (fresh.fwp - stored.fwp).abs(),
                (fresh.ess - stored.ess).abs(),
            ];
            if diffs.iter().any(|&x| x > 1e-9) {
                return Err(Error::Consistency(format!(
                    "re-evaluation at {:?} differs from the report",
                    stored.p
                )));
            }
        }
        Ok(d)
    }
}
