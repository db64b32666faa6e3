//! Terminal outcomes of a two-stage study and the rejection subsets built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ARMS: usize = 4;

/// Terminal outcome `(psi, omega)`.
///
/// Stored as bitmasks over the experimental arms: bit `k` of `psi` is set when
/// `H_0k` was rejected, bit `k` of `stage2` when arm `k` was still active in
/// stage two (`omega_k = 2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OutcomePair {
    k: usize,
    psi: u32,
    stage2: u32,
}

impl OutcomePair {
    /// Builds an outcome from `psi` (0/1) and `omega` (1/2) vectors.
    pub fn new(psi: &[u8], omega: &[u8]) -> Result<Self> {
        if psi.len() != omega.len() || psi.is_empty() || psi.len() > MAX_ARMS {
            return Err(Error::ArmCount(psi.len()));
        }
        let mut p = 0;
        let mut s = 0;
        for (k, (&a, &b)) in psi.iter().zip(omega).enumerate() {
            match a {
                0 => {}
                1 => p |= 1 << k,
                _ => return Err(Error::Validation(format!("psi_{} = {a} is not 0/1", k + 1))),
            }
            match b {
                1 => {}
                2 => s |= 1 << k,
                _ => {
                    return Err(Error::Validation(format!(
                        "omega_{} = {b} is not 1/2",
                        k + 1
                    )))
                }
            }
        }
        Ok(Self::from_masks(psi.len(), p, s))
    }

    pub fn from_masks(k: usize, psi: u32, stage2: u32) -> Self {
        Self { k, psi, stage2 }
    }

    pub fn arms(&self) -> usize {
        self.k
    }

    pub fn psi_mask(&self) -> u32 {
        self.psi
    }

    pub fn stage2_mask(&self) -> u32 {
        self.stage2
    }

    /// `psi_k` for zero-based arm index `k`.
    pub fn psi(&self, k: usize) -> bool {
        self.psi >> k & 1 == 1
    }

    /// `omega_k` for zero-based arm index `k`.
    pub fn omega(&self, k: usize) -> u8 {
        1 + (self.stage2 >> k & 1) as u8
    }

    pub fn psi_vec(&self) -> Vec<u8> {
        (0..self.k).map(|k| self.psi(k) as u8).collect()
    }

    pub fn omega_vec(&self) -> Vec<u8> {
        (0..self.k).map(|k| self.omega(k)).collect()
    }

    /// `max_k omega_k`.
    pub fn last_stage(&self) -> u8 {
        if self.stage2 != 0 {
            2
        } else {
            1
        }
    }

    /// Membership in the sample space: a stage-one rejection ends the study.
    pub fn is_valid(&self) -> bool {
        let stage1_reject = self.psi & !self.stage2;
        !(stage1_reject != 0 && self.stage2 != 0)
    }

    pub fn rejects_any(&self) -> bool {
        self.psi != 0
    }

    /// Rejects at least one of the arms in `null_mask`.
    pub fn rejects_any_of(&self, null_mask: u32) -> bool {
        self.psi & null_mask != 0
    }

    /// Dense code in `0..4^K`, used for lookup tables.
    pub fn code(&self) -> usize {
        (self.psi | self.stage2 << self.k) as usize
    }
}

impl Serialize for OutcomePair {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            psi: Vec<u8>,
            omega: Vec<u8>,
        }
        Repr {
            psi: self.psi_vec(),
            omega: self.omega_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for OutcomePair {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            psi: Vec<u8>,
            omega: Vec<u8>,
        }
        let r = Repr::deserialize(d)?;
        OutcomePair::new(&r.psi, &r.omega).map_err(serde::de::Error::custom)
    }
}

/// The sample space `Xi` for `K` arms in canonical order (lexicographic in
/// `(omega, psi)`).
#[derive(Debug, Clone)]
pub struct OutcomeSpace {
    k: usize,
    outcomes: Vec<OutcomePair>,
    index: Vec<Option<usize>>,
}

impl OutcomeSpace {
    pub fn enumerate(k: usize) -> Result<Self> {
        if k == 0 || k > MAX_ARMS {
            return Err(Error::ArmCount(k));
        }
        let lex = |m: u32| -> u32 {
            // bit k-1 of the mask is arm 1, so reverse to get lexicographic order
            (0..k).fold(0, |acc, i| acc << 1 | (m >> i & 1))
        };
        let mut masks: Vec<u32> = (0..1u32 << k).collect();
        masks.sort_by_key(|&m| lex(m));
        let mut outcomes = Vec::new();
        for &stage2 in &masks {
            for &psi in &masks {
                let o = OutcomePair::from_masks(k, psi, stage2);
                if o.is_valid() {
                    outcomes.push(o);
                }
            }
        }
        let mut index = vec![None; 1 << (2 * k)];
        for (i, o) in outcomes.iter().enumerate() {
            index[o.code()] = Some(i);
        }
        Ok(Self { k, outcomes, index })
    }

    pub fn arms(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn outcomes(&self) -> &[OutcomePair] {
        &self.outcomes
    }

    pub fn iter(&self) -> impl Iterator<Item = &OutcomePair> {
        self.outcomes.iter()
    }

    pub fn index_of(&self, o: &OutcomePair) -> Option<usize> {
        if o.arms() != self.k {
            return None;
        }
        self.index[o.code()]
    }

    pub fn index_of_masks(&self, psi: u32, stage2: u32) -> usize {
        self.index[(psi | stage2 << self.k) as usize].expect("outcome outside the sample space")
    }
}

/// `(psi, omega) in Xi_ind(k)`: `H_0k` rejected.
pub fn in_xi_ind(o: &OutcomePair, k: usize) -> bool {
    o.psi(k)
}

/// `(psi, omega) in Xi_rej`: at least one rejection.
pub fn in_xi_rej(o: &OutcomePair) -> bool {
    o.rejects_any()
}

/// `(psi, omega) in Xi_FWER(p)`: some arm with `p_k == p_0` rejected.
pub fn in_xi_fwer(o: &OutcomePair, p: &[f64]) -> bool {
    o.rejects_any_of(null_mask(p))
}

/// Bitmask of arms whose null hypothesis holds exactly under `p`.
pub fn null_mask(p: &[f64]) -> u32 {
    p[1..]
        .iter()
        .enumerate()
        .filter(|(_, &pk)| pk == p[0])
        .fold(0, |m, (k, _)| m | 1 << k)
}
