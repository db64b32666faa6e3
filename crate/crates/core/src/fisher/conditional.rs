//! Stage-wise conditional distribution of the success counts given their
//! total, and the marginal law of that total.

use serde::{Deserialize, Serialize};

use crate::config::StageSizes;
use crate::error::{Error, Result};
use crate::math::{binom_pmf, binom_pmf_vec, OddsRatioVector};

/// Which experimental arms are present in a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StagePresence {
    pub k: usize,
    pub mask: u32,
}

impl StagePresence {
    pub fn all(k: usize) -> Self {
        Self {
            k,
            mask: (1u32 << k) - 1,
        }
    }

    pub fn from_rho(rho: &[u8]) -> Self {
        let mask = rho
            .iter()
            .enumerate()
            .filter(|(_, &r)| r == 1)
            .fold(0, |m, (i, _)| m | 1 << i);
        Self { k: rho.len(), mask }
    }

    pub fn present(&self, arm: usize) -> bool {
        self.mask >> arm & 1 == 1
    }

    /// `m = rho . rho`.
    pub fn count(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn rho(&self) -> Vec<u8> {
        (0..self.k).map(|a| self.present(a) as u8).collect()
    }
}

/// Group sizes `(control, arm)` used in stage `j` (1 or 2).
fn stage_groups(sizes: &StageSizes, stage: u8) -> Result<(u32, u32)> {
    match stage {
        1 => Ok((sizes.c1, sizes.e1)),
        2 => Ok((sizes.c2, sizes.e2)),
        _ => Err(Error::Validation(format!(
            "stage must be 1 or 2, got {stage}"
        ))),
    }
}

fn stage_total(sizes: &StageSizes, rho: &StagePresence, stage: u8) -> Result<u32> {
    let (c, e) = stage_groups(sizes, stage)?;
    Ok(c + rho.count() as u32 * e)
}

/// `f(x_j | z_j, rho_j, theta)`.
///
/// The weights `C(n_0, x_0) prod_k C(n_k, x_k) theta_k^x_k` are evaluated as
/// binomial probabilities with `p_0 = 1/2` and `p_k = theta_k / (1 + theta_k)`:
/// the two differ by a factor that cancels in the ratio, and the binomial form
/// never overflows for extreme `theta`.
pub fn conditional_pmf(
    x: &[i64],
    z: i64,
    rho: &StagePresence,
    theta: &OddsRatioVector,
    sizes: &StageSizes,
    stage: u8,
) -> Result<f64> {
    let k = rho.k;
    if x.len() != k + 1 || theta.len() != k {
        return Err(Error::Validation(
            "count/odds-ratio vector length mismatch".into(),
        ));
    }
    let total = stage_total(sizes, rho, stage)? as i64;
    if z < 0 || z > total {
        return Err(Error::Validation(format!("z = {z} outside [0, {total}]")));
    }
    if x.iter().sum::<i64>() != z {
        return Ok(0.0);
    }
    let (c, e) = stage_groups(sizes, stage)?;
    let p = theta.to_probabilities();
    let mut h = binom_pmf(x[0], c, p[0]);
    for a in 0..k {
        let n_a = if rho.present(a) { e } else { 0 };
        h *= binom_pmf(x[a + 1], n_a, p[a + 1]);
    }
    if h == 0.0 {
        return Ok(0.0);
    }
    let g = g_pmf(z, &p, rho, sizes, stage)?;
    Ok(h / g)
}

/// Full PMF of `Z_j` by convolving the control binomial with each present
/// arm's binomial.
pub fn g_pmf_vec(
    p: &[f64],
    rho: &StagePresence,
    sizes: &StageSizes,
    stage: u8,
) -> Result<Vec<f64>> {
    let (c, e) = stage_groups(sizes, stage)?;
    if p.len() != rho.k + 1 {
        return Err(Error::Validation(
            "probability vector length mismatch".into(),
        ));
    }
    let mut acc = binom_pmf_vec(c, p[0]);
    for a in 0..rho.k {
        if !rho.present(a) {
            continue;
        }
        let b = binom_pmf_vec(e, p[a + 1]);
        let mut next = vec![0.0; acc.len() + b.len() - 1];
        for (i, &u) in acc.iter().enumerate() {
            if u == 0.0 {
                continue;
            }
            for (j, &v) in b.iter().enumerate() {
                next[i + j] += u * v;
            }
        }
        acc = next;
    }
    Ok(acc)
}

/// `g(z_j | p, rho_j)`.
pub fn g_pmf(z: i64, p: &[f64], rho: &StagePresence, sizes: &StageSizes, stage: u8) -> Result<f64> {
    let v = g_pmf_vec(p, rho, sizes, stage)?;
    Ok(if z < 0 || z as usize >= v.len() {
        0.0
    } else {
        v[z as usize]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AllocationRatios;

    fn unit_sizes() -> StageSizes {
        StageSizes {
            n: 1,
            c1: 1,
            e1: 1,
            c2: 1,
            e2: 1,
        }
    }

    #[test]
    fn one_by_one_examples() {
        let s = unit_sizes();
        let rho = StagePresence::all(1);
        let one = OddsRatioVector::ones(1);
        assert!((conditional_pmf(&[1, 0], 1, &rho, &one, &s, 1).unwrap() - 0.5).abs() < 1e-15);
        assert!((conditional_pmf(&[0, 1], 1, &rho, &one, &s, 1).unwrap() - 0.5).abs() < 1e-15);
        let three = OddsRatioVector { theta: vec![3.0] };
        assert!((conditional_pmf(&[0, 1], 1, &rho, &three, &s, 1).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(conditional_pmf(&[1, 1], 1, &rho, &one, &s, 1).unwrap(), 0.0);
        assert!(conditional_pmf(&[1, 1], 3, &rho, &one, &s, 1).is_err());
    }

    #[test]
    fn g_examples() {
        let s = unit_sizes();
        let rho = StagePresence::all(1);
        assert!((g_pmf(0, &[0.5, 0.5], &rho, &s, 1).unwrap() - 0.25).abs() < 1e-15);
        let absent = StagePresence::from_rho(&[0]);
        let g = g_pmf_vec(&[0.3, 0.9], &absent, &s, 2).unwrap();
        assert_eq!(g.len(), 2);
        assert!((g[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn absent_arm_with_successes_has_zero_mass() {
        let s = AllocationRatios::default().sizes(2).unwrap();
        let rho = StagePresence::from_rho(&[1, 0]);
        let one = OddsRatioVector::ones(2);
        assert_eq!(
            conditional_pmf(&[0, 1, 1], 2, &rho, &one, &s, 2).unwrap(),
            0.0
        );
    }

    #[test]
    fn normalization_over_theta() {
        let s = AllocationRatios::default().sizes(3).unwrap();
        let rho = StagePresence::all(2);
        for theta in [[1.0, 1.0], [1.0 / 64.0, 64.0], [2.0, 0.5]] {
            let th = OddsRatioVector {
                theta: theta.to_vec(),
            };
            for z in 0..=9i64 {
                let mut total = 0.0;
                for x0 in 0..=3 {
                    for x1 in 0..=3 {
                        for x2 in 0..=3 {
                            total += conditional_pmf(&[x0, x1, x2], z, &rho, &th, &s, 1).unwrap();
                        }
                    }
                }
                assert!((total - 1.0).abs() < 1e-9, "theta {theta:?} z {z}: {total}");
            }
        }
    }

    #[test]
    fn conditioning_removes_common_p() {
        let s = AllocationRatios::default().sizes(3).unwrap();
        let rho = StagePresence::all(2);
        let one = OddsRatioVector::ones(2);
        let x = [1i64, 2, 0];
        let f = conditional_pmf(&x, 3, &rho, &one, &s, 1).unwrap();
        for p in [0.3, 0.5, 0.7] {
            let pv = [p; 3];
            let h = binom_pmf(1, 3, p) * binom_pmf(2, 3, p) * binom_pmf(0, 3, p);
            let direct = h / g_pmf(3, &pv, &rho, &s, 1).unwrap();
            assert!((direct - f).abs() < 1e-12);
        }
    }
}
