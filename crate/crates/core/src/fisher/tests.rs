use super::*;
use crate::config::TrialConfig;
use crate::math::binom_pmf;

fn small_design(k: usize, n: u32, alpha1: f64, beta1: f64) -> FisherDesign {
    let cfg = TrialConfig::example(k);
    FisherDesign::build(FisherSpec {
        k,
        n,
        alpha: cfg.alpha,
        delta: cfg.delta.clone(),
        p_grid_step: cfg.p_grid_step,
        control: Control::Weak,
        ratios: cfg.ratios,
        stage_one: StageOneRule::Spending { alpha1, beta1 },
    })
    .unwrap()
}

/// Every lattice point replayed through the decision rules.
fn replay_distribution(d: &FisherDesign, p: &[f64]) -> Vec<f64> {
    let k = d.k();
    let s = *d.sizes();
    let mut out = vec![0.0; 1 << (2 * k)];
    let groups1: Vec<u32> = std::iter::once(s.c1)
        .chain(std::iter::repeat_n(s.e1, k))
        .collect();
    let groups2: Vec<u32> = std::iter::once(s.c2)
        .chain(std::iter::repeat_n(s.e2, k))
        .collect();
    for x1 in lattice(&groups1) {
        let w1: f64 = x1
            .iter()
            .zip(&groups1)
            .zip(p)
            .map(|((&x, &g), &q)| binom_pmf(x, g, q))
            .product();
        if w1 == 0.0 {
            continue;
        }
        let o = conduct_fisher(d, &x1, None);
        match o {
            Ok(o) => out[o.code()] += w1,
            Err(_) => {
                for x2 in lattice(&groups2) {
                    let o = conduct_fisher(d, &x1, Some(&x2)).unwrap();
                    let mut w2 = binom_pmf(x2[0], groups2[0], p[0]);
                    for a in 0..k {
                        if o.omega(a) == 2 {
                            w2 *= binom_pmf(x2[a + 1], groups2[a + 1], p[a + 1]);
                        } else if x2[a + 1] != 0 {
                            w2 = 0.0;
                        }
                    }
                    out[o.code()] += w1 * w2;
                }
            }
        }
    }
    out
}

fn lattice(groups: &[u32]) -> Vec<Vec<i64>> {
    let mut all = vec![vec![]];
    for &g in groups {
        all = all
            .into_iter()
            .flat_map(|v: Vec<i64>| {
                (0..=g as i64).map(move |x| {
                    let mut w = v.clone();
                    w.push(x);
                    w
                })
            })
            .collect();
    }
    all
}

#[test]
fn distribution_matches_replay() {
    for (k, n) in [(1usize, 3u32), (2, 2)] {
        for (a1, b1) in [(0.05, 0.1), (0.1, 0.18)] {
            let d = small_design(k, n, a1, b1);
            let space = OutcomeSpace::enumerate(k).unwrap();
            for p in [vec![0.3; k + 1], vec![0.2, 0.6, 0.45][..k + 1].to_vec()] {
                let table = prob::outcome_table(d.sizes(), &d.boundaries, &p);
                let replay = replay_distribution(&d, &p);
                for o in space.iter() {
                    assert!((table[o.code()] - replay[o.code()]).abs() < 1e-13, "{o:?}");
                }
                let total: f64 = d.outcome_distribution(&p, &space).iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
                let none = d.no_reject_probability(&p);
                let direct: f64 = space
                    .iter()
                    .filter(|o| !o.rejects_any())
                    .map(|o| table[o.code()])
                    .sum();
                assert!((none - direct).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn bands_agree_with_conduct() {
    let d = small_design(2, 2, 0.1, 0.18);
    let s = *d.sizes();
    let space = OutcomeSpace::enumerate(2).unwrap();
    for x1 in lattice(&[s.c1, s.e1, s.e1]) {
        let z1 = x1.iter().sum::<i64>() as usize;
        for x2 in lattice(&[s.c2, s.e2, s.e2]) {
            let truth = conduct_fisher(&d, &x1, Some(&x2)).unwrap();
            let mut hits = 0;
            for o in space.iter() {
                let z2 = (x2[0]
                    + (0..2)
                        .filter(|&a| o.omega(a) == 2)
                        .map(|a| x2[a + 1])
                        .sum::<i64>()) as usize;
                let inside = (0..2).all(|a| {
                    let t1 = x1[a + 1] - x1[0];
                    let t2 = t1 + x2[a + 1] - x2[0];
                    band_f1(a, z1, o, &d.boundaries).contains(t1)
                        && (o.last_stage() == 1
                            || band_f2(a, z1, z2, o, &d.boundaries).contains(t2))
                });
                if inside {
                    hits += 1;
                    assert_eq!(*o, truth);
                }
            }
            assert_eq!(hits, 1);
        }
    }
}

#[test]
fn conduct_examples() {
    let d = small_design(2, 10, 0.07, 0.17);
    let f1 = d.boundaries.f1;
    // every arm far below control: global futility stop
    let o = conduct_fisher(&d, &[10, 0, 0], None).unwrap();
    assert_eq!((o.psi_vec(), o.omega_vec()), (vec![0, 0], vec![1, 1]));
    assert!(-10 <= f1);
    // arm 1 far above control: rejection ends the study
    let o = conduct_fisher(&d, &[0, 10, 1], None).unwrap();
    assert_eq!(o.psi_vec(), vec![1, 0]);
    assert_eq!(o.omega_vec(), vec![1, 1]);
    assert!(conduct_fisher(&d, &[0, 11, 1], None).is_err());
    assert!(conduct_fisher(&d, &[0, 1], None).is_err());
}

#[test]
fn design_file_roundtrip_and_tamper() {
    let d = small_design(2, 6, 0.07, 0.17);
    let file = d.to_file();
    let text = serde_json::to_string(&file).unwrap();
    let back: FisherDesignFile = serde_json::from_str(&text).unwrap();
    let loaded = FisherDesign::from_file(&back).unwrap();
    assert_eq!(loaded, d);
    let mut bad = back.clone();
    bad.f2
        .get_mut(&Index(2))
        .unwrap()
        .get_mut(&Index(5))
        .unwrap()[3] += 1;
    assert!(matches!(
        FisherDesign::from_file(&bad),
        Err(Error::Consistency(_))
    ));
}

#[test]
fn weak_control_small_n() {
    for n in [4u32, 8, 12] {
        let d = small_design(2, n, 0.05, 0.1);
        for i in 0..=100 {
            let p = i as f64 / 100.0;
            let fwer = 1.0 - d.no_reject_probability(&[p; 3]);
            assert!(fwer <= 0.15 + 1e-12, "n={n} p={p} fwer={fwer}");
        }
    }
}
