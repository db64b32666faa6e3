use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use twostage::harness::{
    brute_force_outcome_prob, mutation_detected, random_binomial_design, random_fisher_design,
    run_property_suite,
};
use twostage::math::{binom_pmf, binom_pmf_vec};
use twostage::oc::{ess_at, fwer_at, fwp_at, oc_at, Design};
use twostage::{OutcomeSpace, TrialConfig};

fn probs(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, k + 1)
}

#[test]
fn property_suite_is_green() {
    let report = run_property_suite(TrialConfig::example(1).seed);
    let failing: Vec<_> = report
        .families
        .iter()
        .filter(|f| !f.passed())
        .map(|f| (&f.name, &f.detail))
        .collect();
    assert!(report.all_passed, "failing families: {failing:?}");
    assert!(report.families.len() >= 15);
    let json = serde_json::to_string(&report).unwrap();
    assert!(json.contains("\"all_passed\":true"));
}

#[test]
fn suite_is_deterministic_for_a_seed() {
    let a = serde_json::to_string(&run_property_suite(11)).unwrap();
    let b = serde_json::to_string(&run_property_suite(11)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn outcome_space_sizes() {
    for k in 1..=4usize {
        let space = OutcomeSpace::enumerate(k).unwrap();
        assert_eq!(space.len(), (1 << k) + 3usize.pow(k as u32) - 1);
        assert!(space.iter().all(|o| o.is_valid()));
    }
    assert!(OutcomeSpace::enumerate(0).is_err());
    assert!(OutcomeSpace::enumerate(5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binomial_pmf_sums_to_one(n in 0u32..200, p in 0.0f64..=1.0) {
        let total: f64 = binom_pmf_vec(n, p).iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert_eq!(binom_pmf(-1, n, p), 0.0);
        prop_assert_eq!(binom_pmf(n as i64 + 1, n, p), 0.0);
    }

    #[test]
    fn binomial_design_distribution_is_normalized(seed in any::<u64>(), k in 1usize..=3, n in 1u32..12, p in probs(3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Design::Binomial(random_binomial_design(&mut rng, k, n));
        let r = oc_at(&d, &p[..=k]);
        prop_assert!(r.is_ok(), "{:?}", r.err());
        let r = r.unwrap();
        prop_assert!(r.fwer <= r.fwp + 1e-12);
        let s = d.sizes();
        prop_assert!(r.ess >= s.stage1_total(k) as f64 - 1e-9);
        prop_assert!(r.ess <= d.max_sample_size() as f64 + 1e-9);
    }

    #[test]
    fn fisher_design_distribution_is_normalized(seed in any::<u64>(), k in 1usize..=2, n in 2u32..10, p in probs(2)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Design::Fisher(random_fisher_design(&mut rng, k, n));
        let r = oc_at(&d, &p[..=k]);
        prop_assert!(r.is_ok(), "{:?}", r.err());
    }

    #[test]
    fn global_null_fwer_equals_fwp(seed in any::<u64>(), k in 1usize..=2, n in 2u32..10, p in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Design::Fisher(random_fisher_design(&mut rng, k, n));
        let v = vec![p; k + 1];
        prop_assert!((fwer_at(&d, &v) - fwp_at(&d, &v)).abs() < 1e-12);
    }

    #[test]
    fn dp_matches_oracle_on_small_designs(seed in any::<u64>(), fisher in any::<bool>(), p in probs(2)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, n) = if seed % 2 == 0 { (1, 3) } else { (2, 2) };
        let d = if fisher {
            Design::Fisher(random_fisher_design(&mut rng, k, n))
        } else {
            Design::Binomial(random_binomial_design(&mut rng, k, n))
        };
        let space = OutcomeSpace::enumerate(k).unwrap();
        let dist = d.outcome_distribution(&p[..=k], &space);
        for (o, v) in space.iter().zip(dist) {
            let oracle = brute_force_outcome_prob(&d, &p[..=k], o).unwrap();
            prop_assert!((oracle - v).abs() < 1e-12, "{o:?}: {oracle} vs {v}");
        }
    }

    #[test]
    fn ess_is_bitwise_reproducible(seed in any::<u64>(), n in 2u32..10, p in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Design::Binomial(random_binomial_design(&mut rng, 2, n));
        let v = vec![p; 3];
        let a = ess_at(&d, &v);
        let b = ess_at(&d, &v);
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn boundary_mutation_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut d = random_binomial_design(&mut rng, 2, 10);
    d.e[1] = d.f[1] + 3;
    assert!(mutation_detected(&Design::Binomial(d)));
}
