use erae_core::dp::{
    build_two_sets, compose_budget, exact_output_distribution, exponential_probabilities, random_distribution,
    set_choice_probs, two_set_sample, DpParams, WithinSet, AUDIT_SLACK,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson statistic and p-value of observed counts against probabilities.
/// Outcomes with zero probability must have zero counts.
fn chi_square(counts: &[u64], probs: &[f64]) -> (f64, f64) {
    let n: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut bins = 0;
    for (&c, &p) in counts.iter().zip(probs) {
        if p == 0.0 {
            assert_eq!(c, 0, "outcome with zero probability was drawn");
            continue;
        }
        let e = p * n as f64;
        stat += (c as f64 - e).powi(2) / e;
        bins += 1;
    }
    let dist = ChiSquared::new((bins - 1) as f64).unwrap();
    (stat, 1.0 - dist.cdf(stat))
}

fn sampler_matches_enumerator(seed: u64, rule: WithinSet, draws: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random_distribution(8, &mut rng);
    let dp = DpParams::new(1.0, 3, 8).unwrap();
    let exact = exact_output_distribution(&p, &dp, rule).unwrap();
    let mut counts = vec![0u64; 8];
    for _ in 0..draws {
        counts[two_set_sample(&p, &dp, rule, &mut rng).unwrap().sampled] += 1;
    }
    chi_square(&counts, &exact).1
}

#[test]
fn sampler_agrees_with_enumeration() {
    let p = sampler_matches_enumerator(11, WithinSet::Distinct, 1_000_000);
    assert!(p > 0.001, "p-value {p}");
}

#[test]
fn multiset_sampler_agrees_with_enumeration() {
    let p = sampler_matches_enumerator(12, WithinSet::Multiset, 200_000);
    assert!(p > 0.001, "p-value {p}");
}

#[test]
fn chi_square_detects_a_wrong_distribution() {
    // a sampler for p tested against a visibly different q must be rejected
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dp = DpParams::new(1.0, 3, 8).unwrap();
    let p = vec![0.3, 0.2, 0.1, 0.1, 0.1, 0.1, 0.05, 0.05];
    let q = vec![0.05, 0.05, 0.1, 0.1, 0.1, 0.1, 0.2, 0.3];
    let wrong = exact_output_distribution(&q, &dp, WithinSet::Distinct).unwrap();
    let mut counts = vec![0u64; 8];
    for _ in 0..100_000 {
        counts[two_set_sample(&p, &dp, WithinSet::Distinct, &mut rng).unwrap().sampled] += 1;
    }
    assert!(chi_square(&counts, &wrong).1 < 1e-6);
}

#[test]
fn budget_at_eps3_large_vocab() {
    let dp = DpParams::new(3.0, 5, 20000).unwrap();
    let one = compose_budget(&dp, 1).unwrap();
    assert!((one.per_step - 12.9035).abs() < 1e-4);
    let l50 = compose_budget(&dp, 50).unwrap();
    assert_eq!(l50.total, 50.0 * l50.per_step);
}

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..1.0, n).prop_map(|w| {
        let t: f64 = w.iter().sum();
        w.into_iter().map(|x| x / t).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_distribution_is_normalized(p in distribution(5), k in 1usize..=3, eps in 0.05f64..5.0) {
        let dp = DpParams::new(eps, k, 5).unwrap();
        for rule in [WithinSet::Distinct, WithinSet::Multiset] {
            let out = exact_output_distribution(&p, &dp, rule).unwrap();
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(out.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn two_set_ratio_within_bound(p in distribution(4), q in distribution(4), k in 1usize..=3, eps in 0.05f64..5.0) {
        let dp = DpParams::new(eps, k, 4).unwrap();
        let a = exact_output_distribution(&p, &dp, WithinSet::Distinct).unwrap();
        let b = exact_output_distribution(&q, &dp, WithinSet::Distinct).unwrap();
        let bound = (eps + 4f64.ln()).exp() * (1.0 + AUDIT_SLACK);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(x / y <= bound && y / x <= bound);
        }
    }

    #[test]
    fn exponential_ratio_within_bound(
        u in prop::collection::vec(-5.0f64..5.0, 6),
        shift in prop::collection::vec(-1.0f64..=1.0, 6),
        eps in 0.05f64..5.0,
    ) {
        let v: Vec<f64> = u.iter().zip(&shift).map(|(a, d)| a + d).collect();
        let a = exponential_probabilities(&u, eps, 1.0).unwrap();
        let b = exponential_probabilities(&v, eps, 1.0).unwrap();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(x / y <= eps.exp() * (1.0 + AUDIT_SLACK));
        }
    }

    #[test]
    fn set_choice_probabilities_complement(rho in 0.0f64..=1.0, eps in 0.0f64..20.0) {
        let (s, o) = set_choice_probs(rho, eps, 1.0);
        prop_assert!((s + o - 1.0).abs() < 1e-12);
        // the set holding more than half the mass is never less likely
        if rho > 0.5 {
            prop_assert!(s >= o);
        }
    }

    #[test]
    fn sets_partition_the_vocabulary(p in distribution(7), k in 1usize..=7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sets = build_two_sets(&p, k, &mut rng).unwrap();
        prop_assert!(sets.s().len() <= k && !sets.s().is_empty());
        prop_assert_eq!(sets.s().len() + sets.o_len(), 7);
        for i in 0..7 {
            prop_assert_eq!(sets.contains(i), sets.s().contains(&i));
        }
    }
}
