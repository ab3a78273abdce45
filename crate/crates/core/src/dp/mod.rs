//! Differential privacy mechanisms, exact auditing and budget accounting.

mod mechanism;

pub use mechanism::*;

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Relative slack allowed on audited ratio bounds, for rounding only.
pub const AUDIT_SLACK: f64 = 1e-9;

/// Budget of a generated sequence under sequential composition.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BudgetLedger {
    pub per_step: f64,
    pub steps: usize,
    pub total: f64,
}

/// Per-token bound `epsilon + ln(vocab_size)` of the two-set mechanism.
pub fn per_token_epsilon(dp: &DpParams) -> f64 {
    dp.epsilon + (dp.vocab_size as f64).ln()
}

/// Composes `steps` two-set draws: `total = (epsilon + ln s) * steps`.
pub fn compose_budget(dp: &DpParams, steps: usize) -> Result<BudgetLedger> {
    dp.validate()?;
    let per_step = per_token_epsilon(dp);
    Ok(BudgetLedger {
        per_step,
        steps,
        total: per_step * steps as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub eps: f64,
    pub s: usize,
    pub k: usize,
    pub pairs: usize,
    pub max_ratio: f64,
    pub bound: f64,
    pub pass: bool,
    /// Outputs skipped because one side had probability zero.
    pub skipped: usize,
}

pub fn audit_csv(rows: &[AuditRow]) -> String {
    let mut out = String::from("eps,s,k,pairs,max_ratio,bound,pass\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{},{}", r.eps, r.s, r.k, r.pairs, r.max_ratio, r.bound, r.pass);
    }
    out
}

/// A random full-support distribution over `n` outcomes. Mixes flat, peaked
/// and nearly one-hot shapes so that audits reach the extremes.
pub fn random_distribution<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut p: Vec<f64> = match rng.gen_range(0..3) {
        0 => (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect(),
        1 => {
            let c = rng.gen_range(0.0..10.0);
            (0..n)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(rng);
                    (c * g).exp()
                })
                .collect()
        }
        _ => {
            let delta = 10f64.powf(rng.gen_range(-6.0..-1.0));
            let hot = rng.gen_range(0..n);
            (0..n)
                .map(|i| if i == hot { 1.0 - delta } else { delta / (n - 1) as f64 })
                .collect()
        }
    };
    // keep every outcome strictly positive after normalization
    p.iter_mut().for_each(|x| *x = x.max(1e-300));
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

fn max_ratio(a: &[f64], b: &[f64], skipped: &mut usize) -> f64 {
    let mut m: f64 = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        if x == 0.0 || y == 0.0 {
            *skipped += 1;
            continue;
        }
        m = m.max(x / y).max(y / x);
    }
    m
}

/// Checks the two-set mechanism against its per-token bound
/// `exp(epsilon + ln s)` on `pairs` random pairs of model distributions,
/// using exact output probabilities in both directions.
pub fn audit_two_set<R: Rng + ?Sized>(dp: &DpParams, rule: WithinSet, pairs: usize, rng: &mut R) -> Result<AuditRow> {
    dp.validate()?;
    let s = dp.vocab_size;
    let bound = per_token_epsilon(dp).exp();
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for _ in 0..pairs {
        let p = random_distribution(s, rng);
        let q = random_distribution(s, rng);
        let a = exact_output_distribution(&p, dp, rule)?;
        let b = exact_output_distribution(&q, dp, rule)?;
        worst = worst.max(max_ratio(&a, &b, &mut skipped));
    }
    if skipped > 0 {
        log::warn!("audit skipped {skipped} zero-probability outputs");
    }
    Ok(AuditRow {
        eps: dp.epsilon,
        s,
        k: dp.k_subset,
        pairs,
        max_ratio: worst,
        bound,
        pass: worst <= bound * (1.0 + AUDIT_SLACK),
        skipped,
    })
}

/// Control row for the audit harness: each pair uses the same distribution
/// twice, so the ratio must be exactly 1.
pub fn audit_two_set_control<R: Rng + ?Sized>(
    dp: &DpParams,
    rule: WithinSet,
    pairs: usize,
    rng: &mut R,
) -> Result<AuditRow> {
    dp.validate()?;
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for _ in 0..pairs {
        let p = random_distribution(dp.vocab_size, rng);
        let a = exact_output_distribution(&p, dp, rule)?;
        worst = worst.max(max_ratio(&a, &a, &mut skipped));
    }
    Ok(AuditRow {
        eps: dp.epsilon,
        s: dp.vocab_size,
        k: dp.k_subset,
        pairs,
        max_ratio: worst,
        bound: per_token_epsilon(dp).exp(),
        pass: worst == 1.0 || pairs == 0,
        skipped,
    })
}

/// Checks the plain exponential mechanism against `exp(epsilon)` on pairs
/// of rating vectors that differ by at most `sensitivity` per outcome.
pub fn audit_exponential<R: Rng + ?Sized>(
    epsilon: f64,
    sensitivity: f64,
    outcomes: usize,
    pairs: usize,
    rng: &mut R,
) -> Result<AuditRow> {
    if outcomes == 0 {
        return Err(Error::invalid("audit needs at least one outcome"));
    }
    let bound = epsilon.exp();
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for _ in 0..pairs {
        let u: Vec<f64> = (0..outcomes).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let v: Vec<f64> = u
            .iter()
            .map(|x| {
                // half the shifts sit exactly on the sensitivity boundary
                let d = if rng.gen_bool(0.5) {
                    if rng.gen_bool(0.5) { sensitivity } else { -sensitivity }
                } else {
                    rng.gen_range(-sensitivity..=sensitivity)
                };
                x + d
            })
            .collect();
        let a = exponential_probabilities(&u, epsilon, sensitivity)?;
        let b = exponential_probabilities(&v, epsilon, sensitivity)?;
        worst = worst.max(max_ratio(&a, &b, &mut skipped));
    }
    Ok(AuditRow {
        eps: epsilon,
        s: outcomes,
        k: 0,
        pairs,
        max_ratio: worst,
        bound,
        pass: worst <= bound * (1.0 + AUDIT_SLACK),
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn budget_examples() {
        let d = DpParams::new(1.0, 1, 20000).unwrap();
        let b = compose_budget(&d, 10).unwrap();
        assert!((b.per_step - (1.0 + 20000f64.ln())).abs() < 1e-12);
        assert!((b.per_step - 10.9035).abs() < 1e-4);
        assert!((b.total - 109.035).abs() < 1e-3);
        assert_eq!(compose_budget(&d, 0).unwrap().total, 0.0);
    }

    #[test]
    fn identical_inputs_ratio_one() {
        let d = DpParams::new(1.0, 2, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = random_distribution(4, &mut rng);
        let a = exact_output_distribution(&p, &d, WithinSet::Distinct).unwrap();
        let b = exact_output_distribution(&p, &d, WithinSet::Distinct).unwrap();
        let mut skipped = 0;
        assert_eq!(max_ratio(&a, &b, &mut skipped), 1.0);
    }

    #[test]
    fn control_row_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = DpParams::new(1.0, 2, 4).unwrap();
        let row = audit_two_set_control(&d, WithinSet::Distinct, 20, &mut rng).unwrap();
        assert_eq!(row.max_ratio, 1.0);
        assert!(row.pass);
    }

    #[test]
    fn small_audits_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = DpParams::new(0.5, 2, 4).unwrap();
        let row = audit_two_set(&d, WithinSet::Distinct, 50, &mut rng).unwrap();
        assert!(row.pass, "{row:?}");
        assert!(row.max_ratio >= 1.0);
        let row = audit_exponential(1.0, 1.0, 5, 200, &mut rng).unwrap();
        assert!(row.pass && row.max_ratio <= 1f64.exp() * (1.0 + AUDIT_SLACK));
    }

    #[test]
    fn random_distribution_full_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..300 {
            let p = random_distribution(6, &mut rng);
            assert!(p.iter().all(|&x| x > 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_header() {
        let s = audit_csv(&[]);
        assert_eq!(s, "eps,s,k,pairs,max_ratio,bound,pass\n");
    }
}
