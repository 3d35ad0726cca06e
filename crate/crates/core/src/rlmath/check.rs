use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::*;

/// Outcome of one numeric property.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn random_simplex(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.gen_range(1e-3..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// `[1, 0]` maps to `[+1, −1]` within 1e-6.
pub fn two_point_advantages() -> CheckResult {
    let a = group_advantages(&RewardGroup::new(vec![1.0, 0.0])).expect("valid group");
    let err = (a[0] - 1.0).abs().max((a[1] + 1.0).abs());
    result("advantages [1,0] -> [+1,-1]", err <= 1e-6, format!("max error {err:.3e}"))
}

/// Shifting every reward by a constant leaves advantages unchanged to 1e-9.
pub fn translation_invariance(seed: u64, groups: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..groups {
        let g = rng.gen_range(2..12);
        let rewards: Vec<f64> = (0..g).map(|_| rng.gen_range(0.0..1.0)).collect();
        let shift = rng.gen_range(-5.0..5.0);
        let base = group_advantages(&RewardGroup::new(rewards.clone())).expect("valid group");
        let moved = group_advantages(&RewardGroup::new(rewards.iter().map(|r| r + shift).collect())).expect("valid group");
        for (a, b) in base.iter().zip(&moved) {
            worst = worst.max((a - b).abs());
        }
    }
    result("advantage translation invariance", worst <= 1e-9, format!("{groups} groups, max deviation {worst:.3e}"))
}

/// Scaling rewards by c > 0 leaves advantages unchanged up to the ε term.
pub fn scaling_behavior(seed: u64, groups: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..groups {
        let g = rng.gen_range(2..12);
        let rewards: Vec<f64> = (0..g).map(|_| rng.gen_range(0.0..1.0)).collect();
        if population_std(&rewards) < 1e-3 {
            continue;
        }
        let c = rng.gen_range(0.5..10.0);
        let base = group_advantages(&RewardGroup::new(rewards.clone())).expect("valid group");
        let scaled = group_advantages(&RewardGroup::new(rewards.iter().map(|r| r * c).collect())).expect("valid group");
        for (a, b) in base.iter().zip(&scaled) {
            worst = worst.max((a - b).abs());
        }
    }
    result("advantage scale invariance (numeric)", worst <= 1e-4, format!("max deviation {worst:.3e}"))
}

/// The clipped term equals the literal min of its two branches and is
/// bounded by the branch the sign of Â selects.
pub fn clipped_matches_definition(seed: u64, samples: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..samples {
        let rho = rng.gen_range(0.01..3.0);
        let adv = rng.gen_range(-5.0..5.0);
        let delta = rng.gen_range(0.01..0.99);
        let clipped_rho = if rho < 1.0 - delta { 1.0 - delta } else if rho > 1.0 + delta { 1.0 + delta } else { rho };
        let unclipped = rho * adv;
        let other = clipped_rho * adv;
        let expected = if unclipped <= other { unclipped } else { other };
        let got = clipped_term(rho, adv, delta);
        let bound = if adv >= 0.0 { got <= unclipped } else { got <= other };
        if got != expected || !bound {
            mismatches += 1;
        }
    }
    result("clipped term matches min definition", mismatches == 0, format!("{samples} samples, {mismatches} mismatches"))
}

pub fn kl_identity_and_gibbs(seed: u64, pairs: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_self: f64 = 0.0;
    let mut negatives = 0;
    for _ in 0..pairs {
        let len = rng.gen_range(2..10);
        let p = random_simplex(&mut rng, len);
        let q = random_simplex(&mut rng, len);
        worst_self = worst_self.max(kl_categorical(&p, &p).expect("valid simplex"));
        if kl_categorical(&p, &q).expect("valid simplex") < 0.0 {
            negatives += 1;
        }
    }
    result(
        "kl(p,p) <= 1e-12 and kl(p,q) >= 0",
        worst_self <= 1e-12 && negatives == 0,
        format!("{pairs} pairs, max kl(p,p) {worst_self:.3e}, {negatives} negative"),
    )
}

/// Every check with the default sample sizes.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        two_point_advantages(),
        translation_invariance(seed, 1_000),
        scaling_behavior(seed.wrapping_add(1), 1_000),
        clipped_matches_definition(seed.wrapping_add(2), 10_000),
        kl_identity_and_gibbs(seed.wrapping_add(3), 1_000),
    ]
}
