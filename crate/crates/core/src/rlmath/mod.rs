//! Reward and policy-optimization arithmetic for training the hub model.
//!
//! Only the pure math lives here: brevity-shaped rewards, group-relative
//! advantages, the clipped surrogate and a categorical KL. [`check`] runs
//! the property suite behind `fugue rlmath check`.

pub mod check;

use thiserror::Error;

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Tolerance for "sums to one" on probability vectors.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RlMathError {
    #[error("group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("epsilon must be positive")]
    BadEpsilon,
    #[error("distributions differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("{0} is not a probability vector")]
    NotSimplex(&'static str),
    #[error("q is zero at index {0} where p is positive")]
    Support(usize),
}

/// `success + λ·max(0, 1 − steps/step_cap)`.
pub fn shaped_reward(success: bool, steps: u64, step_cap: u64, lambda: f64) -> f64 {
    assert!(step_cap > 0, "step_cap must be positive");
    let bonus = (1.0 - steps as f64 / step_cap as f64).max(0.0);
    f64::from(u8::from(success)) + lambda * bonus
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardGroup {
    pub rewards: Vec<f64>,
    pub epsilon: f64,
}

impl RewardGroup {
    pub fn new(rewards: Vec<f64>) -> Self {
        Self { rewards, epsilon: DEFAULT_EPSILON }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard deviation with divisor G (no Bessel correction).
pub fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// `(R_g − mean) / (std + ε)` for every member of the group.
pub fn group_advantages(group: &RewardGroup) -> Result<Vec<f64>, RlMathError> {
    if group.rewards.len() < 2 {
        return Err(RlMathError::GroupTooSmall(group.rewards.len()));
    }
    if group.epsilon <= 0.0 || group.epsilon.is_nan() {
        return Err(RlMathError::BadEpsilon);
    }
    let m = mean(&group.rewards);
    let denom = population_std(&group.rewards) + group.epsilon;
    Ok(group.rewards.iter().map(|r| (r - m) / denom).collect())
}

pub fn clip(ratio: f64, delta: f64) -> f64 {
    ratio.clamp(1.0 - delta, 1.0 + delta)
}

/// `min(ρÂ, clip(ρ, 1−δ, 1+δ)Â)`.
pub fn clipped_term(ratio: f64, advantage: f64, delta: f64) -> f64 {
    debug_assert!(ratio > 0.0 && delta > 0.0 && delta < 1.0);
    (ratio * advantage).min(clip(ratio, delta) * advantage)
}

fn check_simplex(v: &[f64], name: &'static str) -> Result<(), RlMathError> {
    if v.iter().any(|x| *x < 0.0 || !x.is_finite()) || (v.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(RlMathError::NotSimplex(name));
    }
    Ok(())
}

/// `Σ p_i log(p_i / q_i)`, with `0 log 0 = 0`.
pub fn kl_categorical(p: &[f64], q: &[f64]) -> Result<f64, RlMathError> {
    if p.len() != q.len() {
        return Err(RlMathError::LengthMismatch(p.len(), q.len()));
    }
    check_simplex(p, "p")?;
    check_simplex(q, "q")?;
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(RlMathError::Support(i));
        }
        total += pi * (pi / qi).ln();
    }
    // rounding can leave tiny negatives when p ≈ q
    Ok(total.max(0.0))
}

/// Mean clipped surrogate over `(ρ, Â)` pairs minus `β·kl`.
pub fn grpo_objective(samples: &[(f64, f64)], delta: f64, beta: f64, kl: f64) -> f64 {
    let surrogate = if samples.is_empty() {
        0.0
    } else {
        samples.iter().map(|&(r, a)| clipped_term(r, a, delta)).sum::<f64>() / samples.len() as f64
    };
    surrogate - beta * kl
}
