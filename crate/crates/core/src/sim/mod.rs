//! Knowledge-space simulator: searcher agents that collect facts, optionally
//! sharing them through a hub, with no language model involved.
//!
//! A task is solved for an agent once every required fact is in its
//! discovered set. Each step an unsolved agent samples one fact from its
//! discovery bias; every `E` steps it publishes what it learned since its
//! last write; with probability `read_probability` it absorbs the whole
//! published union.
//!
//! Each agent draws facts and read coins from its own two ChaCha streams keyed
//! by `(seed, agent index)`. An agent's draws therefore never depend on team
//! size or on whether the hub is on, which is what makes seed-matched
//! comparisons across N and across hub settings meaningful.

mod report;

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{paired_one_sided_p, scaling_instance, scaling_report, ScalingReport, ScalingRow, ScalingTests, SCALING_TEAM_SIZES};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("|S*| = {required} must be in 1..={facts}")]
    RequiredSize { required: usize, facts: usize },
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("cannot parse `{0}`")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeSpace {
    /// Number of facts M; facts are `0..M`.
    pub facts: usize,
    /// Sorted required facts S*.
    pub required: Vec<usize>,
    pub seed: u64,
}

/// Draws S* uniformly from the M facts.
pub fn make_space(facts: usize, required: usize, seed: u64) -> Result<KnowledgeSpace, SimError> {
    if required == 0 || required > facts {
        return Err(SimError::RequiredSize { required, facts });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut req = sample(&mut rng, facts, required).into_vec();
    req.sort_unstable();
    Ok(KnowledgeSpace { facts, required: req, seed })
}

impl KnowledgeSpace {
    /// A space whose required set is given explicitly.
    pub fn with_required(facts: usize, required: Vec<usize>) -> Result<Self, SimError> {
        let mut required = required;
        required.sort_unstable();
        required.dedup();
        if required.is_empty() || required.iter().any(|&f| f >= facts) {
            return Err(SimError::RequiredSize { required: required.len(), facts });
        }
        Ok(Self { facts, required, seed: 0 })
    }
}

/// How an agent's samples are spread over the facts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bias {
    Uniform,
    /// Facts split into `regions` contiguous blocks; agent i puts `strength`
    /// of its mass on block `i mod regions` and spreads the rest uniformly.
    Regional { regions: usize, strength: f64 },
    /// One weight vector per agent.
    Explicit { weights: Vec<Vec<f64>> },
}

impl Bias {
    pub fn weights(&self, agent: usize, facts: usize) -> Vec<f64> {
        match self {
            Bias::Uniform => vec![1.0; facts],
            Bias::Regional { regions, strength } => {
                let r = (*regions).clamp(1, facts);
                let home = agent % r;
                let lo = home * facts / r;
                let hi = (home + 1) * facts / r;
                let base = (1.0 - strength) / facts as f64;
                let bump = strength / (hi - lo) as f64;
                (0..facts).map(|f| base + if (lo..hi).contains(&f) { bump } else { 0.0 }).collect()
            }
            Bias::Explicit { weights } => weights[agent].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPolicy {
    pub hub_enabled: bool,
    pub episode_length: usize,
    pub read_probability: f64,
    pub team_size: usize,
    pub bias: Bias,
    /// Defaults to 10·M.
    pub step_cap: Option<usize>,
}

impl SimPolicy {
    pub fn new(team_size: usize, hub_enabled: bool) -> Self {
        Self { hub_enabled, episode_length: 5, read_probability: 0.2, team_size, bias: Bias::Uniform, step_cap: None }
    }

    pub fn cap(&self, space: &KnowledgeSpace) -> usize {
        self.step_cap.unwrap_or(10 * space.facts)
    }

    pub fn validate(&self, space: &KnowledgeSpace) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Policy(m));
        if self.team_size == 0 {
            return bad("team size must be at least 1".into());
        }
        if self.episode_length == 0 {
            return bad("episode length E must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.read_probability) {
            return bad(format!("read probability {} is outside [0, 1]", self.read_probability));
        }
        match &self.bias {
            Bias::Regional { regions, strength } if *regions == 0 || !(0.0..=1.0).contains(strength) => {
                return bad("regional bias needs regions ≥ 1 and strength in [0, 1]".into());
            }
            Bias::Explicit { weights } => {
                if weights.len() < self.team_size {
                    return bad(format!("{} bias vectors for {} agents", weights.len(), self.team_size));
                }
                for (i, w) in weights.iter().enumerate() {
                    if w.len() != space.facts || w.iter().any(|x| *x < 0.0 || !x.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
                        return bad(format!("bias vector {i} must hold {} nonnegative weights with positive sum", space.facts));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Per-seed outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Step at which each agent covered S*, if it did within the cap.
    pub steps_to_solve: Vec<Option<usize>>,
    /// Facts sampled by each agent (one search unit per step).
    pub search_steps: Vec<usize>,
    pub hub_reads: usize,
    pub hub_writes: usize,
    /// Whether at least one agent solved.
    pub pass_at_n: bool,
}

impl SeedOutcome {
    pub fn solved(&self) -> Vec<bool> {
        self.steps_to_solve.iter().map(Option::is_some).collect()
    }

    pub fn mean_search_steps(&self) -> f64 {
        self.search_steps.iter().sum::<usize>() as f64 / self.search_steps.len() as f64
    }

    pub fn traffic(&self) -> usize {
        self.hub_reads + self.hub_writes
    }
}

/// Final state of one seed, for property checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedTrace {
    pub outcome: SeedOutcome,
    pub discovered: Vec<Vec<bool>>,
    /// Facts each agent drew itself.
    pub sampled: Vec<Vec<bool>>,
    pub published: Vec<bool>,
}

fn stream(seed: u64, agent: usize, channel: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(agent as u64 * 2 + channel);
    rng
}

struct SimAgent {
    discovered: Vec<bool>,
    sampled: Vec<bool>,
    /// Facts learned since the last write.
    delta: Vec<usize>,
    search: ChaCha8Rng,
    coins: ChaCha8Rng,
    picker: WeightedIndex<f64>,
    solved_at: Option<usize>,
    steps: usize,
}

impl SimAgent {
    fn learn(&mut self, fact: usize) {
        if !self.discovered[fact] {
            self.discovered[fact] = true;
            self.delta.push(fact);
        }
    }

    fn covers(&self, required: &[usize]) -> bool {
        required.iter().all(|&f| self.discovered[f])
    }
}

pub fn simulate_seed(space: &KnowledgeSpace, policy: &SimPolicy, seed: u64) -> Result<SeedTrace, SimError> {
    policy.validate(space)?;
    let m = space.facts;
    let mut agents: Vec<SimAgent> = (0..policy.team_size)
        .map(|i| {
            let picker = WeightedIndex::new(policy.bias.weights(i, m)).map_err(|e| SimError::Policy(e.to_string()))?;
            Ok(SimAgent {
                discovered: vec![false; m],
                sampled: vec![false; m],
                delta: Vec::new(),
                search: stream(seed, i, 0),
                coins: stream(seed, i, 1),
                picker,
                solved_at: None,
                steps: 0,
            })
        })
        .collect::<Result<_, SimError>>()?;
    let mut published = vec![false; m];
    let (mut reads, mut writes) = (0, 0);
    let cap = policy.cap(space);

    let publish = |agent: &mut SimAgent, published: &mut Vec<bool>, writes: &mut usize| {
        if agent.delta.is_empty() {
            return;
        }
        for f in agent.delta.drain(..) {
            published[f] = true;
        }
        *writes += 1;
    };

    for t in 1..=cap {
        let mut any_running = false;
        for agent in agents.iter_mut().filter(|a| a.solved_at.is_none()) {
            any_running = true;
            let fact = agent.picker.sample(&mut agent.search);
            agent.steps += 1;
            agent.sampled[fact] = true;
            agent.learn(fact);
            if policy.hub_enabled {
                if t % policy.episode_length == 0 {
                    publish(agent, &mut published, &mut writes);
                }
                let coin: f64 = agent.coins.gen();
                if coin < policy.read_probability {
                    reads += 1;
                    for f in (0..m).filter(|&f| published[f]) {
                        agent.learn(f);
                    }
                }
            }
            if agent.covers(&space.required) {
                agent.solved_at = Some(t);
                if policy.hub_enabled {
                    publish(agent, &mut published, &mut writes);
                }
            }
        }
        if !any_running {
            break;
        }
    }

    let steps_to_solve: Vec<Option<usize>> = agents.iter().map(|a| a.solved_at).collect();
    let outcome = SeedOutcome {
        seed,
        pass_at_n: steps_to_solve.iter().any(Option::is_some),
        steps_to_solve,
        search_steps: agents.iter().map(|a| a.steps).collect(),
        hub_reads: reads,
        hub_writes: writes,
    };
    Ok(SeedTrace {
        outcome,
        discovered: agents.iter().map(|a| a.discovered.clone()).collect(),
        sampled: agents.iter().map(|a| a.sampled.clone()).collect(),
        published,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub space: KnowledgeSpace,
    pub policy: SimPolicy,
    pub seeds: Vec<SeedOutcome>,
    pub pass_rate: f64,
    pub mean_search_steps: f64,
    pub mean_traffic: f64,
}

pub fn run_sim(space: &KnowledgeSpace, policy: &SimPolicy, seeds: &[u64]) -> Result<SimMetrics, SimError> {
    let outcomes: Vec<SeedOutcome> = seeds.iter().map(|&s| simulate_seed(space, policy, s).map(|t| t.outcome)).collect::<Result<_, _>>()?;
    let n = outcomes.len().max(1) as f64;
    Ok(SimMetrics {
        space: space.clone(),
        policy: policy.clone(),
        pass_rate: outcomes.iter().filter(|o| o.pass_at_n).count() as f64 / n,
        mean_search_steps: outcomes.iter().map(SeedOutcome::mean_search_steps).sum::<f64>() / n,
        mean_traffic: outcomes.iter().map(|o| o.traffic() as f64).sum::<f64>() / n,
        seeds: outcomes,
    })
}

/// Two agents with disjoint halves of the facts as their only reachable
/// regions, and S* = all facts: neither can finish alone.
pub fn complementary_instance(facts: usize) -> (KnowledgeSpace, Bias) {
    let half = facts / 2;
    let space = KnowledgeSpace::with_required(facts, (0..facts).collect()).expect("nonempty");
    let left = (0..facts).map(|f| if f < half { 1.0 } else { 0.0 }).collect();
    let right = (0..facts).map(|f| if f >= half { 1.0 } else { 0.0 }).collect();
    (space, Bias::Explicit { weights: vec![left, right] })
}

/// `P(T ≤ t)` for the uniform coupon collector over `m` coupons.
pub fn coupon_cdf(m: usize, t: usize) -> f64 {
    (0..=m)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * crate::aggregate::binomial(m, j) as f64 * (1.0 - j as f64 / m as f64).powi(t as i32)
        })
        .sum()
}

/// `m · H_m`.
pub fn coupon_mean(m: usize) -> f64 {
    m as f64 * (1..=m).map(|k| 1.0 / k as f64).sum::<f64>()
}

impl fmt::Display for Bias {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bias::Uniform => f.write_str("uniform"),
            Bias::Regional { regions, strength } => write!(f, "regional:{regions}:{strength}"),
            Bias::Explicit { weights } => write!(f, "explicit({} agents)", weights.len()),
        }
    }
}

impl FromStr for Bias {
    type Err = SimError;

    /// `uniform` or `regional:<regions>:<strength>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["uniform"] => Ok(Bias::Uniform),
            ["regional", r, st] => Ok(Bias::Regional {
                regions: r.parse().map_err(|_| SimError::Parse(s.into()))?,
                strength: st.parse().map_err(|_| SimError::Parse(s.into()))?,
            }),
            _ => Err(SimError::Parse(s.into())),
        }
    }
}

/// Parses `M=50,S=20[,seed=7]`.
pub fn parse_space(spec: &str) -> Result<KnowledgeSpace, SimError> {
    let (mut m, mut s, mut seed) = (None, None, 0u64);
    for kv in spec.split(',').map(str::trim).filter(|x| !x.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| SimError::Parse(kv.into()))?;
        let num = |v: &str| v.trim().parse::<u64>().map_err(|_| SimError::Parse(kv.into()));
        match k.trim() {
            "M" | "m" => m = Some(num(v)? as usize),
            "S" | "s" => s = Some(num(v)? as usize),
            "seed" => seed = num(v)?,
            _ => return Err(SimError::Parse(kv.into())),
        }
    }
    let m = m.ok_or_else(|| SimError::Parse(format!("{spec}: missing M")))?;
    make_space(m, s.unwrap_or(m), seed)
}

/// Parses `hub=on,E=5,p=0.2,bias=regional:8:0.8[,cap=500][,N=3]`.
pub fn parse_policy(spec: &str) -> Result<SimPolicy, SimError> {
    let mut p = SimPolicy::new(1, true);
    for kv in spec.split(',').map(str::trim).filter(|x| !x.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| SimError::Parse(kv.into()))?;
        let err = || SimError::Parse(kv.to_string());
        match k.trim() {
            "hub" => p.hub_enabled = matches!(v, "on" | "true" | "1"),
            "E" | "e" => p.episode_length = v.parse().map_err(|_| err())?,
            "p" | "read" => p.read_probability = v.parse().map_err(|_| err())?,
            "N" | "n" => p.team_size = v.parse().map_err(|_| err())?,
            "cap" => p.step_cap = Some(v.parse().map_err(|_| err())?),
            "bias" => p.bias = v.parse()?,
            _ => return Err(err()),
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::pass_at_k_counts;
    use proptest::prelude::*;

    #[test]
    fn space_boundaries() {
        assert_eq!(make_space(10, 10, 1).unwrap().required, (0..10).collect::<Vec<_>>());
        assert_eq!(make_space(50, 20, 3).unwrap(), make_space(50, 20, 3).unwrap());
        assert_ne!(make_space(50, 20, 3).unwrap(), make_space(50, 20, 4).unwrap());
        assert!(matches!(make_space(10, 0, 1), Err(SimError::RequiredSize { .. })));
        assert!(make_space(3, 4, 1).is_err());
    }

    #[test]
    fn zero_read_probability_matches_hub_off() {
        let space = make_space(30, 12, 5).unwrap();
        let mut on = SimPolicy::new(4, true);
        on.read_probability = 0.0;
        on.bias = Bias::Regional { regions: 4, strength: 0.7 };
        let off = SimPolicy { hub_enabled: false, ..on.clone() };
        for seed in 0..50 {
            let a = simulate_seed(&space, &on, seed).unwrap().outcome;
            let b = simulate_seed(&space, &off, seed).unwrap().outcome;
            assert_eq!(a.steps_to_solve, b.steps_to_solve);
            assert_eq!(a.search_steps, b.search_steps);
            assert_eq!(b.traffic(), 0);
        }
    }

    #[test]
    fn complementary_pair_needs_reads() {
        let (space, bias) = complementary_instance(10);
        let mut with_reads = SimPolicy::new(2, true);
        with_reads.bias = bias;
        with_reads.episode_length = 1;
        with_reads.read_probability = 1.0;
        let no_reads = SimPolicy { read_probability: 0.0, ..with_reads.clone() };
        for seed in 0..20 {
            assert!(simulate_seed(&space, &with_reads, seed).unwrap().outcome.solved().iter().all(|s| *s));
            let alone = simulate_seed(&space, &no_reads, seed).unwrap().outcome;
            assert!(alone.solved().iter().all(|s| !*s));
            assert_eq!(alone.search_steps, vec![100, 100]);
        }
    }

    #[test]
    fn single_agent_matches_coupon_collector() {
        // empirical mean and CDF of T for M = 4 vs the closed form
        let space = make_space(4, 4, 0).unwrap();
        let mut policy = SimPolicy::new(1, false);
        policy.step_cap = Some(10_000);
        let runs = 20_000u64;
        let times: Vec<usize> = (0..runs).map(|s| simulate_seed(&space, &policy, s).unwrap().outcome.steps_to_solve[0].unwrap()).collect();
        let mean = times.iter().sum::<usize>() as f64 / runs as f64;
        assert!((mean - coupon_mean(4)).abs() < 0.15, "mean {mean}");
        // brute-force oracle: draw coupons with an unrelated generator
        let mut rng = rand::rngs::StdRng::seed_from_u64(99);
        let oracle: Vec<usize> = (0..runs)
            .map(|_| {
                let (mut seen, mut t) = ([false; 4], 0);
                while !seen.iter().all(|s| *s) {
                    seen[rand::Rng::gen_range(&mut rng, 0..4)] = true;
                    t += 1;
                }
                t
            })
            .collect();
        let oracle_mean = oracle.iter().sum::<usize>() as f64 / runs as f64;
        assert!((mean - oracle_mean).abs() < 0.2, "{mean} vs oracle {oracle_mean}");
        for t in [4, 6, 8, 12, 20] {
            let emp = times.iter().filter(|&&x| x <= t).count() as f64 / runs as f64;
            assert!((emp - coupon_cdf(4, t)).abs() < 0.015, "t={t}: {emp} vs {}", coupon_cdf(4, t));
            let orc = oracle.iter().filter(|&&x| x <= t).count() as f64 / runs as f64;
            assert!((emp - orc).abs() < 0.02, "t={t}: {emp} vs oracle {orc}");
        }
    }

    #[test]
    fn coupon_closed_forms() {
        assert!((coupon_mean(4) - 25.0 / 3.0).abs() < 1e-12);
        assert!(coupon_cdf(3, 2).abs() < 1e-12);
        assert!((coupon_cdf(2, 2) - 0.5).abs() < 1e-12);
        assert!((coupon_cdf(3, 3) - 6.0 / 27.0).abs() < 1e-12);
    }

    #[test]
    fn silent_agents_do_not_interact() {
        // with no reads, each agent's run is the same as in a larger team
        let space = make_space(25, 10, 2).unwrap();
        let mut p = SimPolicy::new(2, true);
        p.read_probability = 0.0;
        p.bias = Bias::Regional { regions: 3, strength: 0.5 };
        for seed in 0..30 {
            let pair = simulate_seed(&space, &p, seed).unwrap().outcome;
            let five = simulate_seed(&space, &SimPolicy { team_size: 5, ..p.clone() }, seed).unwrap().outcome;
            assert_eq!(pair.steps_to_solve[..], five.steps_to_solve[..2]);
        }
        // and agent 1's solve-time law under uniform bias matches a solo agent's
        p.bias = Bias::Uniform;
        let space = make_space(5, 5, 0).unwrap();
        let runs = 4_000u64;
        let joint: f64 = (0..runs).map(|s| simulate_seed(&space, &p, s).unwrap().outcome.steps_to_solve[1].unwrap() as f64).sum::<f64>() / runs as f64;
        let solo: f64 = (runs..2 * runs).map(|s| simulate_seed(&space, &SimPolicy { team_size: 1, ..p.clone() }, s).unwrap().outcome.steps_to_solve[0].unwrap() as f64).sum::<f64>() / runs as f64;
        // both estimate 5 H_5 = 11.4167; sd of T is about 5.4, so 4000 runs give se 0.085 each
        assert!((joint - solo).abs() < 0.5, "{joint} vs {solo}");
        assert!((joint - coupon_mean(5)).abs() < 0.4);
    }

    #[test]
    fn parse_specs() {
        let s = parse_space("M=50,S=20,seed=9").unwrap();
        assert_eq!((s.facts, s.required.len(), s.seed), (50, 20, 9));
        let p = parse_policy("hub=off,E=3,p=0.5,bias=regional:4:0.6,cap=77,N=2").unwrap();
        assert_eq!(
            p,
            SimPolicy { hub_enabled: false, episode_length: 3, read_probability: 0.5, team_size: 2, bias: Bias::Regional { regions: 4, strength: 0.6 }, step_cap: Some(77) }
        );
        assert!(parse_policy("x=1").is_err());
        assert!(parse_space("S=3").is_err());
    }

    #[test]
    fn policy_validation() {
        let space = make_space(10, 5, 0).unwrap();
        let mut p = SimPolicy::new(2, true);
        p.episode_length = 0;
        assert!(p.validate(&space).is_err());
        p.episode_length = 1;
        p.read_probability = 1.5;
        assert!(p.validate(&space).is_err());
        p.read_probability = 0.5;
        p.bias = Bias::Explicit { weights: vec![vec![1.0; 10]] };
        assert!(p.validate(&space).is_err());
    }

    fn small_policy() -> impl Strategy<Value = (SimPolicy, u64)> {
        (1..5usize, any::<bool>(), 1..4usize, 0..=10u32, 1..5usize, any::<u64>()).prop_map(|(n, hub, e, p, regions, seed)| {
            let policy = SimPolicy {
                hub_enabled: hub,
                episode_length: e,
                read_probability: p as f64 / 10.0,
                team_size: n,
                bias: Bias::Regional { regions, strength: 0.6 },
                step_cap: Some(60),
            };
            (policy, seed)
        })
    }

    proptest! {
        #[test]
        fn discovered_is_sampled_or_transferred((policy, seed) in small_policy()) {
            let space = make_space(12, 6, seed).unwrap();
            let trace = simulate_seed(&space, &policy, seed).unwrap();
            let m = space.facts;
            let any_sampled: Vec<bool> = (0..m).map(|f| trace.sampled.iter().any(|s| s[f])).collect();
            let union: Vec<bool> = (0..m).map(|f| trace.discovered.iter().any(|d| d[f])).collect();
            prop_assert_eq!(&union, &any_sampled);
            for (d, s) in trace.discovered.iter().zip(&trace.sampled) {
                for f in 0..m {
                    prop_assert!(!s[f] || d[f]);
                    prop_assert!(!d[f] || s[f] || trace.published[f]);
                }
            }
        }

        #[test]
        fn pass_at_n_matches_aggregate((policy, seed) in small_policy()) {
            let space = make_space(12, 6, seed).unwrap();
            let o = simulate_seed(&space, &policy, seed).unwrap().outcome;
            let c = o.solved().iter().filter(|s| **s).count();
            let p = pass_at_k_counts(policy.team_size, c, policy.team_size).unwrap();
            prop_assert_eq!(p == 1.0, o.pass_at_n);
        }

        #[test]
        fn larger_teams_never_lose_a_seed((policy, seed) in small_policy()) {
            let space = make_space(12, 6, seed).unwrap();
            let smaller = simulate_seed(&space, &policy, seed).unwrap().outcome;
            let bigger = simulate_seed(&space, &SimPolicy { team_size: policy.team_size + 2, ..policy.clone() }, seed).unwrap().outcome;
            prop_assert!(!smaller.pass_at_n || bigger.pass_at_n);
        }
    }
}
