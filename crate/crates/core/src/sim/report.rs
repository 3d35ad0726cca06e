use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{run_sim, KnowledgeSpace, SimError, SimMetrics, SimPolicy};

pub const SCALING_TEAM_SIZES: [usize; 5] = [1, 2, 3, 5, 8];

/// Reference scaling instance: M=50, |S*|=20, eight regional biases at 0.8,
/// sparse sharing (E=10, read probability 0.01). With denser sharing, teams
/// finish so fast that total traffic falls again at large N.
pub fn scaling_instance() -> (KnowledgeSpace, SimPolicy) {
    let space = super::make_space(50, 20, 7).expect("valid sizes");
    let policy = SimPolicy {
        hub_enabled: true,
        episode_length: 10,
        read_probability: 0.01,
        team_size: 1,
        bias: super::Bias::Regional { regions: 8, strength: 0.8 },
        step_cap: None,
    };
    (space, policy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub space: usize,
    pub team_size: usize,
    pub hub_enabled: bool,
    pub pass_at_n: f64,
    pub mean_search_steps: f64,
    pub mean_traffic: f64,
}

/// Checks over one space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTests {
    pub space: usize,
    /// Seed-matched (seed, N, N') pairs, N < N', where Pass fell; hub on and off.
    pub pass_monotone_violations: usize,
    pub largest_team: usize,
    pub hub_mean_search_steps: f64,
    pub no_hub_mean_search_steps: f64,
    /// One-sided paired t-test of hub-on < hub-off mean per-agent search steps at the largest N.
    pub search_steps_p_value: f64,
    pub traffic_by_n: Vec<f64>,
    pub traffic_increasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub team_sizes: Vec<usize>,
    pub seeds: usize,
    pub policy: SimPolicy,
    pub spaces: Vec<KnowledgeSpace>,
    pub rows: Vec<ScalingRow>,
    pub tests: Vec<ScalingTests>,
}

impl ScalingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("space,n,hub,pass_at_n,mean_search_steps,mean_traffic\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:.6},{:.6},{:.6}", r.space, r.team_size, r.hub_enabled, r.pass_at_n, r.mean_search_steps, r.mean_traffic);
        }
        out
    }
}

/// p-value for H1: mean(d) > 0 over paired differences `d`.
pub fn paired_one_sided_p(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    if n < 2 {
        return 1.0;
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return if mean > 0.0 { 0.0 } else { 1.0 };
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("df ≥ 1");
    1.0 - dist.cdf(t)
}

fn monotone_violations(by_n: &[SimMetrics]) -> usize {
    let mut bad = 0;
    for (i, small) in by_n.iter().enumerate() {
        for big in &by_n[i + 1..] {
            bad += small.seeds.iter().zip(&big.seeds).filter(|(a, b)| a.pass_at_n && !b.pass_at_n).count();
        }
    }
    bad
}

/// Runs every (space, N, hub on/off) cell on the same seeds. `base` supplies
/// everything except team size and hub setting.
pub fn scaling_report(spaces: &[KnowledgeSpace], base: &SimPolicy, team_sizes: &[usize], seeds: &[u64]) -> Result<ScalingReport, SimError> {
    let mut sizes = team_sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let largest = *sizes.last().ok_or_else(|| SimError::Policy("no team sizes".into()))?;
    let mut rows = Vec::new();
    let mut tests = Vec::new();
    for (si, space) in spaces.iter().enumerate() {
        let mut cells = |hub: bool| -> Result<Vec<SimMetrics>, SimError> {
            sizes
                .iter()
                .map(|&n| {
                    let m = run_sim(space, &SimPolicy { team_size: n, hub_enabled: hub, ..base.clone() }, seeds)?;
                    rows.push(ScalingRow {
                        space: si,
                        team_size: n,
                        hub_enabled: hub,
                        pass_at_n: m.pass_rate,
                        mean_search_steps: m.mean_search_steps,
                        mean_traffic: m.mean_traffic,
                    });
                    Ok(m)
                })
                .collect()
        };
        let on = cells(true)?;
        let off = cells(false)?;
        let (top_on, top_off) = (on.last().expect("nonempty"), off.last().expect("nonempty"));
        let diffs: Vec<f64> = top_off.seeds.iter().zip(&top_on.seeds).map(|(a, b)| a.mean_search_steps() - b.mean_search_steps()).collect();
        let traffic: Vec<f64> = on.iter().map(|m| m.mean_traffic).collect();
        tests.push(ScalingTests {
            space: si,
            pass_monotone_violations: monotone_violations(&on) + monotone_violations(&off),
            largest_team: largest,
            hub_mean_search_steps: top_on.mean_search_steps,
            no_hub_mean_search_steps: top_off.mean_search_steps,
            search_steps_p_value: paired_one_sided_p(&diffs),
            traffic_increasing: traffic.windows(2).all(|w| w[1] > w[0]),
            traffic_by_n: traffic,
        });
    }
    Ok(ScalingReport { team_sizes: sizes, seeds: seeds.len(), policy: base.clone(), spaces: spaces.to_vec(), rows, tests })
}
