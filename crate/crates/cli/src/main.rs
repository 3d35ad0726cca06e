use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fugue_cli::config::{Mode, RunConfig};
use fugue_cli::export::{export_sft, READ_PAIRS_FILE, WRITE_PAIRS_FILE};
use fugue_cli::report::build_report;
use fugue_cli::run::{apply_seed, replay_dir, run_to_dir, RunManifest};
use fugue_core::aggregate::{pass_at_k, select, AggregationRule, ExactMatchJudge, NormalizedMatch};
use fugue_core::rlmath::check::run_all;
use fugue_core::sim::{parse_policy, parse_space, scaling_report, SCALING_TEAM_SIZES};
use fugue_core::types::CandidateAnswer;

#[derive(Parser)]
#[command(name = "fugue", version, about = "Peer-agent teams with a shared episode hub")]
struct Cli {
    /// Output location: run directory, report file, or export directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed (run, baseline) or the first simulator seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Exit 0 even when an agent ends in status `failed`.
    #[arg(long, global = true)]
    tolerate_failures: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Naive,
    Swarm,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run config into a run directory.
    Run { config: PathBuf },
    /// Re-execute a scripted run from its manifest and compare event logs.
    Replay { run_dir: PathBuf },
    /// Run a config as the naive or swarm baseline.
    Baseline { kind: Baseline, config: PathBuf },
    /// Knowledge-space scaling report.
    Simulate {
        /// e.g. `M=50,S=20,seed=7`
        #[arg(long)]
        space: String,
        /// e.g. `E=10,p=0.01,bias=regional:8:0.8`
        #[arg(long, default_value = "")]
        policy: String,
        #[arg(long, default_value_t = 200)]
        seeds: u64,
        #[arg(long, value_delimiter = ',', default_values_t = SCALING_TEAM_SIZES.to_vec())]
        team_sizes: Vec<usize>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Apply an aggregation rule to a candidate list or a run directory.
    Aggregate {
        /// JSON array of candidates, or a run directory.
        input: PathBuf,
        #[arg(long, default_value = "bon")]
        rule: String,
        #[arg(long)]
        gold: Option<String>,
    },
    /// Per-rule score table over run directories.
    Report { run_dirs: Vec<PathBuf> },
    /// Export hub write/read pairs for fine-tuning.
    ExportSft { run_dirs: Vec<PathBuf> },
    /// Numerical checks of the RL objective pieces.
    Rlmath {
        #[command(subcommand)]
        action: RlmathAction,
    },
}

#[derive(Subcommand)]
enum RlmathAction {
    Check,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(cli: &Cli, config_path: &Path, force: Option<Mode>) -> Result<ExitCode> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(mode) = force {
        config.mode = mode;
        config.validate()?;
    }
    if let Some(seed) = cli.seed {
        apply_seed(&mut config, seed);
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-{}-{}", config.task.id, config.mode, config.seed)));
    let summary = run_to_dir(&config, &out)?;
    let r = &summary.manifest.result;
    println!("run directory: {}", out.display());
    for a in &r.agents {
        let answer = a.final_answer.as_ref().map(|c| c.answer.as_str()).unwrap_or("-");
        let err = a.error.as_deref().map(|e| format!(" error: {e}")).unwrap_or_default();
        println!("  {:<10} {:<9} rounds {:>3}/{:<3} tools {:>3}  answer: {answer}{err}", a.agent_id.as_str(), a.status.to_string(), a.rounds_used, a.round_budget, a.tool_calls);
    }
    match &r.selected {
        Some(c) => println!("selected ({}): {} [{}]", r.selector, c.answer, c.agent_id.as_str()),
        None => println!("selected: none ({:?})", r.outcome),
    }
    println!("hub writes {}, reads {}", r.hub_writes, r.hub_reads);
    if summary.any_failed() && !cli.tolerate_failures {
        eprintln!("error: at least one agent failed (use --tolerate-failures to accept)");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_replay(run_dir: &Path) -> Result<ExitCode> {
    let report = replay_dir(run_dir)?;
    if report.identical {
        println!("replay identical: {} events", report.events);
        return Ok(ExitCode::SUCCESS);
    }
    println!("replay differs at line {}", report.first_difference.unwrap_or(0));
    println!("  stored:   {}", report.expected_line.as_deref().unwrap_or("<end of log>"));
    println!("  replayed: {}", report.actual_line.as_deref().unwrap_or("<end of log>"));
    Ok(ExitCode::FAILURE)
}

fn load_candidates(input: &Path) -> Result<(Vec<CandidateAnswer>, Option<String>)> {
    if input.is_dir() {
        let m = RunManifest::load(input)?;
        return Ok((m.result.candidates, m.config.task.gold_answer));
    }
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    Ok((serde_json::from_str(&text).context("candidates must be a JSON array of {agent_id, answer, confidence, tool_calls}")?, None))
}

fn cmd_aggregate(input: &Path, rule: &str, gold: Option<String>) -> Result<ExitCode> {
    let rule: AggregationRule = rule.parse()?;
    let (candidates, run_gold) = load_candidates(input)?;
    let gold = gold.or(run_gold);
    let judge = ExactMatchJudge;
    let value = match rule {
        AggregationRule::Avg => serde_json::json!({"rule": rule.to_string(), "score": fugue_core::aggregate::avg(&candidates, gold.as_deref(), &judge)?}),
        AggregationRule::PassAtK(k) => {
            let k = k.unwrap_or(candidates.len());
            serde_json::json!({"rule": rule.to_string(), "k": k, "score": pass_at_k(&candidates, gold.as_deref(), &judge, k)?})
        }
        _ => {
            let chosen = select(rule, &candidates, &NormalizedMatch)?;
            let correct = gold.as_deref().map(|g| fugue_core::aggregate::Judge::judge(&judge, &chosen.answer, g));
            serde_json::json!({"rule": rule.to_string(), "selected": chosen, "correct": correct})
        }
    };
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { config } => cmd_run(&cli, config, None),
        Command::Baseline { kind, config } => cmd_run(&cli, config, Some(match kind {
            Baseline::Naive => Mode::Naive,
            Baseline::Swarm => Mode::Swarm,
        })),
        Command::Replay { run_dir } => cmd_replay(run_dir),
        Command::Simulate { space, policy, seeds, team_sizes, csv } => (|| {
            let space = parse_space(space)?;
            let policy = parse_policy(policy)?;
            let first = cli.seed.unwrap_or(0);
            let seeds: Vec<u64> = (first..first + seeds).collect();
            let report = scaling_report(&[space], &policy, team_sizes, &seeds)?;
            print!("{}", report.to_csv());
            for t in &report.tests {
                println!(
                    "pass monotone violations {}, search steps at N={} hub {:.2} vs none {:.2} (p = {:.3e}), traffic increasing: {}",
                    t.pass_monotone_violations, t.largest_team, t.hub_mean_search_steps, t.no_hub_mean_search_steps, t.search_steps_p_value, t.traffic_increasing
                );
            }
            if let Some(path) = &cli.out {
                write_json(path, &report)?;
            }
            if let Some(path) = csv {
                std::fs::write(path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        })(),
        Command::Aggregate { input, rule, gold } => cmd_aggregate(input, rule, gold.clone()),
        Command::Report { run_dirs } => (|| {
            let report = build_report(run_dirs)?;
            print!("{}", report.to_text());
            if let Some(path) = &cli.out {
                write_json(path, &report)?;
            }
            Ok(ExitCode::SUCCESS)
        })(),
        Command::ExportSft { run_dirs } => (|| {
            if run_dirs.is_empty() {
                bail!("no run directories given");
            }
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("sft"));
            let e = export_sft(run_dirs, &out)?;
            println!("{} write pairs -> {}", e.writes.len(), out.join(WRITE_PAIRS_FILE).display());
            println!("{} read pairs -> {}", e.reads.len(), out.join(READ_PAIRS_FILE).display());
            Ok(ExitCode::SUCCESS)
        })(),
        Command::Rlmath { action: RlmathAction::Check } => {
            let results = run_all(cli.seed.unwrap_or(0));
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            if let Some(path) = &cli.out {
                if let Err(e) = write_json(path, &results) {
                    eprintln!("error: {e:#}");
                    return ExitCode::FAILURE;
                }
            }
            Ok(if results.iter().all(|r| r.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
