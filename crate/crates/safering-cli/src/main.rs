//! Experiment runner: configure a ring, sweep seeds or exhaustively explore
//! a scenario, and emit traces, verdicts, and summary tables. Exit status 0
//! means every requested check passed; 1 means some check failed; 2 means
//! the invocation itself was rejected (the violated constraint is named on
//! stderr).

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use safering::checker::{
    check_bottom_progress, check_convergence, check_quasi_atomicity, count_contaminated,
    setup_pairs, CheckResult, Verdict,
};
use safering::explorer::{
    estimate_branches, explore_contamination_bound, explore_ring_closure, explore_scenario,
    qa_preset, ring_step_config, ExploreOpts, ExploreReport, DEFAULT_CAP, SCENARIO_NAMES,
};
use safering::{
    replay, run_ring, run_sweep, AdversaryPolicy, SchedulerPolicy, SweepSpec, Trace, Variant,
};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "safering", about = "Token rings on safe registers: run, check, explore")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a seed sweep (or, with --explore, an exhaustive walk)
    Run(Box<RunArgs>),
    /// Re-execute a recorded trace and re-check its verdicts
    Replay(ReplayArgs),
    /// Run the flags stored in a JSON manifest
    Manifest { path: PathBuf },
}

#[derive(Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
struct RunArgs {
    #[arg(long, value_enum, default_value = "two-reg")]
    variant: VariantArg,
    /// Ring size; defaults to 3 (2 for --explore ring-step)
    #[arg(long)]
    n: Option<u16>,
    /// Token domain; defaults to the smallest power of two above 2n
    #[arg(long = "K")]
    #[serde(rename = "K")]
    token_domain: Option<u64>,
    /// Scans per pass for the two-reg variant; defaults to 2n+1
    #[arg(long)]
    phi: Option<u16>,
    /// Single seed to run
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Inclusive seed range, e.g. 0..99 for a hundred runs
    #[arg(long)]
    seeds: Option<String>,
    /// random | old | new | target:v
    #[arg(long, default_value = "random")]
    adversary: String,
    /// random | rr
    #[arg(long, default_value = "random")]
    scheduler: String,
    /// Tick budget per run
    #[arg(long, default_value_t = 200_000)]
    max_steps: u64,
    /// Checks gating the exit status; defaults to all of them
    #[arg(long = "check", value_enum)]
    #[serde(rename = "check")]
    checks: Vec<CheckArg>,
    /// Record the run as JSONL (single seed only)
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the JSON report here
    #[arg(long)]
    report: Option<PathBuf>,
    /// Explore a named scenario instead of sweeping seeds
    #[arg(long)]
    explore: Option<String>,
    /// Scan width for explored scenarios
    #[arg(long, default_value_t = 2)]
    k: u16,
    /// Register domain for explored scenarios
    #[arg(long, default_value_t = 3)]
    domain: u64,
    /// Write pressure for qa-contamination: m*k writes, m+1 scans
    #[arg(long, default_value_t = 1)]
    m: u64,
    /// Enumerate branches without merging semantically equal states
    #[arg(long)]
    no_dedup: bool,
    /// Branch/state cap for exploration
    #[arg(long)]
    cap: Option<u64>,
}

impl Default for RunArgs {
    fn default() -> RunArgs {
        RunArgs {
            variant: VariantArg::TwoReg,
            n: None,
            token_domain: None,
            phi: None,
            seed: None,
            seeds: None,
            adversary: "random".into(),
            scheduler: "random".into(),
            max_steps: 200_000,
            checks: Vec::new(),
            trace: None,
            report: None,
            explore: None,
            k: 2,
            domain: 3,
            m: 1,
            no_dedup: false,
            cap: None,
        }
    }
}

#[derive(Args)]
struct ReplayArgs {
    /// Recorded JSONL trace to re-execute
    #[arg(long)]
    trace: PathBuf,
    #[arg(long = "check", value_enum)]
    checks: Vec<CheckArg>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum VariantArg {
    Atomic,
    TwoReg,
    Gray,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Atomic => Variant::Atomic,
            VariantArg::TwoReg => Variant::TwoReg,
            VariantArg::Gray => Variant::Gray,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum CheckArg {
    Qa,
    Contamination,
    Progress,
    Convergence,
}

const ALL_CHECKS: [CheckArg; 4] =
    [CheckArg::Qa, CheckArg::Contamination, CheckArg::Progress, CheckArg::Convergence];

fn main() -> ExitCode {
    // Die quietly when the reader hangs up (`safering ... | head`) instead
    // of panicking on the next print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Run(args) => run_cmd(&args),
        Cmd::Replay(args) => replay_cmd(&args),
        Cmd::Manifest { path } => manifest_cmd(&path),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn manifest_cmd(path: &PathBuf) -> Result<bool> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    let args: RunArgs = serde_json::from_str(&text)
        .with_context(|| format!("parsing manifest {}", path.display()))?;
    run_cmd(&args)
}

fn run_cmd(args: &RunArgs) -> Result<bool> {
    if let Some(name) = &args.explore {
        return explore_cmd(args, name);
    }
    let seeds = parse_seeds(args)?;
    let checks = requested(&args.checks);
    let mut spec = SweepSpec::new(args.variant.into(), args.n.unwrap_or(3), 0);
    spec.seeds = seeds;
    spec.token_domain = args.token_domain;
    spec.phi = args.phi;
    spec.scheduler = parse_scheduler(&args.scheduler)?;
    spec.adversary = parse_adversary(&args.adversary)?;
    spec.budget = args.max_steps;
    if let Some(path) = &args.trace {
        if spec.seeds.len() != 1 {
            bail!("--trace records a single run; pass --seed, not a range");
        }
        return trace_cmd(&spec, path, &checks, args.report.as_deref());
    }
    let report = run_sweep(&spec)?;
    println!("seed      ticks  converged@   max-busy  contaminated  result");
    for r in &report.runs {
        println!(
            "{:<8} {:>7}  {:>10}  {:>9}  {:>12}  {:?}",
            r.seed, r.ticks, r.stabilization_tick, r.max_bottom_run, r.contaminated,
            r.convergence
        );
    }
    println!(
        "{} runs: {} converged, {} inconclusive, {} failed; contaminated {}, inversions {}",
        report.runs.len(),
        report.converged,
        report.inconclusive,
        report.failed,
        report.contaminated_total,
        report.inversions_total,
    );
    if let Some(path) = &args.report {
        fs::write(path, report.to_json())
            .with_context(|| format!("writing report {}", path.display()))?;
    }
    let pass = checks.iter().all(|check| {
        report.runs.iter().all(|r| match check {
            CheckArg::Qa => r.contaminated == 0 && r.inversions == 0,
            CheckArg::Contamination => r.contaminated == 0,
            CheckArg::Progress => r.progress == CheckResult::Pass,
            CheckArg::Convergence => r.convergence == CheckResult::Pass,
        })
    });
    Ok(pass)
}

/// Single-seed mode: record the trace, then judge it offline like any
/// replayed artifact would be.
fn trace_cmd(
    spec: &SweepSpec,
    path: &std::path::Path,
    checks: &[CheckArg],
    report: Option<&std::path::Path>,
) -> Result<bool> {
    let cfg = spec.config(spec.seeds[0], spec.budget);
    let trace = run_ring(&cfg)?;
    fs::write(path, trace.to_jsonl_string())
        .with_context(|| format!("writing trace {}", path.display()))?;
    let verdicts = offline_checks(&trace, checks)?;
    finish_verdicts(&verdicts, report)
}

fn replay_cmd(args: &ReplayArgs) -> Result<bool> {
    let file = fs::File::open(&args.trace)
        .with_context(|| format!("opening trace {}", args.trace.display()))?;
    let recorded = Trace::from_jsonl(BufReader::new(file))?;
    let redone = replay(&recorded.meta)?;
    let identical = redone.to_jsonl_string() == recorded.to_jsonl_string();
    println!(
        "replay: {} events, {}",
        redone.events.len(),
        if identical { "identical to the recording" } else { "DIVERGED from the recording" }
    );
    let verdicts = offline_checks(&redone, &requested(&args.checks))?;
    let pass = finish_verdicts(&verdicts, args.report.as_deref())?;
    Ok(identical && pass)
}

fn finish_verdicts(verdicts: &[Verdict], report: Option<&std::path::Path>) -> Result<bool> {
    for v in verdicts {
        let note = v.witness.as_ref().map(|w| format!(" — {}", w.detail)).unwrap_or_default();
        println!("{}: {:?}{}", v.property, v.result, note);
    }
    if let Some(path) = report {
        let json = serde_json::to_string_pretty(verdicts).expect("verdicts serialize");
        fs::write(path, json).with_context(|| format!("writing report {}", path.display()))?;
    }
    Ok(verdicts.iter().all(Verdict::passed))
}

fn offline_checks(trace: &Trace, checks: &[CheckArg]) -> Result<Vec<Verdict>> {
    let mut verdicts = Vec::new();
    let (pairs, _) = setup_pairs(&trace.meta);
    for check in checks {
        match check {
            CheckArg::Qa => {
                for pair in &pairs {
                    let mut v = check_quasi_atomicity(trace, pair.id);
                    v.property = format!("{}[pair{}]", v.property, pair.id.0);
                    verdicts.push(v);
                }
            }
            CheckArg::Contamination => {
                let mut v = Verdict {
                    property: "contamination-count".into(),
                    result: CheckResult::Pass,
                    witness: None,
                    counters: Default::default(),
                };
                for pair in &pairs {
                    let count = count_contaminated(trace, pair.id);
                    v.counters.insert(format!("pair{}", pair.id.0), count);
                    if count > 0 {
                        v.result = CheckResult::Fail;
                    }
                }
                verdicts.push(v);
            }
            CheckArg::Progress => verdicts.push(check_bottom_progress(trace, None)),
            CheckArg::Convergence => verdicts.push(check_convergence(trace, None)?),
        }
    }
    Ok(verdicts)
}

fn explore_cmd(args: &RunArgs, name: &str) -> Result<bool> {
    let opts = ExploreOpts {
        dedup: !args.no_dedup,
        cap: args.cap.unwrap_or(DEFAULT_CAP),
        max_ticks: None,
    };
    if name == "ring-step" {
        let cfg = ring_step_config(args.n.unwrap_or(2), args.token_domain);
        println!(
            "ring-step: atomic n={} K={}; no finite branch bound, dedup closes the space",
            cfg.n, cfg.token_domain
        );
        let report = explore_ring_closure(&cfg, &opts)?;
        print_explore(&report);
        write_explore(&report, args.report.as_deref())?;
        return Ok(report.violation.is_none());
    }
    let preset = qa_preset(name, args.k, args.domain, args.m)
        .ok_or_else(|| anyhow!("unknown scenario {name}; expected one of {SCENARIO_NAMES:?}"))?;
    println!("estimated branches: {}", estimate_branches(&preset.setup));
    let report = match preset.bound {
        Some(bound) => {
            explore_contamination_bound(&preset.setup, &preset.initial, bound, &opts)?
        }
        None => explore_scenario(&preset.setup, &preset.initial, &opts)?,
    };
    print_explore(&report);
    write_explore(&report, args.report.as_deref())?;
    if preset.expect_contamination {
        // A finding, either way — only a judged bound can fail the walk.
        match &report.first_contaminated {
            Some(w) => println!("contaminated branch located: {}", w.detail),
            None => println!("no contaminated branch exists in the explored space"),
        }
        return Ok(true);
    }
    Ok(report.violation.is_none() && (preset.bound != Some(0) || report.inversions == 0))
}

fn print_explore(report: &ExploreReport) {
    println!(
        "states {}, transitions {}, leaves {}, dedup hits {}",
        report.states, report.transitions, report.leaves, report.dedup_hits
    );
    let results: Vec<String> = report
        .scan_results
        .iter()
        .map(|r| r.map_or("busy".into(), |v| v.to_string()))
        .collect();
    println!("scan results: {{{}}}", results.join(", "));
    for (class, count) in &report.class_counts {
        println!("  {class:?}: {count}");
    }
    println!(
        "max contaminated on a branch: {}; inversions seen: {}",
        report.max_contaminated, report.inversions
    );
    if let Some(v) = &report.violation {
        println!("violation: {}", v.detail);
    }
}

fn write_explore(report: &ExploreReport, path: Option<&std::path::Path>) -> Result<()> {
    if let Some(path) = path {
        let json = serde_json::to_string_pretty(report).expect("report serializes");
        fs::write(path, json).with_context(|| format!("writing report {}", path.display()))?;
    }
    Ok(())
}

fn requested(checks: &[CheckArg]) -> Vec<CheckArg> {
    if checks.is_empty() {
        ALL_CHECKS.to_vec()
    } else {
        checks.to_vec()
    }
}

fn parse_seeds(args: &RunArgs) -> Result<Vec<u64>> {
    match (&args.seed, &args.seeds) {
        (Some(s), None) => Ok(vec![*s]),
        (None, Some(range)) => {
            let (a, b) = range
                .split_once("..")
                .ok_or_else(|| anyhow!("--seeds wants a range like 0..99"))?;
            let a: u64 = a.trim().parse().context("--seeds start")?;
            let b: u64 = b.trim().parse().context("--seeds end")?;
            if b < a {
                bail!("--seeds range is empty ({a}..{b})");
            }
            Ok((a..=b).collect())
        }
        (None, None) => Ok(vec![0]),
        (Some(_), Some(_)) => bail!("--seed and --seeds are mutually exclusive"),
    }
}

fn parse_adversary(s: &str) -> Result<AdversaryPolicy> {
    match s {
        "random" => Ok(AdversaryPolicy::Random),
        "old" => Ok(AdversaryPolicy::ReturnOld),
        "new" => Ok(AdversaryPolicy::ReturnNew),
        _ => match s.strip_prefix("target:") {
            Some(v) => Ok(AdversaryPolicy::FixedTarget {
                value: v.parse().context("target value")?,
            }),
            None => bail!("--adversary must be random, old, new, or target:v"),
        },
    }
}

fn parse_scheduler(s: &str) -> Result<SchedulerPolicy> {
    match s {
        "random" => Ok(SchedulerPolicy::SeededRandom { fairness_bound: 4 }),
        "rr" => Ok(SchedulerPolicy::RoundRobin),
        _ => bail!("--scheduler must be random or rr"),
    }
}
