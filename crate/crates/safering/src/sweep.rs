//! Seed sweeps: the same ring configuration across many seeds, each run
//! judged live by the full checker stack. Runs are independent, so the
//! sweep fans out across threads when the `parallel` feature is on; the
//! sequential path produces byte-identical reports.

use crate::checker::convergence::ConvergenceMonitor;
use crate::checker::gray_state::GrayPhaseMonitor;
use crate::checker::progress::BottomProgress;
use crate::checker::qa::QaSink;
use crate::checker::CheckResult;
use crate::config::{
    AdversaryPolicy, InitPolicy, RingConfig, SchedulerPolicy, Variant,
};
use crate::errors::SimError;
use crate::sim::RunState;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One configuration swept over a seed range. `None` bounds fall back to
/// the configuration defaults (`K`, `phi`) or the budget-derived windows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variant: Variant,
    pub n: u16,
    pub token_domain: Option<u64>,
    pub phi: Option<u16>,
    pub scheduler: SchedulerPolicy,
    pub adversary: AdversaryPolicy,
    pub init: InitPolicy,
    pub budget: u64,
    pub seeds: Vec<u64>,
    /// How many times a run that ends inconclusive may retry with a doubled
    /// budget.
    pub max_doublings: u32,
    pub progress_window: Option<u64>,
    pub cs_gap_bound: Option<u64>,
}

impl SweepSpec {
    pub fn new(variant: Variant, n: u16, seeds: u64) -> SweepSpec {
        SweepSpec {
            variant,
            n,
            token_domain: None,
            phi: None,
            scheduler: SchedulerPolicy::SeededRandom { fairness_bound: 4 },
            adversary: AdversaryPolicy::Random,
            init: InitPolicy::Arbitrary,
            budget: 200_000,
            seeds: (0..seeds).collect(),
            max_doublings: 1,
            progress_window: None,
            cs_gap_bound: None,
        }
    }

    /// The ring configuration one seed runs under.
    pub fn config(&self, seed: u64, budget: u64) -> RingConfig {
        let mut cfg = RingConfig::new(self.variant, self.n);
        if let Some(k) = self.token_domain {
            cfg.token_domain = k;
        }
        if let Some(phi) = self.phi {
            cfg.phi = phi;
        }
        cfg.scheduler = self.scheduler;
        cfg.adversary = self.adversary;
        cfg.init = self.init.clone();
        cfg.seed = seed;
        cfg.max_steps = budget;
        cfg
    }
}

/// Everything one seed's run said, after any budget doubling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub budget: u64,
    pub doublings: u32,
    pub ticks: u64,
    pub scans: u64,
    pub definite: u64,
    pub bottoms: u64,
    pub max_bottom_run: u64,
    pub max_definite_gap: u64,
    pub contaminated: u64,
    pub inversions: u64,
    pub progress: CheckResult,
    pub convergence: CheckResult,
    pub stabilization_tick: u64,
    pub last_violation: Option<u64>,
    pub cs_overlaps: u64,
    pub token_violations: u64,
    pub cs_gaps: u64,
    pub coherent_snapshots: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_flash: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_home: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_incoherent: Option<u64>,
}

impl RunReport {
    /// No quasi-atomicity damage, progress held, and the ring converged.
    pub fn clean(&self) -> bool {
        self.contaminated == 0
            && self.inversions == 0
            && self.progress == CheckResult::Pass
            && self.convergence == CheckResult::Pass
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub spec: SweepSpec,
    pub runs: Vec<RunReport>,
    pub converged: u64,
    pub inconclusive: u64,
    pub failed: u64,
    pub doublings: u64,
    pub contaminated_total: u64,
    pub inversions_total: u64,
}

impl SweepReport {
    fn assemble(spec: SweepSpec, runs: Vec<RunReport>) -> SweepReport {
        let count = |r: CheckResult| runs.iter().filter(|x| x.convergence == r).count() as u64;
        SweepReport {
            converged: count(CheckResult::Pass),
            inconclusive: count(CheckResult::Inconclusive),
            failed: count(CheckResult::Fail),
            doublings: runs.iter().map(|r| u64::from(r.doublings)).sum(),
            contaminated_total: runs.iter().map(|r| r.contaminated).sum(),
            inversions_total: runs.iter().map(|r| r.inversions).sum(),
            spec,
            runs,
        }
    }

    pub fn all_clean(&self) -> bool {
        self.runs.iter().all(RunReport::clean)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Run one seed to its budget, doubling and retrying while the convergence
/// verdict stays inconclusive.
pub fn run_one(spec: &SweepSpec, seed: u64) -> Result<RunReport, SimError> {
    let mut doublings = 0;
    loop {
        let budget = spec.budget << doublings;
        let cfg = spec.config(seed, budget);
        let mut rs = RunState::new_ring(&cfg)?;
        let layout = cfg.layout();
        let mut sinks = (
            QaSink::new(&layout.pairs, &rs.shape().initial_registers, false),
            BottomProgress::new(usize::from(spec.n)),
        );
        let gap = spec.cs_gap_bound.unwrap_or((budget / 8).max(1));
        let mut monitors = (
            ConvergenceMonitor::new(usize::from(spec.n), gap),
            (spec.variant == Variant::Gray).then(GrayPhaseMonitor::new),
        );
        let end = rs.run_until(budget, &mut sinks, &mut monitors)?;
        let convergence = monitors.0.verdict(budget);
        if convergence.result == CheckResult::Inconclusive && doublings < spec.max_doublings {
            doublings += 1;
            continue;
        }
        let window = spec.progress_window.unwrap_or((budget / 4).max(1));
        let progress = sinks.1.verdict(end.ticks, window);
        let c = |v: &crate::checker::Verdict, key: &str| v.counters[key];
        let (flash, home, incoherent) = monitors
            .1
            .map_or((None, None, None), |g| (g.first_flash, g.first_home, g.last_incoherent));
        return Ok(RunReport {
            seed,
            budget,
            doublings,
            ticks: end.ticks,
            scans: c(&progress, "scans"),
            definite: c(&progress, "definite"),
            bottoms: c(&progress, "bottoms"),
            max_bottom_run: c(&progress, "max_bottom_run"),
            max_definite_gap: c(&progress, "max_definite_gap"),
            contaminated: sinks.0.contaminated_total(),
            inversions: sinks.0.inversions_total(),
            progress: progress.result,
            convergence: convergence.result,
            stabilization_tick: monitors.0.stabilization_tick(),
            last_violation: monitors.0.last_violation_tick(),
            cs_overlaps: c(&convergence, "cs_overlaps"),
            token_violations: c(&convergence, "token_violations"),
            cs_gaps: c(&convergence, "cs_gaps"),
            coherent_snapshots: c(&convergence, "coherent_snapshots"),
            first_flash: flash,
            first_home: home,
            last_incoherent: incoherent,
        });
    }
}

pub fn run_sweep_sequential(spec: &SweepSpec) -> Result<SweepReport, SimError> {
    let runs =
        spec.seeds.iter().map(|&s| run_one(spec, s)).collect::<Result<Vec<_>, _>>()?;
    Ok(SweepReport::assemble(spec.clone(), runs))
}

/// The sweep entry point; data-parallel over seeds when built with the
/// `parallel` feature, otherwise an alias for the sequential path. Both
/// orders runs by seed position, so reports are byte-identical.
#[cfg(feature = "parallel")]
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepReport, SimError> {
    let runs = spec
        .seeds
        .par_iter()
        .map(|&s| run_one(spec, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepReport::assemble(spec.clone(), runs))
}

#[cfg(not(feature = "parallel"))]
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepReport, SimError> {
    run_sweep_sequential(spec)
}
