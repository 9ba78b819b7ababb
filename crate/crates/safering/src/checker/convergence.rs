//! Detects when a ring run has stabilized to legitimate behavior: exactly
//! one token whenever the links are readable coherently, never two
//! processors in the critical section, and no processor locked out of it
//! for longer than the gap bound. The stabilization point is one past the
//! last violation; the verdict wants the stable suffix to cover at least
//! half the run and treats a violation in the final eighth as an outright
//! failure rather than slow convergence.

use super::{CheckResult, Verdict, Witness};
use crate::protocols::token_holder_count;
use crate::sim::{RunMonitor, RunState};
use crate::trace::Trace;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct ConvergenceMonitor {
    cs_gap_bound: u64,
    last_cs: Vec<u64>,
    last_violation: Option<(u64, &'static str)>,
    cs_overlaps: u64,
    token_violations: u64,
    cs_gaps: u64,
    snapshots: u64,
    last_snapshot: u64,
    buf: Vec<u64>,
}

impl ConvergenceMonitor {
    /// `cs_gap_bound` is the longest tolerated stretch, in ticks, between
    /// one processor's critical-section visits.
    pub fn new(n: usize, cs_gap_bound: u64) -> ConvergenceMonitor {
        ConvergenceMonitor {
            cs_gap_bound: cs_gap_bound.max(1),
            last_cs: vec![0; n],
            last_violation: None,
            cs_overlaps: 0,
            token_violations: 0,
            cs_gaps: 0,
            snapshots: 0,
            last_snapshot: 0,
            buf: Vec::new(),
        }
    }

    pub fn last_violation_tick(&self) -> Option<u64> {
        self.last_violation.map(|(t, _)| t)
    }

    /// First tick from which no violation was ever observed again.
    pub fn stabilization_tick(&self) -> u64 {
        self.last_violation.map_or(0, |(t, _)| t + 1)
    }

    fn violate(&mut self, tick: u64, what: &'static str) {
        self.last_violation = Some((tick, what));
    }

    pub fn verdict(&self, end: u64) -> Verdict {
        let mut counters = BTreeMap::new();
        counters.insert("cs_overlaps".into(), self.cs_overlaps);
        counters.insert("token_violations".into(), self.token_violations);
        counters.insert("cs_gaps".into(), self.cs_gaps);
        counters.insert("coherent_snapshots".into(), self.snapshots);
        counters.insert("last_snapshot".into(), self.last_snapshot);
        counters.insert("stabilization_tick".into(), self.stabilization_tick());
        counters.insert("ticks".into(), end);
        let witness = self.last_violation.map(|(t, what)| Witness {
            op_ids: Vec::new(),
            tick_range: Some((t, t)),
            detail: format!("{what} at tick {t}"),
        });
        let result = match self.last_violation {
            Some((t, _)) if t >= end.saturating_sub(end / 8) => CheckResult::Fail,
            _ if self.stabilization_tick() <= end / 2 => CheckResult::Pass,
            _ => CheckResult::Inconclusive,
        };
        Verdict { property: "convergence".into(), result, witness, counters }
    }
}

impl RunMonitor for ConvergenceMonitor {
    fn after_slot(&mut self, rs: &RunState) {
        let t = rs.now();
        if rs.cs_occupancy() >= 2 {
            self.cs_overlaps += 1;
            self.violate(t, "two processors in the critical section");
        }
        for i in 0..self.last_cs.len() {
            if rs.in_cs(crate::ids::Pid(i as u16)) {
                self.last_cs[i] = t;
            } else if t - self.last_cs[i] > self.cs_gap_bound {
                self.cs_gaps += 1;
                self.violate(t, "critical-section gap exceeded");
            }
        }
        if rs.ring_link_values(&mut self.buf) {
            self.snapshots += 1;
            self.last_snapshot = t;
            if token_holder_count(&self.buf) != 1 {
                self.token_violations += 1;
                self.violate(t, "token count off one");
            }
        }
    }
}

/// Replay a recorded ring run and re-judge it; `cs_gap_bound` defaults to
/// an eighth of the configured budget, matching a live monitor.
pub fn check_convergence(
    trace: &Trace,
    cs_gap_bound: Option<u64>,
) -> Result<Verdict, crate::errors::SimError> {
    let budget = match &trace.meta.setup {
        crate::config::RunSetup::Ring { config } => config.max_steps,
        crate::config::RunSetup::Scenario { .. } => {
            return Err(crate::errors::SimError::BadMeta(
                "convergence is a ring property".into(),
            ))
        }
    };
    let mut rs = RunState::from_meta(&trace.meta)?;
    let mut monitor =
        ConvergenceMonitor::new(rs.n(), cs_gap_bound.unwrap_or((budget / 8).max(1)));
    let mut sink = crate::sim::NullSink;
    while rs.step_auto(&mut sink)? {
        monitor.after_slot(&rs);
    }
    Ok(monitor.verdict(rs.now()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{InitPolicy, RingConfig, SchedulerPolicy, Variant};
    use crate::sim::run_ring;

    fn base(variant: Variant, n: u16, seed: u64) -> RingConfig {
        RingConfig {
            init: InitPolicy::Arbitrary,
            seed,
            ..RingConfig::new(variant, n)
        }
    }

    fn monitored(config: &RingConfig, budget: u64) -> (ConvergenceMonitor, u64) {
        let mut rs = crate::sim::RunState::new_ring(config).unwrap();
        let mut monitor = ConvergenceMonitor::new(rs.n(), (budget / 8).max(1));
        let mut sink = crate::sim::NullSink;
        let end = rs
            .run_until(budget, &mut sink, &mut monitor)
            .unwrap();
        (monitor, end.ticks)
    }

    #[test]
    fn all_equal_start_never_violates() {
        for variant in [Variant::Atomic, Variant::TwoReg, Variant::Gray] {
            let config = RingConfig {
                init: InitPolicy::AllEqual { value: 1 },
                seed: 7,
                ..RingConfig::new(variant, 3)
            };
            let (monitor, end) = monitored(&config, 40_000);
            assert_eq!(
                monitor.last_violation_tick(),
                None,
                "{variant:?} violated from a legitimate start"
            );
            let verdict = monitor.verdict(end);
            assert!(verdict.passed());
            assert_eq!(verdict.counters["stabilization_tick"], 0);
            assert!(verdict.counters["coherent_snapshots"] > 0);
        }
    }

    #[test]
    fn arbitrary_start_converges_and_replay_agrees() {
        let config = RingConfig {
            scheduler: SchedulerPolicy::SeededRandom { fairness_bound: 4 },
            ..base(Variant::TwoReg, 3, 11)
        };
        let budget = 60_000;
        let (monitor, end) = monitored(&config, budget);
        let online = monitor.verdict(end);
        assert_eq!(online.result, CheckResult::Pass, "witness: {:?}", online.witness);

        // The same run, re-read from its recorded trace, must reach the
        // identical verdict, counter for counter.
        let mut config2 = config.clone();
        config2.max_steps = budget;
        let trace = run_ring(&config2).unwrap();
        let offline = check_convergence(&trace, None).unwrap();
        assert_eq!(online, offline);
    }

    #[test]
    fn late_violation_fails_outright() {
        let mut monitor = ConvergenceMonitor::new(2, 1_000_000);
        monitor.violate(950, "token count off one");
        let verdict = monitor.verdict(1000);
        assert_eq!(verdict.result, CheckResult::Fail);
        assert_eq!(verdict.witness.unwrap().tick_range, Some((950, 950)));
    }

    #[test]
    fn slow_convergence_is_inconclusive_not_failed() {
        let mut monitor = ConvergenceMonitor::new(2, 1_000_000);
        monitor.violate(600, "token count off one");
        assert_eq!(monitor.verdict(1000).result, CheckResult::Inconclusive);
        monitor.violate(874, "token count off one");
        assert_eq!(monitor.verdict(1000).result, CheckResult::Inconclusive);
        monitor.violate(875, "token count off one");
        assert_eq!(monitor.verdict(1000).result, CheckResult::Fail);
    }
}
