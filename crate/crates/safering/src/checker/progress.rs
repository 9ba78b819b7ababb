//! Guards against busy-result starvation: a reader that keeps scanning must
//! keep landing definite values. A run fails when some processor's trailing
//! scans are busy `window` times in a row; the longest busy streak anywhere
//! and the longest tick gap between definite completions (run start to first,
//! last to run end) are reported for context.

use super::{CheckResult, Verdict, Witness};
use crate::ids::{HlId, OpId, PairId, Pid, RegId};
use crate::sim::TraceSink;
use crate::time::VirtualTime;
use crate::trace::{HlKind, HlOutcome, OpKind, Trace};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, Default)]
struct PidStats {
    scans: u64,
    definite: u64,
    bottoms: u64,
    last_definite: Option<u64>,
    max_gap: u64,
    bottom_run: u64,
    max_bottom_run: u64,
}

/// Streaming per-processor scan progress, usable as a run sink or fed from
/// a recorded trace.
#[derive(Debug, Clone)]
pub struct BottomProgress {
    start: u64,
    per: Vec<PidStats>,
}

impl BottomProgress {
    pub fn new(n_pids: usize) -> BottomProgress {
        BottomProgress { start: 0, per: vec![PidStats::default(); n_pids] }
    }

    fn close_gap(stat: &PidStats, end: u64) -> u64 {
        let open = end.saturating_sub(stat.last_definite.unwrap_or(0));
        stat.max_gap.max(open)
    }

    pub fn max_bottom_run(&self) -> u64 {
        self.per.iter().map(|s| s.max_bottom_run).max().unwrap_or(0)
    }

    pub fn bottoms_total(&self) -> u64 {
        self.per.iter().map(|s| s.bottoms).sum()
    }

    /// Pass iff no processor's trailing `window` scan results are all busy.
    /// The tick gap between definite results is reported alongside but does
    /// not gate, since no explicit bound exists for it.
    pub fn verdict(&self, end: u64, window: u64) -> Verdict {
        let mut counters = BTreeMap::new();
        let mut worst_gap = 0;
        let mut starved: Option<(Pid, u64)> = None;
        for (i, stat) in self.per.iter().enumerate() {
            if stat.scans == 0 {
                continue;
            }
            worst_gap = worst_gap.max(Self::close_gap(stat, end));
            if stat.bottom_run >= window && starved.is_none() {
                starved = Some((Pid(i as u16), stat.bottom_run));
            }
        }
        counters.insert("scans".into(), self.per.iter().map(|s| s.scans).sum());
        counters.insert("definite".into(), self.per.iter().map(|s| s.definite).sum());
        counters.insert("bottoms".into(), self.bottoms_total());
        counters.insert("max_bottom_run".into(), self.max_bottom_run());
        counters.insert("max_definite_gap".into(), worst_gap);
        counters.insert("window".into(), window);
        let (result, witness) = match starved {
            Some((pid, run)) => (
                CheckResult::Fail,
                Some(Witness {
                    op_ids: Vec::new(),
                    tick_range: None,
                    detail: format!(
                        "processor {}'s last {run} scans all came back busy (window {window})",
                        pid.0
                    ),
                }),
            ),
            None => (CheckResult::Pass, None),
        };
        Verdict { property: "bottom-progress".into(), result, witness, counters }
    }
}

impl TraceSink for BottomProgress {
    fn on_invoke(
        &mut self,
        _: VirtualTime,
        _: Pid,
        _: OpId,
        _: RegId,
        _: OpKind,
        _: Option<u64>,
        _: Option<HlId>,
    ) {
    }

    fn on_respond(&mut self, _: VirtualTime, _: Pid, _: OpId, _: OpKind, _: u64) {}

    fn on_cs(&mut self, _: VirtualTime, _: Pid, _: bool) {}

    fn on_hl_begin(&mut self, _: VirtualTime, _: Pid, _: HlId, _: PairId, _: HlKind) {}

    fn on_hl_end(&mut self, tick: VirtualTime, pid: Pid, _: HlId, outcome: HlOutcome) {
        let HlOutcome::ScanRead { value } = outcome else { return };
        let stat = &mut self.per[pid.index()];
        stat.scans += 1;
        match value {
            Some(_) => {
                let gap = tick.0.saturating_sub(stat.last_definite.unwrap_or(self.start));
                stat.max_gap = stat.max_gap.max(gap);
                stat.last_definite = Some(tick.0);
                stat.definite += 1;
                stat.bottom_run = 0;
            }
            None => {
                stat.bottoms += 1;
                stat.bottom_run += 1;
                stat.max_bottom_run = stat.max_bottom_run.max(stat.bottom_run);
            }
        }
    }
}

/// Replay a recorded trace; `window` defaults to a quarter of the run.
pub fn check_bottom_progress(trace: &Trace, window: Option<u64>) -> Verdict {
    let n = match &trace.meta.setup {
        crate::config::RunSetup::Ring { config } => usize::from(config.n),
        crate::config::RunSetup::Scenario { setup } => setup.programs.len(),
    };
    let mut sink = BottomProgress::new(n);
    super::feed_hl_events(trace, &mut sink);
    let end = trace.last_tick().0;
    sink.verdict(end, window.unwrap_or((end / 4).max(1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::testutil::scripted_trace;
    use crate::config::{ScenarioSetup, ScriptOp};
    use crate::trace::EventBody;

    fn dup(val: u64) -> ScriptOp {
        ScriptOp::DupWrite { pair: PairId(0), val }
    }

    fn scan(k: u16) -> ScriptOp {
        ScriptOp::ScanRead { pair: PairId(0), k }
    }

    #[test]
    fn quiet_writer_leaves_no_bottoms() {
        // One torn scan while the write is in flight, then nothing disturbs
        // the reader again: every scan after the writer's last tick is
        // definite.
        let setup =
            ScenarioSetup::one_pair(8, vec![dup(6)], vec![scan(2), scan(2), scan(2)]);
        let sched: Vec<u16> =
            [1, 1].into_iter().chain([0; 8]).chain([1; 6]).chain([1; 16]).collect();
        let trace = scripted_trace(&setup, &[3, 3], &sched, &[]);
        let write_end = trace
            .hl_ops
            .iter()
            .find(|h| matches!(h.kind, HlKind::DupWrite { .. }))
            .and_then(|h| h.end)
            .unwrap();
        for hl in &trace.hl_ops {
            if let Some(value) = hl.scan_value() {
                assert!(
                    hl.begin.0 < write_end.0 || value.is_some(),
                    "busy scan begun after the last write ended"
                );
            }
        }
        let mut sink = BottomProgress::new(2);
        crate::checker::feed_hl_events(&trace, &mut sink);
        assert_eq!(sink.bottoms_total(), 1);
        assert_eq!(sink.max_bottom_run(), 1);
        assert!(sink.verdict(trace.last_tick().0, trace.last_tick().0).passed());
    }

    #[test]
    fn permanently_torn_pair_fails_the_window() {
        // Mismatched halves and no writer: every scan is busy forever.
        let setup = ScenarioSetup::one_pair(4, vec![], vec![scan(1), scan(1), scan(1)]);
        let trace = scripted_trace(&setup, &[0, 1], &[1; 12], &[]);
        let verdict = check_bottom_progress(&trace, Some(3));
        assert_eq!(verdict.result, CheckResult::Fail);
        assert_eq!(verdict.counters["bottoms"], 3);
        assert_eq!(verdict.counters["max_bottom_run"], 3);
        assert_eq!(verdict.counters["definite"], 0);
        // The whole span counts as one open gap.
        assert_eq!(verdict.counters["max_definite_gap"], trace.last_tick().0);
    }

    #[test]
    fn gap_counter_measures_ticks_between_definite_results() {
        let setup = ScenarioSetup::one_pair(4, vec![], vec![scan(1), scan(1)]);
        let trace = scripted_trace(&setup, &[2, 2], &[1; 8], &[]);
        let ends: Vec<u64> = trace
            .events
            .iter()
            .filter(|e| matches!(e.body, EventBody::HlEnd(_)))
            .map(|e| e.tick.0)
            .collect();
        assert_eq!(ends.len(), 2);
        let mut sink = BottomProgress::new(2);
        crate::checker::feed_hl_events(&trace, &mut sink);
        let end = trace.last_tick().0;
        // Largest of first-result latency and the spacing between the two
        // results (the tail gap is zero). Informational only: both results
        // are definite, so even a window of one scan passes.
        let verdict = sink.verdict(end, 1);
        assert!(verdict.passed());
        assert_eq!(verdict.counters["max_definite_gap"], ends[0].max(ends[1] - ends[0]));
    }

    #[test]
    fn recovered_streak_does_not_starve() {
        // Two busy scans off a torn pair, then a write repairs it and the
        // third scan lands: the mid-run streak hits the window size but the
        // trailing streak is clear.
        let setup =
            ScenarioSetup::one_pair(4, vec![dup(2)], vec![scan(1), scan(1), scan(1)]);
        let sched: Vec<u16> =
            [1; 8].into_iter().chain([0; 8]).chain([1; 4]).collect();
        let trace = scripted_trace(&setup, &[0, 1], &sched, &[]);
        let verdict = check_bottom_progress(&trace, Some(2));
        assert!(verdict.passed());
        assert_eq!(verdict.counters["bottoms"], 2);
        assert_eq!(verdict.counters["max_bottom_run"], 2);
        assert_eq!(verdict.counters["definite"], 1);
    }
}
