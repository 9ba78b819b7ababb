//! Verdicts over runs: scan-read classification, contamination counts,
//! busy-result progress, token safety, and convergence detection. Offline
//! checks are pure functions of a completed [`Trace`](crate::trace::Trace);
//! the online variants run as [`RunMonitor`](crate::sim::RunMonitor)s or
//! [`TraceSink`](crate::sim::TraceSink)s so seed sweeps never have to keep a
//! trace in memory.

pub mod convergence;
pub mod gray_state;
pub mod progress;
pub mod qa;

pub use convergence::{check_convergence, ConvergenceMonitor};
pub use gray_state::{home_value, is_flash_state, GrayPhaseMonitor};
pub use progress::{check_bottom_progress, BottomProgress};
pub use qa::{check_quasi_atomicity, count_contaminated, QaSink, ScanClass};

use crate::config::{PairInfo, RunSetup};
use crate::trace::TraceMeta;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckResult {
    Pass,
    Fail,
    /// The run ended before the property could be confirmed either way;
    /// callers retry with a larger budget rather than reporting failure.
    Inconclusive,
}

/// Enough to find the violation again: the ids of the offending operations
/// and the ticks they span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub op_ids: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tick_range: Option<(u64, u64)>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub property: String,
    pub result: CheckResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    pub counters: BTreeMap<String, u64>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.result == CheckResult::Pass
    }
}

/// The register pairs and their initial cell values described by a trace
/// header, for feeding offline checkers.
pub fn setup_pairs(meta: &TraceMeta) -> (Vec<PairInfo>, Vec<u64>) {
    let pairs = match &meta.setup {
        RunSetup::Ring { config } => config.layout().pairs,
        RunSetup::Scenario { setup } => setup.pairs.clone(),
    };
    (pairs, meta.initial_registers.clone())
}

/// Replay just the high-level begin/end events of a recorded trace into a
/// sink; the offline checkers need nothing else.
pub fn feed_hl_events<S: crate::sim::TraceSink>(trace: &crate::trace::Trace, sink: &mut S) {
    for ev in &trace.events {
        match ev.body {
            crate::trace::EventBody::HlBegin(id) => {
                let hl = trace.hl(id);
                sink.on_hl_begin(ev.tick, ev.pid, id, hl.pair, hl.kind);
            }
            crate::trace::EventBody::HlEnd(id) => {
                let hl = trace.hl(id);
                let outcome = hl.outcome.expect("ended op carries an outcome");
                sink.on_hl_end(ev.tick, ev.pid, id, outcome);
            }
            _ => {}
        }
    }
}
