//! Simulation and checking toolkit for token circulation in self-stabilizing
//! rings built from safe registers.
//!
//! The pieces, bottom up:
//!
//! - [`sim`]: a deterministic interleaving driver over single-writer
//!   register cells. Reads disturbed by a concurrent write are resolved by a
//!   pluggable adversary; everything else is exact.
//! - [`machine`] and [`protocols`]: the dup-write / scan-read register
//!   construction and the three ring protocols that run on top of it
//!   (atomic baseline, one pair per link, one pair per gray-code bit).
//! - [`trace`]: the event log and its JSONL wire format, including the
//!   choice script that replays a run bit-for-bit.
//! - [`checker`]: verdicts over runs, live or replayed: scan-read
//!   classification against the writer order, busy-result progress, token
//!   safety and convergence, and the gray ring's phase predicates.
//! - [`explorer`]: exhaustive enumeration of every schedule and adversary
//!   choice on small scenarios and tiny rings, with dedup over semantic
//!   states and replayable witnesses for offending branches.
//! - [`sweep`]: many seeds of one configuration, judged live and fanned out
//!   across threads when the `parallel` feature is on.
//!
//! Everything is seed-deterministic: the same configuration and seed
//! produce byte-identical traces and reports.

pub mod checker;
pub mod config;
pub mod errors;
pub mod explorer;
pub mod ids;
pub mod machine;
pub mod protocols;
pub mod sim;
pub mod sweep;
pub mod time;
pub mod trace;

pub use config::{
    default_phi, default_token_domain, AdversaryPolicy, CellSemantics, InitPolicy, RingConfig,
    RingLayout, RunSetup, ScenarioSetup, SchedulerPolicy, Variant,
};
pub use checker::{CheckResult, Verdict, Witness};
pub use errors::{ConfigError, ExploreError, SimError, TraceError};
pub use explorer::{ExploreOpts, ExploreReport, ExploreWitness};
pub use ids::{HlId, OpId, PairId, Pid, RegId};
pub use sim::{replay, run_ring, run_ring_monitored, RunMonitor, RunState, TraceSink};
pub use sweep::{run_sweep, run_sweep_sequential, RunReport, SweepReport, SweepSpec};
pub use time::{Span, VirtualTime};
pub use trace::{ChoiceScript, Trace, TraceMeta};
