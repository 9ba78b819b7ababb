//! Exhaustive interleaving exploration. Every scheduler choice and, on
//! disturbed safe reads, every adversary answer becomes a branch; the walk
//! either enumerates all branches outright or deduplicates semantically
//! identical states (ticks and op ids stripped) to close cyclic spaces such
//! as rings. Any offending branch comes back as a choice script that replays
//! through the simulator verbatim.

use crate::checker::qa::{QaSink, ScanClass, ScanEvent};
use crate::config::{
    AdversaryPolicy, CellSemantics, InitPolicy, RingConfig, RunSetup, ScenarioSetup,
    SchedulerPolicy, ScriptOp, Variant,
};
use crate::errors::{ExploreError, SimError};
use crate::ids::{PairId, Pid, RegId};
use crate::protocols::token_holder_count;
use crate::sim::RunState;
use crate::trace::{ChoiceScript, Trace, TraceMeta};
use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::hash::Hasher;
use std::sync::Arc;

/// Hard ceiling on explored branches (without dedup) or distinct states
/// (with dedup).
pub const DEFAULT_CAP: u64 = 100_000_000;

#[derive(Debug, Clone, Copy)]
pub struct ExploreOpts {
    /// Merge semantically identical states. Mandatory on rings, which never
    /// halt; optional on scenarios, where turning it off makes `leaves`
    /// count interleavings exactly.
    pub dedup: bool,
    pub cap: u64,
    /// Stop expanding any branch past this tick; `truncated` counts how
    /// often that happened.
    pub max_ticks: Option<u64>,
}

impl Default for ExploreOpts {
    fn default() -> ExploreOpts {
        ExploreOpts { dedup: true, cap: DEFAULT_CAP, max_ticks: None }
    }
}

/// A branch pinned down by its choice script, replayable via [`replay`].
///
/// [`replay`]: crate::sim::replay
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExploreWitness {
    pub detail: String,
    pub meta: TraceMeta,
}

impl ExploreWitness {
    pub fn replay(&self) -> Result<Trace, SimError> {
        crate::sim::replay(&self.meta)
    }
}

/// Everything a finished (or judged) walk can say about the branch space.
///
/// Under dedup, `scan_results`, the *presence* of a class in
/// `class_counts`, and `max_contaminated` are exact over all reachable
/// branches — each distinct state is expanded once and the classification
/// of a step depends only on state and choice. The class tallies and
/// `inversions` magnitudes are traversal-dependent; without dedup they are
/// exact too.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExploreReport {
    /// Pre-run upper bound on branch count; rings have none.
    pub estimate: Option<u128>,
    pub states: u64,
    pub transitions: u64,
    pub leaves: u64,
    pub dedup_hits: u64,
    pub truncated: u64,
    pub scan_results: BTreeSet<Option<u64>>,
    pub class_counts: BTreeMap<ScanClass, u64>,
    /// Largest contaminated tally any single branch accumulated.
    pub max_contaminated: u64,
    pub inversions: u64,
    pub first_contaminated: Option<ExploreWitness>,
    pub first_inversion: Option<ExploreWitness>,
    /// First branch the judge rejected; exploration stops there.
    pub violation: Option<ExploreWitness>,
    pub complete: bool,
}

impl ExploreReport {
    fn new(estimate: Option<u128>) -> ExploreReport {
        ExploreReport {
            estimate,
            states: 0,
            transitions: 0,
            leaves: 0,
            dedup_hits: 0,
            truncated: 0,
            scan_results: BTreeSet::new(),
            class_counts: BTreeMap::new(),
            max_contaminated: 0,
            inversions: 0,
            first_contaminated: None,
            first_inversion: None,
            violation: None,
            complete: false,
        }
    }

    pub fn has_class(&self, class: ScanClass) -> bool {
        self.class_counts.contains_key(&class)
    }
}

struct PathNode {
    pid: u16,
    forced: Option<u64>,
    parent: Option<Arc<PathNode>>,
}

type Path = Option<Arc<PathNode>>;

fn path_script(path: &Path) -> ChoiceScript {
    let mut schedule = Vec::new();
    let mut values = Vec::new();
    let mut cur = path.as_ref();
    while let Some(node) = cur {
        schedule.push(node.pid);
        if let Some(v) = node.forced {
            values.push(v);
        }
        cur = node.parent.as_ref();
    }
    schedule.reverse();
    values.reverse();
    ChoiceScript { schedule, values }
}

fn witness(meta: &TraceMeta, path: &Path, detail: String) -> ExploreWitness {
    let mut meta = meta.clone();
    meta.script = Some(path_script(path));
    ExploreWitness { detail, meta }
}

// 128 bits of fixed-key hash; at the cap's 1e8 states the collision odds
// are ~1e-22, far below any hardware fault rate.
fn state_key(rs: &RunState, sink: &QaSink, buf: &mut Vec<u8>) -> u128 {
    buf.clear();
    rs.encode_key(buf);
    sink.encode_key(buf);
    let mut lo = DefaultHasher::new();
    lo.write_u8(1);
    lo.write(buf);
    let mut hi = DefaultHasher::new();
    hi.write_u8(2);
    hi.write(buf);
    (u128::from(hi.finish()) << 64) | u128::from(lo.finish())
}

fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k.min(n));
    let mut res: u128 = 1;
    for i in 1..=k {
        res = match res.checked_mul(u128::from(n - k + i)) {
            Some(v) => v / u128::from(i),
            None => return u128::MAX,
        };
    }
    res
}

fn op_slots(op: &ScriptOp) -> u64 {
    match *op {
        ScriptOp::DupWrite { .. } => 8,
        ScriptOp::ScanRead { k, .. } => 4 * u64::from(k),
        ScriptOp::RawRead { .. } | ScriptOp::RawWrite { .. } => 2,
        ScriptOp::CsEnter | ScriptOp::CsExit => 1,
    }
}

/// Upper bound on the branch count of a scripted scenario: interleavings of
/// the per-program slot sequences (writes priced at their effective length)
/// times an adversary answer per read that some other program's writes can
/// disturb. Exact when nothing can be disturbed.
pub fn estimate_branches(setup: &ScenarioSetup) -> u128 {
    let pair = |id: PairId| setup.pairs.iter().find(|p| p.id == id).expect("pair in setup");
    let cell = |id: RegId| {
        setup.cells.iter().position(|c| c.id == id).expect("cell in setup")
    };
    let mut writers: Vec<BTreeSet<u16>> = vec![BTreeSet::new(); setup.cells.len()];
    for (i, prog) in setup.programs.iter().enumerate() {
        for op in prog {
            match *op {
                ScriptOp::DupWrite { pair: pr, .. } => {
                    let p = pair(pr);
                    writers[cell(p.a)].insert(i as u16);
                    writers[cell(p.b)].insert(i as u16);
                }
                ScriptOp::RawWrite { reg, .. } => {
                    writers[cell(reg)].insert(i as u16);
                }
                _ => {}
            }
        }
    }
    let contested = |reg: RegId, me: u16| {
        let c = cell(reg);
        setup.cells[c].semantics == CellSemantics::Safe
            && writers[c].iter().any(|&w| w != me)
    };
    let domain = |reg: RegId| u128::from(setup.cells[cell(reg)].domain);
    let mut interleavings: u128 = 1;
    let mut answers: u128 = 1;
    let mut total = 0u64;
    for (i, prog) in setup.programs.iter().enumerate() {
        let me = i as u16;
        let mut slots = 0u64;
        for op in prog {
            slots += op_slots(op);
            match *op {
                ScriptOp::DupWrite { pair: pr, .. } => {
                    // The pre-reads; disturbable only under foreign writes.
                    let p = pair(pr);
                    for reg in [p.a, p.b] {
                        if contested(reg, me) {
                            answers = answers.saturating_mul(domain(reg));
                        }
                    }
                }
                ScriptOp::ScanRead { pair: pr, k } => {
                    let p = pair(pr);
                    for reg in [p.a, p.b] {
                        if contested(reg, me) {
                            answers = answers
                                .saturating_mul(domain(reg).saturating_pow(u32::from(k)));
                        }
                    }
                }
                ScriptOp::RawRead { reg }
                    if contested(reg, me) => {
                        answers = answers.saturating_mul(domain(reg));
                    }
                _ => {}
            }
        }
        total += slots;
        interleavings = interleavings.saturating_mul(binomial(total, slots));
    }
    interleavings.saturating_mul(answers)
}

/// A scenario run poised for exploration: enumerating policies plus a
/// quasi-atomicity sink over its pairs.
pub fn scenario_root(
    setup: &ScenarioSetup,
    initial: &[u64],
) -> Result<(RunState, QaSink), SimError> {
    let rs = RunState::new_scenario(
        setup,
        initial,
        SchedulerPolicy::Enumerate,
        AdversaryPolicy::Enumerate,
        0,
    )?;
    let sink = QaSink::new(&setup.pairs, initial, true);
    Ok((rs, sink))
}

/// A ring run poised for exploration; the configured scheduler and
/// adversary are replaced by enumerating ones.
pub fn ring_root(config: &RingConfig) -> Result<(RunState, QaSink), SimError> {
    let mut cfg = config.clone();
    cfg.scheduler = SchedulerPolicy::Enumerate;
    cfg.adversary = AdversaryPolicy::Enumerate;
    let rs = RunState::new_ring(&cfg)?;
    let sink = QaSink::new(&cfg.layout().pairs, &rs.shape().initial_registers, true);
    Ok((rs, sink))
}

/// Walk every branch from `rs`, feeding each step through `sink` and asking
/// `judge` after each transition whether the new state violates the target
/// property. The first rejection ends the walk with a replayable witness.
pub fn explore<F>(
    rs: RunState,
    sink: QaSink,
    opts: &ExploreOpts,
    mut judge: F,
) -> Result<ExploreReport, ExploreError>
where
    F: FnMut(&RunState, &QaSink) -> Option<String>,
{
    let estimate = match &rs.shape().setup {
        RunSetup::Scenario { setup } => Some(estimate_branches(setup)),
        RunSetup::Ring { .. } => {
            if !opts.dedup {
                return Err(ExploreError::UnboundedWithoutDedup);
            }
            None
        }
    };
    if let Some(est) = estimate {
        if !opts.dedup && est > u128::from(opts.cap) {
            return Err(ExploreError::TooLarge { estimate: est, cap: opts.cap });
        }
    }
    let meta = rs.meta();
    let mut report = ExploreReport::new(estimate);
    let mut visited = HashSet::new();
    let mut buf = Vec::new();
    if opts.dedup {
        visited.insert(state_key(&rs, &sink, &mut buf));
    }
    report.states = 1;
    struct Node {
        rs: RunState,
        sink: QaSink,
        path: Path,
    }
    let mut stack = vec![Node { rs, sink, path: None }];
    let mut specs: Vec<(Pid, Option<u64>)> = Vec::new();
    while let Some(node) = stack.pop() {
        specs.clear();
        for i in 0..node.rs.n() as u16 {
            let pid = Pid(i);
            if !node.rs.enabled(pid) {
                continue;
            }
            match node.rs.pending_resolution_domain(pid) {
                Some(d) => specs.extend((0..d).map(|v| (pid, Some(v)))),
                None => specs.push((pid, None)),
            }
        }
        if specs.is_empty() {
            report.leaves += 1;
            continue;
        }
        if opts.max_ticks.is_some_and(|bound| node.rs.now() >= bound) {
            report.truncated += 1;
            continue;
        }
        let parent_path = node.path.clone();
        // Reverse push order so branches pop lowest pid, lowest answer
        // first; spec 0 consumes the parent state instead of cloning it.
        let mut parent = Some((node.rs, node.sink));
        for idx in (0..specs.len()).rev() {
            let (pid, forced) = specs[idx];
            let (mut rs, mut sink) = if idx == 0 {
                parent.take().expect("parent consumed once")
            } else {
                let p = parent.as_ref().expect("parent live until spec 0");
                (p.0.clone(), p.1.clone())
            };
            rs.step_slot(pid, forced, &mut sink)?;
            report.transitions += 1;
            let path = Some(Arc::new(PathNode {
                pid: pid.0,
                forced,
                parent: parent_path.clone(),
            }));
            for ev in sink.take_events() {
                record_event(&ev, &mut report, &meta, &path);
            }
            report.max_contaminated = report.max_contaminated.max(sink.contaminated_total());
            if let Some(detail) = judge(&rs, &sink) {
                report.violation = Some(witness(&meta, &path, detail));
                return Ok(report);
            }
            if opts.dedup {
                if !visited.insert(state_key(&rs, &sink, &mut buf)) {
                    report.dedup_hits += 1;
                    continue;
                }
                if visited.len() as u64 > opts.cap {
                    return Err(ExploreError::CapHit {
                        visited: visited.len() as u64,
                        cap: opts.cap,
                    });
                }
            } else if report.transitions > opts.cap {
                return Err(ExploreError::CapHit {
                    visited: report.transitions,
                    cap: opts.cap,
                });
            }
            report.states += 1;
            stack.push(Node { rs, sink, path });
        }
    }
    report.complete = true;
    Ok(report)
}

fn record_event(ev: &ScanEvent, report: &mut ExploreReport, meta: &TraceMeta, path: &Path) {
    report.scan_results.insert(ev.value);
    *report.class_counts.entry(ev.class).or_insert(0) += 1;
    if ev.class == ScanClass::Contaminated && report.first_contaminated.is_none() {
        let v = ev.value.expect("contaminated scans are definite");
        report.first_contaminated = Some(witness(
            meta,
            path,
            format!("scan {} landed on {v}, which no plausible write produced", ev.hl.0),
        ));
    }
    if ev.inversion {
        report.inversions += 1;
        if report.first_inversion.is_none() {
            report.first_inversion = Some(witness(
                meta,
                path,
                format!("scan {} stepped behind an earlier scan's newest match", ev.hl.0),
            ));
        }
    }
}

/// Explore a scenario with no judged property; verdicts are read off the
/// report afterwards.
pub fn explore_scenario(
    setup: &ScenarioSetup,
    initial: &[u64],
    opts: &ExploreOpts,
) -> Result<ExploreReport, ExploreError> {
    let (rs, sink) = scenario_root(setup, initial)?;
    explore(rs, sink, opts, |_, _| None)
}

/// Explore a scenario, rejecting any branch whose contaminated tally
/// exceeds `bound`.
pub fn explore_contamination_bound(
    setup: &ScenarioSetup,
    initial: &[u64],
    bound: u64,
    opts: &ExploreOpts,
) -> Result<ExploreReport, ExploreError> {
    let (rs, sink) = scenario_root(setup, initial)?;
    explore(rs, sink, opts, |_, sink: &QaSink| {
        let got = sink.contaminated_total();
        (got > bound).then(|| format!("{got} contaminated scans exceed the bound {bound}"))
    })
}

/// Close the reachable set of a ring and reject any state with two
/// processors in the critical section or a coherent snapshot whose token
/// holder count is not one.
pub fn explore_ring_closure(
    config: &RingConfig,
    opts: &ExploreOpts,
) -> Result<ExploreReport, ExploreError> {
    let (rs, sink) = ring_root(config)?;
    let mut links = Vec::new();
    explore(rs, sink, opts, move |state: &RunState, _| {
        if state.cs_occupancy() >= 2 {
            return Some("two processors in the critical section".into());
        }
        if state.ring_link_values(&mut links) {
            let holders = token_holder_count(&links);
            if holders != 1 {
                return Some(format!("{holders} token holders on a coherent snapshot"));
            }
        }
        None
    })
}

/// The named scenarios the CLI exposes. `ring-step` is ring-shaped and runs
/// through [`explore_ring_closure`]; the rest are [`qa_preset`] scripts.
pub const SCENARIO_NAMES: &[&str] = &[
    "qa-single-write",
    "qa-sparse-writes",
    "qa-contamination",
    "qa-overload",
    "ring-step",
];

/// One dup-writing processor against one scanning processor on a single
/// pair, both halves starting equal.
pub fn qa_setup(domain: u64, writes: &[u64], scans: &[u16]) -> ScenarioSetup {
    ScenarioSetup::one_pair(
        domain,
        writes.iter().map(|&val| ScriptOp::DupWrite { pair: PairId(0), val }).collect(),
        scans.iter().map(|&k| ScriptOp::ScanRead { pair: PairId(0), k }).collect(),
    )
}

pub struct QaPreset {
    pub setup: ScenarioSetup,
    pub initial: Vec<u64>,
    /// Contaminated tally no branch may exceed, when the scenario's write
    /// pressure is bounded.
    pub bound: Option<u64>,
    /// Whether some branch should come out contaminated.
    pub expect_contamination: bool,
}

/// Resolve a named scan-classification scenario. `m` scales the write
/// pressure of `qa-contamination`: `m * k` writes against `m + 1` scans,
/// allowing at most `m` contaminated results per branch.
pub fn qa_preset(name: &str, k: u16, domain: u64, m: u64) -> Option<QaPreset> {
    // Write arguments cycle 1, 2, ... so consecutive writes differ and none
    // equals the initial halves.
    let writes =
        |count: u64| (0..count).map(|i| 1 + i % (domain - 1).max(1)).collect::<Vec<_>>();
    let (writes, scans, bound, expect) = match name {
        "qa-single-write" => (writes(1), vec![k], Some(0), false),
        "qa-sparse-writes" => (writes(u64::from(k) - 1), vec![k, k], Some(0), false),
        "qa-contamination" => {
            (writes(m * u64::from(k)), vec![k; m as usize + 1], Some(m), false)
        }
        "qa-overload" => (writes(u64::from(k) + 1), vec![k], None, true),
        _ => return None,
    };
    Some(QaPreset {
        setup: qa_setup(domain, &writes, &scans),
        initial: vec![0, 0],
        bound,
        expect_contamination: expect,
    })
}

/// The smallest legal ring for closure exploration: the atomic variant with
/// every register starting equal.
pub fn ring_step_config(n: u16, token_domain: Option<u64>) -> RingConfig {
    let mut cfg = RingConfig::new(Variant::Atomic, n);
    cfg.token_domain = token_domain.unwrap_or(u64::from(2 * n) + 1);
    cfg.init = InitPolicy::AllEqual { value: 0 };
    cfg
}
