//! The interleaving driver. One schedulable slot moves one processor by one
//! register-level step; every emitted event gets its own strictly
//! increasing tick, and all local computation rides along for free on the
//! event that triggered it.
//!
//! Reads are resolved incrementally: a pending read is flagged the moment
//! any write on the same cell overlaps it. Unflagged reads and reads on
//! atomic cells return the committed value; flagged reads on safe cells are
//! handed to the adversary.

use crate::config::{
    AdversaryPolicy, CellInfo, CellSemantics, LocalsInit, PairInfo, RingConfig, RingLayout,
    RunSetup, ScenarioSetup, SchedulerPolicy, Variant,
};
use crate::errors::{ConfigError, SimError};
use crate::ids::{HlId, OpId, PairId, Pid, RegId};
use crate::machine::Action;
use crate::protocols::{build_ring_machines, build_scenario_machines, gray_code, Machine};
use crate::time::VirtualTime;
use crate::trace::{
    ChoiceScript, EventBody, HighLevelOp, HlKind, HlOutcome, OpInterval, OpKind, Trace, TraceEvent,
    TraceMeta, TRACE_FORMAT,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Receives every event as it is emitted. The in-memory `Trace` is the main
/// implementation; `NullSink` keeps long sweeps allocation-free.
pub trait TraceSink {
    #[allow(clippy::too_many_arguments)] // one parameter per event field
    fn on_invoke(
        &mut self,
        tick: VirtualTime,
        pid: Pid,
        op: OpId,
        reg: RegId,
        kind: OpKind,
        arg: Option<u64>,
        hl: Option<HlId>,
    );
    fn on_respond(&mut self, tick: VirtualTime, pid: Pid, op: OpId, kind: OpKind, value: u64);
    fn on_cs(&mut self, tick: VirtualTime, pid: Pid, enter: bool);
    fn on_hl_begin(&mut self, tick: VirtualTime, pid: Pid, hl: HlId, pair: PairId, kind: HlKind);
    fn on_hl_end(&mut self, tick: VirtualTime, pid: Pid, hl: HlId, outcome: HlOutcome);
}

pub struct NullSink;

/// Fan out events to two sinks, e.g. a trace and an online checker.
impl<A: TraceSink, B: TraceSink> TraceSink for (A, B) {
    fn on_invoke(
        &mut self,
        tick: VirtualTime,
        pid: Pid,
        op: OpId,
        reg: RegId,
        kind: OpKind,
        arg: Option<u64>,
        hl: Option<HlId>,
    ) {
        self.0.on_invoke(tick, pid, op, reg, kind, arg, hl);
        self.1.on_invoke(tick, pid, op, reg, kind, arg, hl);
    }

    fn on_respond(&mut self, tick: VirtualTime, pid: Pid, op: OpId, kind: OpKind, value: u64) {
        self.0.on_respond(tick, pid, op, kind, value);
        self.1.on_respond(tick, pid, op, kind, value);
    }

    fn on_cs(&mut self, tick: VirtualTime, pid: Pid, enter: bool) {
        self.0.on_cs(tick, pid, enter);
        self.1.on_cs(tick, pid, enter);
    }

    fn on_hl_begin(&mut self, tick: VirtualTime, pid: Pid, hl: HlId, pair: PairId, kind: HlKind) {
        self.0.on_hl_begin(tick, pid, hl, pair, kind);
        self.1.on_hl_begin(tick, pid, hl, pair, kind);
    }

    fn on_hl_end(&mut self, tick: VirtualTime, pid: Pid, hl: HlId, outcome: HlOutcome) {
        self.0.on_hl_end(tick, pid, hl, outcome);
        self.1.on_hl_end(tick, pid, hl, outcome);
    }
}

impl TraceSink for NullSink {
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
    fn on_hl_end(&mut self, _: VirtualTime, _: Pid, _: HlId, _: HlOutcome) {}
}

impl TraceSink for Trace {
    fn on_invoke(
        &mut self,
        tick: VirtualTime,
        pid: Pid,
        op: OpId,
        reg: RegId,
        kind: OpKind,
        arg: Option<u64>,
        hl: Option<HlId>,
    ) {
        debug_assert_eq!(op.index(), self.ops.len());
        self.ops.push(OpInterval {
            id: op,
            pid,
            reg,
            kind,
            value: arg,
            invoke: tick,
            respond: None,
            hl,
        });
        if let Some(h) = hl {
            self.hl_ops[h.index()].children.push(op);
        }
        self.events.push(TraceEvent { tick, pid, body: EventBody::Invoke(op) });
    }

    fn on_respond(&mut self, tick: VirtualTime, pid: Pid, op: OpId, kind: OpKind, value: u64) {
        let row = &mut self.ops[op.index()];
        row.respond = Some(tick);
        if kind == OpKind::Read {
            row.value = Some(value);
        }
        self.events.push(TraceEvent { tick, pid, body: EventBody::Respond(op) });
    }

    fn on_cs(&mut self, tick: VirtualTime, pid: Pid, enter: bool) {
        let body = if enter { EventBody::CsEnter } else { EventBody::CsExit };
        self.events.push(TraceEvent { tick, pid, body });
    }

    fn on_hl_begin(&mut self, tick: VirtualTime, pid: Pid, hl: HlId, pair: PairId, kind: HlKind) {
        debug_assert_eq!(hl.index(), self.hl_ops.len());
        self.hl_ops.push(HighLevelOp {
            id: hl,
            pid,
            pair,
            kind,
            children: Vec::new(),
            begin: tick,
            end: None,
            outcome: None,
        });
        self.events.push(TraceEvent { tick, pid, body: EventBody::HlBegin(hl) });
    }

    fn on_hl_end(&mut self, tick: VirtualTime, pid: Pid, hl: HlId, outcome: HlOutcome) {
        let row = &mut self.hl_ops[hl.index()];
        row.end = Some(tick);
        row.outcome = Some(outcome);
        self.events.push(TraceEvent { tick, pid, body: EventBody::HlEnd(hl) });
    }
}

/// Observes the run after every slot; checkers that cannot afford to keep a
/// full trace in memory run as monitors instead.
pub trait RunMonitor {
    fn after_slot(&mut self, rs: &RunState);
}

pub struct NoMonitor;

impl RunMonitor for NoMonitor {
    fn after_slot(&mut self, _: &RunState) {}
}

impl<A: RunMonitor, B: RunMonitor> RunMonitor for (A, B) {
    fn after_slot(&mut self, rs: &RunState) {
        self.0.after_slot(rs);
        self.1.after_slot(rs);
    }
}

impl<M: RunMonitor> RunMonitor for Option<M> {
    fn after_slot(&mut self, rs: &RunState) {
        if let Some(m) = self {
            m.after_slot(rs);
        }
    }
}

/// Immutable description shared by every clone of a `RunState`.
#[derive(Debug)]
pub struct Shape {
    pub setup: RunSetup,
    pub ring: Option<RingLayout>,
    pub initial_registers: Vec<u64>,
    pub initial_locals: Vec<LocalsInit>,
}

impl Shape {
    pub fn cells(&self) -> &[CellInfo] {
        match (&self.ring, &self.setup) {
            (Some(l), _) => &l.cells,
            (None, RunSetup::Scenario { setup }) => &setup.cells,
            (None, RunSetup::Ring { .. }) => unreachable!("ring shape without layout"),
        }
    }

    pub fn pairs(&self) -> &[PairInfo] {
        match (&self.ring, &self.setup) {
            (Some(l), _) => &l.pairs,
            (None, RunSetup::Scenario { setup }) => &setup.pairs,
            (None, RunSetup::Ring { .. }) => unreachable!("ring shape without layout"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct CellState {
    committed: u64,
    pending_write: Option<u64>,
    atomic: bool,
    domain: u64,
}

/// A low-level operation in flight.
#[derive(Debug, Clone, Copy)]
pub struct PendingOp {
    pub op: OpId,
    pub reg: RegId,
    pub kind: OpKind,
    pub arg: Option<u64>,
    /// Some write on the same cell has overlapped this read.
    pub conflicted: bool,
    /// Committed value when the op was invoked.
    pub old: u64,
}

#[derive(Debug, Clone)]
enum SchedState {
    RoundRobin {
        next: u16,
    },
    Random {
        bound: u64,
        last: Option<u16>,
        consec: u64,
        last_slot: Vec<u64>,
    },
    Scripted {
        schedule: Arc<Vec<u16>>,
        pos: usize,
    },
    /// The explorer picks; `step_auto` refuses to run.
    External,
}

#[derive(Debug, Clone)]
enum AdvState {
    Random,
    ReturnOld,
    ReturnNew,
    Fixed(u64),
    Scripted { values: Arc<Vec<u64>>, pos: usize },
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunEnd {
    pub ticks: u64,
    pub slots: u64,
    /// True when the run stopped because nothing was left to schedule
    /// rather than because the budget ran out.
    pub halted: bool,
}

#[derive(Clone)]
pub struct RunState {
    shape: Arc<Shape>,
    machines: Vec<Machine>,
    cells: Vec<CellState>,
    pending: Vec<Option<PendingOp>>,
    open_hl: Vec<Option<(HlId, PairId, HlKind)>>,
    in_cs: Vec<bool>,
    now: u64,
    slot: u64,
    op_seq: u32,
    hl_seq: u32,
    sched: SchedState,
    adv: AdvState,
    rng_sched: ChaCha8Rng,
    rng_adv: ChaCha8Rng,
    record: Option<ChoiceScript>,
    cand_buf: Vec<u16>,
}

impl RunState {
    pub fn new_ring(config: &RingConfig) -> Result<RunState, SimError> {
        config.validate()?;
        let layout = config.layout();
        let mut rng_init = ChaCha8Rng::seed_from_u64(config.seed);
        rng_init.set_stream(2);
        let (registers, locals) = config.resolve_initial(&layout, &mut rng_init)?;
        let machines = build_ring_machines(&layout, &locals);
        let sched = match config.scheduler {
            SchedulerPolicy::RoundRobin => SchedState::RoundRobin { next: 0 },
            SchedulerPolicy::SeededRandom { fairness_bound } => SchedState::Random {
                bound: u64::from(fairness_bound.max(1)),
                last: None,
                consec: 0,
                last_slot: vec![0; config.n as usize],
            },
            SchedulerPolicy::Enumerate => SchedState::External,
        };
        let adv = match config.adversary {
            AdversaryPolicy::Random => AdvState::Random,
            AdversaryPolicy::ReturnOld => AdvState::ReturnOld,
            AdversaryPolicy::ReturnNew => AdvState::ReturnNew,
            AdversaryPolicy::FixedTarget { value } => AdvState::Fixed(value),
            AdversaryPolicy::Enumerate => AdvState::External,
        };
        let shape = Shape {
            setup: RunSetup::Ring { config: config.clone() },
            ring: Some(layout),
            initial_registers: registers,
            initial_locals: locals,
        };
        Ok(RunState::build(shape, machines, sched, adv, config.seed))
    }

    pub fn new_scenario(
        setup: &ScenarioSetup,
        initial: &[u64],
        scheduler: SchedulerPolicy,
        adversary: AdversaryPolicy,
        seed: u64,
    ) -> Result<RunState, SimError> {
        setup.validate()?;
        if initial.len() != setup.cells.len() {
            return Err(SimError::BadMeta(format!(
                "{} initial values for {} cells",
                initial.len(),
                setup.cells.len()
            )));
        }
        for (cell, &v) in setup.cells.iter().zip(initial) {
            if v >= cell.domain {
                return Err(ConfigError::InitOutsideDomain { value: v, domain: cell.domain }.into());
            }
        }
        let machines = build_scenario_machines(setup);
        let sched = match scheduler {
            SchedulerPolicy::RoundRobin => SchedState::RoundRobin { next: 0 },
            SchedulerPolicy::SeededRandom { fairness_bound } => SchedState::Random {
                bound: u64::from(fairness_bound.max(1)),
                last: None,
                consec: 0,
                last_slot: vec![0; machines.len()],
            },
            SchedulerPolicy::Enumerate => SchedState::External,
        };
        let adv = match adversary {
            AdversaryPolicy::Random => AdvState::Random,
            AdversaryPolicy::ReturnOld => AdvState::ReturnOld,
            AdversaryPolicy::ReturnNew => AdvState::ReturnNew,
            AdversaryPolicy::FixedTarget { value } => AdvState::Fixed(value),
            AdversaryPolicy::Enumerate => AdvState::External,
        };
        let shape = Shape {
            setup: RunSetup::Scenario { setup: setup.clone() },
            ring: None,
            initial_registers: initial.to_vec(),
            initial_locals: vec![LocalsInit::default(); machines.len()],
        };
        Ok(RunState::build(shape, machines, sched, adv, seed))
    }

    /// Rebuild the exact run a recorded trace came from.
    pub fn from_meta(meta: &TraceMeta) -> Result<RunState, SimError> {
        let script = meta.script.clone().ok_or(SimError::MissingScript)?;
        let mut rs = match &meta.setup {
            RunSetup::Ring { config } => {
                config.validate()?;
                let layout = config.layout();
                if meta.initial_registers.len() != layout.cells.len()
                    || meta.initial_locals.len() != usize::from(config.n)
                {
                    return Err(SimError::BadMeta("initial state sizes".into()));
                }
                let machines = build_ring_machines(&layout, &meta.initial_locals);
                let shape = Shape {
                    setup: meta.setup.clone(),
                    ring: Some(layout),
                    initial_registers: meta.initial_registers.clone(),
                    initial_locals: meta.initial_locals.clone(),
                };
                RunState::build(shape, machines, SchedState::External, AdvState::External, 0)
            }
            RunSetup::Scenario { setup } => {
                let mut rs = RunState::new_scenario(
                    setup,
                    &meta.initial_registers,
                    SchedulerPolicy::RoundRobin,
                    AdversaryPolicy::Random,
                    0,
                )?;
                rs.shape = Arc::new(Shape {
                    setup: meta.setup.clone(),
                    ring: None,
                    initial_registers: meta.initial_registers.clone(),
                    initial_locals: vec![LocalsInit::default(); setup.programs.len()],
                });
                rs
            }
        };
        rs.sched = SchedState::Scripted { schedule: Arc::new(script.schedule), pos: 0 };
        rs.adv = AdvState::Scripted { values: Arc::new(script.values), pos: 0 };
        Ok(rs)
    }

    fn build(
        shape: Shape,
        machines: Vec<Machine>,
        sched: SchedState,
        adv: AdvState,
        seed: u64,
    ) -> RunState {
        let n = machines.len();
        let cells = shape
            .cells()
            .iter()
            .zip(&shape.initial_registers)
            .map(|(c, &v)| CellState {
                committed: v,
                pending_write: None,
                atomic: c.semantics == CellSemantics::Atomic,
                domain: c.domain,
            })
            .collect();
        let mut rng_sched = ChaCha8Rng::seed_from_u64(seed);
        rng_sched.set_stream(0);
        let mut rng_adv = ChaCha8Rng::seed_from_u64(seed);
        rng_adv.set_stream(1);
        RunState {
            shape: Arc::new(shape),
            machines,
            cells,
            pending: vec![None; n],
            open_hl: vec![None; n],
            in_cs: vec![false; n],
            now: 0,
            slot: 0,
            op_seq: 0,
            hl_seq: 0,
            sched,
            adv,
            rng_sched,
            rng_adv,
            record: None,
            cand_buf: Vec::new(),
        }
    }

    /// Capture the schedule and adversary values taken from here on, for a
    /// replayable witness.
    pub fn record_script(&mut self) {
        self.record = Some(ChoiceScript::default());
    }

    pub fn take_script(&mut self) -> Option<ChoiceScript> {
        self.record.take()
    }

    pub fn meta(&self) -> TraceMeta {
        TraceMeta {
            format: TRACE_FORMAT.to_string(),
            setup: self.shape.setup.clone(),
            initial_registers: self.shape.initial_registers.clone(),
            initial_locals: self.shape.initial_locals.clone(),
            script: None,
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn n(&self) -> usize {
        self.machines.len()
    }

    /// Ticks consumed so far (equivalently, the next tick to be assigned).
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn slots(&self) -> u64 {
        self.slot
    }

    pub fn committed(&self, reg: RegId) -> u64 {
        self.cells[reg.index()].committed
    }

    pub fn pending_write(&self, reg: RegId) -> Option<u64> {
        self.cells[reg.index()].pending_write
    }

    pub fn machine(&self, pid: Pid) -> &Machine {
        &self.machines[pid.index()]
    }

    pub fn machines(&self) -> &[Machine] {
        &self.machines
    }

    pub fn in_cs(&self, pid: Pid) -> bool {
        self.in_cs[pid.index()]
    }

    pub fn cs_occupancy(&self) -> usize {
        self.in_cs.iter().filter(|&&b| b).count()
    }

    pub fn open_hl(&self, pid: Pid) -> Option<(HlId, PairId, HlKind)> {
        self.open_hl[pid.index()]
    }

    pub fn any_open_dup_write(&self) -> bool {
        self.open_hl
            .iter()
            .flatten()
            .any(|(_, _, kind)| matches!(kind, HlKind::DupWrite { .. }))
    }

    pub fn pending_op(&self, pid: Pid) -> Option<&PendingOp> {
        self.pending[pid.index()].as_ref()
    }

    /// Both halves committed-equal, ignoring in-flight writes.
    pub fn pair_committed(&self, pair: &PairInfo) -> Option<u64> {
        let a = self.cells[pair.a.index()].committed;
        let b = self.cells[pair.b.index()].committed;
        (a == b).then_some(a)
    }

    /// Fill `out` with one committed token value per link (indexed by the
    /// writing processor) and return true, or return false on a snapshot
    /// where some dup-write is open or some pair's halves disagree.
    pub fn ring_link_values(&self, out: &mut Vec<u64>) -> bool {
        let layout = self.shape.ring.as_ref().expect("link values on a ring run");
        out.clear();
        if layout.variant != Variant::Atomic && self.any_open_dup_write() {
            return false;
        }
        for link in &layout.links {
            match layout.variant {
                Variant::Atomic => {
                    out.push(self.cells[link.cell.unwrap().index()].committed);
                }
                Variant::TwoReg => {
                    let pair = layout.pair(link.pairs[0]);
                    match self.pair_committed(pair) {
                        Some(v) => out.push(v),
                        None => return false,
                    }
                }
                Variant::Gray => {
                    let mut bits = [0u8; 64];
                    for (i, &pid) in link.pairs.iter().enumerate() {
                        match self.pair_committed(layout.pair(pid)) {
                            Some(v) => bits[i] = v as u8,
                            None => return false,
                        }
                    }
                    let v = gray_code::gray_decode_bits(&bits[..link.pairs.len()]);
                    out.push(v % layout.token_domain);
                }
            }
        }
        true
    }

    pub fn enabled(&self, pid: Pid) -> bool {
        self.pending[pid.index()].is_some() || !self.machines[pid.index()].halted()
    }

    pub fn enabled_pids(&self) -> Vec<Pid> {
        (0..self.machines.len() as u16)
            .map(Pid)
            .filter(|&p| self.enabled(p))
            .collect()
    }

    /// When the next step of `pid` is a disturbed read on a safe cell, the
    /// domain the adversary may answer from.
    pub fn pending_resolution_domain(&self, pid: Pid) -> Option<u64> {
        let p = self.pending[pid.index()].as_ref()?;
        let cell = &self.cells[p.reg.index()];
        (p.kind == OpKind::Read && p.conflicted && !cell.atomic).then_some(cell.domain)
    }

    fn tick(&mut self) -> VirtualTime {
        let t = VirtualTime(self.now);
        self.now += 1;
        t
    }

    /// Run one slot for `pid`. `forced` supplies the adversary's answer when
    /// this slot resolves a disturbed read; it must be `None` otherwise.
    pub fn step_slot<S: TraceSink>(
        &mut self,
        pid: Pid,
        forced: Option<u64>,
        sink: &mut S,
    ) -> Result<(), SimError> {
        debug_assert!(self.enabled(pid), "slot for a disabled pid");
        self.slot += 1;
        if let Some(rec) = &mut self.record {
            rec.schedule.push(pid.0);
        }
        if self.pending[pid.index()].is_some() {
            self.deliver(pid, forced, sink)
        } else {
            debug_assert!(forced.is_none(), "forced value without a pending read");
            self.emit_actions(pid, sink);
            Ok(())
        }
    }

    fn emit_actions<S: TraceSink>(&mut self, pid: Pid, sink: &mut S) {
        loop {
            let action = self.machines[pid.index()].next_action();
            match action {
                Action::HlBegin { pair, kind } => {
                    let id = HlId(self.hl_seq);
                    self.hl_seq += 1;
                    debug_assert!(self.open_hl[pid.index()].is_none());
                    self.open_hl[pid.index()] = Some((id, pair, kind));
                    let t = self.tick();
                    sink.on_hl_begin(t, pid, id, pair, kind);
                    // The begin marker is free; the first read of the op
                    // lands in the same slot.
                }
                Action::HlEnd { outcome } => {
                    let (id, _, _) =
                        self.open_hl[pid.index()].take().expect("hl_end without open op");
                    let t = self.tick();
                    sink.on_hl_end(t, pid, id, outcome);
                    return;
                }
                Action::Invoke { reg, kind, arg } => {
                    let id = OpId(self.op_seq);
                    self.op_seq += 1;
                    let hl = self.open_hl[pid.index()].map(|(h, _, _)| h);
                    let cell = &mut self.cells[reg.index()];
                    let conflicted = match kind {
                        OpKind::Read => cell.pending_write.is_some(),
                        OpKind::Write => {
                            let arg = arg.expect("write without a value");
                            debug_assert!(arg < cell.domain, "write outside the cell domain");
                            debug_assert!(
                                cell.pending_write.is_none(),
                                "two writers on one cell"
                            );
                            cell.pending_write = Some(arg);
                            for p in self.pending.iter_mut().flatten() {
                                if p.reg == reg && p.kind == OpKind::Read {
                                    p.conflicted = true;
                                }
                            }
                            false
                        }
                    };
                    let old = self.cells[reg.index()].committed;
                    self.pending[pid.index()] =
                        Some(PendingOp { op: id, reg, kind, arg, conflicted, old });
                    let t = self.tick();
                    sink.on_invoke(t, pid, id, reg, kind, arg, hl);
                    return;
                }
                Action::CsEnter => {
                    debug_assert!(!self.in_cs[pid.index()], "nested critical section");
                    self.in_cs[pid.index()] = true;
                    let t = self.tick();
                    sink.on_cs(t, pid, true);
                    return;
                }
                Action::CsExit => {
                    debug_assert!(self.in_cs[pid.index()], "cs exit without enter");
                    self.in_cs[pid.index()] = false;
                    let t = self.tick();
                    sink.on_cs(t, pid, false);
                    return;
                }
            }
        }
    }

    fn deliver<S: TraceSink>(
        &mut self,
        pid: Pid,
        forced: Option<u64>,
        sink: &mut S,
    ) -> Result<(), SimError> {
        let p = self.pending[pid.index()].take().expect("deliver without pending op");
        let value = match p.kind {
            OpKind::Write => {
                let v = p.arg.expect("write without a value");
                let cell = &mut self.cells[p.reg.index()];
                cell.committed = v;
                cell.pending_write = None;
                debug_assert!(forced.is_none(), "forced value on a write respond");
                v
            }
            OpKind::Read => {
                let cell = self.cells[p.reg.index()];
                if cell.atomic || !p.conflicted {
                    debug_assert!(forced.is_none(), "forced value on an undisturbed read");
                    cell.committed
                } else {
                    let v = self.resolve_disturbed(&p, &cell, forced)?;
                    debug_assert!(v < cell.domain, "adversary value outside the cell domain");
                    if let Some(rec) = &mut self.record {
                        rec.values.push(v);
                    }
                    v
                }
            }
        };
        let t = self.tick();
        sink.on_respond(t, pid, p.op, p.kind, value);
        self.machines[pid.index()].on_response(value);
        // A response that completes a dup-write or scan-read also closes the
        // op; guard evaluation has already run inside the transition.
        while self.machines[pid.index()].next_is_hl_end() {
            let Action::HlEnd { outcome } = self.machines[pid.index()].next_action() else {
                unreachable!("next_is_hl_end promised an hl_end");
            };
            let (id, _, _) = self.open_hl[pid.index()].take().expect("hl_end without open op");
            let t = self.tick();
            sink.on_hl_end(t, pid, id, outcome);
        }
        Ok(())
    }

    fn resolve_disturbed(
        &mut self,
        p: &PendingOp,
        cell: &CellState,
        forced: Option<u64>,
    ) -> Result<u64, SimError> {
        if let Some(v) = forced {
            return Ok(v);
        }
        match &mut self.adv {
            AdvState::Random => Ok(self.rng_adv.gen_range(0..cell.domain)),
            AdvState::ReturnOld => Ok(p.old),
            AdvState::ReturnNew => Ok(cell.pending_write.unwrap_or(cell.committed)),
            AdvState::Fixed(v) => Ok(*v),
            AdvState::Scripted { values, pos } => {
                let v = values
                    .get(*pos)
                    .copied()
                    .ok_or(SimError::ScriptExhausted { what: "adversary values", took: *pos })?;
                *pos += 1;
                Ok(v)
            }
            AdvState::External => Err(ConfigError::EnumerateOutsideExplorer {
                policy: "the enumerate adversary",
            }
            .into()),
        }
    }

    fn pick_pid(&mut self) -> Result<Option<Pid>, SimError> {
        match &mut self.sched {
            SchedState::RoundRobin { next } => {
                let n = self.machines.len() as u16;
                for i in 0..n {
                    let pid = Pid((*next + i) % n);
                    if self.pending[pid.index()].is_some() || !self.machines[pid.index()].halted()
                    {
                        *next = (pid.0 + 1) % n;
                        return Ok(Some(pid));
                    }
                }
                Ok(None)
            }
            SchedState::Random { .. } => Ok(self.pick_random()),
            SchedState::Scripted { schedule, pos } => {
                let Some(&raw) = schedule.get(*pos) else {
                    return Ok(None);
                };
                *pos += 1;
                let pid = Pid(raw);
                if raw as usize >= self.machines.len() || !self.enabled(pid) {
                    return Err(SimError::ScriptBadPid(raw));
                }
                Ok(Some(pid))
            }
            SchedState::External => Err(ConfigError::EnumerateOutsideExplorer {
                policy: "the enumerate scheduler",
            }
            .into()),
        }
    }

    fn pick_random(&mut self) -> Option<Pid> {
        let mut buf = std::mem::take(&mut self.cand_buf);
        buf.clear();
        buf.extend(
            (0..self.machines.len() as u16).filter(|&i| self.enabled(Pid(i))),
        );
        let choice = (!buf.is_empty()).then(|| {
            let SchedState::Random { bound, last, consec, last_slot } = &mut self.sched else {
                unreachable!()
            };
            let n = self.machines.len() as u64;
            // Force anyone idle this many slots, most-starved first. The
            // threshold leaves room for n-1 equally starved peers ahead in
            // the queue, so gaps never exceed n*bound slots and every live
            // processor gets at least floor(T / (n*bound)) of T slots.
            let threshold = n * (*bound - 1) + 1;
            // Positions are 1-indexed so that a never-scheduled processor
            // (last_slot 0) counts as idle since before the run began.
            let position = self.slot + 1;
            let starved = buf
                .iter()
                .copied()
                .map(|i| (position - last_slot[i as usize], i))
                .max_by_key(|&(idle, i)| (idle, std::cmp::Reverse(i)))
                .filter(|&(idle, _)| idle >= threshold)
                .map(|(_, i)| i);
            let pick = starved.unwrap_or_else(|| {
                if buf.len() > 1 {
                    if let Some(l) = *last {
                        if *consec >= *bound {
                            buf.retain(|&i| i != l);
                        }
                    }
                }
                buf[self.rng_sched.gen_range(0..buf.len())]
            });
            if *last == Some(pick) {
                *consec += 1;
            } else {
                *last = Some(pick);
                *consec = 1;
            }
            last_slot[pick as usize] = position;
            Pid(pick)
        });
        self.cand_buf = buf;
        choice
    }

    /// Pick a processor under the configured policy and run one slot.
    /// Returns false when nothing is enabled (or a finite schedule ended).
    pub fn step_auto<S: TraceSink>(&mut self, sink: &mut S) -> Result<bool, SimError> {
        match self.pick_pid()? {
            Some(pid) => {
                self.step_slot(pid, None, sink)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Drive slots until the tick budget is exhausted or nothing remains
    /// schedulable.
    pub fn run_until<S: TraceSink, M: RunMonitor>(
        &mut self,
        budget_ticks: u64,
        sink: &mut S,
        monitor: &mut M,
    ) -> Result<RunEnd, SimError> {
        while self.now < budget_ticks {
            if !self.step_auto(sink)? {
                return Ok(RunEnd { ticks: self.now, slots: self.slot, halted: true });
            }
            monitor.after_slot(self);
        }
        Ok(RunEnd { ticks: self.now, slots: self.slot, halted: false })
    }

    /// Canonical semantic state for exploration dedup; ticks, sequence
    /// numbers, and anything else that only names history are excluded.
    pub fn encode_key(&self, out: &mut Vec<u8>) {
        for cell in &self.cells {
            out.extend_from_slice(&cell.committed.to_le_bytes());
        }
        for p in &self.pending {
            match p {
                None => out.push(0),
                Some(p) => {
                    out.push(1 + u8::from(p.conflicted) + 2 * u8::from(p.kind == OpKind::Write));
                    out.extend_from_slice(&p.reg.0.to_le_bytes());
                    out.extend_from_slice(&p.arg.map_or(u64::MAX, |v| v).to_le_bytes());
                    out.extend_from_slice(&p.old.to_le_bytes());
                }
            }
        }
        for hl in &self.open_hl {
            match hl {
                None => out.push(0),
                Some((_, pair, _)) => {
                    out.push(1);
                    out.extend_from_slice(&pair.0.to_le_bytes());
                }
            }
        }
        for &b in &self.in_cs {
            out.push(u8::from(b));
        }
        for m in &self.machines {
            m.encode_key(out);
        }
        if let SchedState::RoundRobin { next } = &self.sched {
            out.extend_from_slice(&next.to_le_bytes());
        }
    }
}

/// Run a full ring with its configured policies, recording the trace and
/// the choice script that reproduces it.
pub fn run_ring(config: &RingConfig) -> Result<Trace, SimError> {
    let mut rs = RunState::new_ring(config)?;
    rs.record_script();
    let mut trace = Trace::new(rs.meta());
    rs.run_until(config.max_steps, &mut trace, &mut NoMonitor)?;
    trace.meta.script = rs.take_script();
    Ok(trace)
}

/// Run a full ring without building a trace, feeding `monitor` instead.
pub fn run_ring_monitored<M: RunMonitor>(
    config: &RingConfig,
    monitor: &mut M,
) -> Result<RunEnd, SimError> {
    let mut rs = RunState::new_ring(config)?;
    rs.run_until(config.max_steps, &mut NullSink, monitor)
}

/// Re-run the choice script recorded in a trace meta and return the
/// regenerated trace; byte-identical to the original by construction.
pub fn replay(meta: &TraceMeta) -> Result<Trace, SimError> {
    let mut rs = RunState::from_meta(meta)?;
    let mut trace = Trace::new(meta.clone());
    while rs.step_auto(&mut trace)? {}
    Ok(trace)
}
