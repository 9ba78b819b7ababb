//! Processor step machines. A machine is asked for one schedulable action
//! at a time; local computation between register operations costs no ticks
//! and happens inside the transitions.

use crate::config::{PairInfo, ScriptOp};
use crate::ids::{PairId, RegId};
use crate::trace::{HlKind, HlOutcome, OpKind};
use serde::{Deserialize, Serialize};

/// One schedulable step. Every action occupies exactly one tick; an
/// `Invoke` leaves the operation pending until the driver delivers the
/// matching respond on a later tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Invoke {
        reg: RegId,
        kind: OpKind,
        arg: Option<u64>,
    },
    CsEnter,
    CsExit,
    HlBegin {
        pair: PairId,
        kind: HlKind,
    },
    HlEnd {
        outcome: HlOutcome,
    },
}

/// Read-only view of a processor's locals for the state checkers. Bit
/// arrays are empty outside the gray variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalsView<'a> {
    pub x: u64,
    pub y: Option<u64>,
    pub x_bits: &'a [u8],
    pub y_bits: &'a [Option<u8>],
}

/// Propagate one value to both halves of a pair. Reads both halves first
/// and skips the writes when the pair already holds the value, so a
/// steady-state rewrite touches no register.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DupWriteRun {
    pub pair: PairId,
    pub a: RegId,
    pub b: RegId,
    pub val: u64,
    phase: DupPhase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum DupPhase {
    Begin,
    InvReadA,
    AwaitReadA,
    InvReadB { a_eq: bool },
    AwaitReadB { a_eq: bool },
    InvWriteA,
    AwaitWriteA,
    InvWriteB,
    AwaitWriteB,
    End { effective: bool },
    Done,
}

impl DupWriteRun {
    pub fn new(pair: PairId, a: RegId, b: RegId, val: u64) -> DupWriteRun {
        DupWriteRun { pair, a, b, val, phase: DupPhase::Begin }
    }

    pub fn from_info(info: &PairInfo, val: u64) -> DupWriteRun {
        DupWriteRun::new(info.id, info.a, info.b, val)
    }

    pub fn next_action(&mut self) -> Action {
        match self.phase {
            DupPhase::Begin => {
                self.phase = DupPhase::InvReadA;
                Action::HlBegin { pair: self.pair, kind: HlKind::DupWrite { val: self.val } }
            }
            DupPhase::InvReadA => {
                self.phase = DupPhase::AwaitReadA;
                Action::Invoke { reg: self.a, kind: OpKind::Read, arg: None }
            }
            DupPhase::InvReadB { a_eq } => {
                self.phase = DupPhase::AwaitReadB { a_eq };
                Action::Invoke { reg: self.b, kind: OpKind::Read, arg: None }
            }
            DupPhase::InvWriteA => {
                self.phase = DupPhase::AwaitWriteA;
                Action::Invoke { reg: self.a, kind: OpKind::Write, arg: Some(self.val) }
            }
            DupPhase::InvWriteB => {
                self.phase = DupPhase::AwaitWriteB;
                Action::Invoke { reg: self.b, kind: OpKind::Write, arg: Some(self.val) }
            }
            DupPhase::End { effective } => {
                self.phase = DupPhase::Done;
                Action::HlEnd { outcome: HlOutcome::DupWrite { effective } }
            }
            DupPhase::AwaitReadA
            | DupPhase::AwaitReadB { .. }
            | DupPhase::AwaitWriteA
            | DupPhase::AwaitWriteB
            | DupPhase::Done => unreachable!("dup-write asked for an action while waiting"),
        }
    }

    pub fn on_response(&mut self, value: u64) {
        self.phase = match self.phase {
            DupPhase::AwaitReadA => DupPhase::InvReadB { a_eq: value == self.val },
            DupPhase::AwaitReadB { a_eq } if a_eq && value == self.val => {
                DupPhase::End { effective: false }
            }
            DupPhase::AwaitReadB { .. } => DupPhase::InvWriteA,
            DupPhase::AwaitWriteA => DupPhase::InvWriteB,
            DupPhase::AwaitWriteB => DupPhase::End { effective: true },
            p => unreachable!("dup-write response in phase {p:?}"),
        };
    }

    pub fn next_is_hl_end(&self) -> bool {
        matches!(self.phase, DupPhase::End { .. })
    }

    pub fn done(&self) -> bool {
        matches!(self.phase, DupPhase::Done)
    }

    pub fn encode_key(&self, out: &mut Vec<u8>) {
        out.push(match self.phase {
            DupPhase::Begin => 0,
            DupPhase::InvReadA => 1,
            DupPhase::AwaitReadA => 2,
            DupPhase::InvReadB { a_eq } => 3 + u8::from(a_eq),
            DupPhase::AwaitReadB { a_eq } => 5 + u8::from(a_eq),
            DupPhase::InvWriteA => 7,
            DupPhase::AwaitWriteA => 8,
            DupPhase::InvWriteB => 9,
            DupPhase::AwaitWriteB => 10,
            DupPhase::End { effective } => 11 + u8::from(effective),
            DupPhase::Done => 13,
        });
        out.extend_from_slice(&self.val.to_le_bytes());
    }
}

/// Sample both halves of a pair `k` times (2k reads, half A first) and
/// return the unanimous value, or nothing when the samples disagree. Only
/// the first sample and a running agreement flag are retained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanReadRun {
    pub pair: PairId,
    pub a: RegId,
    pub b: RegId,
    pub k: u16,
    step: u16,
    waiting: bool,
    begun: bool,
    first: Option<u64>,
    uniform: bool,
}

impl ScanReadRun {
    pub fn new(pair: PairId, a: RegId, b: RegId, k: u16) -> ScanReadRun {
        assert!(k >= 1, "scan width must be positive");
        ScanReadRun {
            pair,
            a,
            b,
            k,
            step: 0,
            waiting: false,
            begun: false,
            first: None,
            uniform: true,
        }
    }

    pub fn from_info(info: &PairInfo, k: u16) -> ScanReadRun {
        ScanReadRun::new(info.id, info.a, info.b, k)
    }

    pub fn next_action(&mut self) -> Action {
        assert!(!self.waiting, "scan-read asked for an action while waiting");
        if !self.begun {
            self.begun = true;
            return Action::HlBegin { pair: self.pair, kind: HlKind::ScanRead { k: self.k } };
        }
        if self.step < 2 * self.k {
            self.waiting = true;
            let reg = if self.step.is_multiple_of(2) { self.a } else { self.b };
            return Action::Invoke { reg, kind: OpKind::Read, arg: None };
        }
        Action::HlEnd { outcome: HlOutcome::ScanRead { value: self.result() } }
    }

    pub fn on_response(&mut self, value: u64) {
        debug_assert!(self.waiting);
        self.waiting = false;
        match self.first {
            None => self.first = Some(value),
            Some(f) if f != value => self.uniform = false,
            _ => {}
        }
        self.step += 1;
    }

    pub fn result(&self) -> Option<u64> {
        if self.uniform {
            self.first
        } else {
            None
        }
    }

    pub fn next_is_hl_end(&self) -> bool {
        self.begun && !self.waiting && self.step == 2 * self.k
    }

    pub fn encode_key(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.step.to_le_bytes());
        out.push(u8::from(self.waiting) | (u8::from(self.begun) << 1) | (u8::from(self.uniform) << 2));
        out.extend_from_slice(&self.first.map_or(u64::MAX, |v| v).to_le_bytes());
    }
}

/// A processor that runs a fixed list of script steps and then halts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptMachine {
    steps: Vec<ResolvedStep>,
    pc: usize,
    active: Option<ActiveRun>,
    waiting_raw: bool,
    scans_done: u64,
    last_scan: Option<Option<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ResolvedStep {
    Dup { pair: PairId, a: RegId, b: RegId, val: u64 },
    Scan { pair: PairId, a: RegId, b: RegId, k: u16 },
    RawRead { reg: RegId },
    RawWrite { reg: RegId, val: u64 },
    CsEnter,
    CsExit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum ActiveRun {
    Dup(DupWriteRun),
    Scan(ScanReadRun),
}

impl ScriptMachine {
    pub fn new(program: &[ScriptOp], pairs: &[PairInfo]) -> ScriptMachine {
        let find = |id: PairId| {
            let p = pairs.iter().find(|p| p.id == id).expect("script names a known pair");
            (p.id, p.a, p.b)
        };
        let steps = program
            .iter()
            .map(|op| match *op {
                ScriptOp::DupWrite { pair, val } => {
                    let (pair, a, b) = find(pair);
                    ResolvedStep::Dup { pair, a, b, val }
                }
                ScriptOp::ScanRead { pair, k } => {
                    let (pair, a, b) = find(pair);
                    ResolvedStep::Scan { pair, a, b, k }
                }
                ScriptOp::RawRead { reg } => ResolvedStep::RawRead { reg },
                ScriptOp::RawWrite { reg, val } => ResolvedStep::RawWrite { reg, val },
                ScriptOp::CsEnter => ResolvedStep::CsEnter,
                ScriptOp::CsExit => ResolvedStep::CsExit,
            })
            .collect();
        ScriptMachine {
            steps,
            pc: 0,
            active: None,
            waiting_raw: false,
            scans_done: 0,
            last_scan: None,
        }
    }

    pub fn halted(&self) -> bool {
        self.active.is_none() && !self.waiting_raw && self.pc >= self.steps.len()
    }

    pub fn next_action(&mut self) -> Action {
        if let Some(run) = &mut self.active {
            let (action, finished, scan_result) = match run {
                ActiveRun::Dup(r) => {
                    let a = r.next_action();
                    (a, r.done(), None)
                }
                ActiveRun::Scan(r) => {
                    let a = r.next_action();
                    if matches!(a, Action::HlEnd { .. }) {
                        let res = r.result();
                        (a, true, Some(res))
                    } else {
                        (a, false, None)
                    }
                }
            };
            if finished {
                if let Some(res) = scan_result {
                    self.scans_done += 1;
                    self.last_scan = Some(res);
                }
                self.active = None;
                self.pc += 1;
            }
            return action;
        }
        match self.steps[self.pc] {
            ResolvedStep::Dup { pair, a, b, val } => {
                let mut run = DupWriteRun::new(pair, a, b, val);
                let action = run.next_action();
                self.active = Some(ActiveRun::Dup(run));
                action
            }
            ResolvedStep::Scan { pair, a, b, k } => {
                let mut run = ScanReadRun::new(pair, a, b, k);
                let action = run.next_action();
                self.active = Some(ActiveRun::Scan(run));
                action
            }
            ResolvedStep::RawRead { reg } => {
                self.waiting_raw = true;
                Action::Invoke { reg, kind: OpKind::Read, arg: None }
            }
            ResolvedStep::RawWrite { reg, val } => {
                self.waiting_raw = true;
                Action::Invoke { reg, kind: OpKind::Write, arg: Some(val) }
            }
            ResolvedStep::CsEnter => {
                self.pc += 1;
                Action::CsEnter
            }
            ResolvedStep::CsExit => {
                self.pc += 1;
                Action::CsExit
            }
        }
    }

    pub fn on_response(&mut self, value: u64) {
        if self.waiting_raw {
            self.waiting_raw = false;
            self.pc += 1;
            return;
        }
        match self.active.as_mut().expect("response without pending op") {
            ActiveRun::Dup(r) => r.on_response(value),
            ActiveRun::Scan(r) => r.on_response(value),
        }
    }

    pub fn next_is_hl_end(&self) -> bool {
        match &self.active {
            Some(ActiveRun::Dup(r)) => r.next_is_hl_end(),
            Some(ActiveRun::Scan(r)) => r.next_is_hl_end(),
            None => false,
        }
    }

    pub fn locals(&self) -> LocalsView<'_> {
        LocalsView { x: 0, y: None, x_bits: &[], y_bits: &[] }
    }

    pub fn cycles(&self) -> u64 {
        self.scans_done
    }

    pub fn last_y(&self) -> Option<Option<u64>> {
        self.last_scan
    }

    pub fn encode_key(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.pc as u32).to_le_bytes());
        out.push(u8::from(self.waiting_raw));
        match &self.active {
            None => out.push(0),
            Some(ActiveRun::Dup(r)) => {
                out.push(1);
                r.encode_key(out);
            }
            Some(ActiveRun::Scan(r)) => {
                out.push(2);
                r.encode_key(out);
            }
        }
        // Completed-scan stats feed the verdict, so they are state.
        out.extend_from_slice(&self.scans_done.to_le_bytes());
        match self.last_scan {
            None => out.push(0),
            Some(None) => out.push(1),
            Some(Some(v)) => {
                out.push(2);
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}
