//! Token ring over one safe-register pair per link. Each cycle re-reads
//! the processor's own committed value, scans the predecessor pair phi
//! times, applies the token guards only on a definite scan result, and
//! closes with a dup-write of the (possibly updated) value. No local
//! survives a cycle except through the registers.

use crate::config::{LocalsInit, PairInfo};
use crate::machine::{Action, DupWriteRun, LocalsView, ScanReadRun};
use crate::trace::OpKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoRegMachine {
    is_origin: bool,
    token_domain: u64,
    phi: u16,
    own: PairInfo,
    pred: PairInfo,
    x: u64,
    y: Option<u64>,
    phase: Phase,
    cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
enum Phase {
    InvReadOwn,
    AwaitReadOwn,
    Scan(ScanReadRun),
    CsEnter,
    CsExit,
    Write(DupWriteRun),
}

impl TwoRegMachine {
    pub fn new(
        is_origin: bool,
        token_domain: u64,
        phi: u16,
        own: PairInfo,
        pred: PairInfo,
        init: &LocalsInit,
    ) -> TwoRegMachine {
        TwoRegMachine {
            is_origin,
            token_domain,
            phi,
            own,
            pred,
            x: init.x % token_domain,
            y: Some(init.y % token_domain),
            phase: Phase::InvReadOwn,
            cycles: 0,
        }
    }

    /// Guard evaluation, run the instant the scan closes.
    fn after_scan(&mut self) {
        self.cycles += 1;
        let token = match self.y {
            Some(y) if self.is_origin => y == self.x,
            Some(y) => y != self.x,
            None => false,
        };
        if token {
            self.x = if self.is_origin {
                (self.x + 1) % self.token_domain
            } else {
                self.y.expect("token requires a definite scan")
            };
            self.phase = Phase::CsEnter;
        } else {
            self.phase = Phase::Write(DupWriteRun::from_info(&self.own, self.x));
        }
    }

    pub fn next_action(&mut self) -> Action {
        match &mut self.phase {
            Phase::InvReadOwn => {
                self.phase = Phase::AwaitReadOwn;
                Action::Invoke { reg: self.own.a, kind: OpKind::Read, arg: None }
            }
            Phase::Scan(run) => {
                let action = run.next_action();
                if matches!(action, Action::HlEnd { .. }) {
                    self.y = run.result();
                    self.after_scan();
                }
                action
            }
            Phase::CsEnter => {
                self.phase = Phase::CsExit;
                Action::CsEnter
            }
            Phase::CsExit => {
                self.phase = Phase::Write(DupWriteRun::from_info(&self.own, self.x));
                Action::CsExit
            }
            Phase::Write(run) => {
                let action = run.next_action();
                if run.done() {
                    self.phase = Phase::InvReadOwn;
                }
                action
            }
            Phase::AwaitReadOwn => unreachable!("two-reg machine asked for an action while waiting"),
        }
    }

    pub fn on_response(&mut self, value: u64) {
        match &mut self.phase {
            Phase::AwaitReadOwn => {
                self.x = value;
                self.phase = Phase::Scan(ScanReadRun::from_info(&self.pred, self.phi));
            }
            Phase::Scan(run) => run.on_response(value),
            Phase::Write(run) => run.on_response(value),
            p => unreachable!("two-reg response in phase {p:?}"),
        }
    }

    pub fn next_is_hl_end(&self) -> bool {
        match &self.phase {
            Phase::Scan(run) => run.next_is_hl_end(),
            Phase::Write(run) => run.next_is_hl_end(),
            _ => false,
        }
    }

    pub fn locals(&self) -> LocalsView<'_> {
        LocalsView { x: self.x, y: self.y, x_bits: &[], y_bits: &[] }
    }

    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    pub fn last_y(&self) -> Option<Option<u64>> {
        (self.cycles > 0).then_some(self.y)
    }

    pub fn encode_key(&self, out: &mut Vec<u8>) {
        match &self.phase {
            Phase::InvReadOwn => out.push(0),
            Phase::AwaitReadOwn => out.push(1),
            Phase::Scan(run) => {
                out.push(2);
                run.encode_key(out);
            }
            Phase::CsEnter => out.push(3),
            Phase::CsExit => out.push(4),
            Phase::Write(run) => {
                out.push(5);
                run.encode_key(out);
            }
        }
        out.extend_from_slice(&self.x.to_le_bytes());
        out.extend_from_slice(&self.y.map_or(u64::MAX, |v| v).to_le_bytes());
    }
}
