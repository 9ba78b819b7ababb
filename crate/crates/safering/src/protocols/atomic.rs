//! Increment-and-copy token ring over one atomic cell per link. Processor
//! 0 advances its value when the predecessor echo matches; everyone else
//! copies a differing predecessor value. Either guard is the token.

use crate::config::LocalsInit;
use crate::ids::RegId;
use crate::machine::{Action, LocalsView};
use crate::trace::OpKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicMachine {
    is_origin: bool,
    token_domain: u64,
    own: RegId,
    pred: RegId,
    x: u64,
    y: u64,
    phase: Phase,
    cycles: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Phase {
    InvRead,
    AwaitRead,
    CsEnter,
    CsExit,
    InvWrite,
    AwaitWrite,
}

impl AtomicMachine {
    pub fn new(
        is_origin: bool,
        token_domain: u64,
        own: RegId,
        pred: RegId,
        init: &LocalsInit,
    ) -> AtomicMachine {
        AtomicMachine {
            is_origin,
            token_domain,
            own,
            pred,
            x: init.x % token_domain,
            y: init.y % token_domain,
            phase: Phase::InvRead,
            cycles: 0,
        }
    }

    pub fn next_action(&mut self) -> Action {
        match self.phase {
            Phase::InvRead => {
                self.phase = Phase::AwaitRead;
                Action::Invoke { reg: self.pred, kind: OpKind::Read, arg: None }
            }
            Phase::CsEnter => {
                self.phase = Phase::CsExit;
                Action::CsEnter
            }
            Phase::CsExit => {
                self.phase = Phase::InvWrite;
                Action::CsExit
            }
            Phase::InvWrite => {
                self.phase = Phase::AwaitWrite;
                Action::Invoke { reg: self.own, kind: OpKind::Write, arg: Some(self.x) }
            }
            Phase::AwaitRead | Phase::AwaitWrite => {
                unreachable!("atomic machine asked for an action while waiting")
            }
        }
    }

    pub fn on_response(&mut self, value: u64) {
        match self.phase {
            Phase::AwaitRead => {
                self.y = value;
                self.cycles += 1;
                let token = if self.is_origin { self.y == self.x } else { self.y != self.x };
                if token {
                    self.x = if self.is_origin {
                        (self.x + 1) % self.token_domain
                    } else {
                        self.y
                    };
                    self.phase = Phase::CsEnter;
                } else {
                    self.phase = Phase::InvWrite;
                }
            }
            Phase::AwaitWrite => self.phase = Phase::InvRead,
            p => unreachable!("atomic response in phase {p:?}"),
        }
    }

    pub fn next_is_hl_end(&self) -> bool {
        false
    }

    pub fn locals(&self) -> LocalsView<'_> {
        LocalsView { x: self.x, y: Some(self.y), x_bits: &[], y_bits: &[] }
    }

    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    pub fn last_y(&self) -> Option<Option<u64>> {
        (self.cycles > 0).then_some(Some(self.y))
    }

    pub fn encode_key(&self, out: &mut Vec<u8>) {
        out.push(match self.phase {
            Phase::InvRead => 0,
            Phase::AwaitRead => 1,
            Phase::CsEnter => 2,
            Phase::CsExit => 3,
            Phase::InvWrite => 4,
            Phase::AwaitWrite => 5,
        });
        out.extend_from_slice(&self.x.to_le_bytes());
        out.extend_from_slice(&self.y.to_le_bytes());
    }
}
