//! Token ring over one safe-register pair per gray-code bit. Pairs are
//! read most-significant-first with a two-sample scan each, and written
//! back least-significant-first, so the most significant bit is the last
//! to change on the way out and the first to be trusted on the way in.

use crate::config::{LocalsInit, PairInfo};
use crate::machine::{Action, DupWriteRun, LocalsView, ScanReadRun};
use crate::protocols::gray_code::{gray_decode_bits, gray_encode};
use crate::trace::OpKind;
use serde::{Deserialize, Serialize};

/// Scans per bit pair; two samples already tolerate the single in-flight
/// dup-write a one-bit change can produce.
pub const GRAY_SCAN_WIDTH: u16 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrayMachine {
    is_origin: bool,
    token_domain: u64,
    k_bits: usize,
    /// Own and predecessor pairs in bit order, index 0 = MSB.
    own: Vec<PairInfo>,
    pred: Vec<PairInfo>,
    x: u64,
    y: Option<u64>,
    x_bits: Vec<u8>,
    y_bits: Vec<Option<u8>>,
    phase: Phase,
    cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
enum Phase {
    InvReadOwn(usize),
    AwaitReadOwn(usize),
    Scan(usize, ScanReadRun),
    CsEnter,
    CsExit,
    Write(usize, DupWriteRun),
}

impl GrayMachine {
    pub fn new(
        is_origin: bool,
        token_domain: u64,
        own: Vec<PairInfo>,
        pred: Vec<PairInfo>,
        init: &LocalsInit,
    ) -> GrayMachine {
        let k_bits = own.len();
        assert_eq!(pred.len(), k_bits);
        assert_eq!(u64::try_from(k_bits).unwrap(), token_domain.trailing_zeros() as u64);
        let mut x_bits = init.x_bits.clone();
        x_bits.resize(k_bits, 0);
        let y_bits = if init.y_bits.len() == k_bits {
            init.y_bits.iter().map(|&b| Some(b)).collect()
        } else {
            vec![Some(0); k_bits]
        };
        GrayMachine {
            is_origin,
            token_domain,
            k_bits,
            own,
            pred,
            x: init.x % token_domain,
            y: Some(init.y % token_domain),
            x_bits,
            y_bits,
            phase: Phase::InvReadOwn(0),
            cycles: 0,
        }
    }

    fn start_write_phase(&mut self) -> Phase {
        self.x_bits = gray_encode(self.x, self.k_bits).expect("x stays below K").bits;
        let last = self.k_bits - 1;
        Phase::Write(last, DupWriteRun::from_info(&self.own[last], u64::from(self.x_bits[last])))
    }

    fn after_scans(&mut self) {
        self.cycles += 1;
        self.y = if self.y_bits.iter().all(|b| b.is_some()) {
            let bits: Vec<u8> = self.y_bits.iter().map(|b| b.unwrap()).collect();
            Some(gray_decode_bits(&bits) % self.token_domain)
        } else {
            None
        };
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
            self.phase = self.start_write_phase();
        }
    }

    pub fn next_action(&mut self) -> Action {
        match &mut self.phase {
            Phase::InvReadOwn(i) => {
                let i = *i;
                let reg = self.own[i].a;
                self.phase = Phase::AwaitReadOwn(i);
                Action::Invoke { reg, kind: OpKind::Read, arg: None }
            }
            Phase::Scan(i, run) => {
                let i = *i;
                let action = run.next_action();
                if let Action::HlEnd { outcome } = action {
                    self.y_bits[i] = match outcome {
                        crate::trace::HlOutcome::ScanRead { value } => value.map(|v| v as u8),
                        _ => unreachable!(),
                    };
                    if i + 1 < self.k_bits {
                        self.phase = Phase::Scan(
                            i + 1,
                            ScanReadRun::from_info(&self.pred[i + 1], GRAY_SCAN_WIDTH),
                        );
                    } else {
                        self.after_scans();
                    }
                }
                action
            }
            Phase::CsEnter => {
                self.phase = Phase::CsExit;
                Action::CsEnter
            }
            Phase::CsExit => {
                self.phase = self.start_write_phase();
                Action::CsExit
            }
            Phase::Write(i, run) => {
                let i = *i;
                let action = run.next_action();
                if run.done() {
                    self.phase = if i > 0 {
                        Phase::Write(
                            i - 1,
                            DupWriteRun::from_info(&self.own[i - 1], u64::from(self.x_bits[i - 1])),
                        )
                    } else {
                        Phase::InvReadOwn(0)
                    };
                }
                action
            }
            Phase::AwaitReadOwn(_) => unreachable!("gray machine asked for an action while waiting"),
        }
    }

    pub fn on_response(&mut self, value: u64) {
        match &mut self.phase {
            Phase::AwaitReadOwn(i) => {
                let i = *i;
                self.x_bits[i] = value as u8;
                if i + 1 < self.k_bits {
                    self.phase = Phase::InvReadOwn(i + 1);
                } else {
                    self.x = gray_decode_bits(&self.x_bits) % self.token_domain;
                    self.phase =
                        Phase::Scan(0, ScanReadRun::from_info(&self.pred[0], GRAY_SCAN_WIDTH));
                }
            }
            Phase::Scan(_, run) => run.on_response(value),
            Phase::Write(_, run) => run.on_response(value),
            p => unreachable!("gray response in phase {p:?}"),
        }
    }

    pub fn next_is_hl_end(&self) -> bool {
        match &self.phase {
            Phase::Scan(_, run) => run.next_is_hl_end(),
            Phase::Write(_, run) => run.next_is_hl_end(),
            _ => false,
        }
    }

    pub fn locals(&self) -> LocalsView<'_> {
        LocalsView { x: self.x, y: self.y, x_bits: &self.x_bits, y_bits: &self.y_bits }
    }

    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    pub fn last_y(&self) -> Option<Option<u64>> {
        (self.cycles > 0).then_some(self.y)
    }

    pub fn encode_key(&self, out: &mut Vec<u8>) {
        match &self.phase {
            Phase::InvReadOwn(i) => {
                out.push(0);
                out.push(*i as u8);
            }
            Phase::AwaitReadOwn(i) => {
                out.push(1);
                out.push(*i as u8);
            }
            Phase::Scan(i, run) => {
                out.push(2);
                out.push(*i as u8);
                run.encode_key(out);
            }
            Phase::CsEnter => out.push(3),
            Phase::CsExit => out.push(4),
            Phase::Write(i, run) => {
                out.push(5);
                out.push(*i as u8);
                run.encode_key(out);
            }
        }
        out.extend_from_slice(&self.x.to_le_bytes());
        out.extend_from_slice(&self.y.map_or(u64::MAX, |v| v).to_le_bytes());
        out.extend_from_slice(&self.x_bits);
        for b in &self.y_bits {
            out.push(b.map_or(2, |v| v));
        }
    }
}
