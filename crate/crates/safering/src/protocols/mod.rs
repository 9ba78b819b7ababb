//! Ring protocol step machines and the dispatch wrapper the driver runs.

pub mod atomic;
pub mod gray;
pub mod gray_code;
pub mod two_reg;

use crate::config::{LocalsInit, RingLayout, ScenarioSetup, Variant};
use crate::machine::{Action, LocalsView, ScriptMachine};
use atomic::AtomicMachine;
use gray::GrayMachine;
use two_reg::TwoRegMachine;

/// One processor's step machine, whichever protocol it runs.
#[derive(Debug, Clone, PartialEq)]
pub enum Machine {
    Atomic(AtomicMachine),
    TwoReg(TwoRegMachine),
    Gray(GrayMachine),
    Script(ScriptMachine),
}

impl Machine {
    pub fn next_action(&mut self) -> Action {
        match self {
            Machine::Atomic(m) => m.next_action(),
            Machine::TwoReg(m) => m.next_action(),
            Machine::Gray(m) => m.next_action(),
            Machine::Script(m) => m.next_action(),
        }
    }

    pub fn on_response(&mut self, value: u64) {
        match self {
            Machine::Atomic(m) => m.on_response(value),
            Machine::TwoReg(m) => m.on_response(value),
            Machine::Gray(m) => m.on_response(value),
            Machine::Script(m) => m.on_response(value),
        }
    }

    /// True when the next action closes a high-level op without touching a
    /// register; the driver folds that marker into the same schedule slot.
    pub fn next_is_hl_end(&self) -> bool {
        match self {
            Machine::Atomic(m) => m.next_is_hl_end(),
            Machine::TwoReg(m) => m.next_is_hl_end(),
            Machine::Gray(m) => m.next_is_hl_end(),
            Machine::Script(m) => m.next_is_hl_end(),
        }
    }

    /// Script machines run out of steps; ring machines never halt.
    pub fn halted(&self) -> bool {
        match self {
            Machine::Script(m) => m.halted(),
            _ => false,
        }
    }

    pub fn locals(&self) -> LocalsView<'_> {
        match self {
            Machine::Atomic(m) => m.locals(),
            Machine::TwoReg(m) => m.locals(),
            Machine::Gray(m) => m.locals(),
            Machine::Script(m) => m.locals(),
        }
    }

    /// Completed guard evaluations (ring) or completed scans (script).
    pub fn cycles(&self) -> u64 {
        match self {
            Machine::Atomic(m) => m.cycles(),
            Machine::TwoReg(m) => m.cycles(),
            Machine::Gray(m) => m.cycles(),
            Machine::Script(m) => m.cycles(),
        }
    }

    /// Outcome of the most recent completed predecessor read, if any.
    pub fn last_y(&self) -> Option<Option<u64>> {
        match self {
            Machine::Atomic(m) => m.last_y(),
            Machine::TwoReg(m) => m.last_y(),
            Machine::Gray(m) => m.last_y(),
            Machine::Script(m) => m.last_y(),
        }
    }

    pub fn encode_key(&self, out: &mut Vec<u8>) {
        match self {
            Machine::Atomic(m) => {
                out.push(0);
                m.encode_key(out);
            }
            Machine::TwoReg(m) => {
                out.push(1);
                m.encode_key(out);
            }
            Machine::Gray(m) => {
                out.push(2);
                m.encode_key(out);
            }
            Machine::Script(m) => {
                out.push(3);
                m.encode_key(out);
            }
        }
    }
}

/// Instantiate one machine per ring position from a resolved layout.
pub fn build_ring_machines(layout: &RingLayout, locals: &[LocalsInit]) -> Vec<Machine> {
    let n = layout.n as usize;
    assert_eq!(locals.len(), n);
    (0..n)
        .map(|i| {
            let is_origin = i == 0;
            let own = &layout.links[i];
            let pred = &layout.links[(i + n - 1) % n];
            match layout.variant {
                Variant::Atomic => Machine::Atomic(AtomicMachine::new(
                    is_origin,
                    layout.token_domain,
                    own.cell.expect("atomic links carry a cell"),
                    pred.cell.expect("atomic links carry a cell"),
                    &locals[i],
                )),
                Variant::TwoReg => Machine::TwoReg(TwoRegMachine::new(
                    is_origin,
                    layout.token_domain,
                    layout.phi,
                    *layout.pair(own.pairs[0]),
                    *layout.pair(pred.pairs[0]),
                    &locals[i],
                )),
                Variant::Gray => Machine::Gray(GrayMachine::new(
                    is_origin,
                    layout.token_domain,
                    own.pairs.iter().map(|&p| *layout.pair(p)).collect(),
                    pred.pairs.iter().map(|&p| *layout.pair(p)).collect(),
                    &locals[i],
                )),
            }
        })
        .collect()
}

/// Instantiate the script machines of a register-level scenario.
pub fn build_scenario_machines(setup: &ScenarioSetup) -> Vec<Machine> {
    setup
        .programs
        .iter()
        .map(|prog| Machine::Script(ScriptMachine::new(prog, &setup.pairs)))
        .collect()
}

/// Token predicate over one committed value per link, index i holding the
/// value processor i has published toward its successor. Position 0 holds
/// the token when its inbound value matches its own; everyone else holds
/// it on a mismatch.
pub fn token_holders(link_values: &[u64]) -> Vec<bool> {
    let n = link_values.len();
    (0..n)
        .map(|i| {
            let inbound = link_values[(i + n - 1) % n];
            let own = link_values[i];
            if i == 0 {
                inbound == own
            } else {
                inbound != own
            }
        })
        .collect()
}

/// Holder count without the allocation; same predicate as
/// [`token_holders`].
pub fn token_holder_count(link_values: &[u64]) -> usize {
    let n = link_values.len();
    (0..n)
        .filter(|&i| {
            let inbound = link_values[(i + n - 1) % n];
            (inbound == link_values[i]) == (i == 0)
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn holders(vals: &[u64]) -> Vec<usize> {
        token_holders(vals)
            .iter()
            .enumerate()
            .filter_map(|(i, &h)| h.then_some(i))
            .collect()
    }

    #[test]
    fn all_equal_gives_origin_the_token() {
        assert_eq!(holders(&[5, 5, 5]), vec![0]);
        assert_eq!(holders(&[0, 0, 0, 0, 0]), vec![0]);
    }

    #[test]
    fn single_boundary_gives_one_holder() {
        // Value 7 has propagated to positions 0 and 1; position 2 still
        // publishes the old 6, so position 2 owns the move.
        assert_eq!(holders(&[7, 7, 6]), vec![2]);
        assert_eq!(holders(&[7, 6, 6]), vec![1]);
    }

    #[test]
    fn alternating_values_give_many_holders() {
        assert_eq!(holders(&[1, 2, 1, 2]), vec![1, 2, 3]);
    }

    proptest! {
        #[test]
        fn at_least_one_holder(vals in prop::collection::vec(0u64..8, 2..9)) {
            prop_assert!(token_holders(&vals).iter().any(|&h| h));
        }

        #[test]
        fn holder_count_is_odd_over_binary_values(vals in prop::collection::vec(0u64..2, 2..9)) {
            // With two possible values the ring has an even number of value
            // boundaries; non-origin holders mark boundaries and the origin
            // marks the absence of one at the seam, so the count is odd.
            let count = token_holders(&vals).iter().filter(|&&h| h).count();
            prop_assert_eq!(count % 2, 1);
        }
    }
}
