//! State predicates for the gray-coded ring's convergence phases. The ring
//! first reaches a *flash*: every most-significant bit, in registers and in
//! every processor's variables, is zero at once. From there the origin's
//! increments drag the ring to a *home* state where every link spells the
//! same codeword and every processor's shadow copy agrees, after which only
//! legitimate configurations are reachable.

use crate::config::{RingLayout, Variant};
use crate::protocols::gray_code::gray_decode_bits;
use crate::sim::{RunMonitor, RunState};
use crate::trace::HlKind;

fn gray_layout(rs: &RunState) -> Option<&RingLayout> {
    rs.shape().ring.as_ref().filter(|l| l.variant == Variant::Gray)
}

/// Every most-significant bit is zero: both halves of each MSB pair as
/// committed, each processor's read shadow, the MSB of its token value, and
/// the MSB of its predecessor sample where one is held. Pending MSB writes
/// need no separate check: the MSB pair is written last, from the shadow
/// this already constrains.
pub fn is_flash_state(rs: &RunState) -> bool {
    let Some(layout) = gray_layout(rs) else { return false };
    let msb_shift = layout.k_bits - 1;
    for pair in &layout.pairs {
        if pair.bit == Some(0)
            && (rs.committed(pair.a) != 0 || rs.committed(pair.b) != 0)
        {
            return false;
        }
    }
    rs.machines().iter().all(|m| {
        let l = m.locals();
        l.x_bits[0] == 0
            && (l.x >> msb_shift) & 1 == 0
            && l.y_bits[0].is_none_or(|b| b == 0)
            && l.y.is_none_or(|y| (y >> msb_shift) & 1 == 0)
    })
}

/// The single codeword every link spells coherently and every processor's
/// token value and shadow agree with, if there is one. Predecessor samples
/// are deliberately not constrained: the origin consumes its sample and
/// increments in the same indivisible step, so a state where the sample
/// still equals the common value has no duration.
pub fn home_value(rs: &RunState) -> Option<u64> {
    let layout = gray_layout(rs)?;
    let k = layout.k_bits as usize;
    let mut word = vec![0u8; k];
    for (j, link) in layout.links.iter().enumerate() {
        let mut bits = vec![0u8; k];
        for &pid in &link.pairs {
            let p = layout.pair(pid);
            let a = rs.committed(p.a);
            if a != rs.committed(p.b) {
                return None;
            }
            bits[p.bit.expect("gray pairs carry bit positions") as usize] = a as u8;
        }
        if j == 0 {
            word = bits;
        } else if word != bits {
            return None;
        }
    }
    let v = gray_decode_bits(&word);
    rs.machines()
        .iter()
        .all(|m| {
            let l = m.locals();
            l.x == v && l.x_bits == word
        })
        .then_some(v)
}

/// Every pair either agrees on both halves or is mid-rewrite by its owner.
pub fn all_pairs_coherent(rs: &RunState) -> bool {
    rs.shape().pairs().iter().all(|pair| {
        rs.committed(pair.a) == rs.committed(pair.b)
            || matches!(
                rs.open_hl(pair.writer),
                Some((_, p, HlKind::DupWrite { .. })) if p == pair.id
            )
    })
}

/// Watches a gray run for its first flash, the first home state at or after
/// it, and any incoherent pair after that.
#[derive(Debug, Clone, Default)]
pub struct GrayPhaseMonitor {
    pub first_flash: Option<u64>,
    /// First home state observed at or after the flash.
    pub first_home: Option<u64>,
    pub last_incoherent: Option<u64>,
}

impl GrayPhaseMonitor {
    pub fn new() -> GrayPhaseMonitor {
        GrayPhaseMonitor::default()
    }
}

impl RunMonitor for GrayPhaseMonitor {
    fn after_slot(&mut self, rs: &RunState) {
        let t = rs.now();
        if self.first_flash.is_none() {
            if is_flash_state(rs) {
                self.first_flash = Some(t);
            }
        } else if self.first_home.is_none() && home_value(rs).is_some() {
            self.first_home = Some(t);
        }
        if !all_pairs_coherent(rs) {
            self.last_incoherent = Some(t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{InitPolicy, LocalsInit, RingConfig, Variant};
    use crate::protocols::gray_code::gray_encode;
    use crate::sim::{NullSink, RunState};

    /// Gray ring with every link spelling `word(value)` and every
    /// processor's variables agreeing, except as overridden.
    fn explicit_gray(n: u16, value: u64, tweak: impl FnOnce(&mut Vec<u64>, &mut Vec<LocalsInit>, &RingLayout)) -> RunState {
        let mut config = RingConfig::new(Variant::Gray, n);
        let layout = config.layout();
        let k = layout.k_bits as usize;
        let word = gray_encode(value, k).unwrap();
        let mut registers = vec![0u64; layout.cells.len()];
        for p in &layout.pairs {
            let bit = u64::from(word.bit(p.bit.unwrap() as usize));
            registers[p.a.index()] = bit;
            registers[p.b.index()] = bit;
        }
        let mut locals = vec![
            LocalsInit {
                x: value,
                y: value,
                x_bits: word.bits.clone(),
                y_bits: word.bits.clone(),
            };
            n as usize
        ];
        tweak(&mut registers, &mut locals, &layout);
        config.init = InitPolicy::Explicit { registers, locals };
        RunState::new_ring(&config).unwrap()
    }

    #[test]
    fn all_zero_state_is_flash_and_home() {
        let rs = explicit_gray(2, 0, |_, _, _| {});
        assert!(is_flash_state(&rs));
        assert_eq!(home_value(&rs), Some(0));
        assert!(all_pairs_coherent(&rs));
    }

    #[test]
    fn uniform_nonzero_msb_is_home_but_not_flash() {
        // 5 = 101b: its codeword has the most significant bit set.
        let rs = explicit_gray(2, 5, |_, _, _| {});
        assert!(!is_flash_state(&rs));
        assert_eq!(home_value(&rs), Some(5));
    }

    #[test]
    fn single_raised_msb_half_breaks_both() {
        let rs = explicit_gray(2, 0, |regs, _, layout| {
            let msb = layout.pairs.iter().find(|p| p.bit == Some(0)).unwrap();
            regs[msb.a.index()] = 1;
        });
        assert!(!is_flash_state(&rs));
        assert_eq!(home_value(&rs), None);
        // No write is open over the mismatched pair.
        assert!(!all_pairs_coherent(&rs));
    }

    #[test]
    fn stale_processor_shadow_spoils_home() {
        let rs = explicit_gray(2, 0, |_, locals, _| {
            locals[1].x = 1;
        });
        assert_eq!(home_value(&rs), None);
        // The stale value's bits are still all zero, so flash stands.
        assert!(is_flash_state(&rs));
    }

    #[test]
    fn raised_sample_msb_spoils_flash_only() {
        let rs = explicit_gray(2, 0, |_, locals, _| {
            locals[1].y = 4; // 100b: most significant sample bit set
            locals[1].y_bits = vec![1, 0, 0];
        });
        assert!(!is_flash_state(&rs));
        assert_eq!(home_value(&rs), Some(0));
    }

    #[test]
    fn arbitrary_run_flashes_then_homes() {
        let config = RingConfig {
            seed: 3,
            ..RingConfig::new(Variant::Gray, 2)
        };
        let mut rs = RunState::new_ring(&config).unwrap();
        let mut monitor = GrayPhaseMonitor::new();
        rs.run_until(60_000, &mut NullSink, &mut monitor).unwrap();
        let flash = monitor.first_flash.expect("no flash within budget");
        let home = monitor.first_home.expect("no home after the flash");
        assert!(flash <= home);
        if let Some(t) = monitor.last_incoherent {
            assert!(t < home, "incoherent pair at {t} after home at {home}");
        }
    }
}
