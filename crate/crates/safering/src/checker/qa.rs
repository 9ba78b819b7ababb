//! Classifies every completed scan-read against the writer's dup-write
//! order on its pair: the latest preceding argument is *old*, an overlapping
//! argument is *concurrent*, a busy result is *bottom*, and anything else is
//! *contaminated*. Also watches for new-old inversions across scans.
//!
//! The tracker keys off the begin/end marker events. Markers sit one tick
//! outside their first/last child operation within the same slot, and no
//! foreign event can land in that one-tick gap, so precedence and overlap
//! between high-level operations come out identical to the child-span
//! ordering.

use super::{CheckResult, Verdict, Witness};
use crate::config::PairInfo;
use crate::ids::{HlId, OpId, PairId, Pid, RegId};
use crate::sim::TraceSink;
use crate::time::VirtualTime;
use crate::trace::{HlKind, HlOutcome, OpKind, Trace};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanClass {
    /// Equal to the latest dup-write argument that preceded the scan, or to
    /// either initial half when no dup-write preceded it.
    Old,
    /// Equal to the argument of a dup-write overlapping the scan.
    Concurrent,
    /// The busy result.
    Bottom,
    /// A definite value matching no preceding or overlapping argument and
    /// no applicable initial value.
    Contaminated,
}

/// One classified scan, in completion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanEvent {
    pub hl: HlId,
    pub pair: PairId,
    pub pid: Pid,
    pub end: u64,
    pub value: Option<u64>,
    pub class: ScanClass,
    /// Number of dup-writes whose span overlapped this scan.
    pub overlaps: u32,
    pub k: u16,
    /// Every write index this result could stand for sits strictly below an
    /// index already returned by an earlier-completed scan.
    pub inversion: bool,
}

/// The value a scan falls back to when no overlapping write explains it.
/// Until the first dup-write completes, both initial halves count, at write
/// index 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OldRef {
    Initial(u64, u64),
    Write(u32, u64),
}

impl OldRef {
    fn matches(&self, v: u64) -> Option<u32> {
        match *self {
            OldRef::Initial(a, b) => (v == a || v == b).then_some(0),
            OldRef::Write(i, arg) => (v == arg).then_some(i),
        }
    }
}

#[derive(Debug, Clone)]
struct OpenScan {
    hl: HlId,
    pid: Pid,
    k: u16,
    /// Largest min-plausible-index among scans completed before this one
    /// began; a result whose max plausible index dips below it is inverted.
    floor: u32,
    old: OldRef,
    /// (write index, argument) of every dup-write overlapping so far.
    concurrent: Vec<(u32, u64)>,
}

/// Classification state for one register pair.
#[derive(Debug, Clone)]
pub struct PairTracker {
    writes_done: u32,
    last_complete: OldRef,
    open_write: Option<(HlId, u32, u64)>,
    open_scans: Vec<OpenScan>,
    max_min_index: u32,
    pub scans: u32,
    pub bottoms: u32,
    pub contaminated: u32,
    pub inversions: u32,
}

impl PairTracker {
    fn new(init_a: u64, init_b: u64) -> PairTracker {
        PairTracker {
            writes_done: 0,
            last_complete: OldRef::Initial(init_a, init_b),
            open_write: None,
            open_scans: Vec::new(),
            max_min_index: 0,
            scans: 0,
            bottoms: 0,
            contaminated: 0,
            inversions: 0,
        }
    }

    pub fn dup_writes(&self) -> u32 {
        self.writes_done
    }

    fn begin_write(&mut self, hl: HlId, val: u64) {
        debug_assert!(self.open_write.is_none(), "pairs have a single writer");
        let idx = self.writes_done + 1;
        self.open_write = Some((hl, idx, val));
        for scan in &mut self.open_scans {
            scan.concurrent.push((idx, val));
        }
    }

    fn end_write(&mut self) {
        let (_, idx, val) = self.open_write.take().expect("write end without begin");
        self.writes_done = idx;
        self.last_complete = OldRef::Write(idx, val);
    }

    fn begin_scan(&mut self, hl: HlId, pid: Pid, k: u16) {
        self.open_scans.push(OpenScan {
            hl,
            pid,
            k,
            floor: self.max_min_index,
            old: self.last_complete,
            concurrent: self.open_write.iter().map(|&(_, i, v)| (i, v)).collect(),
        });
    }

    fn end_scan(&mut self, hl: HlId, end: u64, value: Option<u64>, pair: PairId) -> ScanEvent {
        let at = self
            .open_scans
            .iter()
            .position(|s| s.hl == hl)
            .expect("scan end without begin");
        let scan = self.open_scans.swap_remove(at);
        self.scans += 1;
        let overlaps = scan.concurrent.len() as u32;
        let (class, inversion) = match value {
            None => {
                self.bottoms += 1;
                (ScanClass::Bottom, false)
            }
            Some(v) => {
                let old_idx = scan.old.matches(v);
                let mut plausible: Vec<u32> = old_idx.into_iter().collect();
                plausible.extend(
                    scan.concurrent.iter().filter(|&&(_, a)| a == v).map(|&(i, _)| i),
                );
                match (plausible.iter().min(), plausible.iter().max()) {
                    (Some(&lo), Some(&hi)) => {
                        let inversion = hi < scan.floor;
                        if inversion {
                            self.inversions += 1;
                        }
                        self.max_min_index = self.max_min_index.max(lo);
                        let class = if old_idx.is_some() {
                            ScanClass::Old
                        } else {
                            ScanClass::Concurrent
                        };
                        (class, inversion)
                    }
                    _ => {
                        self.contaminated += 1;
                        (ScanClass::Contaminated, false)
                    }
                }
            }
        };
        ScanEvent {
            hl,
            pair,
            pid: scan.pid,
            end,
            value,
            class,
            overlaps,
            k: scan.k,
            inversion,
        }
    }

    /// Everything that shapes how future scans classify, for exploration
    /// dedup. Pure tallies (scans, bottoms, inversions) stay out; the
    /// contaminated count stays in because the bound being checked is a
    /// per-branch running total.
    fn encode_key(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.writes_done.to_le_bytes());
        encode_old(&self.last_complete, out);
        match self.open_write {
            None => out.push(0),
            Some((_, i, v)) => {
                out.push(1);
                out.extend_from_slice(&i.to_le_bytes());
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.max_min_index.to_le_bytes());
        out.extend_from_slice(&self.contaminated.to_le_bytes());
        out.push(self.open_scans.len() as u8);
        // At most one scan is open per pid, so pid order canonicalizes.
        let mut order: Vec<usize> = (0..self.open_scans.len()).collect();
        order.sort_by_key(|&i| self.open_scans[i].pid.0);
        for i in order {
            let s = &self.open_scans[i];
            out.extend_from_slice(&s.pid.0.to_le_bytes());
            out.extend_from_slice(&s.k.to_le_bytes());
            out.extend_from_slice(&s.floor.to_le_bytes());
            encode_old(&s.old, out);
            out.push(s.concurrent.len() as u8);
            for (i, v) in &s.concurrent {
                out.extend_from_slice(&i.to_le_bytes());
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

fn encode_old(old: &OldRef, out: &mut Vec<u8>) {
    match *old {
        OldRef::Initial(a, b) => {
            out.push(0);
            out.extend_from_slice(&a.to_le_bytes());
            out.extend_from_slice(&b.to_le_bytes());
        }
        OldRef::Write(i, v) => {
            out.push(1);
            out.extend_from_slice(&i.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Per-pair classification fed by trace events, usable online as a run's
/// sink or offline via [`scan_trace`]. With `keep_events` every completed
/// scan is retained; otherwise only contaminated or inverted ones are.
#[derive(Debug, Clone)]
pub struct QaSink {
    trackers: Vec<PairTracker>,
    pub events: Vec<ScanEvent>,
    keep_events: bool,
}

impl QaSink {
    /// `pairs` must be indexed by pair id, `initial` by register id.
    pub fn new(pairs: &[PairInfo], initial: &[u64], keep_events: bool) -> QaSink {
        let trackers = pairs
            .iter()
            .map(|p| PairTracker::new(initial[p.a.index()], initial[p.b.index()]))
            .collect();
        QaSink { trackers, events: Vec::new(), keep_events }
    }

    pub fn tracker(&self, pair: PairId) -> &PairTracker {
        &self.trackers[pair.index()]
    }

    pub fn trackers(&self) -> &[PairTracker] {
        &self.trackers
    }

    pub fn take_events(&mut self) -> Vec<ScanEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn contaminated_total(&self) -> u64 {
        self.trackers.iter().map(|t| u64::from(t.contaminated)).sum()
    }

    pub fn inversions_total(&self) -> u64 {
        self.trackers.iter().map(|t| u64::from(t.inversions)).sum()
    }

    /// Dedup key over every tracker; drained events are history and stay
    /// out.
    pub fn encode_key(&self, out: &mut Vec<u8>) {
        for t in &self.trackers {
            t.encode_key(out);
        }
    }
}

impl TraceSink for QaSink {
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

    fn on_hl_begin(&mut self, _: VirtualTime, pid: Pid, hl: HlId, pair: PairId, kind: HlKind) {
        let t = &mut self.trackers[pair.index()];
        match kind {
            HlKind::DupWrite { val } => t.begin_write(hl, val),
            HlKind::ScanRead { k } => t.begin_scan(hl, pid, k),
        }
    }

    fn on_hl_end(&mut self, tick: VirtualTime, _: Pid, hl: HlId, outcome: HlOutcome) {
        // End markers do not name their pair; find the op's owner.
        match outcome {
            HlOutcome::DupWrite { .. } => {
                let t = self
                    .trackers
                    .iter_mut()
                    .find(|t| t.open_write.is_some_and(|(h, _, _)| h == hl))
                    .expect("write end without begin");
                t.end_write();
            }
            HlOutcome::ScanRead { value } => {
                let pair = self
                    .trackers
                    .iter()
                    .position(|t| t.open_scans.iter().any(|s| s.hl == hl))
                    .expect("scan end without begin");
                let pair = PairId(pair as u32);
                let ev = self.trackers[pair.index()].end_scan(hl, tick.0, value, pair);
                if self.keep_events || ev.class == ScanClass::Contaminated || ev.inversion {
                    self.events.push(ev);
                }
            }
        }
    }
}

/// Feed a completed trace through a fresh [`QaSink`] and return it with all
/// scan events kept.
pub fn scan_trace(trace: &Trace) -> QaSink {
    let (pairs, initial) = super::setup_pairs(&trace.meta);
    let mut sink = QaSink::new(&pairs, &initial, true);
    super::feed_hl_events(trace, &mut sink);
    sink
}

pub fn pair_verdict(sink: &QaSink, pair: PairId) -> Verdict {
    let t = sink.tracker(pair);
    let mut counters = BTreeMap::new();
    counters.insert("dup_writes".into(), u64::from(t.dup_writes()));
    counters.insert("scans".into(), u64::from(t.scans));
    counters.insert("bottoms".into(), u64::from(t.bottoms));
    counters.insert("contaminated".into(), u64::from(t.contaminated));
    counters.insert("inversions".into(), u64::from(t.inversions));
    let bad: Vec<&ScanEvent> = sink
        .events
        .iter()
        .filter(|e| e.pair == pair && (e.class == ScanClass::Contaminated || e.inversion))
        .collect();
    let witness = bad.first().map(|first| Witness {
        op_ids: bad.iter().map(|e| e.hl.0).collect(),
        tick_range: Some((first.end, bad.last().unwrap().end)),
        detail: format!(
            "scan {} returned {:?} classified {:?}{}",
            first.hl.0,
            first.value,
            first.class,
            if first.inversion { " (inverted)" } else { "" }
        ),
    });
    Verdict {
        property: "quasi-atomicity".into(),
        result: if t.contaminated == 0 && t.inversions == 0 {
            CheckResult::Pass
        } else {
            CheckResult::Fail
        },
        witness,
        counters,
    }
}

/// Pass iff every definite scan on `pair` classified old or concurrent and
/// no scan inverted an earlier one.
pub fn check_quasi_atomicity(trace: &Trace, pair: PairId) -> Verdict {
    pair_verdict(&scan_trace(trace), pair)
}

/// Number of contaminated scans on `pair` over the whole trace.
pub fn count_contaminated(trace: &Trace, pair: PairId) -> u64 {
    u64::from(scan_trace(trace).tracker(pair).contaminated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::testutil::scripted;
    use crate::config::{ScenarioSetup, ScriptOp};

    fn run_scripted(
        setup: &ScenarioSetup,
        initial: &[u64],
        schedule: &[u16],
        values: &[u64],
    ) -> QaSink {
        scripted(setup, initial, schedule, values).1
    }

    fn dup(val: u64) -> ScriptOp {
        ScriptOp::DupWrite { pair: PairId(0), val }
    }

    fn scan(k: u16) -> ScriptOp {
        ScriptOp::ScanRead { pair: PairId(0), k }
    }

    #[test]
    fn scan_after_write_is_old() {
        let setup = ScenarioSetup::one_pair(8, vec![dup(6)], vec![scan(2)]);
        // Writer runs to completion (two pre-reads, two half-writes, eight
        // slots), then the reader's four exact reads all see 6.
        let sched: Vec<u16> = [0; 8].into_iter().chain([1; 8]).collect();
        let sink = run_scripted(&setup, &[4, 4], &sched, &[]);
        assert_eq!(sink.events.len(), 1);
        let ev = sink.events[0];
        assert_eq!(ev.value, Some(6));
        assert_eq!(ev.class, ScanClass::Old);
        assert_eq!(ev.overlaps, 0);
        assert!(!ev.inversion);
    }

    #[test]
    fn initial_halves_both_count_as_old() {
        let setup = ScenarioSetup::one_pair(4, vec![], vec![scan(1)]);
        let sink = run_scripted(&setup, &[3, 3], &[1; 4], &[]);
        assert_eq!(sink.events[0].class, ScanClass::Old);
        assert_eq!(sink.events[0].value, Some(3));
    }

    #[test]
    fn mismatched_initial_halves_scan_bottom() {
        let setup = ScenarioSetup::one_pair(4, vec![], vec![scan(2)]);
        let sink = run_scripted(&setup, &[0, 1], &[1; 8], &[]);
        assert_eq!(sink.events[0].class, ScanClass::Bottom);
        assert_eq!(sink.events[0].value, None);
    }

    #[test]
    fn torn_scan_across_write_is_bottom_with_overlap() {
        let setup = ScenarioSetup::one_pair(8, vec![dup(7)], vec![scan(2)]);
        // First read sees 3 exactly, then the whole write of 7 lands, so
        // the remaining three reads see 7: no unanimity.
        let sched: Vec<u16> = [1, 1].into_iter().chain([0; 8]).chain([1; 6]).collect();
        let sink = run_scripted(&setup, &[3, 3], &sched, &[]);
        let ev = sink.events[0];
        assert_eq!(ev.class, ScanClass::Bottom);
        assert_eq!(ev.overlaps, 1);
    }

    #[test]
    fn overlapping_write_value_is_concurrent() {
        let setup = ScenarioSetup::one_pair(8, vec![dup(7)], vec![scan(2)]);
        let mut sched = vec![0u16; 4]; // write pre-reads see (3, 3)
        sched.push(0); // half a write invoked
        sched.push(1); // scan begins; its first read is disturbed
        sched.push(0); // half a write responds
        sched.push(1); // disturbed read resolves (adversary says 7)
        sched.extend([0; 2]); // half b written, dup-write closes
        sched.extend([1; 6]); // reads b, a, b all see committed 7
        let sink = run_scripted(&setup, &[3, 3], &sched, &[7]);
        let ev = sink.events[0];
        assert_eq!(ev.value, Some(7));
        assert_eq!(ev.class, ScanClass::Concurrent);
        assert_eq!(ev.overlaps, 1);
        assert!(!ev.inversion);
    }

    #[test]
    fn stale_value_under_cover_of_later_write_is_contaminated() {
        // Writes of 5 then 6 complete before the scan, so 6 is old and an
        // overlapping write of 7 is concurrent. The adversary answering 5
        // to both disturbed reads resurrects a twice-overwritten value.
        let setup =
            ScenarioSetup::one_pair(8, vec![dup(5), dup(6), dup(7)], vec![scan(1)]);
        let mut sched = vec![0u16; 16]; // writes of 5 and 6 complete
        sched.extend([0; 5]); // third write pre-reads, half a invoked
        sched.extend([1, 1]); // scan read a disturbed
        sched.extend([0, 0]); // half a responds, half b invoked
        sched.extend([1, 1]); // scan read b disturbed
        let sink = run_scripted(&setup, &[4, 4], &sched, &[5, 5]);
        let ev = sink.events[0];
        assert_eq!(ev.value, Some(5));
        assert_eq!(ev.class, ScanClass::Contaminated);
        assert_eq!(ev.overlaps, 1);
        assert_eq!(sink.contaminated_total(), 1);
        assert_eq!(sink.inversions_total(), 0);

        // Same interleaving but the adversary answers 6: that is the
        // latest completed write, hence old, not contaminated.
        let setup2 =
            ScenarioSetup::one_pair(8, vec![dup(5), dup(6), dup(7)], vec![scan(1)]);
        let mut sched2 = vec![0u16; 16];
        sched2.extend([0; 5]);
        sched2.extend([1, 1]);
        sched2.extend([0, 0]);
        sched2.extend([1, 1]);
        let sink2 = run_scripted(&setup2, &[4, 4], &sched2, &[6, 6]);
        assert_eq!(sink2.events[0].class, ScanClass::Old);
        assert_eq!(sink2.contaminated_total(), 0);
    }

    #[test]
    fn new_then_old_across_scans_is_inverted() {
        // Scan 1 returns the second write's value while that write is still
        // open; scan 2 begins before the second write closes, so the first
        // write's value is still its old reference, and a third write's
        // cover lets the adversary hand it back: old per se, but strictly
        // before what an earlier scan already returned.
        let setup = ScenarioSetup::one_pair(
            8,
            vec![dup(5), dup(6), dup(7)],
            vec![scan(1), scan(1)],
        );
        let mut sched = vec![1u16]; // scan 1 begins, read a pending
        sched.extend([0; 8]); // write of 5 completes (read a now disturbed)
        sched.extend([0; 5]); // write of 6 pre-reads, half a invoked
        sched.extend([1, 1]); // read a resolves 6, read b pending
        sched.extend([0, 0]); // half a responds, half b invoked
        sched.push(1); // read b resolves 6: scan 1 returns 6
        sched.push(1); // scan 2 begins while the write of 6 is still open
        sched.push(0); // half b responds, write of 6 closes
        sched.extend([0; 5]); // write of 7 pre-reads, half a invoked
        sched.extend([1, 1]); // scan 2 read a resolves 5
        sched.extend([0, 0]); // half a responds, half b invoked
        sched.push(1); // scan 2 read b resolves 5
        sched.push(0); // half b responds, write of 7 closes
        let sink = run_scripted(&setup, &[3, 3], &sched, &[6, 6, 5, 5]);
        assert_eq!(sink.events.len(), 2);
        let first = sink.events[0];
        assert_eq!(first.value, Some(6));
        assert_eq!(first.class, ScanClass::Concurrent);
        assert!(!first.inversion);
        let second = sink.events[1];
        assert_eq!(second.value, Some(5));
        assert_eq!(second.class, ScanClass::Old);
        assert!(second.inversion, "write 1's value after a scan returned write 2's");
        assert_eq!(sink.inversions_total(), 1);
        assert_eq!(sink.contaminated_total(), 0);
    }
}
