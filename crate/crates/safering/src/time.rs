//! Virtual time and interval ordering.
//!
//! Every scheduler event occupies its own tick, so operation intervals have
//! strictly ordered endpoints and the relations below never tie-break.

use serde::{Deserialize, Serialize};

/// A discrete scheduler tick. Tick 0 is the initial configuration; events
/// start at tick 1 and every event gets a fresh tick.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct VirtualTime(pub u64);

impl VirtualTime {
    pub fn next(self) -> VirtualTime {
        VirtualTime(self.0 + 1)
    }
}

impl std::fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// A completed interval: `invoke <= respond` (equal only for degenerate
/// point spans built by checkers; real operations occupy two ticks).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub invoke: VirtualTime,
    pub respond: VirtualTime,
}

impl Span {
    pub fn new(invoke: VirtualTime, respond: VirtualTime) -> Span {
        assert!(invoke <= respond, "span endpoints out of order");
        Span { invoke, respond }
    }
}

/// `a` finishes before `b` starts.
pub fn precedes(a: Span, b: Span) -> bool {
    a.respond < b.invoke
}

/// Neither interval finishes before the other starts.
pub fn concurrent(a: Span, b: Span) -> bool {
    !precedes(a, b) && !precedes(b, a)
}

/// `a` precedes `b`, or they overlap with `a` starting first. With distinct
/// ticks this is exactly "a starts before b starts".
pub fn weak_precedes(a: Span, b: Span) -> bool {
    precedes(a, b) || (concurrent(a, b) && a.invoke < b.invoke)
}

/// `b` lies entirely within `a` (endpoints may coincide).
pub fn contains(a: Span, b: Span) -> bool {
    a.invoke <= b.invoke && b.respond <= a.respond
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn span(i: u64, r: u64) -> Span {
        Span::new(VirtualTime(i), VirtualTime(r))
    }

    #[test]
    fn precedes_requires_gap() {
        assert!(precedes(span(3, 9), span(12, 20)));
        assert!(!precedes(span(12, 20), span(3, 9)));
    }

    #[test]
    fn overlap_is_concurrent_both_ways() {
        let a = span(3, 14);
        let b = span(9, 22);
        assert!(concurrent(a, b));
        assert!(concurrent(b, a));
        assert!(!precedes(a, b));
    }

    #[test]
    fn weak_precedes_orders_concurrent_starts() {
        let a = span(3, 14);
        let b = span(9, 22);
        assert!(weak_precedes(a, b));
        assert!(!weak_precedes(b, a));
        // Strict precedence implies weak precedence.
        assert!(weak_precedes(span(1, 2), span(5, 6)));
    }

    #[test]
    fn contains_allows_shared_endpoints() {
        assert!(contains(span(5, 30), span(5, 12)));
        assert!(contains(span(5, 30), span(20, 30)));
        assert!(!contains(span(5, 30), span(4, 12)));
        assert!(!contains(span(5, 30), span(20, 31)));
    }

    // A chain a ⪯ b0 ≺ b1 ⪯ c pins an interval inside span(a.invoke,
    // c.respond) that begins inside b0 and ends inside b1.
    #[test]
    fn weak_chain_pins_contained_interval() {
        let a = span(1, 10);
        let b0 = span(4, 12);
        let b1 = span(15, 26);
        let c = span(20, 33);
        assert!(weak_precedes(a, b0));
        assert!(precedes(b0, b1));
        assert!(weak_precedes(b1, c));
        let outer = span(a.invoke.0, c.respond.0);
        let pinned = span(b0.invoke.0, b1.invoke.0);
        assert!(contains(outer, pinned));
        assert!(contains(b0, span(pinned.invoke.0, pinned.invoke.0)));
        assert!(contains(b1, span(pinned.respond.0, pinned.respond.0)));
    }

    proptest! {
        // With distinct endpoints exactly one of {a≺b, b≺a, concurrent} holds.
        #[test]
        fn trichotomy(raw in proptest::collection::btree_set(0u64..10_000, 4)) {
            let v: Vec<u64> = raw.into_iter().collect();
            for (ai, ar, bi, br) in [(v[0], v[1], v[2], v[3]), (v[0], v[2], v[1], v[3]), (v[0], v[3], v[1], v[2])] {
                let (a, b) = (span(ai, ar), span(bi, br));
                let flags = [precedes(a, b), precedes(b, a), concurrent(a, b)];
                prop_assert_eq!(flags.iter().filter(|f| **f).count(), 1);
            }
        }

        // One of a ⪯ b, b ⪯ a always holds (starts are distinct).
        #[test]
        fn weak_total(raw in proptest::collection::btree_set(0u64..10_000, 4)) {
            let v: Vec<u64> = raw.into_iter().collect();
            let a = span(v[0], v[1]);
            let b = span(v[2], v[3]);
            prop_assert!(weak_precedes(a, b) ^ weak_precedes(b, a));
        }

        #[test]
        fn precedes_transitive(raw in proptest::collection::btree_set(0u64..10_000, 6)) {
            let v: Vec<u64> = raw.into_iter().collect();
            let (a, b, c) = (span(v[0], v[1]), span(v[2], v[3]), span(v[4], v[5]));
            if precedes(a, b) && precedes(b, c) {
                prop_assert!(precedes(a, c));
            }
        }
    }
}
