//! Identifier newtypes shared across the simulator, trace, and checkers.

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident($inner:ty)) => {
        $(#[$doc])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(
    /// Processor index, 0-based around the ring.
    Pid(u16)
);
id_type!(
    /// A single low-level register cell.
    RegId(u32)
);
id_type!(
    /// A duplicated register pair (two cells written by one processor).
    PairId(u32)
);
id_type!(
    /// A low-level operation instance within one trace.
    OpId(u32)
);
id_type!(
    /// A high-level (dup-write / scan-read) operation instance.
    HlId(u32)
);
