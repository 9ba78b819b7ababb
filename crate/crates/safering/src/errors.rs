//! Error types. Configuration errors name the violated constraint so the
//! CLI can surface it verbatim.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("n must be at least 2 (got {0})")]
    RingTooSmall(u16),
    #[error("K must satisfy K > 2n (got K={k}, n={n})")]
    TokenDomainTooSmall { k: u64, n: u16 },
    #[error("phi must satisfy phi > 2n (got phi={phi}, n={n})")]
    ScanCountTooSmall { phi: u16, n: u16 },
    #[error("K must be a power of two for the gray-coded variant (got {0})")]
    TokenDomainNotPowerOfTwo(u64),
    #[error("adversary target {target} outside register domain 0..{domain}")]
    TargetOutsideDomain { target: u64, domain: u64 },
    #[error("initial value {value} outside register domain 0..{domain}")]
    InitOutsideDomain { value: u64, domain: u64 },
    #[error("scan width k must be at least 1")]
    ZeroScanWidth,
    #[error("register domain must be at least 2 (got {0})")]
    DomainTooSmall(u64),
    #[error("write argument {value} outside register domain 0..{domain}")]
    ArgOutsideDomain { value: u64, domain: u64 },
    #[error("{policy} policy is only usable by the explorer driver")]
    EnumerateOutsideExplorer { policy: &'static str },
    #[error("step budget must be nonzero")]
    ZeroBudget,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scripted {what} exhausted after {took} entries")]
    ScriptExhausted { what: &'static str, took: usize },
    #[error("scripted schedule names pid {0} which has no enabled step")]
    ScriptBadPid(u16),
    #[error("replay requires the choice script recorded in the trace meta")]
    MissingScript,
    #[error("trace meta contradicts its setup: {0}")]
    BadMeta(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("trace is missing its leading meta object")]
    MissingMeta,
    #[error("trace event at {tick} contradicts the declared setup: {msg}")]
    Inconsistent { tick: u64, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("scenario skeleton explodes past the cap: estimated {estimate} states > {cap}")]
    TooLarge { estimate: u128, cap: u64 },
    #[error("exploration aborted after visiting {visited} states (cap {cap})")]
    CapHit { visited: u64, cap: u64 },
    #[error("ring exploration revisits states forever; dedup must stay on")]
    UnboundedWithoutDedup,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
}
