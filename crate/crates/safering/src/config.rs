//! Run configuration: ring parameters, register layout, scheduling and
//! adversary policies, and scripted scenario setups for the explorer.

use crate::errors::ConfigError;
use crate::ids::{PairId, Pid, RegId};
use crate::protocols::gray_code::gray_encode;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// One atomic cell per link; the unmodified increment-and-copy ring.
    Atomic,
    /// One safe-register pair per link, scan width phi.
    TwoReg,
    /// One safe-register pair per token bit, gray coded, scan width 2.
    Gray,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Atomic => "atomic",
            Variant::TwoReg => "two-reg",
            Variant::Gray => "gray",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellSemantics {
    /// Reads overlapping a write may return anything in the domain.
    Safe,
    /// Reads return the value as of their respond tick.
    Atomic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum SchedulerPolicy {
    /// Cycle pids in index order.
    RoundRobin,
    /// Uniform seeded choice, but no processor may run more than
    /// `fairness_bound` consecutive slots, and a starving processor is
    /// forced back in before its idle gap can exceed `n * fairness_bound`
    /// slots. In any run of T slots each live processor therefore takes at
    /// least floor(T / (n * fairness_bound)) of them.
    SeededRandom { fairness_bound: u32 },
    /// Branch point for the explorer; rejected by the plain driver.
    Enumerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum AdversaryPolicy {
    /// Uniform over the register domain.
    Random,
    /// The value the register held before the first overlapping write.
    ReturnOld,
    /// The newest overlapping write's argument.
    ReturnNew,
    /// A fixed in-domain value, maximizing agreement pressure on scans.
    FixedTarget { value: u64 },
    /// Branch point for the explorer; rejected by the plain driver.
    Enumerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum InitPolicy {
    /// Registers and locals drawn uniformly from their domains by the seed.
    Arbitrary,
    /// Every register and local agrees on one token value (a home state).
    AllEqual { value: u64 },
    /// Caller-supplied state, mainly for tests.
    Explicit {
        registers: Vec<u64>,
        locals: Vec<LocalsInit>,
    },
}

/// Initial local variables of one processor. Bit arrays are used by the
/// gray variant only and stay empty elsewhere.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalsInit {
    pub x: u64,
    pub y: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x_bits: Vec<u8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub y_bits: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingConfig {
    pub variant: Variant,
    pub n: u16,
    /// Token values live in 0..K.
    #[serde(rename = "K")]
    pub token_domain: u64,
    /// Scan width of the two-register variant (the gray variant always
    /// scans twice per bit).
    pub phi: u16,
    pub scheduler: SchedulerPolicy,
    pub adversary: AdversaryPolicy,
    pub init: InitPolicy,
    pub seed: u64,
    pub max_steps: u64,
    /// Run the link registers atomically instead of safely; used to check
    /// that the checkers never flag an atomic substrate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantics_override: Option<CellSemantics>,
    /// Skip the K > 2n and phi > 2n checks for counterexample probes.
    /// Never set for acceptance runs.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_unchecked_params: bool,
}

/// Smallest power of two strictly above 2n, the default token domain.
pub fn default_token_domain(n: u16) -> u64 {
    (2 * u64::from(n) + 1).next_power_of_two()
}

pub fn default_phi(n: u16) -> u16 {
    2 * n + 1
}

impl RingConfig {
    pub fn new(variant: Variant, n: u16) -> RingConfig {
        RingConfig {
            variant,
            n,
            token_domain: default_token_domain(n),
            phi: default_phi(n),
            scheduler: SchedulerPolicy::SeededRandom { fairness_bound: 4 },
            adversary: AdversaryPolicy::Random,
            init: InitPolicy::Arbitrary,
            seed: 0,
            max_steps: 200_000,
            semantics_override: None,
            allow_unchecked_params: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> RingConfig {
        self.seed = seed;
        self
    }

    /// Bits per token value in the gray variant.
    pub fn k_bits(&self) -> u16 {
        (63 - ((self.token_domain.max(2)).next_power_of_two()).leading_zeros()) as u16
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n < 2 {
            return Err(ConfigError::RingTooSmall(self.n));
        }
        if self.max_steps == 0 {
            return Err(ConfigError::ZeroBudget);
        }
        if self.token_domain < 2 {
            return Err(ConfigError::DomainTooSmall(self.token_domain));
        }
        if !self.allow_unchecked_params {
            if self.token_domain <= 2 * u64::from(self.n) {
                return Err(ConfigError::TokenDomainTooSmall {
                    k: self.token_domain,
                    n: self.n,
                });
            }
            if self.variant == Variant::TwoReg && u64::from(self.phi) <= 2 * u64::from(self.n) {
                return Err(ConfigError::ScanCountTooSmall {
                    phi: self.phi,
                    n: self.n,
                });
            }
        }
        if self.variant == Variant::TwoReg && self.phi == 0 {
            return Err(ConfigError::ZeroScanWidth);
        }
        if self.variant == Variant::Gray && !self.token_domain.is_power_of_two() {
            return Err(ConfigError::TokenDomainNotPowerOfTwo(self.token_domain));
        }
        if let AdversaryPolicy::FixedTarget { value } = self.adversary {
            let domain = match self.variant {
                Variant::Gray => 2,
                _ => self.token_domain,
            };
            if value >= domain {
                return Err(ConfigError::TargetOutsideDomain {
                    target: value,
                    domain,
                });
            }
        }
        if let InitPolicy::AllEqual { value } = self.init {
            if value >= self.token_domain {
                return Err(ConfigError::InitOutsideDomain {
                    value,
                    domain: self.token_domain,
                });
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> RingLayout {
        let n = self.n as usize;
        let mut cells = Vec::new();
        let mut pairs = Vec::new();
        let mut links = Vec::new();
        let semantics = self.semantics_override.unwrap_or(match self.variant {
            Variant::Atomic => CellSemantics::Atomic,
            _ => CellSemantics::Safe,
        });
        match self.variant {
            Variant::Atomic => {
                for i in 0..n {
                    let writer = Pid(i as u16);
                    cells.push(CellInfo {
                        id: RegId(i as u32),
                        writer,
                        domain: self.token_domain,
                        pair: None,
                        semantics,
                    });
                    links.push(LinkInfo {
                        writer,
                        reader: Pid(((i + 1) % n) as u16),
                        pairs: Vec::new(),
                        cell: Some(RegId(i as u32)),
                    });
                }
            }
            Variant::TwoReg => {
                for i in 0..n {
                    let writer = Pid(i as u16);
                    let reader = Pid(((i + 1) % n) as u16);
                    let pair = PairId(i as u32);
                    let a = RegId((2 * i) as u32);
                    let b = RegId((2 * i + 1) as u32);
                    for (id, half) in [(a, PairHalf::A), (b, PairHalf::B)] {
                        cells.push(CellInfo {
                            id,
                            writer,
                            domain: self.token_domain,
                            pair: Some((pair, half)),
                            semantics,
                        });
                    }
                    pairs.push(PairInfo { id: pair, a, b, writer, reader, bit: None });
                    links.push(LinkInfo { writer, reader, pairs: vec![pair], cell: None });
                }
            }
            Variant::Gray => {
                let k = self.k_bits() as usize;
                for i in 0..n {
                    let writer = Pid(i as u16);
                    let reader = Pid(((i + 1) % n) as u16);
                    let mut link_pairs = Vec::with_capacity(k);
                    for bit in 0..k {
                        let pair = PairId((i * k + bit) as u32);
                        let a = RegId((2 * (i * k + bit)) as u32);
                        let b = RegId((2 * (i * k + bit) + 1) as u32);
                        for (id, half) in [(a, PairHalf::A), (b, PairHalf::B)] {
                            cells.push(CellInfo {
                                id,
                                writer,
                                domain: 2,
                                pair: Some((pair, half)),
                                semantics,
                            });
                        }
                        pairs.push(PairInfo {
                            id: pair,
                            a,
                            b,
                            writer,
                            reader,
                            bit: Some(bit as u16),
                        });
                        link_pairs.push(pair);
                    }
                    links.push(LinkInfo { writer, reader, pairs: link_pairs, cell: None });
                }
            }
        }
        RingLayout {
            variant: self.variant,
            n: self.n,
            token_domain: self.token_domain,
            phi: self.phi,
            k_bits: if self.variant == Variant::Gray { self.k_bits() } else { 0 },
            cells,
            pairs,
            links,
        }
    }

    /// Resolve the initial configuration, drawing from `rng` when the
    /// policy is `Arbitrary`. Register values are indexed by `RegId`.
    pub fn resolve_initial(
        &self,
        layout: &RingLayout,
        rng: &mut impl Rng,
    ) -> Result<(Vec<u64>, Vec<LocalsInit>), ConfigError> {
        let k_bits = layout.k_bits as usize;
        match &self.init {
            InitPolicy::Arbitrary => {
                let registers = layout
                    .cells
                    .iter()
                    .map(|c| rng.gen_range(0..c.domain))
                    .collect();
                let locals = (0..self.n)
                    .map(|_| {
                        let mut l = LocalsInit {
                            x: rng.gen_range(0..self.token_domain),
                            y: rng.gen_range(0..self.token_domain),
                            ..LocalsInit::default()
                        };
                        if self.variant == Variant::Gray {
                            l.x_bits = (0..k_bits).map(|_| rng.gen_range(0..2u8)).collect();
                            l.y_bits = (0..k_bits).map(|_| rng.gen_range(0..2u8)).collect();
                        }
                        Ok(l)
                    })
                    .collect::<Result<_, ConfigError>>()?;
                Ok((registers, locals))
            }
            InitPolicy::AllEqual { value } => {
                let word = if self.variant == Variant::Gray {
                    Some(gray_encode(*value, k_bits)?)
                } else {
                    None
                };
                let registers = layout
                    .cells
                    .iter()
                    .map(|c| match (&word, c.pair) {
                        (Some(w), Some((pair, _))) => {
                            u64::from(w.bit(layout.pairs[pair.index()].bit.unwrap() as usize))
                        }
                        _ => *value,
                    })
                    .collect();
                let locals = (0..self.n)
                    .map(|_| LocalsInit {
                        x: *value,
                        y: *value,
                        x_bits: word.as_ref().map(|w| w.bits.clone()).unwrap_or_default(),
                        y_bits: word.as_ref().map(|w| w.bits.clone()).unwrap_or_default(),
                    })
                    .collect();
                Ok((registers, locals))
            }
            InitPolicy::Explicit { registers, locals } => {
                assert_eq!(registers.len(), layout.cells.len(), "explicit register count");
                assert_eq!(locals.len(), self.n as usize, "explicit locals count");
                for (c, v) in layout.cells.iter().zip(registers) {
                    if *v >= c.domain {
                        return Err(ConfigError::InitOutsideDomain {
                            value: *v,
                            domain: c.domain,
                        });
                    }
                }
                Ok((registers.clone(), locals.clone()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairHalf {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellInfo {
    pub id: RegId,
    pub writer: Pid,
    pub domain: u64,
    pub pair: Option<(PairId, PairHalf)>,
    pub semantics: CellSemantics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairInfo {
    pub id: PairId,
    pub a: RegId,
    pub b: RegId,
    pub writer: Pid,
    pub reader: Pid,
    /// Bit position in the gray variant, 0 = most significant.
    pub bit: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkInfo {
    pub writer: Pid,
    pub reader: Pid,
    pub pairs: Vec<PairId>,
    pub cell: Option<RegId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingLayout {
    pub variant: Variant,
    pub n: u16,
    pub token_domain: u64,
    pub phi: u16,
    pub k_bits: u16,
    pub cells: Vec<CellInfo>,
    pub pairs: Vec<PairInfo>,
    pub links: Vec<LinkInfo>,
}

impl RingLayout {
    pub fn pair(&self, id: PairId) -> &PairInfo {
        &self.pairs[id.index()]
    }

    /// The link whose registers processor `reader` scans.
    pub fn inbound_link(&self, reader: Pid) -> &LinkInfo {
        let i = (reader.index() + self.links.len() - 1) % self.links.len();
        &self.links[i]
    }
}

/// One step of a scripted processor used in explorer scenarios and unit
/// tests. Raw ops hit a single cell; Cs* emit bare markers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "step")]
pub enum ScriptOp {
    DupWrite { pair: PairId, val: u64 },
    ScanRead { pair: PairId, k: u16 },
    RawRead { reg: RegId },
    RawWrite { reg: RegId, val: u64 },
    CsEnter,
    CsExit,
}

/// A fixed small topology plus one script per processor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSetup {
    pub domain: u64,
    pub cells: Vec<CellInfo>,
    pub pairs: Vec<PairInfo>,
    pub programs: Vec<Vec<ScriptOp>>,
}

impl ScenarioSetup {
    /// Two processors sharing one register pair: pid 0 writes, pid 1 reads.
    pub fn one_pair(domain: u64, writer: Vec<ScriptOp>, reader: Vec<ScriptOp>) -> ScenarioSetup {
        let pair = PairInfo {
            id: PairId(0),
            a: RegId(0),
            b: RegId(1),
            writer: Pid(0),
            reader: Pid(1),
            bit: None,
        };
        let cells = [(pair.a, PairHalf::A), (pair.b, PairHalf::B)]
            .into_iter()
            .map(|(id, half)| CellInfo {
                id,
                writer: Pid(0),
                domain,
                pair: Some((PairId(0), half)),
                semantics: CellSemantics::Safe,
            })
            .collect();
        ScenarioSetup {
            domain,
            cells,
            pairs: vec![pair],
            programs: vec![writer, reader],
        }
    }

    /// Independent single cells, one per processor, plus per-processor
    /// scripts; for scheduler-level tests.
    pub fn independent_cells(domain: u64, programs: Vec<Vec<ScriptOp>>) -> ScenarioSetup {
        let cells = (0..programs.len())
            .map(|i| CellInfo {
                id: RegId(i as u32),
                writer: Pid(i as u16),
                domain,
                pair: None,
                semantics: CellSemantics::Safe,
            })
            .collect();
        ScenarioSetup { domain, cells, pairs: Vec::new(), programs }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.domain < 2 {
            return Err(ConfigError::DomainTooSmall(self.domain));
        }
        for prog in &self.programs {
            for op in prog {
                match *op {
                    ScriptOp::DupWrite { val, .. } | ScriptOp::RawWrite { val, .. } => {
                        if val >= self.domain {
                            return Err(ConfigError::ArgOutsideDomain {
                                value: val,
                                domain: self.domain,
                            });
                        }
                    }
                    ScriptOp::ScanRead { k: 0, .. } => {
                        return Err(ConfigError::ZeroScanWidth);
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

/// What produced a trace: a full ring run or a scripted scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RunSetup {
    Ring { config: RingConfig },
    Scenario { setup: ScenarioSetup },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_satisfy_their_own_constraints() {
        for n in 2..=6 {
            assert!(default_token_domain(n) > 2 * u64::from(n), "n={n}");
            for variant in [Variant::Atomic, Variant::TwoReg, Variant::Gray] {
                RingConfig::new(variant, n).validate().unwrap();
            }
        }
        assert_eq!(default_token_domain(2), 8);
        assert_eq!(default_token_domain(3), 8);
        assert_eq!(default_token_domain(4), 16);
    }

    #[test]
    fn validation_names_the_violated_bound() {
        let mut cfg = RingConfig::new(Variant::TwoReg, 3);
        cfg.token_domain = 6;
        assert_eq!(
            cfg.validate().unwrap_err().to_string(),
            "K must satisfy K > 2n (got K=6, n=3)"
        );

        let mut cfg = RingConfig::new(Variant::TwoReg, 3);
        cfg.phi = 6;
        assert_eq!(
            cfg.validate().unwrap_err().to_string(),
            "phi must satisfy phi > 2n (got phi=6, n=3)"
        );

        let mut cfg = RingConfig::new(Variant::Gray, 3);
        cfg.token_domain = 9;
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::TokenDomainNotPowerOfTwo(9))
        ));

        // The escape hatch admits out-of-range rings for probes.
        let mut cfg = RingConfig::new(Variant::Atomic, 2);
        cfg.token_domain = 3;
        assert!(cfg.validate().is_err());
        cfg.allow_unchecked_params = true;
        cfg.validate().unwrap();
    }

    #[test]
    fn gray_layout_orders_pairs_msb_first() {
        let cfg = RingConfig::new(Variant::Gray, 2);
        assert_eq!(cfg.token_domain, 8);
        assert_eq!(cfg.k_bits(), 3);
        let layout = cfg.layout();
        assert_eq!(layout.pairs.len(), 6);
        assert_eq!(layout.cells.len(), 12);
        assert_eq!(layout.pairs[0].bit, Some(0));
        assert_eq!(layout.pairs[2].bit, Some(2));
        assert_eq!(layout.links[1].pairs, vec![PairId(3), PairId(4), PairId(5)]);
        assert_eq!(layout.inbound_link(Pid(0)).writer, Pid(1));
    }
}
