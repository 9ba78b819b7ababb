//! The run log: low-level operation intervals, high-level operations
//! (dup-writes and scan-reads), critical-section markers, and the JSONL
//! wire format. A trace file is one meta object describing the setup and
//! initial configuration, followed by one JSON object per event.

use crate::config::RunSetup;
use crate::errors::TraceError;
use crate::ids::{HlId, OpId, PairId, Pid, RegId};
use crate::time::{Span, VirtualTime};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Read,
    Write,
}

/// High-level operation shapes. A dup-write propagates one value to both
/// halves of a pair; a scan-read samples both halves `k` times and returns
/// the unanimous value or nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum HlKind {
    DupWrite { val: u64 },
    ScanRead { k: u16 },
}

impl HlKind {
    pub fn name(&self) -> &'static str {
        match self {
            HlKind::DupWrite { .. } => "dup_write",
            HlKind::ScanRead { .. } => "scan_read",
        }
    }
}

/// Outcome recorded when a high-level op closes. `value: None` is the
/// "busy" result of a scan that saw no unanimous value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum HlOutcome {
    DupWrite { effective: bool },
    ScanRead { value: Option<u64> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpInterval {
    pub id: OpId,
    pub pid: Pid,
    pub reg: RegId,
    pub kind: OpKind,
    /// Write argument (known at invoke) or read result (filled at respond).
    pub value: Option<u64>,
    pub invoke: VirtualTime,
    pub respond: Option<VirtualTime>,
    pub hl: Option<HlId>,
}

impl OpInterval {
    pub fn span(&self) -> Option<Span> {
        self.respond.map(|r| Span::new(self.invoke, r))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HighLevelOp {
    pub id: HlId,
    pub pid: Pid,
    pub pair: PairId,
    pub kind: HlKind,
    pub children: Vec<OpId>,
    pub begin: VirtualTime,
    pub end: Option<VirtualTime>,
    pub outcome: Option<HlOutcome>,
}

impl HighLevelOp {
    /// Interval from the first child's invoke to the last child's respond.
    /// This, not the begin/end markers, is the op's extent for ordering.
    pub fn child_span(&self, ops: &[OpInterval]) -> Option<Span> {
        let first = self.children.first()?;
        let last = self.children.last()?;
        let invoke = ops[first.index()].invoke;
        let respond = ops[last.index()].respond?;
        Some(Span::new(invoke, respond))
    }

    pub fn scan_value(&self) -> Option<Option<u64>> {
        match self.outcome {
            Some(HlOutcome::ScanRead { value }) => Some(value),
            _ => None,
        }
    }

    pub fn write_arg(&self) -> Option<u64> {
        match self.kind {
            HlKind::DupWrite { val } => Some(val),
            HlKind::ScanRead { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventBody {
    Invoke(OpId),
    Respond(OpId),
    CsEnter,
    CsExit,
    HlBegin(HlId),
    HlEnd(HlId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub tick: VirtualTime,
    pub pid: Pid,
    pub body: EventBody,
}

/// Choices that reproduce one specific run: which processor moved at each
/// tick and, in order, every value the adversary handed to a disturbed read.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceScript {
    pub schedule: Vec<u16>,
    pub values: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub format: String,
    pub setup: RunSetup,
    /// Initial committed value of every cell, indexed by `RegId`.
    pub initial_registers: Vec<u64>,
    /// Initial local variables per processor, indexed by pid.
    pub initial_locals: Vec<crate::config::LocalsInit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<ChoiceScript>,
}

pub const TRACE_FORMAT: &str = "safering-trace/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub meta: TraceMeta,
    pub events: Vec<TraceEvent>,
    pub ops: Vec<OpInterval>,
    pub hl_ops: Vec<HighLevelOp>,
}

impl Trace {
    pub fn new(meta: TraceMeta) -> Trace {
        Trace { meta, events: Vec::new(), ops: Vec::new(), hl_ops: Vec::new() }
    }

    pub fn last_tick(&self) -> VirtualTime {
        self.events.last().map_or(VirtualTime(0), |e| e.tick)
    }

    pub fn op(&self, id: OpId) -> &OpInterval {
        &self.ops[id.index()]
    }

    pub fn hl(&self, id: HlId) -> &HighLevelOp {
        &self.hl_ops[id.index()]
    }

    /// Completed high-level ops on one pair, in begin order (one writer and
    /// one reader per pair, so per-kind sequences are already serial).
    pub fn completed_hl_on_pair(&self, pair: PairId) -> impl Iterator<Item = &HighLevelOp> {
        self.hl_ops
            .iter()
            .filter(move |h| h.pair == pair && h.end.is_some())
    }

    /// Critical sections per processor as (enter, exit) tick pairs; an exit
    /// cut off by the budget is reported with `None`.
    pub fn cs_spans(&self) -> Vec<(Pid, VirtualTime, Option<VirtualTime>)> {
        let mut open: std::collections::BTreeMap<Pid, VirtualTime> = Default::default();
        let mut out = Vec::new();
        for ev in &self.events {
            match ev.body {
                EventBody::CsEnter => {
                    let prev = open.insert(ev.pid, ev.tick);
                    debug_assert!(prev.is_none(), "nested critical section");
                }
                EventBody::CsExit => {
                    let enter = open.remove(&ev.pid).expect("cs_exit without cs_enter");
                    out.push((ev.pid, enter, Some(ev.tick)));
                }
                _ => {}
            }
        }
        for (pid, enter) in open {
            out.push((pid, enter, None));
        }
        out.sort_by_key(|&(pid, enter, _)| (enter, pid));
        out
    }

    pub fn to_jsonl<W: Write>(&self, mut w: W) -> Result<(), TraceError> {
        #[derive(Serialize)]
        struct MetaLine<'a> {
            meta: &'a TraceMeta,
        }
        serde_json::to_writer(&mut w, &MetaLine { meta: &self.meta })?;
        w.write_all(b"\n")?;
        for ev in &self.events {
            serde_json::to_writer(&mut w, &self.event_line(ev))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.to_jsonl(&mut buf).expect("in-memory trace serialization");
        String::from_utf8(buf).expect("trace lines are utf-8")
    }

    fn event_line(&self, ev: &TraceEvent) -> TraceLine {
        let mut line = TraceLine {
            tick: ev.tick.0,
            pid: ev.pid.0,
            event: match ev.body {
                EventBody::Invoke(_) => EventName::Invoke,
                EventBody::Respond(_) => EventName::Respond,
                EventBody::CsEnter => EventName::CsEnter,
                EventBody::CsExit => EventName::CsExit,
                EventBody::HlBegin(_) => EventName::HlBegin,
                EventBody::HlEnd(_) => EventName::HlEnd,
            },
            ..TraceLine::default()
        };
        match ev.body {
            EventBody::Invoke(id) => {
                let op = self.op(id);
                line.reg = Some(op.reg.0);
                line.kind = Some(op.kind.name().into());
                if op.kind == OpKind::Write {
                    line.value = Some(op.value);
                }
                line.hl_op_id = op.hl.map(|h| h.0);
            }
            EventBody::Respond(id) => {
                let op = self.op(id);
                line.reg = Some(op.reg.0);
                line.kind = Some(op.kind.name().into());
                line.value = Some(op.value);
                line.hl_op_id = op.hl.map(|h| h.0);
            }
            EventBody::HlBegin(id) => {
                let hl = self.hl(id);
                line.reg = Some(hl.pair.0);
                line.kind = Some(hl.kind.name().into());
                line.value = Some(Some(match hl.kind {
                    HlKind::DupWrite { val } => val,
                    HlKind::ScanRead { k } => u64::from(k),
                }));
                line.hl_op_id = Some(id.0);
            }
            EventBody::HlEnd(id) => {
                let hl = self.hl(id);
                line.reg = Some(hl.pair.0);
                line.kind = Some(hl.kind.name().into());
                line.hl_op_id = Some(id.0);
                match hl.outcome {
                    Some(HlOutcome::DupWrite { effective }) => {
                        line.value = Some(hl.write_arg());
                        line.effective = Some(effective);
                    }
                    Some(HlOutcome::ScanRead { value }) => line.value = Some(value),
                    None => {}
                }
            }
            EventBody::CsEnter | EventBody::CsExit => {}
        }
        line
    }

    /// Rebuild a trace from its wire form, re-deriving the op and high-level
    /// tables and validating the single-pending-op discipline.
    pub fn from_jsonl<R: BufRead>(r: R) -> Result<Trace, TraceError> {
        let mut lines = r.lines().enumerate();
        let meta = loop {
            let (no, line) = lines.next().ok_or(TraceError::MissingMeta)?;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            #[derive(Deserialize)]
            struct MetaLine {
                meta: TraceMeta,
            }
            let parsed: MetaLine =
                serde_json::from_str(&line).map_err(|e| TraceError::Malformed {
                    line: no + 1,
                    msg: format!("expected meta object: {e}"),
                })?;
            break parsed.meta;
        };

        let mut trace = Trace::new(meta);
        // One pending low-level op and one open high-level op per pid.
        let mut pending: std::collections::BTreeMap<Pid, OpId> = Default::default();
        let mut open_hl: std::collections::BTreeMap<Pid, HlId> = Default::default();
        for (no, line) in lines {
            let raw = line?;
            if raw.trim().is_empty() {
                continue;
            }
            let l: TraceLine = serde_json::from_str(&raw).map_err(|e| TraceError::Malformed {
                line: no + 1,
                msg: e.to_string(),
            })?;
            let bad = |msg: String| TraceError::Malformed { line: no + 1, msg };
            let tick = VirtualTime(l.tick);
            let pid = Pid(l.pid);
            let body = match l.event {
                EventName::Invoke => {
                    let id = OpId(trace.ops.len() as u32);
                    let kind = match l.kind.as_deref() {
                        Some("read") => OpKind::Read,
                        Some("write") => OpKind::Write,
                        k => return Err(bad(format!("invoke with kind {k:?}"))),
                    };
                    let hl = open_hl.get(&pid).copied();
                    if hl.map(|h| h.0) != l.hl_op_id && l.hl_op_id.is_some() {
                        return Err(bad("invoke names a foreign high-level op".into()));
                    }
                    if pending.insert(pid, id).is_some() {
                        return Err(bad(format!("pid {pid} has two pending ops")));
                    }
                    trace.ops.push(OpInterval {
                        id,
                        pid,
                        reg: RegId(l.reg.ok_or_else(|| bad("invoke without reg".into()))?),
                        kind,
                        value: l.value.flatten(),
                        invoke: tick,
                        respond: None,
                        hl,
                    });
                    if let Some(h) = hl {
                        trace.hl_ops[h.index()].children.push(id);
                    }
                    EventBody::Invoke(id)
                }
                EventName::Respond => {
                    let id = pending
                        .remove(&pid)
                        .ok_or_else(|| bad(format!("respond without pending op on pid {pid}")))?;
                    let op = &mut trace.ops[id.index()];
                    op.respond = Some(tick);
                    if let Some(v) = l.value.flatten() {
                        op.value = Some(v);
                    }
                    EventBody::Respond(id)
                }
                EventName::CsEnter => EventBody::CsEnter,
                EventName::CsExit => EventBody::CsExit,
                EventName::HlBegin => {
                    let id = HlId(trace.hl_ops.len() as u32);
                    if l.hl_op_id.is_some_and(|raw| raw != id.0) {
                        return Err(bad("hl_begin ids must be dense and in order".into()));
                    }
                    let arg = l
                        .value
                        .flatten()
                        .ok_or_else(|| bad("hl_begin without argument".into()))?;
                    let kind = match l.kind.as_deref() {
                        Some("dup_write") => HlKind::DupWrite { val: arg },
                        Some("scan_read") => HlKind::ScanRead { k: arg as u16 },
                        k => return Err(bad(format!("hl_begin with kind {k:?}"))),
                    };
                    if open_hl.insert(pid, id).is_some() {
                        return Err(bad(format!("pid {pid} has two open high-level ops")));
                    }
                    trace.hl_ops.push(HighLevelOp {
                        id,
                        pid,
                        pair: PairId(l.reg.ok_or_else(|| bad("hl_begin without pair".into()))?),
                        kind,
                        children: Vec::new(),
                        begin: tick,
                        end: None,
                        outcome: None,
                    });
                    EventBody::HlBegin(id)
                }
                EventName::HlEnd => {
                    let id = open_hl
                        .remove(&pid)
                        .ok_or_else(|| bad(format!("hl_end without open op on pid {pid}")))?;
                    let hl = &mut trace.hl_ops[id.index()];
                    hl.end = Some(tick);
                    hl.outcome = Some(match hl.kind {
                        HlKind::DupWrite { .. } => HlOutcome::DupWrite {
                            effective: l
                                .effective
                                .ok_or_else(|| bad("dup_write end without effective flag".into()))?,
                        },
                        HlKind::ScanRead { .. } => HlOutcome::ScanRead {
                            value: l.value.flatten(),
                        },
                    });
                    EventBody::HlEnd(id)
                }
            };
            trace.events.push(TraceEvent { tick, pid, body });
        }
        Ok(trace)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
enum EventName {
    #[default]
    Invoke,
    Respond,
    CsEnter,
    CsExit,
    HlBegin,
    HlEnd,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Read => "read",
            OpKind::Write => "write",
        }
    }
}

/// One wire-format line. `value` distinguishes "absent" from an explicit
/// null: a scan that returned busy serializes as `"value": null`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct TraceLine {
    tick: u64,
    pid: u16,
    event: EventName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reg: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    #[serde(
        default,
        deserialize_with = "de_nullable",
        skip_serializing_if = "Option::is_none"
    )]
    value: Option<Option<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    effective: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hl_op_id: Option<u32>,
}

fn de_nullable<'de, D>(d: D) -> Result<Option<Option<u64>>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    Ok(Some(Option::<u64>::deserialize(d)?))
}
