//! Event log of the accelerator model.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fsm::FsmState;
use crate::error::{Error, Result};

/// Origin of a spike entering a core.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Flat index of an external input cell.
    Input(u32),
    /// Global neuron address.
    Neuron(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceKind {
    SpikeIn { source: Source },
    /// A true spike left the core.
    SpikeOut { address: u32 },
    Rqst { address: u32 },
    Ack { address: u32 },
    FsmTransition { from: FsmState, to: FsmState },
    /// The masked Trojan neuron's injected spike left the core.
    FakeSpike { address: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceEvent {
    pub cycle: u64,
    pub timestep: u64,
    pub core: u32,
    #[serde(flatten)]
    pub kind: TraceKind,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HwTrace {
    pub events: Vec<TraceEvent>,
}

impl HwTrace {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, pred: impl Fn(&TraceKind) -> bool) -> usize {
        self.events.iter().filter(|e| pred(&e.kind)).count()
    }

    pub fn fake_spikes(&self) -> usize {
        self.count(|k| matches!(k, TraceKind::FakeSpike { .. }))
    }

    pub fn fsm_transitions(&self) -> Vec<(u64, FsmState, FsmState)> {
        self.events
            .iter()
            .filter_map(|e| match e.kind {
                TraceKind::FsmTransition { from, to } => Some((e.timestep, from, to)),
                _ => None,
            })
            .collect()
    }

    /// Cycle numbers strictly increase, timesteps never decrease, and every
    /// request is answered by an acknowledgment for the same address from the
    /// same core before any other traffic; only that core's FSM may move in
    /// between. Acknowledgments never come unrequested.
    pub fn check(&self) -> Result<()> {
        let mut open: Option<(u32, u32)> = None;
        for (k, pair) in self.events.windows(2).enumerate() {
            if pair[1].cycle <= pair[0].cycle || pair[1].timestep < pair[0].timestep {
                return Err(Error::Simulator(format!("trace out of order at entry {}", k + 1)));
            }
        }
        for (k, e) in self.events.iter().enumerate() {
            match (open, e.kind) {
                (None, TraceKind::Rqst { address }) => open = Some((e.core, address)),
                (Some((core, a)), TraceKind::Ack { address }) if core == e.core && a == address => open = None,
                (Some((core, _)), TraceKind::FsmTransition { .. }) if core == e.core => {}
                (None, TraceKind::Ack { .. }) => {
                    return Err(Error::Simulator(format!("entry {k}: acknowledgment without request")))
                }
                (Some(_), _) => return Err(Error::Simulator(format!("entry {k}: request not acknowledged"))),
                _ => {}
            }
        }
        if open.is_some() {
            return Err(Error::Simulator("trace ends with an open request".into()));
        }
        Ok(())
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").map_err(|e| Error::io("<trace>", e))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<HwTrace> {
        let mut events = Vec::new();
        for (k, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<trace>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line).map_err(|e| Error::Format {
                line: k + 1,
                message: e.to_string(),
            })?);
        }
        Ok(HwTrace { events })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}
