//! Discrete-time LIF spiking networks and fault-aware inference.

pub(crate) mod infer;
mod kernel;
mod model_io;
mod network;

pub use infer::{accuracy, infer, predict_from_counts, Inference, Record};
pub use kernel::{lif_step, NeuronState, StepOutcome};
pub use model_io::{load_model, read_model, save_model, write_model, MODEL_VERSION};
pub use network::{Fanout, LayerKind, LayerSpec, NetworkSpec, NeuronParams};

use serde::{Deserialize, Serialize};

/// A neuron identified by its layer and flat index (channel-major, then row,
/// then column) inside that layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronAddress {
    pub layer: usize,
    pub neuron: usize,
}

impl NeuronAddress {
    pub const fn new(layer: usize, neuron: usize) -> Self {
        NeuronAddress { layer, neuron }
    }
}

impl std::fmt::Display for NeuronAddress {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}:{}", self.layer, self.neuron)
    }
}

/// Parses `L<layer>:<neuron>`; the leading `L` is optional.
impl std::str::FromStr for NeuronAddress {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || crate::Error::Param(format!("neuron address `{s}` is not of the form L<layer>:<neuron>"));
        let body = s.strip_prefix(['L', 'l']).unwrap_or(s);
        let (l, n) = body.split_once(':').ok_or_else(bad)?;
        Ok(NeuronAddress::new(l.parse().map_err(|_| bad())?, n.parse().map_err(|_| bad())?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultKind {
    /// Output forced to 0 at every step.
    Dead,
    /// Output forced to 1 at every step, regardless of refractoriness.
    Saturated,
}

impl std::fmt::Display for FaultKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FaultKind::Dead => "dead",
            FaultKind::Saturated => "saturated",
        })
    }
}

impl std::str::FromStr for FaultKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dead" => Ok(FaultKind::Dead),
            "saturated" => Ok(FaultKind::Saturated),
            other => Err(crate::Error::Param(format!("unknown fault kind `{other}`"))),
        }
    }
}

/// A single injected neuron fault.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaultOverride {
    pub target: NeuronAddress,
    pub kind: FaultKind,
}

impl FaultOverride {
    pub const fn new(target: NeuronAddress, kind: FaultKind) -> Self {
        FaultOverride { target, kind }
    }
}
