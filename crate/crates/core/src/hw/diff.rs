//! Per-neuron spike-count differences between two runs.

use std::io::Write;

use serde::Serialize;

use super::system::AddressMap;
use super::trace::{HwTrace, TraceKind};
use crate::data::SpikeTensor;
use crate::error::{Error, Result};
use crate::snn::NetworkSpec;
use crate::svg::{heat_strips, Strip};

/// `layers[l][i]` is `count_b - count_a` for neuron `i` of layer `l`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SpikeDiff {
    pub layers: Vec<Vec<i64>>,
}

impl SpikeDiff {
    pub fn zeros(net: &NetworkSpec) -> Self {
        SpikeDiff {
            layers: (0..net.num_layers()).map(|l| vec![0; net.layer_size(l)]).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().flatten().all(|&d| d == 0)
    }

    /// Element-wise sum, for aggregating over samples.
    pub fn accumulate(&mut self, other: &SpikeDiff) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// CSV with columns `layer, neuron, delta`, every neuron listed.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["layer", "neuron", "delta"])?;
        for (l, layer) in self.layers.iter().enumerate() {
            for (i, d) in layer.iter().enumerate() {
                out.write_record([l.to_string(), i.to_string(), d.to_string()])?;
            }
        }
        out.flush().map_err(|e| Error::io("<spike diff>", e))?;
        Ok(())
    }

    /// One diverging heat strip per layer.
    pub fn svg(&self, title: &str) -> String {
        let strips: Vec<Strip> = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, v)| Strip {
                label: format!("L{l}"),
                values: v.iter().map(|&d| d as f64).collect(),
            })
            .collect();
        heat_strips(title, &strips, true)
    }
}

/// Difference of per-layer spike counts of two recorded runs.
pub fn diff_layers(a: &[SpikeTensor], b: &[SpikeTensor]) -> Result<SpikeDiff> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.shape() != y.shape()) {
        return Err(Error::Shape("runs have different layer layouts".into()));
    }
    Ok(SpikeDiff {
        layers: a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                x.counts()
                    .iter()
                    .zip(y.counts())
                    .map(|(&ca, cb)| i64::from(cb) - i64::from(ca))
                    .collect()
            })
            .collect(),
    })
}

fn trace_counts(net: &NetworkSpec, map: &AddressMap, t: &HwTrace) -> Result<SpikeDiff> {
    let mut counts = SpikeDiff::zeros(net);
    for e in &t.events {
        if let TraceKind::SpikeOut { address } | TraceKind::FakeSpike { address } = e.kind {
            let a = map
                .local(address)
                .ok_or_else(|| Error::Simulator(format!("trace names unknown address {address}")))?;
            counts.layers[a.layer][a.neuron] += 1;
        }
    }
    Ok(counts)
}

/// Per-neuron emitted spikes (true and fake) of trace `b` minus those of
/// trace `a`.
pub fn diff_traces(net: &NetworkSpec, a: &HwTrace, b: &HwTrace) -> Result<SpikeDiff> {
    let map = AddressMap::new(net);
    let ca = trace_counts(net, &map, a)?;
    let mut cb = trace_counts(net, &map, b)?;
    for (x, y) in cb.layers.iter_mut().zip(&ca.layers) {
        for (p, q) in x.iter_mut().zip(y) {
            *p -= q;
        }
    }
    Ok(cb)
}
