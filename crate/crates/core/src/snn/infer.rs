use rayon::prelude::*;

use super::kernel::{lif_step, NeuronState, StepOutcome};
use super::{FaultKind, FaultOverride, NetworkSpec};
use crate::data::{LabeledDataset, SpikeTensor};
use crate::error::{Error, Result};

/// How a layer turns its pre-reset potential into the value it transmits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum SpikeMode {
    /// Heaviside threshold; binary spikes.
    Hard,
    /// Continuous primitive of the fast-sigmoid surrogate. Reset and
    /// refractoriness still follow the hard threshold.
    Soft { beta: f64 },
}

pub(crate) const STATUS_QUIET: u8 = 0;
pub(crate) const STATUS_FIRED: u8 = 1;
pub(crate) const STATUS_REFRACTORY: u8 = 2;
pub(crate) const STATUS_FORCED: u8 = 3;

/// Output of one layer over the full duration, time-major.
pub(crate) struct LayerRun {
    pub spikes: Vec<f64>,
    /// Pre-reset potentials (only when taped).
    pub potentials: Vec<f64>,
    /// Per-cell `STATUS_*` codes (only when taped).
    pub status: Vec<u8>,
}

/// Runs layer `l` over `steps` steps on `input` (time-major, one value per
/// presynaptic cell and step).
pub(crate) fn run_layer(
    net: &NetworkSpec,
    l: usize,
    input: &[f64],
    steps: usize,
    mode: SpikeMode,
    fault: Option<(usize, FaultKind)>,
    tape: bool,
) -> LayerRun {
    let layer = net.layer(l);
    let fan = net.fanout(l);
    let n_in = fan.sources();
    let n = net.layer_size(l);
    debug_assert_eq!(input.len(), steps * n_in);

    let mut states = vec![NeuronState::rest(&layer.neuron); n];
    let mut cur = vec![0.0f64; n];
    let mut spikes = vec![0.0f64; steps * n];
    let (mut potentials, mut status) = if tape {
        (vec![0.0f64; steps * n], vec![STATUS_QUIET; steps * n])
    } else {
        (Vec::new(), Vec::new())
    };
    let theta = layer.neuron.theta;

    for t in 0..steps {
        cur.fill(0.0);
        for (j, &s) in input[t * n_in..(t + 1) * n_in].iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            for &(tgt, w) in fan.targets(j) {
                cur[tgt as usize] += layer.weights[w as usize] * s;
            }
        }
        let row = t * n;
        for (i, st) in states.iter_mut().enumerate() {
            let outcome = lif_step(&layer.neuron, st, cur[i]);
            let (value, code, u) = match outcome {
                StepOutcome::Refractory => (0.0, STATUS_REFRACTORY, f64::NAN),
                StepOutcome::Integrated { u, fired } => {
                    let value = match mode {
                        SpikeMode::Hard => fired as u8 as f64,
                        SpikeMode::Soft { beta } => soft_spike(u - theta, beta),
                    };
                    (value, if fired { STATUS_FIRED } else { STATUS_QUIET }, u)
                }
            };
            spikes[row + i] = value;
            if tape {
                potentials[row + i] = u;
                status[row + i] = code;
            }
        }
    }

    if let Some((target, kind)) = fault {
        let forced = match kind {
            FaultKind::Dead => 0.0,
            FaultKind::Saturated => 1.0,
        };
        for t in 0..steps {
            spikes[t * n + target] = forced;
            if tape {
                status[t * n + target] = STATUS_FORCED;
            }
        }
    }

    LayerRun {
        spikes,
        potentials,
        status,
    }
}

/// Fast-sigmoid surrogate derivative `1 / (beta |x| + 1)^2`.
#[inline]
pub(crate) fn surrogate(x: f64, beta: f64) -> f64 {
    let d = beta * x.abs() + 1.0;
    1.0 / (d * d)
}

/// A primitive of [`surrogate`], shifted to be positive.
#[inline]
pub(crate) fn soft_spike(x: f64, beta: f64) -> f64 {
    1.0 / beta + x / (1.0 + beta * x.abs())
}

/// Propagates `input` through layers `from..` (hard spikes) and returns
/// every layer output from `from` onward.
pub(crate) fn forward_from(
    net: &NetworkSpec,
    from: usize,
    input: Vec<f64>,
    steps: usize,
    fault: Option<&FaultOverride>,
) -> Vec<Vec<f64>> {
    let mut outs = Vec::with_capacity(net.num_layers() - from);
    let mut cur = input;
    for l in from..net.num_layers() {
        let f = fault
            .filter(|f| f.target.layer == l)
            .map(|f| (f.target.neuron, f.kind));
        let run = run_layer(net, l, &cur, steps, SpikeMode::Hard, f, false);
        cur = run.spikes;
        outs.push(cur.clone());
    }
    outs
}

/// Which layer outputs [`infer`] keeps.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum Record {
    #[default]
    OutputOnly,
    All,
    Layers(Vec<usize>),
}

impl Record {
    fn wants(&self, l: usize, last: usize) -> bool {
        match self {
            Record::OutputOnly => l == last,
            Record::All => true,
            Record::Layers(ls) => ls.contains(&l),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inference {
    /// Recorded layer outputs; `None` for layers not requested.
    pub layers: Vec<Option<SpikeTensor>>,
    /// Output-layer spike counts over the full duration.
    pub counts: Vec<u32>,
    pub prediction: usize,
}

/// Spike-count argmax with lowest-index tie-break.
pub fn predict_from_counts(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

fn output_counts(spikes: &[f64], n: usize) -> Vec<u32> {
    let mut counts = vec![0u32; n];
    for frame in spikes.chunks_exact(n) {
        for (c, &s) in counts.iter_mut().zip(frame) {
            *c += (s != 0.0) as u32;
        }
    }
    counts
}

pub(crate) fn to_tensor(spikes: &[f64], steps: usize, shape: crate::data::Shape) -> SpikeTensor {
    let bits = spikes.iter().map(|&s| (s != 0.0) as u8).collect();
    SpikeTensor::from_bits(steps, shape, bits).expect("layer output is binary")
}

/// Runs the network layer by layer, each over the full input duration.
pub fn infer(
    net: &NetworkSpec,
    x: &SpikeTensor,
    fault: Option<&FaultOverride>,
    record: &Record,
) -> Result<Inference> {
    if x.shape() != net.input_shape() {
        return Err(Error::Shape(format!(
            "input {} does not match network input {}",
            x.shape(),
            net.input_shape()
        )));
    }
    if let Some(f) = fault {
        net.check_address(f.target)?;
    }
    let steps = x.steps();
    let last = net.output_layer();
    let outs = forward_from(net, 0, x.to_f64(), steps, fault);
    let counts = output_counts(&outs[last], net.class_count());
    let layers = outs
        .iter()
        .enumerate()
        .map(|(l, s)| record.wants(l, last).then(|| to_tensor(s, steps, net.layer_shape(l))))
        .collect();
    Ok(Inference {
        prediction: predict_from_counts(&counts),
        counts,
        layers,
    })
}

pub(crate) fn prediction_of(net: &NetworkSpec, output: &[f64]) -> usize {
    predict_from_counts(&output_counts(output, net.class_count()))
}

/// Fraction of samples whose prediction equals the label.
pub fn accuracy(net: &NetworkSpec, ds: &LabeledDataset, fault: Option<&FaultOverride>) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Param("accuracy of an empty dataset".into()));
    }
    if ds.shape != net.input_shape() {
        return Err(Error::Shape(format!(
            "dataset {} does not match network input {}",
            ds.shape,
            net.input_shape()
        )));
    }
    if let Some(f) = fault {
        net.check_address(f.target)?;
    }
    let correct: usize = ds
        .samples
        .par_iter()
        .map(|s| {
            let outs = forward_from(net, 0, s.input.to_f64(), s.input.steps(), fault);
            (prediction_of(net, &outs[outs.len() - 1]) == s.label) as usize
        })
        .sum();
    Ok(correct as f64 / ds.len() as f64)
}
