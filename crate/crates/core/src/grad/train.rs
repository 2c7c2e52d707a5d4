//! Minimal surrogate-gradient trainer: spike-count MSE against one-hot rate
//! targets, Adam on all weights, deterministic per seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::tape::{backward_layers, forward_taped};
use crate::data::{LabeledDataset, Shape};
use crate::error::{Error, Result};
use crate::snn::infer::SpikeMode;
use crate::snn::{LayerKind, LayerSpec, NetworkSpec, NeuronParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Target firing rate (spikes per step) of the correct output neuron.
    pub rate_true: f64,
    /// Target firing rate of every other output neuron.
    pub rate_false: f64,
    pub surrogate_beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr: 0.01,
            batch_size: 16,
            seed: 1,
            rate_true: 0.3,
            rate_false: 0.02,
            surrogate_beta: super::DEFAULT_SURROGATE_BETA,
        }
    }
}

/// Draws every layer's weights from a normal distribution scaled by fan-in.
pub fn init_weights(net: &mut NetworkSpec, gain: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in 0..net.num_layers() {
        let fan_in = match net.layer(l).kind {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Conv2d { in_ch, kernel, .. } => in_ch * kernel * kernel,
            LayerKind::SumPool { factor } => factor * factor,
        };
        let theta = net.layer(l).neuron.theta;
        let std = gain * theta / (fan_in as f64).sqrt();
        let dist = Normal::new(0.25 * std, std).expect("finite std");
        for w in net.weights_mut(l) {
            *w = dist.sample(&mut rng);
        }
    }
}

/// Conv + dense + dense classifier used for the desk-scale experiments.
pub fn toy_template(input: Shape, classes: usize, neuron: NeuronParams, seed: u64) -> Result<NetworkSpec> {
    let conv = LayerKind::Conv2d {
        in_ch: input.channels,
        out_ch: 4,
        kernel: 3,
        stride: 2,
        pad: 1,
    };
    let conv_out = conv.output_shape(input)?;
    let hidden = 24;
    let layers = vec![
        LayerSpec {
            kind: conv,
            neuron,
            weights: vec![0.0; conv.weight_count()],
        },
        LayerSpec {
            kind: LayerKind::Dense {
                inputs: conv_out.len(),
                outputs: hidden,
            },
            neuron,
            weights: vec![0.0; conv_out.len() * hidden],
        },
        LayerSpec {
            kind: LayerKind::Dense {
                inputs: hidden,
                outputs: classes,
            },
            neuron,
            weights: vec![0.0; hidden * classes],
        },
    ];
    let mut net = NetworkSpec::new(input, layers, 1.0)?;
    init_weights(&mut net, 2.0, seed);
    Ok(net)
}

pub fn train_toy(template: &NetworkSpec, ds: &LabeledDataset, cfg: &TrainConfig) -> Result<NetworkSpec> {
    train_toy_with(template, ds, cfg, |_, _| {})
}

/// Like [`train_toy`], reporting `(epoch, mean loss)` after every epoch.
pub fn train_toy_with(
    template: &NetworkSpec,
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<NetworkSpec> {
    if ds.is_empty() {
        return Err(Error::Param("training set is empty".into()));
    }
    if ds.shape != template.input_shape() {
        return Err(Error::Shape(format!(
            "dataset {} does not match network input {}",
            ds.shape,
            template.input_shape()
        )));
    }
    if ds.class_count > template.class_count() {
        return Err(Error::Shape(format!(
            "{} classes but only {} output neurons",
            ds.class_count,
            template.class_count()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Param("batch size must be positive".into()));
    }

    // Canonical sample order so the result does not depend on how the
    // dataset happened to be ordered.
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&ds.samples[a], &ds.samples[b]);
        sa.label
            .cmp(&sb.label)
            .then_with(|| sa.input.as_slice().cmp(sb.input.as_slice()))
    });

    let mut net = template.clone();
    let depth = net.num_layers();
    let mut adams: Vec<AdamState> = (0..depth)
        .map(|l| AdamState::new(net.layer(l).weights.len(), cfg.lr))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let classes = net.class_count();
    let mode = SpikeMode::Hard;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, Vec<Vec<f64>>)> = batch
                .par_iter()
                .map(|&i| {
                    let s = &ds.samples[i];
                    let steps = s.input.steps();
                    let mut tape = forward_taped(&net, s.input.to_f64(), steps, depth, mode);
                    tape.set_beta(cfg.surrogate_beta);
                    let out = tape.layer_output(depth - 1);
                    let mut counts = vec![0.0; classes];
                    for frame in out.chunks_exact(classes) {
                        for (c, v) in counts.iter_mut().zip(frame) {
                            *c += v;
                        }
                    }
                    let mut loss = 0.0;
                    let mut d_rate = vec![0.0; classes];
                    for c in 0..classes {
                        let target = if c == s.label { cfg.rate_true } else { cfg.rate_false };
                        let err = counts[c] / steps as f64 - target;
                        loss += err * err;
                        d_rate[c] = 2.0 * err / steps as f64;
                    }
                    let g_out: Vec<f64> = (0..steps * classes).map(|k| d_rate[k % classes]).collect();
                    let (_, gw) = backward_layers(&net, &tape, g_out, false, true);
                    (loss, gw.expect("weight gradients requested"))
                })
                .collect();

            // fixed-order reduction
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Vec<f64>> = (0..depth).map(|l| vec![0.0; net.layer(l).weights.len()]).collect();
            for (loss, gw) in &results {
                epoch_loss += loss;
                for (acc, g) in grads.iter_mut().zip(gw) {
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += v * scale;
                    }
                }
            }
            for (l, g) in grads.iter().enumerate() {
                adams[l].step(net.weights_mut(l), g);
            }
        }
        let mean = epoch_loss / ds.len() as f64;
        if !mean.is_finite() || net.layers().iter().any(|l| l.weights.iter().any(|w| !w.is_finite())) {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        on_epoch(epoch, mean);
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticParams};
    use crate::snn::accuracy;

    fn tiny() -> (NetworkSpec, LabeledDataset) {
        let ds = generate_synthetic(&SyntheticParams {
            classes: 2,
            samples_per_class: 6,
            shape: Shape::new(2, 6, 6),
            steps: 16,
            ..SyntheticParams::default()
        })
        .unwrap();
        let net = toy_template(ds.shape, 2, NeuronParams::default(), 3).unwrap();
        (net, ds)
    }

    #[test]
    fn zero_epochs_leave_weights_unchanged() {
        let (net, ds) = tiny();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert_eq!(train_toy(&net, &ds, &cfg).unwrap(), net);
    }

    #[test]
    fn dataset_order_does_not_matter() {
        let (net, ds) = tiny();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let a = train_toy(&net, &ds, &cfg).unwrap();
        let mut rev = ds.clone();
        rev.samples.reverse();
        let b = train_toy(&net, &rev, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, net);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let (net, ds) = tiny();
        let empty = LabeledDataset::new(ds.shape, ds.steps, 2);
        assert!(matches!(train_toy(&net, &empty, &TrainConfig::default()), Err(Error::Param(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let (net, ds) = tiny();
        let cfg = TrainConfig {
            lr: f64::INFINITY,
            epochs: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(train_toy(&net, &ds, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn training_improves_a_tiny_problem() {
        let (net, ds) = tiny();
        let cfg = TrainConfig {
            epochs: 15,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let trained = train_toy(&net, &ds, &cfg).unwrap();
        assert!(accuracy(&trained, &ds, None).unwrap() >= 0.9);
    }
}
