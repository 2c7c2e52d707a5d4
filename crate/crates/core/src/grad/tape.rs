//! Taped forward pass and backpropagation through time with a fast-sigmoid
//! surrogate for the spike threshold.
//!
//! Reset is treated as a constant (the hard spike that triggers it has zero
//! derivative almost everywhere) and refractory steps pass the membrane
//! gradient straight through while blocking the input path.

use crate::data::SpikeTensor;
use crate::error::{Error, Result};
use crate::snn::infer::{
    run_layer, surrogate, SpikeMode, STATUS_FIRED, STATUS_FORCED, STATUS_REFRACTORY,
};
use crate::snn::{NetworkSpec, NeuronAddress};

pub const DEFAULT_SURROGATE_BETA: f64 = 5.0;

#[derive(Clone, Debug)]
struct LayerTape {
    spikes: Vec<f64>,
    potentials: Vec<f64>,
    status: Vec<u8>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    steps: usize,
    beta: f64,
    input: Vec<f64>,
    layers: Vec<LayerTape>,
    probe: Option<(NeuronAddress, usize)>,
}

impl Tape {
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of layers that were run (the last one is the probed layer).
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub(crate) fn set_beta(&mut self, beta: f64) {
        self.beta = beta;
    }

    /// Output of a taped layer, time-major.
    pub fn layer_output(&self, l: usize) -> &[f64] {
        &self.layers[l].spikes
    }
}

/// Runs layers `0..depth` recording potentials and spike status.
pub(crate) fn forward_taped(
    net: &NetworkSpec,
    input: Vec<f64>,
    steps: usize,
    depth: usize,
    mode: SpikeMode,
) -> Tape {
    let mut layers: Vec<LayerTape> = Vec::with_capacity(depth);
    for l in 0..depth {
        let src = if l == 0 { &input } else { &layers[l - 1].spikes };
        let run = run_layer(net, l, src, steps, mode, None, true);
        layers.push(LayerTape {
            spikes: run.spikes,
            potentials: run.potentials,
            status: run.status,
        });
    }
    let beta = match mode {
        SpikeMode::Soft { beta } => beta,
        SpikeMode::Hard => DEFAULT_SURROGATE_BETA,
    };
    Tape {
        steps,
        beta,
        input,
        layers,
        probe: None,
    }
}

fn window_of(tape: &Tape, net: &NetworkSpec, trojan: NeuronAddress, d: usize) -> Vec<f64> {
    let n = net.layer_size(trojan.layer);
    let out = &tape.layers[trojan.layer].spikes;
    (tape.steps - d..tape.steps)
        .map(|t| out[t * n + trojan.neuron])
        .collect()
}

fn check_probe(net: &NetworkSpec, steps: usize, trojan: NeuronAddress, d: usize) -> Result<()> {
    net.check_address(trojan)?;
    if d == 0 || d > steps {
        return Err(Error::Param(format!("window {d} must lie in 1..={steps}")));
    }
    Ok(())
}

/// Hard forward pass up to the Trojan neuron's layer. Returns the neuron's
/// binary output over the last `d` steps.
pub fn forward_with_tape(
    net: &NetworkSpec,
    input: &SpikeTensor,
    trojan: NeuronAddress,
    d: usize,
    beta: f64,
) -> Result<(Vec<u8>, Tape)> {
    if input.shape() != net.input_shape() {
        return Err(Error::Shape(format!(
            "input {} does not match network input {}",
            input.shape(),
            net.input_shape()
        )));
    }
    check_probe(net, input.steps(), trojan, d)?;
    let mut tape = forward_taped(net, input.to_f64(), input.steps(), trojan.layer + 1, SpikeMode::Hard);
    tape.beta = beta;
    tape.probe = Some((trojan, d));
    let window = window_of(&tape, net, trojan, d)
        .into_iter()
        .map(|s| s as u8)
        .collect();
    Ok((window, tape))
}

/// Forward pass where every layer transmits the surrogate's primitive
/// instead of hard spikes; the backward pass is then the exact gradient.
/// `input` may hold arbitrary real values.
pub fn forward_with_tape_soft(
    net: &NetworkSpec,
    input: &[f64],
    steps: usize,
    trojan: NeuronAddress,
    d: usize,
    beta: f64,
) -> Result<(Vec<f64>, Tape)> {
    if input.len() != steps * net.input_shape().len() {
        return Err(Error::Shape(format!(
            "{} input values for {steps} steps of {}",
            input.len(),
            net.input_shape()
        )));
    }
    check_probe(net, steps, trojan, d)?;
    let mut tape = forward_taped(
        net,
        input.to_vec(),
        steps,
        trojan.layer + 1,
        SpikeMode::Soft { beta },
    );
    tape.probe = Some((trojan, d));
    let window = window_of(&tape, net, trojan, d);
    Ok((window, tape))
}

/// Gradient of `sum_k residual[k]^2` (the squared window error, with
/// `residual = O - P`) with respect to every input cell.
pub fn backward_to_input(net: &NetworkSpec, tape: &Tape, residual: &[f64]) -> Result<Vec<f64>> {
    let (trojan, d) = tape
        .probe
        .ok_or_else(|| Error::Param("tape was not recorded for a probe neuron".into()))?;
    if residual.len() != d {
        return Err(Error::Shape(format!(
            "residual of length {} for a window of {d}",
            residual.len()
        )));
    }
    let n = net.layer_size(trojan.layer);
    let mut g_out = vec![0.0; tape.steps * n];
    for (k, r) in residual.iter().enumerate() {
        let t = tape.steps - d + k;
        g_out[t * n + trojan.neuron] = 2.0 * r;
    }
    let (g_in, _) = backward_layers(net, tape, g_out, true, false);
    Ok(g_in.expect("input gradient requested"))
}

/// Backpropagates `g_out` (gradient on the last taped layer's output)
/// through every taped layer. Returns the input gradient and/or the weight
/// gradients of each taped layer.
pub(crate) fn backward_layers(
    net: &NetworkSpec,
    tape: &Tape,
    mut g_out: Vec<f64>,
    want_input: bool,
    want_weights: bool,
) -> (Option<Vec<f64>>, Option<Vec<Vec<f64>>>) {
    let steps = tape.steps;
    let beta = tape.beta;
    let mut weight_grads: Vec<Vec<f64>> = Vec::new();
    let mut g_input = None;

    for l in (0..tape.layers.len()).rev() {
        let layer = net.layer(l);
        let fan = net.fanout(l);
        let n = net.layer_size(l);
        let n_in = fan.sources();
        let lt = &tape.layers[l];
        let src = if l == 0 { &tape.input } else { &tape.layers[l - 1].spikes };
        let (alpha, theta) = (layer.neuron.alpha, layer.neuron.theta);

        let mut g_u = vec![0.0; steps * n];
        let mut g_v = vec![0.0; n];
        for t in (0..steps).rev() {
            for i in 0..n {
                let k = t * n + i;
                match lt.status[k] {
                    STATUS_REFRACTORY => {}
                    STATUS_FORCED => g_v[i] = 0.0,
                    code => {
                        let keep = if code == STATUS_FIRED { 0.0 } else { 1.0 };
                        let g = g_out[k] * surrogate(lt.potentials[k] - theta, beta) + g_v[i] * keep;
                        g_u[k] = g;
                        g_v[i] = g * alpha;
                    }
                }
            }
        }

        let need_in = l > 0 || want_input;
        let mut g_in = if need_in { vec![0.0; steps * n_in] } else { Vec::new() };
        let mut g_w = if want_weights { vec![0.0; layer.weights.len()] } else { Vec::new() };
        for t in 0..steps {
            let gu = &g_u[t * n..(t + 1) * n];
            for j in 0..n_in {
                let s = src[t * n_in + j];
                let targets = fan.targets(j);
                if need_in {
                    let mut acc = 0.0;
                    for &(tgt, w) in targets {
                        acc += layer.weights[w as usize] * gu[tgt as usize];
                    }
                    g_in[t * n_in + j] = acc;
                }
                if want_weights && s != 0.0 {
                    for &(tgt, w) in targets {
                        g_w[w as usize] += gu[tgt as usize] * s;
                    }
                }
            }
        }
        if want_weights {
            weight_grads.push(g_w);
        }
        if l == 0 {
            if want_input {
                g_input = Some(g_in);
            }
        } else {
            g_out = g_in;
        }
    }
    weight_grads.reverse();
    (g_input, want_weights.then_some(weight_grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Shape;
    use crate::snn::{infer, LayerKind, LayerSpec, NeuronParams, Record};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_net(rng: &mut ChaCha8Rng) -> NetworkSpec {
        let neuron = NeuronParams {
            alpha: rng.random_range(0.6..1.0),
            theta: 1.0,
            v_reset: 0.0,
            tau_ref: rng.random_range(0..3),
        };
        let mut w = |n: usize, scale: f64| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-scale..scale) + 0.2 * scale).collect()
        };
        NetworkSpec::new(
            Shape::new(2, 4, 4),
            vec![
                LayerSpec {
                    kind: LayerKind::Conv2d {
                        in_ch: 2,
                        out_ch: 2,
                        kernel: 3,
                        stride: 1,
                        pad: 1,
                    },
                    neuron,
                    weights: w(36, 0.8),
                },
                LayerSpec {
                    kind: LayerKind::Dense {
                        inputs: 32,
                        outputs: 5,
                    },
                    neuron,
                    weights: w(160, 0.6),
                },
            ],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn tape_window_matches_inference() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = random_net(&mut rng);
        for _ in 0..100 {
            let steps = rng.random_range(3..12);
            let bits = (0..steps * 32).map(|_| rng.random_bool(0.4) as u8).collect();
            let x = SpikeTensor::from_bits(steps, Shape::new(2, 4, 4), bits).unwrap();
            let trojan = NeuronAddress::new(rng.random_range(0..2), 0);
            let trojan = NeuronAddress::new(trojan.layer, rng.random_range(0..net.layer_size(trojan.layer)));
            let d = rng.random_range(1..=steps);
            let (window, _) = forward_with_tape(&net, &x, trojan, d, 5.0).unwrap();
            let inf = infer(&net, &x, None, &Record::All).unwrap();
            let train = inf.layers[trojan.layer].as_ref().unwrap().train(trojan.neuron);
            assert_eq!(window, train[steps - d..].to_vec());
        }
    }

    #[test]
    fn zero_input_gives_zero_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = random_net(&mut rng);
        let x = SpikeTensor::zeros(6, Shape::new(2, 4, 4));
        let (w, _) = forward_with_tape(&net, &x, NeuronAddress::new(1, 3), 4, 5.0).unwrap();
        assert_eq!(w, vec![0; 4]);
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = random_net(&mut rng);
        let bits = (0..8 * 32).map(|_| rng.random_bool(0.5) as u8).collect();
        let x = SpikeTensor::from_bits(8, Shape::new(2, 4, 4), bits).unwrap();
        let (_, tape) = forward_with_tape(&net, &x, NeuronAddress::new(1, 1), 3, 5.0).unwrap();
        let g = backward_to_input(&net, &tape, &[0.0; 3]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(backward_to_input(&net, &tape, &[0.0; 2]).is_err());
    }

    #[test]
    fn single_neuron_single_step_closed_form() {
        let w = 0.7;
        let net = NetworkSpec::new(
            Shape::flat(1),
            vec![LayerSpec {
                kind: LayerKind::Dense {
                    inputs: 1,
                    outputs: 1,
                },
                neuron: NeuronParams {
                    alpha: 1.0,
                    theta: 1.0,
                    v_reset: 0.0,
                    tau_ref: 0,
                },
                weights: vec![w],
            }],
            1.0,
        )
        .unwrap();
        let x = SpikeTensor::from_bits(1, Shape::flat(1), vec![1]).unwrap();
        let (o, tape) = forward_with_tape(&net, &x, NeuronAddress::new(0, 0), 1, 5.0).unwrap();
        assert_eq!(o, vec![0]);
        // L = (O - 1)^2, dL/dO = -2, dO/du = 1/(5|0.7-1|+1)^2, du/dI = w
        let g = backward_to_input(&net, &tape, &[-1.0]).unwrap();
        let expected = -2.0 / (5.0f64 * 0.3 + 1.0).powi(2) * w;
        assert!((g[0] - expected).abs() < 1e-15, "{} vs {expected}", g[0]);
    }
}
