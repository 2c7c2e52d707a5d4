//! Shared fixture for the integration tests: synthetic 4-class data, a
//! trained conv+dense network, its fault campaign, the chosen Trojan, its
//! trigger pattern and a synthesized input trigger.
#![allow(dead_code)]

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;
use snn_trojan::attack::{
    fault_campaign, pick_trojan, record_outputs, select_pattern_for, FaultReport, RecordedOutputs, TriggerPattern,
    DEFAULT_CANDIDATE_BUDGET,
};
use snn_trojan::data::{generate_synthetic, LabeledDataset, Shape, SpikeTensor, SyntheticParams};
use snn_trojan::grad::{toy_template, train_toy, TrainConfig};
use snn_trojan::snn::{FaultKind, LayerKind, LayerSpec, NetworkSpec, NeuronAddress, NeuronParams};
use snn_trojan::trigger::{generate_trigger, TriggerArtifact, TriggerSearchConfig};

pub const TRAIN_SAMPLES: usize = 150;
pub const TEMPLATE_SEED: u64 = 11;
pub const PATTERN_D_MAX: usize = 32;

pub struct Fixture {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Train and test together: the "complete dataset" the pattern must
    /// avoid.
    pub all: LabeledDataset,
    pub net: NetworkSpec,
    pub train_time: Duration,
    /// Dead and saturated campaign on the test set.
    pub report: FaultReport,
    pub trojan: NeuronAddress,
    pub recorded: RecordedOutputs,
    pub pattern: TriggerPattern,
    pub trigger: TriggerArtifact,
}

pub fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let all = generate_synthetic(&SyntheticParams::default()).expect("fixture data");
        let (train, test) = all.clone().split(TRAIN_SAMPLES);
        let template = toy_template(train.shape, train.class_count, NeuronParams::default(), TEMPLATE_SEED)
            .expect("fixture template");
        let started = Instant::now();
        let net = train_toy(&template, &train, &TrainConfig::default()).expect("fixture training");
        let train_time = started.elapsed();
        let report =
            fault_campaign(&net, &test, &[FaultKind::Dead, FaultKind::Saturated], None).expect("fixture campaign");
        let trojan = pick_trojan(&report).expect("fixture trojan");
        let recorded = record_outputs(&net, &all, trojan).expect("fixture recording");
        let pattern =
            select_pattern_for(&net, &recorded, PATTERN_D_MAX, DEFAULT_CANDIDATE_BUDGET).expect("fixture pattern");
        let trigger = generate_trigger(&net, trojan, &pattern, Some(&recorded), &TriggerSearchConfig::default())
            .expect("fixture trigger");
        Fixture {
            train,
            test,
            all,
            net,
            train_time,
            report,
            trojan,
            recorded,
            pattern,
            trigger,
        }
    })
}

pub fn random_tensor<R: Rng>(rng: &mut R, steps: usize, shape: Shape, density: f64) -> SpikeTensor {
    let bits = (0..steps * shape.len()).map(|_| rng.random_bool(density) as u8).collect();
    SpikeTensor::from_bits(steps, shape, bits).expect("binary")
}

pub fn random_neuron<R: Rng>(rng: &mut R) -> NeuronParams {
    let theta = rng.random_range(0.5..1.5);
    NeuronParams {
        alpha: rng.random_range(0.5..=1.0),
        theta,
        v_reset: rng.random_range(-0.3..0.2),
        tau_ref: rng.random_range(0..3),
    }
}

/// A small random network: optional conv and pool stages, then one or two
/// dense layers. Weights lean positive so that neurons actually fire.
pub fn random_net<R: Rng>(rng: &mut R) -> NetworkSpec {
    let input = Shape::new(rng.random_range(1..3), 4, 4);
    let mut layers = Vec::new();
    let mut shape = input;
    if rng.random_bool(0.6) {
        let kind = LayerKind::Conv2d {
            in_ch: shape.channels,
            out_ch: rng.random_range(1..4),
            kernel: rng.random_range(1..4),
            stride: rng.random_range(1..3),
            pad: rng.random_range(0..2),
        };
        shape = kind.output_shape(shape).expect("valid conv");
        layers.push((kind, random_neuron(rng)));
        if shape.height.is_multiple_of(2) && shape.width.is_multiple_of(2) && rng.random_bool(0.5) {
            let kind = LayerKind::SumPool { factor: 2 };
            shape = kind.output_shape(shape).expect("valid pool");
            layers.push((kind, random_neuron(rng)));
        }
    }
    for _ in 0..rng.random_range(1..3) {
        let kind = LayerKind::Dense {
            inputs: shape.len(),
            outputs: rng.random_range(2..7),
        };
        shape = kind.output_shape(shape).expect("valid dense");
        layers.push((kind, random_neuron(rng)));
    }
    let specs = layers
        .into_iter()
        .map(|(kind, neuron)| LayerSpec {
            kind,
            neuron,
            weights: (0..kind.weight_count()).map(|_| rng.random_range(-0.4..0.9)).collect(),
        })
        .collect();
    NetworkSpec::new(input, specs, 1.0).expect("valid random net")
}
