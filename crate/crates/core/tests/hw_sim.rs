//! Accelerator model against the tensor reference.

mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snn_trojan::attack::TriggerPattern;
use snn_trojan::data::SpikeTensor;
use snn_trojan::hw::{
    build_system, diff_traces, run_attack_sequence, AttackConfig, FsmState, HtConfig, HwTrace, System, TraceKind,
    TriggerChecker,
};
use snn_trojan::snn::{infer, FaultKind, FaultOverride, NetworkSpec, NeuronAddress, Record};

fn reference_layers(net: &NetworkSpec, x: &SpikeTensor, fault: Option<&FaultOverride>) -> Vec<SpikeTensor> {
    infer(net, x, fault, &Record::All)
        .unwrap()
        .layers
        .into_iter()
        .map(|l| l.unwrap())
        .collect()
}

fn random_trojan<R: Rng>(rng: &mut R, net: &NetworkSpec) -> NeuronAddress {
    let l = rng.random_range(0..net.num_layers());
    NeuronAddress::new(l, rng.random_range(0..net.layer_size(l)))
}

fn cores_for<R: Rng>(rng: &mut R, net: &NetworkSpec) -> usize {
    rng.random_range(1..=net.neuron_count().min(5))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn clean_and_dormant_systems_match_reference(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = common::random_net(&mut rng);
        let steps = rng.random_range(1..20);
        let density = rng.random_range(0.05..0.6);
        let x = common::random_tensor(&mut rng, steps, net.input_shape(), density);
        let reference = reference_layers(&net, &x, None);

        let cores = cores_for(&mut rng, &net);
        let mut clean = build_system(&net, cores, None).unwrap();
        clean.set_recording(true);
        let out = clean.run(&x).unwrap();
        prop_assert_eq!(&out.layers, &reference);
        clean.trace().check().unwrap();

        // a pattern longer than the run can never match
        let trojan = random_trojan(&mut rng, &net);
        let pattern = TriggerPattern::parse(&"1".repeat(steps + 1), 0).unwrap();
        let mut dormant = build_system(&net, cores, Some(HtConfig { trojan, pattern })).unwrap();
        dormant.set_recording(true);
        let out = dormant.run(&x).unwrap();
        prop_assert_eq!(&out.layers, &reference);
        prop_assert_eq!(dormant.fsm_state(), FsmState::A);
        prop_assert_eq!(dormant.trace(), clean.trace());
    }

    #[test]
    fn activated_system_matches_saturated_reference(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = common::random_net(&mut rng);
        let trojan = random_trojan(&mut rng, &net);
        let ht = HtConfig { trojan, pattern: TriggerPattern::parse("1", 0).unwrap() };
        let mut sys = build_system(&net, cores_for(&mut rng, &net), Some(ht)).unwrap();

        // drive until the Trojan fires once
        let wake = common::random_tensor(&mut rng, 30, net.input_shape(), 0.7);
        sys.run(&wake).unwrap();
        prop_assume!(sys.latched());

        let steps = rng.random_range(1..20);
        let density = rng.random_range(0.05..0.6);
        let x = common::random_tensor(&mut rng, steps, net.input_shape(), density);
        sys.reset_dynamics();
        let fakes = sys.stats().fake_spikes;
        sys.set_recording(true);
        let out = sys.run(&x).unwrap();
        let fault = FaultOverride::new(trojan, FaultKind::Saturated);
        prop_assert_eq!(&out.layers, &reference_layers(&net, &x, Some(&fault)));
        prop_assert_eq!(sys.stats().fake_spikes - fakes, steps as u64);
        prop_assert!(out.layers[trojan.layer].train(trojan.neuron).iter().all(|&b| b == 1));
        let trace = sys.take_trace();
        trace.check().unwrap();
        let per_step = (0..steps as u64)
            .map(|t| trace.events.iter().filter(|e| e.timestep == 30 + t && matches!(e.kind, TraceKind::FakeSpike { .. })).count())
            .collect::<Vec<_>>();
        prop_assert!(per_step.iter().all(|&n| n == 1), "{per_step:?}");
        // neurons beside the Trojan in its own layer are untouched
        let clean = reference_layers(&net, &x, None);
        for i in (0..net.layer_size(trojan.layer)).filter(|&i| i != trojan.neuron) {
            prop_assert_eq!(out.layers[trojan.layer].train(i), clean[trojan.layer].train(i));
        }
    }

    #[test]
    fn checker_latches_iff_pattern_occurs(
        bits in prop::collection::vec(0u8..2, 1..10),
        stream in prop::collection::vec(0u8..2, 0..40),
    ) {
        prop_assume!(bits.contains(&1));
        let p = TriggerPattern::new(bits.clone(), 0).unwrap();
        let mut c = TriggerChecker::new(&p);
        let mut first = None;
        for (k, &b) in stream.iter().enumerate() {
            if c.step(b == 1) && first.is_none() {
                first = Some(k);
            }
        }
        let oracle = stream.windows(bits.len()).position(|w| w == &bits[..]).map(|s| s + bits.len() - 1);
        prop_assert_eq!(first, oracle);
        prop_assert_eq!(c.latched(), oracle.is_some());
    }
}

#[test]
fn runs_replay_bit_for_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = common::random_net(&mut rng);
    let x = common::random_tensor(&mut rng, 25, net.input_shape(), 0.5);
    let trojan = random_trojan(&mut rng, &net);
    let ht = HtConfig {
        trojan,
        pattern: TriggerPattern::parse("1", 0).unwrap(),
    };
    let run = || -> (HwTrace, Vec<SpikeTensor>) {
        let mut sys = build_system(&net, 2.min(net.neuron_count()), Some(ht.clone())).unwrap();
        sys.set_recording(true);
        let out = sys.run(&x).unwrap();
        sys.run(&x).unwrap();
        (sys.take_trace(), out.layers)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    a.check().unwrap();
}

#[test]
fn identical_traces_diff_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = common::random_net(&mut rng);
    let x = common::random_tensor(&mut rng, 12, net.input_shape(), 0.5);
    let mut sys = build_system(&net, 1, None).unwrap();
    sys.set_recording(true);
    sys.run(&x).unwrap();
    let t = sys.take_trace();
    assert!(diff_traces(&net, &t, &t).unwrap().is_zero());
}

#[test]
fn input_shape_is_checked() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = common::random_net(&mut rng);
    let mut sys = build_system(&net, 1, None).unwrap();
    let wrong = SpikeTensor::zeros(3, snn_trojan::data::Shape::flat(net.input_shape().len() + 1));
    assert!(sys.run(&wrong).is_err());
}

fn fixture_system(f: &common::Fixture, cores: usize) -> System {
    let ht = HtConfig {
        trojan: f.trojan,
        pattern: f.trigger.pattern.clone(),
    };
    build_system(&f.net, cores, Some(ht)).unwrap()
}

#[test]
fn fixture_partition_over_four_cores() {
    let f = common::fixture();
    let sys = fixture_system(f, 4);
    let ranges: Vec<_> = sys.cores().iter().map(|c| c.addresses.clone()).collect();
    assert_eq!(ranges, vec![0..71, 71..142, 142..213, 213..284]);
    let flagged: Vec<u32> = sys.cores().iter().filter(|c| c.has_ht).map(|c| c.index).collect();
    assert_eq!(flagged, vec![3]);
    assert_eq!(sys.cores()[3].layers, vec![213..256, 0..24, 0..4]);
}

#[test]
fn fixture_attack_trace() {
    let f = common::fixture();
    let mut sys = fixture_system(f, 4);
    let sample = &f.test.samples[0].input;
    let cfg = AttackConfig {
        record_trace: true,
        ..AttackConfig::default()
    };
    let o = run_attack_sequence(&mut sys, sample, &f.trigger.input, &cfg).unwrap();
    let trace = o.trace.unwrap();
    trace.check().unwrap();
    let t_act = o.activated_at.expect("trigger activates the payload");
    let sample_steps = sample.steps() as u64;
    let gap = cfg.gap_steps as u64;
    // the latch sets on the trigger's last step
    assert_eq!(t_act, sample_steps + gap + f.trigger.input.steps() as u64 - 1);

    let transitions = trace.fsm_transitions();
    assert_eq!(transitions[0], (t_act, FsmState::A, FsmState::B));
    assert!(transitions.iter().all(|&(t, _, _)| t >= t_act));
    let last_step = sys.stats().timesteps;
    for t in t_act + 1..last_step {
        let fakes = trace
            .events
            .iter()
            .filter(|e| e.timestep == t && matches!(e.kind, TraceKind::FakeSpike { .. }))
            .count();
        assert_eq!(fakes, 1, "timestep {t}");
    }
    assert!(transitions.iter().any(|&(_, from, to)| from == FsmState::B && to == FsmState::C));
    assert_eq!(o.fake_spikes_after, sample_steps);
    assert!(o.after.layers[f.trojan.layer].train(f.trojan.neuron).iter().all(|&b| b == 1));
}
