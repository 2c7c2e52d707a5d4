//! Timestep-synchronous model of a multi-core AER accelerator.
//!
//! Neurons get global addresses (layers laid end to end) and are split into
//! contiguous address ranges, one per core. Each timestep is processed layer
//! by layer: the router delivers the previous layer's spikes (or the
//! external input) to every core hosting a target, each core accumulates
//! them in ascending source order, updates its neurons with the shared LIF
//! kernel and emits its spikes through a request/acknowledge handshake.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::checker::TriggerChecker;
use super::fsm::{step_fsm, FsmInputs, FsmState};
use super::trace::{HwTrace, Source, TraceEvent, TraceKind};
use crate::attack::TriggerPattern;
use crate::data::{Event, SpikeTensor};
use crate::error::{Error, Result};
use crate::snn::{lif_step, predict_from_counts, NetworkSpec, NeuronAddress, NeuronState};

/// Hardware Trojan embedded in the core hosting `trojan`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HtConfig {
    pub trojan: NeuronAddress,
    pub pattern: TriggerPattern,
}

/// Static description of one core.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreConfig {
    pub index: u32,
    /// Hosted global addresses.
    pub addresses: Range<u32>,
    /// Hosted neuron indices, per layer (empty ranges for absent layers).
    pub layers: Vec<Range<usize>>,
    pub has_ht: bool,
}

/// Layer offsets for converting between global and layered addresses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AddressMap {
    offsets: Vec<u32>,
}

impl AddressMap {
    pub fn new(net: &NetworkSpec) -> Self {
        let mut offsets = Vec::with_capacity(net.num_layers() + 1);
        let mut acc = 0u32;
        offsets.push(0);
        for l in 0..net.num_layers() {
            acc += net.layer_size(l) as u32;
            offsets.push(acc);
        }
        AddressMap { offsets }
    }

    pub fn total(&self) -> u32 {
        *self.offsets.last().expect("nonempty")
    }

    pub fn global(&self, a: NeuronAddress) -> u32 {
        self.offsets[a.layer] + a.neuron as u32
    }

    pub fn local(&self, g: u32) -> Option<NeuronAddress> {
        if g >= self.total() {
            return None;
        }
        let layer = self.offsets.partition_point(|&o| o <= g) - 1;
        Some(NeuronAddress::new(layer, (g - self.offsets[layer]) as usize))
    }
}

/// Immutable part of a system, shared between clones.
#[derive(Debug)]
struct Fabric {
    net: NetworkSpec,
    map: AddressMap,
    cores: Vec<CoreConfig>,
    /// `routes[l][j]`: cores hosting a target of input `j` of layer `l`.
    routes: Vec<Vec<Vec<u32>>>,
    ht: Option<(HtConfig, u32)>,
}

/// Counters kept whether or not the trace is recorded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemStats {
    pub timesteps: u64,
    pub cycles: u64,
    pub true_spikes: u64,
    pub fake_spikes: u64,
    pub requests: u64,
    pub acks: u64,
}

#[derive(Clone, Debug)]
pub struct System {
    fabric: Arc<Fabric>,
    states: Vec<Vec<NeuronState>>,
    acc: Vec<Vec<f64>>,
    checker: Option<TriggerChecker>,
    fsm: FsmState,
    activated_at: Option<u64>,
    stats: SystemStats,
    recording: bool,
    trace: HwTrace,
}

/// Observed (post-multiplexer) spikes of every layer for one run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOutput {
    pub layers: Vec<SpikeTensor>,
    pub counts: Vec<u32>,
    pub prediction: usize,
}

impl RunOutput {
    pub fn output(&self) -> &SpikeTensor {
        self.layers.last().expect("at least one layer")
    }
}

/// Maps the network onto `cores` cores of contiguous address ranges and
/// derives the router tables.
pub fn build_system(net: &NetworkSpec, cores: usize, ht: Option<HtConfig>) -> Result<System> {
    let map = AddressMap::new(net);
    let total = map.total() as usize;
    if cores == 0 || cores > total {
        return Err(Error::Param(format!("core count must be in 1..={total}, got {cores}")));
    }
    let bounds: Vec<u32> = (0..=cores).map(|c| (c * total / cores) as u32).collect();
    let core_of = |g: u32| -> u32 { (bounds.partition_point(|&b| b <= g) - 1) as u32 };
    let ht = match ht {
        None => None,
        Some(h) => {
            net.check_address(h.trojan).map_err(|e| Error::Param(format!("Trojan neuron is not mapped: {e}")))?;
            let core = core_of(map.global(h.trojan));
            Some((h, core))
        }
    };
    let mut core_cfgs = Vec::with_capacity(cores);
    for c in 0..cores {
        let range = bounds[c]..bounds[c + 1];
        let layers = (0..net.num_layers())
            .map(|l| {
                let lo = map.offsets[l].max(range.start);
                let hi = map.offsets[l + 1].min(range.end);
                if hi <= lo {
                    0..0
                } else {
                    (lo - map.offsets[l]) as usize..(hi - map.offsets[l]) as usize
                }
            })
            .collect();
        core_cfgs.push(CoreConfig {
            index: c as u32,
            addresses: range,
            layers,
            has_ht: ht.as_ref().is_some_and(|(_, hc)| *hc == c as u32),
        });
    }
    debug_assert!((0..total as u32).all(|g| core_cfgs[core_of(g) as usize].addresses.contains(&g)));

    let routes = (0..net.num_layers())
        .map(|l| {
            let fan = net.fanout(l);
            (0..fan.sources())
                .map(|j| {
                    let mut dst: Vec<u32> = fan
                        .targets(j)
                        .iter()
                        .map(|&(t, _)| core_of(map.offsets[l] + t))
                        .collect();
                    dst.sort_unstable();
                    dst.dedup();
                    dst
                })
                .collect()
        })
        .collect();

    let checker = ht.as_ref().map(|(h, _)| TriggerChecker::new(&h.pattern));
    let states = (0..net.num_layers())
        .map(|l| vec![NeuronState::rest(&net.layer(l).neuron); net.layer_size(l)])
        .collect();
    let acc = (0..net.num_layers()).map(|l| vec![0.0; net.layer_size(l)]).collect();
    Ok(System {
        fabric: Arc::new(Fabric {
            net: net.clone(),
            map,
            cores: core_cfgs,
            routes,
            ht,
        }),
        states,
        acc,
        checker,
        fsm: FsmState::A,
        activated_at: None,
        stats: SystemStats::default(),
        recording: false,
        trace: HwTrace::default(),
    })
}

impl System {
    pub fn net(&self) -> &NetworkSpec {
        &self.fabric.net
    }

    pub fn cores(&self) -> &[CoreConfig] {
        &self.fabric.cores
    }

    pub fn address_map(&self) -> &AddressMap {
        &self.fabric.map
    }

    pub fn ht(&self) -> Option<&HtConfig> {
        self.fabric.ht.as_ref().map(|(h, _)| h)
    }

    pub fn fsm_state(&self) -> FsmState {
        self.fsm
    }

    pub fn latched(&self) -> bool {
        self.checker.as_ref().is_some_and(|c| c.latched())
    }

    /// Timestep (counted since power-on) at which the latch was set.
    pub fn activated_at(&self) -> Option<u64> {
        self.activated_at
    }

    pub fn stats(&self) -> SystemStats {
        self.stats
    }

    /// Starts or stops appending to the trace.
    pub fn set_recording(&mut self, on: bool) {
        self.recording = on;
    }

    pub fn trace(&self) -> &HwTrace {
        &self.trace
    }

    pub fn take_trace(&mut self) -> HwTrace {
        std::mem::take(&mut self.trace)
    }

    /// Returns every neuron to rest and empties the checker's shift
    /// register. The latch and the FSM keep their state.
    pub fn reset_dynamics(&mut self) {
        let net = &self.fabric.net;
        for (l, st) in self.states.iter_mut().enumerate() {
            st.fill(NeuronState::rest(&net.layer(l).neuron));
        }
        if let Some(c) = &mut self.checker {
            c.clear_register();
        }
    }

    /// Full power cycle: dynamics, latch, FSM, counters and trace.
    pub fn power_on(&mut self) {
        self.reset_dynamics();
        if let Some(c) = &mut self.checker {
            c.power_on();
        }
        self.fsm = FsmState::A;
        self.activated_at = None;
        self.stats = SystemStats::default();
        self.trace = HwTrace::default();
    }

    fn log(&mut self, core: u32, kind: TraceKind) {
        if self.recording {
            self.trace.events.push(TraceEvent {
                cycle: self.stats.cycles,
                timestep: self.stats.timesteps,
                core,
                kind,
            });
        }
        self.stats.cycles += 1;
    }

    fn fsm_step(&mut self, core: u32, inputs: FsmInputs) -> Result<()> {
        let next = step_fsm(self.fsm, inputs)?;
        if next != self.fsm {
            self.log(core, TraceKind::FsmTransition { from: self.fsm, to: next });
            self.fsm = next;
        }
        Ok(())
    }

    fn handshake(&mut self, core: u32, address: u32) {
        self.log(core, TraceKind::Rqst { address });
        self.stats.requests += 1;
        self.log(core, TraceKind::Ack { address });
        self.stats.acks += 1;
    }

    /// Processes one timestep. `input` holds the active input cells in
    /// ascending order; returns the observed spikes of every layer.
    fn step(&mut self, input: &[u32]) -> Result<Vec<Vec<u8>>> {
        let fabric = Arc::clone(&self.fabric);
        let net = &fabric.net;
        let mut out: Vec<Vec<u8>> = Vec::with_capacity(net.num_layers());
        let mut active: Vec<u32> = input.to_vec();
        let ht = fabric.ht.as_ref().map(|(h, c)| (h.trojan, *c));

        for l in 0..net.num_layers() {
            let layer = net.layer(l);
            let fan = net.fanout(l);
            let routes = &fabric.routes[l];
            let mut spikes = vec![0u8; net.layer_size(l)];
            let acc = &mut self.acc[l];
            acc.fill(0.0);

            for core in &fabric.cores {
                let hosted = core.layers[l].clone();
                if hosted.is_empty() {
                    continue;
                }
                let c = core.index;
                let payload = ht.filter(|(t, hc)| *hc == c && t.layer == l).map(|(t, _)| t.neuron);

                if let Some(trojan) = payload.filter(|_| self.fsm != FsmState::A) {
                    let pending = active.iter().any(|&j| {
                        fan.targets(j as usize)
                            .iter()
                            .any(|&(t, _)| hosted.contains(&(t as usize)) && t as usize != trojan)
                    });
                    self.fsm_step(
                        c,
                        FsmInputs {
                            timestep_boundary: true,
                            true_spikes_pending: pending,
                            ..FsmInputs::default()
                        },
                    )?;
                }

                // incoming spikes, ascending source order
                for &j in &active {
                    let dst = routes
                        .get(j as usize)
                        .ok_or_else(|| Error::Simulator(format!("layer {l}: unroutable source {j}")))?;
                    if dst.binary_search(&c).is_err() {
                        continue;
                    }
                    let source = if l == 0 {
                        Source::Input(j)
                    } else {
                        Source::Neuron(fabric.map.global(NeuronAddress::new(l - 1, j as usize)))
                    };
                    if self.recording {
                        self.trace.events.push(TraceEvent {
                            cycle: self.stats.cycles,
                            timestep: self.stats.timesteps,
                            core: c,
                            kind: TraceKind::SpikeIn { source },
                        });
                    }
                    self.stats.cycles += 1;
                    let acc = &mut self.acc[l];
                    for &(t, w) in fan.targets(j as usize) {
                        if hosted.contains(&(t as usize)) {
                            acc[t as usize] += layer.weights[w as usize];
                        }
                    }
                }

                // controller: integrate and threshold every hosted neuron
                let mut true_out = Vec::with_capacity(hosted.len());
                for i in hosted.clone() {
                    let fired = lif_step(&layer.neuron, &mut self.states[l][i], self.acc[l][i]).fired();
                    true_out.push(fired);
                }

                // true emissions; the armed payload masks the Trojan's own
                for (k, i) in hosted.clone().enumerate() {
                    if !true_out[k] {
                        continue;
                    }
                    if payload == Some(i) && self.fsm != FsmState::A {
                        continue;
                    }
                    let g = fabric.map.global(NeuronAddress::new(l, i));
                    self.handshake(c, g);
                    self.log(c, TraceKind::SpikeOut { address: g });
                    self.stats.true_spikes += 1;
                    spikes[i] = 1;
                }

                if let Some(trojan) = payload {
                    if self.fsm == FsmState::C {
                        self.fsm_step(
                            c,
                            FsmInputs {
                                processing_done: true,
                                ..FsmInputs::default()
                            },
                        )?;
                    }
                    if self.fsm == FsmState::D {
                        let g = fabric.map.global(NeuronAddress::new(l, trojan));
                        self.log(c, TraceKind::Rqst { address: g });
                        self.stats.requests += 1;
                        self.fsm_step(c, FsmInputs::default())?;
                        self.log(c, TraceKind::Ack { address: g });
                        self.stats.acks += 1;
                        self.log(c, TraceKind::FakeSpike { address: g });
                        self.stats.fake_spikes += 1;
                        spikes[trojan] = 1;
                        self.fsm_step(
                            c,
                            FsmInputs {
                                fake_done: true,
                                ..FsmInputs::default()
                            },
                        )?;
                    }
                    // the checker samples the true controller output
                    let bit = true_out[trojan - hosted.start];
                    let checker = self.checker.as_mut().expect("HT core has a checker");
                    checker.step(bit);
                    if checker.latched() && self.fsm == FsmState::A {
                        self.activated_at = Some(self.stats.timesteps);
                        self.fsm_step(
                            c,
                            FsmInputs {
                                matched: true,
                                ..FsmInputs::default()
                            },
                        )?;
                    }
                }
            }

            active = (0..spikes.len() as u32).filter(|&i| spikes[i as usize] == 1).collect();
            out.push(spikes);
        }
        self.stats.timesteps += 1;
        Ok(out)
    }

    /// Runs the input from the current state (no implicit reset).
    pub fn run(&mut self, input: &SpikeTensor) -> Result<RunOutput> {
        let net_shape = self.fabric.net.input_shape();
        if input.shape() != net_shape {
            return Err(Error::Shape(format!("input {} does not match network input {net_shape}", input.shape())));
        }
        let steps = input.steps();
        let n_layers = self.fabric.net.num_layers();
        let mut layers: Vec<Vec<u8>> = (0..n_layers)
            .map(|l| Vec::with_capacity(steps * self.fabric.net.layer_size(l)))
            .collect();
        for t in 0..steps {
            let active: Vec<u32> = input
                .frame(t)
                .iter()
                .enumerate()
                .filter(|(_, &b)| b == 1)
                .map(|(j, _)| j as u32)
                .collect();
            for (l, s) in self.step(&active)?.into_iter().enumerate() {
                layers[l].extend(s);
            }
        }
        let net = &self.fabric.net;
        let layers: Vec<SpikeTensor> = layers
            .into_iter()
            .enumerate()
            .map(|(l, bits)| SpikeTensor::from_bits(steps, net.layer_shape(l), bits))
            .collect::<Result<_>>()?;
        let counts: Vec<u32> = layers
            .last()
            .expect("at least one layer")
            .counts()
            .into_iter()
            .collect();
        Ok(RunOutput {
            prediction: predict_from_counts(&counts),
            counts,
            layers,
        })
    }

    /// Runs an AER event list of `steps` timesteps.
    pub fn run_events(&mut self, events: &[Event], steps: usize) -> Result<RunOutput> {
        let x = SpikeTensor::from_events(events, steps, self.fabric.net.input_shape())?;
        self.run(&x)
    }
}
