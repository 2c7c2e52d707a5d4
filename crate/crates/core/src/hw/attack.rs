//! The attack as seen from outside the chip: apply a sample, then the
//! trigger, then the same sample again.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diff::{diff_layers, SpikeDiff};
use super::system::{RunOutput, System};
use super::trace::HwTrace;
use crate::data::{LabeledDataset, SpikeTensor};
use crate::error::{Error, Result};
use crate::snn::NetworkSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Length of each all-zero phase.
    pub gap_steps: usize,
    /// Return neurons to rest (and empty the checker's shift register) at
    /// the start of every phase.
    pub reset_between_phases: bool,
    pub record_trace: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            gap_steps: 4,
            reset_between_phases: true,
            record_trace: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttackOutcome {
    pub before: RunOutput,
    pub after: RunOutput,
    /// Timestep (since power-on) at which the checker latched.
    pub activated_at: Option<u64>,
    /// Fake spikes emitted during the final phase.
    pub fake_spikes_after: u64,
    pub trace: Option<HwTrace>,
}

/// Five phases from power-on: sample, silence, trigger, silence, sample.
pub fn run_attack_sequence(
    system: &mut System,
    sample: &SpikeTensor,
    trigger: &SpikeTensor,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    system.power_on();
    system.set_recording(cfg.record_trace);
    let gap = SpikeTensor::zeros(cfg.gap_steps, sample.shape());
    let phase = |s: &mut System, x: &SpikeTensor| -> Result<RunOutput> {
        if cfg.reset_between_phases {
            s.reset_dynamics();
        }
        s.run(x)
    };
    let before = phase(system, sample)?;
    if cfg.gap_steps > 0 {
        phase(system, &gap)?;
    }
    phase(system, trigger)?;
    if cfg.gap_steps > 0 {
        phase(system, &gap)?;
    }
    let fakes = system.stats().fake_spikes;
    let after = phase(system, sample)?;
    let fake_spikes_after = system.stats().fake_spikes - fakes;
    system.set_recording(false);
    Ok(AttackOutcome {
        before,
        after,
        activated_at: system.activated_at(),
        fake_spikes_after,
        trace: cfg.record_trace.then(|| system.take_trace()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleAttack {
    pub index: usize,
    pub label: usize,
    pub before: usize,
    pub after: usize,
    pub activated: bool,
    pub fake_spikes_after: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackSummary {
    pub samples: usize,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    /// Correct before, wrong after.
    pub flipped: usize,
    pub activated: usize,
    /// Every activated run emitted one fake spike per step of the final
    /// phase.
    pub payload_every_step: bool,
    /// Final-phase spike counts minus first-phase counts, summed over
    /// samples.
    #[serde(skip)]
    pub diff: SpikeDiff,
    pub per_sample: Vec<SampleAttack>,
}

/// Runs the five-phase sequence for every sample on a private copy of the
/// system.
pub fn attack_dataset(
    system: &System,
    ds: &LabeledDataset,
    trigger: &SpikeTensor,
    cfg: &AttackConfig,
) -> Result<AttackSummary> {
    if ds.is_empty() {
        return Err(Error::Param("attack needs a nonempty dataset".into()));
    }
    let cfg = AttackConfig {
        record_trace: false,
        ..cfg.clone()
    };
    let results: Vec<(SampleAttack, SpikeDiff)> = ds
        .samples
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            let mut sys = system.clone();
            let o = run_attack_sequence(&mut sys, &s.input, trigger, &cfg)?;
            let diff = diff_layers(&o.before.layers, &o.after.layers)?;
            Ok((
                SampleAttack {
                    index,
                    label: s.label,
                    before: o.before.prediction,
                    after: o.after.prediction,
                    activated: o.activated_at.is_some(),
                    fake_spikes_after: o.fake_spikes_after,
                },
                diff,
            ))
        })
        .collect::<Result<_>>()?;
    let n = ds.len() as f64;
    let mut diff = SpikeDiff::zeros(system.net());
    for (_, d) in &results {
        diff.accumulate(d);
    }
    let per_sample: Vec<SampleAttack> = results.into_iter().map(|(s, _)| s).collect();
    let steps = |i: usize| ds.samples[i].input.steps() as u64;
    Ok(AttackSummary {
        samples: ds.len(),
        accuracy_before: per_sample.iter().filter(|s| s.before == s.label).count() as f64 / n,
        accuracy_after: per_sample.iter().filter(|s| s.after == s.label).count() as f64 / n,
        flipped: per_sample
            .iter()
            .filter(|s| s.before == s.label && s.after != s.label)
            .count(),
        activated: per_sample.iter().filter(|s| s.activated).count(),
        payload_every_step: per_sample
            .iter()
            .filter(|s| s.activated)
            .all(|s| s.fake_spikes_after == steps(s.index)),
        diff,
        per_sample,
    })
}

/// Inputs needed to exhaustively test every neuron against every pattern
/// of length `d`: `d * neurons * 2^d`. `None` on overflow.
pub fn exhaustive_test_count(d: u32, neurons: u64) -> Option<u128> {
    let pow = 1u128.checked_shl(d).filter(|_| d < 128)?;
    pow.checked_mul(u128::from(d))?.checked_mul(u128::from(neurons))
}

/// Convenience wrapper over [`exhaustive_test_count`] for a network.
pub fn exhaustive_test_count_for(net: &NetworkSpec, d: usize) -> Option<u128> {
    exhaustive_test_count(u32::try_from(d).ok()?, net.neuron_count() as u64)
}
