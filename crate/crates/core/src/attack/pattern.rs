//! Trigger spike-pattern selection at the Trojan neuron's output.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::snn::{infer, NetworkSpec, NeuronAddress, NeuronParams, Record};

/// Longest pattern the selector handles (windows are packed into a `u64`).
pub const MAX_PATTERN_LEN: usize = 64;

/// Default number of candidates tried per pattern length.
pub const DEFAULT_CANDIDATE_BUDGET: usize = 1024;

/// Full clean-run output trains of one neuron, one per dataset sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordedOutputs {
    pub trojan: NeuronAddress,
    pub trains: Vec<Vec<u8>>,
}

impl RecordedOutputs {
    /// The last `d` bits of every train at least `d` long.
    pub fn final_windows(&self, d: usize) -> impl Iterator<Item = &[u8]> {
        self.trains
            .iter()
            .filter(move |t| t.len() >= d)
            .map(move |t| &t[t.len() - d..])
    }

    /// Distinct final-`d` windows.
    pub fn distinct_final_windows(&self, d: usize) -> usize {
        self.final_windows(d).collect::<HashSet<_>>().len()
    }

    /// Total number of positions, over all trains, where `bits` occurs.
    pub fn occurrences(&self, bits: &[u8]) -> usize {
        self.trains.iter().map(|t| count_occurrences(t, bits)).sum()
    }
}

pub(crate) fn count_occurrences(train: &[u8], bits: &[u8]) -> usize {
    if bits.is_empty() || train.len() < bits.len() {
        return 0;
    }
    train.windows(bits.len()).filter(|w| *w == bits).count()
}

/// Runs the clean network on every sample and keeps the output train of
/// `trojan`.
pub fn record_outputs(net: &NetworkSpec, ds: &LabeledDataset, trojan: NeuronAddress) -> Result<RecordedOutputs> {
    net.check_address(trojan)?;
    let record = Record::Layers(vec![trojan.layer]);
    let trains = ds
        .samples
        .par_iter()
        .map(|s| {
            let inf = infer(net, &s.input, None, &record)?;
            let layer = inf.layers[trojan.layer].as_ref().expect("layer recorded");
            Ok(layer.train(trojan.neuron))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RecordedOutputs { trojan, trains })
}

/// A binary pattern expected at the Trojan neuron's output over the last
/// `d` steps; `bits[0]` is the earliest step.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TriggerPattern {
    pub bits: Vec<u8>,
    pub tau_ref: u32,
}

impl TriggerPattern {
    pub fn new(bits: Vec<u8>, tau_ref: u32) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Param("pattern bits must be 0 or 1".into()));
        }
        let p = TriggerPattern { bits, tau_ref };
        if !p.is_refractory_legal() {
            return Err(Error::Param(format!(
                "pattern {p} cannot be produced by a neuron with refractory period {tau_ref}"
            )));
        }
        Ok(p)
    }

    pub fn parse(s: &str, tau_ref: u32) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::Param(format!("pattern character `{other}` is not 0 or 1"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        TriggerPattern::new(bits, tau_ref)
    }

    pub fn d(&self) -> usize {
        self.bits.len()
    }

    pub fn spikes(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    /// At least one spike, and every spike followed by `tau_ref` silent steps
    /// (within the pattern).
    pub fn is_refractory_legal(&self) -> bool {
        let ones: Vec<usize> = (0..self.bits.len()).filter(|&i| self.bits[i] == 1).collect();
        !ones.is_empty() && ones.windows(2).all(|w| w[1] - w[0] > self.tau_ref as usize)
    }

    /// Patterns with exactly one spike removed, latest spike first.
    pub fn sparsifications(&self) -> Vec<TriggerPattern> {
        (0..self.bits.len())
            .rev()
            .filter(|&i| self.bits[i] == 1)
            .filter(|_| self.spikes() > 1)
            .map(|i| {
                let mut bits = self.bits.clone();
                bits[i] = 0;
                TriggerPattern {
                    bits,
                    tau_ref: self.tau_ref,
                }
            })
            .collect()
    }

    /// Patterns that pass [`check_pattern`] against `rec`, obtained by
    /// removing spikes from `self`, breadth-first, up to `budget`.
    pub fn valid_sparsifications(&self, rec: &RecordedOutputs, budget: usize) -> Vec<TriggerPattern> {
        let mut seen = HashSet::new();
        let mut level = vec![self.clone()];
        let mut out = Vec::new();
        let mut tried = 0;
        while !level.is_empty() && tried < budget {
            let mut next = Vec::new();
            for p in &level {
                for q in p.sparsifications() {
                    if tried >= budget {
                        break;
                    }
                    if !seen.insert(q.bits.clone()) {
                        continue;
                    }
                    tried += 1;
                    if check_pattern(rec, &q).passes() {
                        out.push(q.clone());
                    }
                    next.push(q);
                }
            }
            level = next;
        }
        out
    }
}

impl std::fmt::Display for TriggerPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &b in &self.bits {
            f.write_str(if b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl Serialize for TriggerPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TriggerPattern {
    /// Bare bit strings carry no refractory period; it is set to 0 and must
    /// be restored by the caller (see [`PatternFile`]).
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        TriggerPattern::parse(&s, 0).map_err(serde::de::Error::custom)
    }
}

/// Result of the brute-force pattern check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternCheck {
    pub refractory_legal: bool,
    /// Smallest Hamming distance between the pattern and any recorded
    /// final window; `None` when no train is long enough.
    pub min_final_distance: Option<usize>,
    /// Occurrences anywhere inside the recorded trains.
    pub occurrences: usize,
}

impl PatternCheck {
    pub fn passes(&self) -> bool {
        self.refractory_legal && self.min_final_distance.is_none_or(|h| h >= 1) && self.occurrences == 0
    }
}

/// Checks a pattern bit by bit against every recorded train. Shares no code
/// with the selector's packed-window search.
pub fn check_pattern(rec: &RecordedOutputs, p: &TriggerPattern) -> PatternCheck {
    let d = p.bits.len();
    let mut legal = d > 0 && p.bits.contains(&1);
    for i in 0..d {
        for j in i + 1..=(i + p.tau_ref as usize).min(d.saturating_sub(1)) {
            if p.bits[i] == 1 && p.bits[j] == 1 {
                legal = false;
            }
        }
    }
    let mut min_final: Option<usize> = None;
    let mut occurrences = 0;
    for train in &rec.trains {
        if train.len() < d || d == 0 {
            continue;
        }
        let start = train.len() - d;
        let h = (0..d).filter(|&k| train[start + k] != p.bits[k]).count();
        min_final = Some(min_final.map_or(h, |m| m.min(h)));
        for s in 0..=start {
            if (0..d).all(|k| train[s + k] == p.bits[k]) {
                occurrences += 1;
            }
        }
    }
    PatternCheck {
        refractory_legal: legal,
        min_final_distance: min_final,
        occurrences,
    }
}

fn pack(bits: &[u8]) -> u64 {
    bits.iter().enumerate().fold(0, |acc, (i, &b)| acc | (u64::from(b) << i))
}

fn unpack(word: u64, d: usize) -> Vec<u8> {
    (0..d).map(|i| ((word >> i) & 1) as u8).collect()
}

/// Refractory-legal words of length `d` with exactly `ones` spikes, in
/// lexicographic order of spike positions; stops after `limit`.
fn legal_words(d: usize, ones: usize, tau_ref: usize, limit: usize, out: &mut Vec<u64>) {
    fn rec(pos: usize, left: usize, word: u64, d: usize, gap: usize, limit: usize, out: &mut Vec<u64>) {
        if out.len() >= limit {
            return;
        }
        if left == 0 {
            out.push(word);
            return;
        }
        // the remaining spikes need (left - 1) * gap + left positions
        let need = (left - 1) * gap + left;
        let mut p = pos;
        while p + need <= d && out.len() < limit {
            rec(p + gap + 1, left - 1, word | (1 << p), d, gap, limit, out);
            p += 1;
        }
    }
    rec(0, ones, 0, d, tau_ref, limit, out);
}

/// Shortest pattern that no recorded train contains, densest first.
///
/// For each `d` from 1 to `d_max`, refractory-legal candidates are tried in
/// decreasing spike count (at most `budget` per `d`). A candidate is
/// accepted when it differs from every recorded final-`d` window and occurs
/// nowhere inside any recorded train. The winner is re-checked with
/// [`check_pattern`].
pub fn select_pattern(rec: &RecordedOutputs, tau_ref: u32, d_max: usize, budget: usize) -> Result<TriggerPattern> {
    select_filtered(rec, tau_ref, d_max, budget, |_| true)
}

/// Upper bound on what one neuron can emit: its constants and the largest
/// input a single step can deliver (every positive-weight source spiking).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriveBound {
    pub params: NeuronParams,
    pub max_drive: f64,
}

impl DriveBound {
    pub fn of(net: &NetworkSpec, a: NeuronAddress) -> Result<Self> {
        net.check_address(a)?;
        let fanout = net.fanout(a.layer);
        let weights = &net.layer(a.layer).weights;
        let mut max_drive = 0.0;
        for src in 0..fanout.sources() {
            for &(tgt, slot) in fanout.targets(src) {
                if tgt as usize == a.neuron && weights[slot as usize] > 0.0 {
                    max_drive += weights[slot as usize];
                }
            }
        }
        Ok(DriveBound {
            params: net.layer(a.layer).neuron,
            max_drive,
        })
    }

    /// False when no input can make the neuron emit `bits` as a window.
    /// The state before the window's first spike is unknown, so only the
    /// spikes after it are checked, each starting from the best potential
    /// reachable since the previous reset.
    pub fn admits(&self, bits: &[u8]) -> bool {
        let p = &self.params;
        // (upper bound on v, refractory steps left) once a spike has been seen
        let mut state: Option<(f64, u32)> = None;
        for &b in bits {
            state = match state {
                None => (b == 1).then_some((p.v_reset, p.tau_ref)),
                Some((v, r)) if r > 0 => {
                    if b == 1 {
                        return false;
                    }
                    Some((v, r - 1))
                }
                Some((v, _)) => {
                    let u = p.alpha * v + self.max_drive;
                    // slack for summation order
                    let reach = u >= p.theta - 1e-9 * p.theta.abs().max(1.0);
                    if b == 1 {
                        if !reach {
                            return false;
                        }
                        Some((p.v_reset, p.tau_ref))
                    } else {
                        Some((u.min(p.theta), 0))
                    }
                }
            };
        }
        true
    }
}

/// [`select_pattern`] for a neuron of `net`: takes the refractory period
/// from the network and skips patterns the neuron cannot emit under its
/// [`DriveBound`].
pub fn select_pattern_for(
    net: &NetworkSpec,
    rec: &RecordedOutputs,
    d_max: usize,
    budget: usize,
) -> Result<TriggerPattern> {
    let bound = DriveBound::of(net, rec.trojan)?;
    select_filtered(rec, bound.params.tau_ref, d_max, budget, |bits| bound.admits(bits))
}

fn select_filtered(
    rec: &RecordedOutputs,
    tau_ref: u32,
    d_max: usize,
    budget: usize,
    admit: impl Fn(&[u8]) -> bool,
) -> Result<TriggerPattern> {
    if d_max == 0 || d_max > MAX_PATTERN_LEN {
        return Err(Error::Param(format!("d_max must be in 1..={MAX_PATTERN_LEN}, got {d_max}")));
    }
    if budget == 0 {
        return Err(Error::Param("candidate budget must be positive".into()));
    }
    let gap = tau_ref as usize;
    for d in 1..=d_max {
        let mut seen: HashSet<u64> = HashSet::new();
        for train in &rec.trains {
            if train.len() < d {
                continue;
            }
            let mask = if d == 64 { u64::MAX } else { (1u64 << d) - 1 };
            let mut w = pack(&train[..d]);
            seen.insert(w);
            for &b in &train[d..] {
                w = (w >> 1) | (u64::from(b) << (d - 1));
                seen.insert(w & mask);
            }
        }
        let densest = d.div_ceil(gap + 1);
        let mut tried = 0;
        for ones in (1..=densest).rev() {
            let mut words = Vec::new();
            legal_words(d, ones, gap, budget - tried, &mut words);
            tried += words.len();
            if let Some(&w) = words.iter().find(|&&w| !seen.contains(&w) && admit(&unpack(w, d))) {
                let p = TriggerPattern {
                    bits: unpack(w, d),
                    tau_ref,
                };
                let check = check_pattern(rec, &p);
                if !check.passes() {
                    return Err(Error::Param(format!("selector and verifier disagree on {p}: {check:?}")));
                }
                return Ok(p);
            }
            if tried >= budget {
                break;
            }
        }
    }
    Err(Error::PatternExhausted { tightest: d_max })
}

/// On-disk pattern description.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternFile {
    pub d: usize,
    pub bits: String,
    pub tau_ref: u32,
    pub verified: bool,
    pub occurrences_in_dataset: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trojan: Option<NeuronAddress>,
}

impl PatternFile {
    pub fn new(p: &TriggerPattern, check: &PatternCheck, trojan: Option<NeuronAddress>) -> Self {
        PatternFile {
            d: p.d(),
            bits: p.to_string(),
            tau_ref: p.tau_ref,
            verified: check.passes(),
            occurrences_in_dataset: check.occurrences,
            trojan,
        }
    }

    pub fn pattern(&self) -> Result<TriggerPattern> {
        let p = TriggerPattern::parse(&self.bits, self.tau_ref)?;
        if p.d() != self.d {
            return Err(Error::Param(format!("pattern file says d = {} but has {} bits", self.d, p.d())));
        }
        Ok(p)
    }
}
