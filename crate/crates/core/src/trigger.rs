//! Gradient-based synthesis of a spiking input that makes the Trojan neuron
//! emit the trigger pattern over its last `d` output steps.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{count_occurrences, RecordedOutputs, TriggerPattern};
use crate::data::{Event, LabeledDataset, Shape, SpikeTensor};
use crate::error::{Error, Result, VerifyStage};
use crate::grad::{backward_to_input, forward_with_tape, ste_binarize, AdamState, SoftInput, DEFAULT_SURROGATE_BETA};
use crate::seed::derive;
use crate::snn::{infer, NetworkSpec, NeuronAddress, Record};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriggerSearchConfig {
    /// Wall-clock budget of one search at a fixed `(T, P)`, in milliseconds.
    pub t_limit_ms: u64,
    /// Iteration cap of one search at a fixed `(T, P)`. Unlike the wall-clock
    /// budget this keeps results reproducible.
    pub max_iters: usize,
    /// Input length of the first attempt; `None` means `d`.
    pub t_initial: Option<usize>,
    /// Longest input tried when growing `T`; `None` means `t_initial + 8`.
    pub t_max: Option<usize>,
    pub tau_initial: f64,
    pub tau_decay: f64,
    /// Iterations between temperature decays.
    pub tau_every: usize,
    pub tau_min: f64,
    pub lr: f64,
    pub seed: u64,
    pub grow_steps: bool,
    pub sparsify: bool,
    /// Independent seeded searches per attempt, run in parallel.
    pub restarts: usize,
    pub surrogate_beta: f64,
}

impl Default for TriggerSearchConfig {
    fn default() -> Self {
        TriggerSearchConfig {
            t_limit_ms: 60_000,
            max_iters: 2_000,
            t_initial: None,
            t_max: None,
            tau_initial: 1.0,
            tau_decay: 0.97,
            tau_every: 25,
            tau_min: 0.1,
            lr: 0.1,
            seed: 0,
            grow_steps: true,
            sparsify: true,
            restarts: 4,
            surrogate_beta: DEFAULT_SURROGATE_BETA,
        }
    }
}

impl TriggerSearchConfig {
    fn validate(&self, d: usize) -> Result<(usize, usize)> {
        let t0 = self.t_initial.unwrap_or(d);
        if t0 < d {
            return Err(Error::Param(format!("initial input length {t0} is shorter than the pattern ({d})")));
        }
        let t_max = self.t_max.unwrap_or(t0 + 8);
        if t_max < t0 {
            return Err(Error::Param(format!("t_max {t_max} is below the initial length {t0}")));
        }
        if !(self.tau_initial > 0.0 && self.tau_min > 0.0) || !(self.tau_decay > 0.0 && self.tau_decay <= 1.0) {
            return Err(Error::Param("temperature schedule must stay positive".into()));
        }
        if self.tau_every == 0 || self.restarts == 0 {
            return Err(Error::Param("tau_every and restarts must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.surrogate_beta > 0.0) {
            return Err(Error::Param("lr and surrogate_beta must be positive".into()));
        }
        Ok((t0, t_max))
    }
}

/// A synthesized input trigger and how it was obtained.
#[derive(Clone, Debug, PartialEq)]
pub struct TriggerArtifact {
    pub trojan: NeuronAddress,
    /// The pattern the trigger was optimized for (possibly sparser than the
    /// one requested).
    pub pattern: TriggerPattern,
    pub input: SpikeTensor,
    /// Hamming distance between the pattern and the Trojan neuron's last
    /// `d` outputs under a fresh hard inference of `input`.
    pub final_loss: usize,
    /// Iterations of the search that produced `input`.
    pub iterations: usize,
    /// Iterations over every attempt and restart.
    pub total_iterations: usize,
    pub wall_ms: u64,
    pub seed: u64,
    pub pattern_sparsified: bool,
}

impl TriggerArtifact {
    pub fn succeeded(&self) -> bool {
        self.final_loss == 0
    }
}

/// On-disk form of a [`TriggerArtifact`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerFile {
    pub trojan: NeuronAddress,
    #[serde(rename = "P")]
    pub pattern: String,
    pub tau_ref: u32,
    #[serde(rename = "T_steps")]
    pub steps: usize,
    pub shape: Shape,
    pub events: Vec<[u32; 4]>,
    #[serde(rename = "final_L")]
    pub final_loss: usize,
    pub iterations: usize,
    pub total_iterations: usize,
    pub wall_ms: u64,
    pub seed: u64,
    pub pattern_sparsified: bool,
}

impl From<&TriggerArtifact> for TriggerFile {
    fn from(a: &TriggerArtifact) -> Self {
        TriggerFile {
            trojan: a.trojan,
            pattern: a.pattern.to_string(),
            tau_ref: a.pattern.tau_ref,
            steps: a.input.steps(),
            shape: a.input.shape(),
            events: a.input.to_events().iter().map(Event::as_array).collect(),
            final_loss: a.final_loss,
            iterations: a.iterations,
            total_iterations: a.total_iterations,
            wall_ms: a.wall_ms,
            seed: a.seed,
            pattern_sparsified: a.pattern_sparsified,
        }
    }
}

impl TryFrom<TriggerFile> for TriggerArtifact {
    type Error = Error;

    fn try_from(f: TriggerFile) -> Result<Self> {
        let events: Vec<Event> = f.events.iter().map(|&e| Event::from(e)).collect();
        let pattern = TriggerPattern::parse(&f.pattern, f.tau_ref)?;
        if pattern.d() > f.steps {
            return Err(Error::Param(format!(
                "pattern of length {} does not fit a {}-step trigger",
                pattern.d(),
                f.steps
            )));
        }
        Ok(TriggerArtifact {
            trojan: f.trojan,
            input: SpikeTensor::from_events(&events, f.steps, f.shape)?,
            pattern,
            final_loss: f.final_loss,
            iterations: f.iterations,
            total_iterations: f.total_iterations,
            wall_ms: f.wall_ms,
            seed: f.seed,
            pattern_sparsified: f.pattern_sparsified,
        })
    }
}

pub fn write_trigger<W: std::io::Write>(a: &TriggerArtifact, w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, &TriggerFile::from(a))?;
    Ok(())
}

pub fn read_trigger<R: std::io::Read>(r: R) -> Result<TriggerArtifact> {
    let f: TriggerFile = serde_json::from_reader(r)?;
    f.try_into()
}

pub fn save_trigger(path: impl AsRef<Path>, a: &TriggerArtifact) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(&TriggerFile::from(a))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_trigger(path: impl AsRef<Path>) -> Result<TriggerArtifact> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trigger(std::io::BufReader::new(f))
}

/// The Trojan neuron's last `d` outputs under a plain hard inference.
pub fn trojan_window(net: &NetworkSpec, input: &SpikeTensor, trojan: NeuronAddress, d: usize) -> Result<Vec<u8>> {
    if d > input.steps() {
        return Err(Error::Param(format!("window {d} longer than the input ({} steps)", input.steps())));
    }
    let inf = infer(net, input, None, &Record::Layers(vec![trojan.layer]))?;
    let train = inf.layers[trojan.layer].as_ref().expect("layer recorded").train(trojan.neuron);
    Ok(train[train.len() - d..].to_vec())
}

fn hamming(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

struct SearchOutcome {
    best: Vec<u8>,
    best_loss: usize,
    best_iter: usize,
    iterations: usize,
}

/// One seeded search at fixed `(steps, pattern)`.
fn search(
    net: &NetworkSpec,
    trojan: NeuronAddress,
    pattern: &TriggerPattern,
    steps: usize,
    cfg: &TriggerSearchConfig,
    seed: u64,
    started: Instant,
) -> Result<SearchOutcome> {
    let shape = net.input_shape();
    let len = steps * shape.len();
    let d = pattern.d();
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive(seed, "init"));
    let real: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut init_rng)).collect();
    let mut soft_input = SoftInput::new(real, cfg.tau_initial, derive(seed, "noise"))?;
    let mut adam = AdamState::new(len, cfg.lr);
    let budget = Duration::from_millis(cfg.t_limit_ms);

    let mut best: Option<(Vec<u8>, usize, usize)> = None;
    let mut iter = 0;
    loop {
        let soft = soft_input.relax();
        let hard = ste_binarize(&soft);
        let x = SpikeTensor::from_bits(steps, shape, hard)?;
        let (window, tape) = forward_with_tape(net, &x, trojan, d, cfg.surrogate_beta)?;
        let loss = hamming(&window, &pattern.bits);
        if best.as_ref().is_none_or(|b| loss < b.1) {
            best = Some((x.as_slice().to_vec(), loss, iter));
        }
        if loss == 0 || iter >= cfg.max_iters || started.elapsed() >= budget {
            break;
        }
        let residual: Vec<f64> = window
            .iter()
            .zip(&pattern.bits)
            .map(|(&o, &p)| f64::from(o) - f64::from(p))
            .collect();
        let g_hard = backward_to_input(net, &tape, &residual)?;
        // straight-through: the gradient on the binarized input is used as
        // the gradient on the relaxed input
        let g_real = soft_input.backprop(&soft, &g_hard);
        adam.step(&mut soft_input.real, &g_real);
        iter += 1;
        if iter % cfg.tau_every == 0 {
            soft_input.tau = (soft_input.tau * cfg.tau_decay).max(cfg.tau_min);
        }
    }
    let (best, best_loss, best_iter) = best.expect("at least one evaluation");
    Ok(SearchOutcome {
        best,
        best_loss,
        best_iter,
        iterations: iter,
    })
}

/// Searches for an input that drives `trojan` to emit `pattern` over its
/// last `d` steps.
///
/// Each attempt at a fixed input length `T` and pattern runs
/// `cfg.restarts` independent searches until the loss reaches 0 or the
/// attempt's iteration/time budget is spent. On failure `T` grows up to
/// `t_max`, then (when `rec` is given) sparser patterns that still avoid
/// every recorded window are tried. The best iterate is re-verified by a
/// fresh inference before it is returned. If no attempt reaches 0, the best
/// artifact is returned inside [`Error::TriggerExhausted`].
pub fn generate_trigger(
    net: &NetworkSpec,
    trojan: NeuronAddress,
    pattern: &TriggerPattern,
    rec: Option<&RecordedOutputs>,
    cfg: &TriggerSearchConfig,
) -> Result<TriggerArtifact> {
    net.check_address(trojan)?;
    if !pattern.is_refractory_legal() {
        return Err(Error::Param(format!("pattern {pattern} is not refractory-legal")));
    }
    let (t0, t_max) = cfg.validate(pattern.d())?;
    let lengths: Vec<usize> = if cfg.grow_steps { (t0..=t_max).collect() } else { vec![t0] };
    let mut patterns = vec![pattern.clone()];
    if cfg.sparsify {
        if let Some(rec) = rec {
            patterns.extend(pattern.valid_sparsifications(rec, 64));
        }
    }

    let started = Instant::now();
    let mut total_iterations = 0;
    let mut best: Option<(SearchOutcome, usize, usize)> = None; // (outcome, pattern idx, steps)
    'outer: for (pi, p) in patterns.iter().enumerate() {
        for &steps in &lengths {
            let attempt = Instant::now();
            let outcomes: Vec<SearchOutcome> = (0..cfg.restarts)
                .into_par_iter()
                .map(|r| {
                    let seed = derive(cfg.seed, &format!("trigger/{p}/{steps}/{r}"));
                    search(net, trojan, p, steps, cfg, seed, attempt)
                })
                .collect::<Result<_>>()?;
            total_iterations += outcomes.iter().map(|o| o.iterations).sum::<usize>();
            // lowest restart index wins among equal losses
            let winner = outcomes
                .into_iter()
                .reduce(|a, b| if b.best_loss < a.best_loss { b } else { a })
                .expect("at least one restart");
            if best.as_ref().is_none_or(|(o, _, _)| winner.best_loss < o.best_loss) {
                best = Some((winner, pi, steps));
            }
            if best.as_ref().is_some_and(|(o, _, _)| o.best_loss == 0) {
                break 'outer;
            }
        }
    }

    let (outcome, pi, steps) = best.expect("at least one attempt");
    let input = SpikeTensor::from_bits(steps, net.input_shape(), outcome.best)?;
    let p = &patterns[pi];
    let window = trojan_window(net, &input, trojan, p.d())?;
    let final_loss = hamming(&window, &p.bits);
    if final_loss != outcome.best_loss {
        return Err(Error::Verification {
            stage: VerifyStage::Reproduction,
            detail: format!(
                "optimizer reported loss {} but a fresh inference gives {final_loss}",
                outcome.best_loss
            ),
        });
    }
    let artifact = TriggerArtifact {
        trojan,
        pattern: p.clone(),
        input,
        final_loss,
        iterations: outcome.best_iter,
        total_iterations,
        wall_ms: started.elapsed().as_millis() as u64,
        seed: cfg.seed,
        pattern_sparsified: pi > 0,
    };
    if final_loss == 0 {
        Ok(artifact)
    } else {
        Err(Error::TriggerExhausted {
            best_loss: final_loss,
            best: Box::new(artifact),
        })
    }
}

/// What a trigger actually does, measured without the optimizer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerInspection {
    /// The Trojan neuron's last `d` outputs when the trigger is applied.
    pub window: String,
    pub hamming: usize,
    pub samples: usize,
    /// Occurrences of the pattern anywhere in the clean-run Trojan outputs.
    pub clean_occurrences: usize,
}

/// Re-infers the trigger and scans every clean sample for the pattern.
pub fn inspect_trigger(net: &NetworkSpec, a: &TriggerArtifact, ds: &LabeledDataset) -> Result<TriggerInspection> {
    let d = a.pattern.d();
    let window = trojan_window(net, &a.input, a.trojan, d)?;
    let record = Record::Layers(vec![a.trojan.layer]);
    let clean_occurrences = ds
        .samples
        .par_iter()
        .map(|s| {
            let inf = infer(net, &s.input, None, &record)?;
            let train = inf.layers[a.trojan.layer].as_ref().expect("layer recorded").train(a.trojan.neuron);
            Ok(count_occurrences(&train, &a.pattern.bits))
        })
        .sum::<Result<usize>>()?;
    Ok(TriggerInspection {
        window: window.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect(),
        hamming: hamming(&window, &a.pattern.bits),
        samples: ds.len(),
        clean_occurrences,
    })
}

/// Fails unless the trigger reproduces its pattern exactly and the pattern
/// never appears in a clean run.
pub fn verify_trigger(net: &NetworkSpec, a: &TriggerArtifact, ds: &LabeledDataset) -> Result<TriggerInspection> {
    let r = inspect_trigger(net, a, ds)?;
    if r.hamming != 0 {
        return Err(Error::Verification {
            stage: VerifyStage::Reproduction,
            detail: format!("trigger yields {} instead of {}", r.window, a.pattern),
        });
    }
    if r.clean_occurrences != 0 {
        return Err(Error::Verification {
            stage: VerifyStage::CleanOccurrence,
            detail: format!("pattern {} occurs {} times in clean runs", a.pattern, r.clean_occurrences),
        });
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::{LayerKind, LayerSpec, NeuronParams};

    /// One input pixel, one neuron, unit weight, no leak, no refractoriness.
    fn relay() -> NetworkSpec {
        NetworkSpec::new(
            Shape::flat(1),
            vec![LayerSpec {
                kind: LayerKind::Dense { inputs: 1, outputs: 1 },
                neuron: NeuronParams {
                    alpha: 1.0,
                    theta: 0.5,
                    v_reset: 0.0,
                    tau_ref: 0,
                },
                weights: vec![1.0],
            }],
            1.0,
        )
        .unwrap()
    }

    const RELAY: NeuronAddress = NeuronAddress::new(0, 0);

    fn exact_cfg(steps: usize) -> TriggerSearchConfig {
        TriggerSearchConfig {
            t_initial: Some(steps),
            grow_steps: false,
            sparsify: false,
            restarts: 1,
            seed: 5,
            ..TriggerSearchConfig::default()
        }
    }

    #[test]
    fn relay_trigger_matches_exhaustive_solutions() {
        let net = relay();
        let p = TriggerPattern::parse("11", 0).unwrap();
        for steps in 2..=6 {
            let solutions: Vec<Vec<u8>> = (0u32..1 << steps)
                .map(|w| (0..steps).map(|t| ((w >> t) & 1) as u8).collect::<Vec<u8>>())
                .filter(|bits| {
                    let x = SpikeTensor::from_bits(steps, Shape::flat(1), bits.clone()).unwrap();
                    trojan_window(&net, &x, RELAY, 2).unwrap() == [1, 1]
                })
                .collect();
            assert_eq!(solutions.len(), 1 << (steps - 2));
            assert!(solutions.iter().all(|s| s[steps - 2..] == [1, 1]));
            let a = generate_trigger(&net, RELAY, &p, None, &exact_cfg(steps)).unwrap();
            assert!(solutions.contains(&a.input.as_slice().to_vec()));
            assert_eq!(a.final_loss, 0);
        }
    }

    #[test]
    fn zero_budget_fails_with_initial_loss() {
        let net = relay();
        let p = TriggerPattern::parse("1", 0).unwrap();
        let cfg = TriggerSearchConfig {
            t_limit_ms: 0,
            seed: 1,
            ..exact_cfg(4)
        };
        // find a seed whose first sample misses, so the budget matters
        let mut seen_failure = false;
        for seed in 0..20 {
            let cfg = TriggerSearchConfig { seed, ..cfg.clone() };
            match generate_trigger(&net, RELAY, &p, None, &cfg) {
                Ok(a) => assert_eq!(a.iterations, 0),
                Err(Error::TriggerExhausted { best_loss, best }) => {
                    assert_eq!(best_loss, 1);
                    assert_eq!(best.total_iterations, 0);
                    assert_eq!(trojan_window(&net, &best.input, RELAY, 1).unwrap(), [0]);
                    seen_failure = true;
                }
                Err(e) => panic!("{e}"),
            }
        }
        assert!(seen_failure);
    }

    #[test]
    fn search_is_reproducible() {
        let net = relay();
        let p = TriggerPattern::parse("101", 0).unwrap();
        let cfg = TriggerSearchConfig {
            restarts: 3,
            ..exact_cfg(6)
        };
        let a = generate_trigger(&net, RELAY, &p, None, &cfg).unwrap();
        let b = generate_trigger(&net, RELAY, &p, None, &cfg).unwrap();
        assert_eq!(a.input, b.input);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn unreachable_pattern_exhausts() {
        // a neuron with a negative weight can never fire
        let mut net = relay();
        net.weights_mut(0)[0] = -1.0;
        let p = TriggerPattern::parse("1", 0).unwrap();
        let cfg = TriggerSearchConfig {
            max_iters: 30,
            t_max: Some(3),
            grow_steps: true,
            ..exact_cfg(1)
        };
        match generate_trigger(&net, RELAY, &p, None, &cfg) {
            Err(Error::TriggerExhausted { best_loss, best }) => {
                assert_eq!(best_loss, 1);
                assert_eq!(best.final_loss, 1);
                assert_eq!(best.total_iterations, 3 * 30);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn artifact_file_round_trip_and_verification() {
        let net = relay();
        let p = TriggerPattern::parse("11", 0).unwrap();
        let a = generate_trigger(&net, RELAY, &p, None, &exact_cfg(4)).unwrap();
        let mut buf = Vec::new();
        write_trigger(&a, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        for key in ["\"trojan\"", "\"P\"", "\"T_steps\"", "\"events\"", "\"final_L\"", "\"iterations\"", "\"wall_ms\"", "\"seed\""] {
            assert!(text.contains(key), "missing {key}");
        }
        let back = read_trigger(&buf[..]).unwrap();
        assert_eq!(back, a);

        let empty = LabeledDataset::new(Shape::flat(1), 4, 1);
        let r = verify_trigger(&net, &a, &empty).unwrap();
        assert_eq!(r.hamming, 0);
        assert_eq!(r.window, "11");

        // flipping the last input bit breaks reproduction; the report follows
        // the fresh inference
        let mut bits = a.input.as_slice().to_vec();
        bits[3] ^= 1;
        let flipped = TriggerArtifact {
            input: SpikeTensor::from_bits(4, Shape::flat(1), bits).unwrap(),
            ..a.clone()
        };
        let r = inspect_trigger(&net, &flipped, &empty).unwrap();
        assert_eq!(r.hamming, hamming(&trojan_window(&net, &flipped.input, RELAY, 2).unwrap(), &[1, 1]));
        assert!(matches!(
            verify_trigger(&net, &flipped, &empty),
            Err(Error::Verification {
                stage: VerifyStage::Reproduction,
                ..
            })
        ));
    }

    #[test]
    fn clean_occurrence_is_reported_separately() {
        let net = relay();
        let p = TriggerPattern::parse("11", 0).unwrap();
        let a = generate_trigger(&net, RELAY, &p, None, &exact_cfg(2)).unwrap();
        let mut ds = LabeledDataset::new(Shape::flat(1), 3, 1);
        ds.push(crate::data::Sample {
            input: SpikeTensor::from_bits(3, Shape::flat(1), vec![1, 1, 0]).unwrap(),
            label: 0,
        })
        .unwrap();
        assert!(matches!(
            verify_trigger(&net, &a, &ds),
            Err(Error::Verification {
                stage: VerifyStage::CleanOccurrence,
                ..
            })
        ));
    }

    #[test]
    fn bad_configs_are_rejected() {
        let net = relay();
        let p = TriggerPattern::parse("101", 0).unwrap();
        for cfg in [
            TriggerSearchConfig { t_initial: Some(2), ..exact_cfg(3) },
            TriggerSearchConfig { t_max: Some(2), t_initial: None, ..TriggerSearchConfig::default() },
            TriggerSearchConfig { tau_initial: 0.0, ..exact_cfg(3) },
            TriggerSearchConfig { restarts: 0, ..exact_cfg(3) },
        ] {
            assert!(matches!(generate_trigger(&net, RELAY, &p, None, &cfg), Err(Error::Param(_))));
        }
    }
}
