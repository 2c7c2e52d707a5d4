//! Single-fault injection campaign over every neuron of the network.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::snn::infer::{forward_from, prediction_of};
use crate::snn::{FaultKind, FaultOverride, NetworkSpec, NeuronAddress};
use crate::svg::{heat_strips, Strip};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultEntry {
    pub address: NeuronAddress,
    pub kind: FaultKind,
    pub accuracy: f64,
    /// Baseline accuracy minus faulty accuracy.
    pub drop: f64,
    /// At least one sample that the fault-free network classified correctly
    /// is misclassified under this fault.
    pub critical: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultReport {
    pub baseline: f64,
    pub samples: usize,
    pub output_layer: usize,
    /// Sorted by drop, largest first; ties by address then kind.
    pub entries: Vec<FaultEntry>,
}

impl FaultReport {
    pub fn critical_count(&self, kind: FaultKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind && e.critical).count()
    }

    pub fn entry(&self, address: NeuronAddress, kind: FaultKind) -> Option<&FaultEntry> {
        self.entries.iter().find(|e| e.address == address && e.kind == kind)
    }

    /// CSV with columns `layer, neuron, kind, accuracy, drop, critical`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            layer: usize,
            neuron: usize,
            kind: FaultKind,
            accuracy: f64,
            drop: f64,
            critical: bool,
        }
        let mut out = csv::Writer::from_writer(w);
        for e in &self.entries {
            out.serialize(Row {
                layer: e.address.layer,
                neuron: e.address.neuron,
                kind: e.kind,
                accuracy: e.accuracy,
                drop: e.drop,
                critical: e.critical,
            })?;
        }
        out.flush().map_err(|e| Error::io("<fault report>", e))?;
        Ok(())
    }

    /// One heat strip per (layer, kind): accuracy drop per neuron.
    pub fn heat_svg(&self, net: &NetworkSpec) -> String {
        let mut strips = Vec::new();
        for kind in [FaultKind::Saturated, FaultKind::Dead] {
            for l in 0..net.num_layers() {
                let mut values = vec![0.0; net.layer_size(l)];
                let mut any = false;
                for e in self.entries.iter().filter(|e| e.kind == kind && e.address.layer == l) {
                    values[e.address.neuron] = e.drop;
                    any = true;
                }
                if any {
                    strips.push(Strip {
                        label: format!("L{l} {kind}"),
                        values,
                    });
                }
            }
        }
        heat_strips(
            &format!("accuracy drop per neuron (baseline {:.4})", self.baseline),
            &strips,
            false,
        )
    }
}

/// Injects every fault kind in `kinds` into every neuron of the selected
/// layers (all layers when `layers` is `None`), one fault at a time, and
/// measures accuracy on the full dataset.
pub fn fault_campaign(
    net: &NetworkSpec,
    ds: &LabeledDataset,
    kinds: &[FaultKind],
    layers: Option<&[usize]>,
) -> Result<FaultReport> {
    if ds.is_empty() {
        return Err(Error::Param("fault campaign needs a nonempty dataset".into()));
    }
    if ds.shape != net.input_shape() {
        return Err(Error::Shape(format!(
            "dataset {} does not match network input {}",
            ds.shape,
            net.input_shape()
        )));
    }
    let selected: Vec<usize> = match layers {
        None => (0..net.num_layers()).collect(),
        Some(ls) => {
            let v: Vec<usize> = (0..net.num_layers()).filter(|l| ls.contains(l)).collect();
            if v.is_empty() {
                return Err(Error::Param(format!("layer filter {ls:?} matches no layer")));
            }
            v
        }
    };

    // Clean per-layer activity is cached once; a fault in layer l only needs
    // layers l+1.. recomputed.
    let clean: Vec<Vec<Vec<f64>>> = ds
        .samples
        .par_iter()
        .map(|s| forward_from(net, 0, s.input.to_f64(), s.input.steps(), None))
        .collect();
    let clean_correct: Vec<bool> = clean
        .iter()
        .zip(&ds.samples)
        .map(|(outs, s)| prediction_of(net, &outs[outs.len() - 1]) == s.label)
        .collect();
    let baseline_hits = clean_correct.iter().filter(|&&c| c).count();
    let n = ds.len() as f64;
    let baseline = baseline_hits as f64 / n;

    let jobs: Vec<FaultOverride> = selected
        .iter()
        .flat_map(|&l| (0..net.layer_size(l)).map(move |i| NeuronAddress::new(l, i)))
        .flat_map(|a| kinds.iter().map(move |&k| FaultOverride::new(a, k)))
        .collect();

    let mut entries: Vec<FaultEntry> = jobs
        .par_iter()
        .map(|fault| {
            let (l, i) = (fault.target.layer, fault.target.neuron);
            let size = net.layer_size(l);
            let forced = match fault.kind {
                FaultKind::Dead => 0.0,
                FaultKind::Saturated => 1.0,
            };
            let mut hits = 0usize;
            let mut critical = false;
            for (k, s) in ds.samples.iter().enumerate() {
                let steps = s.input.steps();
                let layer_out = &clean[k][l];
                let unchanged = (0..steps).all(|t| layer_out[t * size + i] == forced);
                let correct = if unchanged {
                    clean_correct[k]
                } else {
                    let mut out = layer_out.clone();
                    for t in 0..steps {
                        out[t * size + i] = forced;
                    }
                    let final_out = if l + 1 < net.num_layers() {
                        forward_from(net, l + 1, out, steps, None).pop().expect("at least one layer")
                    } else {
                        out
                    };
                    prediction_of(net, &final_out) == s.label
                };
                hits += correct as usize;
                critical |= clean_correct[k] && !correct;
            }
            let accuracy = hits as f64 / n;
            FaultEntry {
                address: fault.target,
                kind: fault.kind,
                accuracy,
                drop: baseline - accuracy,
                critical,
            }
        })
        .collect();

    entries.sort_by(|a, b| {
        b.drop
            .total_cmp(&a.drop)
            .then(a.address.cmp(&b.address))
            .then(a.kind.cmp(&b.kind))
    });
    Ok(FaultReport {
        baseline,
        samples: ds.len(),
        output_layer: net.output_layer(),
        entries,
    })
}

/// The most damaging saturated fault outside the output layer; ties go to
/// the lowest address.
pub fn pick_trojan(report: &FaultReport) -> Result<NeuronAddress> {
    report
        .entries
        .iter()
        .filter(|e| e.kind == FaultKind::Saturated && e.address.layer < report.output_layer)
        .min_by(|a, b| b.drop.total_cmp(&a.drop).then(a.address.cmp(&b.address)))
        .map(|e| e.address)
        .ok_or_else(|| Error::Param("report has no saturated hidden-layer entry".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Sample, Shape, SpikeTensor};
    use crate::snn::{accuracy, LayerKind, LayerSpec, NeuronParams};

    /// 2 inputs -> 3 hidden -> 2 outputs; hidden neuron 2 has no fan-out.
    fn net() -> NetworkSpec {
        let neuron = NeuronParams {
            alpha: 1.0,
            theta: 1.0,
            v_reset: 0.0,
            tau_ref: 1,
        };
        NetworkSpec::new(
            Shape::flat(2),
            vec![
                LayerSpec {
                    kind: LayerKind::Dense { inputs: 2, outputs: 3 },
                    neuron,
                    weights: vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0],
                },
                LayerSpec {
                    kind: LayerKind::Dense { inputs: 3, outputs: 2 },
                    neuron,
                    weights: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
                },
            ],
            1.0,
        )
        .unwrap()
    }

    fn ds() -> LabeledDataset {
        let mut ds = LabeledDataset::new(Shape::flat(2), 4, 2);
        for (label, bits) in [(0usize, [1u8, 0]), (1, [0, 1]), (0, [1, 0]), (1, [0, 1]), (1, [0, 1])] {
            let data = bits.iter().cycle().take(8).copied().collect();
            ds.push(Sample {
                input: SpikeTensor::from_bits(4, Shape::flat(2), data).unwrap(),
                label,
            })
            .unwrap();
        }
        ds
    }

    #[test]
    fn saturated_output_gives_prevalence() {
        let (net, ds) = (net(), ds());
        let rep = fault_campaign(&net, &ds, &[FaultKind::Saturated], Some(&[1])).unwrap();
        assert_eq!(rep.baseline, 1.0);
        let e0 = rep.entry(NeuronAddress::new(1, 0), FaultKind::Saturated).unwrap();
        assert_eq!(e0.accuracy, 2.0 / 5.0);
        assert_eq!(e0.drop, 1.0 - 2.0 / 5.0);
        // a refractory neuron fires at most every other step, so the
        // saturated one always wins
        let e1 = rep.entry(NeuronAddress::new(1, 1), FaultKind::Saturated).unwrap();
        assert_eq!(e1.accuracy, 3.0 / 5.0);
    }

    #[test]
    fn zero_fan_out_dead_fault_is_benign() {
        let (net, ds) = (net(), ds());
        let rep = fault_campaign(&net, &ds, &[FaultKind::Dead], None).unwrap();
        let e = rep.entry(NeuronAddress::new(0, 2), FaultKind::Dead).unwrap();
        assert_eq!(e.drop, 0.0);
        assert!(!e.critical);
        let f = FaultOverride::new(NeuronAddress::new(0, 2), FaultKind::Dead);
        assert_eq!(accuracy(&net, &ds, Some(&f)).unwrap(), accuracy(&net, &ds, None).unwrap());
    }

    #[test]
    fn campaign_agrees_with_direct_accuracy() {
        let (net, ds) = (net(), ds());
        let rep = fault_campaign(&net, &ds, &[FaultKind::Dead, FaultKind::Saturated], None).unwrap();
        assert_eq!(rep.entries.len(), 2 * 5);
        for e in &rep.entries {
            let f = FaultOverride::new(e.address, e.kind);
            assert_eq!(e.accuracy, accuracy(&net, &ds, Some(&f)).unwrap());
        }
        assert!(rep.entries.windows(2).all(|w| w[0].drop >= w[1].drop));
    }

    #[test]
    fn empty_kind_set_and_bad_filter() {
        let (net, ds) = (net(), ds());
        let rep = fault_campaign(&net, &ds, &[], None).unwrap();
        assert!(rep.entries.is_empty());
        assert_eq!(rep.baseline, 1.0);
        assert!(fault_campaign(&net, &ds, &[FaultKind::Dead], Some(&[7])).is_err());
        let empty = LabeledDataset::new(Shape::flat(2), 4, 2);
        assert!(fault_campaign(&net, &empty, &[FaultKind::Dead], None).is_err());
    }

    #[test]
    fn pick_trojan_rules() {
        let single = FaultReport {
            baseline: 1.0,
            samples: 1,
            output_layer: 1,
            entries: vec![FaultEntry {
                address: NeuronAddress::new(0, 4),
                kind: FaultKind::Saturated,
                accuracy: 0.9,
                drop: 0.1,
                critical: true,
            }],
        };
        assert_eq!(pick_trojan(&single).unwrap(), NeuronAddress::new(0, 4));
        let outputs_only = FaultReport {
            entries: vec![FaultEntry {
                address: NeuronAddress::new(1, 0),
                ..single.entries[0].clone()
            }],
            ..single.clone()
        };
        assert!(pick_trojan(&outputs_only).is_err());
    }

    #[test]
    fn csv_has_expected_columns() {
        let (net, ds) = (net(), ds());
        let rep = fault_campaign(&net, &ds, &[FaultKind::Dead], None).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("layer,neuron,kind,accuracy,drop,critical\n"));
        assert_eq!(text.lines().count(), 1 + 5);
        assert!(text.lines().skip(1).all(|l| l.contains(",dead,")));
    }
}
