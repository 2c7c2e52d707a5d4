use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, NetworkSpec};
use crate::data::Shape;
use crate::error::{Error, Result};

pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    #[serde(rename = "T_f_ms")]
    t_f_ms: f64,
    input_shape: Shape,
    layers: Vec<LayerSpec>,
}

pub fn write_model<W: Write>(net: &NetworkSpec, mut w: W) -> Result<()> {
    let file = ModelFile {
        version: MODEL_VERSION,
        t_f_ms: net.t_f_ms(),
        input_shape: net.input_shape(),
        layers: net.layers().to_vec(),
    };
    serde_json::to_writer_pretty(&mut w, &file)?;
    w.write_all(b"\n").map_err(|e| Error::io("<model>", e))?;
    Ok(())
}

pub fn read_model<R: Read>(r: R) -> Result<NetworkSpec> {
    let file: ModelFile =
        serde_json::from_reader(r).map_err(|e| Error::Model(format!("malformed model file: {e}")))?;
    if file.version != MODEL_VERSION {
        return Err(Error::Model(format!(
            "version {} not supported (expected {MODEL_VERSION})",
            file.version
        )));
    }
    NetworkSpec::new(file.input_shape, file.layers, file.t_f_ms)
}

pub fn save_model(path: impl AsRef<Path>, net: &NetworkSpec) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_model(net, BufWriter::new(f))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NetworkSpec> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::{LayerKind, NeuronParams};
    use rand::{Rng, SeedableRng};

    fn net() -> NetworkSpec {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut w = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        NetworkSpec::new(
            Shape::new(2, 6, 6),
            vec![
                LayerSpec {
                    kind: LayerKind::Conv2d {
                        in_ch: 2,
                        out_ch: 3,
                        kernel: 3,
                        stride: 1,
                        pad: 1,
                    },
                    neuron: NeuronParams::default(),
                    weights: w(54),
                },
                LayerSpec {
                    kind: LayerKind::SumPool { factor: 2 },
                    neuron: NeuronParams {
                        tau_ref: 0,
                        ..NeuronParams::default()
                    },
                    weights: vec![1.1],
                },
                LayerSpec {
                    kind: LayerKind::Dense {
                        inputs: 27,
                        outputs: 4,
                    },
                    neuron: NeuronParams::default(),
                    weights: w(108),
                },
            ],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let n = net();
        let mut buf = Vec::new();
        write_model(&n, &mut buf).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, n);
        for (a, b) in back.layers().iter().zip(n.layers()) {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn empty_layer_list_is_rejected() {
        let text = r#"{"version":1,"T_f_ms":1.0,"input_shape":[1,1,1],"layers":[]}"#;
        assert!(matches!(read_model(text.as_bytes()), Err(Error::Model(_))));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let text = r#"{"version":9,"T_f_ms":1.0,"input_shape":[1,1,1],"layers":[]}"#;
        let err = read_model(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("version 9"));
    }

    #[test]
    fn corrupted_weight_count_names_the_layer() {
        let mut buf = Vec::new();
        write_model(&net(), &mut buf).unwrap();
        let mut v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        v["layers"][2]["weights"].as_array_mut().unwrap().pop();
        let err = read_model(v.to_string().as_bytes()).unwrap_err();
        assert!(err.to_string().contains("layer 2"), "{err}");
    }

    #[test]
    fn file_layout_uses_kind_and_params() {
        let mut buf = Vec::new();
        write_model(&net(), &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["layers"][0]["kind"], "conv2d");
        assert_eq!(v["layers"][0]["params"]["kernel"], 3);
        assert_eq!(v["layers"][1]["params"]["factor"], 2);
        assert_eq!(v["layers"][2]["neuron"]["tau_ref"], 1);
    }
}
