use serde::{Deserialize, Serialize};

use super::NeuronAddress;
use crate::data::Shape;
use crate::error::{Error, Result};

/// LIF neuron constants shared by every neuron of a layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    /// Multiplicative leak per step, in `(0, 1]`.
    pub alpha: f64,
    pub theta: f64,
    pub v_reset: f64,
    /// Silent steps after each spike.
    pub tau_ref: u32,
}

impl Default for NeuronParams {
    fn default() -> Self {
        NeuronParams {
            alpha: 0.9,
            theta: 1.0,
            v_reset: 0.0,
            tau_ref: 1,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Param(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            return Err(Error::Param(format!("theta {} must be positive", self.theta)));
        }
        if !(self.theta > self.v_reset) {
            return Err(Error::Param(format!(
                "theta {} must exceed v_reset {}",
                self.theta, self.v_reset
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum LayerKind {
    /// Fully connected; weights are out-major (`w[o * inputs + i]`).
    Dense { inputs: usize, outputs: usize },
    /// 2-D convolution; weights ordered `(out_ch, in_ch, ky, kx)`.
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// Non-overlapping sum pooling with a single shared weight.
    SumPool { factor: usize },
}

impl LayerKind {
    pub fn weight_count(&self) -> usize {
        match *self {
            LayerKind::Dense { inputs, outputs } => inputs * outputs,
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel,
                ..
            } => out_ch * in_ch * kernel * kernel,
            LayerKind::SumPool { .. } => 1,
        }
    }

    /// Output shape for a given input shape, or why they don't compose.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match *self {
            LayerKind::Dense { inputs, outputs } => {
                if input.len() != inputs {
                    return Err(Error::Shape(format!(
                        "dense layer expects {inputs} inputs, got {input}"
                    )));
                }
                Ok(Shape::flat(outputs))
            }
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            } => {
                if kernel == 0 || stride == 0 {
                    return Err(Error::Param("kernel and stride must be >= 1".into()));
                }
                if input.channels != in_ch {
                    return Err(Error::Shape(format!(
                        "conv expects {in_ch} channels, got {input}"
                    )));
                }
                let (h, w) = (input.height + 2 * pad, input.width + 2 * pad);
                if h < kernel || w < kernel {
                    return Err(Error::Shape(format!(
                        "kernel {kernel} larger than padded input {input}"
                    )));
                }
                Ok(Shape::new(out_ch, (h - kernel) / stride + 1, (w - kernel) / stride + 1))
            }
            LayerKind::SumPool { factor } => {
                if factor == 0 {
                    return Err(Error::Param("pool factor must be >= 1".into()));
                }
                if !input.height.is_multiple_of(factor) || !input.width.is_multiple_of(factor) {
                    return Err(Error::Shape(format!(
                        "pool factor {factor} does not divide {input}"
                    )));
                }
                Ok(Shape::new(input.channels, input.height / factor, input.width / factor))
            }
        }
    }

    fn fanout(&self, input: Shape, output: Shape) -> Fanout {
        let mut lists: Vec<Vec<(u32, u32)>> = vec![Vec::new(); input.len()];
        match *self {
            LayerKind::Dense { inputs, outputs } => {
                for (i, list) in lists.iter_mut().enumerate() {
                    list.extend((0..outputs).map(|o| (o as u32, (o * inputs + i) as u32)));
                }
            }
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            } => {
                for oc in 0..out_ch {
                    for oy in 0..output.height {
                        for ox in 0..output.width {
                            let target = output.index(oc, oy, ox) as u32;
                            for ic in 0..in_ch {
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if iy < 0
                                            || ix < 0
                                            || iy >= input.height as isize
                                            || ix >= input.width as isize
                                        {
                                            continue;
                                        }
                                        let src = input.index(ic, iy as usize, ix as usize);
                                        let w = ((oc * in_ch + ic) * kernel + ky) * kernel + kx;
                                        lists[src].push((target, w as u32));
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::SumPool { factor } => {
                for (src, list) in lists.iter_mut().enumerate() {
                    let (c, y, x) = input.coords(src);
                    list.push((output.index(c, y / factor, x / factor) as u32, 0));
                }
            }
        }
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for mut list in lists {
            list.sort_unstable();
            entries.extend(list);
            offsets.push(entries.len());
        }
        Fanout { offsets, entries }
    }
}

/// Source-indexed connectivity of one layer: for each presynaptic cell, the
/// postsynaptic neurons it reaches (ascending) and the weight slot used.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fanout {
    offsets: Vec<usize>,
    entries: Vec<(u32, u32)>,
}

impl Fanout {
    #[inline]
    pub fn targets(&self, source: usize) -> &[(u32, u32)] {
        &self.entries[self.offsets[source]..self.offsets[source + 1]]
    }

    pub fn sources(&self) -> usize {
        self.offsets.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub neuron: NeuronParams,
    pub weights: Vec<f64>,
}

/// Feed-forward spiking network. Immutable topology; weights can be edited
/// in place through [`NetworkSpec::weights_mut`].
#[derive(Clone, Debug)]
pub struct NetworkSpec {
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    t_f_ms: f64,
    shapes: Vec<Shape>,
    fanouts: Vec<Fanout>,
}

impl PartialEq for NetworkSpec {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape
            && self.layers == other.layers
            && self.t_f_ms.to_bits() == other.t_f_ms.to_bits()
    }
}

impl NetworkSpec {
    pub fn new(input_shape: Shape, layers: Vec<LayerSpec>, t_f_ms: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Model("network has no layers".into()));
        }
        if input_shape.is_empty() {
            return Err(Error::Shape("empty input shape".into()));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut fanouts = Vec::with_capacity(layers.len());
        let mut cur = input_shape;
        for (i, layer) in layers.iter().enumerate() {
            let ctx = |e: Error| Error::Model(format!("layer {i}: {e}"));
            layer.neuron.validate().map_err(ctx)?;
            let out = layer.kind.output_shape(cur).map_err(ctx)?;
            if layer.weights.len() != layer.kind.weight_count() {
                return Err(Error::Model(format!(
                    "layer {i}: expected {} weights, found {}",
                    layer.kind.weight_count(),
                    layer.weights.len()
                )));
            }
            if layer.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::Model(format!("layer {i}: non-finite weight")));
            }
            fanouts.push(layer.kind.fanout(cur, out));
            shapes.push(out);
            cur = out;
        }
        Ok(NetworkSpec {
            input_shape,
            layers,
            t_f_ms,
            shapes,
            fanouts,
        })
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &LayerSpec {
        &self.layers[l]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn t_f_ms(&self) -> f64 {
        self.t_f_ms
    }

    /// Output shape of layer `l`.
    pub fn layer_shape(&self, l: usize) -> Shape {
        self.shapes[l]
    }

    /// Shape of the cells feeding layer `l`.
    pub fn layer_input_shape(&self, l: usize) -> Shape {
        if l == 0 {
            self.input_shape
        } else {
            self.shapes[l - 1]
        }
    }

    pub fn layer_size(&self, l: usize) -> usize {
        self.shapes[l].len()
    }

    pub fn class_count(&self) -> usize {
        self.shapes[self.shapes.len() - 1].len()
    }

    pub fn output_layer(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn neuron_count(&self) -> usize {
        self.shapes.iter().map(Shape::len).sum()
    }

    pub fn fanout(&self, l: usize) -> &Fanout {
        &self.fanouts[l]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.layers[l].weights
    }

    pub fn check_address(&self, a: NeuronAddress) -> Result<()> {
        if a.layer >= self.layers.len() {
            return Err(Error::Address(a, format!("network has {} layers", self.layers.len())));
        }
        if a.neuron >= self.layer_size(a.layer) {
            return Err(Error::Address(
                a,
                format!("layer has {} neurons", self.layer_size(a.layer)),
            ));
        }
        Ok(())
    }

    /// Every neuron address, layer by layer in canonical order.
    pub fn addresses(&self) -> impl Iterator<Item = NeuronAddress> + '_ {
        (0..self.layers.len())
            .flat_map(move |l| (0..self.layer_size(l)).map(move |n| NeuronAddress::new(l, n)))
    }

    /// Sum of absolute outgoing weights of a neuron, zero for output neurons.
    pub fn fan_out_weight(&self, a: NeuronAddress) -> f64 {
        if a.layer + 1 >= self.layers.len() {
            return 0.0;
        }
        let next = &self.layers[a.layer + 1];
        self.fanouts[a.layer + 1]
            .targets(a.neuron)
            .iter()
            .map(|&(_, w)| next.weights[w as usize].abs())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(i: usize, o: usize) -> LayerSpec {
        LayerSpec {
            kind: LayerKind::Dense {
                inputs: i,
                outputs: o,
            },
            neuron: NeuronParams::default(),
            weights: vec![0.1; i * o],
        }
    }

    #[test]
    fn shapes_compose() {
        let conv = LayerSpec {
            kind: LayerKind::Conv2d {
                in_ch: 2,
                out_ch: 4,
                kernel: 3,
                stride: 2,
                pad: 1,
            },
            neuron: NeuronParams::default(),
            weights: vec![0.0; 72],
        };
        let pool = LayerSpec {
            kind: LayerKind::SumPool { factor: 2 },
            neuron: NeuronParams::default(),
            weights: vec![1.0],
        };
        let net =
            NetworkSpec::new(Shape::new(2, 16, 16), vec![conv, pool, dense(64, 3)], 1.0).unwrap();
        assert_eq!(net.layer_shape(0), Shape::new(4, 8, 8));
        assert_eq!(net.layer_shape(1), Shape::new(4, 4, 4));
        assert_eq!(net.class_count(), 3);
        assert_eq!(net.neuron_count(), 256 + 64 + 3);
    }

    #[test]
    fn mismatched_shapes_fail() {
        assert!(NetworkSpec::new(Shape::flat(4), vec![dense(5, 2)], 1.0).is_err());
        assert!(NetworkSpec::new(Shape::flat(4), vec![], 1.0).is_err());
        let mut bad = dense(4, 2);
        bad.weights.pop();
        let err = NetworkSpec::new(Shape::flat(4), vec![bad], 1.0).unwrap_err();
        assert!(err.to_string().contains("layer 0"));
    }

    #[test]
    fn conv_fanout_matches_direct_indexing() {
        let kind = LayerKind::Conv2d {
            in_ch: 1,
            out_ch: 1,
            kernel: 3,
            stride: 1,
            pad: 1,
        };
        let shape = Shape::new(1, 3, 3);
        let out = kind.output_shape(shape).unwrap();
        let f = kind.fanout(shape, out);
        // centre pixel reaches every output through the mirrored tap
        let centre = f.targets(4);
        assert_eq!(centre.len(), 9);
        for &(t, w) in centre {
            let (_, oy, ox) = out.coords(t as usize);
            assert_eq!(w as usize, (1 + 1 - oy) * 3 + (1 + 1 - ox));
        }
        // corner pixel reaches the 2x2 neighbourhood only
        assert_eq!(f.targets(0).len(), 4);
    }

    #[test]
    fn neuron_params_validation() {
        assert!(NeuronParams { alpha: 0.0, ..Default::default() }.validate().is_err());
        assert!(NeuronParams { alpha: 1.2, ..Default::default() }.validate().is_err());
        assert!(NeuronParams { theta: 0.0, ..Default::default() }.validate().is_err());
        assert!(NeuronParams { v_reset: 2.0, ..Default::default() }.validate().is_err());
        assert!(NeuronParams::default().validate().is_ok());
    }
}
