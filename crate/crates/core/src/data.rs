//! Spike tensors, AER event lists and labeled spiking datasets.
//!
//! A [`SpikeTensor`] is a dense binary array over `(time, channel, row, col)`.
//! The same data can be viewed as a list of [`Event`]s, which is what the
//! accelerator model consumes and what the dataset files store.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATASET_VERSION: u32 = 1;

/// Spatial shape `(channels, height, width)` of one input frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub const fn flat(n: usize) -> Self {
        Shape::new(n, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index in channel-major, then row, then column order.
    #[inline]
    pub const fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub const fn coords(&self, flat: usize) -> (usize, usize, usize) {
        let x = flat % self.width;
        let y = (flat / self.width) % self.height;
        let c = flat / (self.width * self.height);
        (c, y, x)
    }
}

impl From<[usize; 3]> for Shape {
    fn from(v: [usize; 3]) -> Self {
        Shape::new(v[0], v[1], v[2])
    }
}

impl From<Shape> for [usize; 3] {
    fn from(s: Shape) -> Self {
        [s.channels, s.height, s.width]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// One address event: a spike at timestep `t` on input cell `(channel, y, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Event {
    pub t: u32,
    pub channel: u32,
    pub y: u32,
    pub x: u32,
}

impl Event {
    pub const fn new(t: u32, channel: u32, y: u32, x: u32) -> Self {
        Event { t, channel, y, x }
    }

    pub fn as_array(&self) -> [u32; 4] {
        [self.t, self.channel, self.y, self.x]
    }
}

impl From<[u32; 4]> for Event {
    fn from(a: [u32; 4]) -> Self {
        Event::new(a[0], a[1], a[2], a[3])
    }
}

/// Dense binary spike array over `(steps, C, H, W)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SpikeTensor {
    steps: usize,
    shape: Shape,
    data: Vec<u8>,
}

impl SpikeTensor {
    pub fn zeros(steps: usize, shape: Shape) -> Self {
        SpikeTensor {
            steps,
            shape,
            data: vec![0; steps * shape.len()],
        }
    }

    /// Builds a tensor from time-major binary data. Any nonzero value is
    /// rejected so that the tensor stays strictly binary.
    pub fn from_bits(steps: usize, shape: Shape, data: Vec<u8>) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Param("spike tensor needs at least one step".into()));
        }
        if data.len() != steps * shape.len() {
            return Err(Error::Shape(format!(
                "{} values for {} steps of {}",
                data.len(),
                steps,
                shape
            )));
        }
        if data.iter().any(|&b| b > 1) {
            return Err(Error::Param("spike values must be 0 or 1".into()));
        }
        Ok(SpikeTensor { steps, shape, data })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Number of cells per frame.
    pub fn frame_len(&self) -> usize {
        self.shape.len()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.shape.len();
        &self.data[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize, y: usize, x: usize) -> bool {
        self.data[t * self.shape.len() + self.shape.index(c, y, x)] != 0
    }

    #[inline]
    pub fn set(&mut self, t: usize, c: usize, y: usize, x: usize, on: bool) {
        let n = self.shape.len();
        self.data[t * n + self.shape.index(c, y, x)] = on as u8;
    }

    /// Spike train of a single cell, by flat index.
    pub fn train(&self, flat: usize) -> Vec<u8> {
        let n = self.shape.len();
        (0..self.steps).map(|t| self.data[t * n + flat]).collect()
    }

    /// Total spike count per cell over the full duration.
    pub fn counts(&self) -> Vec<u32> {
        let n = self.shape.len();
        let mut out = vec![0u32; n];
        for frame in self.data.chunks_exact(n.max(1)) {
            for (o, &b) in out.iter_mut().zip(frame) {
                *o += b as u32;
            }
        }
        out
    }

    pub fn spike_count(&self) -> usize {
        self.data.iter().filter(|&&b| b != 0).count()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&b| b as f64).collect()
    }

    /// Events in canonical `(t, c, y, x)` order.
    pub fn to_events(&self) -> Vec<Event> {
        let n = self.shape.len();
        let mut events = Vec::new();
        for (i, _) in self.data.iter().enumerate().filter(|(_, &b)| b != 0) {
            let (c, y, x) = self.shape.coords(i % n);
            events.push(Event::new((i / n) as u32, c as u32, y as u32, x as u32));
        }
        events
    }

    pub fn from_events(events: &[Event], steps: usize, shape: Shape) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Param("spike tensor needs at least one step".into()));
        }
        let mut out = SpikeTensor::zeros(steps, shape);
        for e in events {
            let (t, c, y, x) = (e.t as usize, e.channel as usize, e.y as usize, e.x as usize);
            if t >= steps || c >= shape.channels || y >= shape.height || x >= shape.width {
                return Err(Error::Format {
                    line: 0,
                    message: format!(
                        "event {:?} outside {} steps of {}",
                        e.as_array(),
                        steps,
                        shape
                    ),
                });
            }
            out.set(t, c, y, x, true);
        }
        Ok(out)
    }

    /// Concatenates `other` after `self` along time.
    pub fn concat(&self, other: &SpikeTensor) -> Result<SpikeTensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{} vs {}", self.shape, other.shape)));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(SpikeTensor {
            steps: self.steps + other.steps,
            shape: self.shape,
            data,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub input: SpikeTensor,
    pub label: usize,
}

/// Samples sharing one shape and duration, labeled `0..class_count`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledDataset {
    pub shape: Shape,
    pub steps: usize,
    pub class_count: usize,
    pub samples: Vec<Sample>,
}

impl LabeledDataset {
    pub fn new(shape: Shape, steps: usize, class_count: usize) -> Self {
        LabeledDataset {
            shape,
            steps,
            class_count,
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, sample: Sample) -> Result<()> {
        if sample.input.shape() != self.shape || sample.input.steps() != self.steps {
            return Err(Error::Shape(format!(
                "sample is {} steps of {}, dataset is {} steps of {}",
                sample.input.steps(),
                sample.input.shape(),
                self.steps,
                self.shape
            )));
        }
        if sample.label >= self.class_count {
            return Err(Error::Param(format!(
                "label {} >= class count {}",
                sample.label, self.class_count
            )));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of samples per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for s in &self.samples {
            h[s.label] += 1;
        }
        h
    }

    /// Splits off the first `n` samples as the first half of the result.
    pub fn split(mut self, n: usize) -> (LabeledDataset, LabeledDataset) {
        let n = n.min(self.samples.len());
        let rest = self.samples.split_off(n);
        let tail = LabeledDataset {
            samples: rest,
            ..LabeledDataset::new(self.shape, self.steps, self.class_count)
        };
        (self, tail)
    }

    /// Concatenates two datasets of identical geometry.
    pub fn merged(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        if self.shape != other.shape || self.steps != other.steps {
            return Err(Error::Shape("datasets differ in shape or duration".into()));
        }
        let mut out = self.clone();
        out.class_count = self.class_count.max(other.class_count);
        out.samples.extend(other.samples.iter().cloned());
        Ok(out)
    }
}

/// Parameters of the synthetic hot-pixel dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticParams {
    pub classes: usize,
    pub samples_per_class: usize,
    pub shape: Shape,
    pub steps: usize,
    pub rate_hi: f64,
    pub rate_lo: f64,
    /// Fraction of cells that belong to a class's hot mask.
    pub hot_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            classes: 4,
            samples_per_class: 50,
            shape: Shape::new(2, 16, 16),
            steps: 64,
            rate_hi: 0.3,
            rate_lo: 0.02,
            hot_fraction: 0.2,
            seed: 7,
        }
    }
}

/// Generates a dataset where every class is a fixed random mask of hot cells
/// firing as Bernoulli(`rate_hi`) per step over a Bernoulli(`rate_lo`)
/// background. The output order is shuffled with the same seeded stream.
pub fn generate_synthetic(p: &SyntheticParams) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&p.rate_lo)
        || !(0.0..=1.0).contains(&p.rate_hi)
        || p.rate_lo > p.rate_hi
        || (p.rate_lo == p.rate_hi && p.rate_hi != 0.0)
    {
        return Err(Error::Param(format!(
            "rates must satisfy 0 <= rate_lo < rate_hi <= 1 (got {} / {})",
            p.rate_lo, p.rate_hi
        )));
    }
    if !(0.0..=1.0).contains(&p.hot_fraction) {
        return Err(Error::Param("hot_fraction must lie in [0, 1]".into()));
    }
    if p.classes < 2 {
        return Err(Error::Param("at least two classes are required".into()));
    }
    if p.samples_per_class == 0 || p.steps == 0 || p.shape.is_empty() {
        return Err(Error::Param("counts and dimensions must be nonzero".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let cells = p.shape.len();
    let masks: Vec<Vec<bool>> = (0..p.classes)
        .map(|_| (0..cells).map(|_| rng.random_bool(p.hot_fraction)).collect())
        .collect();

    let mut samples = Vec::with_capacity(p.classes * p.samples_per_class);
    for (label, mask) in masks.iter().enumerate() {
        for _ in 0..p.samples_per_class {
            let mut data = vec![0u8; p.steps * cells];
            for frame in data.chunks_exact_mut(cells) {
                for (cell, &hot) in frame.iter_mut().zip(mask) {
                    let rate = if hot { p.rate_hi } else { p.rate_lo };
                    *cell = rng.random_bool(rate) as u8;
                }
            }
            samples.push(Sample {
                input: SpikeTensor {
                    steps: p.steps,
                    shape: p.shape,
                    data,
                },
                label,
            });
        }
    }
    samples.shuffle(&mut rng);
    Ok(LabeledDataset {
        shape: p.shape,
        steps: p.steps,
        class_count: p.classes,
        samples,
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    shape: Shape,
    #[serde(rename = "T_steps")]
    steps: usize,
    class_count: usize,
    samples: usize,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    label: usize,
    events: Vec<[u32; 4]>,
}

pub fn write_dataset<W: Write>(ds: &LabeledDataset, mut w: W) -> Result<()> {
    let header = Header {
        version: DATASET_VERSION,
        shape: ds.shape,
        steps: ds.steps,
        class_count: ds.class_count,
        samples: ds.samples.len(),
    };
    let io = |e| Error::io("<dataset>", e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for s in &ds.samples {
        let rec = SampleRecord {
            label: s.label,
            events: s.input.to_events().iter().map(Event::as_array).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<LabeledDataset> {
    let mut lines = r.lines().enumerate();
    let fmt = |line: usize, message: String| Error::Format {
        line: line + 1,
        message,
    };
    let (_, first) = lines
        .next()
        .ok_or_else(|| fmt(0, "missing header line".into()))?;
    let first = first.map_err(|e| fmt(0, e.to_string()))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| fmt(0, e.to_string()))?;
    if header.version != DATASET_VERSION {
        return Err(fmt(0, format!("unsupported version {}", header.version)));
    }
    if header.steps == 0 {
        return Err(fmt(0, "T_steps must be at least 1".into()));
    }
    let mut ds = LabeledDataset::new(header.shape, header.steps, header.class_count);
    for (i, line) in lines {
        let line = line.map_err(|e| fmt(i, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| fmt(i, e.to_string()))?;
        let events: Vec<Event> = rec.events.into_iter().map(Event::from).collect();
        let input = SpikeTensor::from_events(&events, header.steps, header.shape).map_err(|e| match e {
            Error::Format { message, .. } => fmt(i, message),
            other => fmt(i, other.to_string()),
        })?;
        ds.push(Sample {
            input,
            label: rec.label,
        })
        .map_err(|e| fmt(i, e.to_string()))?;
    }
    if ds.samples.len() != header.samples {
        return Err(fmt(
            ds.samples.len(),
            format!(
                "truncated dataset: header declares {} samples, found {}",
                header.samples,
                ds.samples.len()
            ),
        ));
    }
    Ok(ds)
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &LabeledDataset) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(ds, BufWriter::new(f))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(f))
}
