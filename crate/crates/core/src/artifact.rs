//! Versioned binary persistence.
//!
//! Every file is `CNNINTE1` magic, a kind byte, a u16 version, a u64
//! payload length, the payload, and a CRC32 of everything before it. All
//! integers are little-endian; lengths and indices are stored as u64.

use std::fs;
use std::path::Path;

use crate::clustering::{Factor, FactorModel, KMeansModel};
use crate::cnn::{ActivationMatrix, CnnConfig, CnnModel};
use crate::error::{Error, Result};
use crate::forest::{DecisionTree, ForestConfig, RandomForest, TreeNode};
use crate::nn::{LayerParams, Moments, Tensor};

pub const MAGIC: &[u8; 8] = b"CNNINTE1";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 8 + 1 + 2 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Model = 1,
    Activations = 2,
    Factor = 3,
    Tree = 4,
    Forest = 5,
    Trace = 6,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Model => "model",
            Kind::Activations => "activations",
            Kind::Factor => "factor",
            Kind::Tree => "tree",
            Kind::Forest => "forest",
            Kind::Trace => "trace",
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => Kind::Model,
            2 => Kind::Activations,
            3 => Kind::Factor,
            4 => Kind::Tree,
            5 => Kind::Forest,
            6 => Kind::Trace,
            _ => return None,
        })
    }
}

/// Wraps a payload in the container format.
pub fn seal(kind: Kind, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.push(kind as u8);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Validates the container and returns its payload.
pub fn open(expected: Kind, bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::Truncated { expected: HEADER_LEN + 4, actual: bytes.len() });
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Artifact(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..8]))));
    }
    let found = Kind::from_tag(bytes[8]);
    if found != Some(expected) {
        return Err(Error::KindMismatch {
            expected: expected.name(),
            found: found.map_or_else(|| format!("tag {}", bytes[8]), |k| k.name().to_string()),
        });
    }
    let version = u16::from_le_bytes([bytes[9], bytes[10]]);
    if version != VERSION {
        return Err(Error::Artifact(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[11..19].try_into().unwrap());
    let total = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(HEADER_LEN + 4))
        .ok_or_else(|| Error::Artifact(format!("payload length {len} overflows")))?;
    if bytes.len() != total {
        return Err(Error::Truncated { expected: total, actual: bytes.len() });
    }
    let body_end = total - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    Ok(&bytes[HEADER_LEN..body_end])
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
    fn usizes(&mut self, v: &[usize]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.usize(x));
    }
    fn tensor(&mut self, t: &Tensor) {
        self.usizes(t.shape());
        self.f64s(t.data());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(Error::Truncated {
            expected: self.pos.saturating_add(n),
            actual: self.buf.len(),
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Artifact(format!("value {v} exceeds usize")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// Element count, bounded by what the remaining bytes could hold.
    fn count(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.usize()?;
        let remaining = self.buf.len() - self.pos;
        if n.checked_mul(elem_size.max(1)).is_none_or(|b| b > remaining) {
            return Err(Error::Truncated { expected: n.saturating_mul(elem_size), actual: remaining });
        }
        Ok(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.usize()).collect()
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let shape = self.usizes()?;
        let data = self.f64s()?;
        Tensor::from_vec(shape, data)
    }
    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Artifact(format!("{} trailing payload bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn write_layer(w: &mut Writer, p: &LayerParams) {
    w.tensor(&p.weights);
    w.tensor(&p.biases);
    for m in [&p.weight_moments, &p.bias_moments] {
        w.tensor(&m.m);
        w.tensor(&m.v);
    }
    w.u64(p.step_count);
}

fn read_layer(r: &mut Reader<'_>) -> Result<LayerParams> {
    let weights = r.tensor()?;
    let biases = r.tensor()?;
    let weight_moments = Moments { m: r.tensor()?, v: r.tensor()? };
    let bias_moments = Moments { m: r.tensor()?, v: r.tensor()? };
    let step_count = r.u64()?;
    Ok(LayerParams { weights, biases, weight_moments, bias_moments, step_count })
}

pub fn encode_model(model: &CnnModel) -> Vec<u8> {
    let mut w = Writer::default();
    let c = &model.config;
    for v in [c.image_side, c.conv1_filters, c.conv2_filters, c.kernel_size, c.pool_window, c.pool_stride] {
        w.usize(v);
    }
    w.usize(c.fc1_neurons);
    w.usize(c.classes);
    w.f64(c.keep_probability);
    w.u64(c.steps);
    w.usize(c.batch_size);
    w.f64(c.learning_rate);
    w.u64(c.seed);
    for layer in model.layers() {
        write_layer(&mut w, layer);
    }
    w.f64s(&model.training_log);
    seal(Kind::Model, &w.buf)
}

pub fn decode_model(bytes: &[u8]) -> Result<CnnModel> {
    let mut r = Reader::new(open(Kind::Model, bytes)?);
    let config = CnnConfig {
        image_side: r.usize()?,
        conv1_filters: r.usize()?,
        conv2_filters: r.usize()?,
        kernel_size: r.usize()?,
        pool_window: r.usize()?,
        pool_stride: r.usize()?,
        fc1_neurons: r.usize()?,
        classes: r.usize()?,
        keep_probability: r.f64()?,
        steps: r.u64()?,
        batch_size: r.usize()?,
        learning_rate: r.f64()?,
        seed: r.u64()?,
    };
    config.validate()?;
    let model = CnnModel {
        conv1: read_layer(&mut r)?,
        conv2: read_layer(&mut r)?,
        fc1: read_layer(&mut r)?,
        fc2: read_layer(&mut r)?,
        config,
        training_log: r.f64s()?,
    };
    r.finish()?;
    let fresh = CnnModel::init(model.config.clone())?;
    for (a, b) in model.layers().iter().zip(fresh.layers()) {
        if a.weights.shape() != b.weights.shape() || a.biases.shape() != b.biases.shape() {
            return Err(Error::Artifact("layer shapes do not match the stored config".into()));
        }
    }
    Ok(model)
}

pub fn encode_activations(a: &ActivationMatrix) -> Vec<u8> {
    let mut w = Writer::default();
    w.usize(a.neurons());
    w.usize(a.instances());
    w.buf.extend_from_slice(a.labels());
    a.values().iter().for_each(|&v| w.f64(v));
    seal(Kind::Activations, &w.buf)
}

pub fn decode_activations(bytes: &[u8]) -> Result<ActivationMatrix> {
    let mut r = Reader::new(open(Kind::Activations, bytes)?);
    let neurons = r.usize()?;
    let instances = r.usize()?;
    let labels = r.take(instances)?.to_vec();
    let cells = neurons
        .checked_mul(instances)
        .ok_or_else(|| Error::Artifact("activation size overflows".into()))?;
    let raw = r.take(cells.checked_mul(8).ok_or_else(|| Error::Artifact("activation size overflows".into()))?)?;
    let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    r.finish()?;
    ActivationMatrix::new(neurons, instances, values, labels)
}

fn write_kmeans(w: &mut Writer, m: &KMeansModel) {
    w.usize(m.k);
    w.usize(m.dim);
    w.f64s(&m.centroids);
    w.usizes(&m.assignment);
    w.f64(m.inertia);
    w.f64s(&m.inertia_history);
    w.usize(m.iterations);
}

fn read_kmeans(r: &mut Reader<'_>) -> Result<KMeansModel> {
    let m = KMeansModel {
        k: r.usize()?,
        dim: r.usize()?,
        centroids: r.f64s()?,
        assignment: r.usizes()?,
        inertia: r.f64()?,
        inertia_history: r.f64s()?,
        iterations: r.usize()?,
    };
    if m.centroids.len() != m.k * m.dim || m.assignment.iter().any(|&a| a >= m.k) {
        return Err(Error::Artifact("inconsistent k-means model".into()));
    }
    Ok(m)
}

pub fn encode_factor_model(f: &FactorModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.usize(f.neurons);
    w.usize(f.clusters);
    w.usizes(&f.factor_of_neuron);
    w.usize(f.factors.len());
    for factor in &f.factors {
        w.usizes(&factor.neurons);
        write_kmeans(&mut w, &factor.clustering);
        w.usizes(&factor.canonical_relabel);
    }
    seal(Kind::Factor, &w.buf)
}

pub fn decode_factor_model(bytes: &[u8]) -> Result<FactorModel> {
    let mut r = Reader::new(open(Kind::Factor, bytes)?);
    let neurons = r.usize()?;
    let clusters = r.usize()?;
    let factor_of_neuron = r.usizes()?;
    let count = r.count(1)?;
    let mut factors = Vec::with_capacity(count);
    for _ in 0..count {
        let members = r.usizes()?;
        let clustering = read_kmeans(&mut r)?;
        let canonical_relabel = r.usizes()?;
        if clustering.dim != members.len()
            || canonical_relabel.len() != clustering.k
            || members.iter().any(|&n| n >= neurons)
        {
            return Err(Error::Artifact("inconsistent factor".into()));
        }
        factors.push(Factor { neurons: members, clustering, canonical_relabel });
    }
    r.finish()?;
    if factor_of_neuron.len() != neurons || factor_of_neuron.iter().any(|&f| f >= count) {
        return Err(Error::Artifact("neuron-to-factor map is inconsistent".into()));
    }
    Ok(FactorModel { neurons, clusters, factor_of_neuron, factors })
}

fn write_tree(w: &mut Writer, t: &DecisionTree) {
    w.usize(t.feature_count);
    w.usize(t.classes);
    w.u64(t.max_depth.map_or(u64::MAX, |d| d as u64));
    w.usize(t.nodes.len());
    for node in &t.nodes {
        match node {
            &TreeNode::Internal { feature, threshold, left, right } => {
                w.u8(0);
                w.usize(feature);
                w.f64(threshold);
                w.usize(left);
                w.usize(right);
            }
            TreeNode::Leaf { histogram, class } => {
                w.u8(1);
                w.usize(*class);
                histogram.iter().for_each(|&h| w.u64(h));
            }
        }
    }
}

fn read_tree(r: &mut Reader<'_>) -> Result<DecisionTree> {
    let feature_count = r.usize()?;
    let classes = r.usize()?;
    let max_depth = match r.u64()? {
        u64::MAX => None,
        d => Some(usize::try_from(d).map_err(|_| Error::Artifact("bad depth".into()))?),
    };
    let count = r.count(9)?;
    let mut nodes = Vec::with_capacity(count);
    for _ in 0..count {
        nodes.push(match r.u8()? {
            0 => TreeNode::Internal { feature: r.usize()?, threshold: r.f64()?, left: r.usize()?, right: r.usize()? },
            1 => {
                let class = r.usize()?;
                let histogram = (0..classes).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
                TreeNode::Leaf { histogram, class }
            }
            t => return Err(Error::Artifact(format!("unknown tree node tag {t}"))),
        });
    }
    let valid = !nodes.is_empty()
        && nodes.iter().enumerate().all(|(i, n)| match *n {
            TreeNode::Internal { feature, left, right, .. } => {
                feature < feature_count && left > i && right > i && left < count && right < count
            }
            TreeNode::Leaf { class, .. } => class < classes,
        });
    if !valid {
        return Err(Error::Artifact("malformed tree".into()));
    }
    Ok(DecisionTree { nodes, max_depth, feature_count, classes })
}

pub fn encode_tree(t: &DecisionTree) -> Vec<u8> {
    let mut w = Writer::default();
    write_tree(&mut w, t);
    seal(Kind::Tree, &w.buf)
}

pub fn decode_tree(bytes: &[u8]) -> Result<DecisionTree> {
    let mut r = Reader::new(open(Kind::Tree, bytes)?);
    let t = read_tree(&mut r)?;
    r.finish()?;
    Ok(t)
}

pub fn encode_forest(f: &RandomForest) -> Vec<u8> {
    let mut w = Writer::default();
    let c = &f.config;
    w.usize(c.n_trees);
    w.usize(c.max_nodes);
    w.u64(c.features_per_split.map_or(u64::MAX, |m| m as u64));
    w.u8(u8::from(c.bootstrap));
    w.u64(c.seed);
    w.usize(f.classes);
    w.usize(f.feature_count);
    w.usize(f.training_rows);
    w.usize(f.trees.len());
    for (tree, &s) in f.trees.iter().zip(&f.tree_seeds) {
        w.u64(s);
        write_tree(&mut w, tree);
    }
    seal(Kind::Forest, &w.buf)
}

pub fn decode_forest(bytes: &[u8]) -> Result<RandomForest> {
    let mut r = Reader::new(open(Kind::Forest, bytes)?);
    let n_trees = r.usize()?;
    let max_nodes = r.usize()?;
    let features_per_split = match r.u64()? {
        u64::MAX => None,
        m => Some(m as usize),
    };
    let bootstrap = r.u8()? != 0;
    let config = ForestConfig { n_trees, max_nodes, features_per_split, bootstrap, seed: r.u64()? };
    let classes = r.usize()?;
    let feature_count = r.usize()?;
    let training_rows = r.usize()?;
    let count = r.count(8)?;
    let mut trees = Vec::with_capacity(count);
    let mut tree_seeds = Vec::with_capacity(count);
    for _ in 0..count {
        tree_seeds.push(r.u64()?);
        let t = read_tree(&mut r)?;
        if t.classes != classes || t.feature_count != feature_count {
            return Err(Error::Artifact("tree does not match its forest".into()));
        }
        trees.push(t);
    }
    r.finish()?;
    Ok(RandomForest { trees, tree_seeds, config, classes, feature_count, training_rows })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads and decodes a file, attaching the path to decode errors.
pub fn load<T>(path: &Path, decode: impl FnOnce(&[u8]) -> Result<T>) -> Result<T> {
    let bytes = read_file(path)?;
    decode(&bytes).map_err(|e| e.in_file(path))
}
