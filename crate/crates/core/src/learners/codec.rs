//! Binary model file.
//!
//! ```text
//! "CODIST1"            7 bytes
//! version              u8
//! algorithm tag        u8   (0 mlp, 1 decision-tree, 2 gaussian-nb, 3 linear-svm)
//! seed                 u64
//! label space          u32 count, then per label u32 length + UTF-8
//! dimensionality       u64
//! hyperparameters      algorithm specific
//! parameters           algorithm specific
//! ```
//!
//! Integers and floats are little-endian; floats are IEEE-754 binary64.

use super::mlp::{Dense, MlpParams, Network};
use super::naive_bayes::{ClassStats, GaussianNb, NbParams};
use super::svm::{LinearSvm, Machine, SvmParams};
use super::tree::{Node, Tree, TreeParams};
use super::{Algorithm, FittedParams, ModelSpec, TrainedModel};
use crate::labels::LabelSpace;
use crate::{Error, Result};

pub const MAGIC: &[u8; 7] = b"CODIST1";
pub const FORMAT_VERSION: u8 = 1;

const TAG_MLP: u8 = 0;
const TAG_TREE: u8 = 1;
const TAG_NB: u8 = 2;
const TAG_SVM: u8 = 3;

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }
    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("stream truncated at byte {} (wanted {n} more)", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    pub fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("count overflows usize".into()))
    }
    /// A count that must be backed by at least `unit` bytes per element.
    pub fn count(&mut self, unit: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(unit) > self.buf.len() - self.pos {
            return Err(Error::Format(format!("stream truncated: {n} elements announced")));
        }
        Ok(n)
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("string is not UTF-8".into()))
    }
    pub fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Format(format!("invalid boolean byte {b}"))),
        }
    }
    pub fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub(super) fn encode(model: &TrainedModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u8(FORMAT_VERSION);
    w.u8(match model.spec.algorithm {
        Algorithm::Mlp(_) => TAG_MLP,
        Algorithm::DecisionTree(_) => TAG_TREE,
        Algorithm::GaussianNb(_) => TAG_NB,
        Algorithm::LinearSvm(_) => TAG_SVM,
    });
    w.u64(model.spec.seed);
    w.u32(model.labels.len() as u32);
    for c in model.labels.classes() {
        w.str(c);
    }
    w.usize(model.input_dim());
    match (&model.spec.algorithm, &model.params) {
        (Algorithm::Mlp(p), FittedParams::Mlp(net)) => {
            w.usize(p.hidden_layers.len());
            p.hidden_layers.iter().for_each(|&h| w.usize(h));
            w.f64(p.negative_slope);
            w.f64(p.learning_rate);
            w.usize(p.epochs);
            w.usize(p.batch_size);
            w.usize(p.patience);
            w.f64(p.validation_fraction);
            w.usize(net.layers().len());
            for l in net.layers() {
                w.usize(l.inputs);
                w.usize(l.outputs);
                w.f64s(&l.weights);
                w.f64s(&l.bias);
            }
        }
        (Algorithm::DecisionTree(p), FittedParams::DecisionTree(tree)) => {
            w.usize(p.min_samples_leaf);
            w.u64(p.max_depth.map_or(u64::MAX, |d| d as u64));
            w.u8(u8::from(p.laplace_smoothing));
            w.usize(tree.nodes().len());
            for node in tree.nodes() {
                match node {
                    Node::Leaf { counts } => {
                        w.u8(0);
                        counts.iter().for_each(|&c| w.usize(c));
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        w.u8(1);
                        w.usize(*feature);
                        w.f64(*threshold);
                        w.usize(*left);
                        w.usize(*right);
                    }
                }
            }
        }
        (Algorithm::GaussianNb(p), FittedParams::GaussianNb(nb)) => {
            w.f64(p.var_smoothing);
            for s in nb.stats() {
                w.usize(s.count);
                w.f64s(&s.means);
                w.f64s(&s.variances);
            }
        }
        (Algorithm::LinearSvm(p), FittedParams::LinearSvm(svm)) => {
            w.f64(p.regularization);
            w.usize(p.max_iterations);
            w.u8(u8::from(p.calibrate));
            w.usize(svm.machines().len());
            for m in svm.machines() {
                w.f64s(&m.weights);
                w.f64(m.bias);
                w.f64(m.scale);
                w.f64(m.offset);
            }
        }
        _ => unreachable!("TrainedModel guarantees spec and params agree"),
    }
    w.finish()
}

pub(super) fn decode(bytes: &[u8]) -> Result<TrainedModel> {
    let mut r = Reader::new(bytes);
    let magic = r
        .take(MAGIC.len())
        .map_err(|_| Error::Format("missing CODIST1 magic".into()))?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"CODIST1\"",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u8()?;
    if version == 0 || version > FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let tag = r.u8()?;
    let seed = r.u64()?;
    let n_labels = r.u32()? as usize;
    let labels = LabelSpace::new((0..n_labels).map(|_| r.str()).collect::<Result<Vec<_>>>()?)
        .map_err(|e| Error::Format(e.to_string()))?;
    let classes = labels.len();
    let dim = r.usize()?;

    let (algorithm, params) = match tag {
        TAG_MLP => {
            let n_hidden = r.count(8)?;
            let hidden_layers = (0..n_hidden).map(|_| r.usize()).collect::<Result<_>>()?;
            let p = MlpParams {
                hidden_layers,
                negative_slope: r.f64()?,
                learning_rate: r.f64()?,
                epochs: r.usize()?,
                batch_size: r.usize()?,
                patience: r.usize()?,
                validation_fraction: r.f64()?,
            };
            let n_layers = r.count(32)?;
            let mut layers = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                layers.push(Dense {
                    inputs: r.usize()?,
                    outputs: r.usize()?,
                    weights: r.f64s()?,
                    bias: r.f64s()?,
                });
            }
            let net = Network::new(layers, p.negative_slope, classes)?;
            (Algorithm::Mlp(p), FittedParams::Mlp(net))
        }
        TAG_TREE => {
            let min_samples_leaf = r.usize()?;
            let max_depth = match r.u64()? {
                u64::MAX => None,
                d => Some(d as usize),
            };
            let laplace_smoothing = r.bool()?;
            let n_nodes = r.count(1)?;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                nodes.push(match r.u8()? {
                    0 => Node::Leaf {
                        counts: (0..classes).map(|_| r.usize()).collect::<Result<_>>()?,
                    },
                    1 => Node::Split {
                        feature: r.usize()?,
                        threshold: r.f64()?,
                        left: r.usize()?,
                        right: r.usize()?,
                    },
                    t => return Err(Error::Format(format!("unknown tree node tag {t}"))),
                });
            }
            let p = TreeParams {
                min_samples_leaf,
                max_depth,
                laplace_smoothing,
            };
            let tree = Tree::new(nodes, dim, classes, laplace_smoothing)?;
            (Algorithm::DecisionTree(p), FittedParams::DecisionTree(tree))
        }
        TAG_NB => {
            let p = NbParams {
                var_smoothing: r.f64()?,
            };
            let stats = (0..classes)
                .map(|_| {
                    Ok(ClassStats {
                        count: r.usize()?,
                        means: r.f64s()?,
                        variances: r.f64s()?,
                    })
                })
                .collect::<Result<_>>()?;
            let nb = GaussianNb::new(stats, dim)?;
            (Algorithm::GaussianNb(p), FittedParams::GaussianNb(nb))
        }
        TAG_SVM => {
            let p = SvmParams {
                regularization: r.f64()?,
                max_iterations: r.usize()?,
                calibrate: r.bool()?,
            };
            let n = r.count(32)?;
            let machines = (0..n)
                .map(|_| {
                    Ok(Machine {
                        weights: r.f64s()?,
                        bias: r.f64()?,
                        scale: r.f64()?,
                        offset: r.f64()?,
                    })
                })
                .collect::<Result<_>>()?;
            let svm = LinearSvm::new(machines, classes)?;
            (Algorithm::LinearSvm(p), FittedParams::LinearSvm(svm))
        }
        t => return Err(Error::Format(format!("unknown algorithm tag {t}"))),
    };
    if !r.is_done() {
        return Err(Error::Format("trailing bytes after model parameters".into()));
    }
    let model = TrainedModel::from_params(ModelSpec { algorithm, seed }, labels, params)
        .map_err(|e| Error::Format(e.to_string()))?;
    if model.input_dim() != dim {
        return Err(Error::Format(format!(
            "header declares {dim} inputs but parameters take {}",
            model.input_dim()
        )));
    }
    Ok(model)
}
