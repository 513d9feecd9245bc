//! The model contract shared by every participant, and the built-in learners.
//!
//! A [`TrainedModel`] is immutable once fitted. It exposes class probabilities,
//! a deterministic label (argmax, lowest index on ties), an input gradient for
//! the differentiable learners, and a binary file format for exchange between
//! sites.

pub(crate) mod codec;
pub mod mlp;
pub mod naive_bayes;
pub mod svm;
pub mod tree;

use serde::{Deserialize, Serialize};

use crate::labels::{LabelSpace, ProbabilityVector};
use crate::{Error, Result};

pub use codec::{FORMAT_VERSION, MAGIC};
pub use mlp::{MlpParams, Network};
pub use naive_bayes::{GaussianNb, NbParams};
pub use svm::{LinearSvm, SvmParams};
pub use tree::{Tree, TreeParams};

/// Which algorithm to fit, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "kebab-case")]
pub enum Algorithm {
    Mlp(MlpParams),
    DecisionTree(TreeParams),
    GaussianNb(NbParams),
    LinearSvm(SvmParams),
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Mlp(_) => "mlp",
            Algorithm::DecisionTree(_) => "decision-tree",
            Algorithm::GaussianNb(_) => "gaussian-nb",
            Algorithm::LinearSvm(_) => "linear-svm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(algorithm: Algorithm, seed: u64) -> Self {
        Self { algorithm, seed }
    }

    pub fn mlp(params: MlpParams, seed: u64) -> Self {
        Self::new(Algorithm::Mlp(params), seed)
    }

    pub fn decision_tree(params: TreeParams) -> Self {
        Self::new(Algorithm::DecisionTree(params), 0)
    }

    pub fn gaussian_nb(params: NbParams) -> Self {
        Self::new(Algorithm::GaussianNb(params), 0)
    }

    pub fn linear_svm(params: SvmParams) -> Self {
        Self::new(Algorithm::LinearSvm(params), 0)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Parse {
            what: "model spec".into(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::from(e).context(format!("cannot read {}", path.display())))?;
        Self::from_toml(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match &self.algorithm {
            Algorithm::Mlp(p) => p.validate(),
            Algorithm::DecisionTree(p) => p.validate(),
            Algorithm::GaussianNb(p) => p.validate(),
            Algorithm::LinearSvm(p) => p.validate(),
        }
    }
}

/// Encoded feature rows and class indices a learner trains on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Samples {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Samples {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>) -> Self {
        assert_eq!(features.len(), labels.len(), "one label per row");
        Self { features, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, features: Vec<f64>, label: usize) {
        self.features.push(features);
        self.labels.push(label);
    }

    /// The rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Samples {
        Samples {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Fitted parameters of one of the built-in learners.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedParams {
    Mlp(Network),
    DecisionTree(Tree),
    GaussianNb(GaussianNb),
    LinearSvm(LinearSvm),
}

impl FittedParams {
    fn proba(&self, x: &[f64]) -> Vec<f64> {
        match self {
            FittedParams::Mlp(m) => m.proba(x),
            FittedParams::DecisionTree(m) => m.proba(x),
            FittedParams::GaussianNb(m) => m.proba(x),
            FittedParams::LinearSvm(m) => m.proba(x),
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            FittedParams::Mlp(m) => m.input_dim(),
            FittedParams::DecisionTree(m) => m.input_dim(),
            FittedParams::GaussianNb(m) => m.input_dim(),
            FittedParams::LinearSvm(m) => m.input_dim(),
        }
    }

    fn output_dim(&self) -> usize {
        match self {
            FittedParams::Mlp(m) => m.classes(),
            FittedParams::DecisionTree(m) => m.classes(),
            FittedParams::GaussianNb(m) => m.classes(),
            FittedParams::LinearSvm(m) => m.classes(),
        }
    }

    fn matches(&self, algorithm: &Algorithm) -> bool {
        matches!(
            (self, algorithm),
            (FittedParams::Mlp(_), Algorithm::Mlp(_))
                | (FittedParams::DecisionTree(_), Algorithm::DecisionTree(_))
                | (FittedParams::GaussianNb(_), Algorithm::GaussianNb(_))
                | (FittedParams::LinearSvm(_), Algorithm::LinearSvm(_))
        )
    }
}

/// A fitted classifier. Retraining produces a new value; nothing mutates in place.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    spec: ModelSpec,
    labels: LabelSpace,
    params: FittedParams,
}

impl TrainedModel {
    /// Assembles a model from explicit parameters.
    pub fn from_params(spec: ModelSpec, labels: LabelSpace, params: FittedParams) -> Result<Self> {
        if !params.matches(&spec.algorithm) {
            return Err(Error::InvalidConfig(format!(
                "parameters do not belong to a {} model",
                spec.algorithm.name()
            )));
        }
        if params.output_dim() != labels.len() {
            return Err(Error::InvalidConfig(format!(
                "model produces {} classes but the label space has {}",
                params.output_dim(),
                labels.len()
            )));
        }
        Ok(Self { spec, labels, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    pub fn params(&self) -> &FittedParams {
        &self.params
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    /// Whether [`TrainedModel::gradient`] is available.
    pub fn is_differentiable(&self) -> bool {
        matches!(self.params, FittedParams::Mlp(_) | FittedParams::LinearSvm(_))
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbabilityVector> {
        self.check_dim(x)?;
        Ok(ProbabilityVector::new_unchecked(self.params.proba(x)))
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<usize> {
        Ok(self.predict_proba(x)?.argmax())
    }

    /// Fraction of rows predicted correctly.
    pub fn accuracy(&self, samples: &Samples) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::InvalidData("accuracy of an empty sample".into()));
        }
        let mut correct = 0usize;
        for (x, &y) in samples.features.iter().zip(&samples.labels) {
            if self.predict_label(x)? == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / samples.len() as f64)
    }

    /// Value and input gradient of `objective(predict_proba(x))`.
    ///
    /// `objective` maps a probability vector to its value and its gradient
    /// with respect to the probabilities. Returns `Ok(None)` for
    /// non-differentiable learners (tree, naive Bayes).
    pub fn gradient<F>(&self, x: &[f64], objective: F) -> Result<Option<(f64, Vec<f64>)>>
    where
        F: FnOnce(&[f64]) -> (f64, Vec<f64>),
    {
        self.check_dim(x)?;
        match &self.params {
            FittedParams::Mlp(m) => {
                let trace = m.forward_trace(x);
                let (value, dp) = objective(trace.output());
                Ok(Some((value, m.input_vjp(&trace, &dp))))
            }
            FittedParams::LinearSvm(m) => {
                let p = m.proba(x);
                let (value, dp) = objective(&p);
                Ok(Some((value, m.input_vjp(x, &p, &dp))))
            }
            FittedParams::DecisionTree(_) | FittedParams::GaussianNb(_) => Ok(None),
        }
    }

    pub fn serialize(&self) -> Vec<u8> {
        codec::encode(self)
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        codec::decode(bytes)
    }
}

/// Fits a fresh model. Deterministic for a fixed `spec.seed`.
pub fn fit(spec: &ModelSpec, labels: &LabelSpace, data: &Samples) -> Result<TrainedModel> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidData("cannot fit on an empty dataset".into()));
    }
    let dim = data.features[0].len();
    if dim == 0 {
        return Err(Error::InvalidData("rows have no features".into()));
    }
    for row in &data.features {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite feature value".into()));
        }
    }
    if let Some(&bad) = data.labels.iter().find(|&&y| y >= labels.len()) {
        return Err(Error::InvalidData(format!(
            "label index {bad} outside a label space of {} classes",
            labels.len()
        )));
    }
    let single_class = || {
        let first = data.labels[0];
        data.labels
            .iter()
            .all(|&y| y == first)
            .then(|| labels.name(first).to_string())
    };
    let params = match &spec.algorithm {
        Algorithm::Mlp(p) => FittedParams::Mlp(mlp::train(p, spec.seed, labels.len(), data)),
        Algorithm::DecisionTree(p) => {
            if let Some(class) = single_class() {
                return Err(Error::SingleClass {
                    algorithm: "decision-tree",
                    class,
                });
            }
            FittedParams::DecisionTree(tree::train(p, labels.len(), data))
        }
        Algorithm::GaussianNb(p) => FittedParams::GaussianNb(naive_bayes::train(p, labels.len(), data)),
        Algorithm::LinearSvm(p) => {
            if let Some(class) = single_class() {
                return Err(Error::SingleClass {
                    algorithm: "linear-svm",
                    class,
                });
            }
            FittedParams::LinearSvm(svm::train(p, labels.len(), data))
        }
    };
    TrainedModel::from_params(spec.clone(), labels.clone(), params)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Softmax normalised so the entries sum to one.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// `[1 - s, s]` for a binary model's positive-class probability `s`.
pub(crate) fn binary_proba(s: f64) -> Vec<f64> {
    vec![1.0 - s, s]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels2() -> LabelSpace {
        LabelSpace::new(["a", "b"]).unwrap()
    }

    fn blobs() -> Samples {
        let mut s = Samples::default();
        for i in 0..20 {
            let t = i as f64 / 20.0;
            s.push(vec![0.1 + 0.1 * t, 0.2 + 0.05 * t], 0);
            s.push(vec![0.8 - 0.1 * t, 0.7 + 0.1 * t], 1);
        }
        s
    }

    #[test]
    fn spec_roundtrips_through_toml() {
        let spec = ModelSpec::mlp(MlpParams::default(), 3);
        let text = toml::to_string(&spec).unwrap();
        assert!(text.contains("algorithm = \"mlp\""), "{text}");
        let back: ModelSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);

        let tree: ModelSpec = toml::from_str("algorithm = \"decision-tree\"\nmin_samples_leaf = 20\n").unwrap();
        match tree.algorithm {
            Algorithm::DecisionTree(p) => assert_eq!(p.min_samples_leaf, 20),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let model = fit(&ModelSpec::gaussian_nb(NbParams::default()), &labels2(), &blobs()).unwrap();
        assert!(matches!(
            model.predict_proba(&[0.1]),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
        let mut ragged = blobs();
        ragged.features[3] = vec![0.1, 0.2, 0.3];
        assert!(matches!(
            fit(&ModelSpec::gaussian_nb(NbParams::default()), &labels2(), &ragged),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn tree_and_svm_reject_single_class() {
        let mut s = blobs();
        s.labels.iter_mut().for_each(|y| *y = 1);
        let err = fit(&ModelSpec::decision_tree(TreeParams::default()), &labels2(), &s).unwrap_err();
        assert!(err.to_string().contains("\"b\""), "{err}");
        assert!(matches!(
            fit(&ModelSpec::linear_svm(SvmParams::default()), &labels2(), &s),
            Err(Error::SingleClass { .. })
        ));
    }

    #[test]
    fn mismatched_params_rejected() {
        let model = fit(&ModelSpec::gaussian_nb(NbParams::default()), &labels2(), &blobs()).unwrap();
        let err = TrainedModel::from_params(
            ModelSpec::decision_tree(TreeParams::default()),
            labels2(),
            model.params().clone(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn non_differentiable_learners_have_no_gradient() {
        let data = blobs();
        for spec in [
            ModelSpec::decision_tree(TreeParams::default()),
            ModelSpec::gaussian_nb(NbParams::default()),
        ] {
            let model = fit(&spec, &labels2(), &data).unwrap();
            assert!(!model.is_differentiable());
            let g = model.gradient(&[0.5, 0.5], |p| (p[0], vec![1.0, 0.0])).unwrap();
            assert!(g.is_none());
        }
    }
}
