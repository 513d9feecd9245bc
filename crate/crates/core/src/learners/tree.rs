//! CART classification tree with Gini splits.

use serde::{Deserialize, Serialize};

use super::Samples;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    /// Add one pseudo-count per class to leaf frequencies.
    pub laplace_smoothing: bool,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            min_samples_leaf: 1,
            max_depth: None,
            laplace_smoothing: true,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidConfig("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        counts: Vec<usize>,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Nodes live in an arena; index 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    inputs: usize,
    classes: usize,
    laplace_smoothing: bool,
}

impl Tree {
    pub fn new(nodes: Vec<Node>, inputs: usize, classes: usize, laplace_smoothing: bool) -> Result<Self> {
        if nodes.is_empty() || inputs == 0 || classes < 2 {
            return Err(Error::Format("empty tree".into()));
        }
        for (i, node) in nodes.iter().enumerate() {
            match node {
                Node::Leaf { counts } => {
                    if counts.len() != classes {
                        return Err(Error::Format(format!("leaf {i} has wrong class count")));
                    }
                }
                Node::Split {
                    feature,
                    left,
                    right,
                    threshold,
                } => {
                    // Children always follow their parent, which rules out cycles.
                    if *feature >= inputs
                        || *left <= i
                        || *right <= i
                        || *left >= nodes.len()
                        || *right >= nodes.len()
                        || !threshold.is_finite()
                    {
                        return Err(Error::Format(format!("split node {i} is malformed")));
                    }
                }
            }
        }
        Ok(Self {
            nodes,
            inputs,
            classes,
            laplace_smoothing,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn input_dim(&self) -> usize {
        self.inputs
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn laplace_smoothing(&self) -> bool {
        self.laplace_smoothing
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    fn leaf(&self, x: &[f64]) -> &[usize] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn proba(&self, x: &[f64]) -> Vec<f64> {
        let counts = self.leaf(x);
        let prior = if self.laplace_smoothing { 1.0 } else { 0.0 };
        let total: f64 = counts.iter().map(|&c| c as f64 + prior).sum();
        counts.iter().map(|&c| (c as f64 + prior) / total).collect()
    }
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    params: &'a TreeParams,
    data: &'a Samples,
    classes: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &r in rows {
            counts[self.data.labels[r]] += 1;
        }
        counts
    }

    fn best_split(&self, rows: &[usize], parent: &[usize]) -> Option<BestSplit> {
        let n = rows.len();
        let min_leaf = self.params.min_samples_leaf;
        let dims = self.data.features[rows[0]].len();
        let parent_score = gini(parent, n) * n as f64;
        let mut best: Option<BestSplit> = None;
        let mut sorted = rows.to_vec();
        for f in 0..dims {
            let xs = &self.data.features;
            sorted.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]).then(a.cmp(&b)));
            let mut left = vec![0usize; self.classes];
            let mut right = parent.to_vec();
            for k in 0..n - 1 {
                let y = self.data.labels[sorted[k]];
                left[y] += 1;
                right[y] -= 1;
                let (lo, hi) = (xs[sorted[k]][f], xs[sorted[k + 1]][f]);
                let n_left = k + 1;
                if lo == hi || n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let score = gini(&left, n_left) * n_left as f64 + gini(&right, n - n_left) * (n - n_left) as f64;
                if score < parent_score - 1e-12 && best.as_ref().is_none_or(|b| score < b.score - 1e-12) {
                    let mid = lo + (hi - lo) / 2.0;
                    // Guard against the midpoint rounding up to `hi`.
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&rows);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { counts: counts.clone() });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        if pure || !depth_ok || rows.len() < 2 * self.params.min_samples_leaf {
            return id;
        }
        let Some(split) = self.best_split(&rows, &counts) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.data.features[i][split.feature] <= split.threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

pub(super) fn train(params: &TreeParams, classes: usize, data: &Samples) -> Tree {
    let mut builder = Builder {
        params,
        data,
        classes,
        nodes: Vec::new(),
    };
    builder.build((0..data.len()).collect(), 0);
    Tree {
        nodes: builder.nodes,
        inputs: data.features[0].len(),
        classes,
        laplace_smoothing: params.laplace_smoothing,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{fit, FittedParams, ModelSpec};
    use crate::LabelSpace;

    fn labels() -> LabelSpace {
        LabelSpace::new(["A", "B"]).unwrap()
    }

    fn three_to_one() -> Samples {
        Samples::new(
            vec![vec![0.1, 0.3], vec![0.2, 0.9], vec![0.4, 0.5], vec![0.8, 0.1]],
            vec![0, 0, 0, 1],
        )
    }

    #[test]
    fn forced_single_leaf_predicts_majority() {
        let data = three_to_one();
        let params = TreeParams {
            min_samples_leaf: data.len(),
            ..TreeParams::default()
        };
        let model = fit(&ModelSpec::decision_tree(params), &labels(), &data).unwrap();
        let FittedParams::DecisionTree(tree) = model.params() else {
            panic!()
        };
        assert_eq!(tree.leaf_count(), 1);
        for x in [[0.0, 0.0], [1.0, 1.0], [0.8, 0.1]] {
            assert_eq!(model.predict_label(&x).unwrap(), 0);
        }
    }

    #[test]
    fn leaf_frequencies_raw_and_smoothed() {
        let data = three_to_one();
        let raw = TreeParams {
            min_samples_leaf: 4,
            laplace_smoothing: false,
            ..TreeParams::default()
        };
        let model = fit(&ModelSpec::decision_tree(raw), &labels(), &data).unwrap();
        assert_eq!(model.predict_proba(&[0.5, 0.5]).unwrap().as_slice(), &[0.75, 0.25]);

        let smoothed = TreeParams {
            min_samples_leaf: 4,
            ..TreeParams::default()
        };
        let model = fit(&ModelSpec::decision_tree(smoothed), &labels(), &data).unwrap();
        let p = model.predict_proba(&[0.5, 0.5]).unwrap();
        assert!((p[0] - 4.0 / 6.0).abs() < 1e-15 && (p[1] - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn splits_separate_classes() {
        let data = three_to_one();
        let model = fit(&ModelSpec::decision_tree(TreeParams::default()), &labels(), &data).unwrap();
        assert_eq!(model.accuracy(&data).unwrap(), 1.0);
        // Threshold sits midway between 0.4 and 0.8 on feature 0.
        assert_eq!(model.predict_label(&[0.59, 0.5]).unwrap(), 0);
        assert_eq!(model.predict_label(&[0.61, 0.5]).unwrap(), 1);
    }

    #[test]
    fn respects_min_samples_leaf() {
        let mut data = Samples::default();
        for i in 0..60 {
            data.push(vec![i as f64 / 60.0], usize::from(i % 3 == 0));
        }
        let params = TreeParams {
            min_samples_leaf: 20,
            laplace_smoothing: false,
            ..TreeParams::default()
        };
        let model = fit(&ModelSpec::decision_tree(params), &labels(), &data).unwrap();
        let FittedParams::DecisionTree(tree) = model.params() else {
            panic!()
        };
        for node in tree.nodes() {
            if let Node::Leaf { counts } = node {
                assert!(counts.iter().sum::<usize>() >= 20);
            }
        }
    }

    #[test]
    fn validates_structure() {
        let cyclic = vec![Node::Split {
            feature: 0,
            threshold: 0.5,
            left: 0,
            right: 0,
        }];
        assert!(Tree::new(cyclic, 1, 2, true).is_err());
    }
}
