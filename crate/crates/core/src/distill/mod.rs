//! Who can teach whom, and what they teach.
//!
//! A model's expertise set holds the training instances it labels
//! correctly. The teaching set from `i` to `j` is `S_i - S_j`: instances
//! where `i` is right and `j` is wrong. For each of them the teacher builds a
//! quintessential counterfactual, a nearby point it considers even more
//! typical of the true class, which is handed to the student as a labeled
//! training instance.

mod dedup;
mod generate;
mod mask;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::features::{Dataset, DatasetSchema, Projection};
use crate::learners::TrainedModel;
use crate::{Error, Result};

pub use dedup::{dedup_set_cover, greedy_cover, manhattan};
pub use generate::{
    generate_counterfactual, make_target, Counterfactual, CounterfactualRecord, CounterfactualTarget,
    GenerationSettings,
};
pub use mask::{derive_mask, FeatureMask};

/// One training instance: dataset id and row index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceRef {
    pub dataset: usize,
    pub index: usize,
}

impl InstanceRef {
    pub fn new(dataset: usize, index: usize) -> Self {
        Self { dataset, index }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpertiseSet {
    pub model: usize,
    pub correct: BTreeSet<InstanceRef>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeachingSet {
    pub teacher: usize,
    pub student: usize,
    pub instances: BTreeSet<InstanceRef>,
}

/// Instances of `datasets` that `trained` labels correctly.
///
/// Each dataset is projected into `schema`, the model's own feature space.
/// Label spaces must agree exactly.
pub fn identify_expertise(
    model: usize,
    trained: &TrainedModel,
    schema: &DatasetSchema,
    datasets: &[(usize, &Dataset)],
) -> Result<ExpertiseSet> {
    let mut correct = BTreeSet::new();
    for &(id, data) in datasets {
        if data.schema().classes() != trained.labels() {
            return Err(Error::InvalidConfig(format!(
                "dataset {id} has classes {:?} but model {model} predicts {:?}",
                data.schema().classes().classes(),
                trained.labels().classes()
            )));
        }
        let projection = Projection::new(data.schema(), schema)
            .map_err(|e| e.context(format!("projecting dataset {id} for model {model}")))?;
        for (index, (x, &y)) in data.encoded().iter().zip(data.labels()).enumerate() {
            if trained.predict_label(&projection.apply(x)?)? == y {
                correct.insert(InstanceRef::new(id, index));
            }
        }
    }
    Ok(ExpertiseSet { model, correct })
}

/// One teaching set per ordered pair of distinct models, in `(teacher, student)` order.
pub fn teaching_sets(expertise: &[ExpertiseSet]) -> Vec<TeachingSet> {
    let mut out = Vec::with_capacity(expertise.len() * expertise.len().saturating_sub(1));
    for teacher in expertise {
        for student in expertise {
            if teacher.model == student.model {
                continue;
            }
            out.push(TeachingSet {
                teacher: teacher.model,
                student: student.model,
                instances: teacher.correct.difference(&student.correct).copied().collect(),
            });
        }
    }
    out
}
