use serde::{Deserialize, Serialize};

use crate::learners::Samples;
use crate::{Error, Result};

/// Coordinates a counterfactual search may change; all others stay fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMask {
    /// Sorted ascending, nonempty.
    pub indices: Vec<usize>,
    pub fraction: f64,
}

impl FeatureMask {
    pub fn all(d: usize) -> Self {
        Self {
            indices: (0..d).collect(),
            fraction: 1.0,
        }
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

/// The `ceil(fraction * d)` features with the largest population variance
/// among instances of `class`. Ties go to the lower index.
pub fn derive_mask(data: &Samples, class: usize, fraction: f64) -> Result<FeatureMask> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "mask fraction {fraction} must lie in (0, 1]"
        )));
    }
    let rows: Vec<&Vec<f64>> = data
        .features
        .iter()
        .zip(&data.labels)
        .filter(|(_, &y)| y == class)
        .map(|(x, _)| x)
        .collect();
    if rows.len() < 2 {
        return Err(Error::InvalidData(format!(
            "class {class} has {} instances; a variability mask needs at least 2",
            rows.len()
        )));
    }
    let d = rows[0].len();
    let n = rows.len() as f64;
    let variances: Vec<f64> = (0..d)
        .map(|i| {
            let mean = rows.iter().map(|x| x[i]).sum::<f64>() / n;
            rows.iter().map(|x| (x[i] - mean).powi(2)).sum::<f64>() / n
        })
        .collect();
    let keep = ((fraction * d as f64).ceil() as usize).clamp(1, d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| variances[b].total_cmp(&variances[a]).then(a.cmp(&b)));
    let mut indices = order[..keep].to_vec();
    indices.sort_unstable();
    Ok(FeatureMask { indices, fraction })
}
