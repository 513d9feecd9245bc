//! Synthetic data and participant splits for controlled experiments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::features::RawTable;
use crate::{Error, Result};

/// Isotropic Gaussian clusters, one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureParams {
    pub classes: usize,
    pub dims: usize,
    pub rows_per_class: usize,
    /// Standard deviation of the class centers around the origin.
    pub separation: f64,
    /// Standard deviation of points around their center.
    pub spread: f64,
    pub seed: u64,
}

impl Default for MixtureParams {
    fn default() -> Self {
        Self {
            classes: 4,
            dims: 8,
            rows_per_class: 300,
            separation: 1.0,
            spread: 1.0,
            seed: 0,
        }
    }
}

/// Columns `f0..f{d-1}` and a `label` column with classes `c0..`.
/// Rows are grouped by class; shuffle or split them downstream.
pub fn gaussian_mixture(params: &MixtureParams) -> Result<RawTable> {
    if params.classes < 2 || params.dims == 0 || params.rows_per_class == 0 {
        return Err(Error::InvalidConfig(
            "a mixture needs at least 2 classes, 1 dimension and 1 row per class".into(),
        ));
    }
    let centers_dist =
        Normal::new(0.0, params.separation).map_err(|e| Error::InvalidConfig(format!("separation: {e}")))?;
    let noise = Normal::new(0.0, params.spread).map_err(|e| Error::InvalidConfig(format!("spread: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let centers: Vec<Vec<f64>> = (0..params.classes)
        .map(|_| (0..params.dims).map(|_| centers_dist.sample(&mut rng)).collect())
        .collect();
    let mut header: Vec<String> = (0..params.dims).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    let mut rows = Vec::with_capacity(params.classes * params.rows_per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..params.rows_per_class {
            let mut row: Vec<String> = center
                .iter()
                .map(|m| (m + noise.sample(&mut rng)).to_string())
                .collect();
            row.push(format!("c{c}"));
            rows.push(row);
        }
    }
    RawTable::new(header, rows)
}

fn class_column_index(table: &RawTable, class_column: &str) -> Result<usize> {
    table
        .column_index(class_column)
        .ok_or_else(|| Error::Schema(format!("class column {class_column:?} not found in {:?}", table.header)))
}

/// Shuffles `table` and splits it in two: the first `fraction` of rows and the rest.
pub fn holdout_split(table: &RawTable, fraction: f64, seed: u64) -> Result<(RawTable, RawTable)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "split fraction {fraction} must lie in [0, 1]"
        )));
    }
    let mut order: Vec<usize> = (0..table.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (fraction * table.len() as f64).round() as usize;
    Ok((table.take_rows(&order[..cut]), table.take_rows(&order[cut..])))
}

/// Splits the rows into `k` disjoint, class-stratified parts; part `i` then keeps only
/// `round((1 - rate) * n)` of its `n` rows of class `i` (classes in sorted order).
pub fn undersample_split(
    table: &RawTable,
    class_column: &str,
    k: usize,
    rate: f64,
    seed: u64,
) -> Result<Vec<RawTable>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!(
            "undersampling rate {rate} must lie in [0, 1]"
        )));
    }
    let classes = table.class_values(class_column)?;
    if k == 0 || k > classes.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot give each of {k} participants a distinct undersampled class: the data has {} classes",
            classes.len()
        )));
    }
    let ci = class_column_index(table, class_column)?;
    let mut order: Vec<usize> = (0..table.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); k];
    // stratified: deal each class round-robin, continuing where the last one stopped
    let mut pos = 0;
    for class in &classes {
        for &row in order.iter().filter(|&&r| table.rows[r][ci].trim() == class.as_str()) {
            parts[pos % k].push(row);
            pos += 1;
        }
    }
    let mut rank = vec![0; table.len()];
    for (pos, &row) in order.iter().enumerate() {
        rank[row] = pos;
    }
    for part in &mut parts {
        part.sort_by_key(|&r| rank[r]);
    }
    Ok(parts
        .into_iter()
        .enumerate()
        .map(|(i, rows)| {
            let target = classes[i].as_str();
            let in_class = rows.iter().filter(|&&r| table.rows[r][ci].trim() == target).count();
            let keep = ((1.0 - rate) * in_class as f64).round() as usize;
            let mut seen = 0;
            let kept: Vec<usize> = rows
                .into_iter()
                .filter(|&r| {
                    if table.rows[r][ci].trim() != target {
                        return true;
                    }
                    seen += 1;
                    seen <= keep
                })
                .collect();
            table.take_rows(&kept)
        })
        .collect())
}

/// Two participants whose feature sets overlap in `shared` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDrop {
    pub a: RawTable,
    pub b: RawTable,
    pub test: RawTable,
    pub shared: Vec<String>,
    pub a_only: Vec<String>,
    pub b_only: Vec<String>,
}

/// Picks `shared` feature columns at random for both participants and deals
/// the rest alternately to A and B. Rows are shuffled: `test_fraction` of
/// them form the common test table and the remainder is halved between A and B.
/// The test table keeps every column.
pub fn random_feature_drop(
    table: &RawTable,
    class_column: &str,
    shared: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<FeatureDrop> {
    let ci = class_column_index(table, class_column)?;
    let mut features: Vec<String> = table
        .header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != ci)
        .map(|(_, h)| h.clone())
        .collect();
    if shared == 0 || shared > features.len() {
        return Err(Error::InvalidConfig(format!(
            "shared feature count {shared} must lie in 1..={}",
            features.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    features.shuffle(&mut rng);
    let (common, rest) = features.split_at(shared);
    let a_only: Vec<String> = rest.iter().step_by(2).cloned().collect();
    let b_only: Vec<String> = rest.iter().skip(1).step_by(2).cloned().collect();

    let (test, train) = holdout_split(table, test_fraction, rng.random())?;
    let half = train.len() / 2;
    let a_rows: Vec<usize> = (0..half).collect();
    let b_rows: Vec<usize> = (half..train.len()).collect();
    fn columns<'a>(common: &'a [String], only: &'a [String], class_column: &'a str) -> Vec<&'a str> {
        let mut names: Vec<&str> = common.iter().chain(only).map(String::as_str).collect();
        names.push(class_column);
        names
    }
    Ok(FeatureDrop {
        a: train
            .take_rows(&a_rows)
            .select_columns(&columns(common, &a_only, class_column))?,
        b: train
            .take_rows(&b_rows)
            .select_columns(&columns(common, &b_only, class_column))?,
        test,
        shared: common.to_vec(),
        a_only,
        b_only,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_class_table() -> RawTable {
        gaussian_mixture(&MixtureParams {
            rows_per_class: 100,
            ..MixtureParams::default()
        })
        .unwrap()
    }

    fn count(table: &RawTable, class: &str) -> usize {
        let ci = table.column_index("label").unwrap();
        table.rows.iter().filter(|r| r[ci] == class).count()
    }

    #[test]
    fn mixture_has_requested_shape_and_is_seeded() {
        let t = four_class_table();
        assert_eq!(t.len(), 400);
        assert_eq!(t.header.len(), 9);
        assert_eq!(count(&t, "c3"), 100);
        assert_eq!(t, four_class_table());
        let other = gaussian_mixture(&MixtureParams {
            rows_per_class: 100,
            seed: 1,
            ..MixtureParams::default()
        })
        .unwrap();
        assert_ne!(t, other);
    }

    #[test]
    fn undersampling_keeps_five_percent_of_one_class() {
        let t = four_class_table();
        let parts = undersample_split(&t, "label", 4, 0.95, 3).unwrap();
        let full = undersample_split(&t, "label", 4, 0.0, 3).unwrap();
        for (i, (part, whole)) in parts.iter().zip(&full).enumerate() {
            for c in 0..4 {
                let class = format!("c{c}");
                let n = count(whole, &class);
                let expected = if c == i { (0.05 * n as f64).round() as usize } else { n };
                assert_eq!(count(part, &class), expected, "part {i} class {c}");
            }
        }
        assert_eq!(full.iter().map(RawTable::len).sum::<usize>(), 400);
    }

    #[test]
    fn undersampling_rejects_more_parts_than_classes() {
        let err = undersample_split(&four_class_table(), "label", 5, 0.95, 0).unwrap_err();
        assert!(err.to_string().contains("4 classes"), "{err}");
    }

    #[test]
    fn feature_drop_shares_exactly_the_requested_columns() {
        let t = four_class_table();
        let s = random_feature_drop(&t, "label", 2, 0.25, 9).unwrap();
        assert_eq!(s.shared.len(), 2);
        assert_eq!(s.a_only.len() + s.b_only.len(), 6);
        assert_eq!(s.test.len(), 100);
        assert_eq!(s.a.len() + s.b.len(), 300);
        assert_eq!(s.a.header.len(), 2 + s.a_only.len() + 1);
        for name in &s.shared {
            assert!(s.a.column_index(name).is_some() && s.b.column_index(name).is_some());
        }
        for name in &s.a_only {
            assert!(s.b.column_index(name).is_none());
        }
        let all = random_feature_drop(&t, "label", 8, 0.25, 9).unwrap();
        assert!(all.a_only.is_empty() && all.b_only.is_empty());
        assert!(random_feature_drop(&t, "label", 9, 0.25, 9).is_err());
    }
}
