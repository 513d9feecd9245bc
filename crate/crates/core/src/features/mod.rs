//! Tabular feature spaces.
//!
//! Continuous columns are min-max scaled into [0, 1] (clipped outside the
//! observed range); categorical columns are one-hot encoded; a missing value
//! or an unknown category encodes as an all-zero block. Instances move
//! between sites with different schemas through [`Projection`], which matches
//! columns by name and categories by label.

mod dataset;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::labels::{argmax, LabelSpace};
use crate::{Error, Result};

pub use dataset::{build_schema, ColumnDeclarations, Dataset, RawTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous { min: f64, max: f64 },
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl ColumnSchema {
    pub fn continuous(name: impl Into<String>, min: f64, max: f64) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Continuous { min, max },
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, categories: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical {
                categories: categories.into_iter().map(Into::into).collect(),
            },
        }
    }

    /// Number of encoded slots this column occupies.
    pub fn width(&self) -> usize {
        match &self.kind {
            ColumnKind::Continuous { .. } => 1,
            ColumnKind::Categorical { categories } => categories.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        match &self.kind {
            ColumnKind::Continuous { min, max } => {
                if !(min.is_finite() && max.is_finite() && min < max) {
                    return Err(Error::Schema(format!(
                        "continuous column {:?} needs finite min < max, got [{min}, {max}]",
                        self.name
                    )));
                }
            }
            ColumnKind::Categorical { categories } => {
                if categories.is_empty() {
                    return Err(Error::Schema(format!(
                        "categorical column {:?} has no categories",
                        self.name
                    )));
                }
                for (i, c) in categories.iter().enumerate() {
                    if categories[..i].contains(c) {
                        return Err(Error::Schema(format!(
                            "column {:?} lists category {c:?} twice",
                            self.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One cell of a raw (unencoded) row.
#[derive(Debug, Clone, PartialEq)]
pub enum RawValue {
    Number(f64),
    Category(String),
    Missing,
}

impl std::fmt::Display for RawValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RawValue::Number(v) => write!(f, "{v}"),
            RawValue::Category(c) => f.write_str(c),
            RawValue::Missing => Ok(()),
        }
    }
}

/// A raw row keyed by column name. Absent keys are treated as missing.
pub type RawRow = BTreeMap<String, RawValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct DatasetSchema {
    columns: Vec<ColumnSchema>,
    class_column: String,
    classes: LabelSpace,
    offsets: Vec<usize>,
    dim: usize,
}

/// On-disk shape of a schema.
#[derive(Serialize, Deserialize)]
struct SchemaFile {
    class_column: String,
    classes: Vec<String>,
    columns: Vec<ColumnSchema>,
}

impl TryFrom<SchemaFile> for DatasetSchema {
    type Error = Error;

    fn try_from(f: SchemaFile) -> Result<Self> {
        DatasetSchema::new(f.columns, f.class_column, LabelSpace::new(f.classes)?)
    }
}

impl From<DatasetSchema> for SchemaFile {
    fn from(s: DatasetSchema) -> Self {
        SchemaFile {
            class_column: s.class_column,
            classes: s.classes.into(),
            columns: s.columns,
        }
    }
}

impl DatasetSchema {
    pub fn new(columns: Vec<ColumnSchema>, class_column: impl Into<String>, classes: LabelSpace) -> Result<Self> {
        let class_column = class_column.into();
        if columns.is_empty() {
            return Err(Error::Schema("schema has no feature columns".into()));
        }
        for (i, c) in columns.iter().enumerate() {
            c.validate()?;
            if columns[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Schema(format!("column {:?} declared twice", c.name)));
            }
            if c.name == class_column {
                return Err(Error::Schema(format!(
                    "class column {class_column:?} cannot also be a feature"
                )));
            }
        }
        let mut offsets = Vec::with_capacity(columns.len());
        let mut dim = 0;
        for c in &columns {
            offsets.push(dim);
            dim += c.width();
        }
        Ok(Self {
            columns,
            class_column,
            classes,
            offsets,
            dim,
        })
    }

    pub fn columns(&self) -> &[ColumnSchema] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSchema> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn class_column(&self) -> &str {
        &self.class_column
    }

    pub fn classes(&self) -> &LabelSpace {
        &self.classes
    }

    /// Encoded dimensionality: continuous columns plus all category slots.
    pub fn dimensionality(&self) -> usize {
        self.dim
    }

    /// Restricts the schema to the named columns, keeping schema order.
    pub fn select(&self, names: &[&str]) -> Result<DatasetSchema> {
        for n in names {
            if self.column(n).is_none() {
                return Err(Error::Schema(format!("unknown column {n:?}")));
            }
        }
        let columns = self
            .columns
            .iter()
            .filter(|c| names.contains(&c.name.as_str()))
            .cloned()
            .collect();
        DatasetSchema::new(columns, self.class_column.clone(), self.classes.clone())
    }

    /// Names of the encoded slots: `column` or `column=category`.
    pub fn encoded_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim);
        for c in &self.columns {
            match &c.kind {
                ColumnKind::Continuous { .. } => names.push(c.name.clone()),
                ColumnKind::Categorical { categories } => {
                    names.extend(categories.iter().map(|cat| format!("{}={cat}", c.name)))
                }
            }
        }
        names
    }

    pub fn encode(&self, row: &RawRow) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (c, &off) in self.columns.iter().zip(&self.offsets) {
            match (&c.kind, row.get(&c.name)) {
                (ColumnKind::Continuous { min, max }, Some(RawValue::Number(v))) => {
                    out[off] = ((v - min) / (max - min)).clamp(0.0, 1.0);
                }
                (ColumnKind::Categorical { categories }, Some(RawValue::Category(v))) => {
                    match categories.iter().position(|cat| cat == v) {
                        Some(i) => out[off + i] = 1.0,
                        None => log::warn!("column {:?}: unknown category {v:?} encoded as missing", c.name),
                    }
                }
                (_, None | Some(RawValue::Missing)) => {}
                (_, Some(other)) => {
                    log::warn!("column {:?}: value {other:?} does not match the column kind", c.name)
                }
            }
        }
        out
    }

    /// Inverse of [`DatasetSchema::encode`]. A categorical block whose largest
    /// entry is below 0.5 decodes as missing.
    pub fn decode(&self, x: &[f64]) -> Result<RawRow> {
        self.check_dim(x)?;
        let mut row = RawRow::new();
        for (c, &off) in self.columns.iter().zip(&self.offsets) {
            let value = match &c.kind {
                ColumnKind::Continuous { min, max } => RawValue::Number(min + x[off] * (max - min)),
                ColumnKind::Categorical { categories } => {
                    let block = &x[off..off + categories.len()];
                    let best = argmax(block);
                    if block[best] < 0.5 {
                        RawValue::Missing
                    } else {
                        RawValue::Category(categories[best].clone())
                    }
                }
            };
            row.insert(c.name.clone(), value);
        }
        Ok(row)
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::from(e).context(format!("cannot read {}", path.display())))?;
        Self::from_toml(&text).map_err(|e| e.context(format!("schema {}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            what: "schema".into(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schemas always serialize")
    }
}

#[derive(Debug, Clone, PartialEq)]
enum SlotMap {
    /// Copy the value unchanged.
    Copy { from: usize, to: usize },
    /// Re-express through the raw value: `raw = lo + v * (hi - lo)`, then
    /// re-normalise into the target range.
    Rescale {
        from: usize,
        to: usize,
        source: (f64, f64),
        target: (f64, f64),
    },
}

/// Precomputed mapping between two schemas. Shared continuous columns are
/// carried through their raw value; categorical slots are copied by category
/// label; target-only columns are zero and source-only columns are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    source_dim: usize,
    target_dim: usize,
    slots: Vec<SlotMap>,
    shared_columns: Vec<String>,
}

impl Projection {
    pub fn new(source: &DatasetSchema, target: &DatasetSchema) -> Result<Self> {
        let mut slots = Vec::new();
        let mut shared_columns = Vec::new();
        for (tc, &toff) in target.columns.iter().zip(&target.offsets) {
            let Some(si) = source.columns.iter().position(|c| c.name == tc.name) else {
                continue;
            };
            let (sc, soff) = (&source.columns[si], source.offsets[si]);
            match (&sc.kind, &tc.kind) {
                (ColumnKind::Continuous { min: smin, max: smax }, ColumnKind::Continuous { min: tmin, max: tmax }) => {
                    slots.push(if smin == tmin && smax == tmax {
                        SlotMap::Copy { from: soff, to: toff }
                    } else {
                        SlotMap::Rescale {
                            from: soff,
                            to: toff,
                            source: (*smin, *smax),
                            target: (*tmin, *tmax),
                        }
                    });
                }
                (ColumnKind::Categorical { categories: scat }, ColumnKind::Categorical { categories: tcat }) => {
                    for (ti, cat) in tcat.iter().enumerate() {
                        if let Some(si) = scat.iter().position(|c| c == cat) {
                            slots.push(SlotMap::Copy {
                                from: soff + si,
                                to: toff + ti,
                            });
                        }
                    }
                }
                _ => {
                    log::warn!("column {:?} changes kind between schemas; not shared", tc.name);
                    continue;
                }
            }
            shared_columns.push(tc.name.clone());
        }
        if shared_columns.is_empty() {
            return Err(Error::DisjointSchemas {
                source_columns: source.columns.iter().map(|c| c.name.clone()).collect(),
                target_columns: target.columns.iter().map(|c| c.name.clone()).collect(),
            });
        }
        Ok(Self {
            source_dim: source.dim,
            target_dim: target.dim,
            slots,
            shared_columns,
        })
    }

    pub fn shared_columns(&self) -> &[String] {
        &self.shared_columns
    }

    /// Number of target slots filled from the source.
    pub fn carried_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.target_dim];
        self.overlay(x, &mut out)?;
        Ok(out)
    }

    /// Writes the shared slots of `x` into `base`, leaving target-only slots of `out` untouched.
    pub fn overlay(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.source_dim {
            return Err(Error::DimensionMismatch {
                expected: self.source_dim,
                found: x.len(),
            });
        }
        if out.len() != self.target_dim {
            return Err(Error::DimensionMismatch {
                expected: self.target_dim,
                found: out.len(),
            });
        }
        for slot in &self.slots {
            match *slot {
                SlotMap::Copy { from, to } => out[to] = x[from],
                SlotMap::Rescale {
                    from,
                    to,
                    source: (slo, shi),
                    target: (tlo, thi),
                } => {
                    let raw = slo + x[from] * (shi - slo);
                    out[to] = ((raw - tlo) / (thi - tlo)).clamp(0.0, 1.0);
                }
            }
        }
        Ok(())
    }
}

/// Projects one encoded vector from `source` into `target`.
pub fn project(source: &DatasetSchema, target: &DatasetSchema, x: &[f64]) -> Result<Vec<f64>> {
    Projection::new(source, target)?.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes() -> LabelSpace {
        LabelSpace::new(["no", "yes"]).unwrap()
    }

    fn schema(columns: Vec<ColumnSchema>) -> DatasetSchema {
        DatasetSchema::new(columns, "label", classes()).unwrap()
    }

    fn row(values: &[(&str, RawValue)]) -> RawRow {
        values.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn encodes_midpoint_one_hot_and_missing() {
        let s = schema(vec![
            ColumnSchema::continuous("v", 2.0, 10.0),
            ColumnSchema::categorical("color", ["red", "blue"]),
            ColumnSchema::continuous("w", 0.0, 1.0),
        ]);
        assert_eq!(s.dimensionality(), 4);
        let x = s.encode(&row(&[
            ("v", RawValue::Number(6.0)),
            ("color", RawValue::Category("blue".into())),
        ]));
        assert_eq!(x, vec![0.5, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn clips_out_of_range_and_zeroes_unknown_categories() {
        let s = schema(vec![
            ColumnSchema::continuous("v", 2.0, 10.0),
            ColumnSchema::categorical("color", ["red", "blue"]),
        ]);
        let x = s.encode(&row(&[
            ("v", RawValue::Number(42.0)),
            ("color", RawValue::Category("green".into())),
        ]));
        assert_eq!(x, vec![1.0, 0.0, 0.0]);
        assert_eq!(s.encode(&row(&[("v", RawValue::Number(-5.0))]))[0], 0.0);
    }

    #[test]
    fn decodes_scaled_values_and_blocks() {
        let s = schema(vec![
            ColumnSchema::continuous("v", 2.0, 10.0),
            ColumnSchema::categorical("color", ["red", "blue"]),
        ]);
        let r = s.decode(&[0.5, 0.1, 0.9]).unwrap();
        assert_eq!(r["v"], RawValue::Number(6.0));
        assert_eq!(r["color"], RawValue::Category("blue".into()));
        let r = s.decode(&[0.5, 0.2, 0.3]).unwrap();
        assert_eq!(r["color"], RawValue::Missing);
        assert!(s.decode(&[0.5]).is_err());
    }

    #[test]
    fn projection_copies_shared_and_zeroes_target_only() {
        let src = schema(vec![
            ColumnSchema::continuous("a", 0.0, 1.0),
            ColumnSchema::continuous("b", 0.0, 4.0),
        ]);
        let dst = schema(vec![
            ColumnSchema::continuous("b", 0.0, 4.0),
            ColumnSchema::continuous("c", 0.0, 1.0),
        ]);
        assert_eq!(project(&src, &dst, &[0.3, 0.7]).unwrap(), vec![0.7, 0.0]);
        let same = project(&src, &src, &[0.3, 0.7]).unwrap();
        assert_eq!(same, vec![0.3, 0.7]);
    }

    #[test]
    fn overlay_keeps_target_only_slots() {
        let src = schema(vec![ColumnSchema::continuous("b", 0.0, 4.0)]);
        let dst = schema(vec![
            ColumnSchema::continuous("b", 0.0, 4.0),
            ColumnSchema::continuous("c", 0.0, 1.0),
        ]);
        let mut out = vec![0.1, 0.9];
        Projection::new(&src, &dst).unwrap().overlay(&[0.4], &mut out).unwrap();
        assert_eq!(out, vec![0.4, 0.9]);
    }

    #[test]
    fn projection_goes_through_raw_values() {
        let src = schema(vec![ColumnSchema::continuous("miles", 0.0, 100.0)]);
        let dst = schema(vec![ColumnSchema::continuous("miles", 50.0, 150.0)]);
        // 75 miles: 0.75 in the source range, 0.25 in the target range.
        let y = project(&src, &dst, &[0.75]).unwrap();
        assert!((y[0] - 0.25).abs() < 1e-12);
        // 10 miles falls below the target range and clips.
        assert_eq!(project(&src, &dst, &[0.1]).unwrap(), vec![0.0]);
    }

    #[test]
    fn projection_matches_categories_by_label() {
        let src = schema(vec![ColumnSchema::categorical("make", ["ford", "audi", "kia"])]);
        let dst = schema(vec![ColumnSchema::categorical("make", ["kia", "bmw", "ford"])]);
        assert_eq!(project(&src, &dst, &[0.2, 0.5, 0.3]).unwrap(), vec![0.3, 0.0, 0.2]);
    }

    #[test]
    fn disjoint_schemas_rejected() {
        let a = schema(vec![ColumnSchema::continuous("a", 0.0, 1.0)]);
        let b = schema(vec![ColumnSchema::continuous("b", 0.0, 1.0)]);
        assert!(matches!(project(&a, &b, &[0.5]), Err(Error::DisjointSchemas { .. })));
    }

    #[test]
    fn schema_validation() {
        assert!(DatasetSchema::new(vec![ColumnSchema::continuous("a", 1.0, 1.0)], "y", classes()).is_err());
        assert!(DatasetSchema::new(
            vec![
                ColumnSchema::continuous("a", 0.0, 1.0),
                ColumnSchema::continuous("a", 0.0, 2.0)
            ],
            "y",
            classes()
        )
        .is_err());
        assert!(DatasetSchema::new(vec![ColumnSchema::categorical("c", ["x", "x"])], "y", classes()).is_err());
        assert!(DatasetSchema::new(vec![ColumnSchema::continuous("y", 0.0, 1.0)], "y", classes()).is_err());
    }

    #[test]
    fn schema_toml_roundtrip() {
        let s = schema(vec![
            ColumnSchema::continuous("v", 2.0, 10.0),
            ColumnSchema::categorical("color", ["red", "blue"]),
        ]);
        let text = s.to_toml();
        assert!(text.contains("kind = \"categorical\""), "{text}");
        assert_eq!(DatasetSchema::from_toml(&text).unwrap(), s);
    }
}
