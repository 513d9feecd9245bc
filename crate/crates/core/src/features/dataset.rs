use std::collections::BTreeSet;
use std::path::Path;

use super::{ColumnKind, ColumnSchema, DatasetSchema, RawRow, RawValue};
use crate::labels::LabelSpace;
use crate::learners::Samples;
use crate::{Error, Result};

const MISSING_MARKERS: [&str; 6] = ["", "?", "na", "n/a", "nan", "null"];

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    MISSING_MARKERS.iter().any(|m| t.eq_ignore_ascii_case(m))
}

/// A CSV file as text cells under a header row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn new(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != header.len() {
                return Err(Error::InvalidData(format!(
                    "row {i} has {} cells but the header has {}",
                    r.len(),
                    header.len()
                )));
            }
        }
        Ok(Self { header, rows })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file =
            std::fs::File::open(path).map_err(|e| Error::from(e).context(format!("cannot open {}", path.display())))?;
        Self::from_reader(file).map_err(|e| e.context(format!("reading {}", path.display())))
    }

    pub fn from_reader(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Self::new(header, rows)
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::atomic_write(path, &self.to_csv_bytes()?)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// A table with only the given rows, in the given order.
    pub fn take_rows(&self, indices: &[usize]) -> RawTable {
        RawTable {
            header: self.header.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// A table with only the named columns, in header order.
    pub fn select_columns(&self, names: &[&str]) -> Result<RawTable> {
        let keep: Vec<usize> = self
            .header
            .iter()
            .enumerate()
            .filter(|(_, h)| names.contains(&h.as_str()))
            .map(|(i, _)| i)
            .collect();
        if keep.len() != names.len() {
            return Err(Error::InvalidData(format!("table lacks some of the columns {names:?}")));
        }
        Ok(RawTable {
            header: keep.iter().map(|&i| self.header[i].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| keep.iter().map(|&i| r[i].clone()).collect())
                .collect(),
        })
    }

    fn class_index(&self, class_column: &str) -> Result<usize> {
        self.column_index(class_column).ok_or_else(|| {
            Error::Schema(format!(
                "class column {class_column:?} not found in the data header {:?}",
                self.header
            ))
        })
    }

    /// Sorted distinct values of the class column.
    pub fn class_values(&self, class_column: &str) -> Result<Vec<String>> {
        let idx = self.class_index(class_column)?;
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r[idx].trim()).collect();
        Ok(set.into_iter().map(str::to_string).collect())
    }
}

/// Which columns are categorical, and which column holds the class.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColumnDeclarations {
    pub class_column: String,
    pub categorical: Vec<String>,
    /// Columns left out of the schema entirely.
    pub ignore: Vec<String>,
    /// Explicit class order; defaults to the sorted distinct labels.
    pub classes: Option<Vec<String>>,
}

impl ColumnDeclarations {
    pub fn new(class_column: impl Into<String>) -> Self {
        Self {
            class_column: class_column.into(),
            ..Self::default()
        }
    }
}

/// Derives a schema from observed data: continuous ranges are the observed
/// extremes, categories are listed in order of first appearance.
pub fn build_schema(table: &RawTable, decl: &ColumnDeclarations) -> Result<DatasetSchema> {
    if table.is_empty() {
        return Err(Error::InvalidData("cannot build a schema from an empty table".into()));
    }
    table.class_index(&decl.class_column)?;
    for name in decl.categorical.iter().chain(&decl.ignore) {
        if table.column_index(name).is_none() {
            return Err(Error::Schema(format!("declared column {name:?} is not in the data")));
        }
    }
    let mut columns = Vec::new();
    for (i, name) in table.header.iter().enumerate() {
        if *name == decl.class_column || decl.ignore.contains(name) {
            continue;
        }
        let present = table.rows.iter().map(|r| r[i].trim()).filter(|c| !is_missing(c));
        if decl.categorical.contains(name) {
            let mut categories: Vec<String> = Vec::new();
            for c in present {
                if !categories.iter().any(|k| k == c) {
                    categories.push(c.to_string());
                }
            }
            if categories.is_empty() {
                return Err(Error::Schema(format!("categorical column {name:?} has no values")));
            }
            columns.push(ColumnSchema::categorical(name.clone(), categories));
        } else {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (r, c) in present.enumerate() {
                let v = parse_number(c, name, r)?;
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if !lo.is_finite() {
                return Err(Error::Schema(format!("continuous column {name:?} has no values")));
            }
            if lo >= hi {
                return Err(Error::Schema(format!(
                    "continuous column {name:?} is constant ({lo}); drop it or declare it categorical"
                )));
            }
            columns.push(ColumnSchema::continuous(name.clone(), lo, hi));
        }
    }
    let classes = match &decl.classes {
        Some(c) => LabelSpace::new(c.clone())?,
        None => LabelSpace::new(table.class_values(&decl.class_column)?)?,
    };
    DatasetSchema::new(columns, decl.class_column.clone(), classes)
}

fn parse_number(cell: &str, column: &str, row: usize) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        what: format!("column {column:?} row {row}"),
        message: format!("{cell:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::InvalidData(format!(
            "column {column:?} row {row}: non-finite value"
        )));
    }
    Ok(v)
}

/// Rows of a table parsed and encoded against a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: DatasetSchema,
    rows: Vec<RawRow>,
    encoded: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl Dataset {
    /// Parses `table` under `schema`. Table columns outside the schema are
    /// ignored; schema columns absent from the table encode as missing.
    pub fn from_table(schema: &DatasetSchema, table: &RawTable) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::InvalidData("dataset has no rows".into()));
        }
        let class_idx = table.class_index(schema.class_column())?;
        let layout: Vec<(usize, &ColumnSchema)> = schema
            .columns()
            .iter()
            .filter_map(|c| match table.column_index(&c.name) {
                Some(i) => Some((i, c)),
                None => {
                    log::debug!("column {:?} absent from data; encoding as missing", c.name);
                    None
                }
            })
            .collect();
        let mut rows = Vec::with_capacity(table.len());
        let mut labels = Vec::with_capacity(table.len());
        for (r, cells) in table.rows.iter().enumerate() {
            let label = cells[class_idx].trim();
            let y = schema.classes().index_of(label).ok_or_else(|| {
                Error::InvalidData(format!(
                    "row {r}: class {label:?} is not one of {:?}",
                    schema.classes().classes()
                ))
            })?;
            let mut row = RawRow::new();
            for &(i, col) in &layout {
                let cell = cells[i].trim();
                let value = if is_missing(cell) {
                    RawValue::Missing
                } else {
                    match col.kind {
                        ColumnKind::Continuous { .. } => RawValue::Number(parse_number(cell, &col.name, r)?),
                        ColumnKind::Categorical { .. } => RawValue::Category(cell.to_string()),
                    }
                };
                row.insert(col.name.clone(), value);
            }
            rows.push(row);
            labels.push(y);
        }
        let encoded = rows.iter().map(|row| schema.encode(row)).collect();
        Ok(Self {
            schema: schema.clone(),
            rows,
            encoded,
            labels,
        })
    }

    pub fn load(schema: &DatasetSchema, path: &Path) -> Result<Self> {
        Self::from_table(schema, &RawTable::read_csv(path)?)
            .map_err(|e| e.context(format!("dataset {}", path.display())))
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[RawRow] {
        &self.rows
    }

    pub fn encoded(&self) -> &[Vec<f64>] {
        &self.encoded
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn samples(&self) -> Samples {
        Samples::new(self.encoded.clone(), self.labels.clone())
    }
}
