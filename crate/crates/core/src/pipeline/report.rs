use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::{label_space, Audit, Experiment, GenerationStats, LambdaEntry, RecordKey, StudentOutput};
use crate::distill::CounterfactualRecord;
use crate::features::DatasetSchema;
use crate::io::atomic_write;
use crate::learners::TrainedModel;
use crate::{Error, LabelSpace, Result};

/// Mean modification `x' - x` over one class's records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassDelta {
    pub class: usize,
    pub count: usize,
    pub mean: Vec<f64>,
    /// True when the class has no records; `mean` is then all zeros.
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaAnalysis {
    pub teacher: usize,
    pub student: usize,
    pub classes: Vec<ClassDelta>,
    /// `delta(class 1) - delta(class 0)`, for binary problems only.
    pub difference: Option<Vec<f64>>,
}

/// Per-class mean modifications from `(label, original, counterfactual)` triples.
pub fn mechanism_report<'a>(
    teacher: usize,
    student: usize,
    classes: usize,
    dim: usize,
    records: impl IntoIterator<Item = (usize, &'a [f64], &'a [f64])>,
) -> Result<DeltaAnalysis> {
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (label, x, xp) in records {
        if label >= classes {
            return Err(Error::InvalidData(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        if x.len() != dim || xp.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: x.len().max(xp.len()),
            });
        }
        counts[label] += 1;
        for ((s, a), b) in sums[label].iter_mut().zip(x).zip(xp) {
            *s += b - a;
        }
    }
    let classes: Vec<ClassDelta> = sums
        .into_iter()
        .zip(counts)
        .enumerate()
        .map(|(class, (sum, count))| ClassDelta {
            class,
            count,
            mean: sum
                .iter()
                .map(|s| if count == 0 { 0.0 } else { s / count as f64 })
                .collect(),
            empty: count == 0,
        })
        .collect();
    let difference = (classes.len() == 2).then(|| {
        classes[1]
            .mean
            .iter()
            .zip(&classes[0].mean)
            .map(|(p, n)| p - n)
            .collect()
    });
    Ok(DeltaAnalysis {
        teacher,
        student,
        classes,
        difference,
    })
}

/// Outbound traffic of a multi-site run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PrivacyAudit {
    pub messages: usize,
    pub bytes: usize,
    pub patterns_checked: usize,
    pub matches: usize,
}

#[derive(Debug, Clone)]
pub struct DistillationReport {
    pub models: Vec<String>,
    pub classes: LabelSpace,
    pub schemas: Vec<DatasetSchema>,
    pub accuracy_before: Vec<f64>,
    pub accuracy_after: Vec<f64>,
    /// `counts[student][teacher]`: kept records per pair.
    pub counts: Vec<Vec<usize>>,
    /// One per ordered pair of distinct models, in the teacher's space.
    pub deltas: Vec<DeltaAnalysis>,
    pub lambdas: Vec<LambdaEntry>,
    pub stats: GenerationStats,
    /// Every record each student received, in canonical order.
    pub received: Vec<Vec<CounterfactualRecord>>,
    /// The records each student was retrained with.
    pub kept: Vec<Vec<CounterfactualRecord>>,
    pub retrained: Vec<TrainedModel>,
    pub timings: Vec<(String, f64)>,
    pub privacy: Option<PrivacyAudit>,
}

pub(super) fn assemble(
    experiment: &Experiment,
    students: Vec<StudentOutput>,
    audits: BTreeMap<RecordKey, Audit>,
    mut lambdas: Vec<LambdaEntry>,
    mut stats: GenerationStats,
) -> Result<DistillationReport> {
    let k = experiment.participants.len();
    let classes = label_space(experiment).clone();
    let mut counts = vec![vec![0usize; k]; k];
    let mut report = DistillationReport {
        models: experiment.names(),
        classes: classes.clone(),
        schemas: experiment.participants.iter().map(|p| p.schema().clone()).collect(),
        accuracy_before: Vec::with_capacity(k),
        accuracy_after: Vec::with_capacity(k),
        counts: Vec::new(),
        deltas: Vec::new(),
        lambdas: Vec::new(),
        stats: GenerationStats::default(),
        received: Vec::with_capacity(k),
        kept: Vec::with_capacity(k),
        retrained: Vec::with_capacity(k),
        timings: Vec::new(),
        privacy: None,
    };
    for s in students {
        for r in &s.kept {
            counts[r.student][r.teacher] += 1;
        }
        stats.unconverged_dropped += s.stats.unconverged_dropped;
        stats.dedup_dropped += s.stats.dedup_dropped;
        stats.kept += s.stats.kept;
        report.accuracy_before.push(s.accuracy_before);
        report.accuracy_after.push(s.accuracy_after);
        report.received.push(s.received);
        report.kept.push(s.kept);
        report.retrained.push(s.retrained);
    }
    for teacher in 0..k {
        let dim = experiment.participants[teacher].schema().dimensionality();
        for student in (0..k).filter(|&j| j != teacher) {
            let mut triples = Vec::new();
            for r in report.kept[student].iter().filter(|r| r.teacher == teacher) {
                let audit = audits.get(&RecordKey::of(r)).ok_or_else(|| {
                    Error::InvalidData(format!("no generation audit for record {:?}", RecordKey::of(r)))
                })?;
                triples.push((r.label, audit.original.as_slice(), audit.counterfactual.as_slice()));
            }
            report
                .deltas
                .push(mechanism_report(teacher, student, classes.len(), dim, triples)?);
        }
    }
    lambdas.sort_by_key(|l| (l.teacher, l.student, l.dataset));
    report.counts = counts;
    report.lambdas = lambdas;
    report.stats = stats;
    Ok(report)
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn strings<I: IntoIterator<Item = S>, S: ToString>(items: I) -> Vec<String> {
    items.into_iter().map(|s| s.to_string()).collect()
}

impl DistillationReport {
    pub fn metrics_csv(&self) -> Result<Vec<u8>> {
        let rows: Vec<Vec<String>> = self
            .models
            .iter()
            .zip(self.accuracy_before.iter().zip(&self.accuracy_after))
            .map(|(m, (b, a))| vec![m.clone(), format!("{b:.6}"), format!("{a:.6}")])
            .collect();
        csv_bytes(&strings(["model", "accuracy_before", "accuracy_after"]), &rows)
    }

    /// Rows are students, columns teachers.
    pub fn count_matrix_csv(&self) -> Result<Vec<u8>> {
        let mut header = vec!["student".to_string()];
        header.extend(self.models.iter().cloned());
        let rows: Vec<Vec<String>> = self
            .models
            .iter()
            .zip(&self.counts)
            .map(|(m, row)| {
                std::iter::once(m.clone())
                    .chain(row.iter().map(|c| c.to_string()))
                    .collect()
            })
            .collect();
        csv_bytes(&header, &rows)
    }

    pub fn delta_csv(&self, delta: &DeltaAnalysis) -> Result<Vec<u8>> {
        let mut header = strings(["series", "count", "empty"]);
        header.extend(self.schemas[delta.teacher].encoded_names());
        let mut rows: Vec<Vec<String>> = delta
            .classes
            .iter()
            .map(|c| {
                let mut row = vec![
                    format!("delta_{}", self.classes.name(c.class)),
                    c.count.to_string(),
                    c.empty.to_string(),
                ];
                row.extend(c.mean.iter().map(|v| format!("{v:.6}")));
                row
            })
            .collect();
        if let Some(diff) = &delta.difference {
            let mut row = vec![
                format!("delta_{}_minus_{}", self.classes.name(1), self.classes.name(0)),
                String::new(),
                String::new(),
            ];
            row.extend(diff.iter().map(|v| format!("{v:.6}")));
            rows.push(row);
        }
        csv_bytes(&header, &rows)
    }

    pub fn lambdas_csv(&self) -> Result<Vec<u8>> {
        let rows: Vec<Vec<String>> = self
            .lambdas
            .iter()
            .map(|l| {
                vec![
                    self.models[l.teacher].clone(),
                    self.models[l.student].clone(),
                    self.models[l.dataset].clone(),
                    l.lambda.to_string(),
                    l.converged.to_string(),
                    l.instances.to_string(),
                ]
            })
            .collect();
        csv_bytes(
            &strings([
                "teacher",
                "student",
                "source_dataset",
                "lambda",
                "converged",
                "instances",
            ]),
            &rows,
        )
    }

    pub fn summary_csv(&self) -> Result<Vec<u8>> {
        let s = &self.stats;
        let rows = vec![
            vec!["attempted".into(), s.attempted.to_string()],
            vec!["failed".into(), s.failed.to_string()],
            vec!["converged".into(), s.converged.to_string()],
            vec!["convergence_rate".into(), format!("{:.6}", s.convergence_rate())],
            vec!["degenerate".into(), s.degenerate.to_string()],
            vec!["unconverged_dropped".into(), s.unconverged_dropped.to_string()],
            vec!["dedup_dropped".into(), s.dedup_dropped.to_string()],
            vec!["kept".into(), s.kept.to_string()],
        ];
        csv_bytes(&strings(["statistic", "value"]), &rows)
    }

    /// Every record a student received, decoded in its own schema.
    pub fn counterfactuals_csv(&self, student: usize) -> Result<Vec<u8>> {
        let schema = &self.schemas[student];
        let mut header = strings([
            "teacher",
            "student",
            "source_dataset",
            "source_index",
            "converged",
            "fit",
            "distance",
        ]);
        header.extend(schema.columns().iter().map(|c| c.name.clone()));
        header.push(schema.class_column().to_string());
        let mut rows = Vec::new();
        for r in &self.received[student] {
            let decoded = schema.decode(&r.features)?;
            let mut row = vec![
                self.models[r.teacher].clone(),
                self.models[r.student].clone(),
                self.models[r.source.dataset].clone(),
                r.source.index.to_string(),
                r.converged.to_string(),
                r.fit.to_string(),
                r.distance.to_string(),
            ];
            row.extend(schema.columns().iter().map(|c| decoded[&c.name].to_string()));
            row.push(self.classes.name(r.label).to_string());
            rows.push(row);
        }
        csv_bytes(&header, &rows)
    }
}

/// Writes every report file into `dir`.
pub fn write_report(report: &DistillationReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    atomic_write(&dir.join("metrics.csv"), &report.metrics_csv()?)?;
    atomic_write(&dir.join("count_matrix.csv"), &report.count_matrix_csv()?)?;
    atomic_write(&dir.join("lambdas.csv"), &report.lambdas_csv()?)?;
    atomic_write(&dir.join("summary.csv"), &report.summary_csv()?)?;
    for delta in &report.deltas {
        let name = format!(
            "delta_{}_{}.csv",
            report.models[delta.teacher], report.models[delta.student]
        );
        atomic_write(&dir.join(name), &report.delta_csv(delta)?)?;
    }
    for (j, model) in report.models.iter().enumerate() {
        atomic_write(
            &dir.join(format!("counterfactuals_{model}.csv")),
            &report.counterfactuals_csv(j)?,
        )?;
    }
    Ok(())
}
