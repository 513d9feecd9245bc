//! End-to-end cooperative distillation.
//!
//! [`run_distillation`] runs every step in one process with all data in
//! view. [`run_multi_site`] runs the same computation with each participant
//! as an isolated site that exchanges only serialized models and
//! counterfactual batches. Both share [`generate_at_site`] and the student
//! retraining step, so with identical seeds they produce identical reports.

mod config;
mod privacy;
mod report;
mod sites;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distill::{
    dedup_set_cover, derive_mask, generate_counterfactual, identify_expertise, make_target, teaching_sets,
    Counterfactual, CounterfactualRecord, FeatureMask, GenerationSettings, InstanceRef,
};
use crate::error::ResultExt;
use crate::features::{Dataset, DatasetSchema, Projection, RawTable};
use crate::learners::{fit, ModelSpec, Samples, TrainedModel};
use crate::optimize::{lambda_search, AdamBudget, LambdaGrid, PsoBudget};
use crate::seed::{derive, tag};
use crate::{Error, LabelSpace, Result};

pub use config::{ExperimentConfig, ParticipantConfig, RunManifest, SeedRecord};
pub use privacy::PrivacyAuditor;
pub use report::{mechanism_report, write_report, ClassDelta, DeltaAnalysis, DistillationReport, PrivacyAudit};
pub use sites::run_multi_site;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    SharedData,
    MultiSite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum LambdaPolicy {
    Fixed { value: f64 },
    Search(LambdaSearch),
}

impl Default for LambdaPolicy {
    fn default() -> Self {
        LambdaPolicy::Search(LambdaSearch::default())
    }
}

/// Per-batch doubling search. A candidate converges when at least
/// `ceil(quorum * probes)` of the probe instances converge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaSearch {
    pub start: f64,
    pub factor: f64,
    pub cap: f64,
    pub probes: usize,
    pub quorum: f64,
}

impl Default for LambdaSearch {
    fn default() -> Self {
        let grid = LambdaGrid::default();
        Self {
            start: grid.start,
            factor: grid.factor,
            cap: grid.cap,
            probes: 5,
            quorum: 0.8,
        }
    }
}

impl LambdaSearch {
    pub fn grid(&self) -> LambdaGrid {
        LambdaGrid {
            start: self.start,
            factor: self.factor,
            cap: self.cap,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupSettings {
    pub enabled: bool,
    /// Manhattan ball radius; defaults to `0.05 * d` in the student's space.
    pub radius: Option<f64>,
}

/// Everything about a run except the participants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSettings {
    pub mode: Mode,
    pub seed: u64,
    pub alpha: f64,
    pub lambda: LambdaPolicy,
    pub fit_tolerance: f64,
    pub adam: AdamBudget,
    pub pso: PsoBudget,
    pub dedup: DedupSettings,
    /// Restrict each counterfactual to this fraction of the most variable features of its class.
    pub mask_fraction: Option<f64>,
    pub keep_unconverged: bool,
}

impl Default for DistillSettings {
    fn default() -> Self {
        let generation = GenerationSettings::default();
        Self {
            mode: Mode::default(),
            seed: 0,
            alpha: 0.5,
            lambda: LambdaPolicy::default(),
            fit_tolerance: generation.fit_tolerance,
            adam: generation.adam,
            pso: generation.pso,
            dedup: DedupSettings::default(),
            mask_fraction: None,
            keep_unconverged: false,
        }
    }
}

impl DistillSettings {
    pub fn generation(&self) -> GenerationSettings {
        GenerationSettings {
            adam: self.adam.clone(),
            pso: self.pso.clone(),
            fit_tolerance: self.fit_tolerance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha {} must lie in [0, 1]", self.alpha)));
        }
        match &self.lambda {
            LambdaPolicy::Fixed { value } if !(*value > 0.0 && value.is_finite()) => {
                return Err(Error::InvalidConfig(format!("fixed lambda {value} must be positive")));
            }
            LambdaPolicy::Fixed { .. } => {}
            LambdaPolicy::Search(s) => {
                s.grid().validate()?;
                if s.probes == 0 || !(s.quorum > 0.0 && s.quorum <= 1.0) {
                    return Err(Error::InvalidConfig(
                        "lambda search needs probes >= 1 and quorum in (0, 1]".into(),
                    ));
                }
            }
        }
        if let Some(r) = self.dedup.radius {
            if !(r >= 0.0) {
                return Err(Error::InvalidConfig(format!("dedup radius {r} must be non-negative")));
            }
        }
        if let Some(f) = self.mask_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidConfig(format!("mask fraction {f} must lie in (0, 1]")));
            }
        }
        self.generation().validate()
    }
}

/// One model together with the data it was trained on.
#[derive(Debug, Clone)]
pub struct Participant {
    pub name: String,
    pub data: Dataset,
    pub spec: ModelSpec,
    pub model: TrainedModel,
}

impl Participant {
    /// Trains `spec` on `data`.
    pub fn train(name: impl Into<String>, data: Dataset, spec: ModelSpec) -> Result<Self> {
        let name = name.into();
        let model = fit(&spec, data.schema().classes(), &data.samples())
            .map_err(|e| e.context(format!("training participant {name:?}")))?;
        Ok(Self {
            name,
            data,
            spec,
            model,
        })
    }

    pub fn schema(&self) -> &DatasetSchema {
        self.data.schema()
    }
}

/// A fully loaded run: settings, trained participants and the shared test table.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub settings: DistillSettings,
    pub participants: Vec<Participant>,
    pub test: RawTable,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        self.settings.validate()?;
        if self.participants.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "distillation needs at least 2 participants, got {}",
                self.participants.len()
            )));
        }
        let mut names = std::collections::BTreeSet::new();
        let classes = self.participants[0].schema().classes();
        for p in &self.participants {
            if !names.insert(&p.name) {
                return Err(Error::InvalidConfig(format!(
                    "participant name {:?} is used twice",
                    p.name
                )));
            }
            if p.schema().classes() != classes {
                return Err(Error::InvalidConfig(format!(
                    "participant {:?} has classes {:?}, expected {:?}",
                    p.name,
                    p.schema().classes().classes(),
                    classes.classes()
                )));
            }
        }
        for a in &self.participants {
            for b in &self.participants {
                Projection::new(a.schema(), b.schema())
                    .context(|| format!("participants {:?} and {:?}", a.name, b.name))?;
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.participants.iter().map(|p| p.name.clone()).collect()
    }
}

/// Runs the experiment in the mode its settings ask for.
pub fn run(experiment: &Experiment) -> Result<DistillationReport> {
    match experiment.settings.mode {
        Mode::SharedData => run_distillation(experiment),
        Mode::MultiSite => run_multi_site(experiment),
    }
}

/// A model as seen by a site that did not train it.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TeacherView {
    pub model: TrainedModel,
    pub schema: DatasetSchema,
    /// Per-class masks, present when masking is on.
    pub masks: Option<Vec<FeatureMask>>,
}

/// Masks derived from a participant's own training data.
pub(crate) fn class_masks(settings: &DistillSettings, participant: &Participant) -> Result<Option<Vec<FeatureMask>>> {
    let Some(fraction) = settings.mask_fraction else {
        return Ok(None);
    };
    let samples = participant.data.samples();
    let d = participant.schema().dimensionality();
    let masks = (0..participant.schema().classes().len())
        .map(|class| match derive_mask(&samples, class, fraction) {
            Ok(m) => Ok(m),
            Err(Error::InvalidData(msg)) => {
                log::warn!("participant {:?}: {msg}; leaving every feature free", participant.name);
                Ok(FeatureMask::all(d))
            }
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(masks))
}

pub(crate) fn own_view(settings: &DistillSettings, participant: &Participant) -> Result<TeacherView> {
    Ok(TeacherView {
        model: participant.model.clone(),
        schema: participant.schema().clone(),
        masks: class_masks(settings, participant)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordKey {
    pub teacher: usize,
    pub student: usize,
    pub source: InstanceRef,
}

impl RecordKey {
    pub fn of(r: &CounterfactualRecord) -> Self {
        Self {
            teacher: r.teacher,
            student: r.student,
            source: r.source,
        }
    }
}

/// Source instance and counterfactual in the teacher's space. Never leaves
/// the site that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Audit {
    pub original: Vec<f64>,
    pub counterfactual: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaEntry {
    pub teacher: usize,
    pub student: usize,
    pub dataset: usize,
    pub lambda: f64,
    /// False when the search fell back after nothing converged.
    pub converged: bool,
    pub instances: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GenerationStats {
    pub attempted: usize,
    pub failed: usize,
    pub converged: usize,
    pub degenerate: usize,
    pub unconverged_dropped: usize,
    pub dedup_dropped: usize,
    pub kept: usize,
}

impl GenerationStats {
    fn add(&mut self, o: &GenerationStats) {
        self.attempted += o.attempted;
        self.failed += o.failed;
        self.converged += o.converged;
        self.degenerate += o.degenerate;
        self.unconverged_dropped += o.unconverged_dropped;
        self.dedup_dropped += o.dedup_dropped;
        self.kept += o.kept;
    }

    /// Converged share of completed generations.
    pub fn convergence_rate(&self) -> f64 {
        let done = self.attempted - self.failed;
        if done == 0 {
            1.0
        } else {
            self.converged as f64 / done as f64
        }
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct SiteOutput {
    pub records: Vec<CounterfactualRecord>,
    pub audits: BTreeMap<RecordKey, Audit>,
    pub lambdas: Vec<LambdaEntry>,
    pub stats: GenerationStats,
}

impl SiteOutput {
    fn merge(&mut self, other: SiteOutput) {
        self.records.extend(other.records);
        self.audits.extend(other.audits);
        self.lambdas.extend(other.lambdas);
        self.stats.add(&other.stats);
    }
}

struct Attempt {
    original: Vec<f64>,
    target: Vec<f64>,
    cf: Counterfactual,
}

fn evenly_spaced(n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    (0..k).map(|t| ((2 * t + 1) * n) / (2 * k)).collect()
}

/// Teaching sets and counterfactuals for one dataset, against every ordered
/// pair of the given models. Everything here runs where the data lives.
pub(crate) fn generate_at_site(
    settings: &DistillSettings,
    views: &[TeacherView],
    source: usize,
    data: &Dataset,
) -> Result<SiteOutput> {
    let generation = settings.generation();
    let inbound: Vec<Projection> = views
        .iter()
        .map(|v| Projection::new(data.schema(), &v.schema))
        .collect::<Result<_>>()?;
    let expertise = views
        .iter()
        .enumerate()
        .map(|(m, v)| identify_expertise(m, &v.model, &v.schema, &[(source, data)]))
        .collect::<Result<Vec<_>>>()?;
    let mut out = SiteOutput::default();
    for set in teaching_sets(&expertise) {
        if set.instances.is_empty() {
            continue;
        }
        let (i, j) = (set.teacher, set.student);
        let teacher = &views[i];
        let outbound = Projection::new(&teacher.schema, &views[j].schema)?;
        let instances: Vec<InstanceRef> = set.instances.into_iter().collect();

        let attempt = |r: &InstanceRef, lambda: f64| -> Result<Option<Attempt>> {
            let x = inbound[i].apply(&data.encoded()[r.index])?;
            let label = data.labels()[r.index];
            let target = make_target(&teacher.model, &x, label, settings.alpha)?;
            let mask = teacher.masks.as_ref().map(|m| &m[label]);
            let seed = derive(
                settings.seed,
                &[tag("counterfactual"), i as u64, j as u64, source as u64, r.index as u64],
            );
            match generate_counterfactual(&teacher.model, &x, &target, lambda, mask, &generation, seed) {
                Ok(cf) => Ok(Some(Attempt {
                    original: x,
                    target: target.target.into_vec(),
                    cf,
                })),
                Err(Error::NonFinite(msg)) => {
                    log::warn!(
                        "teacher {i}, student {j}, instance ({source}, {}): dropped: {msg}",
                        r.index
                    );
                    Ok(None)
                }
                Err(e) => Err(e.context(format!("teacher {i}, student {j}, instance ({source}, {})", r.index))),
            }
        };

        let (lambda, converged) = match &settings.lambda {
            LambdaPolicy::Fixed { value } => (*value, true),
            LambdaPolicy::Search(search) => {
                let probes: Vec<InstanceRef> = evenly_spaced(instances.len(), search.probes)
                    .into_iter()
                    .map(|p| instances[p])
                    .collect();
                let needed = (search.quorum * probes.len() as f64 - 1e-9).ceil() as usize;
                let choice = lambda_search(
                    |lambda| {
                        let results = probes
                            .par_iter()
                            .map(|r| attempt(r, lambda))
                            .collect::<Result<Vec<_>>>()?;
                        let ok = results.iter().flatten().filter(|a| a.cf.converged).count();
                        Ok(ok >= needed)
                    },
                    &search.grid(),
                )?;
                if !choice.converged {
                    log::warn!(
                        "teacher {i}, student {j}, dataset {source}: no lambda converged; using {}",
                        choice.lambda
                    );
                }
                (choice.lambda, choice.converged)
            }
        };
        out.lambdas.push(LambdaEntry {
            teacher: i,
            student: j,
            dataset: source,
            lambda,
            converged,
            instances: instances.len(),
        });

        let results = instances
            .par_iter()
            .map(|r| attempt(r, lambda))
            .collect::<Result<Vec<_>>>()?;
        for (r, result) in instances.iter().zip(results) {
            out.stats.attempted += 1;
            let Some(Attempt { original, target, cf }) = result else {
                out.stats.failed += 1;
                continue;
            };
            if cf.converged {
                out.stats.converged += 1;
            }
            let base = inbound[j].apply(&data.encoded()[r.index])?;
            let mut features = base.clone();
            outbound.overlay(&cf.point, &mut features)?;
            if features == base {
                out.stats.degenerate += 1;
                continue;
            }
            let record = CounterfactualRecord {
                teacher: i,
                student: j,
                source: *r,
                features,
                target,
                label: data.labels()[r.index],
                fit: cf.fit,
                distance: cf.distance,
                converged: cf.converged,
            };
            out.audits.insert(
                RecordKey::of(&record),
                Audit {
                    original,
                    counterfactual: cf.point,
                },
            );
            out.records.push(record);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub(crate) struct StudentOutput {
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub received: Vec<CounterfactualRecord>,
    pub kept: Vec<CounterfactualRecord>,
    pub retrained: TrainedModel,
    pub stats: GenerationStats,
}

/// Filters, deduplicates and appends received counterfactuals, retrains
/// from scratch and evaluates before and after on the test table.
pub(crate) fn finish_student(
    settings: &DistillSettings,
    student: usize,
    participant: &Participant,
    mut received: Vec<CounterfactualRecord>,
    test: &RawTable,
) -> Result<StudentOutput> {
    received.sort_by_key(RecordKey::of);
    let mut stats = GenerationStats::default();
    let mut kept: Vec<CounterfactualRecord> = received
        .iter()
        .filter(|r| settings.keep_unconverged || r.converged)
        .cloned()
        .collect();
    stats.unconverged_dropped = received.len() - kept.len();
    if settings.dedup.enabled {
        let radius = settings
            .dedup
            .radius
            .unwrap_or(0.05 * participant.schema().dimensionality() as f64);
        let before = kept.len();
        kept = dedup_set_cover(kept, radius);
        stats.dedup_dropped = before - kept.len();
    }
    stats.kept = kept.len();

    let retrained = if kept.is_empty() {
        participant.model.clone()
    } else {
        let original = participant.data.samples();
        let mut rows: Vec<(Vec<f64>, usize)> = original.features.into_iter().zip(original.labels).collect();
        rows.extend(kept.iter().map(|r| (r.features.clone(), r.label)));
        let mut rng = ChaCha8Rng::seed_from_u64(derive(settings.seed, &[tag("shuffle"), student as u64]));
        rows.shuffle(&mut rng);
        let (features, labels) = rows.into_iter().unzip();
        fit(
            &participant.spec,
            participant.schema().classes(),
            &Samples::new(features, labels),
        )
        .context(|| format!("retraining participant {:?}", participant.name))?
    };
    let test_data = Dataset::from_table(participant.schema(), test)
        .context(|| format!("encoding the test data for participant {:?}", participant.name))?;
    let test_samples = test_data.samples();
    Ok(StudentOutput {
        accuracy_before: participant.model.accuracy(&test_samples)?,
        accuracy_after: retrained.accuracy(&test_samples)?,
        received,
        kept,
        retrained,
        stats,
    })
}

/// Shared-data mode: every step in one process.
pub fn run_distillation(experiment: &Experiment) -> Result<DistillationReport> {
    experiment.validate()?;
    let settings = &experiment.settings;
    let started = Instant::now();
    let views = experiment
        .participants
        .iter()
        .map(|p| own_view(settings, p))
        .collect::<Result<Vec<_>>>()?;
    let mut generated = SiteOutput::default();
    for (s, p) in experiment.participants.iter().enumerate() {
        generated.merge(generate_at_site(settings, &views, s, &p.data)?);
    }
    let generate_secs = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let mut inbox: Vec<Vec<CounterfactualRecord>> = vec![Vec::new(); experiment.participants.len()];
    for r in std::mem::take(&mut generated.records) {
        inbox[r.student].push(r);
    }
    let students = experiment
        .participants
        .iter()
        .zip(inbox)
        .enumerate()
        .map(|(j, (p, received))| finish_student(settings, j, p, received, &experiment.test))
        .collect::<Result<Vec<_>>>()?;
    let retrain_secs = started.elapsed().as_secs_f64();

    let mut report = report::assemble(
        experiment,
        students,
        generated.audits,
        generated.lambdas,
        generated.stats,
    )?;
    report.timings = vec![("generate".into(), generate_secs), ("retrain".into(), retrain_secs)];
    Ok(report)
}

pub(crate) fn label_space(experiment: &Experiment) -> &LabelSpace {
    experiment.participants[0].schema().classes()
}
