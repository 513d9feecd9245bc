//! Multi-site mode: one thread per participant, channels as the only link.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Mutex;
use std::time::Instant;

use super::{
    finish_student, generate_at_site, own_view, report, Audit, DistillSettings, Experiment, GenerationStats,
    LambdaEntry, Participant, PrivacyAudit, PrivacyAuditor, RecordKey, SiteOutput, StudentOutput, TeacherView,
};
use crate::distill::{CounterfactualRecord, FeatureMask, InstanceRef};
use crate::features::{DatasetSchema, RawTable};
use crate::learners::codec::{Reader, Writer};
use crate::learners::TrainedModel;
use crate::{Error, Result};

const KIND_MODEL: u8 = 1;
const KIND_RECORDS: u8 = 2;
const KIND_ABORT: u8 = 3;
const ABORTED: &str = "aborted";

struct Envelope {
    from: usize,
    kind: u8,
    payload: Vec<u8>,
}

fn encode_model(view: &TeacherView) -> Vec<u8> {
    let mut w = Writer::default();
    let model = view.model.serialize();
    w.usize(model.len());
    w.bytes(&model);
    w.str(&view.schema.to_toml());
    match &view.masks {
        None => w.u8(0),
        Some(masks) => {
            w.u8(1);
            w.usize(masks.len());
            for m in masks {
                w.f64(m.fraction);
                w.usize(m.indices.len());
                m.indices.iter().for_each(|&i| w.usize(i));
            }
        }
    }
    w.finish()
}

fn decode_model(bytes: &[u8]) -> Result<TeacherView> {
    let mut r = Reader::new(bytes);
    let n = r.count(1)?;
    let model = TrainedModel::deserialize(r.take(n)?)?;
    let schema = DatasetSchema::from_toml(&r.str()?)?;
    let masks = if r.bool()? {
        let n = r.count(16)?;
        let mut masks = Vec::with_capacity(n);
        for _ in 0..n {
            let fraction = r.f64()?;
            let len = r.count(8)?;
            let indices = (0..len).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            masks.push(FeatureMask { indices, fraction });
        }
        Some(masks)
    } else {
        None
    };
    if !r.is_done() {
        return Err(Error::Format("trailing bytes after model message".into()));
    }
    Ok(TeacherView { model, schema, masks })
}

fn encode_records(records: &[CounterfactualRecord]) -> Vec<u8> {
    let mut w = Writer::default();
    w.usize(records.len());
    for r in records {
        w.usize(r.teacher);
        w.usize(r.student);
        w.usize(r.source.dataset);
        w.usize(r.source.index);
        w.f64s(&r.features);
        w.f64s(&r.target);
        w.usize(r.label);
        w.f64(r.fit);
        w.f64(r.distance);
        w.u8(u8::from(r.converged));
    }
    w.finish()
}

fn decode_records(bytes: &[u8]) -> Result<Vec<CounterfactualRecord>> {
    let mut r = Reader::new(bytes);
    let n = r.count(32)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(CounterfactualRecord {
            teacher: r.usize()?,
            student: r.usize()?,
            source: InstanceRef::new(r.usize()?, r.usize()?),
            features: r.f64s()?,
            target: r.f64s()?,
            label: r.usize()?,
            fit: r.f64()?,
            distance: r.f64()?,
            converged: r.bool()?,
        });
    }
    if !r.is_done() {
        return Err(Error::Format("trailing bytes after record batch".into()));
    }
    Ok(out)
}

/// Outbound link of one site. Every payload is scanned before it leaves.
struct Outbox<'a> {
    site: usize,
    peers: Vec<Sender<Envelope>>,
    auditor: &'a PrivacyAuditor,
    traffic: PrivacyAudit,
}

impl Outbox<'_> {
    fn send(&mut self, to: usize, kind: u8, payload: Vec<u8>) -> Result<()> {
        self.traffic.messages += 1;
        self.traffic.bytes += payload.len();
        if kind != KIND_ABORT {
            let found = self.auditor.matches(&payload);
            self.traffic.matches += found;
            if found > 0 {
                self.auditor.check(self.site, to, &payload)?;
            }
        }
        // A peer that already failed has dropped its inbox; its error is reported instead.
        let _ = self.peers[to].send(Envelope {
            from: self.site,
            kind,
            payload,
        });
        Ok(())
    }

    fn abort_all(&mut self) {
        let site = self.site;
        for to in (0..self.peers.len()).filter(|&t| t != site) {
            let _ = self.send(to, KIND_ABORT, Vec::new());
        }
    }
}

struct Inbox {
    rx: Receiver<Envelope>,
    pending: Vec<Envelope>,
}

impl Inbox {
    /// Waits for one message of `kind` from every peer, returned by sender.
    fn collect(&mut self, kind: u8, peers: usize) -> Result<Vec<Envelope>> {
        let mut got: Vec<Envelope> = Vec::new();
        let mut rest = Vec::new();
        for e in self.pending.drain(..) {
            if e.kind == kind {
                got.push(e);
            } else {
                rest.push(e);
            }
        }
        self.pending = rest;
        while got.len() < peers {
            let e = self
                .rx
                .recv()
                .map_err(|_| Error::InvalidData("site channel closed unexpectedly".into()))?;
            if e.kind == KIND_ABORT {
                return Err(Error::InvalidData(format!("site {} {ABORTED}", e.from)));
            }
            if e.kind == kind {
                got.push(e);
            } else {
                self.pending.push(e);
            }
        }
        got.sort_by_key(|e| e.from);
        Ok(got)
    }
}

struct SiteResult {
    generated: SiteOutput,
    student: StudentOutput,
    traffic: PrivacyAudit,
}

fn run_site(
    settings: &DistillSettings,
    site: usize,
    participant: &Participant,
    test: &RawTable,
    inbox: &mut Inbox,
    outbox: &mut Outbox<'_>,
) -> Result<(SiteOutput, StudentOutput)> {
    let k = outbox.peers.len();
    let own = own_view(settings, participant)?;
    let model_message = encode_model(&own);
    for to in (0..k).filter(|&t| t != site) {
        outbox.send(to, KIND_MODEL, model_message.clone())?;
    }
    let mut views: Vec<Option<TeacherView>> = vec![None; k];
    for e in inbox.collect(KIND_MODEL, k - 1)? {
        views[e.from] = Some(decode_model(&e.payload)?);
    }
    views[site] = Some(own);
    let views: Vec<TeacherView> = views.into_iter().map(|v| v.expect("every peer sent a model")).collect();

    let mut generated = generate_at_site(settings, &views, site, &participant.data)?;
    let mut batches: Vec<Vec<CounterfactualRecord>> = vec![Vec::new(); k];
    for r in std::mem::take(&mut generated.records) {
        batches[r.student].push(r);
    }
    let mut received = std::mem::take(&mut batches[site]);
    for (to, batch) in batches.iter().enumerate().filter(|&(t, _)| t != site) {
        outbox.send(to, KIND_RECORDS, encode_records(batch))?;
    }
    for e in inbox.collect(KIND_RECORDS, k - 1)? {
        let batch = decode_records(&e.payload)?;
        if let Some(r) = batch.iter().find(|r| r.student != site) {
            return Err(Error::InvalidData(format!(
                "site {} sent a record for student {} to site {site}",
                e.from, r.student
            )));
        }
        received.extend(batch);
    }
    let student = finish_student(settings, site, participant, received, test)?;
    Ok((generated, student))
}

/// Multi-site mode: participants exchange serialized models and
/// counterfactual batches over channels and nothing else.
pub fn run_multi_site(experiment: &Experiment) -> Result<super::DistillationReport> {
    experiment.validate()?;
    let settings = &experiment.settings;
    let started = Instant::now();
    let auditor = PrivacyAuditor::new(&experiment.participants)?;
    let k = experiment.participants.len();
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..k).map(|_| channel::<Envelope>()).unzip();
    let results: Vec<Mutex<Option<Result<SiteResult>>>> = (0..k).map(|_| Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for ((site, rx), slot) in receivers.into_iter().enumerate().zip(&results) {
            let peers = senders.clone();
            let auditor = &auditor;
            let participant = &experiment.participants[site];
            scope.spawn(move || {
                let mut inbox = Inbox {
                    rx,
                    pending: Vec::new(),
                };
                let mut outbox = Outbox {
                    site,
                    peers,
                    auditor,
                    traffic: PrivacyAudit::default(),
                };
                let outcome = run_site(settings, site, participant, &experiment.test, &mut inbox, &mut outbox);
                if outcome.is_err() {
                    outbox.abort_all();
                }
                let result = outcome.map(|(generated, student)| SiteResult {
                    generated,
                    student,
                    traffic: outbox.traffic,
                });
                *slot.lock().expect("site result lock") = Some(result);
            });
        }
    });
    drop(senders);

    let mut outcomes = Vec::with_capacity(k);
    let mut errors = Vec::new();
    for (site, slot) in results.into_iter().enumerate() {
        match slot.into_inner().expect("site result lock").expect("site finished") {
            Ok(r) => outcomes.push(r),
            Err(e) => {
                let aborted = matches!(&e, Error::InvalidData(m) if m.ends_with(ABORTED));
                errors.push((
                    aborted,
                    e.context(format!("site {:?}", experiment.participants[site].name)),
                ));
            }
        }
    }
    // Report the site that failed first-hand rather than the peers it aborted.
    if let Some(i) = errors
        .iter()
        .position(|(aborted, _)| !aborted)
        .or((!errors.is_empty()).then_some(0))
    {
        return Err(errors.swap_remove(i).1);
    }

    let mut audits = std::collections::BTreeMap::<RecordKey, Audit>::new();
    let mut lambdas: Vec<LambdaEntry> = Vec::new();
    let mut stats = GenerationStats::default();
    let mut traffic = PrivacyAudit {
        patterns_checked: auditor.pattern_count(),
        ..PrivacyAudit::default()
    };
    let mut students = Vec::with_capacity(k);
    for r in outcomes {
        audits.extend(r.generated.audits);
        lambdas.extend(r.generated.lambdas);
        stats.add(&r.generated.stats);
        traffic.messages += r.traffic.messages;
        traffic.bytes += r.traffic.bytes;
        traffic.matches += r.traffic.matches;
        students.push(r.student);
    }
    let mut report = report::assemble(experiment, students, audits, lambdas, stats)?;
    report.timings = vec![("sites".into(), started.elapsed().as_secs_f64())];
    report.privacy = Some(traffic);
    Ok(report)
}
