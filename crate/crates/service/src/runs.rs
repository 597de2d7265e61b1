//! Run registry, engine workers and the on-disk event log.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;
use std::time::Duration;

use log::{error, info, warn};
use serde::{Deserialize, Serialize};

use prefcurate::annotate::{AnnotationBatch, AnnotationQueue, Annotator, AnnotatorKind, BatchKind, OracleHuman, SimulatedLlm};
use prefcurate::curve::{ProbeResult, RankedPair};
use prefcurate::dataset::{read_corpus, read_oracle};
use prefcurate::engine::{run_curation, IterationRecord, RunInputs, RunObserver, RunReport, RunStatus};
use prefcurate::report::export_report;
use prefcurate::{Corpus, Error, Label, Landmarks, PairId, RewardCurve, RunConfig};

use crate::error::ApiError;

/// Body of `POST /runs`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CreateRun {
    pub corpus: PathBuf,
    /// Oracle labels and weights; drives the simulated LLM and evaluation.
    pub oracle: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub config: serde_json::Value,
    /// Seconds an interactive batch may stay open; unlimited when absent.
    #[serde(default)]
    pub queue_timeout_secs: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelChoice {
    pub pair_id: PairId,
    pub choice: Label,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created { run_id: String, request: CreateRun },
    Status { status: RunStatus },
    Labels { iteration: usize, kind: BatchKind, labels: Vec<LabelChoice> },
    Replayed,
}

struct EventLog {
    file: File,
}

impl EventLog {
    fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file })
    }

    fn append(&mut self, event: &Event) {
        let line = serde_json::to_string(event).expect("events serialize");
        if let Err(e) = writeln!(self.file, "{line}").and_then(|_| self.file.sync_data()) {
            error!("event log write failed: {e}");
        }
    }
}

fn read_events(path: &Path) -> std::io::Result<Vec<Event>> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(e) => events.push(e),
            // a torn final line from a crash is dropped
            Err(e) => warn!("{}: skipping unreadable event: {e}", path.display()),
        }
    }
    Ok(events)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveView {
    pub iteration: usize,
    pub len: usize,
    pub landmarks: Landmarks,
    pub fallback_used: bool,
    pub points: Vec<RankedPair>,
}

impl CurveView {
    fn new(iteration: usize, curve: &RewardCurve) -> Self {
        Self {
            iteration,
            len: curve.len(),
            landmarks: curve.landmarks(),
            fallback_used: curve.landmarks().fallback_used,
            points: curve.ranked().to_vec(),
        }
    }
}

#[derive(Debug)]
struct Snapshot {
    status: RunStatus,
    curves: BTreeMap<usize, Arc<CurveView>>,
    records: Vec<IterationRecord>,
    probe: Option<ProbeResult>,
    report: Option<Arc<RunReport>>,
}

pub struct RunEntry {
    pub id: String,
    pub interactive: bool,
    pool: Arc<Corpus>,
    queue: Arc<AnnotationQueue>,
    snapshot: RwLock<Snapshot>,
    log: Mutex<EventLog>,
    out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunView {
    pub run_id: String,
    pub status: RunStatus,
    pub interactive: bool,
    /// Latest completed iteration, if any.
    pub iteration: Option<usize>,
    pub annotation_spend: usize,
    pub test_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub pair_id: PairId,
    pub prompt: Option<String>,
    pub text_a: Option<String>,
    pub text_b: Option<String>,
    /// `features_a - features_b`, sent when the pair has no text.
    pub feature_diff: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchView {
    pub run_id: String,
    pub iteration: usize,
    pub kind: BatchKind,
    pub total: usize,
    pub submitted: usize,
    pub remaining: usize,
    /// Pending items, rightmost curve rank first.
    pub items: Vec<BatchItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmitLabels {
    pub iteration: usize,
    pub labels: Vec<LabelChoice>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsView {
    pub run_id: String,
    pub rows: Vec<IterationRecord>,
}

impl RunEntry {
    fn set_status(&self, status: RunStatus) {
        self.snapshot.write().unwrap().status = status.clone();
        self.log.lock().unwrap().append(&Event::Status { status });
    }

    pub fn view(&self) -> RunView {
        let snap = self.snapshot.read().unwrap();
        let last = snap.records.last();
        RunView {
            run_id: self.id.clone(),
            status: snap.status.clone(),
            interactive: self.interactive,
            iteration: last.map(|r| r.iteration),
            annotation_spend: last.map_or(0, |r| r.annotation_spend),
            test_accuracy: snap
                .report
                .as_ref()
                .map(|r| r.summary.test_accuracy())
                .or(last.map(|r| r.test_accuracy)),
        }
    }

    pub fn batch(&self) -> Result<BatchView, ApiError> {
        let status = self.snapshot.read().unwrap().status.clone();
        if !matches!(status, RunStatus::AwaitingAnnotation { .. } | RunStatus::ProbePending) {
            return Err(ApiError::conflict(format!("run is not awaiting annotation ({status:?})")));
        }
        let view = self
            .queue
            .view()
            .ok_or_else(|| ApiError::conflict("no annotation batch is open"))?;
        let items = view
            .pending
            .iter()
            .map(|&id| {
                let p = self.pool.get(id).expect("batches only hold corpus ids");
                let has_text = p.text_a.is_some() || p.text_b.is_some();
                BatchItem {
                    pair_id: id,
                    prompt: p.prompt.clone(),
                    text_a: p.text_a.clone(),
                    text_b: p.text_b.clone(),
                    feature_diff: (!has_text).then(|| p.diff()),
                }
            })
            .collect();
        Ok(BatchView {
            run_id: self.id.clone(),
            iteration: view.batch.iteration,
            kind: view.batch.kind,
            total: view.batch.pair_ids.len(),
            submitted: view.submitted,
            remaining: view.pending.len(),
            items,
        })
    }

    pub fn submit(&self, body: &SubmitLabels) -> Result<prefcurate::annotate::SubmitAck, ApiError> {
        let kind = self.queue.view().map(|v| v.batch.kind);
        let pairs: Vec<(PairId, Label)> = body.labels.iter().map(|l| (l.pair_id, l.choice)).collect();
        // hold the log while submitting so the log order matches the queue order
        let mut log = self.log.lock().unwrap();
        let ack = self.queue.submit(body.iteration, &pairs)?;
        if ack.accepted > 0 {
            log.append(&Event::Labels {
                iteration: body.iteration,
                kind: kind.expect("a batch was open for the submit to succeed"),
                labels: body.labels.clone(),
            });
        }
        drop(log);
        if ack.completed && kind == Some(BatchKind::Targeted) {
            let mut snap = self.snapshot.write().unwrap();
            if snap.status == (RunStatus::AwaitingAnnotation { iteration: body.iteration }) {
                snap.status = RunStatus::Training { iteration: body.iteration };
            }
        }
        Ok(ack)
    }

    pub fn curve(&self, iteration: usize) -> Option<Arc<CurveView>> {
        self.snapshot.read().unwrap().curves.get(&iteration).cloned()
    }

    pub fn metrics(&self) -> MetricsView {
        MetricsView {
            run_id: self.id.clone(),
            rows: self.snapshot.read().unwrap().records.clone(),
        }
    }

    pub fn probe(&self) -> Option<ProbeResult> {
        self.snapshot.read().unwrap().probe.clone()
    }

    pub fn report(&self) -> Option<Arc<RunReport>> {
        self.snapshot.read().unwrap().report.clone()
    }

    pub fn status(&self) -> RunStatus {
        self.snapshot.read().unwrap().status.clone()
    }

    fn shutdown(&self) {
        self.queue.close();
    }
}

struct Tracker(Arc<RunEntry>, Mutex<Option<RunStatus>>);

impl RunObserver for Tracker {
    fn status(&self, status: &RunStatus) {
        // terminal states wait until the report is exported
        if status.is_terminal() {
            *self.1.lock().unwrap() = Some(status.clone());
        } else if !(self.0.interactive && is_batch_state(status)) {
            // interactive batch states are set by `QueueAnnotator` once the batch is open
            self.0.set_status(status.clone());
        }
    }

    fn curve(&self, iteration: usize, curve: &RewardCurve) {
        let view = Arc::new(CurveView::new(iteration, curve));
        self.0.snapshot.write().unwrap().curves.insert(iteration, view);
    }

    fn record(&self, record: &IterationRecord) {
        self.0.snapshot.write().unwrap().records.push(record.clone());
    }

    fn probe(&self, probe: &ProbeResult) {
        self.0.snapshot.write().unwrap().probe = Some(probe.clone());
    }
}

fn is_batch_state(status: &RunStatus) -> bool {
    matches!(status, RunStatus::AwaitingAnnotation { .. } | RunStatus::ProbePending)
}

/// Human annotator of interactive runs: opens the batch on the queue before
/// announcing it, so a client that sees the batch state can fetch the batch.
struct QueueAnnotator<'a>(&'a RunEntry);

impl Annotator for QueueAnnotator<'_> {
    fn annotate(&self, corpus: &Corpus, batch: &AnnotationBatch) -> Result<BTreeMap<PairId, Label>, Error> {
        self.0.queue.post(corpus, batch)?;
        let status = match batch.kind {
            BatchKind::Probe => RunStatus::ProbePending,
            _ => RunStatus::AwaitingAnnotation { iteration: batch.iteration },
        };
        self.0.set_status(status);
        self.0.queue.wait()
    }
}

/// Parsed and validated inputs of a run.
struct Prepared {
    config: RunConfig,
    inputs: RunInputs,
    pool: Arc<Corpus>,
}

fn parse_config(value: &serde_json::Value) -> Result<RunConfig, ApiError> {
    let value = if value.is_null() { serde_json::json!({}) } else { value.clone() };
    let config: RunConfig =
        serde_json::from_value(value).map_err(|e| ApiError::bad_request(format!("config: {e}"), Some("config")))?;
    config.validate()?;
    Ok(config)
}

fn prepare(request: &CreateRun) -> Result<Prepared, ApiError> {
    let config = parse_config(&request.config)?;
    for (field, path) in [("corpus", Some(&request.corpus)), ("oracle", Some(&request.oracle)), ("test", request.test.as_ref())] {
        if let Some(path) = path {
            if !path.is_file() {
                let mut e = ApiError::not_found(format!("{field} file not found: {}", path.display()));
                e.body.field = Some(field.to_string());
                return Err(e);
            }
        }
    }
    let corpus = read_corpus(&request.corpus)?;
    let oracle = Arc::new(read_oracle(&request.oracle)?);
    let test = request.test.as_ref().map(read_corpus).transpose()?;
    let inputs = RunInputs::new(corpus, test, oracle, config.curation.test_fraction)?;
    let pool = Arc::new(inputs.pool.clone());
    Ok(Prepared { config, inputs, pool })
}

/// All runs known to this process.
pub struct Registry {
    data_dir: PathBuf,
    runs: RwLock<BTreeMap<String, Arc<RunEntry>>>,
}

impl Registry {
    /// Opens `data_dir`, replaying every logged run.
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Arc<Self>, Error> {
        let data_dir = data_dir.into();
        fs::create_dir_all(&data_dir).map_err(|e| Error::io(&data_dir, e))?;
        let registry = Arc::new(Self {
            data_dir: data_dir.clone(),
            runs: RwLock::new(BTreeMap::new()),
        });
        let mut dirs: Vec<PathBuf> = fs::read_dir(&data_dir)
            .map_err(|e| Error::io(&data_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("events.jsonl").is_file())
            .collect();
        dirs.sort();
        for dir in dirs {
            if let Err(e) = registry.replay(&dir) {
                warn!("{}: replay failed: {}", dir.display(), e.body.message);
            }
        }
        Ok(registry)
    }

    fn replay(&self, dir: &Path) -> Result<(), ApiError> {
        let events = read_events(&dir.join("events.jsonl")).map_err(|e| ApiError::internal(e.to_string()))?;
        let Some(Event::Created { run_id, request }) = events.first().cloned() else {
            return Err(ApiError::internal("log does not start with a created event"));
        };
        let prepared = prepare(&request)?;
        let entry = self.insert(run_id.clone(), &request, &prepared)?;
        for event in &events {
            if let Event::Labels { iteration, kind, labels } = event {
                for l in labels {
                    entry.queue.preload(*iteration, *kind, l.pair_id, l.choice);
                }
            }
        }
        entry.log.lock().unwrap().append(&Event::Replayed);
        info!("replaying run {run_id}");
        spawn_worker(entry, prepared);
        Ok(())
    }

    fn insert(&self, run_id: String, request: &CreateRun, prepared: &Prepared) -> Result<Arc<RunEntry>, ApiError> {
        let dir = self.data_dir.join(&run_id);
        fs::create_dir_all(&dir).map_err(|e| ApiError::internal(e.to_string()))?;
        let log = EventLog::open(&dir.join("events.jsonl")).map_err(|e| ApiError::internal(e.to_string()))?;
        let entry = Arc::new(RunEntry {
            id: run_id.clone(),
            interactive: prepared.config.human.kind == AnnotatorKind::InteractiveQueue,
            pool: Arc::clone(&prepared.pool),
            queue: Arc::new(AnnotationQueue::new(request.queue_timeout_secs.map(Duration::from_secs))),
            snapshot: RwLock::new(Snapshot {
                status: RunStatus::Configured,
                curves: BTreeMap::new(),
                records: Vec::new(),
                probe: None,
                report: None,
            }),
            log: Mutex::new(log),
            out_dir: dir.join("out"),
        });
        self.runs.write().unwrap().insert(run_id, Arc::clone(&entry));
        Ok(entry)
    }

    /// Validates the request, logs it and starts the engine worker.
    pub fn create(&self, request: CreateRun) -> Result<Arc<RunEntry>, ApiError> {
        let prepared = prepare(&request)?;
        let run_id = {
            let runs = self.runs.read().unwrap();
            let mut n = runs.len() + 1;
            loop {
                let id = format!("run-{n:04}");
                if !runs.contains_key(&id) && !self.data_dir.join(&id).exists() {
                    break id;
                }
                n += 1;
            }
        };
        let entry = self.insert(run_id.clone(), &request, &prepared)?;
        entry.log.lock().unwrap().append(&Event::Created { run_id, request });
        spawn_worker(Arc::clone(&entry), prepared);
        Ok(entry)
    }

    pub fn get(&self, run_id: &str) -> Result<Arc<RunEntry>, ApiError> {
        self.runs
            .read()
            .unwrap()
            .get(run_id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown run {run_id}")))
    }

    /// Closes every open queue so blocked workers exit.
    pub fn shutdown(&self) {
        for entry in self.runs.read().unwrap().values() {
            entry.shutdown();
        }
    }
}

fn spawn_worker(entry: Arc<RunEntry>, prepared: Prepared) {
    let name = format!("engine-{}", entry.id);
    thread::Builder::new()
        .name(name)
        .spawn(move || {
            entry.set_status(RunStatus::Configured);
            let tracker = Tracker(Arc::clone(&entry), Mutex::new(None));
            let result = execute(&entry, &prepared, &tracker);
            match result {
                Ok(report) => {
                    entry.snapshot.write().unwrap().report = Some(Arc::new(report));
                    let last = tracker.1.lock().unwrap().take();
                    entry.set_status(last.unwrap_or(RunStatus::Completed));
                }
                Err(e) => {
                    error!("run {} failed: {e}", entry.id);
                    entry.set_status(RunStatus::Failed { reason: e.to_string() });
                }
            }
        })
        .expect("spawning an engine thread");
}

fn execute(entry: &RunEntry, prepared: &Prepared, tracker: &Tracker) -> Result<RunReport, Error> {
    let config = &prepared.config;
    let oracle = prepared.inputs.evaluator.oracle();
    let llm_spec = config.llm.resolve(&prepared.inputs.pool, oracle)?;
    let llm = SimulatedLlm::new(&llm_spec, oracle)?;
    let outcome = if entry.interactive {
        run_curation(&prepared.inputs, config, &llm, Some(llm_spec), &QueueAnnotator(entry), tracker)?
    } else {
        let human = OracleHuman::new(&config.human.spec(), Arc::new(oracle.clone()))?;
        run_curation(&prepared.inputs, config, &llm, Some(llm_spec), &human, tracker)?
    };
    export_report(&outcome, &entry.out_dir)?;
    Ok(outcome.report)
}
