//! Annotators: a simulated LLM labeler, an oracle "human", and an
//! interactive queue that blocks until a person answers through the service.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{dot, Corpus, Label, OracleStore, PairId};
use crate::error::{Error, Result};
use crate::mix::{streams, unit_open};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotatorKind {
    SimulatedLlm,
    OracleHuman,
    InteractiveQueue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorSpec {
    pub kind: AnnotatorKind,
    /// Feature dimensions the simulated LLM cannot see.
    #[serde(default)]
    pub mask: BTreeSet<usize>,
    /// Scale of the logistic noise added to the simulated LLM's score.
    #[serde(default)]
    pub noise_scale: f64,
    /// Probability that the oracle human answers the wrong side.
    #[serde(default)]
    pub flip_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl AnnotatorSpec {
    pub fn simulated_llm(mask: impl IntoIterator<Item = usize>, noise_scale: f64, seed: u64) -> Self {
        Self {
            kind: AnnotatorKind::SimulatedLlm,
            mask: mask.into_iter().collect(),
            noise_scale,
            flip_rate: 0.0,
            seed,
        }
    }

    pub fn oracle_human(flip_rate: f64, seed: u64) -> Self {
        Self {
            kind: AnnotatorKind::OracleHuman,
            mask: BTreeSet::new(),
            noise_scale: 0.0,
            flip_rate,
            seed,
        }
    }

    pub fn interactive() -> Self {
        Self {
            kind: AnnotatorKind::InteractiveQueue,
            mask: BTreeSet::new(),
            noise_scale: 0.0,
            flip_rate: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::invalid("noise_scale", "must be non-negative"));
        }
        if !(0.0..0.5).contains(&self.flip_rate) {
            return Err(Error::invalid("flip_rate", "must lie in [0, 0.5)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchKind {
    /// Initial labeling of the shard.
    Initial,
    /// Small check on the top of the first curve.
    Probe,
    /// Targeted batch selected from the curve.
    Targeted,
}

/// Ids handed to an annotator in one request, in presentation order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationBatch {
    pub run_id: String,
    pub iteration: usize,
    pub kind: BatchKind,
    pub pair_ids: Vec<PairId>,
}

impl AnnotationBatch {
    pub fn new(iteration: usize, kind: BatchKind, pair_ids: Vec<PairId>) -> Self {
        Self {
            run_id: String::new(),
            iteration,
            kind,
            pair_ids,
        }
    }
}

pub trait Annotator: Send + Sync {
    fn annotate(&self, corpus: &Corpus, batch: &AnnotationBatch) -> Result<BTreeMap<PairId, Label>>;
}

fn check_ids(corpus: &Corpus, batch: &AnnotationBatch) -> Result<()> {
    let mut seen = BTreeSet::new();
    for &id in &batch.pair_ids {
        corpus.require(id)?;
        if !seen.insert(id) {
            return Err(Error::invalid("pair_ids", format!("duplicate id {id} in batch")));
        }
    }
    Ok(())
}

/// Labels by `sign(masked_weights . diff + noise)` with logistic noise drawn
/// per `(seed, id)`.
#[derive(Clone, Debug)]
pub struct SimulatedLlm {
    weights: Vec<f64>,
    noise_scale: f64,
    seed: u64,
}

impl SimulatedLlm {
    pub fn new(spec: &AnnotatorSpec, oracle: &OracleStore) -> Result<Self> {
        spec.validate()?;
        let d = oracle.true_weights().len();
        if let Some(&bad) = spec.mask.iter().find(|&&m| m >= d) {
            return Err(Error::invalid("mask", format!("dimension {bad} out of range (d = {d})")));
        }
        let weights = oracle
            .true_weights()
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &w)| if spec.mask.contains(&i) { 0.0 } else { w })
            .collect();
        Ok(Self {
            weights,
            noise_scale: spec.noise_scale,
            seed: spec.seed,
        })
    }

    fn noise(&self, id: PairId) -> f64 {
        if self.noise_scale == 0.0 {
            return 0.0;
        }
        let u = unit_open(self.seed, streams::LLM_NOISE, id);
        self.noise_scale * (u / (1.0 - u)).ln()
    }

    pub fn label_pair(&self, corpus: &Corpus, id: PairId) -> Result<Label> {
        let pair = corpus.require(id)?;
        Ok(Label::from_score(dot(&self.weights, &pair.diff()) + self.noise(id)))
    }
}

impl Annotator for SimulatedLlm {
    fn annotate(&self, corpus: &Corpus, batch: &AnnotationBatch) -> Result<BTreeMap<PairId, Label>> {
        check_ids(corpus, batch)?;
        batch
            .pair_ids
            .iter()
            .map(|&id| Ok((id, self.label_pair(corpus, id)?)))
            .collect()
    }
}

/// Returns the oracle label, flipped with probability `flip_rate` per id.
#[derive(Clone, Debug)]
pub struct OracleHuman {
    oracle: Arc<OracleStore>,
    flip_rate: f64,
    seed: u64,
}

impl OracleHuman {
    pub fn new(spec: &AnnotatorSpec, oracle: Arc<OracleStore>) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            oracle,
            flip_rate: spec.flip_rate,
            seed: spec.seed,
        })
    }

    pub fn label_pair(&self, id: PairId) -> Result<Label> {
        let truth = self.oracle.require(id)?;
        if self.flip_rate > 0.0 && unit_open(self.seed, streams::HUMAN_FLIP, id) < self.flip_rate {
            Ok(truth.flipped())
        } else {
            Ok(truth)
        }
    }
}

impl Annotator for OracleHuman {
    fn annotate(&self, corpus: &Corpus, batch: &AnnotationBatch) -> Result<BTreeMap<PairId, Label>> {
        check_ids(corpus, batch)?;
        batch
            .pair_ids
            .iter()
            .map(|&id| Ok((id, self.label_pair(id)?)))
            .collect()
    }
}

/// One-shot helper: build the annotator described by `spec` and label `ids`.
/// Interactive specs cannot be served this way; use [`AnnotationQueue`].
pub fn annotate(
    spec: &AnnotatorSpec,
    corpus: &Corpus,
    oracle: &OracleStore,
    ids: &[PairId],
) -> Result<BTreeMap<PairId, Label>> {
    let batch = AnnotationBatch::new(0, BatchKind::Initial, ids.to_vec());
    match spec.kind {
        AnnotatorKind::SimulatedLlm => SimulatedLlm::new(spec, oracle)?.annotate(corpus, &batch),
        AnnotatorKind::OracleHuman => {
            OracleHuman::new(spec, Arc::new(oracle.clone()))?.annotate(corpus, &batch)
        }
        AnnotatorKind::InteractiveQueue => Err(Error::invalid(
            "kind",
            "interactive annotation needs a live session",
        )),
    }
}

fn llm_agreement(llm: &SimulatedLlm, corpus: &Corpus, oracle: &OracleStore) -> Result<f64> {
    let mut hits = 0usize;
    for p in corpus.pairs() {
        if llm.label_pair(corpus, p.id)? == oracle.require(p.id)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / corpus.len() as f64)
}

/// Full-corpus agreement of a simulated LLM with the oracle.
pub fn measure_agreement(spec: &AnnotatorSpec, corpus: &Corpus, oracle: &OracleStore) -> Result<f64> {
    llm_agreement(&SimulatedLlm::new(spec, oracle)?, corpus, oracle)
}

pub const CALIBRATION_TOLERANCE: f64 = 0.005;

/// Binary-searches `noise_scale` so the simulated LLM agrees with the oracle
/// on `target_agreement` of the corpus (within ±0.5%).
pub fn calibrate_llm(
    spec: &AnnotatorSpec,
    corpus: &Corpus,
    oracle: &OracleStore,
    target_agreement: f64,
) -> Result<AnnotatorSpec> {
    if !(target_agreement > 0.5 && target_agreement < 1.0) {
        return Err(Error::invalid("target_agreement", "must lie in (0.5, 1)"));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut probe = AnnotatorSpec {
        kind: AnnotatorKind::SimulatedLlm,
        noise_scale: 0.0,
        ..spec.clone()
    };
    let cap = measure_agreement(&probe, corpus, oracle)?;
    if (cap - target_agreement).abs() <= CALIBRATION_TOLERANCE {
        return Ok(probe);
    }
    if cap < target_agreement {
        return Err(Error::UnreachableTarget {
            target: target_agreement,
            cap,
        });
    }

    let mut agreement_at = |scale: f64| -> Result<f64> {
        probe.noise_scale = scale;
        measure_agreement(&probe, corpus, oracle)
    };

    let mut lo = 0.0;
    let mut hi = 1.0;
    while agreement_at(hi)? > target_agreement {
        lo = hi;
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::UnreachableTarget {
                target: target_agreement,
                cap,
            });
        }
    }
    let mut best = (f64::INFINITY, hi);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let a = agreement_at(mid)?;
        if (a - target_agreement).abs() < best.0 {
            best = ((a - target_agreement).abs(), mid);
        }
        if a > target_agreement {
            lo = mid;
        } else {
            hi = mid;
        }
        if best.0 <= CALIBRATION_TOLERANCE / 4.0 {
            break;
        }
    }
    if best.0 > CALIBRATION_TOLERANCE {
        return Err(Error::UnreachableTarget {
            target: target_agreement,
            cap,
        });
    }
    Ok(AnnotatorSpec {
        noise_scale: best.1,
        ..probe
    })
}

// ---------------------------------------------------------------------------
// Interactive queue

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SubmitError {
    #[error("no annotation batch is open")]
    NoOpenBatch,
    #[error("batch for iteration {expected} is open, got iteration {got}")]
    WrongIteration { expected: usize, got: usize },
    #[error("pair {0} is not part of the open batch")]
    UnknownPair(PairId),
    #[error("pair {id} already labeled {existing}")]
    Conflict { id: PairId, existing: Label },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitAck {
    /// Labels newly recorded by this call.
    pub accepted: usize,
    pub remaining: usize,
    /// True when this call completed the batch.
    pub completed: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingView {
    pub batch: AnnotationBatch,
    /// Unanswered ids, in presentation order.
    pub pending: Vec<PairId>,
    pub submitted: usize,
}

#[derive(Debug)]
struct OpenBatch {
    batch: AnnotationBatch,
    answers: BTreeMap<PairId, Label>,
}

impl OpenBatch {
    fn remaining(&self) -> usize {
        self.batch.pair_ids.len() - self.answers.len()
    }
}

#[derive(Debug, Default)]
struct QueueState {
    open: Option<OpenBatch>,
    closed: bool,
    /// Answers recorded before their batch was posted (log replay).
    preloaded: HashMap<(usize, BatchKind, PairId), Label>,
}

/// Synchronization point between the engine (one producer, blocked while a
/// batch is open) and any number of submitters.
#[derive(Debug, Default)]
pub struct AnnotationQueue {
    state: Mutex<QueueState>,
    changed: Condvar,
    timeout: Option<Duration>,
}

impl AnnotationQueue {
    pub fn new(timeout: Option<Duration>) -> Self {
        Self {
            state: Mutex::default(),
            changed: Condvar::new(),
            timeout,
        }
    }

    /// Records an answer that will be applied when its batch is posted.
    pub fn preload(&self, iteration: usize, kind: BatchKind, id: PairId, label: Label) {
        self.state
            .lock()
            .unwrap()
            .preloaded
            .insert((iteration, kind, id), label);
    }

    pub fn view(&self) -> Option<PendingView> {
        let state = self.state.lock().unwrap();
        state.open.as_ref().map(|open| PendingView {
            batch: open.batch.clone(),
            pending: open
                .batch
                .pair_ids
                .iter()
                .copied()
                .filter(|id| !open.answers.contains_key(id))
                .collect(),
            submitted: open.answers.len(),
        })
    }

    /// Atomically records a set of answers: either all are accepted or none.
    pub fn submit(&self, iteration: usize, labels: &[(PairId, Label)]) -> Result<SubmitAck, SubmitError> {
        let mut state = self.state.lock().unwrap();
        let open = state.open.as_mut().ok_or(SubmitError::NoOpenBatch)?;
        if open.batch.iteration != iteration {
            return Err(SubmitError::WrongIteration {
                expected: open.batch.iteration,
                got: iteration,
            });
        }
        let mut staged: BTreeMap<PairId, Label> = BTreeMap::new();
        for &(id, label) in labels {
            if !open.batch.pair_ids.contains(&id) {
                return Err(SubmitError::UnknownPair(id));
            }
            let existing = open.answers.get(&id).or_else(|| staged.get(&id)).copied();
            match existing {
                Some(prev) if prev != label => {
                    return Err(SubmitError::Conflict { id, existing: prev });
                }
                Some(_) => {}
                None => {
                    staged.insert(id, label);
                }
            }
        }
        let accepted = staged.len();
        open.answers.extend(staged);
        let remaining = open.remaining();
        let completed = accepted > 0 && remaining == 0;
        if completed {
            self.changed.notify_all();
        }
        Ok(SubmitAck {
            accepted,
            remaining,
            completed,
        })
    }

    /// Wakes a blocked engine with [`Error::SessionClosed`].
    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.changed.notify_all();
    }

    /// Opens `batch`, applying any preloaded answers. Fails when the queue
    /// is closed or another batch is still open.
    pub fn post(&self, corpus: &Corpus, batch: &AnnotationBatch) -> Result<()> {
        check_ids(corpus, batch)?;
        let mut state = self.state.lock().unwrap();
        if state.closed {
            return Err(Error::SessionClosed);
        }
        if state.open.is_some() {
            return Err(Error::invalid("batch", "another batch is still open"));
        }
        let mut answers = BTreeMap::new();
        for &id in &batch.pair_ids {
            if let Some(label) = state.preloaded.remove(&(batch.iteration, batch.kind, id)) {
                answers.insert(id, label);
            }
        }
        state.open = Some(OpenBatch {
            batch: batch.clone(),
            answers,
        });
        self.changed.notify_all();
        Ok(())
    }

    /// Blocks until every id of the open batch is answered, then closes it.
    pub fn wait(&self) -> Result<BTreeMap<PairId, Label>> {
        let mut state = self.state.lock().unwrap();
        let deadline = self.timeout.map(|t| Instant::now() + t);
        loop {
            let open = state
                .open
                .as_ref()
                .ok_or_else(|| Error::invalid("batch", "no batch is open"))?;
            if open.remaining() == 0 {
                let done = state.open.take().expect("checked above");
                return Ok(done.answers);
            }
            if state.closed {
                state.open = None;
                return Err(Error::SessionClosed);
            }
            state = match deadline {
                None => self.changed.wait(state).unwrap(),
                Some(deadline) => {
                    let now = Instant::now();
                    if now >= deadline {
                        let remaining = open.remaining();
                        state.open = None;
                        return Err(Error::QueueTimeout { remaining });
                    }
                    self.changed.wait_timeout(state, deadline - now).unwrap().0
                }
            };
        }
    }

    /// Posts a batch and blocks until every id is answered.
    pub fn post_and_wait(&self, corpus: &Corpus, batch: &AnnotationBatch) -> Result<BTreeMap<PairId, Label>> {
        self.post(corpus, batch)?;
        self.wait()
    }
}

impl Annotator for Arc<AnnotationQueue> {
    fn annotate(&self, corpus: &Corpus, batch: &AnnotationBatch) -> Result<BTreeMap<PairId, Label>> {
        self.post_and_wait(corpus, batch)
    }
}
