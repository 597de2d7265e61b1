//! The iterative curation loop.
//!
//! A random shard is labeled by the (cheap) LLM annotator and a reward model
//! is trained on it. Each iteration then ranks the shard by reward gap,
//! sends a small batch starting at the reflection point to the human
//! annotator, flips the labels beyond the reflection point, and retrains on
//! the trusted left part of the curve plus the amplified human labels. The
//! final model relabels the whole corpus.
//!
//! The oracle never reaches the decision path: it is only visible to the
//! annotators and to [`Evaluator`].

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotate::{
    calibrate_llm, AnnotationBatch, Annotator, AnnotatorKind, AnnotatorSpec, BatchKind, OracleHuman,
    SimulatedLlm,
};
use crate::curve::{
    accuracy_density, build_curve, detect_landmarks, reflection_point, select_annotation_batch,
    validation_probe, DensityBin, DetectParams, Landmarks, ProbeResult, RewardCurve,
};
use crate::dataset::{shard, Corpus, Label, LabelEntry, LabelSource, OracleStore, Orientation, PairId};
use crate::error::{Error, Result};
use crate::mix::{hash3, streams, unit_open};
use crate::report::{content_hash, preference_accuracy};
use crate::reward::{train, RewardModel, TrainConfig, TrainedModel, TrainingRow};

const SHARD_STREAM: u64 = 0x0073_6861_7264;
const TRAIN_STREAM: u64 = 0x0074_7261_696e;
const RANDOM_STREAM: u64 = 0x7261_6e64_6f6d;

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub enabled: bool,
    pub fraction: f64,
    pub threshold: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            fraction: 0.001,
            threshold: 0.7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationConfig {
    pub shard_fraction: f64,
    pub iterations: usize,
    /// Amplification per iteration (1-based); later iterations use `alpha_after`.
    pub alpha_schedule: Vec<u32>,
    pub alpha_after: u32,
    /// Back-off per iteration (1-based); later iterations use `beta_after`.
    pub beta_schedule: Vec<f64>,
    pub beta_after: f64,
    /// Annotation batch as a fraction of the shard, per iteration.
    pub batch_fraction: f64,
    pub flips_enabled: bool,
    pub detect: DetectParams,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    /// Train a final model on the relabeled full corpus.
    pub train_final: bool,
    /// Held-out fraction when no separate test corpus is supplied.
    pub test_fraction: f64,
    pub density_bins: usize,
    pub seed: u64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            shard_fraction: 0.25,
            iterations: 5,
            alpha_schedule: vec![4, 4, 4, 2, 1],
            alpha_after: 1,
            beta_schedule: vec![0.60, 0.60, 0.60, 0.40, 0.20],
            beta_after: 0.10,
            batch_fraction: 0.04,
            flips_enabled: true,
            detect: DetectParams::default(),
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            train_final: true,
            test_fraction: 0.2,
            density_bins: 20,
            seed: 0,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.shard_fraction > 0.0 && self.shard_fraction <= 1.0) {
            return Err(Error::invalid("shard_fraction", "must lie in (0, 1]"));
        }
        for (field, alphas) in [("alpha_schedule", &self.alpha_schedule[..]), ("alpha_after", &[self.alpha_after][..])] {
            if alphas.iter().any(|&a| a < 1) {
                return Err(Error::invalid(field, "amplification must be an integer >= 1"));
            }
        }
        for (field, betas) in [("beta_schedule", &self.beta_schedule[..]), ("beta_after", &[self.beta_after][..])] {
            if betas.iter().any(|&b| !(0.0..1.0).contains(&b)) {
                return Err(Error::invalid(field, "back-off must lie in [0, 1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.batch_fraction) {
            return Err(Error::invalid("batch_fraction", "must lie in [0, 1]"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::invalid("test_fraction", "must lie in (0, 1)"));
        }
        if !(self.probe.fraction > 0.0 && self.probe.fraction <= 1.0) {
            return Err(Error::invalid("probe.fraction", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.probe.threshold) {
            return Err(Error::invalid("probe.threshold", "must lie in [0, 1]"));
        }
        if self.density_bins == 0 {
            return Err(Error::invalid("density_bins", "must be positive"));
        }
        self.detect.validate()?;
        self.train.validate()
    }

    /// Amplification for 1-based iteration `i`.
    pub fn alpha(&self, i: usize) -> u32 {
        self.alpha_schedule.get(i.wrapping_sub(1)).copied().unwrap_or(self.alpha_after)
    }

    /// Back-off for 1-based iteration `i`.
    pub fn beta(&self, i: usize) -> f64 {
        self.beta_schedule.get(i.wrapping_sub(1)).copied().unwrap_or(self.beta_after)
    }

    pub fn batch_size(&self, shard_len: usize) -> usize {
        (self.batch_fraction * shard_len as f64).round() as usize
    }

    fn shard_seed(&self) -> u64 {
        hash3(self.seed, SHARD_STREAM, 0)
    }

    /// Training config for the model produced at iteration `i`.
    pub fn train_config(&self, i: usize) -> TrainConfig {
        TrainConfig {
            seed: hash3(self.seed ^ self.train.seed, TRAIN_STREAM, i as u64),
            ..self.train.clone()
        }
    }
}

/// How the simulated LLM is set up for a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSetup {
    pub mask: BTreeSet<usize>,
    pub noise_scale: f64,
    /// When set, `noise_scale` is replaced by calibration against the corpus.
    pub target_agreement: Option<f64>,
    pub seed: u64,
}

impl Default for LlmSetup {
    fn default() -> Self {
        Self {
            mask: BTreeSet::new(),
            noise_scale: 0.0,
            target_agreement: None,
            seed: 0,
        }
    }
}

impl LlmSetup {
    pub fn spec(&self) -> AnnotatorSpec {
        AnnotatorSpec::simulated_llm(self.mask.iter().copied(), self.noise_scale, self.seed)
    }

    /// Resolves calibration; returns the spec the run will use.
    pub fn resolve(&self, corpus: &Corpus, oracle: &OracleStore) -> Result<AnnotatorSpec> {
        match self.target_agreement {
            Some(target) => calibrate_llm(&self.spec(), corpus, oracle, target),
            None => Ok(self.spec()),
        }
    }
}

/// The single JSON document the CLI and the service read.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub curation: CurationConfig,
    pub llm: LlmSetup,
    pub human: HumanSetup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HumanSetup {
    pub kind: AnnotatorKind,
    pub flip_rate: f64,
    pub seed: u64,
}

impl Default for HumanSetup {
    fn default() -> Self {
        Self {
            kind: AnnotatorKind::OracleHuman,
            flip_rate: 0.0,
            seed: 0,
        }
    }
}

impl HumanSetup {
    pub fn spec(&self) -> AnnotatorSpec {
        AnnotatorSpec {
            kind: self.kind,
            ..AnnotatorSpec::oracle_human(self.flip_rate, self.seed)
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.curation.validate()?;
        if let Some(t) = self.llm.target_agreement {
            if !(t > 0.5 && t < 1.0) {
                return Err(Error::invalid("llm.target_agreement", "must lie in (0.5, 1)"));
            }
        }
        if !(self.llm.noise_scale >= 0.0 && self.llm.noise_scale.is_finite()) {
            return Err(Error::invalid("llm.noise_scale", "must be non-negative"));
        }
        if self.human.kind == AnnotatorKind::SimulatedLlm {
            return Err(Error::invalid("human.kind", "human annotator cannot be a simulated LLM"));
        }
        if !(0.0..0.5).contains(&self.human.flip_rate) {
            return Err(Error::invalid("human.flip_rate", "must lie in [0, 0.5)"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Configured,
    LabelingInit,
    ProbePending,
    AwaitingAnnotation { iteration: usize },
    Training { iteration: usize },
    Completed,
    Failed { reason: String },
    MisalignedSeed,
}

impl RunStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(self, RunStatus::Completed | RunStatus::Failed { .. } | RunStatus::MisalignedSeed)
    }
}

/// Hooks for watching a run progress. All methods default to no-ops.
pub trait RunObserver: Send + Sync {
    fn status(&self, _status: &RunStatus) {}
    fn curve(&self, _iteration: usize, _curve: &RewardCurve) {}
    fn record(&self, _record: &IterationRecord) {}
    fn probe(&self, _probe: &ProbeResult) {}
}

pub struct NoopObserver;

impl RunObserver for NoopObserver {}

/// Test split plus oracle, used only to score runs.
pub struct Evaluator {
    test: Corpus,
    oracle: Arc<OracleStore>,
}

impl Evaluator {
    pub fn new(test: Corpus, oracle: Arc<OracleStore>) -> Result<Self> {
        if test.is_empty() {
            return Err(Error::invalid("test", "test corpus is empty"));
        }
        oracle.check_covers(&test)?;
        Ok(Self { test, oracle })
    }

    pub fn test_accuracy(&self, model: &RewardModel) -> Result<f64> {
        preference_accuracy(model, &self.test, &self.oracle)
    }

    pub fn label_accuracy(&self, orientation: &Orientation) -> f64 {
        orientation.agreement(&self.oracle)
    }

    /// Fraction of `labels` that disagree with the oracle.
    pub fn error_rate(&self, labels: impl IntoIterator<Item = (PairId, Label)>) -> Option<f64> {
        let mut n = 0usize;
        let mut wrong = 0usize;
        for (id, label) in labels {
            n += 1;
            if self.oracle.label(id) != Some(label) {
                wrong += 1;
            }
        }
        (n > 0).then(|| wrong as f64 / n as f64)
    }

    pub fn density(&self, curve: &RewardCurve, orientation: &Orientation, bins: usize) -> Result<Vec<DensityBin>> {
        accuracy_density(curve, orientation, &self.oracle, bins)
    }

    pub fn test_len(&self) -> usize {
        self.test.len()
    }

    pub fn oracle(&self) -> &OracleStore {
        &self.oracle
    }
}

/// Corpus, test split and oracle for one experiment.
pub struct RunInputs {
    pub pool: Corpus,
    pub evaluator: Evaluator,
}

impl RunInputs {
    /// Uses `test` when given, otherwise holds out `test_fraction` of the
    /// corpus by hashed id.
    pub fn new(corpus: Corpus, test: Option<Corpus>, oracle: Arc<OracleStore>, test_fraction: f64) -> Result<Self> {
        oracle.check_covers(&corpus)?;
        let (pool, test) = match test {
            Some(test) => {
                if let Some(p) = test.pairs().iter().find(|p| corpus.contains(p.id)) {
                    return Err(Error::invalid("test", format!("pair {} is in both corpus and test set", p.id)));
                }
                (corpus, test)
            }
            None => {
                let is_test = |id: PairId| unit_open(0, streams::TEST_SPLIT, id) < test_fraction;
                (corpus.filter(|p| !is_test(p.id)), corpus.filter(|p| is_test(p.id)))
            }
        };
        Ok(Self {
            pool,
            evaluator: Evaluator::new(test, oracle)?,
        })
    }
}

/// Labels every shard pair with the LLM annotator.
pub fn init_alignment(shard: &Corpus, llm: &dyn Annotator) -> Result<Orientation> {
    if shard.is_empty() {
        return Err(Error::invalid("shard", "cannot label an empty shard"));
    }
    let ids: Vec<PairId> = shard.ids().collect();
    let labels = llm.annotate(shard, &AnnotationBatch::new(0, BatchKind::Initial, ids.clone()))?;
    let mut out = Orientation::new();
    for id in ids {
        let label = *labels.get(&id).ok_or(Error::MissingLabel(id))?;
        out.set(id, LabelEntry { label, source: LabelSource::Llm })?;
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AssemblyDiagnostics {
    pub cutoff_idx: usize,
    /// Trusted left-of-cutoff ids.
    pub correct: Vec<PairId>,
    /// Human-labeled ids (amplified).
    pub human: Vec<PairId>,
    /// Ids whose labels were flipped.
    pub flipped: Vec<PairId>,
    /// Middle-region ids left out of training.
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assembly {
    pub rows: Vec<TrainingRow>,
    pub diagnostics: AssemblyDiagnostics,
}

/// Builds the next training set from a curve with landmarks.
///
/// * ranks `[0, cutoff]` with `cutoff = round((1 - beta) * knee)`, minus human
///   ids, keep their current labels (weight 1);
/// * ranks from the reflection point on, minus human ids, are flipped in
///   `orientation` (source `Flipped`) and trained with the new label
///   (weight 1), unless `flips_enabled` is false;
/// * every human label enters with weight `alpha` and is never used for
///   validation.
///
/// Everything else is left out.
pub fn assemble_next_training_set(
    curve: &RewardCurve,
    orientation: &mut Orientation,
    human_ledger: &BTreeMap<PairId, Label>,
    alpha: u32,
    beta: f64,
    flips_enabled: bool,
) -> Result<Assembly> {
    let lm = curve.landmarks();
    let knee = lm.knee_idx.ok_or_else(|| Error::invalid("knee_idx", "landmarks not set"))?;
    if lm.reflection_idx.is_none() {
        return Err(Error::invalid("reflection_idx", "landmarks not set"));
    }
    if alpha < 1 {
        return Err(Error::invalid("alpha", "must be >= 1"));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::invalid("beta", "must lie in [0, 1)"));
    }
    let cutoff = (((1.0 - beta) * knee as f64).round() as usize).min(curve.len().saturating_sub(1));
    let mut diag = AssemblyDiagnostics {
        cutoff_idx: cutoff,
        ..AssemblyDiagnostics::default()
    };
    let mut rows = Vec::with_capacity(curve.len());

    for r in &curve.ranked()[..=cutoff] {
        if human_ledger.contains_key(&r.pair_id) {
            continue;
        }
        rows.push(TrainingRow::new(r.pair_id, orientation.require(r.pair_id)?));
        diag.correct.push(r.pair_id);
    }

    let flip_range = if flips_enabled { curve.flip_range() } else { curve.len()..curve.len() };
    for r in &curve.ranked()[flip_range.clone()] {
        if human_ledger.contains_key(&r.pair_id) {
            continue;
        }
        let label = orientation.require(r.pair_id)?.flipped();
        orientation.set(r.pair_id, LabelEntry { label, source: LabelSource::Flipped })?;
        rows.push(TrainingRow::new(r.pair_id, label));
        diag.flipped.push(r.pair_id);
    }

    for (&id, &label) in human_ledger {
        rows.push(TrainingRow {
            holdout_eligible: false,
            ..TrainingRow::new(id, label).repeated(alpha)
        });
        diag.human.push(id);
    }

    let middle_start = cutoff + 1;
    let middle_end = flip_range.start.max(middle_start);
    diag.excluded = curve.ranked()[middle_start..middle_end]
        .iter()
        .filter(|r| !human_ledger.contains_key(&r.pair_id))
        .count();
    Ok(Assembly { rows, diagnostics: diag })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub requested: usize,
    pub selected: usize,
    pub exhausted: bool,
    pub leftmost_rank: Option<usize>,
    /// Share of the batch whose label was wrong before annotation.
    pub prior_error_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetCounts {
    pub cutoff_idx: usize,
    pub correct: usize,
    pub human: usize,
    pub flipped: usize,
    pub excluded: usize,
    /// Share of flipped ids whose label was wrong before the flip.
    pub flip_precision: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub alpha: Option<u32>,
    pub beta: Option<f64>,
    /// Landmarks of the curve built with this iteration's model.
    pub landmarks: Landmarks,
    pub fallback_used: bool,
    pub batch: Option<BatchStats>,
    pub counts: Option<SetCounts>,
    pub training_rows: usize,
    pub training_weight: f64,
    pub val_loss: f64,
    pub best_epoch: usize,
    pub shard_label_accuracy: f64,
    pub test_accuracy: f64,
    pub annotation_spend: usize,
}

/// Mutable state of a run between iterations.
#[derive(Clone, Debug)]
pub struct RunState {
    pub shard: Corpus,
    pub orientation: Orientation,
    pub human_ledger: BTreeMap<PairId, Label>,
    /// Index of the latest model.
    pub iteration: usize,
    pub models: Vec<RewardModel>,
    /// Curve (with landmarks) of each model over the shard.
    pub curves: Vec<RewardCurve>,
    /// Labels each curve was built with.
    pub snapshots: Vec<Orientation>,
    pub records: Vec<IterationRecord>,
}

impl RunState {
    pub fn current_model(&self) -> &RewardModel {
        self.models.last().expect("state always holds the iteration-0 model")
    }

    pub fn current_curve(&self) -> &RewardCurve {
        self.curves.last().expect("state always holds the iteration-0 curve")
    }

    pub fn spend(&self) -> usize {
        self.human_ledger.len()
    }
}

fn curve_with_landmarks(model: &RewardModel, shard: &Corpus, orientation: &Orientation, detect: &DetectParams) -> Result<RewardCurve> {
    let curve = build_curve(model, shard, orientation)?;
    reflection_point(detect_landmarks(curve, detect)?)
}

fn all_rows(orientation: &Orientation) -> Vec<TrainingRow> {
    orientation.iter().map(|(id, e)| TrainingRow::new(id, e.label)).collect()
}

fn train_logged(corpus: &Corpus, rows: &[TrainingRow], config: &TrainConfig) -> Result<TrainedModel> {
    let trained = train(corpus, rows, config)?;
    debug!(
        "trained on {} rows: best epoch {} val loss {:.5}",
        rows.len(),
        trained.best_epoch,
        trained.best_val_loss
    );
    Ok(trained)
}

/// Labels the shard, trains the iteration-0 model and builds its curve.
pub fn start_run(
    shard: Corpus,
    config: &CurationConfig,
    llm: &dyn Annotator,
    evaluator: &Evaluator,
    observer: &dyn RunObserver,
) -> Result<RunState> {
    observer.status(&RunStatus::LabelingInit);
    let orientation = init_alignment(&shard, llm)?;
    observer.status(&RunStatus::Training { iteration: 0 });
    let rows = all_rows(&orientation);
    let trained = train_logged(&shard, &rows, &config.train_config(0))?;
    let curve = curve_with_landmarks(&trained.model, &shard, &orientation, &config.detect)?;
    observer.curve(0, &curve);
    let record = IterationRecord {
        iteration: 0,
        alpha: None,
        beta: None,
        landmarks: curve.landmarks(),
        fallback_used: curve.landmarks().fallback_used,
        batch: None,
        counts: None,
        training_rows: rows.len(),
        training_weight: rows.len() as f64,
        val_loss: trained.best_val_loss,
        best_epoch: trained.best_epoch,
        shard_label_accuracy: evaluator.label_accuracy(&orientation),
        test_accuracy: evaluator.test_accuracy(&trained.model)?,
        annotation_spend: 0,
    };
    info!(
        "iteration 0: shard label accuracy {:.4}, test accuracy {:.4}",
        record.shard_label_accuracy, record.test_accuracy
    );
    observer.record(&record);
    Ok(RunState {
        shard,
        snapshots: vec![orientation.clone()],
        orientation,
        human_ledger: BTreeMap::new(),
        iteration: 0,
        models: vec![trained.model],
        curves: vec![curve],
        records: vec![record],
    })
}

/// One targeted iteration: annotate, flip, assemble, retrain, evaluate.
pub fn run_iteration(
    state: &mut RunState,
    config: &CurationConfig,
    human: &dyn Annotator,
    evaluator: &Evaluator,
    observer: &dyn RunObserver,
) -> Result<()> {
    let i = state.iteration + 1;
    let curve = state.current_curve().clone();

    // annotation batch, walking left from the reflection point
    let requested = config.batch_size(state.shard.len());
    let human_ids: BTreeSet<PairId> = state.human_ledger.keys().copied().collect();
    let selection = select_annotation_batch(&curve, requested, &human_ids)?;
    let prior_error_rate = evaluator.error_rate(
        selection
            .pair_ids
            .iter()
            .map(|&id| Ok((id, state.orientation.require(id)?)))
            .collect::<Result<Vec<_>>>()?,
    );
    if !selection.pair_ids.is_empty() {
        observer.status(&RunStatus::AwaitingAnnotation { iteration: i });
        let batch = AnnotationBatch::new(i, BatchKind::Targeted, selection.pair_ids.clone());
        let answers = human.annotate(&state.shard, &batch)?;
        for &id in &selection.pair_ids {
            let label = *answers.get(&id).ok_or(Error::MissingLabel(id))?;
            state.orientation.set(id, LabelEntry { label, source: LabelSource::Human })?;
            state.human_ledger.insert(id, label);
        }
    }
    if selection.exhausted {
        info!("iteration {i}: annotation walk exhausted the curve ({} of {requested})", selection.pair_ids.len());
    }

    let alpha = config.alpha(i);
    let beta = config.beta(i);
    let before_flip = state.orientation.clone();
    let assembly = assemble_next_training_set(
        &curve,
        &mut state.orientation,
        &state.human_ledger,
        alpha,
        beta,
        config.flips_enabled,
    )?;
    let flip_precision = evaluator.error_rate(
        assembly
            .diagnostics
            .flipped
            .iter()
            .map(|&id| (id, before_flip.label(id).expect("flipped ids are labeled"))),
    );

    observer.status(&RunStatus::Training { iteration: i });
    let trained = train_logged(&state.shard, &assembly.rows, &config.train_config(i))?;
    let next_curve = curve_with_landmarks(&trained.model, &state.shard, &state.orientation, &config.detect)?;
    observer.curve(i, &next_curve);

    let diag = &assembly.diagnostics;
    let record = IterationRecord {
        iteration: i,
        alpha: Some(alpha),
        beta: Some(beta),
        landmarks: next_curve.landmarks(),
        fallback_used: next_curve.landmarks().fallback_used,
        batch: Some(BatchStats {
            requested,
            selected: selection.pair_ids.len(),
            exhausted: selection.exhausted,
            leftmost_rank: selection.leftmost_rank,
            prior_error_rate,
        }),
        counts: Some(SetCounts {
            cutoff_idx: diag.cutoff_idx,
            correct: diag.correct.len(),
            human: diag.human.len(),
            flipped: diag.flipped.len(),
            excluded: diag.excluded,
            flip_precision,
        }),
        training_rows: assembly.rows.len(),
        training_weight: assembly.rows.iter().map(|r| r.weight).sum(),
        val_loss: trained.best_val_loss,
        best_epoch: trained.best_epoch,
        shard_label_accuracy: evaluator.label_accuracy(&state.orientation),
        test_accuracy: evaluator.test_accuracy(&trained.model)?,
        annotation_spend: state.human_ledger.len(),
    };
    info!(
        "iteration {i}: batch {} flipped {} kept {} | shard acc {:.4} test acc {:.4}",
        selection.pair_ids.len(),
        diag.flipped.len(),
        diag.correct.len(),
        record.shard_label_accuracy,
        record.test_accuracy
    );
    observer.record(&record);
    state.models.push(trained.model);
    state.curves.push(next_curve);
    state.snapshots.push(state.orientation.clone());
    state.records.push(record);
    state.iteration = i;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Targeted,
    AiOnly,
    Random,
    FullHuman,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalStatus {
    Completed,
    MisalignedSeed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalSummary {
    /// Test accuracy of the last iteration's model.
    pub model_test_accuracy: f64,
    /// Agreement of the relabeled full corpus with the oracle.
    pub corpus_label_accuracy: Option<f64>,
    /// Test accuracy of the model trained on the relabeled corpus, if any.
    pub final_model_test_accuracy: Option<f64>,
    pub annotation_spend: usize,
    /// Spend as a percentage of the full corpus.
    pub annotation_percent: f64,
}

impl FinalSummary {
    /// The headline accuracy: final model if trained, otherwise last iteration's.
    pub fn test_accuracy(&self) -> f64 {
        self.final_model_test_accuracy.unwrap_or(self.model_test_accuracy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub kind: RunKind,
    pub status: FinalStatus,
    pub config: RunConfig,
    /// LLM spec actually used (after calibration).
    pub llm_spec: Option<AnnotatorSpec>,
    pub pool_size: usize,
    pub shard_size: usize,
    pub test_size: usize,
    pub probe: Option<ProbeResult>,
    pub records: Vec<IterationRecord>,
    pub summary: FinalSummary,
    /// Relative paths written by `export_report`.
    pub artifacts: Vec<String>,
    pub content_hash: String,
}

impl RunReport {
    pub fn seal(mut self) -> Self {
        self.content_hash = String::new();
        self.content_hash = content_hash(&self);
        self
    }

    /// Gain over iteration 0 in accuracy points per percent of the corpus annotated.
    pub fn roi(&self) -> Option<f64> {
        let first = self.records.first()?.test_accuracy;
        crate::report::roi(100.0 * (self.summary.test_accuracy() - first), self.summary.annotation_percent).ok()
    }
}

/// Everything a run produced, including artifacts too large for the report.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub curves: Vec<RewardCurve>,
    pub densities: Vec<Vec<DensityBin>>,
    pub final_labels: Option<Orientation>,
    pub models: Vec<RewardModel>,
    pub final_model: Option<RewardModel>,
}

fn artifact_names(records: usize, has_labels: bool) -> Vec<String> {
    let mut names = vec!["report.json".to_string(), "metrics.csv".to_string()];
    for i in 0..records {
        names.push(format!("curves/iter_{i}.csv"));
        names.push(format!("curves/iter_{i}.json"));
        names.push(format!("density/iter_{i}.csv"));
    }
    if has_labels {
        names.push("labels.jsonl".to_string());
    }
    names.push("content_hash.txt".to_string());
    names
}

/// Labels every pool pair with `model` (tie -> A), keeping shard human labels.
pub fn relabel_corpus(model: &RewardModel, pool: &Corpus, state: &RunState) -> Result<Orientation> {
    let mut out = Orientation::new();
    for p in pool.pairs() {
        let entry = match state.human_ledger.get(&p.id) {
            Some(&label) => LabelEntry { label, source: LabelSource::Human },
            None => LabelEntry {
                label: Label::from_score(model.pair_gap(p, Label::A)?),
                source: LabelSource::Model,
            },
        };
        out.set(p.id, entry)?;
    }
    Ok(out)
}

fn annotation_percent(spend: usize, pool: usize) -> f64 {
    if pool == 0 {
        0.0
    } else {
        100.0 * spend as f64 / pool as f64
    }
}

/// The full loop: shard, LLM labels, probe, `iterations` targeted
/// iterations, full-corpus relabel and optional final model.
#[allow(clippy::too_many_arguments)]
pub fn run_curation(
    inputs: &RunInputs,
    config: &RunConfig,
    llm: &dyn Annotator,
    llm_spec: Option<AnnotatorSpec>,
    human: &dyn Annotator,
    observer: &dyn RunObserver,
) -> Result<RunOutcome> {
    config.validate()?;
    let cfg = &config.curation;
    let ev = &inputs.evaluator;
    let shard_corpus = shard(&inputs.pool, cfg.shard_fraction, cfg.shard_seed())?;
    let shard_size = shard_corpus.len();
    let mut state = start_run(shard_corpus, cfg, llm, ev, observer)?;

    let mut probe = None;
    let mut status = FinalStatus::Completed;
    if cfg.probe.enabled {
        observer.status(&RunStatus::ProbePending);
        let result = validation_probe(
            state.current_curve(),
            &state.shard,
            &state.orientation,
            human,
            cfg.probe.fraction,
            cfg.probe.threshold,
        )?;
        observer.probe(&result);
        info!("validation probe: agreement {:.3} (pass = {})", result.agreement, result.pass);
        if !result.pass {
            status = FinalStatus::MisalignedSeed;
        }
        probe = Some(result);
    }

    if status == FinalStatus::Completed {
        for _ in 0..cfg.iterations {
            run_iteration(&mut state, cfg, human, ev, observer)?;
        }
    }

    let densities = state
        .curves
        .iter()
        .zip(&state.snapshots)
        .map(|(curve, labels)| ev.density(curve, labels, cfg.density_bins))
        .collect::<Result<Vec<_>>>()?;

    let last = state.current_model().clone();
    let model_test_accuracy = ev.test_accuracy(&last)?;
    let (final_labels, final_model, corpus_label_accuracy, final_model_test_accuracy) =
        if status == FinalStatus::Completed {
            let labels = relabel_corpus(&last, &inputs.pool, &state)?;
            let acc = ev.label_accuracy(&labels);
            let (model, model_acc) = if cfg.train_final {
                let trained = train_logged(&inputs.pool, &all_rows(&labels), &cfg.train_config(usize::MAX))?;
                let a = ev.test_accuracy(&trained.model)?;
                (Some(trained.model), Some(a))
            } else {
                (None, None)
            };
            (Some(labels), model, Some(acc), model_acc)
        } else {
            (None, None, None, None)
        };

    let spend = state.spend();
    let kind = if cfg.iterations == 0 { RunKind::AiOnly } else { RunKind::Targeted };
    let report = RunReport {
        version: REPORT_VERSION,
        kind,
        status,
        config: config.clone(),
        llm_spec,
        pool_size: inputs.pool.len(),
        shard_size,
        test_size: ev.test_len(),
        probe,
        artifacts: artifact_names(state.records.len(), final_labels.is_some()),
        records: state.records.clone(),
        summary: FinalSummary {
            model_test_accuracy,
            corpus_label_accuracy,
            final_model_test_accuracy,
            annotation_spend: spend,
            annotation_percent: annotation_percent(spend, inputs.pool.len()),
        },
        content_hash: String::new(),
    }
    .seal();
    observer.status(&match status {
        FinalStatus::Completed => RunStatus::Completed,
        FinalStatus::MisalignedSeed => RunStatus::MisalignedSeed,
    });
    Ok(RunOutcome {
        report,
        curves: state.curves,
        densities,
        final_labels,
        models: state.models,
        final_model,
    })
}

/// Builds the simulated annotators for `config` and runs the loop.
pub fn run_simulated(inputs: &RunInputs, config: &RunConfig, observer: &dyn RunObserver) -> Result<RunOutcome> {
    config.validate()?;
    let oracle = inputs.evaluator.oracle();
    let llm_spec = config.llm.resolve(&inputs.pool, oracle)?;
    let llm = SimulatedLlm::new(&llm_spec, oracle)?;
    let human_spec = config.human.spec();
    if human_spec.kind != AnnotatorKind::OracleHuman {
        return Err(Error::invalid("human.kind", "simulated runs need an oracle human"));
    }
    let human = OracleHuman::new(&human_spec, Arc::new(oracle.clone()))?;
    run_curation(inputs, config, &llm, Some(llm_spec), &human, observer)
}

/// Cumulative spend a targeted run would reach after each iteration,
/// assuming no exhaustion.
pub fn planned_spend(config: &CurationConfig, shard_len: usize) -> Vec<usize> {
    let batch = config.batch_size(shard_len);
    (0..=config.iterations).map(|i| (i * batch).min(shard_len)).collect()
}

/// Baselines sharing the targeted run's shard, LLM labels and seeds.
///
/// * `AiOnly`: the loop with zero iterations.
/// * `Random`: for each entry of `matched_spend` (cumulative, iteration 0
///   first) a uniformly random prefix of the shard gets human labels and a
///   model is trained on the shard; defaults to [`planned_spend`].
/// * `FullHuman`: the human annotator labels the whole pool.
pub fn run_baseline(
    kind: RunKind,
    inputs: &RunInputs,
    config: &RunConfig,
    matched_spend: Option<&[usize]>,
) -> Result<RunOutcome> {
    config.validate()?;
    let cfg = &config.curation;
    let ev = &inputs.evaluator;
    let oracle = Arc::new(ev.oracle().clone());
    let human = OracleHuman::new(&config.human.spec(), Arc::clone(&oracle))?;
    match kind {
        RunKind::Targeted => run_simulated(inputs, config, &NoopObserver),
        RunKind::AiOnly => {
            let mut ai = config.clone();
            ai.curation.iterations = 0;
            run_simulated(inputs, &ai, &NoopObserver)
        }
        RunKind::FullHuman => {
            let ids: Vec<PairId> = inputs.pool.ids().collect();
            let labels = human.annotate(&inputs.pool, &AnnotationBatch::new(0, BatchKind::Initial, ids))?;
            let orientation = Orientation::from_labels(labels, LabelSource::Human);
            let trained = train_logged(&inputs.pool, &all_rows(&orientation), &cfg.train_config(0))?;
            let acc = ev.test_accuracy(&trained.model)?;
            let record = IterationRecord {
                iteration: 0,
                alpha: None,
                beta: None,
                landmarks: Landmarks::default(),
                fallback_used: false,
                batch: None,
                counts: None,
                training_rows: orientation.len(),
                training_weight: orientation.len() as f64,
                val_loss: trained.best_val_loss,
                best_epoch: trained.best_epoch,
                shard_label_accuracy: ev.label_accuracy(&orientation),
                test_accuracy: acc,
                annotation_spend: orientation.len(),
            };
            let report = RunReport {
                version: REPORT_VERSION,
                kind,
                status: FinalStatus::Completed,
                config: config.clone(),
                llm_spec: None,
                pool_size: inputs.pool.len(),
                shard_size: inputs.pool.len(),
                test_size: ev.test_len(),
                probe: None,
                artifacts: vec!["report.json".into(), "metrics.csv".into(), "labels.jsonl".into(), "content_hash.txt".into()],
                records: vec![record],
                summary: FinalSummary {
                    model_test_accuracy: acc,
                    corpus_label_accuracy: Some(ev.label_accuracy(&orientation)),
                    final_model_test_accuracy: None,
                    annotation_spend: orientation.len(),
                    annotation_percent: 100.0,
                },
                content_hash: String::new(),
            }
            .seal();
            Ok(RunOutcome {
                report,
                curves: vec![],
                densities: vec![],
                final_labels: Some(orientation),
                models: vec![trained.model.clone()],
                final_model: Some(trained.model),
            })
        }
        RunKind::Random => {
            let llm_spec = config.llm.resolve(&inputs.pool, &oracle)?;
            let llm = SimulatedLlm::new(&llm_spec, &oracle)?;
            let shard_corpus = shard(&inputs.pool, cfg.shard_fraction, cfg.shard_seed())?;
            let llm_labels = init_alignment(&shard_corpus, &llm)?;
            let budgets = match matched_spend {
                Some(b) => b.to_vec(),
                None => planned_spend(cfg, shard_corpus.len()),
            };
            let mut order: Vec<PairId> = shard_corpus.ids().collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(hash3(cfg.seed, RANDOM_STREAM, 0)));
            let all_ids: Vec<PairId> = order.clone();
            let human_all = human.annotate(&shard_corpus, &AnnotationBatch::new(0, BatchKind::Targeted, all_ids))?;

            let mut records = Vec::with_capacity(budgets.len());
            let mut models = Vec::with_capacity(budgets.len());
            for (i, &budget) in budgets.iter().enumerate() {
                let budget = budget.min(order.len());
                let mut orientation = llm_labels.clone();
                for &id in &order[..budget] {
                    orientation.set(id, LabelEntry { label: human_all[&id], source: LabelSource::Human })?;
                }
                let trained = train_logged(&shard_corpus, &all_rows(&orientation), &cfg.train_config(i))?;
                records.push(IterationRecord {
                    iteration: i,
                    alpha: None,
                    beta: None,
                    landmarks: Landmarks::default(),
                    fallback_used: false,
                    batch: None,
                    counts: None,
                    training_rows: orientation.len(),
                    training_weight: orientation.len() as f64,
                    val_loss: trained.best_val_loss,
                    best_epoch: trained.best_epoch,
                    shard_label_accuracy: ev.label_accuracy(&orientation),
                    test_accuracy: ev.test_accuracy(&trained.model)?,
                    annotation_spend: budget,
                });
                models.push(trained.model);
            }
            let last = records.last().expect("at least one budget");
            let spend = last.annotation_spend;
            let report = RunReport {
                version: REPORT_VERSION,
                kind,
                status: FinalStatus::Completed,
                config: config.clone(),
                llm_spec: Some(llm_spec),
                pool_size: inputs.pool.len(),
                shard_size: shard_corpus.len(),
                test_size: ev.test_len(),
                probe: None,
                artifacts: vec!["report.json".into(), "metrics.csv".into(), "content_hash.txt".into()],
                summary: FinalSummary {
                    model_test_accuracy: last.test_accuracy,
                    corpus_label_accuracy: None,
                    final_model_test_accuracy: None,
                    annotation_spend: spend,
                    annotation_percent: annotation_percent(spend, inputs.pool.len()),
                },
                records,
                content_hash: String::new(),
            }
            .seal();
            Ok(RunOutcome {
                report,
                curves: vec![],
                densities: vec![],
                final_labels: None,
                final_model: models.last().cloned(),
                models,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseResult {
    pub labels: BTreeMap<PairId, Label>,
    pub flipped: Vec<PairId>,
}

impl DenoiseResult {
    pub fn flip_count(&self) -> usize {
        self.flipped.len()
    }
}

/// Trains a model on `labels` and flips every label whose reward gap under
/// that model is negative.
pub fn denoise_flip(corpus: &Corpus, labels: &BTreeMap<PairId, Label>, config: &TrainConfig) -> Result<DenoiseResult> {
    for p in corpus.pairs() {
        if !labels.contains_key(&p.id) {
            return Err(Error::MissingLabel(p.id));
        }
    }
    let rows: Vec<TrainingRow> = corpus.ids().map(|id| TrainingRow::new(id, labels[&id])).collect();
    let model = train(corpus, &rows, config)?.model;
    let mut out = labels.clone();
    let mut flipped = Vec::new();
    for p in corpus.pairs() {
        let label = labels[&p.id];
        if model.pair_gap(p, label)? < 0.0 {
            out.insert(p.id, label.flipped());
            flipped.push(p.id);
        }
    }
    Ok(DenoiseResult { labels: out, flipped })
}

/// Flips each label independently with probability `rate` (per `(seed, id)`).
pub fn inject_symmetric_noise(labels: &BTreeMap<PairId, Label>, rate: f64, seed: u64) -> BTreeMap<PairId, Label> {
    labels
        .iter()
        .map(|(&id, &l)| {
            let flip = unit_open(seed, streams::NOISE_INJECT, id) < rate;
            (id, if flip { l.flipped() } else { l })
        })
        .collect()
}
