//! Preference pairs, label vectors and the synthetic corpus generator.
//!
//! A completion is represented only by its feature vector; the optional text
//! fields exist for display in the annotation console and are never read by
//! the numerical code.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub type PairId = u64;

/// Minimum number of pairs a shard may contain.
pub const MIN_SHARD: usize = 10;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "features",
                format!("entry {pos} is not finite"),
            ));
        }
        Ok(Self(values))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Which side of a pair is preferred. `A` corresponds to lambda = +1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    A,
    B,
}

impl Label {
    /// Sign convention: +1 means side A is chosen. Zero resolves to `A`.
    pub fn from_score(score: f64) -> Self {
        if score >= 0.0 {
            Label::A
        } else {
            Label::B
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Label::A => 1.0,
            Label::B => -1.0,
        }
    }

    pub fn lambda(self) -> i8 {
        match self {
            Label::A => 1,
            Label::B => -1,
        }
    }

    pub fn from_lambda(lambda: i8) -> Result<Self> {
        match lambda {
            1 => Ok(Label::A),
            -1 => Ok(Label::B),
            other => Err(Error::invalid("lambda", format!("{other} is not ±1"))),
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::A => Label::B,
            Label::B => Label::A,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::A => "a",
            Label::B => "b",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Llm,
    Human,
    Flipped,
    Model,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub label: Label,
    pub source: LabelSource,
}

/// Per-pair preference labels with provenance.
///
/// Human-sourced entries are write-once: any attempt to change their label
/// is rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    entries: BTreeMap<PairId, LabelEntry>,
}

impl Orientation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels(
        labels: impl IntoIterator<Item = (PairId, Label)>,
        source: LabelSource,
    ) -> Self {
        Self {
            entries: labels
                .into_iter()
                .map(|(id, label)| (id, LabelEntry { label, source }))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: PairId) -> Option<LabelEntry> {
        self.entries.get(&id).copied()
    }

    pub fn label(&self, id: PairId) -> Option<Label> {
        self.entries.get(&id).map(|e| e.label)
    }

    pub fn require(&self, id: PairId) -> Result<Label> {
        self.label(id).ok_or(Error::MissingLabel(id))
    }

    pub fn is_human(&self, id: PairId) -> bool {
        matches!(self.get(id), Some(e) if e.source == LabelSource::Human)
    }

    /// Set a label. Overwriting a human label with a different value fails;
    /// re-asserting the same human label is a no-op.
    pub fn set(&mut self, id: PairId, entry: LabelEntry) -> Result<()> {
        if let Some(existing) = self.entries.get(&id) {
            if existing.source == LabelSource::Human {
                if entry.source == LabelSource::Human && entry.label == existing.label {
                    return Ok(());
                }
                return Err(Error::invalid(
                    "orientation",
                    format!("pair {id} carries an immutable human label"),
                ));
            }
        }
        self.entries.insert(id, entry);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (PairId, LabelEntry)> + '_ {
        self.entries.iter().map(|(&id, &e)| (id, e))
    }

    pub fn labels(&self) -> BTreeMap<PairId, Label> {
        self.entries.iter().map(|(&id, e)| (id, e.label)).collect()
    }

    /// Every label negated, sources kept.
    pub fn negated(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(&id, e)| {
                    (
                        id,
                        LabelEntry {
                            label: e.label.flipped(),
                            source: e.source,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn count_source(&self, source: LabelSource) -> usize {
        self.entries.values().filter(|e| e.source == source).count()
    }

    /// Fraction of entries whose label matches the oracle.
    pub fn agreement(&self, oracle: &OracleStore) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        let hits = self
            .entries
            .iter()
            .filter(|(id, e)| oracle.label(**id) == Some(e.label))
            .count();
        hits as f64 / self.entries.len() as f64
    }
}

/// Ground-truth labels and the generator weights. Only annotators and
/// evaluators read this.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleStore {
    labels: BTreeMap<PairId, Label>,
    true_weights: FeatureVector,
}

impl OracleStore {
    pub fn new(labels: BTreeMap<PairId, Label>, true_weights: FeatureVector) -> Self {
        Self {
            labels,
            true_weights,
        }
    }

    pub fn label(&self, id: PairId) -> Option<Label> {
        self.labels.get(&id).copied()
    }

    pub fn require(&self, id: PairId) -> Result<Label> {
        self.label(id).ok_or(Error::MissingOracle(id))
    }

    pub fn true_weights(&self) -> &FeatureVector {
        &self.true_weights
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PairId, Label)> + '_ {
        self.labels.iter().map(|(&id, &l)| (id, l))
    }

    /// Fails with the first corpus id (in corpus order) that has no label.
    pub fn check_covers(&self, corpus: &Corpus) -> Result<()> {
        match corpus.pairs().iter().find(|p| !self.labels.contains_key(&p.id)) {
            Some(p) => Err(Error::MissingOracle(p.id)),
            None => Ok(()),
        }
    }

    pub fn merged(mut self, other: &OracleStore) -> Self {
        self.labels.extend(other.labels.iter().map(|(&k, &v)| (k, v)));
        self
    }
}

/// Unknown JSON fields carried through read/write untouched.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Passthrough {
    pub pair: Map<String, Value>,
    pub a: Map<String, Value>,
    pub b: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreferencePair {
    pub id: PairId,
    pub features_a: FeatureVector,
    pub features_b: FeatureVector,
    pub text_a: Option<String>,
    pub text_b: Option<String>,
    pub prompt: Option<String>,
    pub passthrough: Passthrough,
}

impl PreferencePair {
    pub fn new(id: PairId, features_a: FeatureVector, features_b: FeatureVector) -> Self {
        Self {
            id,
            features_a,
            features_b,
            text_a: None,
            text_b: None,
            prompt: None,
            passthrough: Passthrough::default(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.features_a.len()
    }

    /// `features_a - features_b`.
    pub fn diff(&self) -> Vec<f64> {
        self.features_a
            .as_slice()
            .iter()
            .zip(self.features_b.as_slice())
            .map(|(a, b)| a - b)
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pairs: Vec<PreferencePair>,
    dimension: usize,
    index: HashMap<PairId, usize>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.dimension == other.dimension && self.pairs == other.pairs
    }
}

impl Corpus {
    pub fn new(pairs: Vec<PreferencePair>, dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::invalid("dimension", "must be positive"));
        }
        let mut index = HashMap::with_capacity(pairs.len());
        for (pos, p) in pairs.iter().enumerate() {
            for side in [&p.features_a, &p.features_b] {
                if side.len() != dimension {
                    return Err(Error::DimensionMismatch {
                        expected: dimension,
                        actual: side.len(),
                        line: None,
                    });
                }
            }
            if index.insert(p.id, pos).is_some() {
                return Err(Error::invalid("id", format!("duplicate pair id {}", p.id)));
            }
        }
        Ok(Self {
            pairs,
            dimension,
            index,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[PreferencePair] {
        &self.pairs
    }

    pub fn ids(&self) -> impl Iterator<Item = PairId> + '_ {
        self.pairs.iter().map(|p| p.id)
    }

    pub fn contains(&self, id: PairId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn get(&self, id: PairId) -> Option<&PreferencePair> {
        self.index.get(&id).map(|&i| &self.pairs[i])
    }

    pub fn require(&self, id: PairId) -> Result<&PreferencePair> {
        self.get(id).ok_or(Error::UnknownId(id))
    }

    /// Pairs with the given ids, in the order given.
    pub fn subset(&self, ids: &[PairId]) -> Result<Corpus> {
        let pairs = ids
            .iter()
            .map(|&id| self.require(id).cloned())
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(pairs, self.dimension)
    }

    /// Pairs for which `keep` returns true, in corpus order.
    pub fn filter(&self, mut keep: impl FnMut(&PreferencePair) -> bool) -> Corpus {
        let pairs: Vec<_> = self.pairs.iter().filter(|p| keep(p)).cloned().collect();
        Corpus::new(pairs, self.dimension).expect("subset of a valid corpus is valid")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n: usize,
    pub dimension: usize,
    pub nuance_dims: usize,
    pub hard_fraction: f64,
    pub seed: u64,
    /// Magnitude of the nuance weights relative to the main weights.
    #[serde(default = "default_nuance_weight")]
    pub nuance_weight: f64,
}

fn default_nuance_weight() -> f64 {
    1.0
}

impl SynthParams {
    pub fn new(n: usize, dimension: usize, nuance_dims: usize, hard_fraction: f64, seed: u64) -> Self {
        Self {
            n,
            dimension,
            nuance_dims,
            hard_fraction,
            seed,
            nuance_weight: default_nuance_weight(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("n", "need at least 2 pairs"));
        }
        if self.nuance_dims == 0 || self.nuance_dims >= self.dimension {
            return Err(Error::invalid(
                "nuance_dims",
                format!("need 1 <= nuance_dims < d (d = {})", self.dimension),
            ));
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            return Err(Error::invalid("hard_fraction", "must lie in [0, 1]"));
        }
        if !(self.nuance_weight > 0.0 && self.nuance_weight.is_finite()) {
            return Err(Error::invalid("nuance_weight", "must be positive"));
        }
        Ok(())
    }

    /// Indices of the nuance dimensions (the trailing `nuance_dims`).
    pub fn nuance_range(&self) -> std::ops::Range<usize> {
        self.dimension - self.nuance_dims..self.dimension
    }
}

const MAX_REJECTIONS: usize = 100_000;

/// A pair is nuance-decided when zeroing the nuance dimensions of the true
/// weights changes the oracle label.
pub fn is_nuance_decided(weights: &[f64], nuance: std::ops::Range<usize>, diff: &[f64]) -> bool {
    let full = dot(weights, diff);
    let main: f64 = weights
        .iter()
        .zip(diff)
        .enumerate()
        .filter(|(i, _)| !nuance.contains(i))
        .map(|(_, (w, x))| w * x)
        .sum();
    Label::from_score(full) != Label::from_score(main)
}

struct Generator {
    rng: ChaCha8Rng,
    weights: Vec<f64>,
    params: SynthParams,
}

impl Generator {
    fn new(params: &SynthParams) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let nuance = params.nuance_range();
        let weights = (0..params.dimension)
            .map(|i| {
                let magnitude: f64 = rng.random_range(0.5..1.5);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let scale = if nuance.contains(&i) {
                    params.nuance_weight
                } else {
                    1.0
                };
                sign * magnitude * scale
            })
            .collect();
        Ok(Self {
            rng,
            weights,
            params: params.clone(),
        })
    }

    fn sample_vec(&mut self) -> Vec<f64> {
        (0..self.params.dimension)
            .map(|_| self.rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn pairs(&mut self, count: usize, first_id: PairId) -> Result<(Vec<PreferencePair>, BTreeMap<PairId, Label>)> {
        let nuance = self.params.nuance_range();
        let mut pairs = Vec::with_capacity(count);
        let mut labels = BTreeMap::new();
        for k in 0..count {
            let want_hard = self.rng.random_bool(self.params.hard_fraction);
            let mut attempts = 0;
            let (a, b) = loop {
                let a = self.sample_vec();
                let b = self.sample_vec();
                let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
                if is_nuance_decided(&self.weights, nuance.clone(), &diff) == want_hard {
                    break (a, b);
                }
                attempts += 1;
                if attempts > MAX_REJECTIONS {
                    return Err(Error::invalid(
                        "hard_fraction",
                        "rejection sampling could not produce the requested pair type",
                    ));
                }
            };
            let id = first_id + k as PairId;
            let pair = PreferencePair::new(id, FeatureVector(a), FeatureVector(b));
            labels.insert(id, Label::from_score(dot(&self.weights, &pair.diff())));
            pairs.push(pair);
        }
        Ok((pairs, labels))
    }
}

/// Deterministic synthetic corpus with a hidden linear preference.
pub fn gen_synthetic(params: &SynthParams) -> Result<(Corpus, OracleStore)> {
    let mut generator = Generator::new(params)?;
    let (pairs, labels) = generator.pairs(params.n, 0)?;
    let weights = FeatureVector(generator.weights.clone());
    Ok((
        Corpus::new(pairs, params.dimension)?,
        OracleStore::new(labels, weights),
    ))
}

/// As [`gen_synthetic`], plus `test_n` further pairs from the same generator
/// (ids continue after the training pairs). The training corpus is identical
/// to what `gen_synthetic` returns for the same parameters. The oracle covers
/// both corpora.
pub fn gen_synthetic_with_test(
    params: &SynthParams,
    test_n: usize,
) -> Result<(Corpus, Corpus, OracleStore)> {
    let mut generator = Generator::new(params)?;
    let (train, mut labels) = generator.pairs(params.n, 0)?;
    let (test, test_labels) = generator.pairs(test_n, params.n as PairId)?;
    labels.extend(test_labels);
    let weights = FeatureVector(generator.weights.clone());
    Ok((
        Corpus::new(train, params.dimension)?,
        Corpus::new(test, params.dimension)?,
        OracleStore::new(labels, weights),
    ))
}

/// Uniform random down-sample without replacement; corpus order is kept.
pub fn shard(corpus: &Corpus, fraction: f64, seed: u64) -> Result<Corpus> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("shard_fraction", "must lie in (0, 1]"));
    }
    let size = (fraction * corpus.len() as f64).round() as usize;
    if size < MIN_SHARD {
        return Err(Error::invalid(
            "shard_fraction",
            format!("shard of {size} pairs is below the minimum of {MIN_SHARD}"),
        ));
    }
    if size == corpus.len() {
        return Ok(corpus.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, corpus.len(), size).into_vec();
    picked.sort_unstable();
    let pairs = picked.into_iter().map(|i| corpus.pairs[i].clone()).collect();
    Corpus::new(pairs, corpus.dimension)
}

// ---------------------------------------------------------------------------
// JSONL I/O

#[derive(Serialize, Deserialize)]
struct SideRecord {
    features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    id: PairId,
    a: SideRecord,
    b: SideRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prompt: Option<String>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct OracleHeader {
    true_weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct OracleRecord {
    id: PairId,
    label: Label,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl fmt::Display) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

fn side_vector(path: &Path, line: usize, values: Vec<f64>) -> Result<FeatureVector> {
    FeatureVector::new(values).map_err(|e| parse_err(path, line, e))
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let reader = open(path)?;
    let mut pairs = Vec::new();
    let mut dimension: Option<usize> = None;
    let mut seen = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e))?;
        let d = *dimension.get_or_insert(rec.a.features.len());
        for side in [&rec.a, &rec.b] {
            if side.features.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: side.features.len(),
                    line: Some(lineno),
                });
            }
        }
        if let Some(prev) = seen.insert(rec.id, lineno) {
            return Err(parse_err(
                path,
                lineno,
                format!("duplicate id {} (first seen on line {prev})", rec.id),
            ));
        }
        pairs.push(PreferencePair {
            id: rec.id,
            features_a: side_vector(path, lineno, rec.a.features)?,
            features_b: side_vector(path, lineno, rec.b.features)?,
            text_a: rec.a.text,
            text_b: rec.b.text,
            prompt: rec.prompt,
            passthrough: Passthrough {
                pair: rec.extra,
                a: rec.a.extra,
                b: rec.b.extra,
            },
        });
    }
    let dimension = dimension.ok_or(Error::EmptyDataset)?;
    Corpus::new(pairs, dimension)
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for p in &corpus.pairs {
        let rec = PairRecord {
            id: p.id,
            a: SideRecord {
                features: p.features_a.as_slice().to_vec(),
                text: p.text_a.clone(),
                extra: p.passthrough.a.clone(),
            },
            b: SideRecord {
                features: p.features_b.as_slice().to_vec(),
                text: p.text_b.clone(),
                extra: p.passthrough.b.clone(),
            },
            prompt: p.prompt.clone(),
            extra: p.passthrough.pair.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_oracle(path: impl AsRef<Path>) -> Result<OracleStore> {
    let path = path.as_ref();
    let reader = open(path)?;
    let mut weights = None;
    let mut labels = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e))?;
        if value.get("true_weights").is_some() {
            let header: OracleHeader =
                serde_json::from_value(value).map_err(|e| parse_err(path, lineno, e))?;
            if weights.replace(header.true_weights).is_some() {
                return Err(parse_err(path, lineno, "second true_weights header"));
            }
            continue;
        }
        let rec: OracleRecord =
            serde_json::from_value(value).map_err(|e| parse_err(path, lineno, e))?;
        if labels.insert(rec.id, rec.label).is_some() {
            return Err(parse_err(path, lineno, format!("duplicate id {}", rec.id)));
        }
    }
    let weights = weights.ok_or_else(|| parse_err(path, 1, "missing true_weights header"))?;
    Ok(OracleStore::new(
        labels,
        FeatureVector::new(weights).map_err(|e| parse_err(path, 1, e))?,
    ))
}

pub fn write_oracle(oracle: &OracleStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    serde_json::to_writer(
        &mut w,
        &OracleHeader {
            true_weights: oracle.true_weights.as_slice().to_vec(),
        },
    )?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for (&id, &label) in &oracle.labels {
        serde_json::to_writer(&mut w, &OracleRecord { id, label })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `{"id", "label"}` lines (extra fields and an oracle weight header are ignored).
pub fn read_labels(path: impl AsRef<Path>) -> Result<BTreeMap<PairId, Label>> {
    let path = path.as_ref();
    let reader = open(path)?;
    let mut labels = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e))?;
        // an oracle file's weight header carries no label
        if value.get("true_weights").is_some() {
            continue;
        }
        let rec: OracleRecord = serde_json::from_value(value).map_err(|e| parse_err(path, i + 1, e))?;
        if labels.insert(rec.id, rec.label).is_some() {
            return Err(parse_err(path, i + 1, format!("duplicate id {}", rec.id)));
        }
    }
    Ok(labels)
}

pub fn write_labels(labels: &BTreeMap<PairId, Label>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for (&id, &label) in labels {
        serde_json::to_writer(&mut w, &OracleRecord { id, label })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a corpus and, when given, its oracle, checking that the oracle
/// covers every pair.
pub fn load(corpus: impl AsRef<Path>, oracle: Option<&Path>) -> Result<(Corpus, Option<OracleStore>)> {
    let corpus = read_corpus(corpus)?;
    let oracle = match oracle {
        Some(path) => {
            let o = read_oracle(path)?;
            o.check_covers(&corpus)?;
            Some(o)
        }
        None => None,
    };
    Ok((corpus, oracle))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthParams {
        SynthParams::new(200, 6, 2, 0.25, 11)
    }

    #[test]
    fn generation_is_deterministic() {
        let (c1, o1) = gen_synthetic(&small()).unwrap();
        let (c2, o2) = gen_synthetic(&small()).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(o1, o2);
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&c1, dir.path().join("a.jsonl")).unwrap();
        write_corpus(&c2, dir.path().join("b.jsonl")).unwrap();
        assert_eq!(
            std::fs::read(dir.path().join("a.jsonl")).unwrap(),
            std::fs::read(dir.path().join("b.jsonl")).unwrap()
        );
    }

    #[test]
    fn oracle_matches_true_weights_everywhere() {
        let (corpus, oracle) = gen_synthetic(&small()).unwrap();
        for p in corpus.pairs() {
            let label = Label::from_score(oracle.true_weights().dot(&p.diff()));
            assert_eq!(Some(label), oracle.label(p.id));
        }
        assert!(oracle.true_weights().as_slice().iter().all(|w| *w != 0.0));
    }

    #[test]
    fn hard_fraction_is_respected() {
        // Oracle: re-evaluate every pair with nuance dims zeroed and count
        // sign changes.
        let params = SynthParams::new(10_000, 16, 4, 0.25, 3);
        let (corpus, oracle) = gen_synthetic(&params).unwrap();
        let w = oracle.true_weights().as_slice();
        let flips = corpus
            .pairs()
            .iter()
            .filter(|p| {
                let d = p.diff();
                let masked: f64 = (0..12).map(|i| w[i] * d[i]).sum();
                Label::from_score(masked) != oracle.label(p.id).unwrap()
            })
            .count();
        let frac = flips as f64 / corpus.len() as f64;
        assert!((frac - 0.25).abs() <= 0.02, "nuance-decided fraction {frac}");
    }

    #[test]
    fn invalid_generation_args() {
        assert!(gen_synthetic(&SynthParams::new(1, 4, 1, 0.2, 0)).is_err());
        assert!(gen_synthetic(&SynthParams::new(10, 4, 4, 0.2, 0)).is_err());
        assert!(gen_synthetic(&SynthParams::new(10, 4, 0, 0.2, 0)).is_err());
        assert!(gen_synthetic(&SynthParams::new(10, 4, 1, 1.5, 0)).is_err());
    }

    #[test]
    fn test_split_shares_generator() {
        let params = small();
        let (train, test, oracle) = gen_synthetic_with_test(&params, 50).unwrap();
        let (plain, plain_oracle) = gen_synthetic(&params).unwrap();
        assert_eq!(train, plain);
        assert_eq!(test.len(), 50);
        assert_eq!(test.pairs()[0].id, 200);
        assert_eq!(oracle.true_weights(), plain_oracle.true_weights());
        oracle.check_covers(&test).unwrap();
        oracle.check_covers(&train).unwrap();
    }

    #[test]
    fn shard_boundaries() {
        let (corpus, _) = gen_synthetic(&SynthParams::new(20_000, 4, 1, 0.1, 5)).unwrap();
        let full = shard(&corpus, 1.0, 9).unwrap();
        assert_eq!(full, corpus);
        let quarter = shard(&corpus, 0.25, 9).unwrap();
        assert_eq!(quarter.len(), 5000);
        assert!(quarter.ids().all(|id| corpus.contains(id)));
        assert_eq!(quarter, shard(&corpus, 0.25, 9).unwrap());
        assert!(shard(&corpus, 0.0004, 9).is_err());
        assert!(shard(&corpus, 0.0, 9).is_err());
        assert!(shard(&corpus, 1.2, 9).is_err());
    }

    #[test]
    fn shard_overlap_matches_expectation() {
        // Two independent uniform draws of size f*n overlap in f*f*n ids on
        // average; average over repeated draws.
        let (corpus, _) = gen_synthetic(&SynthParams::new(4000, 3, 1, 0.1, 1)).unwrap();
        let f = 0.25;
        let mut total = 0usize;
        let reps = 40;
        for r in 0..reps {
            let a = shard(&corpus, f, 2 * r).unwrap();
            let b = shard(&corpus, f, 2 * r + 1).unwrap();
            assert_ne!(a, b);
            let set: std::collections::HashSet<_> = a.ids().collect();
            total += b.ids().filter(|id| set.contains(id)).count();
        }
        let mean = total as f64 / reps as f64;
        let expected = f * f * corpus.len() as f64;
        assert!((mean - expected).abs() < 0.05 * expected, "mean overlap {mean}");
    }

    #[test]
    fn round_trip_preserves_text_and_unknown_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"id":3,"a":{"features":[1.0,2.5],"text":"yes","score":7},"b":{"features":[0.0,-1.0]},"prompt":"q?","source":"x"}"#,
                "\n",
                r#"{"id":9,"a":{"features":[0.5,0.5]},"b":{"features":[1.5,1.0]}}"#,
                "\n"
            ),
        )
        .unwrap();
        let corpus = read_corpus(&path).unwrap();
        assert_eq!(corpus.dimension(), 2);
        assert_eq!(corpus.get(3).unwrap().prompt.as_deref(), Some("q?"));
        let out = dir.path().join("d.jsonl");
        write_corpus(&corpus, &out).unwrap();
        let again = read_corpus(&out).unwrap();
        assert_eq!(corpus, again);
        assert_eq!(again.get(3).unwrap().passthrough.pair["source"], "x");
        assert_eq!(again.get(3).unwrap().passthrough.a["score"], 7);
    }

    #[test]
    fn wrong_length_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"id":1,"a":{"features":[1.0,2.0]},"b":{"features":[0.0,1.0]}}"#,
                "\n",
                r#"{"id":2,"a":{"features":[1.0,2.0,3.0]},"b":{"features":[0.0,1.0,0.0]}}"#,
                "\n"
            ),
        )
        .unwrap();
        match read_corpus(&path) {
            Err(Error::DimensionMismatch { line: Some(2), .. }) => {}
            other => panic!("unexpected: {other:?}"),
        }
        std::fs::write(&path, "{\"id\":1,\"a\":{}}\n").unwrap();
        match read_corpus(&path) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn oracle_round_trip_and_coverage() {
        let dir = tempfile::tempdir().unwrap();
        let (corpus, oracle) = gen_synthetic(&small()).unwrap();
        let path = dir.path().join("o.jsonl");
        write_oracle(&oracle, &path).unwrap();
        assert_eq!(read_oracle(&path).unwrap(), oracle);

        let mut partial: BTreeMap<_, _> = oracle.iter().collect();
        partial.remove(&17);
        partial.remove(&40);
        let partial = OracleStore::new(partial, oracle.true_weights().clone());
        write_oracle(&partial, &path).unwrap();
        let cpath = dir.path().join("c.jsonl");
        write_corpus(&corpus, &cpath).unwrap();
        match load(&cpath, Some(&path)) {
            Err(Error::MissingOracle(17)) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn human_labels_are_immutable() {
        let mut o = Orientation::from_labels([(1, Label::A), (2, Label::B)], LabelSource::Llm);
        o.set(1, LabelEntry { label: Label::B, source: LabelSource::Human }).unwrap();
        assert!(o
            .set(1, LabelEntry { label: Label::A, source: LabelSource::Flipped })
            .is_err());
        o.set(1, LabelEntry { label: Label::B, source: LabelSource::Human }).unwrap();
        assert_eq!(o.label(1), Some(Label::B));
        assert_eq!(o.negated().label(2), Some(Label::A));
    }
}
