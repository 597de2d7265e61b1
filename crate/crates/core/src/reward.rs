//! Pairwise Bradley-Terry reward model.
//!
//! The model assigns a scalar reward to each completion's feature vector.
//! For a labeled pair the reward gap is `r(chosen) - r(rejected)` and the
//! training objective is the weighted mean of `-ln sigmoid(gap)`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{dot, Corpus, Label, PairId, PreferencePair};
use crate::error::{Error, Result};
use crate::mix::{streams, unit_open};

/// Minimum total training weight accepted by [`train`].
pub const MIN_TRAIN_WEIGHT: f64 = 20.0;

/// Fixed salt for the validation split so the split never moves between
/// iterations or training seeds.
const VALIDATION_SALT: u64 = 0x005e_ed0f_7a11;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arch {
    #[default]
    Linear,
    Mlp1 { hidden: usize },
}

impl Arch {
    pub fn param_count(self, d: usize) -> usize {
        match self {
            Arch::Linear => d,
            // W (hidden x d), b (hidden), v (hidden)
            Arch::Mlp1 { hidden } => hidden * d + 2 * hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub arch: Arch,
    pub dimension: usize,
    pub params: Vec<f64>,
    pub train_seed: u64,
}

impl RewardModel {
    pub fn new(arch: Arch, dimension: usize, params: Vec<f64>) -> Result<Self> {
        if let Arch::Mlp1 { hidden: 0 } = arch {
            return Err(Error::invalid("hidden", "must be positive"));
        }
        let expected = arch.param_count(dimension);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: params.len(),
                line: None,
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("params", "all parameters must be finite"));
        }
        Ok(Self {
            arch,
            dimension,
            params,
            train_seed: 0,
        })
    }

    pub fn zeros(arch: Arch, dimension: usize) -> Self {
        Self {
            arch,
            dimension,
            params: vec![0.0; arch.param_count(dimension)],
            train_seed: 0,
        }
    }

    /// Linear layer uses zeros; MLP weights are drawn from `seed` so that
    /// hidden units are not symmetric.
    pub fn initial(arch: Arch, dimension: usize, seed: u64) -> Self {
        let mut model = Self::zeros(arch, dimension);
        if let Arch::Mlp1 { hidden } = arch {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w_scale = 1.0 / (dimension as f64).sqrt();
            let v_scale = 1.0 / (hidden as f64).sqrt();
            let (w, rest) = model.params.split_at_mut(hidden * dimension);
            for x in w.iter_mut() {
                *x = w_scale * rng.sample::<f64, _>(StandardNormal);
            }
            for x in rest[hidden..].iter_mut() {
                *x = v_scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        model.train_seed = seed;
        model
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: len,
                line: None,
            });
        }
        Ok(())
    }

    pub fn score(&self, features: &[f64]) -> Result<f64> {
        self.check_dim(features.len())?;
        Ok(self.score_unchecked(features))
    }

    fn score_unchecked(&self, x: &[f64]) -> f64 {
        match self.arch {
            Arch::Linear => dot(&self.params, x),
            Arch::Mlp1 { hidden } => {
                let d = self.dimension;
                let (w, rest) = self.params.split_at(hidden * d);
                let (b, v) = rest.split_at(hidden);
                (0..hidden)
                    .map(|j| v[j] * (dot(&w[j * d..(j + 1) * d], x) + b[j]).tanh())
                    .sum()
            }
        }
    }

    /// Accumulates `coef * d score(x) / d params` into `grad`.
    fn add_score_grad(&self, x: &[f64], coef: f64, grad: &mut [f64]) {
        match self.arch {
            Arch::Linear => {
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g += coef * xi;
                }
            }
            Arch::Mlp1 { hidden } => {
                let d = self.dimension;
                let (w, rest) = self.params.split_at(hidden * d);
                let (b, v) = rest.split_at(hidden);
                let (gw, grest) = grad.split_at_mut(hidden * d);
                let (gb, gv) = grest.split_at_mut(hidden);
                for j in 0..hidden {
                    let t = (dot(&w[j * d..(j + 1) * d], x) + b[j]).tanh();
                    gv[j] += coef * t;
                    let back = coef * v[j] * (1.0 - t * t);
                    gb[j] += back;
                    for (g, xi) in gw[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *g += back * xi;
                    }
                }
            }
        }
    }

    /// Raw `score(a) - score(b)`.
    fn raw_gap(&self, pair: &PreferencePair) -> f64 {
        match self.arch {
            Arch::Linear => {
                let a = pair.features_a.as_slice();
                let b = pair.features_b.as_slice();
                self.params
                    .iter()
                    .zip(a.iter().zip(b))
                    .map(|(w, (x, y))| w * (x - y))
                    .sum()
            }
            Arch::Mlp1 { .. } => {
                self.score_unchecked(pair.features_a.as_slice())
                    - self.score_unchecked(pair.features_b.as_slice())
            }
        }
    }

    /// Reward gap of the pair under `label`: chosen minus rejected.
    /// Negating the label negates the result exactly.
    pub fn pair_gap(&self, pair: &PreferencePair, label: Label) -> Result<f64> {
        self.check_dim(pair.dimension())?;
        let raw = self.raw_gap(pair);
        Ok(match label {
            Label::A => raw,
            Label::B => -raw,
        })
    }
}

/// One training row: a pair id, the label it is trained towards, a weight
/// (repeat count) and whether it may land in the validation split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub id: PairId,
    pub label: Label,
    pub weight: f64,
    pub holdout_eligible: bool,
}

impl TrainingRow {
    pub fn new(id: PairId, label: Label) -> Self {
        Self {
            id,
            label,
            weight: 1.0,
            holdout_eligible: true,
        }
    }

    pub fn repeated(mut self, count: u32) -> Self {
        self.weight = count as f64;
        self
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln sigmoid(gap)`, the per-pair negative log-likelihood.
#[inline]
pub fn pair_nll(gap: f64) -> f64 {
    softplus(-gap)
}

struct Resolved<'a> {
    pair: &'a PreferencePair,
    row: TrainingRow,
}

fn resolve<'a>(corpus: &'a Corpus, rows: &[TrainingRow]) -> Result<Vec<Resolved<'a>>> {
    rows.iter()
        .map(|&row| {
            Ok(Resolved {
                pair: corpus.require(row.id)?,
                row,
            })
        })
        .collect()
}

fn weighted_loss(model: &RewardModel, rows: &[Resolved<'_>]) -> f64 {
    let mut total = 0.0;
    let mut weight = 0.0;
    for r in rows {
        let raw = model.raw_gap(r.pair);
        total += r.row.weight * pair_nll(r.row.label.sign() * raw);
        weight += r.row.weight;
    }
    total / weight
}

/// Adds the gradient of the weighted mean loss over `rows` into `grad`.
fn accumulate_grad(model: &RewardModel, rows: &[&Resolved<'_>], grad: &mut [f64]) -> f64 {
    let total_weight: f64 = rows.iter().map(|r| r.row.weight).sum();
    let mut loss = 0.0;
    for r in rows {
        let sign = r.row.label.sign();
        let gap = sign * model.raw_gap(r.pair);
        loss += r.row.weight * pair_nll(gap);
        // d/dgap of -ln sigmoid(gap) = -sigmoid(-gap)
        let coef = -sigmoid(-gap) * r.row.weight / total_weight * sign;
        match model.arch {
            Arch::Linear => {
                let a = r.pair.features_a.as_slice();
                let b = r.pair.features_b.as_slice();
                for (g, (x, y)) in grad.iter_mut().zip(a.iter().zip(b)) {
                    *g += coef * (x - y);
                }
            }
            Arch::Mlp1 { .. } => {
                model.add_score_grad(r.pair.features_a.as_slice(), coef, grad);
                model.add_score_grad(r.pair.features_b.as_slice(), -coef, grad);
            }
        }
    }
    loss / total_weight
}

fn check_rows(model: &RewardModel, corpus: &Corpus, rows: &[TrainingRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    model.check_dim(corpus.dimension())?;
    if let Some(r) = rows.iter().find(|r| !(r.weight > 0.0 && r.weight.is_finite())) {
        return Err(Error::invalid(
            "weight",
            format!("row for pair {} has non-positive weight", r.id),
        ));
    }
    Ok(())
}

/// Weighted mean Bradley-Terry negative log-likelihood.
pub fn bt_loss(model: &RewardModel, corpus: &Corpus, rows: &[TrainingRow]) -> Result<f64> {
    check_rows(model, corpus, rows)?;
    Ok(weighted_loss(model, &resolve(corpus, rows)?))
}

/// Loss and its analytic gradient with respect to every parameter.
pub fn bt_loss_grad(
    model: &RewardModel,
    corpus: &Corpus,
    rows: &[TrainingRow],
) -> Result<(f64, Vec<f64>)> {
    check_rows(model, corpus, rows)?;
    let resolved = resolve(corpus, rows)?;
    let refs: Vec<&Resolved<'_>> = resolved.iter().collect();
    let mut grad = vec![0.0; model.params.len()];
    let loss = accumulate_grad(model, &refs, &mut grad);
    Ok((loss, grad))
}

/// Largest relative error between the analytic gradient of [`bt_loss`] and a
/// central finite difference with step `h`.
///
/// Relative error is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn grad_check(model: &RewardModel, corpus: &Corpus, rows: &[TrainingRow], h: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::invalid("h", "step must lie in [1e-7, 1e-3]"));
    }
    let (_, analytic) = bt_loss_grad(model, corpus, rows)?;
    let resolved = resolve(corpus, rows)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (k, &grad) in analytic.iter().enumerate() {
        let orig = probe.params[k];
        probe.params[k] = orig + h;
        let up = weighted_loss(&probe, &resolved);
        probe.params[k] = orig - h;
        let down = weighted_loss(&probe, &resolved);
        probe.params[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = grad.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((grad - numeric).abs() / denom);
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub arch: Arch,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub patience: usize,
    pub l2: f64,
    pub seed: u64,
    /// Duplicate repeated rows physically instead of weighting them.
    pub expand_repeats: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Linear,
            learning_rate: 0.1,
            epochs: 100,
            batch_size: 64,
            val_fraction: 0.1,
            patience: 5,
            l2: 1e-4,
            seed: 0,
            expand_repeats: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return Err(Error::invalid("val_fraction", "must lie in (0, 0.5)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be positive"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::invalid("l2", "must be non-negative"));
        }
        if let Arch::Mlp1 { hidden: 0 } = self.arch {
            return Err(Error::invalid("hidden", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub val: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: RewardModel,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochLoss>,
}

/// Whether a row with this id belongs to the validation split.
pub fn in_validation_split(id: PairId, val_fraction: f64) -> bool {
    unit_open(VALIDATION_SALT, streams::VALIDATION, id) < val_fraction
}

/// Mini-batch gradient descent with L2 and validation early stopping.
///
/// Returns the parameter snapshot with the lowest validation loss (the
/// initial parameters count as epoch 0). When no row is eligible for
/// validation the training loss is used for model selection.
pub fn train(corpus: &Corpus, rows: &[TrainingRow], config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let mut model = RewardModel::initial(config.arch, corpus.dimension(), config.seed);
    check_rows(&model, corpus, rows)?;

    let expanded: Vec<TrainingRow>;
    let rows = if config.expand_repeats {
        expanded = rows
            .iter()
            .flat_map(|r| {
                let n = r.weight.round().max(1.0) as usize;
                std::iter::repeat_n(TrainingRow { weight: 1.0, ..*r }, n)
            })
            .collect();
        &expanded[..]
    } else {
        rows
    };

    let total_weight: f64 = rows.iter().map(|r| r.weight).sum();
    if total_weight < MIN_TRAIN_WEIGHT {
        return Err(Error::TooFewSamples {
            have: total_weight as usize,
            need: MIN_TRAIN_WEIGHT as usize,
        });
    }

    let resolved = resolve(corpus, rows)?;
    let (val, fit): (Vec<_>, Vec<_>) = resolved
        .into_iter()
        .partition(|r| r.row.holdout_eligible && in_validation_split(r.row.id, config.val_fraction));
    if fit.is_empty() {
        return Err(Error::TooFewSamples { have: 0, need: 1 });
    }

    let select_loss = |m: &RewardModel| {
        if val.is_empty() {
            weighted_loss(m, &fit)
        } else {
            weighted_loss(m, &val)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut grad = vec![0.0; model.params.len()];

    let init_val = select_loss(&model);
    let mut history = vec![EpochLoss {
        epoch: 0,
        train: weighted_loss(&model, &fit),
        val: init_val,
    }];
    let mut best = (0, init_val, model.params.clone());
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Resolved<'_>> = chunk.iter().map(|&i| &fit[i]).collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            accumulate_grad(&model, &batch, &mut grad);
            for (p, g) in model.params.iter_mut().zip(&grad) {
                *p -= config.learning_rate * (g + config.l2 * *p);
            }
        }
        let train_loss = weighted_loss(&model, &fit);
        let val_loss = select_loss(&model);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(EpochLoss {
            epoch,
            train: train_loss,
            val: val_loss,
        });
        if val_loss < best.1 {
            best = (epoch, val_loss, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    model.params = best.2;
    model.train_seed = config.seed;
    Ok(TrainedModel {
        model,
        best_epoch: best.0,
        best_val_loss: best.1,
        history,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub arch: Arch,
    pub d: usize,
    pub params: Vec<f64>,
    pub train_seed: u64,
    pub val_loss: f64,
}

impl Checkpoint {
    pub fn from_trained(trained: &TrainedModel) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            arch: trained.model.arch,
            d: trained.model.dimension,
            params: trained.model.params.clone(),
            train_seed: trained.model.train_seed,
            val_loss: trained.best_val_loss,
        }
    }

    pub fn into_model(self) -> Result<RewardModel> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(
                "version",
                format!("unsupported checkpoint version {}", self.version),
            ));
        }
        let mut model = RewardModel::new(self.arch, self.d, self.params)?;
        model.train_seed = self.train_seed;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureVector;

    fn pair(id: PairId, a: &[f64], b: &[f64]) -> PreferencePair {
        PreferencePair::new(
            id,
            FeatureVector::new(a.to_vec()).unwrap(),
            FeatureVector::new(b.to_vec()).unwrap(),
        )
    }

    #[test]
    fn linear_score_is_a_dot_product() {
        let m = RewardModel::new(Arch::Linear, 2, vec![1.0, 0.0]).unwrap();
        assert_eq!(m.score(&[2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(RewardModel::zeros(Arch::Linear, 2).score(&[5.0, -3.0]).unwrap(), 0.0);
        assert!(m.score(&[1.0]).is_err());
    }

    #[test]
    fn mlp_score_matches_hand_evaluation() {
        // hidden = 2, d = 2. W = [[0.5, -1], [2, 0.25]], b = [0.1, -0.3], v = [1.5, -0.7]
        let params = vec![0.5, -1.0, 2.0, 0.25, 0.1, -0.3, 1.5, -0.7];
        let m = RewardModel::new(Arch::Mlp1 { hidden: 2 }, 2, params).unwrap();
        let x = [0.4, 0.8];
        let h0 = (0.5f64 * 0.4 - 1.0 * 0.8 + 0.1).tanh();
        let h1 = (2.0f64 * 0.4 + 0.25 * 0.8 - 0.3).tanh();
        let expected = 1.5 * h0 - 0.7 * h1;
        assert!((m.score(&x).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn pair_gap_examples() {
        let m = RewardModel::new(Arch::Linear, 2, vec![1.0, -1.0]).unwrap();
        let p = pair(0, &[3.0, 1.0], &[1.0, 2.0]);
        assert_eq!(m.pair_gap(&p, Label::A).unwrap(), 3.0);
        assert_eq!(m.pair_gap(&p, Label::B).unwrap(), -3.0);

        // score(a) = 1.2, score(b) = 0.7
        let m = RewardModel::new(Arch::Linear, 1, vec![1.0]).unwrap();
        let p = pair(1, &[1.2], &[0.7]);
        assert!((m.pair_gap(&p, Label::A).unwrap() - 0.5).abs() < 1e-15);
        assert!((m.pair_gap(&p, Label::B).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(RewardModel::zeros(Arch::Linear, 1).pair_gap(&p, Label::A).unwrap(), 0.0);
    }

    #[test]
    fn loss_closed_forms() {
        let corpus = Corpus::new(vec![pair(0, &[1.0], &[0.0]), pair(1, &[0.0], &[2.0])], 1).unwrap();
        let rows = [TrainingRow::new(0, Label::A), TrainingRow::new(1, Label::B)];
        let zero = RewardModel::zeros(Arch::Linear, 1);
        assert!((bt_loss(&zero, &corpus, &rows).unwrap() - 2f64.ln()).abs() < 1e-12);

        let m = RewardModel::new(Arch::Linear, 1, vec![3f64.ln()]).unwrap();
        let single = [TrainingRow::new(0, Label::A)];
        assert!((bt_loss(&m, &corpus, &single).unwrap() - (4.0f64 / 3.0).ln()).abs() < 1e-12);

        assert!(matches!(bt_loss(&zero, &corpus, &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn repeat_weight_equals_duplication() {
        let corpus = Corpus::new(
            vec![pair(0, &[1.0, 0.5], &[0.0, 1.0]), pair(1, &[0.3, 2.0], &[2.0, 0.1])],
            2,
        )
        .unwrap();
        let m = RewardModel::new(Arch::Linear, 2, vec![0.7, -0.2]).unwrap();
        let weighted = [TrainingRow::new(0, Label::A).repeated(4), TrainingRow::new(1, Label::A)];
        let mut dup = vec![TrainingRow::new(0, Label::A); 4];
        dup.push(TrainingRow::new(1, Label::A));
        let a = bt_loss(&m, &corpus, &weighted).unwrap();
        let b = bt_loss(&m, &corpus, &dup).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn zero_model_gradient_closed_form() {
        let corpus = Corpus::new(
            vec![pair(0, &[1.0, 2.0], &[0.0, 1.0]), pair(1, &[3.0, -1.0], &[1.0, 1.0])],
            2,
        )
        .unwrap();
        let rows = [TrainingRow::new(0, Label::A), TrainingRow::new(1, Label::B)];
        let (_, grad) = bt_loss_grad(&RewardModel::zeros(Arch::Linear, 2), &corpus, &rows).unwrap();
        // -0.5 * mean(lambda * diff)
        let signed = [[1.0, 1.0], [-2.0, 2.0]];
        for k in 0..2 {
            let expected = -0.5 * (signed[0][k] + signed[1][k]) / 2.0;
            assert!((grad[k] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn grad_check_step_is_validated() {
        let corpus = Corpus::new(vec![pair(0, &[1.0], &[0.0])], 1).unwrap();
        let rows = [TrainingRow::new(0, Label::A)];
        let m = RewardModel::zeros(Arch::Linear, 1);
        assert!(grad_check(&m, &corpus, &rows, 1e-2).is_err());
        assert!(grad_check(&m, &corpus, &rows, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn too_few_samples_rejected() {
        let pairs: Vec<_> = (0..5).map(|i| pair(i, &[i as f64], &[0.0])).collect();
        let corpus = Corpus::new(pairs, 1).unwrap();
        let rows: Vec<_> = (0..5).map(|i| TrainingRow::new(i, Label::A)).collect();
        assert!(matches!(
            train(&corpus, &rows, &TrainConfig::default()),
            Err(Error::TooFewSamples { .. })
        ));
        let heavy: Vec<_> = rows.iter().map(|r| r.repeated(4)).collect();
        assert!(train(&corpus, &heavy, &TrainConfig::default()).is_ok());
    }

    #[test]
    fn divergence_is_reported() {
        let pairs: Vec<_> = (0..40).map(|i| pair(i, &[1e200, (i as f64)], &[-1e200, 0.0])).collect();
        let corpus = Corpus::new(pairs, 2).unwrap();
        let rows: Vec<_> = (0..40).map(|i| TrainingRow::new(i, if i % 2 == 0 { Label::A } else { Label::B })).collect();
        let cfg = TrainConfig {
            learning_rate: 1e10,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&corpus, &rows, &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let trained = TrainedModel {
            model: RewardModel::new(Arch::Mlp1 { hidden: 1 }, 1, vec![0.5, 0.0, 1.0]).unwrap(),
            best_epoch: 3,
            best_val_loss: 0.4,
            history: vec![],
        };
        let ck = Checkpoint::from_trained(&trained);
        ck.save(dir.path().join("m.json")).unwrap();
        let back = Checkpoint::load(dir.path().join("m.json")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.into_model().unwrap(), trained.model);
    }
}
