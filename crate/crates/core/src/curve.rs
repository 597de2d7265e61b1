//! Reward-gap distribution curve and its landmarks.
//!
//! Pairs are ranked by descending reward gap under the current labels. The
//! curve typically drops steeply, runs through a long flat middle, and drops
//! steeply again. The *elbow* is where the first drop flattens, the *knee*
//! where the flat middle ends, and the *reflection point* is the first rank
//! past the knee whose gap is at most the negated elbow gap.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotate::{AnnotationBatch, Annotator, BatchKind};
use crate::dataset::{Corpus, OracleStore, Orientation, PairId};
use crate::error::{Error, Result};
use crate::reward::RewardModel;

/// Shortest curve accepted by [`detect_landmarks`].
pub const MIN_DETECT_LEN: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedPair {
    pub pair_id: PairId,
    pub gap: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Landmarks {
    pub elbow_idx: Option<usize>,
    pub knee_idx: Option<usize>,
    pub reflection_idx: Option<usize>,
    /// False when no rank reaches the reflected elbow gap; the flip set is
    /// then empty and `reflection_idx` is the last index.
    pub reflection_reached: bool,
    pub fallback_used: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardCurve {
    ranked: Vec<RankedPair>,
    landmarks: Landmarks,
}

impl RewardCurve {
    /// Sorts by gap descending, ties by ascending id.
    pub fn from_gaps(gaps: impl IntoIterator<Item = (PairId, f64)>) -> Self {
        let mut ranked: Vec<RankedPair> = gaps
            .into_iter()
            .map(|(pair_id, gap)| RankedPair { pair_id, gap })
            .collect();
        ranked.sort_by(|x, y| y.gap.total_cmp(&x.gap).then(x.pair_id.cmp(&y.pair_id)));
        Self {
            ranked,
            landmarks: Landmarks::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }

    pub fn ranked(&self) -> &[RankedPair] {
        &self.ranked
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.ranked.iter().map(|r| r.gap).collect()
    }

    pub fn landmarks(&self) -> Landmarks {
        self.landmarks
    }

    pub fn gap_at(&self, idx: usize) -> f64 {
        self.ranked[idx].gap
    }

    pub fn id_at(&self, idx: usize) -> PairId {
        self.ranked[idx].pair_id
    }

    /// Ranks whose labels get flipped: `[reflection, end)` when the
    /// reflection point was reached, otherwise empty.
    pub fn flip_range(&self) -> std::ops::Range<usize> {
        match self.landmarks.reflection_idx {
            Some(r) if self.landmarks.reflection_reached => r..self.len(),
            _ => self.len()..self.len(),
        }
    }

    /// Assigns landmarks directly. Used by tests and by curve import.
    pub fn with_landmarks(mut self, landmarks: Landmarks) -> Self {
        self.landmarks = landmarks;
        self
    }
}

/// Ranks every pair of `corpus` by its reward gap under `orientation`.
pub fn build_curve(model: &RewardModel, corpus: &Corpus, orientation: &Orientation) -> Result<RewardCurve> {
    let gaps = corpus
        .pairs()
        .iter()
        .map(|p| Ok((p.id, model.pair_gap(p, orientation.require(p.id)?)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RewardCurve::from_gaps(gaps))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectParams {
    /// Odd moving-average window; `None` means `clamp(len / 100, 5, 501)`.
    pub smooth_window: Option<usize>,
    /// Flat threshold multiplier on the median absolute derivative.
    pub flat_factor: f64,
    /// Run length of flat derivatives; `None` means the window size.
    pub sustain: Option<usize>,
    pub fallback_elbow: f64,
    pub fallback_knee: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            smooth_window: None,
            flat_factor: 3.0,
            sustain: None,
            fallback_elbow: 0.10,
            fallback_knee: 0.80,
        }
    }
}

impl DetectParams {
    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.smooth_window {
            if w < 3 || w % 2 == 0 {
                return Err(Error::invalid("smooth_window", "must be odd and >= 3"));
            }
        }
        if self.sustain == Some(0) {
            return Err(Error::invalid("sustain", "must be positive"));
        }
        if !(self.flat_factor > 0.0 && self.flat_factor.is_finite()) {
            return Err(Error::invalid("flat_factor", "must be positive"));
        }
        if !(0.0 <= self.fallback_elbow
            && self.fallback_elbow < self.fallback_knee
            && self.fallback_knee < 1.0)
        {
            return Err(Error::invalid(
                "fallback_knee",
                "fallback quantiles need 0 <= elbow < knee < 1",
            ));
        }
        Ok(())
    }

    pub fn window_for(&self, len: usize) -> usize {
        self.smooth_window.unwrap_or_else(|| {
            let w = (len / 100).clamp(5, 501);
            if w.is_multiple_of(2) {
                w + 1
            } else {
                w
            }
        })
    }

    pub fn sustain_for(&self, len: usize) -> usize {
        self.sustain.unwrap_or_else(|| self.window_for(len))
    }
}

/// Centered moving average; the radius shrinks near the ends so every
/// window stays centered.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let radius = window / 2;
    let base = values.first().copied().unwrap_or(0.0);
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in values {
        acc += v - base;
        prefix.push(acc);
    }
    (0..n)
        .map(|i| {
            let r = radius.min(i).min(n - 1 - i);
            let (lo, hi) = (i - r, i + r + 1);
            base + (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn fallback(len: usize, params: &DetectParams) -> (usize, usize) {
    let elbow = (params.fallback_elbow * len as f64).floor() as usize;
    let knee = (params.fallback_knee * len as f64).floor() as usize;
    (elbow.min(len - 1), knee.min(len - 1))
}

/// Finds the entry into and exit from the flat middle of the curve using
/// the smoothed first-order derivative.
///
/// With `d_i = s_{i+1} - s_i` on the smoothed gaps and
/// `tau = flat_factor * median(|d|)`, the elbow is the smallest `i` whose next
/// `sustain` derivatives are all flat (`|d| <= tau`) and the knee is the
/// largest `i` whose previous `sustain` derivatives are all flat. Detection
/// succeeds only when both exist, `elbow < knee`, and the flat run is bounded
/// by a steep derivative on each side; otherwise the fallback quantiles are
/// used and `fallback_used` is set.
pub fn detect_landmarks(mut curve: RewardCurve, params: &DetectParams) -> Result<RewardCurve> {
    params.validate()?;
    let n = curve.len();
    if n < MIN_DETECT_LEN {
        return Err(Error::TooShortCurve {
            len: n,
            min: MIN_DETECT_LEN,
        });
    }
    let window = params.window_for(n);
    let sustain = params.sustain_for(n).min(n - 1);
    let smoothed = smooth(&curve.gaps(), window);
    let deriv: Vec<f64> = smoothed.windows(2).map(|w| w[1] - w[0]).collect();
    let mut abs: Vec<f64> = deriv.iter().map(|d| d.abs()).collect();
    let tau = params.flat_factor * median(&mut abs);

    let detected = if tau > 0.0 && tau.is_finite() {
        let flat: Vec<bool> = deriv.iter().map(|d| d.abs() <= tau).collect();
        // run[i] = length of the flat run starting at derivative i
        let m = flat.len();
        let mut run_from = vec![0usize; m + 1];
        for i in (0..m).rev() {
            run_from[i] = if flat[i] { run_from[i + 1] + 1 } else { 0 };
        }
        let mut run_to = vec![0usize; m + 1];
        for i in 0..m {
            run_to[i + 1] = if flat[i] { run_to[i] + 1 } else { 0 };
        }
        let elbow = (0..m).find(|&i| run_from[i] >= sustain);
        let knee = (1..=m).rev().find(|&i| run_to[i] >= sustain);
        match (elbow, knee) {
            (Some(e), Some(k)) if e < k => {
                let steep_before = flat[..e].iter().any(|f| !f);
                let steep_after = flat[k..].iter().any(|f| !f);
                (steep_before && steep_after).then_some((e, k))
            }
            _ => None,
        }
    } else {
        None
    };

    let (elbow, knee, fallback_used) = match detected {
        Some((e, k)) => (e, k, false),
        None => {
            let (e, k) = fallback(n, params);
            (e, k, true)
        }
    };
    curve.landmarks = Landmarks {
        elbow_idx: Some(elbow),
        knee_idx: Some(knee),
        reflection_idx: None,
        reflection_reached: false,
        fallback_used,
    };
    Ok(curve)
}

/// Sets the reflection point: the first rank after the knee (after the
/// elbow when no knee is set) whose gap is `<= -gap(elbow)`. When none
/// exists the last index is used and the flip set is empty.
pub fn reflection_point(mut curve: RewardCurve) -> Result<RewardCurve> {
    let elbow = curve
        .landmarks
        .elbow_idx
        .ok_or_else(|| Error::invalid("elbow_idx", "detect landmarks before the reflection point"))?;
    if curve.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let target = -curve.gap_at(elbow);
    let start = curve.landmarks.knee_idx.unwrap_or(elbow) + 1;
    let found = (start..curve.len()).find(|&i| curve.gap_at(i) <= target);
    curve.landmarks.reflection_idx = Some(found.unwrap_or(curve.len() - 1));
    curve.landmarks.reflection_reached = found.is_some();
    Ok(curve)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSelection {
    /// Selected ids, right to left along the curve.
    pub pair_ids: Vec<PairId>,
    /// The walk reached rank 0 before filling the batch.
    pub exhausted: bool,
    /// Leftmost rank visited by the walk.
    pub leftmost_rank: Option<usize>,
}

/// Walks left from the reflection point collecting up to `batch_size` ids
/// that are not yet human-labeled.
pub fn select_annotation_batch(
    curve: &RewardCurve,
    batch_size: usize,
    human_ids: &BTreeSet<PairId>,
) -> Result<BatchSelection> {
    let start = curve
        .landmarks
        .reflection_idx
        .ok_or_else(|| Error::invalid("reflection_idx", "compute the reflection point first"))?;
    let mut pair_ids = Vec::with_capacity(batch_size);
    let mut leftmost = None;
    if batch_size > 0 {
        for idx in (0..=start).rev() {
            leftmost = Some(idx);
            let id = curve.id_at(idx);
            if human_ids.contains(&id) {
                continue;
            }
            pair_ids.push(id);
            if pair_ids.len() == batch_size {
                break;
            }
        }
    }
    Ok(BatchSelection {
        exhausted: pair_ids.len() < batch_size,
        pair_ids,
        leftmost_rank: leftmost,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub pair_ids: Vec<PairId>,
    pub agreement: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub fn probe_size(len: usize, fraction: f64) -> usize {
    ((fraction * len as f64).floor() as usize).max(1).min(len)
}

/// Asks `annotator` about the `max(1, floor(fraction * len))` top-ranked
/// pairs and compares the answers to the current labels.
pub fn validation_probe(
    curve: &RewardCurve,
    corpus: &Corpus,
    orientation: &Orientation,
    annotator: &dyn Annotator,
    fraction: f64,
    threshold: f64,
) -> Result<ProbeResult> {
    if curve.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("probe_fraction", "must lie in (0, 1]"));
    }
    let k = probe_size(curve.len(), fraction);
    let ids: Vec<PairId> = curve.ranked[..k].iter().map(|r| r.pair_id).collect();
    let answers = annotator.annotate(corpus, &AnnotationBatch::new(0, BatchKind::Probe, ids.clone()))?;
    let mut hits = 0;
    for &id in &ids {
        let answer = answers.get(&id).ok_or(Error::MissingLabel(id))?;
        if orientation.require(id)? == *answer {
            hits += 1;
        }
    }
    let agreement = hits as f64 / k as f64;
    Ok(ProbeResult {
        pair_ids: ids,
        agreement,
        threshold,
        pass: agreement >= threshold,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityBin {
    pub start_rank: usize,
    pub end_rank: usize,
    pub accuracy: f64,
}

/// Fraction of labels matching the oracle in equal-width rank bins.
pub fn accuracy_density(
    curve: &RewardCurve,
    orientation: &Orientation,
    oracle: &OracleStore,
    bin_count: usize,
) -> Result<Vec<DensityBin>> {
    if bin_count == 0 {
        return Err(Error::invalid("bin_count", "must be positive"));
    }
    let n = curve.len();
    let bins = bin_count.min(n.max(1));
    (0..bins)
        .map(|b| {
            let start = b * n / bins;
            let end = (b + 1) * n / bins;
            let mut hits = 0;
            for r in &curve.ranked[start..end] {
                if orientation.require(r.pair_id)? == oracle.require(r.pair_id)? {
                    hits += 1;
                }
            }
            let width = (end - start).max(1);
            Ok(DensityBin {
                start_rank: start,
                end_rank: end,
                accuracy: hits as f64 / width as f64,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Export

pub const CURVE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSidecar {
    pub version: u32,
    pub iteration: usize,
    pub len: usize,
    #[serde(flatten)]
    pub landmarks: Landmarks,
}

pub fn curve_csv(curve: &RewardCurve) -> String {
    let mut out = String::with_capacity(curve.len() * 24);
    let _ = writeln!(out, "# prefcurate reward curve v{CURVE_FORMAT_VERSION}");
    out.push_str("rank,pair_id,gap\n");
    for (rank, r) in curve.ranked.iter().enumerate() {
        let _ = writeln!(out, "{rank},{},{}", r.pair_id, r.gap);
    }
    out
}

pub fn density_csv(bins: &[DensityBin]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# prefcurate accuracy density v{CURVE_FORMAT_VERSION}");
    out.push_str("bin,start_rank,end_rank,accuracy\n");
    for (i, b) in bins.iter().enumerate() {
        let _ = writeln!(out, "{i},{},{},{}", b.start_rank, b.end_rank, b.accuracy);
    }
    out
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn export_curve(curve: &RewardCurve, iteration: usize, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    std::fs::write(&csv_path, curve_csv(curve)).map_err(|e| Error::io(&csv_path, e))?;
    let sidecar = CurveSidecar {
        version: CURVE_FORMAT_VERSION,
        iteration,
        len: curve.len(),
        landmarks: curve.landmarks,
    };
    let json_path = dir.join(format!("{stem}.json"));
    std::fs::write(&json_path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&json_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::{AnnotatorSpec, OracleHuman};
    use crate::dataset::{Label, LabelSource};
    use std::sync::Arc;

    fn curve_from(gaps: &[f64]) -> RewardCurve {
        RewardCurve::from_gaps(gaps.iter().enumerate().map(|(i, &g)| (i as PairId, g)))
    }

    /// Piecewise-linear curve with the given slopes over [0, a), [a, b), [b, n).
    pub(crate) fn piecewise(n: usize, a: usize, b: usize, steep: f64, flat: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(n);
        let mut y = 0.0;
        for i in 0..n {
            v.push(y);
            y -= if i < a || i >= b { steep } else { flat };
        }
        v
    }

    #[test]
    fn sorting_and_tie_break() {
        let c = RewardCurve::from_gaps([(0, 0.5), (1, -0.2), (2, 1.1)]);
        assert_eq!(c.gaps(), vec![1.1, 0.5, -0.2]);
        let c = RewardCurve::from_gaps([(9, 0.3), (4, 0.3), (7, 1.0)]);
        let ids: Vec<_> = c.ranked().iter().map(|r| r.pair_id).collect();
        assert_eq!(ids, vec![7, 4, 9]);
    }

    #[test]
    fn detects_constructed_landmarks() {
        let gaps = piecewise(1000, 100, 900, 10.0, 0.01);
        let c = detect_landmarks(curve_from(&gaps), &DetectParams::default()).unwrap();
        let lm = c.landmarks();
        assert!(!lm.fallback_used);
        let (e, k) = (lm.elbow_idx.unwrap(), lm.knee_idx.unwrap());
        assert!((80..=120).contains(&e), "elbow {e}");
        assert!((880..=920).contains(&k), "knee {k}");
    }

    #[test]
    fn linear_and_constant_curves_fall_back() {
        let linear: Vec<f64> = (0..1000).map(|i| -(i as f64)).collect();
        let lm = detect_landmarks(curve_from(&linear), &DetectParams::default()).unwrap().landmarks();
        assert!(lm.fallback_used);
        assert_eq!((lm.elbow_idx, lm.knee_idx), (Some(100), Some(800)));

        let constant = vec![0.7; 1000];
        let lm = detect_landmarks(curve_from(&constant), &DetectParams::default()).unwrap().landmarks();
        assert!(lm.fallback_used);
        assert_eq!((lm.elbow_idx, lm.knee_idx), (Some(100), Some(800)));
    }

    #[test]
    fn short_curve_is_rejected() {
        assert!(matches!(
            detect_landmarks(curve_from(&[1.0; 49]), &DetectParams::default()),
            Err(Error::TooShortCurve { len: 49, .. })
        ));
        let bad = DetectParams {
            smooth_window: Some(4),
            ..DetectParams::default()
        };
        assert!(detect_landmarks(curve_from(&[1.0; 60]), &bad).is_err());
    }

    fn with_elbow_knee(gaps: &[f64], elbow: usize, knee: usize) -> RewardCurve {
        curve_from(gaps).with_landmarks(Landmarks {
            elbow_idx: Some(elbow),
            knee_idx: Some(knee),
            ..Landmarks::default()
        })
    }

    #[test]
    fn reflection_examples() {
        // gap(elbow) = 2.0; first value <= -2.0 at rank 950.
        let gaps: Vec<f64> = (0..1000)
            .map(|i| match i {
                0..=99 => 10.0 - 0.08 * i as f64,
                100..=949 => 2.0 - 3.0 * (i - 100) as f64 / 850.0,
                _ => -2.0 - 0.1 * (i - 950) as f64,
            })
            .collect();
        let c = reflection_point(with_elbow_knee(&gaps, 100, 800)).unwrap();
        assert!((c.gap_at(100) - 2.0).abs() < 1e-6);
        assert_eq!(c.landmarks().reflection_idx, Some(950));
        assert_eq!(c.flip_range(), 950..1000);

        let shallow: Vec<f64> = (0..100).map(|i| 5.0 - 0.01 * i as f64).collect();
        let c = reflection_point(with_elbow_knee(&shallow, 10, 80)).unwrap();
        assert_eq!(c.landmarks().reflection_idx, Some(99));
        assert!(!c.landmarks().reflection_reached);
        assert!(c.flip_range().is_empty());

        // gap(elbow) = 0 -> first rank past the knee with gap <= 0, which is
        // the rank right after the knee on a non-increasing curve.
        let zero: Vec<f64> = (0..100).map(|i| 1.0 - (i as f64) / 20.0).collect();
        let c = reflection_point(with_elbow_knee(&zero, 20, 60)).unwrap();
        assert_eq!(c.gap_at(20), 0.0);
        assert_eq!(c.landmarks().reflection_idx, Some(61));
        let elbow_only = curve_from(&zero).with_landmarks(Landmarks {
            elbow_idx: Some(20),
            ..Landmarks::default()
        });
        assert_eq!(reflection_point(elbow_only).unwrap().landmarks().reflection_idx, Some(21));
        assert!(reflection_point(curve_from(&zero)).is_err());
    }

    fn with_reflection(n: usize, reflection: usize) -> RewardCurve {
        let gaps: Vec<f64> = (0..n).map(|i| -(i as f64)).collect();
        curve_from(&gaps).with_landmarks(Landmarks {
            elbow_idx: Some(0),
            knee_idx: Some(1),
            reflection_idx: Some(reflection),
            reflection_reached: true,
            fallback_used: false,
        })
    }

    #[test]
    fn batch_selection_walks_left() {
        let c = with_reflection(1000, 950);
        let sel = select_annotation_batch(&c, 100, &BTreeSet::new()).unwrap();
        let expected: Vec<PairId> = (851..=950).rev().collect();
        assert_eq!(sel.pair_ids, expected);
        assert!(!sel.exhausted);

        let human: BTreeSet<PairId> = (900..930).collect();
        let sel = select_annotation_batch(&c, 100, &human).unwrap();
        assert_eq!(sel.pair_ids.len(), 100);
        assert_eq!(*sel.pair_ids.last().unwrap(), 821);
        assert!(sel.pair_ids.iter().all(|id| !human.contains(id)));

        let sel = select_annotation_batch(&with_reflection(100, 40), 60, &BTreeSet::new()).unwrap();
        assert_eq!(sel.pair_ids.len(), 41);
        assert!(sel.exhausted);
        assert_eq!(sel.leftmost_rank, Some(0));
    }

    #[test]
    fn probe_size_and_agreement() {
        assert_eq!(probe_size(5000, 0.001), 5);
        assert_eq!(probe_size(100, 0.001), 1);

        let (corpus, oracle) =
            crate::dataset::gen_synthetic(&crate::dataset::SynthParams::new(300, 4, 1, 0.2, 2)).unwrap();
        let orientation = Orientation::from_labels(oracle.iter(), LabelSource::Llm);
        let curve = RewardCurve::from_gaps(corpus.ids().map(|id| (id, id as f64)));
        let human = OracleHuman::new(&AnnotatorSpec::oracle_human(0.0, 0), Arc::new(oracle.clone())).unwrap();
        let probe = validation_probe(&curve, &corpus, &orientation, &human, 0.01, 0.7).unwrap();
        assert_eq!(probe.pair_ids.len(), 3);
        assert_eq!(probe.agreement, 1.0);
        assert!(probe.pass);

        let inverted = orientation.negated();
        let probe = validation_probe(&curve, &corpus, &inverted, &human, 0.01, 0.7).unwrap();
        assert_eq!(probe.agreement, 0.0);
        assert!(!probe.pass);
    }

    #[test]
    fn density_bins() {
        let (_, oracle) =
            crate::dataset::gen_synthetic(&crate::dataset::SynthParams::new(10, 3, 1, 0.2, 2)).unwrap();
        let curve = RewardCurve::from_gaps((0..10).map(|id| (id, 10.0 - id as f64)));
        let all = Orientation::from_labels(oracle.iter(), LabelSource::Llm);
        let bins = accuracy_density(&curve, &all, &oracle, 5).unwrap();
        assert!(bins.iter().all(|b| b.accuracy == 1.0));

        let mut half = all.clone();
        for id in 5..10 {
            let l: Label = oracle.label(id).unwrap().flipped();
            half.set(id, crate::dataset::LabelEntry { label: l, source: LabelSource::Llm }).unwrap();
        }
        let bins = accuracy_density(&curve, &half, &oracle, 2).unwrap();
        assert_eq!(bins.iter().map(|b| b.accuracy).collect::<Vec<_>>(), vec![1.0, 0.0]);
    }

    #[test]
    fn csv_export_is_monotone() {
        let gaps = piecewise(200, 20, 180, 1.0, 0.01);
        let c = reflection_point(detect_landmarks(curve_from(&gaps), &DetectParams::default()).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_curve(&c, 2, dir.path(), "curve").unwrap();
        let text = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
        let values: Vec<f64> = text
            .lines()
            .skip(2)
            .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(values.len(), 200);
        assert!(values.windows(2).all(|w| w[0] >= w[1]));
        let side: CurveSidecar =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("curve.json")).unwrap()).unwrap();
        assert_eq!(side.landmarks, c.landmarks());
    }
}
