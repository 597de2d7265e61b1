//! Metrics, cost model and on-disk run artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curve::{density_csv, export_curve};
use crate::dataset::{Corpus, Label, OracleStore};
use crate::engine::{RunOutcome, RunReport};
use crate::error::{Error, Result};
use crate::reward::RewardModel;

/// Share of test pairs the model orders like the oracle; ties count half.
pub fn preference_accuracy(model: &RewardModel, test: &Corpus, oracle: &OracleStore) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hits = 0.0;
    for p in test.pairs() {
        let gap = model.pair_gap(p, oracle.require(p.id)?)?;
        if gap > 0.0 {
            hits += 1.0;
        } else if gap == 0.0 {
            hits += 0.5;
        }
    }
    Ok(hits / test.len() as f64)
}

/// Accuracy gain (points) per point of annotation.
pub fn roi(accuracy_gain_points: f64, annotation_fraction_points: f64) -> Result<f64> {
    if annotation_fraction_points == 0.0 || !annotation_fraction_points.is_finite() {
        return Err(Error::invalid("annotation_fraction_points", "must be non-zero"));
    }
    Ok(accuracy_gain_points / annotation_fraction_points)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiComparison {
    pub annotation_percent: f64,
    pub targeted_gain_points: f64,
    pub random_gain_points: f64,
    pub targeted_roi: f64,
    pub random_roi: f64,
    /// `targeted_roi / random_roi`; infinite when random gained nothing.
    pub ratio: f64,
}

/// Compares a targeted run with a random baseline at the same spend.
/// Gains are measured against each run's own iteration 0.
pub fn compare_roi(targeted: &RunReport, random: &RunReport) -> Result<RoiComparison> {
    let first = |r: &RunReport| r.records.first().map(|x| x.test_accuracy).ok_or(Error::EmptyDataset);
    let pct = targeted.summary.annotation_percent;
    if (random.summary.annotation_percent - pct).abs() > 1e-9 {
        return Err(Error::invalid(
            "random",
            format!(
                "spend mismatch: {:.4}% vs {:.4}%",
                random.summary.annotation_percent, pct
            ),
        ));
    }
    let t_gain = 100.0 * (targeted.summary.test_accuracy() - first(targeted)?);
    let r_gain = 100.0 * (random.summary.test_accuracy() - first(random)?);
    let t_roi = roi(t_gain, pct)?;
    let r_roi = roi(r_gain, pct)?;
    let ratio = if r_roi > 0.0 {
        t_roi / r_roi
    } else if t_roi > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(RoiComparison {
        annotation_percent: pct,
        targeted_gain_points: t_gain,
        random_gain_points: r_gain,
        targeted_roi: t_roi,
        random_roi: r_roi,
        ratio,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub human_cost_per_sample: f64,
    /// Currency per million input tokens.
    pub llm_input_rate: f64,
    /// Currency per million output tokens.
    pub llm_output_rate: f64,
    pub avg_input_tokens: u64,
    pub avg_output_tokens: u64,
    pub gpu_rate: f64,
    pub rm_hours_per_iteration: f64,
    pub iterations: u32,
    pub corpus_size: u64,
    pub shard_fraction: f64,
    pub human_fraction: f64,
    /// Significant figures kept for the per-sample LLM cost; `None` keeps it exact.
    pub llm_cost_sig_figs: Option<u32>,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            human_cost_per_sample: 0.036,
            llm_input_rate: 2.50,
            llm_output_rate: 10.00,
            avg_input_tokens: 671,
            avg_output_tokens: 134,
            gpu_rate: 32.77,
            rm_hours_per_iteration: 2.0,
            iterations: 7,
            corpus_size: 160_800,
            shard_fraction: 0.25,
            human_fraction: 0.06,
            llm_cost_sig_figs: Some(2),
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("human_cost_per_sample", self.human_cost_per_sample),
            ("llm_input_rate", self.llm_input_rate),
            ("llm_output_rate", self.llm_output_rate),
            ("gpu_rate", self.gpu_rate),
            ("rm_hours_per_iteration", self.rm_hours_per_iteration),
            ("shard_fraction", self.shard_fraction),
            ("human_fraction", self.human_fraction),
        ];
        for (field, v) in reals {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, "must be a non-negative number"));
            }
        }
        if self.llm_cost_sig_figs == Some(0) {
            return Err(Error::invalid("llm_cost_sig_figs", "must be at least 1"));
        }
        Ok(())
    }

    /// LLM cost of labeling one sample, rounded per `llm_cost_sig_figs`.
    pub fn llm_cost_per_sample(&self) -> f64 {
        let exact = (self.avg_input_tokens as f64 * self.llm_input_rate
            + self.avg_output_tokens as f64 * self.llm_output_rate)
            / 1e6;
        match self.llm_cost_sig_figs {
            Some(figs) => round_sig(exact, figs),
            None => exact,
        }
    }
}

fn round_sig(x: f64, figs: u32) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let magnitude = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(figs as i32 - 1 - magnitude);
    (x * scale).round() / scale
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solution {
    FullHuman,
    Targeted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub solution: Solution,
    pub human: f64,
    pub llm: f64,
    pub compute: f64,
    pub total: f64,
}

impl CostTable {
    /// Same table with every amount rounded to one decimal.
    pub fn rounded(&self) -> Self {
        let r = |v: f64| (v * 10.0).round() / 10.0;
        Self {
            solution: self.solution,
            human: r(self.human),
            llm: r(self.llm),
            compute: r(self.compute),
            total: r(self.total),
        }
    }
}

pub fn cost_estimate(params: &CostParams, solution: Solution) -> Result<CostTable> {
    params.validate()?;
    let n = params.corpus_size as f64;
    let table = match solution {
        Solution::FullHuman => CostTable {
            solution,
            human: params.human_cost_per_sample * n,
            llm: 0.0,
            compute: 0.0,
            total: 0.0,
        },
        Solution::Targeted => CostTable {
            solution,
            human: params.human_cost_per_sample * n * params.human_fraction,
            llm: params.llm_cost_per_sample() * n * params.shard_fraction,
            compute: params.gpu_rate * params.rm_hours_per_iteration * params.iterations as f64,
            total: 0.0,
        },
    };
    Ok(CostTable {
        total: table.human + table.llm + table.compute,
        ..table
    })
}

/// Hex SHA-256 of the report's JSON with an empty hash field.
pub fn content_hash(report: &RunReport) -> String {
    let mut blank = report.clone();
    blank.content_hash = String::new();
    let bytes = serde_json::to_vec(&blank).expect("reports always serialize");
    hex::encode(Sha256::digest(&bytes))
}

pub const METRICS_HEADER: &str = "iteration,annotation_spend,shard_label_accuracy,test_accuracy,val_loss,\
elbow_idx,knee_idx,reflection_idx,reflection_reached,fallback_used,batch_selected,flipped,kept,excluded";

pub fn metrics_csv(report: &RunReport) -> String {
    let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::new();
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in &report.records {
        let lm = &r.landmarks;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.annotation_spend,
            r.shard_label_accuracy,
            r.test_accuracy,
            r.val_loss,
            opt(lm.elbow_idx),
            opt(lm.knee_idx),
            opt(lm.reflection_idx),
            lm.reflection_reached,
            r.fallback_used,
            opt(r.batch.as_ref().map(|b| b.selected)),
            opt(r.counts.as_ref().map(|c| c.flipped)),
            opt(r.counts.as_ref().map(|c| c.correct)),
            opt(r.counts.as_ref().map(|c| c.excluded)),
        );
    }
    out
}

#[derive(Serialize)]
struct LabelLine {
    id: u64,
    label: Label,
    source: crate::dataset::LabelSource,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the report, metrics, curves, densities, final labels and hash.
pub fn export_report(outcome: &RunOutcome, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let report = &outcome.report;
    write(&out_dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    write(&out_dir.join("metrics.csv"), metrics_csv(report))?;
    if !outcome.curves.is_empty() {
        let curves = out_dir.join("curves");
        for (i, curve) in outcome.curves.iter().enumerate() {
            export_curve(curve, i, &curves, &format!("iter_{i}"))?;
        }
    }
    if !outcome.densities.is_empty() {
        let dir = out_dir.join("density");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, bins) in outcome.densities.iter().enumerate() {
            write(&dir.join(format!("iter_{i}.csv")), density_csv(bins))?;
        }
    }
    if let Some(labels) = &outcome.final_labels {
        let mut out = String::new();
        for (id, entry) in labels.iter() {
            let line = LabelLine { id, label: entry.label, source: entry.source };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        write(&out_dir.join("labels.jsonl"), out)?;
    }
    write(&out_dir.join("content_hash.txt"), format!("{}\n", report.content_hash))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_synthetic, SynthParams};
    use crate::reward::Arch;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn oracle_weights_score_perfectly_and_zero_model_ties() {
        let (corpus, oracle) = gen_synthetic(&SynthParams::new(300, 6, 2, 0.25, 3)).unwrap();
        let truth = RewardModel::new(Arch::Linear, 6, oracle.true_weights().as_slice().to_vec()).unwrap();
        assert_eq!(preference_accuracy(&truth, &corpus, &oracle).unwrap(), 1.0);
        let zero = RewardModel::zeros(Arch::Linear, 6);
        assert_eq!(preference_accuracy(&zero, &corpus, &oracle).unwrap(), 0.5);
    }

    #[test]
    fn accuracy_rejects_empty_test_set() {
        let (corpus, oracle) = gen_synthetic(&SynthParams::new(20, 3, 1, 0.25, 1)).unwrap();
        let empty = corpus.filter(|_| false);
        let m = RewardModel::zeros(Arch::Linear, 3);
        assert!(preference_accuracy(&m, &empty, &oracle).is_err());
    }

    #[test]
    fn roi_arithmetic() {
        assert!(close(roi(89.6 - 74.7, 6.0).unwrap(), 2.483, 5e-4));
        assert_eq!(roi(0.0, 3.0).unwrap(), 0.0);
        assert!(roi(1.0, 0.0).is_err());
    }

    #[test]
    fn cost_table_matches_published_totals() {
        let full = cost_estimate(&CostParams::default(), Solution::FullHuman).unwrap().rounded();
        assert_eq!(full.total, 5788.8);

        let four_o = cost_estimate(&CostParams::default(), Solution::Targeted).unwrap().rounded();
        assert_eq!((four_o.human, four_o.llm, four_o.compute), (347.3, 120.6, 458.8));
        assert_eq!(four_o.total, 926.7);

        let mini = CostParams {
            llm_input_rate: 0.15,
            llm_output_rate: 0.60,
            ..CostParams::default()
        };
        assert!(close(mini.llm_cost_per_sample(), 0.00018, 1e-12));
        let mini = cost_estimate(&mini, Solution::Targeted).unwrap().rounded();
        assert_eq!(mini.llm, 7.2);
        assert_eq!(mini.total, 813.3);
    }

    #[test]
    fn unrounded_llm_cost_drifts_from_published_total() {
        let exact = CostParams {
            llm_cost_sig_figs: None,
            ..CostParams::default()
        };
        let t = cost_estimate(&exact, Solution::Targeted).unwrap().rounded();
        assert_eq!(t.total, 927.4);
    }

    #[test]
    fn cost_is_linear_in_corpus_size() {
        let base = CostParams::default();
        let double = CostParams {
            corpus_size: base.corpus_size * 2,
            ..base.clone()
        };
        let a = cost_estimate(&base, Solution::Targeted).unwrap();
        let b = cost_estimate(&double, Solution::Targeted).unwrap();
        assert!(close(b.human + b.llm, 2.0 * (a.human + a.llm), 1e-9));
        assert_eq!(a.compute, b.compute);
    }

    #[test]
    fn cost_rejects_negative_params() {
        let bad = CostParams {
            gpu_rate: -1.0,
            ..CostParams::default()
        };
        assert!(cost_estimate(&bad, Solution::Targeted).is_err());
    }

    #[test]
    fn sig_fig_rounding() {
        assert_eq!(round_sig(0.0030175, 2), 0.0030);
        assert!(close(round_sig(0.00018105, 2), 0.00018, 1e-15));
        assert_eq!(round_sig(12345.0, 3), 12300.0);
    }
}
