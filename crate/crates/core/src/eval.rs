//! Metrics, grouped report tables, the robustness comparison and agreement
//! with human consensus.
//!
//! Detection framing throughout: the positive class is "inconsistent".

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fccr::{predict, VerdictScores, CLIP};
use crate::model::ModelState;
use crate::types::{ContextDimension, Corpus, DatasetProfile, EntityType, PairRecord, Split};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Thresholded verdicts; `true` means "consistent".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictedLabels {
    pub overall: bool,
    pub per_dimension: BTreeMap<ContextDimension, bool>,
}

pub fn binarize(scores: &VerdictScores, threshold: f64) -> Result<PredictedLabels> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold {threshold} outside (0, 1)")));
    }
    Ok(PredictedLabels {
        overall: scores.overall >= threshold,
        per_dimension: scores
            .per_dimension
            .iter()
            .map(|(d, s)| (*d, *s >= threshold))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => (self.tp + self.tn) as f64 / n as f64,
        }
    }

    pub fn precision(&self) -> f64 {
        match self.tp + self.fp {
            0 => 0.0,
            n => self.tp as f64 / n as f64,
        }
    }

    pub fn recall(&self) -> f64 {
        match self.tp + self.fn_ {
            0 => 0.0,
            n => self.tp as f64 / n as f64,
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Counts with "inconsistent" (`false`) as the positive class.
pub fn confusion(preds: &[bool], labels: &[bool]) -> Result<ConfusionCounts> {
    if preds.len() != labels.len() {
        return Err(Error::Eval(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Eval("no examples to score".into()));
    }
    let mut cc = ConfusionCounts::default();
    for (p, l) in preds.iter().zip(labels) {
        match (!p, !l) {
            (true, true) => cc.tp += 1,
            (true, false) => cc.fp += 1,
            (false, false) => cc.tn += 1,
            (false, true) => cc.fn_ += 1,
        }
    }
    Ok(cc)
}

/// Anything that scores pairs.
pub trait Predictor {
    fn scores(&self, record: &PairRecord) -> Result<VerdictScores>;
}

impl Predictor for ModelState {
    fn scores(&self, record: &PairRecord) -> Result<VerdictScores> {
        predict(record, self)
    }
}

/// Reads the stored labels; scores sit at the clipping bounds.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn scores(&self, record: &PairRecord) -> Result<VerdictScores> {
        let s = |ok: bool| if ok { 1.0 - CLIP } else { CLIP };
        Ok(VerdictScores {
            overall: s(record.overall_consistent),
            per_dimension: ContextDimension::ALL
                .iter()
                .map(|d| (*d, s(record.ctxt_labels.get(d).copied().unwrap_or(true))))
                .collect(),
            fused_context: Vec::new(),
        })
    }
}

/// The same score for every output.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor(pub f64);

impl Predictor for ConstantPredictor {
    fn scores(&self, _record: &PairRecord) -> Result<VerdictScores> {
        Ok(VerdictScores {
            overall: self.0,
            per_dimension: ContextDimension::ALL.iter().map(|d| (*d, self.0)).collect(),
            fused_context: Vec::new(),
        })
    }
}

/// Overall-verdict accuracy on `records`.
pub fn overall_accuracy(predictor: &dyn Predictor, records: &[&PairRecord], threshold: f64) -> Result<f64> {
    let mut preds = Vec::with_capacity(records.len());
    for r in records {
        preds.push(binarize(&predictor.scores(r)?, threshold)?.overall);
    }
    let labels: Vec<bool> = records.iter().map(|r| r.overall_consistent).collect();
    Ok(confusion(&preds, &labels)?.accuracy())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Entity,
    Ctxt,
}

/// Which output a group scores and on which records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scored {
    Overall,
    Dimension(ContextDimension),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub n: usize,
    pub accuracy: f64,
    pub recall: f64,
    pub f1: f64,
}

impl CellMetrics {
    fn from_counts(cc: &ConfusionCounts) -> Self {
        CellMetrics {
            n: cc.total(),
            accuracy: cc.accuracy(),
            recall: cc.recall(),
            f1: cc.f1(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub kind: ReportKind,
    pub rows: Vec<String>,
    pub columns: Vec<(DatasetProfile, String)>,
    /// `cells[row][column]`; `None` where the group had no records.
    pub cells: Vec<Vec<Option<CellMetrics>>>,
}

fn hash_key(id: &str, group: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes().chain([0u8]).chain(group.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// `targeted` plus as many fully consistent records of the same profile,
/// picked by a hash of (id, group) so the choice does not depend on order.
fn with_matched<'a>(
    targeted: Vec<&'a PairRecord>,
    consistent: &[&'a PairRecord],
    group: &str,
) -> Vec<&'a PairRecord> {
    let mut pool: Vec<&PairRecord> = consistent.to_vec();
    pool.sort_by_key(|r| (hash_key(&r.id, group), r.id.clone()));
    let n = targeted.len();
    let mut out = targeted;
    out.extend(pool.into_iter().take(n));
    out
}

/// Columns of a report kind with the records and output each one scores.
fn groups<'a>(test: &[&'a PairRecord], kind: ReportKind) -> Vec<(DatasetProfile, String, Scored, Vec<&'a PairRecord>)> {
    let by_id: BTreeMap<&str, &PairRecord> = test.iter().map(|r| (r.id.as_str(), *r)).collect();
    let mut out = Vec::new();
    for profile in DatasetProfile::ALL {
        let records: Vec<&PairRecord> = test.iter().copied().filter(|r| r.dataset_profile == profile).collect();
        let consistent: Vec<&PairRecord> = records.iter().copied().filter(|r| r.overall_consistent).collect();
        let entity_false = |e: EntityType| -> Vec<&PairRecord> {
            records
                .iter()
                .copied()
                .filter(|r| r.entity_labels.get(&e) == Some(&false))
                .collect()
        };
        match (kind, profile) {
            (ReportKind::Entity, DatasetProfile::MMGEnt) => {
                out.push((
                    profile,
                    "LCt".into(),
                    Scored::Overall,
                    with_matched(entity_false(EntityType::LOC), &consistent, "LCt"),
                ));
                let mut pairs = Vec::new();
                for r in &records {
                    if let Some(p) = &r.perturbation {
                        if let Some(src) = by_id.get(p.source_id.as_str()) {
                            pairs.push(*r);
                            pairs.push(*src);
                        }
                    }
                }
                out.push((profile, "LCo".into(), Scored::Overall, pairs));
                let dim = ContextDimension::LogicalCoherence;
                let targeted: Vec<&PairRecord> = records
                    .iter()
                    .copied()
                    .filter(|r| r.ctxt_labels.get(&dim) == Some(&false))
                    .collect();
                out.push((profile, "LCn".into(), Scored::Dimension(dim), with_matched(targeted, &consistent, "LCn")));
            }
            (ReportKind::Entity, _) => {
                for e in EntityType::LABELLED {
                    out.push((profile, e.name().into(), Scored::Overall, with_matched(entity_false(e), &consistent, e.name())));
                }
            }
            (ReportKind::Ctxt, _) => {
                for dim in profile.dimensions() {
                    let targeted: Vec<&PairRecord> = records
                        .iter()
                        .copied()
                        .filter(|r| r.ctxt_labels.get(dim) == Some(&false))
                        .collect();
                    out.push((
                        profile,
                        dim.name().into(),
                        Scored::Dimension(*dim),
                        with_matched(targeted, &consistent, dim.name()),
                    ));
                }
            }
        }
    }
    out
}

fn label_of(record: &PairRecord, scored: Scored) -> bool {
    match scored {
        Scored::Overall => record.overall_consistent,
        Scored::Dimension(d) => record.ctxt_labels[&d],
    }
}

/// Scores every predictor on the test split, one row per predictor.
pub fn evaluate(
    predictors: &[(&str, &dyn Predictor)],
    corpus: &Corpus,
    kind: ReportKind,
    threshold: f64,
) -> Result<ReportTable> {
    let mut test: Vec<&PairRecord> = corpus.split(Split::Test).collect();
    if test.is_empty() {
        return Err(Error::Eval("the test split is empty".into()));
    }
    test.sort_by(|a, b| a.id.cmp(&b.id));
    let groups = groups(&test, kind);
    let mut cells = Vec::with_capacity(predictors.len());
    for (_, predictor) in predictors {
        let mut cache: BTreeMap<&str, PredictedLabels> = BTreeMap::new();
        let mut row = Vec::with_capacity(groups.len());
        for (_, _, scored, records) in &groups {
            if records.is_empty() {
                row.push(None);
                continue;
            }
            let mut preds = Vec::with_capacity(records.len());
            for r in records {
                if !cache.contains_key(r.id.as_str()) {
                    cache.insert(r.id.as_str(), binarize(&predictor.scores(r)?, threshold)?);
                }
                let p = &cache[r.id.as_str()];
                preds.push(match scored {
                    Scored::Overall => p.overall,
                    Scored::Dimension(d) => p.per_dimension[d],
                });
            }
            let labels: Vec<bool> = records.iter().map(|r| label_of(r, *scored)).collect();
            row.push(Some(CellMetrics::from_counts(&confusion(&preds, &labels)?)));
        }
        cells.push(row);
    }
    Ok(ReportTable {
        kind,
        rows: predictors.iter().map(|(n, _)| n.to_string()).collect(),
        columns: groups.into_iter().map(|(p, g, _, _)| (p, g)).collect(),
        cells,
    })
}

impl ReportTable {
    /// Aligned plain-text accuracy table.
    pub fn to_text(&self) -> String {
        let headers: Vec<String> = self.columns.iter().map(|(p, g)| format!("{p}:{g}")).collect();
        let name_w = self.rows.iter().map(|r| r.len()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<name_w$}", "model");
        for h in &headers {
            let _ = write!(out, "  {:>w$}", h, w = h.len().max(6));
        }
        out.push('\n');
        for (row, cells) in self.rows.iter().zip(&self.cells) {
            let _ = write!(out, "{row:<name_w$}");
            for (h, cell) in headers.iter().zip(cells) {
                let v = cell.map(|c| format!("{:.3}", c.accuracy)).unwrap_or_else(|| "-".into());
                let _ = write!(out, "  {:>w$}", v, w = h.len().max(6));
            }
            out.push('\n');
        }
        out
    }

    /// One JSON object per (row, profile, group, metric); absent cells carry
    /// a null value.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (row, cells) in self.rows.iter().zip(&self.cells) {
            for ((profile, group), cell) in self.columns.iter().zip(cells) {
                for metric in ["accuracy", "recall", "f1"] {
                    let value = cell.map(|c| match metric {
                        "accuracy" => c.accuracy,
                        "recall" => c.recall,
                        _ => c.f1,
                    });
                    let line = serde_json::json!({
                        "row": row,
                        "profile": profile.name(),
                        "group": group,
                        "metric": metric,
                        "value": value,
                    });
                    out.push_str(&line.to_string());
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn cell(&self, row: &str, profile: DatasetProfile, group: &str) -> Option<CellMetrics> {
        let r = self.rows.iter().position(|x| x == row)?;
        let c = self.columns.iter().position(|(p, g)| *p == profile && g == group)?;
        self.cells[r][c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessResult {
    pub standard_acc: f64,
    pub perturbed_acc: f64,
    pub drop: f64,
}

pub fn robustness_eval(
    predictor: &dyn Predictor,
    standard: &[&PairRecord],
    perturbed: &[&PairRecord],
    threshold: f64,
) -> Result<RobustnessResult> {
    if standard.is_empty() || perturbed.is_empty() {
        return Err(Error::Eval("robustness needs nonempty standard and perturbed sets".into()));
    }
    let standard_acc = overall_accuracy(predictor, standard, threshold)?;
    let perturbed_acc = overall_accuracy(predictor, perturbed, threshold)?;
    Ok(RobustnessResult {
        standard_acc,
        perturbed_acc,
        drop: standard_acc - perturbed_acc,
    })
}

/// The subtly perturbed evaluation set: every perturbed copy together with
/// its consistent test source, so both classes stay represented.
pub fn perturbed_eval_set(corpus: &Corpus) -> Vec<&PairRecord> {
    let perturbed: Vec<&PairRecord> = corpus.split(Split::PerturbedTest).collect();
    let sources: BTreeSet<&str> = perturbed
        .iter()
        .filter_map(|r| r.perturbation.as_ref().map(|p| p.source_id.as_str()))
        .collect();
    let mut out: Vec<&PairRecord> = corpus
        .split(Split::Test)
        .filter(|r| sources.contains(r.id.as_str()))
        .collect();
    out.extend(perturbed);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanJudgment {
    pub pair_id: String,
    pub annotator_id: String,
    /// `true` means "consistent".
    pub verdict: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inconsistency_dimension: Option<ContextDimension>,
    pub timestamp: u64,
}

impl HumanJudgment {
    pub fn validate(&self) -> Result<()> {
        if self.verdict && self.inconsistency_dimension.is_some() {
            return Err(Error::InvalidRecord {
                id: self.pair_id.clone(),
                violations: vec!["a consistent verdict cannot name an inconsistency dimension".into()],
            });
        }
        if self.annotator_id.is_empty() || self.pair_id.is_empty() {
            return Err(Error::InvalidRecord {
                id: self.pair_id.clone(),
                violations: vec!["pair_id and annotator_id must be nonempty".into()],
            });
        }
        Ok(())
    }
}

/// Majority verdict per pair; ties go to "inconsistent".
pub fn consensus(judgments: &[HumanJudgment]) -> BTreeMap<String, bool> {
    let mut votes: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for j in judgments {
        let v = votes.entry(j.pair_id.clone()).or_default();
        if j.verdict {
            v.0 += 1;
        } else {
            v.1 += 1;
        }
    }
    votes.into_iter().map(|(id, (yes, no))| (id, yes > no)).collect()
}

/// Percentage of pairs where the model's verdict equals the consensus.
pub fn agreement(model: &BTreeMap<String, bool>, consensus: &BTreeMap<String, bool>) -> Result<f64> {
    if !model.keys().eq(consensus.keys()) {
        return Err(Error::Eval("model predictions and consensus cover different pairs".into()));
    }
    if model.is_empty() {
        return Err(Error::Eval("no pairs to compare".into()));
    }
    let agree = model.iter().filter(|(id, v)| consensus[*id] == **v).count();
    Ok(100.0 * agree as f64 / model.len() as f64)
}
