//! Group-aware splits, diagnostic metrics, mixed-stone scoring, confusion
//! matrices and repeated cross-validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use image::RgbImage;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{self, ClassifierError, ModelConfig, Prediction, TrainConfig, TrainedModel};
use crate::dataset::{ClassLabel, Morphology, NormalizedImage, View, NUM_CLASSES};
use crate::render::{self, GridCell};
use crate::seed;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("test fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),
    #[error("stone {0} carries more than one class label")]
    InconsistentStone(String),
    #[error("all counts are zero")]
    AllZero,
    #[error("counts must be finite and non-negative")]
    NegativeCounts,
    #[error("{0} is not a mixed class")]
    NotMixed(ClassLabel),
    #[error("scores and labels differ in length")]
    LengthMismatch,
    #[error("AUROC needs at least one positive and one negative label")]
    SingleClass,
    #[error("scores must be finite")]
    NonFiniteScore,
    #[error("corpus too small to split: {0}")]
    InsufficientData(String),
    #[error("corpus mixes views; restrict it to {0} first")]
    MixedViews(View),
    #[error("invalid evaluation settings: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

// ---------------------------------------------------------------------------
// Splitting

/// What the splitter needs to know about one observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitItem {
    pub observation_id: String,
    pub stone_id: String,
    pub label: ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Assigns whole stones to the test side, class by class.
///
/// Stones of a class are visited in a seeded random order; each joins the
/// test side only if that brings the class's test image count closer to
/// `test_fraction` of its images. The final count is therefore within half
/// the largest stone's image count of the target.
pub fn stratified_group_split(items: &[SplitItem], test_fraction: f64, split_seed: u64) -> Result<SplitPlan, EvaluationError> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(EvaluationError::InvalidFraction(test_fraction));
    }
    let mut stones: BTreeMap<&str, (ClassLabel, usize)> = BTreeMap::new();
    for item in items {
        let entry = stones.entry(&item.stone_id).or_insert((item.label, 0));
        if entry.0 != item.label {
            return Err(EvaluationError::InconsistentStone(item.stone_id.clone()));
        }
        entry.1 += 1;
    }
    let mut rng = seed::rng(split_seed);
    let mut test_stones = BTreeSet::new();
    let mut warnings = Vec::new();
    for class in ClassLabel::ALL {
        let mut members: Vec<(&str, usize)> =
            stones.iter().filter(|(_, (l, _))| *l == class).map(|(s, (_, n))| (*s, *n)).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let total: usize = members.iter().map(|m| m.1).sum();
        let target = test_fraction * total as f64;
        let mut taken = 0usize;
        for (stone, n) in members {
            if ((taken + n) as f64 - target).abs() < (taken as f64 - target).abs() {
                taken += n;
                test_stones.insert(stone);
            }
        }
        if (taken as f64 - target).abs() >= 1.0 {
            let msg = format!("class {class}: {taken} test images for a target of {target:.1}");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for item in items {
        if test_stones.contains(item.stone_id.as_str()) {
            test.push(item.observation_id.clone());
        } else {
            train.push(item.observation_id.clone());
        }
    }
    Ok(SplitPlan { train, test, seed: split_seed, warnings })
}

// ---------------------------------------------------------------------------
// Binary metrics

/// Real-valued so that averaged counts can be scored directly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: f64,
    pub fp: f64,
    pub tn: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

/// Percentages, except `auroc` in [0, 1]. `None` marks an undefined ratio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: Option<f64>,
    pub auroc: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
}

/// Table column order.
pub const METRIC_NAMES: [&str; 8] = ["accuracy", "AUROC", "sensitivity", "specificity", "PPV", "NPV", "FPR", "FNR"];

impl MetricSet {
    pub fn values(&self) -> [Option<f64>; 8] {
        [self.accuracy, self.auroc, self.sensitivity, self.specificity, self.ppv, self.npv, self.fpr, self.fnr]
    }
}

fn percent(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| 100.0 * (num / den))
}

pub fn metrics_from_counts(c: &BinaryCounts) -> Result<MetricSet, EvaluationError> {
    let all = [c.tp, c.fp, c.tn, c.fn_];
    if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(EvaluationError::NegativeCounts);
    }
    let total: f64 = all.iter().sum();
    if total == 0.0 {
        return Err(EvaluationError::AllZero);
    }
    let sensitivity = percent(c.tp, c.tp + c.fn_);
    let specificity = percent(c.tn, c.tn + c.fp);
    Ok(MetricSet {
        accuracy: percent(c.tp + c.tn, total),
        auroc: None,
        sensitivity,
        specificity,
        ppv: percent(c.tp, c.tp + c.fp),
        npv: percent(c.tn, c.tn + c.fn_),
        fpr: specificity.map(|s| 100.0 - s),
        fnr: sensitivity.map(|s| 100.0 - s),
    })
}

fn tally(cases: impl Iterator<Item = (bool, bool)>) -> BinaryCounts {
    let mut c = BinaryCounts::default();
    for (actual, predicted) in cases {
        match (actual, predicted) {
            (true, true) => c.tp += 1.0,
            (true, false) => c.fn_ += 1.0,
            (false, true) => c.fp += 1.0,
            (false, false) => c.tn += 1.0,
        }
    }
    c
}

/// Exact-class one-vs-rest counts.
pub fn binarize(preds: &[(Prediction, ClassLabel)], positive: ClassLabel) -> BinaryCounts {
    tally(preds.iter().map(|(p, truth)| (*truth == positive, p.argmax_class == positive)))
}

/// How a mixed stone counts as detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixedMode {
    /// The prediction contains the mixture's first component (Ia).
    AtLeastFirst,
    /// The prediction contains the mixture's second component.
    AtLeastSecond,
    /// The prediction is the mixed class itself.
    Both,
}

impl MixedMode {
    pub const ALL: [MixedMode; 3] = [MixedMode::AtLeastFirst, MixedMode::AtLeastSecond, MixedMode::Both];

    pub fn name(self) -> &'static str {
        match self {
            MixedMode::AtLeastFirst => "at_least_first",
            MixedMode::AtLeastSecond => "at_least_second",
            MixedMode::Both => "both",
        }
    }

    /// Human label, e.g. "at least IIb" or "both Ia and IIb".
    pub fn describe(self, mixed: ClassLabel) -> String {
        let c = mixed.components();
        match (self, c) {
            (MixedMode::AtLeastFirst, [a, ..]) => format!("at least {}", a.code()),
            (MixedMode::AtLeastSecond, [_, b]) => format!("at least {}", b.code()),
            (MixedMode::Both, [a, b]) => format!("both {} and {}", a.code(), b.code()),
            _ => self.name().to_string(),
        }
    }
}

fn mixed_component(mixed: ClassLabel, mode: MixedMode) -> Result<Option<Morphology>, EvaluationError> {
    match (mixed.components(), mode) {
        ([a, _], MixedMode::AtLeastFirst) => Ok(Some(*a)),
        ([_, b], MixedMode::AtLeastSecond) => Ok(Some(*b)),
        ([_, _], MixedMode::Both) => Ok(None),
        _ => Err(EvaluationError::NotMixed(mixed)),
    }
}

/// Whether a predicted class counts as detecting `mixed` under `mode`.
pub fn mixed_detected(mixed: ClassLabel, mode: MixedMode, predicted: ClassLabel) -> Result<bool, EvaluationError> {
    Ok(match mixed_component(mixed, mode)? {
        Some(m) => predicted.contains(m),
        None => predicted == mixed,
    })
}

/// Counts for a mixed class. Positives are cases whose truth is `mixed`;
/// every case is predicted-positive when [`mixed_detected`] holds for its
/// argmax class.
pub fn binarize_mixed(preds: &[(Prediction, ClassLabel)], mixed: ClassLabel, mode: MixedMode) -> Result<BinaryCounts, EvaluationError> {
    mixed_component(mixed, mode)?;
    let mut cases = Vec::with_capacity(preds.len());
    for (p, truth) in preds {
        cases.push((*truth == mixed, mixed_detected(mixed, mode, p.argmax_class)?));
    }
    Ok(tally(cases.into_iter()))
}

/// Score used for a mixed-mode AUROC: the total probability of the classes
/// that would count as detected.
pub fn mixed_score(p: &Prediction, mixed: ClassLabel, mode: MixedMode) -> Result<f64, EvaluationError> {
    let mut s = 0.0;
    for class in ClassLabel::ALL {
        if mixed_detected(mixed, mode, class)? {
            s += p.probability(class);
        }
    }
    Ok(s)
}

/// Mann–Whitney estimate of P(positive score > negative score), ties ½.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, EvaluationError> {
    if scores.len() != labels.len() {
        return Err(EvaluationError::LengthMismatch);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvaluationError::NonFiniteScore);
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvaluationError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of mid-ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

// ---------------------------------------------------------------------------
// Confusion matrices

/// Rows are predicted classes, columns actual classes, both in canonical order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[f64; NUM_CLASSES]; NUM_CLASSES],
}

/// Display semantics of a rendered cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellRole {
    Header,
    Correct,
    Incorrect,
    /// Per-row PPV and false-discovery rate.
    RowMarginal,
    /// Per-column sensitivity and false-negative rate.
    ColumnMarginal,
    Overall,
}

impl CellRole {
    fn fill(self) -> [u8; 3] {
        match self {
            CellRole::Header => [255, 255, 255],
            CellRole::Correct => [148, 214, 148],
            CellRole::Incorrect => [240, 170, 160],
            CellRole::RowMarginal | CellRole::ColumnMarginal => [215, 215, 215],
            CellRole::Overall => [170, 190, 225],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedCell {
    pub role: CellRole,
    pub lines: Vec<String>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[f64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn from_predictions(preds: &[(Prediction, ClassLabel)]) -> Self {
        let mut m = ConfusionMatrix::default();
        for (p, truth) in preds {
            m.counts[p.argmax_class.index()][truth.index()] += 1.0;
        }
        m
    }

    /// Element-wise mean; the zero matrix for an empty slice.
    pub fn mean(ms: &[ConfusionMatrix]) -> Self {
        let mut out = ConfusionMatrix::default();
        for m in ms {
            for r in 0..NUM_CLASSES {
                for c in 0..NUM_CLASSES {
                    out.counts[r][c] += m.counts[r][c];
                }
            }
        }
        if !ms.is_empty() {
            out.counts.iter_mut().flatten().for_each(|v| *v /= ms.len() as f64);
        }
        out
    }

    pub fn get(&self, predicted: ClassLabel, actual: ClassLabel) -> f64 {
        self.counts[predicted.index()][actual.index()]
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> f64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    /// Test images whose truth is `actual`.
    pub fn column_total(&self, actual: ClassLabel) -> f64 {
        self.counts.iter().map(|row| row[actual.index()]).sum()
    }

    pub fn row_total(&self, predicted: ClassLabel) -> f64 {
        self.counts[predicted.index()].iter().sum()
    }

    pub fn sensitivity(&self, class: ClassLabel) -> Option<f64> {
        percent(self.get(class, class), self.column_total(class))
    }

    pub fn ppv(&self, class: ClassLabel) -> Option<f64> {
        percent(self.get(class, class), self.row_total(class))
    }

    pub fn overall_accuracy(&self) -> Option<f64> {
        percent(self.diagonal(), self.total())
    }

    /// One-vs-rest counts for `class` read off the matrix.
    pub fn binary_counts(&self, class: ClassLabel) -> BinaryCounts {
        let tp = self.get(class, class);
        let col = self.column_total(class);
        let row = self.row_total(class);
        BinaryCounts { tp, fn_: col - tp, fp: row - tp, tn: self.total() - col - row + tp }
    }

    /// Mixed-mode counts read off the matrix, using the same detection rule
    /// as [`binarize_mixed`].
    pub fn mixed_binary_counts(&self, mixed: ClassLabel, mode: MixedMode) -> Result<BinaryCounts, EvaluationError> {
        mixed_component(mixed, mode)?;
        let mut c = BinaryCounts::default();
        for p in ClassLabel::ALL {
            let detected = mixed_detected(mixed, mode, p)?;
            for a in ClassLabel::ALL {
                let v = self.get(p, a);
                match (a == mixed, detected) {
                    (true, true) => c.tp += v,
                    (true, false) => c.fn_ += v,
                    (false, true) => c.fp += v,
                    (false, false) => c.tn += v,
                }
            }
        }
        Ok(c)
    }

    /// Counts of column `actual` whose predicted class satisfies `predicate`.
    pub fn column_where(&self, actual: ClassLabel, predicate: impl Fn(ClassLabel) -> bool) -> f64 {
        ClassLabel::ALL.iter().filter(|&&p| predicate(p)).map(|&p| self.get(p, actual)).sum()
    }

    /// 7×7 layout: a header row and column, the 5×5 body, PPV column on the
    /// right, sensitivity row at the bottom and the overall cell in the corner.
    pub fn cells(&self) -> Vec<Vec<RenderedCell>> {
        let total = self.total();
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}%"));
        let pair = |v: Option<f64>| vec![pct(v), pct(v.map(|x| 100.0 - x))];
        let header = |s: &str| RenderedCell { role: CellRole::Header, lines: vec![s.to_string()] };
        let mut rows = Vec::new();
        let mut top = vec![header("")];
        top.extend(ClassLabel::ALL.iter().map(|c| header(c.token())));
        top.push(header(""));
        rows.push(top);
        for p in ClassLabel::ALL {
            let mut row = vec![header(p.token())];
            for a in ClassLabel::ALL {
                let v = self.get(p, a);
                let share = if total > 0.0 { 100.0 * v / total } else { 0.0 };
                row.push(RenderedCell {
                    role: if p == a { CellRole::Correct } else { CellRole::Incorrect },
                    lines: vec![format!("{v:.1}"), format!("{share:.1}%")],
                });
            }
            row.push(RenderedCell { role: CellRole::RowMarginal, lines: pair(self.ppv(p)) });
            rows.push(row);
        }
        let mut bottom = vec![header("")];
        for a in ClassLabel::ALL {
            bottom.push(RenderedCell { role: CellRole::ColumnMarginal, lines: pair(self.sensitivity(a)) });
        }
        bottom.push(RenderedCell { role: CellRole::Overall, lines: pair(self.overall_accuracy()) });
        rows.push(bottom);
        rows
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for row in self.cells() {
            let line: Vec<String> = row.iter().map(|c| format!("{:>14}", c.lines.join(" "))).collect();
            writeln!(out, "{}", line.join("").trim_end()).unwrap();
        }
        out
    }

    pub fn render_png(&self) -> RgbImage {
        let grid: Vec<Vec<GridCell>> = self
            .cells()
            .into_iter()
            .map(|row| row.into_iter().map(|c| GridCell { fill: c.role.fill(), lines: c.lines }).collect())
            .collect();
        render::render_grid(&grid, 96, 48, 2)
    }
}

// ---------------------------------------------------------------------------
// Aggregation

/// Mean and sample standard deviation of the defined values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Number of defined values.
    pub n: usize,
    /// Number of undefined values left out.
    pub excluded: usize,
    /// Set when only one value was defined; `std` is then 0.
    pub single_sample: bool,
}

pub fn summarize(values: &[Option<f64>]) -> Summary {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let n = defined.len();
    let excluded = values.len() - n;
    if n == 0 {
        return Summary { mean: None, std: None, n, excluded, single_sample: false };
    }
    let mean = defined.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        (defined.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Summary { mean: Some(mean), std: Some(std), n, excluded, single_sample: n == 1 }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: Summary,
    pub auroc: Summary,
    pub sensitivity: Summary,
    pub specificity: Summary,
    pub ppv: Summary,
    pub npv: Summary,
    pub fpr: Summary,
    pub fnr: Summary,
}

impl MetricSummary {
    pub fn from_sets(sets: &[MetricSet]) -> Self {
        let col = |f: fn(&MetricSet) -> Option<f64>| summarize(&sets.iter().map(f).collect::<Vec<_>>());
        MetricSummary {
            accuracy: col(|m| m.accuracy),
            auroc: col(|m| m.auroc),
            sensitivity: col(|m| m.sensitivity),
            specificity: col(|m| m.specificity),
            ppv: col(|m| m.ppv),
            npv: col(|m| m.npv),
            fpr: col(|m| m.fpr),
            fnr: col(|m| m.fnr),
        }
    }

    pub fn values(&self) -> [Summary; 8] {
        [self.accuracy, self.auroc, self.sensitivity, self.specificity, self.ppv, self.npv, self.fpr, self.fnr]
    }
}

// ---------------------------------------------------------------------------
// Per-fold scoring

/// Exact-class one-vs-rest metrics with probability AUROC.
pub fn pure_metrics(preds: &[(Prediction, ClassLabel)], class: ClassLabel) -> Option<MetricSet> {
    let mut m = metrics_from_counts(&binarize(preds, class)).ok()?;
    let scores: Vec<f64> = preds.iter().map(|(p, _)| p.probability(class)).collect();
    let labels: Vec<bool> = preds.iter().map(|(_, t)| *t == class).collect();
    m.auroc = auroc(&scores, &labels).ok();
    Some(m)
}

pub fn mixed_metrics(preds: &[(Prediction, ClassLabel)], mixed: ClassLabel, mode: MixedMode) -> Result<Option<MetricSet>, EvaluationError> {
    let counts = binarize_mixed(preds, mixed, mode)?;
    let Ok(mut m) = metrics_from_counts(&counts) else { return Ok(None) };
    let mut scores = Vec::with_capacity(preds.len());
    for (p, _) in preds {
        scores.push(mixed_score(p, mixed, mode)?);
    }
    let labels: Vec<bool> = preds.iter().map(|(_, t)| *t == mixed).collect();
    m.auroc = auroc(&scores, &labels).ok();
    Ok(Some(m))
}

// ---------------------------------------------------------------------------
// Cross-validation

/// One preprocessed, labelled observation.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub observation_id: String,
    pub stone_id: String,
    pub view: View,
    pub label: ClassLabel,
    pub image: NormalizedImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub test_fraction: f64,
    pub n_repeats: usize,
    pub init_seeds: Vec<u64>,
    /// Root of every split and data-order seed.
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { test_fraction: 0.30, n_repeats: 10, init_seeds: vec![1, 2, 3], seed: 2021 }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<(), EvaluationError> {
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return Err(EvaluationError::InvalidFraction(self.test_fraction));
        }
        if self.n_repeats == 0 {
            return Err(EvaluationError::InvalidConfig("n_repeats must be at least 1".into()));
        }
        if self.init_seeds.is_empty() {
            return Err(EvaluationError::InvalidConfig("init_seeds must not be empty".into()));
        }
        Ok(())
    }

    pub fn split_seed(&self, repeat: usize) -> u64 {
        seed::derive(self.seed, &[0x5011, repeat as u64])
    }

    pub fn train_seed(&self, repeat: usize, init_seed: u64) -> u64 {
        seed::derive(self.seed, &[0x7a1, repeat as u64, init_seed])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPrediction {
    pub observation_id: String,
    pub truth: ClassLabel,
    pub prediction: Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub repeat: usize,
    pub init_seed: u64,
    pub split_seed: u64,
    pub train_seed: u64,
    pub train_ids: Vec<String>,
    pub predictions: Vec<FoldPrediction>,
    pub confusion: ConfusionMatrix,
    pub overall_accuracy: Option<f64>,
}

impl FoldRecord {
    pub fn pairs(&self) -> Vec<(Prediction, ClassLabel)> {
        self.predictions.iter().map(|p| (p.prediction, p.truth)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub class: ClassLabel,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mode: Option<MixedMode>,
    pub metrics: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub view: View,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub cv: CvConfig,
    /// Pure classes, exact-class one-vs-rest.
    pub table1: Vec<MetricRow>,
    /// Mixed classes under each mixed mode.
    pub table2: Vec<MetricRow>,
    /// Mean of the per-fold matrices.
    pub confusion: ConfusionMatrix,
    pub overall_accuracy: Summary,
    pub folds: Vec<FoldRecord>,
}

pub struct CvOutcome {
    pub report: EvaluationReport,
    /// Trained models in fold order.
    pub models: Vec<TrainedModel>,
}

/// Repeated split → train → predict over one view. Augmentation only ever
/// touches the training side; test images are predicted as stored.
pub fn cross_validate(
    items: &[EvalItem],
    view: View,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    cv: &CvConfig,
) -> Result<CvOutcome, EvaluationError> {
    cv.validate()?;
    model_cfg.validate()?;
    train_cfg.validate()?;
    if items.iter().any(|i| i.view != view) {
        return Err(EvaluationError::MixedViews(view));
    }
    let split_items: Vec<SplitItem> = items
        .iter()
        .map(|i| SplitItem { observation_id: i.observation_id.clone(), stone_id: i.stone_id.clone(), label: i.label })
        .collect();
    let index: BTreeMap<&str, &EvalItem> = items.iter().map(|i| (i.observation_id.as_str(), i)).collect();
    let mut folds = Vec::new();
    let mut models = Vec::new();
    for repeat in 0..cv.n_repeats {
        let split_seed = cv.split_seed(repeat);
        let plan = stratified_group_split(&split_items, cv.test_fraction, split_seed)?;
        if plan.train.is_empty() || plan.test.is_empty() {
            return Err(EvaluationError::InsufficientData(format!(
                "{} train / {} test images",
                plan.train.len(),
                plan.test.len()
            )));
        }
        let train_set: Vec<(&NormalizedImage, ClassLabel)> =
            plan.train.iter().map(|id| (&index[id.as_str()].image, index[id.as_str()].label)).collect();
        let test_items: Vec<&EvalItem> = plan.test.iter().map(|id| index[id.as_str()]).collect();
        for &init_seed in &cv.init_seeds {
            let train_seed = cv.train_seed(repeat, init_seed);
            log::info!("{view}: repeat {repeat}, init seed {init_seed}: {} train / {} test", train_set.len(), test_items.len());
            let model = classifier::build_model(&ModelConfig { init_seed, ..*model_cfg })?;
            let model = classifier::train(model, &train_set, train_cfg, train_seed)?;
            let images: Vec<&NormalizedImage> = test_items.iter().map(|i| &i.image).collect();
            let predictions: Vec<FoldPrediction> = model
                .predict_batch(&images)
                .into_iter()
                .zip(&test_items)
                .map(|(prediction, item)| FoldPrediction {
                    observation_id: item.observation_id.clone(),
                    truth: item.label,
                    prediction,
                })
                .collect();
            let pairs: Vec<(Prediction, ClassLabel)> = predictions.iter().map(|p| (p.prediction, p.truth)).collect();
            let confusion = ConfusionMatrix::from_predictions(&pairs);
            folds.push(FoldRecord {
                repeat,
                init_seed,
                split_seed,
                train_seed,
                train_ids: plan.train.clone(),
                predictions,
                overall_accuracy: confusion.overall_accuracy(),
                confusion,
            });
            models.push(model);
        }
    }
    let report = build_report(view, model_cfg, train_cfg, cv, folds)?;
    Ok(CvOutcome { report, models })
}

/// Aggregates fold records into pure- and mixed-class metric rows and the mean confusion matrix.
pub fn build_report(
    view: View,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    cv: &CvConfig,
    folds: Vec<FoldRecord>,
) -> Result<EvaluationReport, EvaluationError> {
    let pairs: Vec<Vec<(Prediction, ClassLabel)>> = folds.iter().map(FoldRecord::pairs).collect();
    let table1 = ClassLabel::PURE
        .iter()
        .map(|&class| {
            let sets: Vec<MetricSet> = pairs.iter().filter_map(|p| pure_metrics(p, class)).collect();
            MetricRow { class, mode: None, metrics: MetricSummary::from_sets(&sets) }
        })
        .collect();
    let mut table2 = Vec::new();
    for &class in &ClassLabel::MIXED {
        for mode in MixedMode::ALL {
            let mut sets = Vec::new();
            for p in &pairs {
                if let Some(m) = mixed_metrics(p, class, mode)? {
                    sets.push(m);
                }
            }
            table2.push(MetricRow { class, mode: Some(mode), metrics: MetricSummary::from_sets(&sets) });
        }
    }
    let confusion = ConfusionMatrix::mean(&folds.iter().map(|f| f.confusion).collect::<Vec<_>>());
    let overall_accuracy = summarize(&folds.iter().map(|f| f.overall_accuracy).collect::<Vec<_>>());
    Ok(EvaluationReport {
        view,
        model: *model_cfg,
        train: *train_cfg,
        cv: cv.clone(),
        table1,
        table2,
        confusion,
        overall_accuracy,
        folds,
    })
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string_pretty(self)
    }

    pub fn table1_csv(&self) -> String {
        table_csv(self.view, &self.table1)
    }

    pub fn table2_csv(&self) -> String {
        table_csv(self.view, &self.table2)
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or(String::new(), |x| format!("{x:.digits$}"))
}

/// One row per class (and mode): mean and sample std of each metric.
/// Undefined values are left empty.
pub fn table_csv(view: View, rows: &[MetricRow]) -> String {
    let mut out = String::from("view,class,mode,repeats,single_sample");
    for name in METRIC_NAMES {
        write!(out, ",{name},{name}_std").unwrap();
    }
    out.push('\n');
    for row in rows {
        let mode = row.mode.map_or("exact", MixedMode::name);
        let n = row.metrics.accuracy.n;
        write!(out, "{view},{},{mode},{n},{}", row.class.token(), row.metrics.accuracy.single_sample).unwrap();
        for (i, s) in row.metrics.values().iter().enumerate() {
            let digits = if i == 1 { 3 } else { 2 };
            write!(out, ",{},{}", fmt_opt(s.mean, digits), fmt_opt(s.std, digits)).unwrap();
        }
        out.push('\n');
    }
    out
}
