//! AUC, stratified cross-validation, ablations, coverage and distribution
//! exports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::domain::{self, LabelTable, PlaceTable, VisitEvent, VisitLog, HOURS_PER_WEEK};
use crate::error::{Error, Result};
use crate::featurizer::{self, Direction, FeatureGroup, FeatureMatrix, FeaturizerConfig};
use crate::learner::{self, LearnerConfig, LinearModel};
use crate::{par, seed};

/// Mann–Whitney AUC over aligned slices; tied scores count half.
pub fn auc_slices(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Validation("scores and labels differ in length".into()));
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels {
            attribute: String::new(),
            msg: format!("AUC needs both classes, got {n_pos} positive and {n_neg} negative"),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Validation("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    // Sum of midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|k| labels[**k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// AUC of `scores` over the ids in `labels`; every labelled id needs a
/// score.
pub fn auc(scores: &BTreeMap<String, f64>, labels: &BTreeMap<String, bool>) -> Result<f64> {
    let mut s = Vec::with_capacity(labels.len());
    let mut y = Vec::with_capacity(labels.len());
    for (id, l) in labels {
        let v = scores
            .get(id)
            .ok_or_else(|| Error::Validation(format!("no score for labelled id `{id}`")))?;
        s.push(*v);
        y.push(*l);
    }
    auc_slices(&s, &y)
}

/// Stratified fold of each item: positives and negatives are shuffled
/// separately and dealt round-robin, negatives continuing where positives
/// stopped.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    let mut pos: Vec<usize> = (0..labels.len()).filter(|i| labels[*i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|i| !labels[*i]).collect();
    if k < 2 || pos.len() < k || neg.len() < k {
        return Err(Error::TooFewExamples {
            k,
            n_pos: pos.len(),
            n_neg: neg.len(),
        });
    }
    let mut rng = seed::rng(seed, "evaluator/folds");
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut folds = vec![0; labels.len()];
    for (slot, i) in pos.iter().chain(&neg).enumerate() {
        folds[*i] = slot % k;
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Steps,
    Embedding,
    Combined,
    Custom,
}

impl FeatureSource {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSource::Steps => "steps",
            FeatureSource::Embedding => "embedding",
            FeatureSource::Combined => "combined",
            FeatureSource::Custom => "custom",
        }
    }
}

impl fmt::Display for FeatureSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "steps" => FeatureSource::Steps,
            "embedding" => FeatureSource::Embedding,
            "combined" => FeatureSource::Combined,
            "custom" => FeatureSource::Custom,
            other => return Err(Error::config("source", format!("unknown feature source `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluatorConfig {
    pub folds: usize,
    pub merge_transitions: bool,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        EvaluatorConfig {
            folds: 10,
            merge_transitions: false,
        }
    }
}

impl EvaluatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::config("folds", "must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub attribute: String,
    pub source: FeatureSource,
    pub fold_aucs: Vec<f64>,
    pub mean_auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Cross-validation output including the per-fold models.
#[derive(Debug, Clone)]
pub struct CvDetail {
    pub report: EvalReport,
    /// Fold of each labelled row, aligned with `rows`.
    pub folds: Vec<usize>,
    /// Labelled matrix rows.
    pub rows: Vec<usize>,
    pub models: Vec<LinearModel>,
}

/// Labelled rows of `matrix` and their stratified folds.
pub fn fold_assignment(matrix: &FeatureMatrix, labels: &LabelTable, k: usize, seed: u64) -> Result<(Vec<usize>, Vec<bool>, Vec<usize>)> {
    let (rows, y) = learner::labelled_rows(matrix, labels);
    let folds = stratified_folds(&y, k, seed)?;
    Ok((rows, y, folds))
}

fn cv_with_folds(
    matrix: &FeatureMatrix,
    attribute: &str,
    rows: &[usize],
    y: &[bool],
    folds: &[usize],
    k: usize,
    config: &LearnerConfig,
    seed: u64,
) -> Result<(Vec<f64>, Vec<LinearModel>)> {
    let results = par::map_range(k, |f| -> Result<(f64, LinearModel)> {
        let (mut train_rows, mut train_y, mut test_rows, mut test_y) = (vec![], vec![], vec![], vec![]);
        for i in 0..rows.len() {
            if folds[i] == f {
                test_rows.push(rows[i]);
                test_y.push(y[i]);
            } else {
                train_rows.push(rows[i]);
                train_y.push(y[i]);
            }
        }
        let selection =
            learner::select_features_rows(matrix, attribute, &train_rows, &train_y, config.max_features, config.mi_bins)?;
        let model = learner::train_rows(
            matrix,
            attribute,
            &train_rows,
            &train_y,
            &selection.kept(),
            config,
            seed::derive_indexed(seed, "evaluator/train", f as u64),
        )?;
        let scores = learner::score_rows(&model, matrix, &test_rows);
        Ok((auc_slices(&scores, &test_y)?, model))
    });
    let mut aucs = Vec::with_capacity(k);
    let mut models = Vec::with_capacity(k);
    for r in results {
        let (a, m) = r?;
        aucs.push(a);
        models.push(m);
    }
    Ok((aucs, models))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn cross_validate_detailed(
    matrix: &FeatureMatrix,
    labels: &LabelTable,
    k: usize,
    config: &LearnerConfig,
    seed: u64,
    source: FeatureSource,
) -> Result<CvDetail> {
    config.validate()?;
    let (rows, y, folds) = fold_assignment(matrix, labels, k, seed)?;
    let (fold_aucs, models) = cv_with_folds(matrix, &labels.attribute, &rows, &y, &folds, k, config, seed)?;
    let n_pos = y.iter().filter(|l| **l).count();
    let report = EvalReport {
        attribute: labels.attribute.clone(),
        source,
        mean_auc: mean(&fold_aucs),
        fold_aucs,
        n_pos,
        n_neg: y.len() - n_pos,
    };
    Ok(CvDetail {
        report,
        folds,
        rows,
        models,
    })
}

/// Stratified k-fold AUC. Selection and standardization are fit on each
/// training split only.
pub fn cross_validate(
    matrix: &FeatureMatrix,
    labels: &LabelTable,
    k: usize,
    config: &LearnerConfig,
    seed: u64,
    source: FeatureSource,
) -> Result<EvalReport> {
    cross_validate_detailed(matrix, labels, k, config, seed, source).map(|d| d.report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub attribute: String,
    /// Mean AUC per group name; `None` when the matrix has no column of that
    /// group.
    pub groups: BTreeMap<String, Option<f64>>,
    pub full_auc: f64,
}

impl AblationReport {
    /// The present group with the highest AUC (ties by name).
    pub fn best_group(&self) -> Option<(&str, f64)> {
        self.groups
            .iter()
            .filter_map(|(g, a)| a.map(|a| (g.as_str(), a)))
            .fold(None, |best, (g, a)| match best {
                Some((_, b)) if b >= a => best,
                _ => Some((g, a)),
            })
    }
}

/// Name under which a group appears in ablation reports.
pub fn ablation_group_name(group: FeatureGroup, merge_transitions: bool) -> &'static str {
    match group {
        FeatureGroup::TransitionPrev | FeatureGroup::TransitionNext if merge_transitions => "transition",
        g => g.as_str(),
    }
}

/// Cross-validate on each group's columns alone and on all columns, reusing
/// one fold assignment.
pub fn ablate(
    matrix: &FeatureMatrix,
    labels: &LabelTable,
    groups: &[FeatureGroup],
    k: usize,
    config: &LearnerConfig,
    seed: u64,
    merge_transitions: bool,
) -> Result<AblationReport> {
    config.validate()?;
    let (rows, y, folds) = fold_assignment(matrix, labels, k, seed)?;
    let mut named: BTreeMap<&'static str, Vec<FeatureGroup>> = BTreeMap::new();
    for g in groups {
        let members = named.entry(ablation_group_name(*g, merge_transitions)).or_default();
        if !members.contains(g) {
            members.push(*g);
        }
    }
    let named: Vec<(&'static str, Vec<FeatureGroup>)> = named.into_iter().collect();
    let per_group = par::map(&named, |(_, members)| -> Result<Option<f64>> {
        let sub = matrix.select_groups(members);
        if sub.n_cols() == 0 {
            return Ok(None);
        }
        let (aucs, _) = cv_with_folds(&sub, &labels.attribute, &rows, &y, &folds, k, config, seed)?;
        Ok(Some(mean(&aucs)))
    });
    let mut out = BTreeMap::new();
    for ((name, _), r) in named.iter().zip(per_group) {
        out.insert(name.to_string(), r?);
    }
    let (full, _) = cv_with_folds(matrix, &labels.attribute, &rows, &y, &folds, k, config, seed)?;
    Ok(AblationReport {
        attribute: labels.attribute.clone(),
        groups: out,
        full_auc: mean(&full),
    })
}

/// Unweighted mean of values; errors on an empty list.
pub fn macro_average_values(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Validation("macro average of an empty list".into()));
    }
    Ok(mean(values))
}

/// Unweighted mean of the reports' mean AUCs.
pub fn macro_average(reports: &[EvalReport]) -> Result<f64> {
    macro_average_values(&reports.iter().map(|r| r.mean_auc).collect::<Vec<_>>())
}

/// `(covered_b - covered_a) / covered_a`, undefined when `a` covers nothing.
pub fn relative_gain(covered_a: usize, covered_b: usize) -> Option<f64> {
    if covered_a == 0 {
        None
    } else {
        Some((covered_b as f64 - covered_a as f64) / covered_a as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageGain {
    pub baseline: String,
    pub source: String,
    pub gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub total: usize,
    pub covered: BTreeMap<String, usize>,
    pub fractions: BTreeMap<String, f64>,
    /// Gain of every source over every other source.
    pub gains: Vec<CoverageGain>,
}

impl CoverageReport {
    pub fn gain(&self, baseline: &str, source: &str) -> Option<f64> {
        self.gains
            .iter()
            .find(|g| g.baseline == baseline && g.source == source)
            .and_then(|g| g.gain)
    }
}

/// Per-source coverage of `places` and pairwise relative gains.
pub fn coverage(places: &PlaceTable, covered_by_source: &BTreeMap<String, BTreeSet<String>>) -> Result<CoverageReport> {
    let total = places.len();
    let mut covered = BTreeMap::new();
    let mut fractions = BTreeMap::new();
    for (source, ids) in covered_by_source {
        if let Some(id) = ids.iter().find(|id| places.lookup(id).is_none()) {
            return Err(Error::Validation(format!("source `{source}` covers unknown place `{id}`")));
        }
        covered.insert(source.clone(), ids.len());
        fractions.insert(source.clone(), ids.len() as f64 / total.max(1) as f64);
    }
    let mut gains = Vec::new();
    for (a, ca) in &covered {
        for (b, cb) in &covered {
            if a != b {
                gains.push(CoverageGain {
                    baseline: a.clone(),
                    source: b.clone(),
                    gain: relative_gain(*ca, *cb),
                });
            }
        }
    }
    Ok(CoverageReport {
        total,
        covered,
        fractions,
        gains,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombineReport {
    pub n_common: usize,
    pub n_only_a: usize,
    pub n_only_b: usize,
}

/// Concatenate the columns of `a` and `b` over the rows present in both, in
/// `a`'s row order.
pub fn combine_sources(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<(FeatureMatrix, CombineReport)> {
    let a_cols = a.column_index();
    if let Some(c) = b.columns().iter().find(|c| a_cols.contains_key(c.name.as_str())) {
        return Err(Error::FeatureCollision(c.name.clone()));
    }
    let b_rows = b.row_index();
    let offset = a.n_cols() as u32;
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for (i, id) in a.row_ids().iter().enumerate() {
        let Some(&j) = b_rows.get(id.as_str()) else { continue };
        let (ac, av) = a.row(i);
        let (bc, bv) = b.row(j);
        let mut e: Vec<(u32, f64)> = ac.iter().copied().zip(av.iter().copied()).collect();
        e.extend(bc.iter().map(|c| c + offset).zip(bv.iter().copied()));
        rows.push(id.clone());
        entries.push(e);
    }
    let report = CombineReport {
        n_common: rows.len(),
        n_only_a: a.n_rows() - rows.len(),
        n_only_b: b.n_rows() - rows.len(),
    };
    if report.n_only_a + report.n_only_b > 0 {
        log::warn!(
            "combining sources: {} rows only in the first and {} only in the second are excluded",
            report.n_only_a,
            report.n_only_b
        );
    }
    if rows.is_empty() {
        log::warn!("combining sources: no common rows, result is empty");
    }
    let columns = a.columns().iter().chain(b.columns()).cloned().collect();
    Ok((FeatureMatrix::from_rows(rows, columns, entries)?, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributionKind {
    Duration,
    DayOfWeek,
    HourOfDay,
    Arrival,
    Occupancy,
    TransitionPrev { window_hours: u32 },
    TransitionNext { window_hours: u32 },
}

impl fmt::Display for DistributionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistributionKind::Duration => f.write_str("duration"),
            DistributionKind::DayOfWeek => f.write_str("day_of_week"),
            DistributionKind::HourOfDay => f.write_str("hour_of_day"),
            DistributionKind::Arrival => f.write_str("arrival"),
            DistributionKind::Occupancy => f.write_str("occupancy"),
            DistributionKind::TransitionPrev { window_hours } => write!(f, "tprev:{window_hours}"),
            DistributionKind::TransitionNext { window_hours } => write!(f, "tnext:{window_hours}"),
        }
    }
}

impl FromStr for DistributionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("distribution", format!("unknown distribution kind `{s}`"));
        Ok(match s {
            "duration" => DistributionKind::Duration,
            "day_of_week" => DistributionKind::DayOfWeek,
            "hour_of_day" => DistributionKind::HourOfDay,
            "arrival" => DistributionKind::Arrival,
            "occupancy" => DistributionKind::Occupancy,
            _ => {
                let (dir, w) = s.split_once(':').ok_or_else(bad)?;
                let window_hours: u32 = w.parse().map_err(|_| bad())?;
                if window_hours == 0 {
                    return Err(bad());
                }
                match dir {
                    "tprev" => DistributionKind::TransitionPrev { window_hours },
                    "tnext" => DistributionKind::TransitionNext { window_hours },
                    _ => return Err(bad()),
                }
            }
        })
    }
}

/// Per-class histogram over pooled visits of labelled places.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub attribute: String,
    pub kind: String,
    pub bins: Vec<String>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub n_positive_visits: usize,
    pub n_negative_visits: usize,
}

impl Distribution {
    /// `0.5 * sum |p - q|`.
    pub fn total_variation(&self) -> f64 {
        0.5 * self.positive.iter().zip(&self.negative).map(|(p, q)| (p - q).abs()).sum::<f64>()
    }

    /// Index of the largest positive-class bin (first on ties).
    pub fn positive_mode(&self) -> usize {
        argmax(&self.positive)
    }

    pub fn negative_mode(&self) -> usize {
        argmax(&self.negative)
    }

    /// `bin,positive_fraction,negative_fraction` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = domain::create_file(path)?;
        let io = |e| Error::io(path, e);
        writeln!(w, "bin,positive_fraction,negative_fraction").map_err(io)?;
        for i in 0..self.bins.len() {
            writeln!(w, "{},{},{}", self.bins[i], self.positive[i], self.negative[i]).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

const DAY_NAMES: [&str; 7] = ["sun", "mon", "tue", "wed", "thu", "fri", "sat"];

fn dense(sparse: Vec<(usize, f64)>, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (i, v) in sparse {
        out[i] = v;
    }
    out
}

fn class_histogram(
    kind: DistributionKind,
    log: &VisitLog,
    places: &PlaceTable,
    indices: &[usize],
    config: &FeaturizerConfig,
) -> Vec<f64> {
    let visits: Vec<VisitEvent> = indices.iter().map(|i| log.events()[*i]).collect();
    let offset = config.utc_offset_seconds;
    let n = visits.len() as f64;
    match kind {
        DistributionKind::Duration => dense(featurizer::duration_features(&visits, config), config.n_duration_bins()),
        DistributionKind::Arrival => dense(featurizer::arrival_features(&visits, offset), HOURS_PER_WEEK),
        DistributionKind::Occupancy => dense(featurizer::occupancy_features(&visits, offset), HOURS_PER_WEEK),
        DistributionKind::DayOfWeek | DistributionKind::HourOfDay => {
            let (bins, f): (usize, fn(usize) -> usize) = match kind {
                DistributionKind::DayOfWeek => (7, |h| h / 24),
                _ => (24, |h| h % 24),
            };
            let mut out = vec![0.0; bins];
            for v in &visits {
                out[f(featurizer::hour_of_week(v.arrival, offset))] += 1.0;
            }
            out.iter_mut().for_each(|x| *x /= n);
            out
        }
        DistributionKind::TransitionPrev { window_hours } | DistributionKind::TransitionNext { window_hours } => {
            let direction = match kind {
                DistributionKind::TransitionPrev { .. } => Direction::Prev,
                _ => Direction::Next,
            };
            let cfg = FeaturizerConfig {
                transition_windows: vec![window_hours],
                ..config.clone()
            };
            dense(
                featurizer::transition_features(log, places, indices, direction, &cfg),
                places.categories().len(),
            )
        }
    }
}

fn bin_names(kind: DistributionKind, places: &PlaceTable, config: &FeaturizerConfig) -> Vec<String> {
    match kind {
        DistributionKind::Duration => {
            let e = &config.duration_bin_edges;
            (0..config.n_duration_bins())
                .map(|i| match i {
                    0 => format!("lt{}", e.first().copied().unwrap_or(0)),
                    i if i == e.len() => format!("ge{}", e[i - 1]),
                    i => format!("{}-{}", e[i - 1], e[i]),
                })
                .collect()
        }
        DistributionKind::DayOfWeek => DAY_NAMES.iter().map(|d| d.to_string()).collect(),
        DistributionKind::HourOfDay => (0..24).map(|h| format!("{h:02}")).collect(),
        DistributionKind::Arrival | DistributionKind::Occupancy => {
            (0..HOURS_PER_WEEK).map(|h| format!("{h:03}")).collect()
        }
        DistributionKind::TransitionPrev { .. } | DistributionKind::TransitionNext { .. } => {
            places.categories().names().to_vec()
        }
    }
}

/// Pool the visits of positive and of negative places and histogram each
/// class. Durations and hours are normalized to sum to 1; occupancy and
/// transitions are fractions of the class's visits.
pub fn export_distributions(
    log: &VisitLog,
    places: &PlaceTable,
    labels: &LabelTable,
    kind: DistributionKind,
    config: &FeaturizerConfig,
) -> Result<Distribution> {
    let by_place = log.events_by_place();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (id, l) in &labels.entries {
        let p = places
            .lookup(id)
            .ok_or_else(|| Error::Validation(format!("label for unknown place `{id}`")))?;
        let target = if *l { &mut pos } else { &mut neg };
        target.extend_from_slice(&by_place[p.index()]);
    }
    for (v, class) in [(&pos, "positive"), (&neg, "negative")] {
        if v.is_empty() {
            return Err(Error::EmptyClass {
                attribute: labels.attribute.clone(),
                class,
            });
        }
    }
    // Keep pooled visit indices in log order so per-person scans stay valid.
    pos.sort_unstable();
    neg.sort_unstable();
    Ok(Distribution {
        attribute: labels.attribute.clone(),
        kind: kind.to_string(),
        bins: bin_names(kind, places, config),
        positive: class_histogram(kind, log, places, &pos, config),
        negative: class_histogram(kind, log, places, &neg, config),
        n_positive_visits: pos.len(),
        n_negative_visits: neg.len(),
    })
}

/// `attribute,source,fold,auc` rows followed by nothing else.
pub fn fold_aucs_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("attribute,source,fold,auc\n");
    for r in reports {
        for (f, a) in r.fold_aucs.iter().enumerate() {
            let _ = writeln!(s, "{},{},{f},{a}", r.attribute, r.source);
        }
    }
    s
}

/// `attribute,source,n_pos,n_neg,mean_auc`, one row per report.
pub fn summary_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("attribute,source,n_pos,n_neg,mean_auc\n");
    for r in reports {
        let _ = writeln!(s, "{},{},{},{},{}", r.attribute, r.source, r.n_pos, r.n_neg, r.mean_auc);
    }
    s
}

/// Fixed-width table with a macro-average footer.
pub fn summary_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.attribute.len()).max().unwrap_or(0).max(9);
    let mut s = format!("{:<width$}  {:<9}  {:>5}  {:>5}  {:>6}\n", "attribute", "source", "pos", "neg", "auc");
    for r in reports {
        let _ = writeln!(
            s,
            "{:<width$}  {:<9}  {:>5}  {:>5}  {:>6.3}",
            r.attribute,
            r.source.as_str(),
            r.n_pos,
            r.n_neg,
            r.mean_auc
        );
    }
    if let Ok(m) = macro_average(reports) {
        let _ = writeln!(s, "{:<width$}  {:<9}  {:>5}  {:>5}  {:>6.3}", "macro-avg", "", "", "", m);
    }
    s
}

/// `attribute,group,mean_auc` rows; absent groups have an empty AUC and the
/// full model is listed as group `all`.
pub fn ablation_csv(reports: &[AblationReport]) -> String {
    let mut s = String::from("attribute,group,mean_auc\n");
    for r in reports {
        for (g, a) in &r.groups {
            let a = a.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{g},{a}", r.attribute);
        }
        let _ = writeln!(s, "{},all,{}", r.attribute, r.full_auc);
    }
    s
}

pub fn ablation_table(reports: &[AblationReport]) -> String {
    let groups: BTreeSet<&String> = reports.iter().flat_map(|r| r.groups.keys()).collect();
    let width = reports.iter().map(|r| r.attribute.len()).max().unwrap_or(0).max(9);
    let mut s = format!("{:<width$}", "attribute");
    for g in &groups {
        let _ = write!(s, "  {:>15}", g);
    }
    let _ = writeln!(s, "  {:>6}", "all");
    for r in reports {
        let _ = write!(s, "{:<width$}", r.attribute);
        for g in &groups {
            match r.groups.get(*g).copied().flatten() {
                Some(a) => {
                    let _ = write!(s, "  {a:>15.3}");
                }
                None => {
                    let _ = write!(s, "  {:>15}", "-");
                }
            }
        }
        let _ = writeln!(s, "  {:>6.3}", r.full_auc);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurizer::FeatureColumn;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn auc_examples() {
        let s: BTreeMap<String, f64> = [("a", 0.9), ("b", 0.8), ("c", 0.1)].map(|(k, v)| (k.to_string(), v)).into();
        let l: BTreeMap<String, bool> = [("a", true), ("b", true), ("c", false)].map(|(k, v)| (k.to_string(), v)).into();
        assert_eq!(auc(&s, &l).unwrap(), 1.0);
        assert_eq!(auc_slices(&[0.3, 0.3], &[true, false]).unwrap(), 0.5);
        assert!(auc_slices(&[0.3, 0.4], &[true, true]).is_err());
    }

    #[test]
    fn folds_are_stratified() {
        let y: Vec<bool> = (0..53).map(|i| i % 4 == 0).collect();
        let f = stratified_folds(&y, 5, 3).unwrap();
        for k in 0..5 {
            let pos = (0..53).filter(|i| f[*i] == k && y[*i]).count();
            let neg = (0..53).filter(|i| f[*i] == k && !y[*i]).count();
            assert!((2..=3).contains(&pos), "{pos}");
            assert!((7..=9).contains(&neg), "{neg}");
        }
        assert!(matches!(
            stratified_folds(&y[..12], 5, 3),
            Err(Error::TooFewExamples { n_pos: 3, .. })
        ));
    }

    #[test]
    fn coverage_gain_arithmetic() {
        assert!((relative_gain(304, 596).unwrap() - 0.960_526_315_789_473_7).abs() < 1e-12);
        assert_eq!(relative_gain(10, 10), Some(0.0));
        assert!(relative_gain(10, 5).unwrap() < 0.0);
        assert_eq!(relative_gain(0, 5), None);
    }

    #[test]
    fn macro_average_basic() {
        assert!((macro_average_values(&[0.8, 0.9]).unwrap() - 0.85).abs() < 1e-15);
        assert_eq!(macro_average_values(&[0.7]).unwrap(), 0.7);
        assert!(macro_average_values(&[]).is_err());
    }

    fn m(rows: Vec<String>, cols: &[&str]) -> FeatureMatrix {
        let columns = cols.iter().map(|c| FeatureColumn::new(c, FeatureGroup::External)).collect();
        let entries = (0..rows.len())
            .map(|i| (0..cols.len()).map(|j| (j as u32, (i + j + 1) as f64)).collect())
            .collect();
        FeatureMatrix::from_rows(rows, columns, entries).unwrap()
    }

    #[test]
    fn combine_examples() {
        let a = m(ids(4), &["a0", "a1"]);
        let b = m(ids(4), &["b0"]);
        let (c, r) = combine_sources(&a, &b).unwrap();
        assert_eq!((c.n_rows(), c.n_cols(), r.n_only_a), (4, 3, 0));
        assert_eq!(c.get(2, 2), b.get(2, 0));

        let b2 = m(vec!["x".into(), "y".into()], &["b0"]);
        let (c, r) = combine_sources(&a, &b2).unwrap();
        assert_eq!((c.n_rows(), r.n_only_a, r.n_only_b), (0, 4, 2));

        let clash = m(ids(2), &["a1"]);
        assert!(matches!(combine_sources(&a, &clash), Err(Error::FeatureCollision(n)) if n == "a1"));
    }

    #[test]
    fn distribution_kind_parse() {
        for s in ["duration", "day_of_week", "hour_of_day", "arrival", "occupancy", "tprev:4", "tnext:24"] {
            assert_eq!(s.parse::<DistributionKind>().unwrap().to_string(), s);
        }
        assert!("tprev:0".parse::<DistributionKind>().is_err());
        assert!("weekly".parse::<DistributionKind>().is_err());
    }
}
