//! Mutual-information feature selection and linear classifiers.
//!
//! Columns are discretized into equal-frequency bins and ranked by their
//! plug-in mutual information with the label. The kept columns are
//! standardized with training statistics and a linear model is fit by
//! stochastic subgradient descent on
//!
//! ```text
//! F(w, b) = (1/n) sum_i c_i loss(y_i (w . x_i + b)) + (l2 / 2) |w|^2
//! ```
//!
//! with hinge or logistic loss, `y_i` in {-1, +1} and per-class weights
//! `c_i = n / (2 n_class)` when class weighting is on. The bias is not
//! regularized.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::domain::LabelTable;
use crate::error::{Error, Result};
use crate::featurizer::{FeatureGroup, FeatureMatrix};
use crate::{par, seed};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Hinge,
    Logistic,
}

impl LossKind {
    /// Loss at margin `m = y * score`.
    pub fn loss(self, m: f64) -> f64 {
        match self {
            LossKind::Hinge => (1.0 - m).max(0.0),
            // ln(1 + e^-m), stable for large |m|.
            LossKind::Logistic => {
                if m > 0.0 {
                    (-m).exp().ln_1p()
                } else {
                    -m + m.exp().ln_1p()
                }
            }
        }
    }

    /// A (sub)derivative of the loss with respect to the margin.
    pub fn dloss(self, m: f64) -> f64 {
        match self {
            LossKind::Hinge => {
                if m < 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::Logistic => {
                let e = (-m.abs()).exp();
                if m >= 0.0 {
                    -e / (1.0 + e)
                } else {
                    -1.0 / (1.0 + e)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub loss: LossKind,
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub mi_bins: usize,
    pub max_features: usize,
    pub class_weighting: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            loss: LossKind::Hinge,
            learning_rate: 1.0,
            l2: 1e-4,
            epochs: 20,
            mi_bins: 8,
            max_features: 10_000,
            class_weighting: true,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive and finite"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::config("l2", "must be finite and non-negative"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.mi_bins < 2 {
            return Err(Error::config("mi_bins", "must be at least 2"));
        }
        if self.max_features == 0 {
            return Err(Error::config("max_features", "must be at least 1"));
        }
        Ok(())
    }
}

/// Equal-frequency bin of every value. Values are ranked (ties in input
/// order); position `r` goes to bin `floor(r * n_bins / n)`, and all copies
/// of a tied value share the bin of the first copy.
pub fn equal_frequency_bins(column: &[f64], n_bins: usize) -> Vec<usize> {
    let n = column.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| column[*a].total_cmp(&column[*b]).then(a.cmp(b)));
    let mut bins = vec![0usize; n];
    let mut current = 0;
    for (r, &i) in order.iter().enumerate() {
        if r == 0 || column[i] != column[order[r - 1]] {
            current = r * n_bins / n;
        }
        bins[i] = current;
    }
    bins
}

/// Plug-in mutual information in nats between an equal-frequency
/// discretization of `column` and the labels.
pub fn mutual_information(column: &[f64], labels: &[bool], n_bins: usize) -> Result<f64> {
    if column.len() != labels.len() {
        return Err(Error::Validation(format!(
            "column has {} values but there are {} labels",
            column.len(),
            labels.len()
        )));
    }
    if n_bins < 2 {
        return Err(Error::config("mi_bins", "must be at least 2"));
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::Validation(
            "mutual information needs both label values".into(),
        ));
    }
    let bins = equal_frequency_bins(column, n_bins);
    Ok(mi_from_bins(&bins, labels, n_bins))
}

fn mi_from_bins(bins: &[usize], labels: &[bool], n_bins: usize) -> f64 {
    let mut table = vec![[0u64; 2]; n_bins];
    for (b, l) in bins.iter().zip(labels) {
        table[*b][usize::from(*l)] += 1;
    }
    let n = bins.len() as f64;
    let ny = [0, 1].map(|y| table.iter().map(|r| r[y]).sum::<u64>() as f64);
    let mut mi = 0.0;
    for row in &table {
        let nx = (row[0] + row[1]) as f64;
        for y in 0..2 {
            let nxy = row[y] as f64;
            if nxy > 0.0 {
                mi += nxy / n * (nxy * n / (nx * ny[y])).ln();
            }
        }
    }
    // Rounding can leave a tiny negative value for independent columns.
    mi.max(0.0)
}

/// Indices of the matrix rows that carry a label, with the labels, in row
/// order.
pub fn labelled_rows(matrix: &FeatureMatrix, labels: &LabelTable) -> (Vec<usize>, Vec<bool>) {
    matrix
        .row_ids()
        .iter()
        .enumerate()
        .filter_map(|(i, id)| labels.entries.get(id).map(|l| (i, *l)))
        .unzip()
}

fn check_classes(attribute: &str, y: &[bool]) -> Result<()> {
    let p = y.iter().filter(|l| **l).count();
    if p == 0 || p == y.len() {
        return Err(Error::DegenerateLabels {
            attribute: attribute.to_string(),
            msg: format!("{p} positive and {} negative labelled rows", y.len() - p),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    pub mi_nats: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub attribute: String,
    /// Every selectable column, by MI descending then name.
    pub ranking: Vec<RankedFeature>,
    pub k_kept: usize,
    /// Embedding columns, kept without ranking.
    pub bypassed: Vec<String>,
}

impl SelectionReport {
    /// Names of all kept columns: the bypassed ones, then the top of the
    /// ranking.
    pub fn kept(&self) -> Vec<String> {
        self.bypassed
            .iter()
            .cloned()
            .chain(self.ranking[..self.k_kept].iter().map(|r| r.name.clone()))
            .collect()
    }
}

/// Rank columns by MI over the labelled rows selected by `rows`.
fn rank_columns(
    matrix: &FeatureMatrix,
    attribute: &str,
    rows: &[usize],
    y: &[bool],
    k: usize,
    n_bins: usize,
) -> Result<SelectionReport> {
    check_classes(attribute, y)?;
    if n_bins < 2 {
        return Err(Error::config("mi_bins", "must be at least 2"));
    }
    let sub = matrix.select_rows(rows);
    let (ranked_cols, bypassed): (Vec<usize>, Vec<usize>) = (0..sub.n_cols())
        .partition(|c| sub.columns()[*c].group != FeatureGroup::Embedding);
    let columns = sub.dense_columns();
    let mut ranking: Vec<RankedFeature> = par::map(&ranked_cols, |c| RankedFeature {
        name: sub.columns()[*c].name.clone(),
        mi_nats: mi_from_bins(&equal_frequency_bins(&columns[*c], n_bins), y, n_bins),
    });
    ranking.sort_by(|a, b| b.mi_nats.total_cmp(&a.mi_nats).then_with(|| a.name.cmp(&b.name)));
    let k_kept = k.min(ranking.len());
    Ok(SelectionReport {
        attribute: attribute.to_string(),
        ranking,
        k_kept,
        bypassed: bypassed.iter().map(|c| sub.columns()[*c].name.clone()).collect(),
    })
}

/// Rank all non-embedding columns of `matrix` by MI with `labels` over the
/// labelled rows and keep the top `k`.
pub fn select_features(matrix: &FeatureMatrix, labels: &LabelTable, k: usize, n_bins: usize) -> Result<SelectionReport> {
    let (rows, y) = labelled_rows(matrix, labels);
    rank_columns(matrix, &labels.attribute, &rows, &y, k, n_bins)
}

/// Selection over an explicit subset of rows with aligned labels.
pub fn select_features_rows(
    matrix: &FeatureMatrix,
    attribute: &str,
    rows: &[usize],
    y: &[bool],
    k: usize,
    n_bins: usize,
) -> Result<SelectionReport> {
    rank_columns(matrix, attribute, rows, y, k, n_bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub format_version: u32,
    pub attribute: String,
    pub loss_kind: LossKind,
    pub features: Vec<String>,
    /// Training means of the raw features.
    pub means: Vec<f64>,
    /// Training standard deviations; 0 marks a constant feature, whose
    /// standardized value is always 0.
    pub scales: Vec<f64>,
    /// Weights on standardized features.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub config: LearnerConfig,
    pub seed: u64,
    /// Training objective after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl LinearModel {
    pub fn weight(&self, feature: &str) -> Option<f64> {
        self.features.iter().position(|f| f == feature).map(|i| self.weights[i])
    }

    fn standardize(&self, j: usize, raw: f64) -> f64 {
        if self.scales[j] == 0.0 {
            0.0
        } else {
            (raw - self.means[j]) / self.scales[j]
        }
    }

    /// Score of a single raw feature vector aligned with `features`.
    pub fn score_raw(&self, raw: &[f64]) -> f64 {
        let mut s = self.bias;
        for (j, x) in raw.iter().enumerate() {
            s += self.weights[j] * self.standardize(j, *x);
        }
        s
    }

    /// Coefficients on raw (unstandardized) features and the matching
    /// intercept: `score = intercept + sum_j coef_j * raw_j`.
    pub fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        let mut intercept = self.bias;
        let coef = (0..self.features.len())
            .map(|j| {
                if self.scales[j] == 0.0 {
                    0.0
                } else {
                    let c = self.weights[j] / self.scales[j];
                    intercept -= c * self.means[j];
                    c
                }
            })
            .collect();
        (coef, intercept)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: LinearModel =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported model format version {}",
                path.display(),
                model.format_version
            )));
        }
        let n = model.features.len();
        if model.means.len() != n || model.scales.len() != n || model.weights.len() != n {
            return Err(Error::Format(format!("{}: inconsistent feature vectors", path.display())));
        }
        Ok(model)
    }
}

/// Dense standardized training problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub n: usize,
    pub d: usize,
    /// Row-major `n x d`.
    pub x: Vec<f64>,
    pub y: Vec<bool>,
    pub class_weights: Vec<f64>,
}

impl Problem {
    pub fn new(n: usize, d: usize, x: Vec<f64>, y: Vec<bool>, class_weighting: bool) -> Self {
        let n_pos = y.iter().filter(|l| **l).count();
        let class_weights = y
            .iter()
            .map(|l| {
                let n_class = if *l { n_pos } else { n - n_pos };
                if class_weighting && n_class > 0 {
                    n as f64 / (2.0 * n_class as f64)
                } else {
                    1.0
                }
            })
            .collect();
        Problem {
            n,
            d,
            x,
            y,
            class_weights,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    /// `F(w, b)` as defined at the top of this module.
    pub fn objective(&self, loss: LossKind, l2: f64, w: &[f64], b: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            let s: f64 = b + self.row(i).iter().zip(w).map(|(x, w)| x * w).sum::<f64>();
            let y = if self.y[i] { 1.0 } else { -1.0 };
            total += self.class_weights[i] * loss.loss(y * s);
        }
        total / self.n as f64 + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Stochastic subgradient descent with step `lr / sqrt(e)` during epoch `e`
/// (1-based) and a seeded shuffle each epoch. The returned model is the
/// average of the iterates over the second half of the epochs. Returns
/// weights, bias and, after every epoch, the objective of the model that
/// would be returned if training stopped there.
pub fn sgd(problem: &Problem, config: &LearnerConfig, seed: u64) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let mut rng = seed::rng(seed, "learner/shuffle");
    let mut w = vec![0.0; problem.d];
    let mut b = 0.0;
    let mut avg_w = vec![0.0; problem.d];
    let mut avg_b = 0.0;
    let mut n_avg = 0.0;
    let avg_from = config.epochs / 2;
    let mut order: Vec<usize> = (0..problem.n).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr = config.learning_rate / ((epoch + 1) as f64).sqrt();
        let decay = 1.0 - lr * config.l2;
        for &i in &order {
            let xi = problem.row(i);
            let y = if problem.y[i] { 1.0 } else { -1.0 };
            let s: f64 = b + xi.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>();
            let g = problem.class_weights[i] * config.loss.dloss(y * s) * y;
            for (wj, xj) in w.iter_mut().zip(xi) {
                *wj = *wj * decay - lr * g * xj;
            }
            b -= lr * g;
            if epoch >= avg_from {
                // Running mean, updated in place.
                n_avg += 1.0;
                for (a, wj) in avg_w.iter_mut().zip(&w) {
                    *a += (wj - *a) / n_avg;
                }
                avg_b += (b - avg_b) / n_avg;
            }
        }
        let f = if epoch >= avg_from {
            problem.objective(config.loss, config.l2, &avg_w, avg_b)
        } else {
            problem.objective(config.loss, config.l2, &w, b)
        };
        if !f.is_finite() || !b.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                learning_rate: config.learning_rate,
            });
        }
        losses.push(f);
    }
    Ok((avg_w, avg_b, losses))
}

/// Train on the rows of `matrix` carrying a label in `labels`, using the
/// columns kept by `selection`.
pub fn train(
    matrix: &FeatureMatrix,
    labels: &LabelTable,
    selection: &SelectionReport,
    config: &LearnerConfig,
    seed: u64,
) -> Result<LinearModel> {
    let (rows, y) = labelled_rows(matrix, labels);
    train_rows(matrix, &labels.attribute, &rows, &y, &selection.kept(), config, seed)
}

/// Train on an explicit row subset with aligned labels.
pub fn train_rows(
    matrix: &FeatureMatrix,
    attribute: &str,
    rows: &[usize],
    y: &[bool],
    features: &[String],
    config: &LearnerConfig,
    seed: u64,
) -> Result<LinearModel> {
    config.validate()?;
    check_classes(attribute, y)?;
    if features.is_empty() {
        return Err(Error::Validation(format!("no features selected for `{attribute}`")));
    }
    let index = matrix.column_index();
    let cols: Vec<usize> = features
        .iter()
        .map(|f| {
            index
                .get(f.as_str())
                .copied()
                .ok_or_else(|| Error::Validation(format!("selected feature `{f}` is not in the matrix")))
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    let d = cols.len();
    let raw = gather(matrix, rows, &cols);

    let mut means = vec![0.0; d];
    let mut scales = vec![0.0; d];
    for j in 0..d {
        let mean = (0..n).map(|i| raw[i * d + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (raw[i * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
        means[j] = mean;
        scales[j] = var.sqrt();
    }
    let x: Vec<f64> = raw
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let j = k % d;
            if scales[j] == 0.0 {
                0.0
            } else {
                (v - means[j]) / scales[j]
            }
        })
        .collect();
    let problem = Problem::new(n, d, x, y.to_vec(), config.class_weighting);
    let (weights, bias, epoch_losses) = sgd(&problem, config, seed)?;
    log::debug!(
        "trained `{attribute}` on {n} rows x {d} features; final objective {:.6}",
        epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(LinearModel {
        format_version: MODEL_FORMAT_VERSION,
        attribute: attribute.to_string(),
        loss_kind: config.loss,
        features: features.to_vec(),
        means,
        scales,
        weights,
        bias,
        config: config.clone(),
        seed,
        epoch_losses,
    })
}

/// Dense `rows.len() x cols.len()` extract of raw values.
fn gather(matrix: &FeatureMatrix, rows: &[usize], cols: &[usize]) -> Vec<f64> {
    let d = cols.len();
    let pos: HashMap<u32, usize> = cols.iter().enumerate().map(|(j, c)| (*c as u32, j)).collect();
    let mut out = vec![0.0; rows.len() * d];
    for (i, r) in rows.iter().enumerate() {
        let (idx, vals) = matrix.row(*r);
        for (c, v) in idx.iter().zip(vals) {
            if let Some(j) = pos.get(c) {
                out[i * d + j] = *v;
            }
        }
    }
    out
}

/// Scores for the given rows; model features absent from the matrix read
/// as raw 0.
pub fn score_rows(model: &LinearModel, matrix: &FeatureMatrix, rows: &[usize]) -> Vec<f64> {
    let index = matrix.column_index();
    let mut present = Vec::new();
    let mut missing = Vec::new();
    for (j, f) in model.features.iter().enumerate() {
        match index.get(f.as_str()) {
            Some(c) => present.push((j, *c)),
            None => missing.push(j),
        }
    }
    let cols: Vec<usize> = present.iter().map(|p| p.1).collect();
    let raw = gather(matrix, rows, &cols);
    let d = cols.len();
    let missing_part: f64 = missing.iter().map(|j| model.weights[*j] * model.standardize(*j, 0.0)).sum();
    (0..rows.len())
        .map(|i| {
            let mut s = model.bias + missing_part;
            for (k, (j, _)) in present.iter().enumerate() {
                s += model.weights[*j] * model.standardize(*j, raw[i * d + k]);
            }
            s
        })
        .collect()
}

/// Score every row of `matrix`.
pub fn predict_scores(model: &LinearModel, matrix: &FeatureMatrix) -> BTreeMap<String, f64> {
    let rows: Vec<usize> = (0..matrix.n_rows()).collect();
    matrix
        .row_ids()
        .iter()
        .cloned()
        .zip(score_rows(model, matrix, &rows))
        .collect()
}

/// The `n` largest positive and `n` most negative weights, ordered by
/// magnitude with ties broken by feature name. Zero weights are in neither
/// list.
pub fn top_features(model: &LinearModel, n: usize) -> (Vec<(String, f64)>, Vec<(String, f64)>) {
    let mut pos: Vec<(String, f64)> = Vec::new();
    let mut neg: Vec<(String, f64)> = Vec::new();
    for (f, w) in model.features.iter().zip(&model.weights) {
        if *w > 0.0 {
            pos.push((f.clone(), *w));
        } else if *w < 0.0 {
            neg.push((f.clone(), *w));
        }
    }
    pos.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    neg.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    pos.truncate(n);
    neg.truncate(n);
    (pos, neg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurizer::FeatureColumn;

    fn matrix(rows: usize, cols: &[&str], f: impl Fn(usize, usize) -> f64) -> FeatureMatrix {
        let columns = cols
            .iter()
            .map(|c| FeatureColumn::new(c, FeatureGroup::External))
            .collect();
        let entries = (0..rows)
            .map(|i| (0..cols.len()).map(|j| (j as u32, f(i, j))).collect())
            .collect();
        FeatureMatrix::from_rows((0..rows).map(|i| format!("r{i}")).collect(), columns, entries).unwrap()
    }

    fn labels(n: usize, f: impl Fn(usize) -> bool) -> LabelTable {
        LabelTable {
            attribute: "a".into(),
            entries: (0..n).map(|i| (format!("r{i}"), f(i))).collect(),
        }
    }

    #[test]
    fn mi_constant_and_perfect() {
        let y: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        assert_eq!(mutual_information(&[3.0; 20], &y, 8).unwrap(), 0.0);
        let x: Vec<f64> = y.iter().map(|l| f64::from(u8::from(*l))).collect();
        let mi = mutual_information(&x, &y, 8).unwrap();
        assert!((mi - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(mutual_information(&x, &[true; 20], 8).is_err());
    }

    #[test]
    fn ties_share_a_bin() {
        let b = equal_frequency_bins(&[1.0, 1.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 4);
        assert_eq!(b, vec![0, 0, 0, 1, 2, 2, 3, 3]);
    }

    #[test]
    fn loss_derivatives() {
        for m in [-30.0, -1.5, 0.0, 0.7, 2.0, 40.0] {
            let h = 1e-6;
            let num = (LossKind::Logistic.loss(m + h) - LossKind::Logistic.loss(m - h)) / (2.0 * h);
            assert!((num - LossKind::Logistic.dloss(m)).abs() < 1e-6);
        }
        assert_eq!(LossKind::Hinge.loss(3.0), 0.0);
        assert_eq!(LossKind::Hinge.loss(-1.0), 2.0);
    }

    #[test]
    fn separable_toy() {
        let m = matrix(40, &["x", "z"], |i, j| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 { s * (1.0 + (i % 5) as f64) } else { (i % 3) as f64 }
        });
        let l = labels(40, |i| i % 2 == 0);
        let sel = select_features(&m, &l, 10, 8).unwrap();
        assert_eq!(sel.ranking[0].name, "x");
        let cfg = LearnerConfig { epochs: 200, ..Default::default() };
        let model = train(&m, &l, &sel, &cfg, 1).unwrap();
        let scores = predict_scores(&model, &m);
        let acc = l.entries.iter().filter(|(id, y)| (scores[*id] > 0.0) == **y).count();
        assert_eq!(acc, 40);
        let losses = &model.epoch_losses;
        assert!(losses.last().unwrap() < &losses[0]);
        assert!(*losses.last().unwrap() < 0.05);
    }

    #[test]
    fn majority_class_without_signal() {
        let m = matrix(30, &["x"], |_, _| 1.0);
        let l = labels(30, |i| i < 20);
        let sel = select_features(&m, &l, 10, 8).unwrap();
        let cfg = LearnerConfig { class_weighting: false, ..Default::default() };
        let model = train(&m, &l, &sel, &cfg, 5).unwrap();
        assert!(predict_scores(&model, &m).values().all(|s| *s > 0.0));
    }

    #[test]
    fn diverges_with_huge_rate() {
        let m = matrix(10, &["x"], |i, _| i as f64 * 1e150);
        let l = labels(10, |i| i < 5);
        let sel = select_features(&m, &l, 10, 8).unwrap();
        let cfg = LearnerConfig { learning_rate: 1e300, loss: LossKind::Logistic, ..Default::default() };
        match train(&m, &l, &sel, &cfg, 0) {
            Err(Error::Diverged { learning_rate, .. }) => assert_eq!(learning_rate, 1e300),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn top_features_partition() {
        let model = LinearModel {
            format_version: MODEL_FORMAT_VERSION,
            attribute: "a".into(),
            loss_kind: LossKind::Hinge,
            features: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            means: vec![0.0; 4],
            scales: vec![1.0; 4],
            weights: vec![2.0, -1.0, 0.5, 0.0],
            bias: 0.0,
            config: LearnerConfig::default(),
            seed: 0,
            epoch_losses: vec![],
        };
        let (p, n) = top_features(&model, 1);
        assert_eq!(p, vec![("a".to_string(), 2.0)]);
        assert_eq!(n, vec![("b".to_string(), -1.0)]);
        let (p, n) = top_features(&model, 10);
        assert_eq!(p.len() + n.len(), 3);
    }

    #[test]
    fn model_round_trip_bit_exact() {
        let m = matrix(20, &["x", "y"], |i, j| ((i * 7 + j * 3) % 11) as f64 / 3.0);
        let l = labels(20, |i| i % 3 == 0);
        let sel = select_features(&m, &l, 10, 8).unwrap();
        let model = train(&m, &l, &sel, &LearnerConfig::default(), 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        model.save(&p).unwrap();
        assert_eq!(LinearModel::load(&p).unwrap(), model);
    }
}
