//! Place embeddings from a weighted person × place co-visit matrix.
//!
//! Cell weights are visit counts capped at `cap` and divided by the number
//! of other distinct places the same person visited within `radius_km` of
//! the place (floored at 1), which discounts places in a person's familiar
//! area. The matrix is factorized with weighted alternating least squares:
//!
//! ```text
//! sum_ij W_ij (L_ij - u_i . v_j)^2 + lambda (sum_i |u_i|^2 + sum_j |v_j|^2)
//! ```
//!
//! where unobserved cells have `L = 0` and a uniform weight `w0`. Each
//! half-sweep solves every row's k × k normal equations exactly, so the
//! objective never increases. The same objective with unsquared norms in the
//! penalty is tracked alongside for reporting.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{self, PlaceTable, VisitLog};
use crate::error::{Error, Result};
use crate::featurizer::{FeatureColumn, FeatureGroup, FeatureMatrix, FeatureName};
use crate::{par, seed};

/// Diagonal ridge added to the normal equations when `lambda == 0`.
pub const RIDGE_GUARD: f64 = 1e-12;
const SINGULAR_RTOL: f64 = 1e-13;
const INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovisitEntry {
    pub place: u32,
    pub visits: u32,
    pub weight: f64,
}

/// Persons × places boolean visit matrix with per-cell confidence weights.
/// Only observed cells are stored (`L = 1` there).
#[derive(Debug, Clone, PartialEq)]
pub struct CovisitMatrix {
    persons: Vec<String>,
    places: Vec<String>,
    row_ptr: Vec<usize>,
    entries: Vec<CovisitEntry>,
}

impl CovisitMatrix {
    pub fn n_persons(&self) -> usize {
        self.persons.len()
    }

    pub fn n_places(&self) -> usize {
        self.places.len()
    }

    pub fn person_ids(&self) -> &[String] {
        &self.persons
    }

    pub fn place_ids(&self) -> &[String] {
        &self.places
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Observed cells of one person, ascending by place.
    pub fn row(&self, person: usize) -> &[CovisitEntry] {
        &self.entries[self.row_ptr[person]..self.row_ptr[person + 1]]
    }

    /// Weight of cell `(person, place)`, `None` if unobserved.
    pub fn weight(&self, person: usize, place: usize) -> Option<f64> {
        let row = self.row(person);
        row.binary_search_by_key(&(place as u32), |e| e.place)
            .ok()
            .map(|k| row[k].weight)
    }

    /// The factorization input: observed cells with `L = 1`, unobserved
    /// cells with weight `implicit_weight`.
    pub fn to_weighted(&self, implicit_weight: f64) -> Result<WeightedMatrix> {
        let mut triplets = Vec::with_capacity(self.entries.len());
        for i in 0..self.n_persons() {
            for e in self.row(i) {
                triplets.push((i, e.place as usize, 1.0, e.weight));
            }
        }
        WeightedMatrix::from_triplets(self.n_persons(), self.n_places(), triplets, implicit_weight)
    }
}

/// Build the co-visit matrix. Columns are all places of `places`, in table
/// order; rows are the log's persons.
pub fn build_covisit_matrix(
    log: &VisitLog,
    places: &PlaceTable,
    cap: u32,
    radius_km: f64,
) -> Result<CovisitMatrix> {
    if cap == 0 {
        return Err(Error::config("cap", "must be at least 1"));
    }
    if !(radius_km > 0.0 && radius_km.is_finite()) {
        return Err(Error::config("radius_km", "must be positive and finite"));
    }
    let persons = log.persons().to_vec();
    let rows = par::map_range(persons.len(), |i| {
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for e in log.person_events(i as u32) {
            *counts.entry(e.place.0).or_default() += 1;
        }
        let visited: Vec<(u32, u32)> = counts.into_iter().collect();
        visited
            .iter()
            .map(|&(j, visits)| {
                let pj = &places.places()[j as usize];
                let n_other = visited
                    .iter()
                    .filter(|(k, _)| *k != j && places.places()[*k as usize].distance_km(pj) <= radius_km)
                    .count();
                CovisitEntry {
                    place: j,
                    visits,
                    weight: f64::from(visits.min(cap)) / n_other.max(1) as f64,
                }
            })
            .collect::<Vec<_>>()
    });
    let mut row_ptr = Vec::with_capacity(persons.len() + 1);
    row_ptr.push(0);
    let mut entries = Vec::new();
    for r in rows {
        entries.extend(r);
        row_ptr.push(entries.len());
    }
    Ok(CovisitMatrix {
        persons,
        places: places.places().iter().map(|p| p.place_id.clone()).collect(),
        row_ptr,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    index: u32,
    value: f64,
    weight: f64,
}

/// A real matrix with per-cell weights. Stored cells carry an explicit value
/// and weight; every other cell has value 0 and weight `implicit_weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMatrix {
    n_rows: usize,
    n_cols: usize,
    implicit_weight: f64,
    row_ptr: Vec<usize>,
    by_row: Vec<Cell>,
    col_ptr: Vec<usize>,
    by_col: Vec<Cell>,
}

impl WeightedMatrix {
    /// `triplets` are `(row, col, value, weight)`.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64, f64)>,
        implicit_weight: f64,
    ) -> Result<Self> {
        if !(implicit_weight >= 0.0 && implicit_weight.is_finite()) {
            return Err(Error::config("implicit_weight", "must be finite and non-negative"));
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        for w in triplets.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(Error::Validation(format!("duplicate cell ({}, {})", w[0].0, w[0].1)));
            }
        }
        for &(i, j, v, w) in &triplets {
            if i >= n_rows || j >= n_cols {
                return Err(Error::Validation(format!("cell ({i}, {j}) out of bounds")));
            }
            if !v.is_finite() || !(w > 0.0 && w.is_finite()) {
                return Err(Error::Validation(format!(
                    "cell ({i}, {j}) needs a finite value and positive weight"
                )));
            }
        }
        let (row_ptr, by_row) = compress(n_rows, triplets.iter().map(|t| (t.0, t.1, t.2, t.3)));
        let mut by_col_t = triplets.clone();
        by_col_t.sort_by_key(|t| (t.1, t.0));
        let (col_ptr, by_col) = compress(n_cols, by_col_t.iter().map(|t| (t.1, t.0, t.2, t.3)));
        Ok(WeightedMatrix {
            n_rows,
            n_cols,
            implicit_weight,
            row_ptr,
            by_row,
            col_ptr,
            by_col,
        })
    }

    /// Every cell stored with the given weight matrix (row-major).
    pub fn dense(n_rows: usize, n_cols: usize, values: &[f64], weights: &[f64]) -> Result<Self> {
        let triplets = (0..n_rows * n_cols)
            .map(|k| (k / n_cols, k % n_cols, values[k], weights[k]))
            .collect();
        Self::from_triplets(n_rows, n_cols, triplets, 0.0)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn implicit_weight(&self) -> f64 {
        self.implicit_weight
    }

    /// `(value, weight)` of a cell.
    pub fn cell(&self, i: usize, j: usize) -> (f64, f64) {
        let row = &self.by_row[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search_by_key(&(j as u32), |c| c.index) {
            Ok(k) => (row[k].value, row[k].weight),
            Err(_) => (0.0, self.implicit_weight),
        }
    }

    fn row_cells(&self, i: usize) -> &[Cell] {
        &self.by_row[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    fn col_cells(&self, j: usize) -> &[Cell] {
        &self.by_col[self.col_ptr[j]..self.col_ptr[j + 1]]
    }
}

fn compress(n: usize, it: impl Iterator<Item = (usize, usize, f64, f64)>) -> (Vec<usize>, Vec<Cell>) {
    let mut ptr = vec![0usize; n + 1];
    let mut cells = Vec::new();
    for (outer, inner, value, weight) in it {
        ptr[outer + 1] += 1;
        cells.push(Cell {
            index: inner as u32,
            value,
            weight,
        });
    }
    for k in 0..n {
        ptr[k + 1] += ptr[k];
    }
    (ptr, cells)
}

/// Row-major dense matrix of latent factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    rows: usize,
    rank: usize,
    data: Vec<f64>,
}

impl FactorMatrix {
    pub fn zeros(rows: usize, rank: usize) -> Self {
        FactorMatrix {
            rows,
            rank,
            data: vec![0.0; rows * rank],
        }
    }

    pub fn from_vec(rows: usize, rank: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * rank {
            return Err(Error::Validation(format!(
                "factor data has {} entries, expected {rows} x {rank}",
                data.len()
            )));
        }
        Ok(FactorMatrix { rows, rank, data })
    }

    fn uniform(rows: usize, rank: usize, rng: &mut impl Rng) -> Self {
        let data = (0..rows * rank)
            .map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        FactorMatrix { rows, rank, data }
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.rank..(i + 1) * self.rank]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.rank..(i + 1) * self.rank]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `XᵀX`, accumulated in row order.
    fn gram(&self) -> Vec<f64> {
        let k = self.rank;
        let mut g = vec![0.0; k * k];
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..k {
                let ra = r[a];
                for b in a..k {
                    g[a * k + b] += ra * r[b];
                }
            }
        }
        mirror_upper(&mut g, k);
        g
    }

    fn squared_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    fn row_norm_sum(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum()
    }
}

fn mirror_upper(m: &mut [f64], k: usize) {
    for a in 0..k {
        for b in 0..a {
            m[a * k + b] = m[b * k + a];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalsConfig {
    pub rank: usize,
    pub lambda: f64,
    pub max_sweeps: usize,
    /// Stop when the relative objective improvement of a sweep drops below
    /// this.
    pub tol: f64,
    /// Weight `w0` of unobserved cells.
    pub implicit_weight: f64,
    pub seed: u64,
}

impl Default for WalsConfig {
    fn default() -> Self {
        WalsConfig {
            rank: 64,
            lambda: 1.0,
            max_sweeps: 15,
            tol: 1e-4,
            implicit_weight: 0.05,
            seed: 0,
        }
    }
}

impl WalsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::config("rank", "must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be finite and non-negative"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("tol", "must be positive"));
        }
        if !(self.implicit_weight >= 0.0 && self.implicit_weight.is_finite()) {
            return Err(Error::config("implicit_weight", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Objective value under both penalty forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    /// Weighted squared reconstruction error.
    pub reconstruction: f64,
    /// `reconstruction + lambda * (sum |u_i|^2 + sum |v_j|^2)`; the quantity
    /// the alternating solves minimize.
    pub squared_reg: f64,
    /// `reconstruction + lambda * (sum |u_i| + sum |v_j|)`.
    pub norm_reg: f64,
}

/// Alternating solver over a fixed weighted matrix.
#[derive(Debug, Clone)]
pub struct WalsSolver<'a> {
    matrix: &'a WeightedMatrix,
    rank: usize,
    lambda: f64,
}

impl<'a> WalsSolver<'a> {
    pub fn new(matrix: &'a WeightedMatrix, rank: usize, lambda: f64) -> Self {
        WalsSolver {
            matrix,
            rank,
            lambda,
        }
    }

    /// Exact minimizer of the objective over row factors with column factors
    /// `v` fixed.
    pub fn solve_rows(&self, v: &FactorMatrix) -> Result<FactorMatrix> {
        self.solve_side(v, self.matrix.n_rows, "row", |i| self.matrix.row_cells(i))
    }

    /// Exact minimizer over column factors with row factors `u` fixed.
    pub fn solve_cols(&self, u: &FactorMatrix) -> Result<FactorMatrix> {
        self.solve_side(u, self.matrix.n_cols, "column", |j| self.matrix.col_cells(j))
    }

    fn solve_side<'c>(
        &self,
        other: &FactorMatrix,
        n_target: usize,
        side: &'static str,
        cells: impl Fn(usize) -> &'c [Cell] + Sync + Send,
    ) -> Result<FactorMatrix>
    where
        'a: 'c,
    {
        let k = self.rank;
        let w0 = self.matrix.implicit_weight;
        let ridge = if self.lambda == 0.0 { RIDGE_GUARD } else { self.lambda };
        let base: Vec<f64> = if w0 > 0.0 {
            other.gram().into_iter().map(|g| g * w0).collect()
        } else {
            vec![0.0; k * k]
        };

        let solved = par::map_range(n_target, |t| -> Result<Vec<f64>> {
            let mut a = base.clone();
            let mut b = vec![0.0; k];
            for c in cells(t) {
                let o = other.row(c.index as usize);
                let extra = c.weight - w0;
                for p in 0..k {
                    let op = extra * o[p];
                    for q in p..k {
                        a[p * k + q] += op * o[q];
                    }
                    b[p] += c.weight * c.value * o[p];
                }
            }
            mirror_upper(&mut a, k);
            for p in 0..k {
                a[p * k + p] += ridge;
            }
            cholesky_solve(&mut a, &mut b, k, self.lambda).map_err(|()| Error::Singular {
                side,
                index: t,
                lambda: self.lambda,
            })?;
            Ok(b)
        });

        let mut out = FactorMatrix::zeros(n_target, k);
        for (t, row) in solved.into_iter().enumerate() {
            out.row_mut(t).copy_from_slice(&row?);
        }
        Ok(out)
    }

    pub fn objective(&self, u: &FactorMatrix, v: &FactorMatrix) -> Objective {
        let m = self.matrix;
        let w0 = m.implicit_weight;
        // Stored cells: W (L - p)^2; the implicit part is w0 * (sum over all
        // cells of p^2 minus the stored ones).
        let per_row: Vec<(f64, f64)> = par::map_range(m.n_rows, |i| {
            let ui = u.row(i);
            let mut explicit = 0.0;
            let mut stored_sq = 0.0;
            for c in m.row_cells(i) {
                let p = dot(ui, v.row(c.index as usize));
                let r = c.value - p;
                explicit += c.weight * r * r;
                stored_sq += p * p;
            }
            (explicit, stored_sq)
        });
        let mut explicit = 0.0;
        let mut stored_sq = 0.0;
        for (e, s) in per_row {
            explicit += e;
            stored_sq += s;
        }
        let implicit = if w0 > 0.0 {
            let gu = u.gram();
            let gv = v.gram();
            let all_sq: f64 = gu.iter().zip(&gv).map(|(a, b)| a * b).sum();
            w0 * (all_sq - stored_sq)
        } else {
            0.0
        };
        let reconstruction = explicit + implicit;
        Objective {
            reconstruction,
            squared_reg: reconstruction + self.lambda * (u.squared_norm() + v.squared_norm()),
            norm_reg: reconstruction + self.lambda * (u.row_norm_sum() + v.row_norm_sum()),
        }
    }
}

/// In-place Cholesky factorization and solve of the SPD system `a x = b`;
/// `b` is overwritten with `x`. Fails on a non-positive or numerically
/// negligible pivot.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], k: usize, lambda: f64) -> Result<(), ()> {
    let max_diag = (0..k).map(|p| a[p * k + p]).fold(0.0f64, f64::max);
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= a[j * k + p] * a[j * k + p];
        }
        let negligible = d <= SINGULAR_RTOL * max_diag || (lambda == 0.0 && d <= 10.0 * RIDGE_GUARD);
        if !d.is_finite() || d <= 0.0 || negligible {
            return Err(());
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in j + 1..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = s / d;
        }
    }
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= a[i * k + p] * b[p];
        }
        b[i] = s / a[i * k + i];
    }
    for i in (0..k).rev() {
        let mut s = b[i];
        for p in i + 1..k {
            s -= a[p * k + i] * b[p];
        }
        b[i] = s / a[i * k + i];
    }
    if b.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFactors {
    pub person_ids: Vec<String>,
    pub place_ids: Vec<String>,
    /// Persons × rank.
    pub u: FactorMatrix,
    /// Places × rank.
    pub v: FactorMatrix,
    pub rank: usize,
    pub lambda: f64,
    pub implicit_weight: f64,
    pub seed: u64,
    /// Minimized (squared-penalty) objective at initialization.
    pub initial_loss: f64,
    /// Minimized objective after each full sweep; non-increasing.
    pub sweep_losses: Vec<f64>,
    /// Unsquared-penalty objective after each sweep.
    pub sweep_losses_norm_reg: Vec<f64>,
    pub final_loss: f64,
    pub final_loss_norm_reg: f64,
}

/// Factorize with WALS from a seeded uniform initialization.
pub fn wals_factorize(matrix: &WeightedMatrix, config: &WalsConfig) -> Result<EmbeddingFactors> {
    config.validate()?;
    let mut rng = seed::rng(config.seed, "embedder/init");
    let mut u = FactorMatrix::uniform(matrix.n_rows, config.rank, &mut rng);
    let mut v = FactorMatrix::uniform(matrix.n_cols, config.rank, &mut rng);
    let solver = WalsSolver::new(matrix, config.rank, config.lambda);

    let initial = solver.objective(&u, &v);
    let mut prev = initial.squared_reg;
    let mut sweep_losses = Vec::new();
    let mut sweep_losses_norm_reg = Vec::new();
    for sweep in 0..config.max_sweeps {
        u = solver.solve_rows(&v)?;
        v = solver.solve_cols(&u)?;
        let obj = solver.objective(&u, &v);
        sweep_losses.push(obj.squared_reg);
        sweep_losses_norm_reg.push(obj.norm_reg);
        log::debug!(
            "wals sweep {}: objective {:.6e} (norm-penalty form {:.6e})",
            sweep + 1,
            obj.squared_reg,
            obj.norm_reg
        );
        let improvement = (prev - obj.squared_reg) / prev.abs().max(f64::MIN_POSITIVE);
        prev = obj.squared_reg;
        if improvement < config.tol {
            break;
        }
    }
    let (final_loss, final_loss_norm_reg) = match (sweep_losses.last(), sweep_losses_norm_reg.last()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => (initial.squared_reg, initial.norm_reg),
    };
    Ok(EmbeddingFactors {
        person_ids: Vec::new(),
        place_ids: Vec::new(),
        u,
        v,
        rank: config.rank,
        lambda: config.lambda,
        implicit_weight: matrix.implicit_weight,
        seed: config.seed,
        initial_loss: initial.squared_reg,
        sweep_losses,
        sweep_losses_norm_reg,
        final_loss,
        final_loss_norm_reg,
    })
}

/// Build the co-visit matrix's weighted form and factorize it, attaching
/// person and place ids.
pub fn embed_covisits(covisits: &CovisitMatrix, config: &WalsConfig) -> Result<EmbeddingFactors> {
    let weighted = covisits.to_weighted(config.implicit_weight)?;
    let mut f = wals_factorize(&weighted, config)?;
    f.person_ids = covisits.person_ids().to_vec();
    f.place_ids = covisits.place_ids().to_vec();
    Ok(f)
}

/// One row per place, columns `emb:0..rank`, values copied from `V`.
pub fn place_embedding_features(f: &EmbeddingFactors) -> Result<FeatureMatrix> {
    let columns = (0..f.rank)
        .map(|k| FeatureColumn::new(FeatureName::Embedding(k), FeatureGroup::Embedding))
        .collect();
    let rows = if f.place_ids.len() == f.v.n_rows() {
        f.place_ids.clone()
    } else {
        (0..f.v.n_rows()).map(|j| format!("{j}")).collect()
    };
    let entries = (0..f.v.n_rows())
        .map(|j| f.v.row(j).iter().enumerate().map(|(k, x)| (k as u32, *x)).collect())
        .collect();
    FeatureMatrix::from_rows(rows, columns, entries)
}

#[derive(Debug, Serialize, Deserialize)]
struct FactorMeta {
    format_version: u32,
    rank: usize,
    lambda: f64,
    implicit_weight: f64,
    seed: u64,
    initial_loss: f64,
    sweep_losses: Vec<f64>,
    sweep_losses_norm_reg: Vec<f64>,
    final_loss: f64,
    final_loss_norm_reg: f64,
}

const FACTOR_FORMAT_VERSION: u32 = 1;

fn write_matrix(path: &Path, m: &FactorMatrix) -> Result<()> {
    let mut w = domain::create_file(path)?;
    let io = |e| Error::io(path, e);
    for i in 0..m.n_rows() {
        let line: Vec<String> = m.row(i).iter().map(|x| x.to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn write_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut w = domain::csv_writer(path)?;
    domain::csv_row(&mut w, path, ["index", "id"])?;
    for (i, id) in ids.iter().enumerate() {
        domain::csv_row(&mut w, path, [i.to_string().as_str(), id])?;
    }
    domain::csv_finish(w, path)
}

/// Write `person_factors.csv`, `place_factors.csv` (one comma-separated row
/// per id), the `person_ids.csv`/`place_ids.csv` id maps, and
/// `factors.json` metadata into `dir`.
pub fn write_factors(dir: impl AsRef<Path>, f: &EmbeddingFactors) -> Result<()> {
    let dir = dir.as_ref();
    write_matrix(&dir.join("person_factors.csv"), &f.u)?;
    write_matrix(&dir.join("place_factors.csv"), &f.v)?;
    write_ids(&dir.join("person_ids.csv"), &f.person_ids)?;
    write_ids(&dir.join("place_ids.csv"), &f.place_ids)?;
    let meta = FactorMeta {
        format_version: FACTOR_FORMAT_VERSION,
        rank: f.rank,
        lambda: f.lambda,
        implicit_weight: f.implicit_weight,
        seed: f.seed,
        initial_loss: f.initial_loss,
        sweep_losses: f.sweep_losses.clone(),
        sweep_losses_norm_reg: f.sweep_losses_norm_reg.clone(),
        final_loss: f.final_loss,
        final_loss_norm_reg: f.final_loss_norm_reg,
    };
    let path = dir.join("factors.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn read_matrix(path: &Path, rank: usize) -> Result<FactorMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                msg: "malformed factor value".into(),
            })?;
        if vals.len() != rank {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                msg: format!("expected {rank} values, got {}", vals.len()),
            });
        }
        data.extend(vals);
        rows += 1;
    }
    FactorMatrix::from_vec(rows, rank, data)
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    let mut rdr = domain::open_reader(path)?;
    domain::check_header(&mut rdr, path, &["index", "id"])?;
    domain::records(&mut rdr, path, 2)
        .enumerate()
        .map(|(i, row)| {
            let (line, rec) = row?;
            if rec[0].parse::<usize>().ok() != Some(i) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: "indices must be 0..n in order".into(),
                });
            }
            Ok(rec[1].to_string())
        })
        .collect()
}

pub fn read_factors(dir: impl AsRef<Path>) -> Result<EmbeddingFactors> {
    let dir = dir.as_ref();
    let meta_path = dir.join("factors.json");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: FactorMeta = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
    if meta.format_version != FACTOR_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported factor format version {}",
            meta.format_version
        )));
    }
    let u = read_matrix(&dir.join("person_factors.csv"), meta.rank)?;
    let v = read_matrix(&dir.join("place_factors.csv"), meta.rank)?;
    let person_ids = read_ids(&dir.join("person_ids.csv"))?;
    let place_ids = read_ids(&dir.join("place_ids.csv"))?;
    if person_ids.len() != u.n_rows() || place_ids.len() != v.n_rows() {
        return Err(Error::Format("id map length does not match factor rows".into()));
    }
    Ok(EmbeddingFactors {
        person_ids,
        place_ids,
        u,
        v,
        rank: meta.rank,
        lambda: meta.lambda,
        implicit_weight: meta.implicit_weight,
        seed: meta.seed,
        initial_loss: meta.initial_loss,
        sweep_losses: meta.sweep_losses,
        sweep_losses_norm_reg: meta.sweep_losses_norm_reg,
        final_loss: meta.final_loss,
        final_loss_norm_reg: meta.final_loss_norm_reg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{PlaceRecord, VisitRecord};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world(coords: &[(f64, f64)], visits: &[(&str, usize, u32)]) -> (PlaceTable, VisitLog) {
        let places = PlaceTable::new(
            coords
                .iter()
                .enumerate()
                .map(|(i, (x, y))| PlaceRecord {
                    place_id: format!("P{i}"),
                    category: "cafe".into(),
                    x: *x,
                    y: *y,
                })
                .collect(),
        )
        .unwrap();
        let mut recs = Vec::new();
        let mut t = 0;
        for (person, place, times) in visits {
            for _ in 0..*times {
                recs.push(VisitRecord {
                    person_id: person.to_string(),
                    place_id: format!("P{place}"),
                    arrival: t,
                    duration_min: 10,
                    line: 0,
                });
                t += 3600;
            }
        }
        let log = VisitLog::from_records(recs, &places).unwrap();
        (places, log)
    }

    #[test]
    fn weight_divisor_floor() {
        let (places, log) = world(&[(0.0, 0.0), (10.0, 0.0)], &[("a", 0, 3), ("a", 1, 1)]);
        let m = build_covisit_matrix(&log, &places, 10, 2.0).unwrap();
        assert_eq!(m.weight(0, 0), Some(3.0));
        assert_eq!(m.weight(0, 1), Some(1.0));
    }

    #[test]
    fn weight_cap_then_divide() {
        let (places, log) = world(
            &[(0.0, 0.0), (1.0, 0.0), (0.0, 1.5), (3.0, 0.0)],
            &[("a", 0, 15), ("a", 1, 1), ("a", 2, 1), ("a", 3, 2)],
        );
        let m = build_covisit_matrix(&log, &places, 10, 2.0).unwrap();
        assert_eq!(m.weight(0, 0), Some(5.0));
        // P3 is 2 km from P1 (inclusive) and 3 km from P0.
        assert_eq!(m.weight(0, 3), Some(2.0));
        assert_eq!(m.nnz(), 4);
        assert!(build_covisit_matrix(&log, &places, 0, 2.0).is_err());
        assert!(build_covisit_matrix(&log, &places, 1, 0.0).is_err());
    }

    #[test]
    fn one_by_one_closed_form() {
        let m = WeightedMatrix::dense(1, 1, &[1.0], &[1.0]).unwrap();
        let solver = WalsSolver::new(&m, 1, 0.0);
        let u = FactorMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        let v = solver.solve_cols(&u).unwrap();
        assert!((v.row(0)[0] - 1.0).abs() < 1e-9);
        assert!(solver.objective(&u, &v).squared_reg < 1e-18);
    }

    #[test]
    fn rank_one_exact() {
        let uu = [1.0, -2.0, 0.5, 3.0];
        let vv = [2.0, 1.0, -1.0];
        let vals: Vec<f64> = uu.iter().flat_map(|a| vv.iter().map(move |b| a * b)).collect();
        let m = WeightedMatrix::dense(4, 3, &vals, &[1.0; 12]).unwrap();
        let cfg = WalsConfig { rank: 1, lambda: 0.0, max_sweeps: 50, tol: 1e-15, implicit_weight: 0.0, seed: 3 };
        let f = wals_factorize(&m, &cfg).unwrap();
        assert!(f.final_loss < 1e-8, "{}", f.final_loss);
    }

    #[test]
    fn singular_without_regularization() {
        // Two latent dimensions but a single observed cell: rank-deficient.
        let m = WeightedMatrix::dense(1, 1, &[1.0], &[1.0]).unwrap();
        let cfg = WalsConfig { rank: 2, lambda: 0.0, max_sweeps: 5, tol: 1e-9, implicit_weight: 0.0, seed: 1 };
        let err = wals_factorize(&m, &cfg).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
        assert!(err.to_string().contains("lambda > 0"));
        let ok = WalsConfig { lambda: 0.1, ..cfg };
        assert!(wals_factorize(&m, &ok).is_ok());
    }

    fn dense_objective(m: &WeightedMatrix, u: &FactorMatrix, v: &FactorMatrix, lambda: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..m.n_rows() {
            for j in 0..m.n_cols() {
                let (l, w) = m.cell(i, j);
                let p: f64 = (0..u.rank()).map(|k| u.row(i)[k] * v.row(j)[k]).sum();
                total += w * (l - p) * (l - p);
            }
        }
        let reg: f64 = u.as_slice().iter().chain(v.as_slice()).map(|x| x * x).sum();
        total + lambda * reg
    }

    #[test]
    fn implicit_objective_matches_dense_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut trip = Vec::new();
        for i in 0..12 {
            for j in 0..9 {
                if rng.random_bool(0.3) {
                    trip.push((i, j, 1.0, rng.random_range(0.1..5.0)));
                }
            }
        }
        let m = WeightedMatrix::from_triplets(12, 9, trip, 0.05).unwrap();
        let u = FactorMatrix::uniform(12, 3, &mut rng);
        let v = FactorMatrix::uniform(9, 3, &mut rng);
        let s = WalsSolver::new(&m, 3, 0.2);
        let fast = s.objective(&u, &v).squared_reg;
        let slow = dense_objective(&m, &u, &v, 0.2);
        assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
    }

    #[test]
    fn factors_round_trip() {
        let (places, log) = world(&[(0.0, 0.0), (1.0, 0.0), (9.0, 9.0)], &[("a", 0, 2), ("b", 1, 1), ("b", 2, 4)]);
        let cov = build_covisit_matrix(&log, &places, 10, 2.0).unwrap();
        let cfg = WalsConfig { rank: 2, max_sweeps: 3, ..Default::default() };
        let f = embed_covisits(&cov, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_factors(dir.path(), &f).unwrap();
        assert_eq!(read_factors(dir.path()).unwrap(), f);

        let fm = place_embedding_features(&f).unwrap();
        assert_eq!(fm.n_cols(), 2);
        assert_eq!(fm.row_ids(), f.place_ids.as_slice());
        for j in 0..fm.n_rows() {
            for k in 0..2 {
                assert_eq!(fm.get(j, k).to_bits(), f.v.row(j)[k].to_bits());
            }
        }
    }
}
