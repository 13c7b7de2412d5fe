//! Spatio-temporal place features computed from a visit log.
//!
//! Five groups, each a set of fractions over a place's visits:
//!
//! * `dur:<bin>`: histogram of visit durations (sums to 1);
//! * `arr:<hour>`: histogram of arrival hour-of-week (sums to 1);
//! * `occ:<hour>`: fraction of visits whose stay overlaps each hour-of-week;
//! * `tprev:<category>:<w>h`: fraction of visits for which the same person
//!   arrived at a place of `category` at most `w` hours before the visit's
//!   arrival;
//! * `tnext:<category>:<w>h`: fraction of visits for which the same person
//!   arrived at a place of `category` at most `w` hours after the visit's
//!   departure.
//!
//! Hour-of-week is `day * 24 + hour` with Sunday as day 0, computed at a fixed
//! UTC offset.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{
    self, eligible_places, PlaceIdx, PlaceTable, VisitEvent, VisitLog,
    DEFAULT_MIN_VISITORS, HOURS_PER_WEEK, SECONDS_PER_DAY, SECONDS_PER_HOUR,
};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Duration,
    Arrival,
    Occupancy,
    TransitionPrev,
    TransitionNext,
    Embedding,
    External,
}

impl FeatureGroup {
    pub const STEPS: [FeatureGroup; 5] = [
        FeatureGroup::Duration,
        FeatureGroup::Arrival,
        FeatureGroup::Occupancy,
        FeatureGroup::TransitionPrev,
        FeatureGroup::TransitionNext,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureGroup::Duration => "duration",
            FeatureGroup::Arrival => "arrival",
            FeatureGroup::Occupancy => "occupancy",
            FeatureGroup::TransitionPrev => "transition_prev",
            FeatureGroup::TransitionNext => "transition_next",
            FeatureGroup::Embedding => "embedding",
            FeatureGroup::External => "external",
        }
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "duration" => FeatureGroup::Duration,
            "arrival" => FeatureGroup::Arrival,
            "occupancy" => FeatureGroup::Occupancy,
            "transition_prev" => FeatureGroup::TransitionPrev,
            "transition_next" => FeatureGroup::TransitionNext,
            "embedding" => FeatureGroup::Embedding,
            "external" => FeatureGroup::External,
            other => return Err(Error::Format(format!("unknown feature group `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Prev,
    Next,
}

/// Structured feature name with an injective canonical rendering.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FeatureName {
    Duration(usize),
    Arrival(usize),
    Occupancy(usize),
    Transition {
        direction: Direction,
        category: String,
        window_hours: u32,
    },
    Embedding(usize),
    External(String),
}

impl FeatureName {
    pub fn group(&self) -> FeatureGroup {
        match self {
            FeatureName::Duration(_) => FeatureGroup::Duration,
            FeatureName::Arrival(_) => FeatureGroup::Arrival,
            FeatureName::Occupancy(_) => FeatureGroup::Occupancy,
            FeatureName::Transition {
                direction: Direction::Prev,
                ..
            } => FeatureGroup::TransitionPrev,
            FeatureName::Transition {
                direction: Direction::Next,
                ..
            } => FeatureGroup::TransitionNext,
            FeatureName::Embedding(_) => FeatureGroup::Embedding,
            FeatureName::External(_) => FeatureGroup::External,
        }
    }
}

impl fmt::Display for FeatureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureName::Duration(b) => write!(f, "dur:{b:02}"),
            FeatureName::Arrival(h) => write!(f, "arr:{h:03}"),
            FeatureName::Occupancy(h) => write!(f, "occ:{h:03}"),
            FeatureName::Transition {
                direction,
                category,
                window_hours,
            } => {
                let d = match direction {
                    Direction::Prev => "tprev",
                    Direction::Next => "tnext",
                };
                write!(f, "{d}:{category}:{window_hours}h")
            }
            FeatureName::Embedding(k) => write!(f, "emb:{k}"),
            FeatureName::External(s) => f.write_str(s),
        }
    }
}

impl FromStr for FeatureName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("malformed feature name `{s}`"));
        let num = |v: &str| v.parse::<usize>().map_err(|_| bad());
        let parts: Vec<&str> = s.split(':').collect();
        Ok(match parts.as_slice() {
            ["dur", b] => FeatureName::Duration(num(b)?),
            ["arr", h] => FeatureName::Arrival(num(h)?),
            ["occ", h] => FeatureName::Occupancy(num(h)?),
            ["emb", k] => FeatureName::Embedding(num(k)?),
            [d @ ("tprev" | "tnext"), cat, w] => {
                let hours = w.strip_suffix('h').ok_or_else(bad)?;
                FeatureName::Transition {
                    direction: if *d == "tprev" { Direction::Prev } else { Direction::Next },
                    category: cat.to_string(),
                    window_hours: hours.parse().map_err(|_| bad())?,
                }
            }
            _ => FeatureName::External(s.to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub group: FeatureGroup,
}

impl FeatureColumn {
    pub fn new(name: impl fmt::Display, group: FeatureGroup) -> Self {
        FeatureColumn {
            name: name.to_string(),
            group,
        }
    }
}

/// Sparse (CSR) per-place feature matrix with named, group-tagged columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: Vec<String>,
    columns: Vec<FeatureColumn>,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl FeatureMatrix {
    /// Build from per-row sparse entries `(column, value)`. Entries within a
    /// row may come in any order; zeros are dropped; duplicate columns are an
    /// error.
    pub fn from_rows(
        rows: Vec<String>,
        columns: Vec<FeatureColumn>,
        entries: Vec<Vec<(u32, f64)>>,
    ) -> Result<Self> {
        if rows.len() != entries.len() {
            return Err(Error::Validation("row/entry count mismatch".into()));
        }
        let mut seen = HashMap::with_capacity(columns.len());
        for c in &columns {
            if seen.insert(c.name.as_str(), ()).is_some() {
                return Err(Error::FeatureCollision(c.name.clone()));
            }
        }
        let mut row_seen = HashMap::with_capacity(rows.len());
        for r in &rows {
            if row_seen.insert(r.as_str(), ()).is_some() {
                return Err(Error::Validation(format!("duplicate row `{r}`")));
            }
        }
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for mut row in entries {
            row.sort_by_key(|(c, _)| *c);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::Validation(format!("duplicate column {} in row", w[0].0)));
                }
            }
            for (c, v) in row {
                if c as usize >= columns.len() {
                    return Err(Error::Validation(format!("column index {c} out of range")));
                }
                if !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "non-finite value in column `{}`",
                        columns[c as usize].name
                    )));
                }
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(FeatureMatrix {
            rows,
            columns,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn empty(columns: Vec<FeatureColumn>) -> Self {
        FeatureMatrix {
            rows: Vec::new(),
            columns,
            row_ptr: vec![0],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.rows
    }

    pub fn columns(&self) -> &[FeatureColumn] {
        &self.columns
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn row_index(&self) -> HashMap<&str, usize> {
        self.rows.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect()
    }

    pub fn column_index(&self) -> HashMap<&str, usize> {
        self.columns
            .iter()
            .enumerate()
            .map(|(i, c)| (c.name.as_str(), i))
            .collect()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let (cols, vals) = self.row(row);
        match cols.binary_search(&(col as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Dense row-major copy, `n_rows * n_cols`.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n_cols();
        let mut out = vec![0.0; self.n_rows() * n];
        for i in 0..self.n_rows() {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                out[i * n + *c as usize] = *v;
            }
        }
        out
    }

    /// Dense values of column `col` for every row.
    pub fn column_values(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.get(i, col)).collect()
    }

    /// All columns densified at once (column-major), cheaper than repeated
    /// [`Self::column_values`].
    pub fn dense_columns(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n_rows()]; self.n_cols()];
        for i in 0..self.n_rows() {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                out[*c as usize][i] = *v;
            }
        }
        out
    }

    /// Keep only the given columns, in the given order.
    pub fn select_columns(&self, keep: &[usize]) -> FeatureMatrix {
        let mut remap = vec![u32::MAX; self.n_cols()];
        for (new, old) in keep.iter().enumerate() {
            remap[*old] = new as u32;
        }
        let entries = (0..self.n_rows())
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter()
                    .zip(vals)
                    .filter(|(c, _)| remap[**c as usize] != u32::MAX)
                    .map(|(c, v)| (remap[*c as usize], *v))
                    .collect()
            })
            .collect();
        let columns = keep.iter().map(|c| self.columns[*c].clone()).collect();
        FeatureMatrix::from_rows(self.rows.clone(), columns, entries)
            .expect("column subset of a valid matrix is valid")
    }

    /// Keep the columns belonging to any of `groups`.
    pub fn select_groups(&self, groups: &[FeatureGroup]) -> FeatureMatrix {
        let keep: Vec<usize> = (0..self.n_cols())
            .filter(|c| groups.contains(&self.columns[*c].group))
            .collect();
        self.select_columns(&keep)
    }

    /// Keep only the given rows (by index), in the given order.
    pub fn select_rows(&self, keep: &[usize]) -> FeatureMatrix {
        let rows = keep.iter().map(|i| self.rows[*i].clone()).collect();
        let entries = keep
            .iter()
            .map(|i| {
                let (cols, vals) = self.row(*i);
                cols.iter().copied().zip(vals.iter().copied()).collect()
            })
            .collect();
        FeatureMatrix::from_rows(rows, self.columns.clone(), entries)
            .expect("row subset of a valid matrix is valid")
    }

    /// Paths used by [`Self::write`] for a given triplet-file path.
    pub fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
        let stem = path.with_extension("");
        (
            PathBuf::from(format!("{}.columns.csv", stem.display())),
            PathBuf::from(format!("{}.rows.csv", stem.display())),
        )
    }

    /// Write the triplet file `place_id,feature_name,value` at `path`, plus
    /// `<stem>.columns.csv` (`feature_name,group`) and `<stem>.rows.csv`
    /// (`place_id`, preserving row order and rows without nonzeros).
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (cols_path, rows_path) = Self::sidecar_paths(path);

        let mut w = domain::csv_writer(path)?;
        domain::csv_row(&mut w, path, TRIPLET_HEADER)?;
        for i in 0..self.n_rows() {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                let v = v.to_string();
                domain::csv_row(&mut w, path, [&self.rows[i], &self.columns[*c as usize].name, &v])?;
            }
        }
        domain::csv_finish(w, path)?;

        let mut w = domain::csv_writer(&cols_path)?;
        domain::csv_row(&mut w, &cols_path, COLUMNS_HEADER)?;
        for c in &self.columns {
            domain::csv_row(&mut w, &cols_path, [c.name.clone(), c.group.to_string()])?;
        }
        domain::csv_finish(w, &cols_path)?;

        let mut w = domain::csv_writer(&rows_path)?;
        domain::csv_row(&mut w, &rows_path, ROWS_HEADER)?;
        for r in &self.rows {
            domain::csv_row(&mut w, &rows_path, [r])?;
        }
        domain::csv_finish(w, &rows_path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (cols_path, rows_path) = Self::sidecar_paths(path);

        let mut rdr = domain::open_reader(&cols_path)?;
        domain::check_header(&mut rdr, &cols_path, &COLUMNS_HEADER)?;
        let columns: Vec<FeatureColumn> = domain::records(&mut rdr, &cols_path, 2)
            .map(|row| {
                let (line, rec) = row?;
                let group = rec[1]
                    .parse()
                    .map_err(|e: Error| parse_err(&cols_path, line, &e.to_string()))?;
                Ok(FeatureColumn::new(&rec[0], group))
            })
            .collect::<Result<_>>()?;
        let mut rdr = domain::open_reader(&rows_path)?;
        domain::check_header(&mut rdr, &rows_path, &ROWS_HEADER)?;
        let rows: Vec<String> = domain::records(&mut rdr, &rows_path, 1)
            .map(|row| row.map(|(_, rec)| rec[0].to_string()))
            .collect::<Result<_>>()?;

        let col_index: HashMap<&str, u32> = columns
            .iter()
            .enumerate()
            .map(|(i, c)| (c.name.as_str(), i as u32))
            .collect();
        let row_index: HashMap<&str, usize> =
            rows.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();
        let mut entries = vec![Vec::new(); rows.len()];
        let mut rdr = domain::open_reader(path)?;
        domain::check_header(&mut rdr, path, &TRIPLET_HEADER)?;
        for row in domain::records(&mut rdr, path, 3) {
            let (line, rec) = row?;
            let (r, c, v) = (&rec[0], &rec[1], &rec[2]);
            let ri = *row_index
                .get(r)
                .ok_or_else(|| parse_err(path, line, &format!("unknown row `{r}`")))?;
            let ci = *col_index
                .get(c)
                .ok_or_else(|| parse_err(path, line, &format!("unknown feature `{c}`")))?;
            let v: f64 = v
                .parse()
                .map_err(|_| parse_err(path, line, &format!("malformed value `{v}`")))?;
            entries[ri].push((ci, v));
        }
        FeatureMatrix::from_rows(rows, columns, entries)
    }
}

const TRIPLET_HEADER: [&str; 3] = ["place_id", "feature_name", "value"];
const COLUMNS_HEADER: [&str; 2] = ["feature_name", "group"];
const ROWS_HEADER: [&str; 1] = ["place_id"];

fn parse_err(path: &Path, line: u64, msg: &str) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturizerConfig {
    /// Ascending duration bin edges in minutes; an underflow bin precedes the
    /// first edge and an overflow bin follows the last.
    pub duration_bin_edges: Vec<u32>,
    /// Ascending transition windows in hours.
    pub transition_windows: Vec<u32>,
    pub min_visitors: usize,
    /// Fixed offset added to UTC timestamps before computing hour-of-week.
    pub utc_offset_seconds: i64,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig {
            duration_bin_edges: vec![15, 30, 45, 60, 90, 120, 180, 240],
            transition_windows: vec![1, 4, 8, 16, 24],
            min_visitors: DEFAULT_MIN_VISITORS,
            utc_offset_seconds: 0,
        }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.duration_bin_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("duration_bin_edges", "must be strictly ascending"));
        }
        if self.transition_windows.is_empty() {
            return Err(Error::config("transition_windows", "must not be empty"));
        }
        if self.transition_windows[0] == 0 || self.transition_windows.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "transition_windows",
                "must be positive and strictly ascending",
            ));
        }
        if self.min_visitors == 0 {
            return Err(Error::config("min_visitors", "must be at least 1"));
        }
        Ok(())
    }

    pub fn n_duration_bins(&self) -> usize {
        self.duration_bin_edges.len() + 1
    }

    fn max_window_seconds(&self) -> i64 {
        i64::from(*self.transition_windows.last().unwrap_or(&0)) * SECONDS_PER_HOUR
    }
}

/// Hour-of-week bucket (Sunday 00:00 = 0) of a UTC timestamp at `utc_offset`.
pub fn hour_of_week(ts: i64, utc_offset_seconds: i64) -> usize {
    let local = ts + utc_offset_seconds;
    // 1970-01-01 was a Thursday (day 4 counting from Sunday).
    let day = (local.div_euclid(SECONDS_PER_DAY) + 4).rem_euclid(7);
    let hour = local.rem_euclid(SECONDS_PER_DAY) / SECONDS_PER_HOUR;
    (day * 24 + hour) as usize
}

/// Duration bin index for `minutes` given ascending `edges`: bin `i` covers
/// `[edges[i-1], edges[i])`, bin 0 is below the first edge and the last bin
/// is at or beyond the last edge.
pub fn duration_bin(minutes: u32, edges: &[u32]) -> usize {
    edges.partition_point(|e| *e <= minutes)
}

fn normalize(counts: Vec<u32>, n: usize) -> Vec<(usize, f64)> {
    let n = n as f64;
    counts
        .into_iter()
        .enumerate()
        .filter(|(_, c)| *c > 0)
        .map(|(i, c)| (i, f64::from(c) / n))
        .collect()
}

/// Normalized duration histogram (nonzeros only, ascending bin index).
pub fn duration_features(visits: &[VisitEvent], config: &FeaturizerConfig) -> Vec<(usize, f64)> {
    let mut counts = vec![0u32; config.n_duration_bins()];
    for v in visits {
        counts[duration_bin(v.duration_min, &config.duration_bin_edges)] += 1;
    }
    normalize(counts, visits.len())
}

/// Fraction of visits arriving in each hour-of-week.
pub fn arrival_features(visits: &[VisitEvent], utc_offset_seconds: i64) -> Vec<(usize, f64)> {
    let mut counts = vec![0u32; HOURS_PER_WEEK];
    for v in visits {
        counts[hour_of_week(v.arrival, utc_offset_seconds)] += 1;
    }
    normalize(counts, visits.len())
}

/// Fraction of visits whose interval `[arrival, departure)` overlaps each
/// hour-of-week. A visit contributes at most once to a bucket.
pub fn occupancy_features(visits: &[VisitEvent], utc_offset_seconds: i64) -> Vec<(usize, f64)> {
    let mut counts = vec![0u32; HOURS_PER_WEEK];
    for v in visits {
        let first = (v.arrival + utc_offset_seconds).div_euclid(SECONDS_PER_HOUR);
        let last = (v.departure() - 1 + utc_offset_seconds).div_euclid(SECONDS_PER_HOUR);
        let span = (last - first + 1) as usize;
        if span >= HOURS_PER_WEEK {
            counts.iter_mut().for_each(|c| *c += 1);
            continue;
        }
        let start = hour_of_week(v.arrival, utc_offset_seconds);
        for k in 0..span {
            counts[(start + k) % HOURS_PER_WEEK] += 1;
        }
    }
    normalize(counts, visits.len())
}

/// Transition fractions for one place, indexed `category * n_windows + w`.
/// `visit_indices` are indices into `log.events()` of the place's visits.
pub fn transition_features(
    log: &VisitLog,
    places: &PlaceTable,
    visit_indices: &[usize],
    direction: Direction,
    config: &FeaturizerConfig,
) -> Vec<(usize, f64)> {
    let n_cat = places.categories().len();
    let windows: Vec<i64> = config
        .transition_windows
        .iter()
        .map(|w| i64::from(*w) * SECONDS_PER_HOUR)
        .collect();
    let max_w = config.max_window_seconds();
    let mut counts = vec![0u32; n_cat * windows.len()];
    let mut min_lag = vec![i64::MAX; n_cat];
    let events = log.events();

    for &vi in visit_indices {
        let target = &events[vi];
        let range = log.person_range(target.person);
        min_lag.iter_mut().for_each(|m| *m = i64::MAX);
        match direction {
            Direction::Prev => {
                for other in events[range.start..vi].iter().rev() {
                    let lag = target.arrival - other.arrival;
                    if lag > max_w {
                        break;
                    }
                    let c = places.category_of(other.place).index();
                    min_lag[c] = min_lag[c].min(lag);
                }
            }
            Direction::Next => {
                let anchor = target.departure();
                for other in &events[vi + 1..range.end] {
                    let lag = other.arrival - anchor;
                    if lag > max_w {
                        break;
                    }
                    let c = places.category_of(other.place).index();
                    min_lag[c] = min_lag[c].min(lag);
                }
            }
        }
        for (c, lag) in min_lag.iter().enumerate() {
            if *lag == i64::MAX {
                continue;
            }
            for (wi, w) in windows.iter().enumerate() {
                if *lag <= *w {
                    counts[c * windows.len() + wi] += 1;
                }
            }
        }
    }
    normalize(counts, visit_indices.len())
}

/// Column schema produced by [`featurize`] for a category table.
pub fn steps_columns(config: &FeaturizerConfig, places: &PlaceTable) -> Vec<FeatureColumn> {
    let mut cols = Vec::new();
    for b in 0..config.n_duration_bins() {
        cols.push(FeatureColumn::new(FeatureName::Duration(b), FeatureGroup::Duration));
    }
    for h in 0..HOURS_PER_WEEK {
        cols.push(FeatureColumn::new(FeatureName::Arrival(h), FeatureGroup::Arrival));
    }
    for h in 0..HOURS_PER_WEEK {
        cols.push(FeatureColumn::new(FeatureName::Occupancy(h), FeatureGroup::Occupancy));
    }
    for direction in [Direction::Prev, Direction::Next] {
        for cat in places.categories().names() {
            for w in &config.transition_windows {
                let name = FeatureName::Transition {
                    direction,
                    category: cat.clone(),
                    window_hours: *w,
                };
                let group = name.group();
                cols.push(FeatureColumn::new(name, group));
            }
        }
    }
    cols
}

/// Compute all five groups for every place with at least
/// `config.min_visitors` distinct visitors. Rows follow place-table order.
pub fn featurize(log: &VisitLog, places: &PlaceTable, config: &FeaturizerConfig) -> Result<FeatureMatrix> {
    config.validate()?;
    let eligible: Vec<PlaceIdx> = eligible_places(log, config.min_visitors).into_iter().collect();
    if eligible.is_empty() {
        return Err(Error::NoEligiblePlaces {
            min_visitors: config.min_visitors,
        });
    }
    let by_place = log.events_by_place();
    let columns = steps_columns(config, places);

    let n_dur = config.n_duration_bins();
    let n_trans = places.categories().len() * config.transition_windows.len();
    let off_arr = n_dur;
    let off_occ = off_arr + HOURS_PER_WEEK;
    let off_prev = off_occ + HOURS_PER_WEEK;
    let off_next = off_prev + n_trans;

    let entries = par::map(&eligible, |p| {
        let idx = &by_place[p.index()];
        let visits: Vec<VisitEvent> = idx.iter().map(|i| log.events()[*i]).collect();
        let mut row: Vec<(u32, f64)> = Vec::new();
        let mut push = |offset: usize, v: Vec<(usize, f64)>| {
            row.extend(v.into_iter().map(|(i, x)| ((offset + i) as u32, x)));
        };
        push(0, duration_features(&visits, config));
        push(off_arr, arrival_features(&visits, config.utc_offset_seconds));
        push(off_occ, occupancy_features(&visits, config.utc_offset_seconds));
        push(off_prev, transition_features(log, places, idx, Direction::Prev, config));
        push(off_next, transition_features(log, places, idx, Direction::Next, config));
        row
    });
    let rows = eligible
        .iter()
        .map(|p| places.get(*p).place_id.clone())
        .collect();
    FeatureMatrix::from_rows(rows, columns, entries)
}

/// Category of a transition feature column, if it is one.
pub fn transition_category(name: &str) -> Option<(Direction, String, u32)> {
    match name.parse::<FeatureName>().ok()? {
        FeatureName::Transition {
            direction,
            category,
            window_hours,
        } => Some((direction, category, window_hours)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{PlaceRecord, VisitRecord};

    // Sunday 2024-01-07 00:00:00 UTC.
    const SUNDAY: i64 = 1_704_585_600;

    fn ev(arrival: i64, duration_min: u32) -> VisitEvent {
        VisitEvent {
            person: 0,
            place: PlaceIdx(0),
            arrival,
            duration_min,
        }
    }

    #[test]
    fn hour_of_week_convention() {
        assert_eq!(hour_of_week(SUNDAY, 0), 0);
        // Monday 09:30
        assert_eq!(hour_of_week(SUNDAY + 86_400 + 9 * 3600 + 1800, 0), 33);
        assert_eq!(hour_of_week(SUNDAY - 1, 0), 167);
        // UTC-1: Sunday 00:30 UTC is Saturday 23:30 local
        assert_eq!(hour_of_week(SUNDAY + 1800, -3600), 167);
        assert_eq!(hour_of_week(0, 0), 4 * 24);
    }

    #[test]
    fn duration_histogram() {
        let cfg = FeaturizerConfig {
            duration_bin_edges: vec![30, 60, 90],
            ..Default::default()
        };
        let all45 = [ev(0, 45), ev(10_000, 45)];
        assert_eq!(duration_features(&all45, &cfg), vec![(1, 1.0)]);
        let mixed = [ev(0, 20), ev(10_000, 40), ev(20_000, 200)];
        let third = 1.0 / 3.0;
        assert_eq!(duration_features(&mixed, &cfg), vec![(0, third), (1, third), (3, third)]);
        assert_eq!(duration_bin(30, &cfg.duration_bin_edges), 1);
        assert_eq!(duration_bin(29, &cfg.duration_bin_edges), 0);
        assert_eq!(duration_bin(90, &cfg.duration_bin_edges), 3);
    }

    #[test]
    fn arrival_one_hot_and_same_hour() {
        let v = [ev(SUNDAY + 86_400 + 9 * 3600 + 1800, 30)];
        assert_eq!(arrival_features(&v, 0), vec![(33, 1.0)]);
        let v = [ev(SUNDAY + 600, 10), ev(SUNDAY + 3000, 5)];
        assert_eq!(arrival_features(&v, 0), vec![(0, 1.0)]);
    }

    #[test]
    fn occupancy_spans_buckets() {
        let v = [ev(SUNDAY + 1800, 90)];
        assert_eq!(occupancy_features(&v, 0), vec![(0, 1.0), (1, 1.0)]);
        let v = [ev(SUNDAY + 5 * 3600 + 60, 30)];
        assert_eq!(occupancy_features(&v, 0), vec![(5, 1.0)]);
        // ends exactly on the hour boundary: does not touch the next hour
        let v = [ev(SUNDAY + 5 * 3600, 60)];
        assert_eq!(occupancy_features(&v, 0), vec![(5, 1.0)]);
        // wraps Saturday -> Sunday
        let v = [ev(SUNDAY - 1800, 60)];
        assert_eq!(occupancy_features(&v, 0), vec![(0, 1.0), (167, 1.0)]);
        // a stay longer than a week covers every hour once
        let v = [ev(SUNDAY, 8 * 24 * 60)];
        let f = occupancy_features(&v, 0);
        assert_eq!(f.len(), 168);
        assert!(f.iter().all(|(_, x)| *x == 1.0));
    }

    fn tiny_world(rows: &[(&str, &str, i64, i64)]) -> (PlaceTable, VisitLog) {
        let places = PlaceTable::new(vec![
            PlaceRecord { place_id: "T".into(), category: "theater".into(), x: 0.0, y: 0.0 },
            PlaceRecord { place_id: "R".into(), category: "restaurant".into(), x: 0.0, y: 0.0 },
            PlaceRecord { place_id: "S".into(), category: "surf_shop".into(), x: 0.0, y: 0.0 },
        ])
        .unwrap();
        let recs = rows
            .iter()
            .map(|(p, pl, t, d)| VisitRecord {
                person_id: p.to_string(),
                place_id: pl.to_string(),
                arrival: *t,
                duration_min: *d,
                line: 0,
            })
            .collect();
        let log = VisitLog::from_records(recs, &places).unwrap();
        (places, log)
    }

    fn value(places: &PlaceTable, f: &[(usize, f64)], cat: &str, wi: usize, cfg: &FeaturizerConfig) -> f64 {
        let c = places.categories().get(cat).unwrap().index();
        let k = c * cfg.transition_windows.len() + wi;
        f.iter().find(|(i, _)| *i == k).map(|(_, v)| *v).unwrap_or(0.0)
    }

    #[test]
    fn prev_window_membership() {
        let (places, log) = tiny_world(&[("u", "T", 0, 90), ("u", "R", 7200, 60)]);
        let cfg = FeaturizerConfig::default();
        let r = places.lookup("R").unwrap();
        let idx = &log.events_by_place()[r.index()];
        let f = transition_features(&log, &places, idx, Direction::Prev, &cfg);
        assert_eq!(value(&places, &f, "theater", 0, &cfg), 0.0); // 1h
        assert_eq!(value(&places, &f, "theater", 1, &cfg), 1.0); // 4h
        assert_eq!(value(&places, &f, "theater", 4, &cfg), 1.0); // 24h
        // the target visit itself is excluded
        assert_eq!(value(&places, &f, "restaurant", 4, &cfg), 0.0);
    }

    #[test]
    fn next_measured_from_departure() {
        // restaurant 0..60min, surf shop 30 min after departure
        let (places, log) = tiny_world(&[("u", "R", 0, 60), ("u", "S", 5400, 20)]);
        let cfg = FeaturizerConfig::default();
        let r = places.lookup("R").unwrap();
        let idx = &log.events_by_place()[r.index()];
        let f = transition_features(&log, &places, idx, Direction::Next, &cfg);
        assert_eq!(value(&places, &f, "surf_shop", 0, &cfg), 1.0);
        let p = transition_features(&log, &places, idx, Direction::Prev, &cfg);
        assert!(p.is_empty());
    }

    #[test]
    fn other_persons_do_not_count() {
        let (places, log) = tiny_world(&[("a", "T", 0, 60), ("b", "R", 3600, 60)]);
        let cfg = FeaturizerConfig::default();
        let r = places.lookup("R").unwrap();
        let idx = &log.events_by_place()[r.index()];
        assert!(transition_features(&log, &places, idx, Direction::Prev, &cfg).is_empty());
    }

    #[test]
    fn feature_names_round_trip() {
        for name in [
            FeatureName::Duration(3),
            FeatureName::Arrival(33),
            FeatureName::Occupancy(167),
            FeatureName::Transition {
                direction: Direction::Prev,
                category: "grocery_store".into(),
                window_hours: 4,
            },
            FeatureName::Embedding(12),
            FeatureName::External("rev:wine".into()),
        ] {
            let s = name.to_string();
            assert_eq!(s.parse::<FeatureName>().unwrap(), name, "{s}");
        }
        assert_eq!(
            FeatureName::Transition {
                direction: Direction::Prev,
                category: "grocery_store".into(),
                window_hours: 4
            }
            .to_string(),
            "tprev:grocery_store:4h"
        );
    }

    #[test]
    fn config_validation() {
        let mut c = FeaturizerConfig::default();
        assert!(c.validate().is_ok());
        c.transition_windows = vec![4, 1];
        assert!(c.validate().is_err());
        c = FeaturizerConfig { duration_bin_edges: vec![30, 30], ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn matrix_write_read_round_trip() {
        let cols = vec![
            FeatureColumn::new("a", FeatureGroup::External),
            FeatureColumn::new("emb:0", FeatureGroup::Embedding),
        ];
        let m = FeatureMatrix::from_rows(
            vec!["p1".into(), "p2".into(), "p3".into()],
            cols,
            vec![vec![(1, 0.1 + 0.2), (0, 1e-300)], vec![], vec![(0, -3.5)]],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        m.write(&path).unwrap();
        let back = FeatureMatrix::read(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get(0, 1).to_bits(), (0.1f64 + 0.2).to_bits());
    }
}
