//! Core data types shared by the whole pipeline: places, visit logs, labels,
//! their file formats, and the distinct-visitor eligibility filter.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_MINUTE: i64 = 60;
pub const SECONDS_PER_HOUR: i64 = 3600;
pub const SECONDS_PER_DAY: i64 = 86_400;
pub const HOURS_PER_WEEK: usize = 168;

/// Minimum distinct-visitor count for a place to receive features.
pub const DEFAULT_MIN_VISITORS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CategoryId(pub u16);

impl CategoryId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Dense category ids `0..C` assigned in sorted name order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CategoryTable {
    names: Vec<String>,
    index: HashMap<String, CategoryId>,
}

impl CategoryTable {
    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = names.into_iter().map(|s| s.as_ref().to_string()).collect();
        if set.len() > u16::MAX as usize {
            return Err(Error::Validation(format!("too many categories ({})", set.len())));
        }
        for name in &set {
            validate_category_name(name)?;
        }
        let names: Vec<String> = set.into_iter().collect();
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), CategoryId(i as u16)))
            .collect();
        Ok(CategoryTable { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: CategoryId) -> &str {
        &self.names[id.index()]
    }

    pub fn get(&self, name: &str) -> Option<CategoryId> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ids(&self) -> impl Iterator<Item = CategoryId> + '_ {
        (0..self.names.len()).map(|i| CategoryId(i as u16))
    }
}

fn validate_category_name(name: &str) -> Result<()> {
    if name.is_empty() {
        return Err(Error::Validation("empty category name".into()));
    }
    // Category names are embedded in feature names (`tprev:<category>:<w>h`).
    if name.contains([':', ',']) || name.chars().any(char::is_whitespace) {
        return Err(Error::Validation(format!(
            "category name `{name}` must not contain ':', ',' or whitespace"
        )));
    }
    Ok(())
}

/// Index of a place within its [`PlaceTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PlaceIdx(pub u32);

impl PlaceIdx {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Place {
    pub place_id: String,
    pub category: CategoryId,
    /// Planar coordinates in kilometers.
    pub x: f64,
    pub y: f64,
}

impl Place {
    pub fn distance_km(&self, other: &Place) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceRecord {
    pub place_id: String,
    pub category: String,
    pub x: f64,
    pub y: f64,
}

/// Places in file order, with a category table built from the categories
/// that occur.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaceTable {
    places: Vec<Place>,
    categories: CategoryTable,
    index: HashMap<String, PlaceIdx>,
}

impl PlaceTable {
    pub fn new(records: Vec<PlaceRecord>) -> Result<Self> {
        let categories = CategoryTable::from_names(records.iter().map(|r| r.category.as_str()))?;
        Self::with_categories(records, categories)
    }

    /// Build with an explicit category table (which may list categories no
    /// place uses).
    pub fn with_categories(records: Vec<PlaceRecord>, categories: CategoryTable) -> Result<Self> {
        if records.len() > u32::MAX as usize {
            return Err(Error::Validation("too many places".into()));
        }
        let mut index = HashMap::with_capacity(records.len());
        let mut places = Vec::with_capacity(records.len());
        for (i, r) in records.into_iter().enumerate() {
            if r.place_id.is_empty() {
                return Err(Error::Validation(format!("empty place_id at row {}", i + 1)));
            }
            if !r.x.is_finite() || !r.y.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite coordinates for place `{}`",
                    r.place_id
                )));
            }
            let category = categories.get(&r.category).ok_or_else(|| {
                Error::Validation(format!("unknown category `{}` for place `{}`", r.category, r.place_id))
            })?;
            if index.insert(r.place_id.clone(), PlaceIdx(i as u32)).is_some() {
                return Err(Error::Validation(format!("duplicate place_id `{}`", r.place_id)));
            }
            places.push(Place {
                place_id: r.place_id,
                category,
                x: r.x,
                y: r.y,
            });
        }
        Ok(PlaceTable {
            places,
            categories,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.places.len()
    }

    pub fn is_empty(&self) -> bool {
        self.places.is_empty()
    }

    pub fn places(&self) -> &[Place] {
        &self.places
    }

    pub fn get(&self, idx: PlaceIdx) -> &Place {
        &self.places[idx.index()]
    }

    pub fn lookup(&self, place_id: &str) -> Option<PlaceIdx> {
        self.index.get(place_id).copied()
    }

    pub fn categories(&self) -> &CategoryTable {
        &self.categories
    }

    pub fn category_of(&self, idx: PlaceIdx) -> CategoryId {
        self.places[idx.index()].category
    }

    pub fn category_name_of(&self, idx: PlaceIdx) -> &str {
        self.categories.name(self.category_of(idx))
    }
}

/// One anonymous person's stay at one place.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VisitEvent {
    pub person: u32,
    pub place: PlaceIdx,
    /// UTC seconds.
    pub arrival: i64,
    /// Positive minutes.
    pub duration_min: u32,
}

impl VisitEvent {
    pub fn departure(&self) -> i64 {
        self.arrival + i64::from(self.duration_min) * SECONDS_PER_MINUTE
    }
}

/// A raw visit row before validation. `line` is the 1-based source line (0
/// when the record did not come from a file).
#[derive(Debug, Clone, PartialEq)]
pub struct VisitRecord {
    pub person_id: String,
    pub place_id: String,
    pub arrival: i64,
    pub duration_min: i64,
    pub line: u64,
}

/// Validated visits sorted by `(person_id, arrival)`. Person ids are
/// interned in sorted order, so `person` indices sort like the ids.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitLog {
    persons: Vec<String>,
    events: Vec<VisitEvent>,
    person_starts: Vec<usize>,
    n_places: usize,
}

impl VisitLog {
    pub fn from_records(records: Vec<VisitRecord>, places: &PlaceTable) -> Result<Self> {
        let persons: Vec<String> = records
            .iter()
            .map(|r| r.person_id.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(str::to_string)
            .collect();
        if persons.len() > u32::MAX as usize {
            return Err(Error::Validation("too many persons".into()));
        }
        let person_index: HashMap<&str, u32> = persons
            .iter()
            .enumerate()
            .map(|(i, p)| (p.as_str(), i as u32))
            .collect();

        let mut rows = Vec::with_capacity(records.len());
        for r in &records {
            if r.person_id.is_empty() {
                return Err(Error::Validation(format!("empty person_id at line {}", r.line)));
            }
            if r.duration_min <= 0 {
                return Err(Error::Validation(format!("nonpositive duration at line {}", r.line)));
            }
            let duration_min = u32::try_from(r.duration_min).map_err(|_| {
                Error::Validation(format!("duration out of range at line {}", r.line))
            })?;
            let place = places.lookup(&r.place_id).ok_or_else(|| {
                Error::Validation(format!("unknown place_id `{}` at line {}", r.place_id, r.line))
            })?;
            let event = VisitEvent {
                person: person_index[r.person_id.as_str()],
                place,
                arrival: r.arrival,
                duration_min,
            };
            rows.push((event, r.line));
        }
        rows.sort_by_key(|(e, _)| (e.person, e.arrival, e.place, e.duration_min));

        for w in rows.windows(2) {
            let (a, _) = w[0];
            let (b, line) = w[1];
            if a.person == b.person && b.arrival < a.departure() {
                return Err(Error::Validation(format!(
                    "overlapping visits for person `{}` at line {}",
                    persons[a.person as usize], line
                )));
            }
        }
        let events = rows.into_iter().map(|(e, _)| e).collect();
        Ok(Self::assemble(persons, events, places.len()))
    }

    /// Build from already-interned events. Events must be sorted by
    /// `(person, arrival)`, non-overlapping per person, and every person
    /// index must be `< persons.len()`; `persons` must be sorted.
    pub fn from_sorted_events(
        persons: Vec<String>,
        events: Vec<VisitEvent>,
        n_places: usize,
    ) -> Result<Self> {
        if persons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("person ids must be unique and sorted".into()));
        }
        for (i, e) in events.iter().enumerate() {
            if e.person as usize >= persons.len() || e.place.index() >= n_places {
                return Err(Error::Validation(format!("event {i} references unknown id")));
            }
            if e.duration_min == 0 {
                return Err(Error::Validation(format!("nonpositive duration in event {i}")));
            }
            if i > 0 {
                let p = &events[i - 1];
                if (p.person, p.arrival) > (e.person, e.arrival) {
                    return Err(Error::Validation(format!("event {i} out of order")));
                }
                if p.person == e.person && e.arrival < p.departure() {
                    return Err(Error::Validation(format!(
                        "overlapping visits for person `{}` at event {i}",
                        persons[e.person as usize]
                    )));
                }
            }
        }
        Ok(Self::assemble(persons, events, n_places))
    }

    fn assemble(persons: Vec<String>, events: Vec<VisitEvent>, n_places: usize) -> Self {
        let mut person_starts = vec![0usize; persons.len() + 1];
        for e in &events {
            person_starts[e.person as usize + 1] += 1;
        }
        for i in 0..persons.len() {
            person_starts[i + 1] += person_starts[i];
        }
        VisitLog {
            persons,
            events,
            person_starts,
            n_places,
        }
    }

    pub fn events(&self) -> &[VisitEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn persons(&self) -> &[String] {
        &self.persons
    }

    pub fn n_places(&self) -> usize {
        self.n_places
    }

    /// Range of event indices belonging to `person`.
    pub fn person_range(&self, person: u32) -> std::ops::Range<usize> {
        let p = person as usize;
        self.person_starts[p]..self.person_starts[p + 1]
    }

    pub fn person_events(&self, person: u32) -> &[VisitEvent] {
        &self.events[self.person_range(person)]
    }

    /// Event indices grouped by place, each list in log order.
    pub fn events_by_place(&self) -> Vec<Vec<usize>> {
        let mut by_place = vec![Vec::new(); self.n_places];
        for (i, e) in self.events.iter().enumerate() {
            by_place[e.place.index()].push(i);
        }
        by_place
    }

    /// Linear-scan check of the sortedness and non-overlap invariants.
    pub fn check_invariants(&self) -> bool {
        self.events.windows(2).all(|w| {
            let (a, b) = (&w[0], &w[1]);
            (a.person, a.arrival) < (b.person, b.arrival)
                && (a.person != b.person || b.arrival >= a.departure())
        })
    }
}

/// Binary ground truth for one attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTable {
    pub attribute: String,
    pub entries: BTreeMap<String, bool>,
}

impl LabelTable {
    pub fn n_positive(&self) -> usize {
        self.entries.values().filter(|v| **v).count()
    }

    pub fn n_negative(&self) -> usize {
        self.entries.len() - self.n_positive()
    }

    pub fn check_nondegenerate(&self) -> Result<()> {
        let (p, n) = (self.n_positive(), self.n_negative());
        if p == 0 || n == 0 {
            return Err(Error::DegenerateLabels {
                attribute: self.attribute.clone(),
                msg: format!("{p} positive and {n} negative labels"),
            });
        }
        Ok(())
    }
}

/// Places whose number of distinct visitors is at least `min_visitors`.
pub fn eligible_places(log: &VisitLog, min_visitors: usize) -> BTreeSet<PlaceIdx> {
    distinct_visitor_counts(log)
        .into_iter()
        .enumerate()
        .filter(|(_, c)| *c >= min_visitors)
        .map(|(i, _)| PlaceIdx(i as u32))
        .collect()
}

/// Distinct-visitor count per place index.
pub fn distinct_visitor_counts(log: &VisitLog) -> Vec<usize> {
    // Events are grouped by person, so a person is new to a place exactly
    // when the place's last-seen person differs.
    let mut last = vec![u32::MAX; log.n_places()];
    let mut counts = vec![0usize; log.n_places()];
    for e in log.events() {
        let p = e.place.index();
        if last[p] != e.person {
            last[p] = e.person;
            counts[p] += 1;
        }
    }
    counts
}

// ---------------------------------------------------------------------------
// File formats

pub(crate) fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(file))
}

pub(crate) fn check_header(rdr: &mut csv::Reader<File>, path: &Path, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| csv_error(path, e))?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected header `{}`, got `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    name: &str,
    raw: &str,
) -> Result<T> {
    raw.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("malformed {name} `{raw}`"),
    })
}

pub(crate) fn records<'a>(
    rdr: &'a mut csv::Reader<File>,
    path: &'a Path,
    width: usize,
) -> impl Iterator<Item = Result<(u64, csv::StringRecord)>> + 'a {
    rdr.records().map(move |r| {
        let rec = r.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != width {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected {width} fields, got {}", rec.len()),
            });
        }
        Ok((line, rec))
    })
}

fn located(path: &Path, line: u64, err: Error) -> Error {
    match err {
        Error::Validation(msg) => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        },
        other => other,
    }
}

pub const PLACES_HEADER: [&str; 4] = ["place_id", "category_name", "x_km", "y_km"];
pub const VISITS_HEADER: [&str; 4] = [
    "person_id",
    "place_id",
    "arrival_unix_seconds",
    "duration_minutes",
];
pub const LABELS_HEADER: [&str; 3] = ["attribute_name", "place_id", "label"];

pub fn load_places(path: impl AsRef<Path>) -> Result<PlaceTable> {
    let path = path.as_ref();
    let mut rdr = open_reader(path)?;
    check_header(&mut rdr, path, &PLACES_HEADER)?;
    let mut out = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    for row in records(&mut rdr, path, 4) {
        let (line, rec) = row?;
        let place_id = rec[0].to_string();
        if let Some(first) = seen.insert(place_id.clone(), line) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("duplicate place_id `{place_id}` (first at line {first})"),
            });
        }
        let x: f64 = parse_field(path, line, "x_km", &rec[2])?;
        let y: f64 = parse_field(path, line, "y_km", &rec[3])?;
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: "non-finite coordinates".into(),
            });
        }
        if let Err(e) = validate_category_name(&rec[1]) {
            return Err(located(path, line, e));
        }
        out.push(PlaceRecord {
            place_id,
            category: rec[1].to_string(),
            x,
            y,
        });
    }
    PlaceTable::new(out)
}

pub fn load_visit_log(path: impl AsRef<Path>, places: &PlaceTable) -> Result<VisitLog> {
    let path = path.as_ref();
    let mut rdr = open_reader(path)?;
    check_header(&mut rdr, path, &VISITS_HEADER)?;
    let mut out = Vec::new();
    for row in records(&mut rdr, path, 4) {
        let (line, rec) = row?;
        out.push(VisitRecord {
            person_id: rec[0].to_string(),
            place_id: rec[1].to_string(),
            arrival: parse_field(path, line, "arrival_unix_seconds", &rec[2])?,
            duration_min: parse_field(path, line, "duration_minutes", &rec[3])?,
            line,
        });
    }
    VisitLog::from_records(out, places).map_err(|e| match e {
        Error::Validation(msg) => Error::Parse {
            path: path.to_path_buf(),
            line: line_in(&msg),
            msg,
        },
        other => other,
    })
}

fn line_in(msg: &str) -> u64 {
    msg.rsplit("line ")
        .next()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0)
}

/// Labels grouped by attribute, sorted by attribute name.
pub fn load_labels(path: impl AsRef<Path>, places: &PlaceTable) -> Result<Vec<LabelTable>> {
    let path = path.as_ref();
    let mut rdr = open_reader(path)?;
    check_header(&mut rdr, path, &LABELS_HEADER)?;
    let mut tables: BTreeMap<String, BTreeMap<String, bool>> = BTreeMap::new();
    for row in records(&mut rdr, path, 3) {
        let (line, rec) = row?;
        let attribute = rec[0].to_string();
        let place_id = rec[1].to_string();
        if attribute.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: "empty attribute_name".into(),
            });
        }
        if places.lookup(&place_id).is_none() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("unknown place_id `{place_id}`"),
            });
        }
        let label = match &rec[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("label must be 0 or 1, got `{other}`"),
                })
            }
        };
        let entries = tables.entry(attribute.clone()).or_default();
        if let Some(prev) = entries.insert(place_id.clone(), label) {
            if prev != label {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("conflicting labels for ({attribute}, {place_id})"),
                });
            }
        }
    }
    Ok(tables
        .into_iter()
        .map(|(attribute, entries)| LabelTable { attribute, entries })
        .collect())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Create `path` (and its parent directories) for buffered writing.
pub fn create_file(path: impl AsRef<Path>) -> Result<BufWriter<File>> {
    create(path.as_ref())
}

pub(crate) type CsvWriter = csv::Writer<BufWriter<File>>;

/// A CSV writer that quotes fields only when needed.
pub(crate) fn csv_writer(path: &Path) -> Result<CsvWriter> {
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?))
}

pub(crate) fn csv_row<I, T>(w: &mut CsvWriter, path: &Path, row: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| csv_error(path, e))
}

pub(crate) fn csv_finish(mut w: CsvWriter, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_places(path: impl AsRef<Path>, places: &PlaceTable) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    csv_row(&mut w, path, PLACES_HEADER)?;
    for p in places.places() {
        let (x, y) = (p.x.to_string(), p.y.to_string());
        csv_row(&mut w, path, [p.place_id.as_str(), places.categories().name(p.category), &x, &y])?;
    }
    csv_finish(w, path)
}

pub fn write_visit_log(path: impl AsRef<Path>, log: &VisitLog, places: &PlaceTable) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    csv_row(&mut w, path, VISITS_HEADER)?;
    for e in log.events() {
        let (a, d) = (e.arrival.to_string(), e.duration_min.to_string());
        csv_row(
            &mut w,
            path,
            [log.persons()[e.person as usize].as_str(), &places.get(e.place).place_id, &a, &d],
        )?;
    }
    csv_finish(w, path)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[LabelTable]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    csv_row(&mut w, path, LABELS_HEADER)?;
    for t in labels {
        for (place, label) in &t.entries {
            csv_row(&mut w, path, [t.attribute.as_str(), place, if *label { "1" } else { "0" }])?;
        }
    }
    csv_finish(w, path)
}
