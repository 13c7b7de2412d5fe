//! Synthetic worlds with planted attribute signals.
//!
//! Places are scattered uniformly over a square. Each person has a home, an
//! optional workplace, a taste multiplier per category and a small set of
//! familiar places per category near home. A person-day is a chain of
//! visits: the next category is drawn from a first-order Markov chain
//! weighted by hour-of-day profiles and taste, and the concrete place is
//! drawn from the familiar set weighted by popularity and by the place's
//! attribute-driven boosts.
//!
//! Attributes act on places through five channels:
//!
//! | channel | effect on a positive place |
//! |---|---|
//! | `duration_shift` | visit durations scaled by `multiplier` |
//! | `arrival_shift` | chosen `boost` times more often for arrivals in an hour band |
//! | `weekend_shift` | chosen `boost` times more often on Saturday and Sunday |
//! | `prev_category_affinity` | chosen `boost` times more often right after a visit to `category` |
//! | `next_category_affinity` | chosen `boost` times more often right before a visit to `category` |
//!
//! A channel parameter `p` acts at strength `s` as `1 + s (p - 1)`, so
//! strength 0 is a null attribute. Places with a category affinity also
//! attract a clientele: they are more likely to be familiar to people with a
//! strong taste for that category, so these attributes change who visits a
//! place and not only when. Defaults favor signal clarity over realism.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, LogNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    CategoryId, LabelTable, PlaceIdx, PlaceRecord, PlaceTable, VisitEvent, VisitLog, SECONDS_PER_MINUTE,
};
use crate::error::{Error, Result};
use crate::featurizer::{self, Direction, FeaturizerConfig};
use crate::{par, seed};

/// 2024-01-07 00:00:00 UTC, a Sunday.
pub const DEFAULT_START: i64 = 1_704_585_600;
const MINUTES_PER_DAY: i64 = 1440;
const MIN_DURATION: i64 = 5;
const MAX_DURATION: i64 = 720;
const MAX_OUTINGS_PER_DAY: usize = 8;
const HOME: &str = "home";
const WORK: &str = "work";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalChannel {
    DurationShift { multiplier: f64 },
    /// Arrival hours `start_hour..end_hour` (wrapping past midnight when
    /// `end_hour < start_hour`).
    ArrivalShift { start_hour: u32, end_hour: u32, boost: f64 },
    WeekendShift { boost: f64 },
    PrevCategoryAffinity { category: String, boost: f64 },
    NextCategoryAffinity { category: String, boost: f64 },
}

impl SignalChannel {
    pub fn name(&self) -> &'static str {
        match self {
            SignalChannel::DurationShift { .. } => "duration_shift",
            SignalChannel::ArrivalShift { .. } => "arrival_shift",
            SignalChannel::WeekendShift { .. } => "weekend_shift",
            SignalChannel::PrevCategoryAffinity { .. } => "prev_category_affinity",
            SignalChannel::NextCategoryAffinity { .. } => "next_category_affinity",
        }
    }

    fn param(&self) -> f64 {
        match self {
            SignalChannel::DurationShift { multiplier } => *multiplier,
            SignalChannel::ArrivalShift { boost, .. }
            | SignalChannel::WeekendShift { boost }
            | SignalChannel::PrevCategoryAffinity { boost, .. }
            | SignalChannel::NextCategoryAffinity { boost, .. } => *boost,
        }
    }

    /// Effect on a positive place at `strength`.
    pub fn effect(&self, strength: f64) -> f64 {
        1.0 + strength * (self.param() - 1.0)
    }
}

fn in_band(hour: u32, start: u32, end: u32) -> bool {
    if start <= end {
        (start..end).contains(&hour)
    } else {
        hour >= start || hour < end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    pub name: String,
    pub base_rate: f64,
    #[serde(default)]
    pub strength: f64,
    /// Categories whose places receive a label for this attribute.
    #[serde(default = "default_targets")]
    pub target_categories: Vec<String>,
    #[serde(default)]
    pub channels: Vec<SignalChannel>,
}

fn default_targets() -> Vec<String> {
    vec!["restaurant".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_places: usize,
    pub n_people: usize,
    pub n_days: usize,
    pub seed: u64,
    /// UTC timestamp of the first simulated midnight; must be a Sunday.
    pub start_timestamp: i64,
    pub extent_km: f64,
    pub category_mix: BTreeMap<String, f64>,
    pub attributes: Vec<AttributeSpec>,
    pub work_probability: f64,
    /// Log-normal sigma of per-person category tastes.
    pub taste_sigma: f64,
    pub familiar_per_category: usize,
    /// Distance scale of the familiar-place preference around home.
    pub familiarity_range_km: f64,
    pub popularity_sigma: f64,
    /// Log-normal sigma of per-place duration noise.
    pub place_duration_sigma: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_places: 2000,
            n_people: 5000,
            n_days: 90,
            seed: 0,
            start_timestamp: DEFAULT_START,
            extent_km: 20.0,
            category_mix: default_category_mix(),
            attributes: demo_attributes(0.8),
            work_probability: 0.7,
            taste_sigma: 0.8,
            familiar_per_category: 6,
            familiarity_range_km: 3.0,
            popularity_sigma: 0.5,
            place_duration_sigma: 0.15,
        }
    }
}

pub fn default_category_mix() -> BTreeMap<String, f64> {
    [
        ("home", 0.10),
        ("work", 0.08),
        ("restaurant", 0.30),
        ("cafe", 0.10),
        ("bar", 0.08),
        ("theater", 0.03),
        ("museum", 0.03),
        ("grocery_store", 0.07),
        ("gas_station", 0.04),
        ("park", 0.06),
        ("beach", 0.03),
        ("surf_shop", 0.03),
        ("gym", 0.05),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Six restaurant attributes, one or more per channel, at `strength`, plus a
/// strength-0 `null_attribute` labelled across all leisure categories.
pub fn demo_attributes(strength: f64) -> Vec<AttributeSpec> {
    let spec = |name: &str, channels: Vec<SignalChannel>| AttributeSpec {
        name: name.into(),
        base_rate: 0.3,
        strength,
        target_categories: default_targets(),
        channels,
    };
    vec![
        spec("long_stay", vec![SignalChannel::DurationShift { multiplier: 1.8 }]),
        spec(
            "breakfast",
            vec![SignalChannel::ArrivalShift {
                start_hour: 7,
                end_hour: 10,
                boost: 5.0,
            }],
        ),
        spec(
            "late_night",
            vec![SignalChannel::ArrivalShift {
                start_hour: 21,
                end_hour: 2,
                boost: 5.0,
            }],
        ),
        spec("weekend_spot", vec![SignalChannel::WeekendShift { boost: 3.0 }]),
        spec(
            "romantic",
            vec![SignalChannel::PrevCategoryAffinity {
                category: "theater".into(),
                boost: 6.0,
            }],
        ),
        spec(
            "pre_drinks",
            vec![SignalChannel::NextCategoryAffinity {
                category: "bar".into(),
                boost: 6.0,
            }],
        ),
        AttributeSpec {
            name: "null_attribute".into(),
            base_rate: 0.5,
            strength: 0.0,
            target_categories: [
                "bar",
                "beach",
                "cafe",
                "grocery_store",
                "gym",
                "museum",
                "park",
                "restaurant",
                "surf_shop",
                "theater",
            ]
            .map(String::from)
            .to_vec(),
            channels: vec![],
        },
    ]
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_places == 0 {
            return Err(Error::config("n_places", "must be at least 1"));
        }
        if self.n_people == 0 {
            return Err(Error::config("n_people", "must be at least 1"));
        }
        if self.n_days == 0 {
            return Err(Error::config("n_days", "must be at least 1"));
        }
        if (self.start_timestamp.div_euclid(86_400) + 4).rem_euclid(7) != 0 {
            return Err(Error::config("start_timestamp", "must be a Sunday midnight (UTC)"));
        }
        if self.start_timestamp.rem_euclid(86_400) != 0 {
            return Err(Error::config("start_timestamp", "must be a Sunday midnight (UTC)"));
        }
        if !(self.extent_km > 0.0 && self.extent_km.is_finite()) {
            return Err(Error::config("extent_km", "must be positive"));
        }
        let sum: f64 = self.category_mix.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config("category_mix", format!("probabilities sum to {sum}, expected 1")));
        }
        for (name, p) in &self.category_mix {
            if !(*p >= 0.0) {
                return Err(Error::config("category_mix", format!("`{name}` has negative probability")));
            }
            if name.is_empty() || name.contains([':', ',']) || name.chars().any(char::is_whitespace) {
                return Err(Error::config("category_mix", format!("invalid category name `{name}`")));
            }
        }
        if self.category_mix.get(HOME).copied().unwrap_or(0.0) <= 0.0 {
            return Err(Error::config("category_mix", "needs a `home` category with positive probability"));
        }
        if !(0.0..=1.0).contains(&self.work_probability) {
            return Err(Error::config("work_probability", "must be in [0, 1]"));
        }
        for (field, v) in [
            ("taste_sigma", self.taste_sigma),
            ("popularity_sigma", self.popularity_sigma),
            ("place_duration_sigma", self.place_duration_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be finite and non-negative"));
            }
        }
        if !(self.familiarity_range_km > 0.0) {
            return Err(Error::config("familiarity_range_km", "must be positive"));
        }
        if self.familiar_per_category == 0 {
            return Err(Error::config("familiar_per_category", "must be at least 1"));
        }
        let mut names = std::collections::BTreeSet::new();
        for a in &self.attributes {
            let field = |f: &str| format!("attributes.{}.{f}", a.name);
            if !names.insert(a.name.as_str()) || a.name.is_empty() || a.name.contains(',') {
                return Err(Error::config("attributes", format!("duplicate or invalid name `{}`", a.name)));
            }
            if !(0.0..=1.0).contains(&a.base_rate) {
                return Err(Error::config(field("base_rate"), "must be in [0, 1]"));
            }
            if !(0.0..=1.0).contains(&a.strength) {
                return Err(Error::config(field("strength"), "must be in [0, 1]"));
            }
            for c in &a.target_categories {
                if !self.category_mix.contains_key(c) {
                    return Err(Error::config(field("target_categories"), format!("unknown category `{c}`")));
                }
            }
            for ch in &a.channels {
                if !(ch.param() > 0.0 && ch.param().is_finite()) {
                    return Err(Error::config(field(ch.name()), "parameter must be positive"));
                }
                match ch {
                    SignalChannel::ArrivalShift { start_hour, end_hour, .. }
                        if *start_hour > 23 || *end_hour > 24 || start_hour == end_hour =>
                    {
                        return Err(Error::config(field(ch.name()), "invalid hour band"));
                    }
                    SignalChannel::PrevCategoryAffinity { category, .. }
                    | SignalChannel::NextCategoryAffinity { category, .. }
                        if !self.category_mix.contains_key(category) =>
                    {
                        return Err(Error::config(field(ch.name()), format!("unknown category `{category}`")));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

/// Behavioral defaults of a category.
#[derive(Debug, Clone)]
struct CategoryProfile {
    median_min: f64,
    sigma: f64,
    /// Relative attractiveness by hour of day.
    hours: [f64; 24],
    weekend: f64,
}

fn hours(base: f64, bands: &[(usize, usize, f64)]) -> [f64; 24] {
    let mut h = [base; 24];
    for &(a, b, v) in bands {
        for x in &mut h[a..b] {
            *x = v;
        }
    }
    h
}

fn profile(name: &str) -> CategoryProfile {
    let p = |median_min, sigma, hours, weekend| CategoryProfile {
        median_min,
        sigma,
        hours,
        weekend,
    };
    match name {
        HOME => p(600.0, 0.3, hours(0.4, &[(0, 6, 8.0), (6, 10, 0.2), (16, 19, 1.0), (19, 21, 2.0), (21, 24, 5.0)]), 1.0),
        WORK => p(240.0, 0.15, hours(0.0, &[(7, 10, 6.0), (10, 12, 0.5), (12, 15, 3.0)]), 0.0),
        "restaurant" => p(60.0, 0.35, hours(0.1, &[(7, 11, 0.5), (11, 14, 3.0), (14, 18, 0.4), (18, 21, 3.0), (21, 23, 1.0)]), 1.2),
        "cafe" => p(30.0, 0.4, hours(0.1, &[(7, 11, 3.0), (11, 17, 1.2), (17, 20, 0.5)]), 1.0),
        "bar" => p(90.0, 0.4, hours(0.05, &[(0, 2, 1.0), (17, 19, 1.0), (19, 24, 3.0)]), 1.5),
        "theater" => p(150.0, 0.15, hours(0.02, &[(14, 16, 0.8), (18, 21, 3.0)]), 1.3),
        "museum" => p(90.0, 0.35, hours(0.02, &[(10, 17, 1.5)]), 1.8),
        "grocery_store" => p(20.0, 0.35, hours(0.05, &[(8, 17, 1.0), (17, 20, 1.8)]), 1.2),
        "gas_station" => p(8.0, 0.3, hours(0.05, &[(6, 22, 0.6)]), 1.0),
        "park" => p(60.0, 0.5, hours(0.02, &[(8, 19, 1.0)]), 2.0),
        "beach" => p(120.0, 0.4, hours(0.02, &[(9, 18, 1.0)]), 2.5),
        "surf_shop" => p(25.0, 0.4, hours(0.02, &[(9, 19, 0.6)]), 1.5),
        "gym" => p(70.0, 0.25, hours(0.05, &[(6, 9, 2.0), (17, 21, 2.5)]), 0.8),
        _ => p(45.0, 0.4, hours(0.05, &[(8, 22, 1.0)]), 1.0),
    }
}

/// Base Markov weight of moving from category `from` to `to`.
fn transition_weight(from: &str, to: &str) -> f64 {
    match (from, to) {
        (WORK, WORK) => 1.0,
        (a, b) if a == b => 0.2,
        ("theater", "restaurant") => 4.0,
        ("restaurant", "bar") => 3.0,
        ("restaurant", "theater") => 2.0,
        ("beach", "surf_shop") => 5.0,
        ("surf_shop", "beach") => 3.0,
        (WORK, "restaurant") => 2.0,
        ("gym", HOME) => 2.0,
        _ => 1.0,
    }
}

/// Per-place behavioral parameters implied by its attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceTruth {
    pub place_id: String,
    pub category: String,
    pub popularity: f64,
    pub duration_multiplier: f64,
    /// Choice boost by arrival hour of day.
    pub hour_boost: Vec<f64>,
    pub weekend_boost: f64,
    /// Choice boost by the category visited just before.
    pub prev_affinity: BTreeMap<String, f64>,
    /// Choice boost by the category visited just after.
    pub next_affinity: BTreeMap<String, f64>,
    pub attributes: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTruth {
    pub channel: SignalChannel,
    /// Effect applied to positive places.
    pub positive_effect: f64,
    /// Effect applied to negative places (always 1).
    pub negative_effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeTruth {
    pub name: String,
    pub strength: f64,
    pub base_rate: f64,
    pub target_categories: Vec<String>,
    pub channels: Vec<ChannelTruth>,
    pub n_positive: usize,
    pub n_negative: usize,
}

/// Empirical separation of one planted channel in a simulated log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalStat {
    pub attribute: String,
    pub channel: String,
    /// Place-level statistic that the channel shifts.
    pub statistic: String,
    pub positive_mean: f64,
    pub negative_mean: f64,
    /// Cohen's d over places (pooled standard deviation).
    pub effect_size: f64,
    pub n_positive: usize,
    pub n_negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldTruth {
    pub seed: u64,
    pub attributes: Vec<AttributeTruth>,
    pub places: Vec<PlaceTruth>,
    /// Filled by [`signal_report`] once visits are simulated.
    pub signal_report: Vec<SignalStat>,
}

impl WorldTruth {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
struct PlaceParams {
    popularity: f64,
    duration_multiplier: f64,
    hour_boost: [f64; 24],
    weekend_boost: f64,
    /// Indexed by category id.
    prev_affinity: Vec<f64>,
    next_affinity: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub places: PlaceTable,
    pub labels: Vec<LabelTable>,
    pub truth: WorldTruth,
    params: Vec<PlaceParams>,
    profiles: Vec<CategoryProfile>,
    /// Place indices by category id.
    by_category: Vec<Vec<PlaceIdx>>,
}

/// Largest-remainder apportionment of `n` over `weights`; ties go to the
/// earlier entry.
pub fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|a, b| {
        let ra = quotas[*a] - quotas[*a].floor();
        let rb = quotas[*b] - quotas[*b].floor();
        rb.total_cmp(&ra).then(a.cmp(b))
    });
    let assigned: usize = counts.iter().sum();
    for i in order.into_iter().take(n - assigned) {
        counts[i] += 1;
    }
    counts
}

fn uniform_choice(rng: &mut ChaCha8Rng, weights: impl Iterator<Item = f64> + Clone) -> Option<usize> {
    let total: f64 = weights.clone().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut r = rng.random::<f64>() * total;
    let mut last = None;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = Some(i);
            if r < w {
                return Some(i);
            }
            r -= w;
        }
    }
    last
}

/// Places, labels and per-place truth. Visits come from
/// [`simulate_visits`].
pub fn generate_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let names: Vec<&String> = config.category_mix.keys().collect();
    let weights: Vec<f64> = config.category_mix.values().copied().collect();
    let counts = apportion(config.n_places, &weights);
    if counts[names.iter().position(|n| *n == HOME).expect("validated")] == 0 {
        return Err(Error::config("category_mix", "too few places for a single home"));
    }

    let mut cats: Vec<&String> = names
        .iter()
        .zip(&counts)
        .flat_map(|(n, c)| std::iter::repeat_n(*n, *c))
        .collect();
    rand::seq::SliceRandom::shuffle(cats.as_mut_slice(), &mut seed::rng(config.seed, "synthworld/categories"));
    let mut coords = seed::rng(config.seed, "synthworld/coordinates");
    let records: Vec<PlaceRecord> = cats
        .iter()
        .enumerate()
        .map(|(i, c)| PlaceRecord {
            place_id: format!("p{i:05}"),
            category: (*c).clone(),
            x: coords.random::<f64>() * config.extent_km,
            y: coords.random::<f64>() * config.extent_km,
        })
        .collect();
    let places = PlaceTable::new(records)?;
    let n_cat = places.categories().len();
    let profiles: Vec<CategoryProfile> = places.categories().names().iter().map(|n| profile(n)).collect();
    let mut by_category = vec![Vec::new(); n_cat];
    for (i, p) in places.places().iter().enumerate() {
        by_category[p.category.index()].push(PlaceIdx(i as u32));
    }

    let pop_dist = LogNormal::new(0.0, config.popularity_sigma).map_err(|e| Error::config("popularity_sigma", e.to_string()))?;
    let noise_dist =
        LogNormal::new(0.0, config.place_duration_sigma).map_err(|e| Error::config("place_duration_sigma", e.to_string()))?;
    let mut pop_rng = seed::rng(config.seed, "synthworld/popularity");
    let mut noise_rng = seed::rng(config.seed, "synthworld/duration_noise");
    let mut params: Vec<PlaceParams> = (0..places.len())
        .map(|_| PlaceParams {
            popularity: pop_dist.sample(&mut pop_rng),
            duration_multiplier: noise_dist.sample(&mut noise_rng),
            hour_boost: [1.0; 24],
            weekend_boost: 1.0,
            prev_affinity: vec![1.0; n_cat],
            next_affinity: vec![1.0; n_cat],
        })
        .collect();

    let mut labels = Vec::new();
    let mut attr_truth = Vec::new();
    let mut place_attrs: Vec<BTreeMap<String, bool>> = vec![BTreeMap::new(); places.len()];
    for spec in &config.attributes {
        let mut rng = seed::rng(config.seed, &format!("synthworld/labels/{}", spec.name));
        let targets: Vec<Option<CategoryId>> = spec.target_categories.iter().map(|c| places.categories().get(c)).collect();
        let mut entries = BTreeMap::new();
        for (i, p) in places.places().iter().enumerate() {
            if !targets.contains(&Some(p.category)) {
                continue;
            }
            let positive = rng.random::<f64>() < spec.base_rate;
            entries.insert(p.place_id.clone(), positive);
            place_attrs[i].insert(spec.name.clone(), positive);
            if positive {
                apply_channels(&mut params[i], spec, &places);
            }
        }
        let table = LabelTable {
            attribute: spec.name.clone(),
            entries,
        };
        attr_truth.push(AttributeTruth {
            name: spec.name.clone(),
            strength: spec.strength,
            base_rate: spec.base_rate,
            target_categories: spec.target_categories.clone(),
            channels: spec
                .channels
                .iter()
                .map(|c| ChannelTruth {
                    channel: c.clone(),
                    positive_effect: c.effect(spec.strength),
                    negative_effect: 1.0,
                })
                .collect(),
            n_positive: table.n_positive(),
            n_negative: table.n_negative(),
        });
        labels.push(table);
    }
    labels.sort_by(|a, b| a.attribute.cmp(&b.attribute));

    let cat_names = places.categories().names();
    let sparse = |v: &[f64]| -> BTreeMap<String, f64> {
        v.iter()
            .enumerate()
            .filter(|(_, x)| **x != 1.0)
            .map(|(c, x)| (cat_names[c].clone(), *x))
            .collect()
    };
    let place_truth = places
        .places()
        .iter()
        .zip(&params)
        .zip(place_attrs)
        .map(|((p, q), attributes)| PlaceTruth {
            place_id: p.place_id.clone(),
            category: cat_names[p.category.index()].clone(),
            popularity: q.popularity,
            duration_multiplier: q.duration_multiplier,
            hour_boost: q.hour_boost.to_vec(),
            weekend_boost: q.weekend_boost,
            prev_affinity: sparse(&q.prev_affinity),
            next_affinity: sparse(&q.next_affinity),
            attributes,
        })
        .collect();

    Ok(World {
        config: config.clone(),
        truth: WorldTruth {
            seed: config.seed,
            attributes: attr_truth,
            places: place_truth,
            signal_report: Vec::new(),
        },
        places,
        labels,
        params,
        profiles,
        by_category,
    })
}

fn apply_channels(p: &mut PlaceParams, spec: &AttributeSpec, places: &PlaceTable) {
    for ch in &spec.channels {
        let e = ch.effect(spec.strength);
        match ch {
            SignalChannel::DurationShift { .. } => p.duration_multiplier *= e,
            SignalChannel::ArrivalShift { start_hour, end_hour, .. } => {
                for (h, b) in p.hour_boost.iter_mut().enumerate() {
                    if in_band(h as u32, *start_hour, *end_hour) {
                        *b *= e;
                    }
                }
            }
            SignalChannel::WeekendShift { .. } => p.weekend_boost *= e,
            SignalChannel::PrevCategoryAffinity { category, .. } => {
                if let Some(c) = places.categories().get(category) {
                    p.prev_affinity[c.index()] *= e;
                }
            }
            SignalChannel::NextCategoryAffinity { category, .. } => {
                if let Some(c) = places.categories().get(category) {
                    p.next_affinity[c.index()] *= e;
                }
            }
        }
    }
}

struct Person {
    home: PlaceIdx,
    work: Option<PlaceIdx>,
    taste: Vec<f64>,
    /// Familiar places per category id (home/work hold the anchor only).
    familiar: Vec<Vec<PlaceIdx>>,
}

impl World {
    fn category(&self, name: &str) -> Option<CategoryId> {
        self.places.categories().get(name)
    }

    fn make_person(&self, rng: &mut ChaCha8Rng) -> Person {
        let cfg = &self.config;
        let n_cat = self.by_category.len();
        let home_cat = self.category(HOME).expect("validated");
        let homes = &self.by_category[home_cat.index()];
        let home = homes[rng.random_range(0..homes.len())];
        let hp = self.places.get(home);
        let near = |p: PlaceIdx, range: f64| {
            self.params[p.index()].popularity * (-self.places.get(p).distance_km(hp) / range).exp()
        };
        let work_cat = self.category(WORK);
        let works = rng.random::<f64>() < cfg.work_probability;
        let work = match work_cat {
            Some(w) if works => {
                let cands = &self.by_category[w.index()];
                uniform_choice(rng, cands.iter().map(|p| near(*p, 3.0 * cfg.familiarity_range_km))).map(|i| cands[i])
            }
            _ => None,
        };
        let taste_dist = LogNormal::new(0.0, cfg.taste_sigma).expect("validated");
        let taste: Vec<f64> = (0..n_cat).map(|_| taste_dist.sample(rng)).collect();
        let mut familiar = vec![Vec::new(); n_cat];
        for c in 0..n_cat {
            if Some(CategoryId(c as u16)) == work_cat {
                familiar[c] = work.into_iter().collect();
                continue;
            }
            if CategoryId(c as u16) == home_cat {
                familiar[c] = vec![home];
                continue;
            }
            let cands = &self.by_category[c];
            let mut w: Vec<f64> = cands
                .iter()
                .map(|p| near(*p, cfg.familiarity_range_km) * self.clientele(*p, &taste))
                .collect();
            for _ in 0..cfg.familiar_per_category.min(cands.len()) {
                match uniform_choice(rng, w.iter().copied()) {
                    Some(i) => {
                        familiar[c].push(cands[i]);
                        w[i] = 0.0;
                    }
                    None => break,
                }
            }
            familiar[c].sort();
        }
        Person {
            home,
            work,
            taste,
            familiar,
        }
    }

    /// How much more likely a person with `taste` is to know place `p`: a
    /// place with an affinity for category `k` draws people who like `k`,
    /// scaling its weight by `affinity^min(1, taste_k / 2)`.
    fn clientele(&self, p: PlaceIdx, taste: &[f64]) -> f64 {
        let q = &self.params[p.index()];
        let mut m = 1.0;
        for (k, t) in taste.iter().enumerate() {
            let rho = (t / 2.0).min(1.0);
            m *= (q.prev_affinity[k] * q.next_affinity[k]).powf(rho);
        }
        m
    }

    /// Next category after `from` at `hour`; `None` only if nothing is
    /// reachable.
    fn next_category(
        &self,
        person: &Person,
        from: CategoryId,
        hour: usize,
        weekend: bool,
        allow_home: bool,
        rng: &mut ChaCha8Rng,
    ) -> Option<CategoryId> {
        let names = self.places.categories().names();
        let home = self.category(HOME);
        let weights = (0..names.len()).map(|c| {
            let id = CategoryId(c as u16);
            if person.familiar[c].is_empty() || (!allow_home && Some(id) == home) {
                return 0.0;
            }
            let prof = &self.profiles[c];
            let day = if weekend { prof.weekend } else { 1.0 };
            let taste = if Some(id) == home { 1.0 } else { person.taste[c] };
            transition_weight(&names[from.index()], &names[c]) * prof.hours[hour % 24] * day * taste
        });
        uniform_choice(rng, weights).map(|c| CategoryId(c as u16))
    }

    fn choose_place(
        &self,
        person: &Person,
        cat: CategoryId,
        hour: usize,
        weekend: bool,
        prev: CategoryId,
        next: CategoryId,
        rng: &mut ChaCha8Rng,
    ) -> PlaceIdx {
        let cands = &person.familiar[cat.index()];
        let weights = cands.iter().map(|p| {
            let q = &self.params[p.index()];
            q.popularity
                * q.hour_boost[hour % 24]
                * if weekend { q.weekend_boost } else { 1.0 }
                * q.prev_affinity[prev.index()]
                * q.next_affinity[next.index()]
        });
        cands[uniform_choice(rng, weights).unwrap_or(0)]
    }

    fn duration(&self, place: PlaceIdx, rng: &mut ChaCha8Rng) -> i64 {
        let c = self.places.category_of(place).index();
        let prof = &self.profiles[c];
        let median = prof.median_min * self.params[place.index()].duration_multiplier;
        let d = LogNormal::new(median.ln(), prof.sigma).expect("finite").sample(rng);
        (d.round() as i64).clamp(MIN_DURATION, MAX_DURATION)
    }

    /// One person's visits as `(place, start_minute, duration_minutes)`.
    fn simulate_person(&self, index: usize) -> Vec<(PlaceIdx, i64, i64)> {
        let mut rng = seed::rng_indexed(self.config.seed, "synthworld/person", index as u64);
        let person = self.make_person(&mut rng);
        let home_cat = self.places.category_of(person.home);
        let mut out: Vec<(PlaceIdx, i64, i64)> = Vec::new();
        let emit_home = |out: &mut Vec<(PlaceIdx, i64, i64)>, from: i64, to: i64| {
            let d = (to - from).min(MAX_DURATION);
            if d >= MIN_DURATION {
                out.push((person.home, from, d));
            }
        };

        let mut home_since = 0i64;
        for day in 0..self.config.n_days as i64 {
            let ds = day * MINUTES_PER_DAY;
            let weekend = matches!(day % 7, 0 | 6);
            let planned = if person.work.is_some() && !weekend {
                420 + rng.random_range(0..=90)
            } else {
                510 + rng.random_range(0..=180)
            };
            let leave = (ds + planned).max(home_since + 360);
            if leave >= ds + MINUTES_PER_DAY - 120 {
                continue;
            }
            emit_home(&mut out, home_since, leave);
            let mut t = leave;
            let mut cur = home_cat;
            let mut rested = false;
            let mut outings = 0;
            let hour = |t: i64| (t.rem_euclid(MINUTES_PER_DAY) / 60) as usize;
            let mut planned = self.next_category(&person, cur, hour(t), weekend, false, &mut rng);
            loop {
                t += rng.random_range(5..=30);
                let cat = match planned {
                    Some(c) if c != home_cat => c,
                    _ => {
                        if !rested && t < ds + 16 * 60 {
                            rested = true;
                            let end = t + rng.random_range(60..=180);
                            emit_home(&mut out, t, end);
                            t = end;
                            cur = home_cat;
                            planned = self.next_category(&person, cur, hour(t), weekend, false, &mut rng);
                            if planned.is_some() {
                                continue;
                            }
                        }
                        home_since = t;
                        break;
                    }
                };
                let est_departure = t + self.profiles[cat.index()].median_min as i64;
                let next = if outings + 1 >= MAX_OUTINGS_PER_DAY || est_departure >= ds + MINUTES_PER_DAY - 30 {
                    home_cat
                } else {
                    self.next_category(&person, cat, hour(est_departure), weekend, true, &mut rng)
                        .unwrap_or(home_cat)
                };
                let place = self.choose_place(&person, cat, hour(t), weekend, cur, next, &mut rng);
                let d = self.duration(place, &mut rng);
                out.push((place, t, d));
                t += d;
                cur = cat;
                planned = Some(next);
                outings += 1;
            }
        }
        emit_home(&mut out, home_since, home_since + 480);
        out
    }
}

/// Simulate every person's trajectories. Persons are independent and use
/// their own RNG streams, so the log does not depend on the worker count.
pub fn simulate_visits(world: &World) -> Result<VisitLog> {
    let n = world.config.n_people;
    let persons: Vec<String> = (0..n).map(|i| format!("u{i:06}")).collect();
    let per_person = par::map_range(n, |i| world.simulate_person(i));
    let start = world.config.start_timestamp;
    let mut events = Vec::with_capacity(per_person.iter().map(Vec::len).sum());
    for (i, visits) in per_person.into_iter().enumerate() {
        for (place, start_min, dur) in visits {
            events.push(VisitEvent {
                person: i as u32,
                place,
                arrival: start + start_min * SECONDS_PER_MINUTE,
                duration_min: dur as u32,
            });
        }
    }
    VisitLog::from_sorted_events(persons, events, world.places.len())
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, v.sqrt())
}

/// Window used by the transition statistics of the signal report.
pub const REPORT_WINDOW_HOURS: u32 = 4;

/// Per-channel place-level statistic of each attribute, positives versus
/// negatives, measured on `log`.
pub fn signal_report(world: &World, log: &VisitLog) -> Vec<SignalStat> {
    let by_place = log.events_by_place();
    let events = log.events();
    let fcfg = FeaturizerConfig {
        transition_windows: vec![REPORT_WINDOW_HOURS],
        ..FeaturizerConfig::default()
    };
    let mut out = Vec::new();
    for spec in &world.config.attributes {
        let Some(labels) = world.labels.iter().find(|l| l.attribute == spec.name) else {
            continue;
        };
        for ch in &spec.channels {
            let stat = |idx: &[usize]| -> f64 {
                let visits = idx.iter().map(|i| &events[*i]);
                let n = idx.len() as f64;
                match ch {
                    SignalChannel::DurationShift { .. } => visits.map(|v| f64::from(v.duration_min)).sum::<f64>() / n,
                    SignalChannel::ArrivalShift { start_hour, end_hour, .. } => {
                        visits
                            .filter(|v| in_band((featurizer::hour_of_week(v.arrival, 0) % 24) as u32, *start_hour, *end_hour))
                            .count() as f64
                            / n
                    }
                    SignalChannel::WeekendShift { .. } => {
                        visits
                            .filter(|v| matches!(featurizer::hour_of_week(v.arrival, 0) / 24, 0 | 6))
                            .count() as f64
                            / n
                    }
                    SignalChannel::PrevCategoryAffinity { category, .. }
                    | SignalChannel::NextCategoryAffinity { category, .. } => {
                        let dir = if matches!(ch, SignalChannel::PrevCategoryAffinity { .. }) {
                            Direction::Prev
                        } else {
                            Direction::Next
                        };
                        let Some(c) = world.places.categories().get(category) else {
                            return 0.0;
                        };
                        featurizer::transition_features(log, &world.places, idx, dir, &fcfg)
                            .into_iter()
                            .find(|(k, _)| *k == c.index())
                            .map_or(0.0, |(_, v)| v)
                    }
                }
            };
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for (id, l) in &labels.entries {
                let p = world.places.lookup(id).expect("labels come from the world");
                let idx = &by_place[p.index()];
                if idx.is_empty() {
                    continue;
                }
                if *l {
                    pos.push(stat(idx));
                } else {
                    neg.push(stat(idx));
                }
            }
            if pos.is_empty() || neg.is_empty() {
                continue;
            }
            let (mp, sp) = mean_sd(&pos);
            let (mn, sn) = mean_sd(&neg);
            let pooled = (((pos.len() - 1) as f64 * sp * sp + (neg.len() - 1) as f64 * sn * sn)
                / ((pos.len() + neg.len()) as f64 - 2.0).max(1.0))
            .sqrt();
            let statistic = match ch {
                SignalChannel::DurationShift { .. } => "mean visit duration (min)".to_string(),
                SignalChannel::ArrivalShift { start_hour, end_hour, .. } => {
                    format!("fraction of arrivals in hours {start_hour}-{end_hour}")
                }
                SignalChannel::WeekendShift { .. } => "fraction of arrivals on weekends".to_string(),
                SignalChannel::PrevCategoryAffinity { category, .. } => {
                    format!("fraction of visits preceded by {category} within {REPORT_WINDOW_HOURS}h")
                }
                SignalChannel::NextCategoryAffinity { category, .. } => {
                    format!("fraction of visits followed by {category} within {REPORT_WINDOW_HOURS}h")
                }
            };
            out.push(SignalStat {
                attribute: spec.name.clone(),
                channel: ch.name().to_string(),
                statistic,
                positive_mean: mp,
                negative_mean: mn,
                effect_size: if pooled > 0.0 { (mp - mn) / pooled } else { 0.0 },
                n_positive: pos.len(),
                n_negative: neg.len(),
            });
        }
    }
    out
}

/// Generate, simulate and attach the signal report.
pub fn build(config: &WorldConfig) -> Result<(World, VisitLog)> {
    let mut world = generate_world(config)?;
    let log = simulate_visits(&world)?;
    world.truth.signal_report = signal_report(&world, &log);
    Ok((world, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> WorldConfig {
        WorldConfig {
            n_places: 100,
            n_people: 50,
            n_days: 7,
            seed,
            attributes: vec![AttributeSpec {
                name: "romantic".into(),
                base_rate: 0.3,
                strength: 1.0,
                target_categories: vec![
                    "restaurant".into(),
                    "cafe".into(),
                    "bar".into(),
                    "park".into(),
                    "gym".into(),
                    "museum".into(),
                    "theater".into(),
                    "beach".into(),
                    "grocery_store".into(),
                    "gas_station".into(),
                    "surf_shop".into(),
                    "work".into(),
                    "home".into(),
                ],
                channels: vec![],
            }],
            ..WorldConfig::default()
        }
    }

    #[test]
    fn apportionment() {
        assert_eq!(apportion(10, &[0.5, 0.25, 0.25]), vec![5, 3, 2]);
        assert_eq!(apportion(7, &[1.0, 1.0, 1.0]), vec![3, 2, 2]);
        let c = apportion(2000, &default_category_mix().values().copied().collect::<Vec<_>>());
        assert_eq!(c.iter().sum::<usize>(), 2000);
    }

    #[test]
    fn labels_reproducible_and_seed_dependent() {
        let a = generate_world(&small(7)).unwrap();
        let b = generate_world(&small(7)).unwrap();
        let c = generate_world(&small(8)).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_ne!(a.labels, c.labels);
        let n_pos = a.labels[0].n_positive();
        assert!((10..=55).contains(&n_pos), "{n_pos}");
    }

    #[test]
    fn null_attribute_params_identical() {
        let w = generate_world(&WorldConfig {
            n_places: 200,
            n_people: 10,
            n_days: 1,
            ..WorldConfig::default()
        })
        .unwrap();
        let null = w.truth.attributes.iter().find(|a| a.strength == 0.0).unwrap();
        assert!(null.channels.iter().all(|c| c.positive_effect == c.negative_effect));
        let long = w.truth.attributes.iter().find(|a| a.name == "long_stay").unwrap();
        assert!((long.channels[0].positive_effect - 1.64).abs() < 1e-12);
    }

    #[test]
    fn one_person_one_day() {
        let cfg = WorldConfig {
            n_places: 60,
            n_people: 1,
            n_days: 1,
            ..small(3)
        };
        let (_, log) = build(&cfg).unwrap();
        assert!(log.len() >= 2);
        assert!(log.check_invariants());
    }

    #[test]
    fn config_validation_names_field() {
        let mut cfg = small(1);
        cfg.category_mix.insert("home".into(), 0.0);
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "category_mix"),
            other => panic!("{other:?}"),
        }
        let mut cfg = small(1);
        cfg.attributes[0].strength = 1.5;
        assert!(cfg.validate().is_err());
        let cfg = WorldConfig {
            start_timestamp: DEFAULT_START + 86_400,
            ..small(1)
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn band_wraps() {
        assert!(in_band(23, 22, 2));
        assert!(in_band(1, 22, 2));
        assert!(!in_band(2, 22, 2));
        assert!(in_band(7, 7, 10) && !in_band(10, 7, 10));
    }
}
