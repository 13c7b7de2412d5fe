//! Pipeline orchestration for the `placeattr` binary.
//!
//! Every subcommand reads one run config, applies flag overrides, writes its
//! outputs under the run directory and records a manifest in
//! `<out>/manifests/<command>.json` (`<command>_<source>.json` for `train`
//! and `evaluate`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use placeattr::domain::{self, LabelTable, PlaceTable, VisitLog};
use placeattr::embedder::{self, WalsConfig};
use placeattr::evaluator::{self, DistributionKind, EvaluatorConfig, FeatureSource};
use placeattr::featurizer::{FeatureGroup, FeatureMatrix, FeaturizerConfig};
use placeattr::learner::{self, LearnerConfig, LinearModel};
use placeattr::synthworld::{self, WorldConfig};
use placeattr::{par, seed};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] placeattr::Error),

    #[error("missing {artifact} at {path}; run `placeattr {producer}` first")]
    MissingArtifact {
        artifact: &'static str,
        path: PathBuf,
        producer: &'static str,
    },

    #[error("cannot read config {path}: {msg}")]
    ConfigFile { path: PathBuf, msg: String },

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::ConfigFile { .. } => "config",
            CliError::Usage(_) => "usage",
        }
    }

    /// `error: kind=<kind> msg="<message>"` on one line.
    pub fn machine_line(&self) -> String {
        let msg = self.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
        format!("error: kind={} msg=\"{msg}\"", self.kind())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Inputs default to the simulated world under `<out>/world/`.
    pub places: Option<PathBuf>,
    pub visits: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            places: None,
            visits: None,
            labels: None,
            out: PathBuf::from("run"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSection {
    pub rank: usize,
    pub lambda: f64,
    pub max_sweeps: usize,
    pub tol: f64,
    pub implicit_weight: f64,
    /// Per-cell visit-count cap.
    pub cap: u32,
    /// Radius for the location-bias divisor.
    pub radius_km: f64,
}

impl Default for EmbedderSection {
    fn default() -> Self {
        let w = WalsConfig::default();
        EmbedderSection {
            rank: w.rank,
            lambda: w.lambda,
            max_sweeps: w.max_sweeps,
            tol: w.tol,
            implicit_weight: w.implicit_weight,
            cap: 10,
            radius_km: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub top_n: usize,
    pub distributions: Vec<String>,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            top_n: 10,
            distributions: ["duration", "day_of_week", "hour_of_day", "tprev:4", "tnext:4"]
                .map(String::from)
                .to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Fixed offset of the dataset's local time from UTC.
    pub utc_offset_seconds: i64,
    pub paths: PathsConfig,
    pub world: WorldConfig,
    pub featurizer: FeaturizerConfig,
    pub embedder: EmbedderSection,
    pub learner: LearnerConfig,
    pub evaluator: EvaluatorConfig,
    pub report: ReportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            utc_offset_seconds: 0,
            paths: PathsConfig::default(),
            world: WorldConfig::default(),
            featurizer: FeaturizerConfig::default(),
            embedder: EmbedderSection::default(),
            learner: LearnerConfig::default(),
            evaluator: EvaluatorConfig::default(),
            report: ReportSection::default(),
        }
    }
}

/// Flag values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Parse TOML, or JSON when the file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|msg| CliError::ConfigFile {
            path: path.to_path_buf(),
            msg: msg.replace('\n', " "),
        })
    }

    /// Apply overrides and check every section.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(out) = &o.out {
            self.paths.out = out.clone();
        }
        let Some(seed) = self.seed else {
            return Err(placeattr::Error::config("seed", "required (in the config file or via --seed)").into());
        };
        if self.world.seed != 0 {
            return Err(placeattr::Error::config(
                "world.seed",
                "is derived from the top-level seed; set `seed` instead",
            )
            .into());
        }
        self.world.seed = seed::derive(seed, "synthworld");
        if self.featurizer.utc_offset_seconds != 0 && self.featurizer.utc_offset_seconds != self.utc_offset_seconds {
            return Err(placeattr::Error::config(
                "featurizer.utc_offset_seconds",
                "conflicts with the top-level utc_offset_seconds",
            )
            .into());
        }
        self.featurizer.utc_offset_seconds = self.utc_offset_seconds;
        self.world.validate().map_err(prefix("world"))?;
        self.featurizer.validate().map_err(prefix("featurizer"))?;
        self.wals().validate().map_err(prefix("embedder"))?;
        if self.embedder.cap == 0 {
            return Err(placeattr::Error::config("embedder.cap", "must be at least 1").into());
        }
        if !(self.embedder.radius_km > 0.0) {
            return Err(placeattr::Error::config("embedder.radius_km", "must be positive").into());
        }
        self.learner.validate().map_err(prefix("learner"))?;
        self.evaluator.validate().map_err(prefix("evaluator"))?;
        for d in &self.report.distributions {
            d.parse::<DistributionKind>().map_err(prefix("report"))?;
        }
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("resolved config has a seed")
    }

    pub fn wals(&self) -> WalsConfig {
        WalsConfig {
            rank: self.embedder.rank,
            lambda: self.embedder.lambda,
            max_sweeps: self.embedder.max_sweeps,
            tol: self.embedder.tol,
            implicit_weight: self.embedder.implicit_weight,
            seed: seed::derive(self.seed.unwrap_or(0), "embedder"),
        }
    }

    fn out(&self) -> &Path {
        &self.paths.out
    }

    fn places_path(&self) -> PathBuf {
        self.paths.places.clone().unwrap_or_else(|| self.out().join("world/places.csv"))
    }

    fn visits_path(&self) -> PathBuf {
        self.paths.visits.clone().unwrap_or_else(|| self.out().join("world/visits.csv"))
    }

    fn labels_path(&self) -> PathBuf {
        self.paths.labels.clone().unwrap_or_else(|| self.out().join("world/labels.csv"))
    }

    /// SHA-256 of the canonical JSON rendering of the resolved config.
    pub fn sha256(&self) -> String {
        hex(&Sha256::digest(self.canonical_json().as_bytes()))
    }

    fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

fn prefix(section: &'static str) -> impl Fn(placeattr::Error) -> CliError {
    move |e| match e {
        placeattr::Error::Config { field, msg } => placeattr::Error::Config {
            field: format!("{section}.{field}"),
            msg,
        }
        .into(),
        other => other.into(),
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| placeattr::Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Featurize,
    Embed,
    Train,
    Evaluate,
    Ablate,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Featurize => "featurize",
            Command::Embed => "embed",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Ablate => "ablate",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'static str,
    tool_version: &'static str,
    seed: u64,
    source: Option<&'static str>,
    config_sha256: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    config: &'a RunConfig,
}

/// Tracks files read and written by one command, for its manifest.
struct Run<'a> {
    config: &'a RunConfig,
    inputs: BTreeSet<PathBuf>,
    outputs: BTreeSet<PathBuf>,
}

impl<'a> Run<'a> {
    fn new(config: &'a RunConfig) -> Self {
        Run {
            config,
            inputs: BTreeSet::new(),
            outputs: BTreeSet::new(),
        }
    }

    fn input(&mut self, path: PathBuf, artifact: &'static str, producer: &'static str) -> Result<PathBuf> {
        if !path.exists() {
            return Err(CliError::MissingArtifact {
                artifact,
                path,
                producer,
            });
        }
        self.inputs.insert(path.clone());
        Ok(path)
    }

    /// Path under the run directory, recorded as an output.
    fn output(&mut self, rel: impl AsRef<Path>) -> PathBuf {
        let p = self.config.out().join(rel);
        self.outputs.insert(p.clone());
        p
    }

    fn write_text(&mut self, rel: impl AsRef<Path>, text: &str) -> Result<()> {
        let p = self.output(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| placeattr::Error::io(dir, e))?;
        }
        std::fs::write(&p, text).map_err(|e| placeattr::Error::io(&p, e))?;
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: impl AsRef<Path>, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| placeattr::Error::Format(e.to_string()))?;
        self.write_text(rel, &(text + "\n"))
    }

    fn write_matrix(&mut self, rel: &str, m: &FeatureMatrix) -> Result<()> {
        let p = self.output(rel);
        let (c, r) = FeatureMatrix::sidecar_paths(&p);
        self.outputs.insert(c);
        self.outputs.insert(r);
        m.write(&p)?;
        Ok(())
    }

    fn finish(self, command: Command, source: Option<FeatureSource>) -> Result<PathBuf> {
        let rel = |p: &Path| {
            p.strip_prefix(self.config.out())
                .unwrap_or(p)
                .to_string_lossy()
                .replace('\\', "/")
        };
        let hash_all = |set: &BTreeSet<PathBuf>| -> Result<BTreeMap<String, String>> {
            set.iter().map(|p| Ok((rel(p), file_sha256(p)?))).collect()
        };
        let manifest = Manifest {
            command: command.name(),
            tool_version: VERSION,
            seed: self.config.seed(),
            source: source.map(FeatureSource::as_str),
            config_sha256: self.config.sha256(),
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(&self.outputs)?,
            config: self.config,
        };
        let file = match source {
            Some(s) => format!("{}_{s}.json", command.name()),
            None => format!("{}.json", command.name()),
        };
        let path = self.config.out().join("manifests").join(file);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| placeattr::Error::io(dir, e))?;
        }
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| placeattr::Error::Format(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| placeattr::Error::io(&path, e))?;
        Ok(path)
    }
}

/// Run one command with `workers` threads (0 = all cores). Returns the
/// manifest path.
pub fn run(command: Command, config: &RunConfig, source: FeatureSource, workers: usize) -> Result<PathBuf> {
    par::with_workers(workers, || match command {
        Command::Simulate => cmd_simulate(config),
        Command::Featurize => cmd_featurize(config),
        Command::Embed => cmd_embed(config),
        Command::Train => cmd_train(config, source),
        Command::Evaluate => cmd_evaluate(config, source),
        Command::Ablate => cmd_ablate(config),
        Command::Report => cmd_report(config),
    })
}

pub fn cmd_simulate(config: &RunConfig) -> Result<PathBuf> {
    let mut run = Run::new(config);
    log::info!(
        "simulating {} places, {} people, {} days",
        config.world.n_places,
        config.world.n_people,
        config.world.n_days
    );
    let (world, log) = synthworld::build(&config.world)?;
    domain::write_places(run.output("world/places.csv"), &world.places)?;
    domain::write_visit_log(run.output("world/visits.csv"), &log, &world.places)?;
    domain::write_labels(run.output("world/labels.csv"), &world.labels)?;
    let truth = run.output("world/world_truth.json");
    world.truth.write(truth)?;
    run.finish(Command::Simulate, None)
}

fn load_places(run: &mut Run) -> Result<PlaceTable> {
    let p = run.input(run.config.places_path(), "places file", "simulate")?;
    Ok(domain::load_places(p)?)
}

fn load_log(run: &mut Run, places: &PlaceTable) -> Result<VisitLog> {
    let p = run.input(run.config.visits_path(), "visits file", "simulate")?;
    Ok(domain::load_visit_log(p, places)?)
}

fn load_labels(run: &mut Run, places: &PlaceTable) -> Result<Vec<LabelTable>> {
    let p = run.input(run.config.labels_path(), "labels file", "simulate")?;
    Ok(domain::load_labels(p, places)?)
}

const STEPS_MATRIX: &str = "features/steps.csv";
const EMBEDDING_MATRIX: &str = "features/embedding.csv";

pub fn cmd_featurize(config: &RunConfig) -> Result<PathBuf> {
    let mut run = Run::new(config);
    let places = load_places(&mut run)?;
    let log = load_log(&mut run, &places)?;
    let m = placeattr::featurizer::featurize(&log, &places, &config.featurizer)?;
    log::info!("featurized {} places x {} columns", m.n_rows(), m.n_cols());
    run.write_matrix(STEPS_MATRIX, &m)?;
    run.finish(Command::Featurize, None)
}

pub fn cmd_embed(config: &RunConfig) -> Result<PathBuf> {
    let mut run = Run::new(config);
    let places = load_places(&mut run)?;
    let log = load_log(&mut run, &places)?;
    let cov = embedder::build_covisit_matrix(&log, &places, config.embedder.cap, config.embedder.radius_km)?;
    let f = embedder::embed_covisits(&cov, &config.wals())?;
    log::info!("embedding: {} sweeps, final objective {}", f.sweep_losses.len(), f.final_loss);
    for name in ["person_factors.csv", "place_factors.csv", "person_ids.csv", "place_ids.csv", "factors.json"] {
        run.output(Path::new("embedding").join(name));
    }
    embedder::write_factors(config.out().join("embedding"), &f)?;
    // Only places someone visited have a meaningful embedding.
    let visited: Vec<usize> = domain::distinct_visitor_counts(&log)
        .iter()
        .enumerate()
        .filter(|(_, c)| **c > 0)
        .map(|(i, _)| i)
        .collect();
    let m = embedder::place_embedding_features(&f)?.select_rows(&visited);
    run.write_matrix(EMBEDDING_MATRIX, &m)?;
    run.finish(Command::Embed, None)
}

fn read_matrix(run: &mut Run, rel: &str, producer: &'static str) -> Result<FeatureMatrix> {
    let p = run.input(run.config.out().join(rel), "feature matrix", producer)?;
    let (c, r) = FeatureMatrix::sidecar_paths(&p);
    run.inputs.insert(c);
    run.inputs.insert(r);
    Ok(FeatureMatrix::read(p)?)
}

fn source_matrix(run: &mut Run, source: FeatureSource) -> Result<FeatureMatrix> {
    match source {
        FeatureSource::Steps => read_matrix(run, STEPS_MATRIX, "featurize"),
        FeatureSource::Embedding => read_matrix(run, EMBEDDING_MATRIX, "embed"),
        FeatureSource::Combined => {
            let a = read_matrix(run, STEPS_MATRIX, "featurize")?;
            let b = read_matrix(run, EMBEDDING_MATRIX, "embed")?;
            Ok(evaluator::combine_sources(&a, &b)?.0)
        }
        FeatureSource::Custom => Err(CliError::Usage("source `custom` is library-only".into())),
    }
}

fn model_rel(source: FeatureSource, attribute: &str) -> PathBuf {
    Path::new("models").join(source.as_str()).join(format!("{attribute}.json"))
}

pub fn cmd_train(config: &RunConfig, source: FeatureSource) -> Result<PathBuf> {
    let mut run = Run::new(config);
    let places = load_places(&mut run)?;
    let labels = load_labels(&mut run, &places)?;
    let m = source_matrix(&mut run, source)?;
    let lc = &config.learner;
    let trained = par::map(&labels, |l| -> placeattr::Result<_> {
        let sel = learner::select_features(&m, l, lc.max_features, lc.mi_bins)?;
        let seed = seed::derive(config.seed(), &format!("learner/{}", l.attribute));
        let model = learner::train(&m, l, &sel, lc, seed)?;
        Ok((sel, model))
    });
    for (l, t) in labels.iter().zip(trained) {
        let (sel, model) = t?;
        let rel = model_rel(source, &l.attribute);
        let path = run.output(&rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| placeattr::Error::io(dir, e))?;
        }
        model.save(&path)?;
        let mut csv = String::from("rank,feature_name,mi_nats,kept\n");
        for (i, r) in sel.ranking.iter().enumerate() {
            let _ = writeln!(csv, "{},{},{},{}", i + 1, r.name, r.mi_nats, u8::from(i < sel.k_kept));
        }
        run.write_text(rel.with_extension("selection.csv"), &csv)?;
    }
    run.finish(Command::Train, Some(source))
}

fn cv_seed(config: &RunConfig, attribute: &str) -> u64 {
    seed::derive(config.seed(), &format!("evaluator/{attribute}"))
}

pub fn cmd_evaluate(config: &RunConfig, source: FeatureSource) -> Result<PathBuf> {
    let mut run = Run::new(config);
    let places = load_places(&mut run)?;
    let labels = load_labels(&mut run, &places)?;
    let m = source_matrix(&mut run, source)?;
    let k = config.evaluator.folds;
    let reports = par::map(&labels, |l| {
        evaluator::cross_validate(&m, l, k, &config.learner, cv_seed(config, &l.attribute), source)
    })
    .into_iter()
    .collect::<placeattr::Result<Vec<_>>>()?;
    let stem = format!("reports/eval_{source}");
    run.write_text(format!("{stem}.csv"), &evaluator::summary_csv(&reports))?;
    run.write_text(format!("{stem}_folds.csv"), &evaluator::fold_aucs_csv(&reports))?;
    run.write_text(format!("{stem}.txt"), &evaluator::summary_table(&reports))?;
    run.write_json(format!("{stem}.json"), &reports)?;
    print!("{}", evaluator::summary_table(&reports));
    run.finish(Command::Evaluate, Some(source))
}

pub fn cmd_ablate(config: &RunConfig) -> Result<PathBuf> {
    let mut run = Run::new(config);
    let places = load_places(&mut run)?;
    let labels = load_labels(&mut run, &places)?;
    let m = read_matrix(&mut run, STEPS_MATRIX, "featurize")?;
    let k = config.evaluator.folds;
    let merge = config.evaluator.merge_transitions;
    let reports = par::map(&labels, |l| {
        evaluator::ablate(&m, l, &FeatureGroup::STEPS, k, &config.learner, cv_seed(config, &l.attribute), merge)
    })
    .into_iter()
    .collect::<placeattr::Result<Vec<_>>>()?;
    run.write_text("reports/ablation.csv", &evaluator::ablation_csv(&reports))?;
    run.write_text("reports/ablation.txt", &evaluator::ablation_table(&reports))?;
    run.write_json("reports/ablation.json", &reports)?;
    print!("{}", evaluator::ablation_table(&reports));
    run.finish(Command::Ablate, None)
}

pub fn cmd_report(config: &RunConfig) -> Result<PathBuf> {
    let mut run = Run::new(config);
    let places = load_places(&mut run)?;
    let log = load_log(&mut run, &places)?;
    let labels = load_labels(&mut run, &places)?;

    for l in &labels {
        let p = run.input(
            config.out().join(model_rel(FeatureSource::Steps, &l.attribute)),
            "trained STEPS model",
            "train --source steps",
        )?;
        let model = LinearModel::load(p)?;
        let (pos, neg) = learner::top_features(&model, config.report.top_n);
        let mut csv = String::from("sign,rank,feature_name,weight\n");
        for (sign, list) in [("positive", &pos), ("negative", &neg)] {
            for (i, (f, w)) in list.iter().enumerate() {
                let _ = writeln!(csv, "{sign},{},{f},{w}", i + 1);
            }
        }
        run.write_text(format!("reports/top_features/{}.csv", l.attribute), &csv)?;

        for d in &config.report.distributions {
            let kind: DistributionKind = d.parse()?;
            match evaluator::export_distributions(&log, &places, l, kind, &config.featurizer) {
                Ok(dist) => {
                    let name = d.replace(':', "_");
                    let path = run.output(format!("reports/distributions/{}/{name}.csv", l.attribute));
                    dist.write_csv(path)?;
                }
                Err(e @ placeattr::Error::EmptyClass { .. }) => log::warn!("skipping distribution: {e}"),
                Err(e) => return Err(e.into()),
            }
        }
    }

    // Coverage of each feature source over all places.
    let mut covered = BTreeMap::new();
    covered.insert(
        "steps".to_string(),
        domain::eligible_places(&log, config.featurizer.min_visitors)
            .into_iter()
            .map(|p| places.get(p).place_id.clone())
            .collect::<BTreeSet<_>>(),
    );
    let emb = config.out().join(EMBEDDING_MATRIX);
    if emb.exists() {
        let m = read_matrix(&mut run, EMBEDDING_MATRIX, "embed")?;
        covered.insert("embedding".to_string(), m.row_ids().iter().cloned().collect());
    }
    let cov = evaluator::coverage(&places, &covered)?;
    run.write_json("reports/coverage.json", &cov)?;
    run.finish(Command::Report, None)
}
