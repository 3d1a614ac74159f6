//! Experiment configs and on-disk artifacts.
//!
//! A config file selects an experiment, one or more samplers and the target
//! parameters. Running it writes, under the output directory:
//!
//! - `chains/<algorithm>_T<temperature>_k<k>_seed<seed>.jsonl`, one record per line
//! - `divergence.csv`, one row per chain
//! - `summary.csv`, mean JS per `(algorithm, temperature, k)`
//! - `masses.json` when cell masses were estimated
//! - `verify.json` for the verify experiment
//! - `metadata.json`

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize};

use crate::diagnostics::{
    report_from_rows, run_jobs, toy_jobs, toy_specs, ChainJob, ChainResult, DivergenceReport,
    ToyGrid, ToyProbs,
};
use crate::error::Error;
use crate::geometry::BoundingBox;
use crate::measures::{anneal_probs, BaseCenter, BaseMeasureSpec, BaseMode, VoronoiMeasureSpec};
use crate::models::{exact_distribution, Control, LinearAttributeClassifier, TinyEmbedLM};
use crate::samplers::SamplerConfig;
use crate::verify::{run_properties, PropertyResult};

pub const DEFAULT_TEMPERATURES: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Toy,
    Hypercube,
    Lm,
    Controlled,
    Verify,
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<SamplerConfig>, D::Error> {
    use serde::de::value::{MapAccessDeserializer, SeqAccessDeserializer};
    use serde::de::{MapAccess, SeqAccess, Visitor};

    struct OneOrMany;

    impl<'de> Visitor<'de> for OneOrMany {
        type Value = Vec<SamplerConfig>;

        fn expecting(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            f.write_str("a sampler table or an array of sampler tables")
        }

        fn visit_map<A: MapAccess<'de>>(self, map: A) -> Result<Self::Value, A::Error> {
            Ok(vec![SamplerConfig::deserialize(MapAccessDeserializer::new(map))?])
        }

        fn visit_seq<A: SeqAccess<'de>>(self, seq: A) -> Result<Self::Value, A::Error> {
            Vec::deserialize(SeqAccessDeserializer::new(seq))
        }
    }

    d.deserialize_any(OneOrMany)
}

fn default_temperatures() -> Vec<f64> {
    DEFAULT_TEMPERATURES.to_vec()
}
fn default_probs() -> Vec<f64> {
    vec![0.7, 0.1, 0.1, 0.1]
}
fn default_peak() -> f64 {
    0.7
}
fn default_dims() -> Vec<usize> {
    vec![2, 3, 4]
}
fn default_vocab() -> usize {
    3
}
fn default_seq_len() -> usize {
    2
}
fn default_dim() -> usize {
    4
}
fn default_model_seed() -> u64 {
    7
}
fn default_classifier_seed() -> u64 {
    11
}
fn default_classes() -> usize {
    2
}
fn default_scale() -> f64 {
    1.0
}
fn default_margin() -> f64 {
    2.0
}
fn default_center() -> BaseCenter {
    BaseCenter::TargetGradient
}
fn default_true() -> bool {
    true
}
fn default_mass_samples() -> u64 {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// A single `[sampler]` table or an array of `[[sampler]]` tables.
    #[serde(default, deserialize_with = "one_or_many", alias = "samplers")]
    pub sampler: Vec<SamplerConfig>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Explicit chain seeds; defaults to `0..n_seeds`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub n_seeds: Option<usize>,
    #[serde(default = "default_temperatures")]
    pub temperatures: Vec<f64>,
    /// Toy: one probability per cell of the square.
    #[serde(default = "default_probs")]
    pub probs: Vec<f64>,
    /// Hypercube: probability of cell 0, the rest shared equally.
    #[serde(default = "default_peak")]
    pub peak: f64,
    /// Hypercube dimensions `k`.
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
    #[serde(default = "default_vocab")]
    pub vocab: usize,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_model_seed")]
    pub model_seed: u64,
    #[serde(default = "default_classifier_seed")]
    pub classifier_seed: u64,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_scale")]
    pub classifier_scale: f64,
    #[serde(default)]
    pub control_target: usize,
    #[serde(default = "default_margin")]
    pub box_margin: f64,
    #[serde(default)]
    pub base_mode: BaseMode,
    #[serde(default = "default_center")]
    pub base_center: BaseCenter,
    #[serde(default = "default_true")]
    pub equal_mass_assumed: bool,
    #[serde(default = "default_mass_samples")]
    pub mass_samples: u64,
    #[serde(default)]
    pub mass_seed: u64,
    /// Verify: only properties whose name contains this string.
    #[serde(default)]
    pub filter: Option<String>,
}

/// Config problem, reported with the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Io(String),
    Sampler(Error),
    /// The verify experiment ran and at least one property failed.
    PropertiesFailed(usize),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => e.fmt(f),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
            RunError::Sampler(e) => e.fmt(f),
            RunError::PropertiesFailed(n) => write!(f, "{n} properties failed"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Sampler(e)
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Io(format!("{}: {e}", path.display()))
}

fn bad(field: impl Into<String>, msg: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("{}: {msg}", field.into()))
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the path ends in `.json` or the text starts with `{`.
    pub fn parse(text: &str, path: Option<&Path>) -> Result<Self, ConfigError> {
        let is_json = path.and_then(|p| p.extension()).is_some_and(|e| e == "json")
            || text.trim_start().starts_with('{');
        let config: Self = if is_json {
            serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| ConfigError(e.message().to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Ok(Self::parse(&text, Some(path))?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.experiment != ExperimentKind::Verify && self.sampler.is_empty() {
            return Err(bad("sampler", "at least one sampler is required"));
        }
        for (i, s) in self.sampler.iter().enumerate() {
            s.validate().map_err(|m| ConfigError(format!("sampler[{i}].{m}")))?;
        }
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return Err(bad("seeds", "must not be empty"));
            }
        }
        if self.n_seeds == Some(0) {
            return Err(bad("n_seeds", "must be >= 1"));
        }
        if self.temperatures.is_empty() {
            return Err(bad("temperatures", "must not be empty"));
        }
        if let Some(t) = self.temperatures.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
            return Err(bad("temperatures", format!("{t} is not a finite positive number")));
        }
        match self.experiment {
            ExperimentKind::Toy => {
                ToyProbs::Explicit(self.probs.clone())
                    .for_cells(4)
                    .map_err(|e| bad("probs", e))?;
                if (self.probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(bad("probs", "must sum to 1"));
                }
            }
            ExperimentKind::Hypercube => {
                if !(self.peak > 0.0 && self.peak < 1.0) {
                    return Err(bad("peak", "must lie in (0, 1)"));
                }
                if self.dims.is_empty() || self.dims.iter().any(|&k| !(2..=16).contains(&k)) {
                    return Err(bad("dims", "each k must lie in 2..=16"));
                }
            }
            ExperimentKind::Lm | ExperimentKind::Controlled => {
                if self.vocab < 2 {
                    return Err(bad("vocab", "must be >= 2"));
                }
                if self.seq_len == 0 {
                    return Err(bad("seq_len", "must be >= 1"));
                }
                if self.dim == 0 {
                    return Err(bad("dim", "must be >= 1"));
                }
                if crate::models::state_space(self.vocab, self.seq_len).is_err() {
                    return Err(bad("seq_len", "vocab^seq_len exceeds the enumeration limit"));
                }
                if !(self.box_margin > 0.0) || !self.box_margin.is_finite() {
                    return Err(bad("box_margin", "must be finite and > 0"));
                }
                if !self.equal_mass_assumed && self.mass_samples < 1000 {
                    return Err(bad("mass_samples", "must be >= 1000"));
                }
                if self.experiment == ExperimentKind::Controlled {
                    if self.classes < 2 {
                        return Err(bad("classes", "must be >= 2"));
                    }
                    if self.control_target >= self.classes {
                        return Err(bad("control_target", "must be < classes"));
                    }
                    if !(self.classifier_scale > 0.0) || !self.classifier_scale.is_finite() {
                        return Err(bad("classifier_scale", "must be finite and > 0"));
                    }
                }
            }
            ExperimentKind::Verify => {}
        }
        Ok(())
    }

    /// Chain seeds with `offset` added.
    pub fn chain_seeds(&self, offset: u64) -> Vec<u64> {
        let base: Vec<u64> = match (&self.seeds, self.n_seeds) {
            (Some(s), _) => s.clone(),
            (None, Some(n)) => (0..n as u64).collect(),
            (None, None) => vec![0],
        };
        base.into_iter().map(|s| s.wrapping_add(offset)).collect()
    }
}

/// Summary of a finished run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub report: Option<DivergenceReport>,
    pub properties: Vec<PropertyResult>,
}

#[derive(Serialize)]
struct Metadata<'a> {
    library: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    seed_offset: u64,
    wall_clock_seconds: f64,
    js_units: &'static str,
    mass_estimation: Option<String>,
}

fn chain_file_name(row: &crate::diagnostics::DivergenceRow) -> String {
    format!("{}_T{}_k{}_seed{}.jsonl", row.algorithm, row.temperature, row.k, row.seed)
}

fn write_chains(dir: &Path, results: &[ChainResult]) -> Result<(), RunError> {
    let chains = dir.join("chains");
    fs::create_dir_all(&chains).map_err(|e| io_err(&chains, e))?;
    for res in results {
        let path = chains.join(chain_file_name(&res.row));
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = BufWriter::new(file);
        for rec in &res.records {
            serde_json::to_writer(&mut w, rec).map_err(|e| io_err(&path, e))?;
            w.write_all(b"\n").map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

fn write_report(dir: &Path, report: &DivergenceReport) -> Result<(), RunError> {
    let path = dir.join("divergence.csv");
    let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    report.write_csv(BufWriter::new(file)).map_err(|e| io_err(&path, e))?;
    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
    for s in &report.summary {
        w.serialize(s).map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(())
}

fn sorted_samplers(config: &ExperimentConfig) -> Vec<SamplerConfig> {
    let mut s = config.sampler.clone();
    s.sort_by_key(|c| c.algorithm);
    s
}

struct SequenceRun {
    results: Vec<ChainResult>,
    masses: Vec<(String, String)>,
}

fn run_sequence(config: &ExperimentConfig, seeds: &[u64]) -> Result<SequenceRun, RunError> {
    let lm = TinyEmbedLM::seeded(config.model_seed, config.vocab, config.dim, config.seq_len)?;
    let bbox = BoundingBox::around(lm.table(), config.box_margin)?;
    let base = match config.base_mode {
        BaseMode::GaussianAtGradient => BaseMeasureSpec::gaussian(config.base_center, config.equal_mass_assumed),
        BaseMode::UniformLebesgue => BaseMeasureSpec::uniform(config.equal_mass_assumed),
    };
    let clf = if config.experiment == ExperimentKind::Controlled {
        Some(LinearAttributeClassifier::seeded(
            config.classifier_seed,
            config.classes,
            config.dim,
            config.classifier_scale,
        )?)
    } else {
        None
    };
    let samplers = sorted_samplers(config);
    // One target per (sampler, temperature): the control weight is a sampler setting.
    let mut specs = Vec::new();
    let mut masses = Vec::new();
    for (si, s) in samplers.iter().enumerate() {
        let control = match &clf {
            Some(c) => Some(Control::new(c.clone(), config.control_target, s.control_weight)?),
            None => None,
        };
        let exact = exact_distribution(&lm, control.as_ref())?;
        for &t in &config.temperatures {
            let mut spec = VoronoiMeasureSpec::sequence(lm.clone(), bbox.clone(), control.clone(), t, base)?;
            if !config.equal_mass_assumed {
                spec = spec.estimate_masses(config.mass_samples, config.mass_seed)?;
                masses.push((format!("{}_T{}", s.algorithm, t), spec.masses().to_json()));
            }
            let reference = anneal_probs(&exact.probs, t)?;
            specs.push((si, t, spec, reference));
        }
    }
    let mut jobs = Vec::new();
    for (si, t, spec, reference) in &specs {
        for &seed in seeds {
            jobs.push(ChainJob {
                spec,
                config: samplers[*si].clone(),
                reference,
                temperature: *t,
                k: config.seq_len,
                seed,
            });
        }
    }
    Ok(SequenceRun {
        results: run_jobs(&jobs)?,
        masses,
    })
}

/// Runs `config`, writing artifacts under `out_dir` (or the config's own `out_dir`).
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
    seed_offset: u64,
) -> Result<RunSummary, RunError> {
    config.validate()?;
    let start = Instant::now();
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let seeds = config.chain_seeds(seed_offset);

    let mut report = None;
    let mut properties = Vec::new();
    let mut mass_note = None;
    match config.experiment {
        ExperimentKind::Toy | ExperimentKind::Hypercube => {
            let (dims, probs) = if config.experiment == ExperimentKind::Toy {
                (vec![2], ToyProbs::Explicit(config.probs.clone()))
            } else {
                (config.dims.clone(), ToyProbs::Peaked(config.peak))
            };
            let grid = ToyGrid {
                samplers: config.sampler.clone(),
                temperatures: config.temperatures.clone(),
                dims,
                probs,
                seeds: seeds.clone(),
            };
            let specs = toy_specs(&grid)?;
            let results = run_jobs(&toy_jobs(&grid, &specs))?;
            write_chains(&dir, &results)?;
            let r = report_from_rows(results.into_iter().map(|r| r.row).collect());
            write_report(&dir, &r)?;
            report = Some(r);
        }
        ExperimentKind::Lm | ExperimentKind::Controlled => {
            let run = run_sequence(config, &seeds)?;
            write_chains(&dir, &run.results)?;
            if !run.masses.is_empty() {
                let joined: Vec<String> = run
                    .masses
                    .iter()
                    .map(|(k, v)| format!("\"{k}\": {v}"))
                    .collect();
                let path = dir.join("masses.json");
                fs::write(&path, format!("{{\n{}\n}}\n", joined.join(",\n"))).map_err(|e| io_err(&path, e))?;
                mass_note = Some(format!(
                    "Monte-Carlo cell masses, {} samples per position, seed {}",
                    config.mass_samples, config.mass_seed
                ));
            }
            let r = report_from_rows(run.results.into_iter().map(|r| r.row).collect());
            write_report(&dir, &r)?;
            report = Some(r);
        }
        ExperimentKind::Verify => {
            properties = run_properties(config.filter.as_deref());
            let path = dir.join("verify.json");
            let text = serde_json::to_string_pretty(&properties).map_err(|e| io_err(&path, e))?;
            fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
        }
    }

    let meta = Metadata {
        library: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config,
        seed_offset,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        js_units: "nats, bounded by ln 2",
        mass_estimation: mass_note,
    };
    let path = dir.join("metadata.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| io_err(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;

    let failed = properties.iter().filter(|p| !p.passed).count();
    let summary = RunSummary {
        out_dir: dir,
        report,
        properties,
    };
    if failed > 0 {
        return Err(RunError::PropertiesFailed(failed));
    }
    Ok(summary)
}
