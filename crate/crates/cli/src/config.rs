use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Args;
use serde::{Deserialize, Serialize};
use taxcode_core::dataset::SynthConfig;
use taxcode_core::io::write_json_file;
use taxcode_core::PipelineConfig;

use crate::error::{core, CliError};

/// Everything a run can be configured with. Missing keys take their
/// defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    pub synth: SynthConfig,
    pub paths: Paths,
}

/// Optional input and output locations; command-line paths take priority.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub taxonomy: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Flags that override config-file values.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Global seed; every component seed is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    /// Experts per level.
    #[arg(long, global = true)]
    pub experts: Option<usize>,
    #[arg(long, global = true)]
    pub hidden_dim: Option<usize>,
    /// Number of level heads; must cover the taxonomy depth.
    #[arg(long, global = true)]
    pub levels: Option<usize>,
    #[arg(long, global = true)]
    pub omega_c: Option<f64>,
    #[arg(long, global = true)]
    pub omega_s: Option<f64>,
    /// Minimum confidence for a leaf-confident prediction.
    #[arg(long, global = true)]
    pub tau_leaf: Option<f64>,
    #[arg(long, global = true)]
    pub confidence_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub high_conf_fraction: Option<f64>,
    /// Count categories absent from both predictions and truth as zeros in
    /// macro averages.
    #[arg(long, global = true)]
    pub include_absent: bool,
    /// Number of generated records.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Number of generated leaves.
    #[arg(long, global = true)]
    pub leaves: Option<usize>,
}

impl Overrides {
    /// Applies every given flag and returns the keys it touched.
    pub fn apply(&self, c: &mut RunConfig) -> Vec<&'static str> {
        let mut touched = Vec::new();
        macro_rules! set {
            ($flag:expr, $key:literal, $($target:tt)+) => {
                if let Some(v) = $flag {
                    $($target)+ = v;
                    touched.push($key);
                }
            };
        }
        set!(self.seed, "seed", c.pipeline.seed);
        set!(self.epochs, "train.epochs", c.pipeline.train.epochs);
        set!(self.batch_size, "train.batch_size", c.pipeline.train.batch_size);
        set!(self.learning_rate, "train.learning_rate", c.pipeline.train.learning_rate);
        set!(self.experts, "moe.experts_per_level", c.pipeline.moe.experts_per_level);
        set!(self.hidden_dim, "moe.expert_hidden_dim", c.pipeline.moe.expert_hidden_dim);
        set!(self.levels, "moe.levels", c.pipeline.moe.levels);
        set!(self.omega_c, "train.loss_weights.omega_c", c.pipeline.train.loss_weights.omega_c);
        set!(self.omega_s, "train.loss_weights.omega_s", c.pipeline.train.loss_weights.omega_s);
        set!(self.tau_leaf, "tau_leaf", c.pipeline.tau_leaf);
        set!(self.confidence_threshold, "confidence_threshold", c.pipeline.confidence_threshold);
        set!(self.high_conf_fraction, "high_conf_fraction", c.pipeline.high_conf_fraction);
        set!(self.samples, "synth.samples", c.synth.samples);
        set!(self.leaves, "synth.leaves", c.synth.leaves);
        if self.include_absent {
            c.pipeline.include_absent_categories = true;
            touched.push("include_absent_categories");
        }
        touched
    }
}

/// A config resolved with precedence flag > file > default.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub file: Option<PathBuf>,
    pub overridden: Vec<&'static str>,
}

impl Resolved {
    pub fn load(file: Option<&Path>, overrides: &Overrides) -> Result<Resolved, CliError> {
        let mut config = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Parse { path: path.to_path_buf(), source: Box::new(e) })?
            }
            None => RunConfig::default(),
        };
        let overridden = overrides.apply(&mut config);
        config.pipeline = config.pipeline.with_global_seed();
        config.pipeline.validate().map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        Ok(Resolved { config, file: file.map(Path::to_path_buf), overridden })
    }

    pub fn seed(&self) -> u64 {
        self.config.pipeline.seed
    }

    pub fn pipeline(&self) -> &PipelineConfig {
        &self.config.pipeline
    }
}

fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Per-run record of what was executed. The only file that carries
/// timestamps.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub seed: u64,
    pub config_file: Option<PathBuf>,
    /// Config keys set by command-line flags.
    pub overridden: Vec<&'static str>,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn start(command: &str, resolved: &Resolved) -> Manifest {
        Manifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            started_unix_ms: unix_ms(),
            finished_unix_ms: 0,
            seed: resolved.seed(),
            config_file: resolved.file.clone(),
            overridden: resolved.overridden.clone(),
            config: resolved.config.clone(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.to_string(), path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn write(mut self, path: &Path) -> Result<(), CliError> {
        self.finished_unix_ms = unix_ms();
        write_json_file(path, &self).map_err(core)
    }
}
