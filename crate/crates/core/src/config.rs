//! TOML experiment configuration.
//!
//! ```toml
//! seed = 0
//! output_dir = "runs/example"      # optional, relative to the working directory
//!
//! [meta]
//! name = "example"
//! description = "free text"
//!
//! [data]                           # kind = sine_sum | custom_1d | mnist | csv
//! kind = "sine_sum"
//! dim = 5
//! n = 80
//! amplitude = 3.5
//! frequency = 5.0
//! phase = 1.0
//! domain = [-4.0, 2.0]
//!
//! [network]
//! hidden_widths = [50]
//! activations = ["tanh"]           # one name per hidden layer, or one for all
//! residual = false
//! alpha = 1.0
//! init_std = 0.005
//!
//! [optimizer]
//! kind = "adam"                    # or "gd"
//! lr = 1e-3
//!
//! [run]
//! max_epochs = 100
//! initial_stage = false
//! snapshot_epochs = [100]
//! replicates = 1
//!
//! [analysis]
//! layers = [1]
//! epochs = []                      # optional epoch per analyzed layer
//! min_norm = 0.0
//! cos_threshold = 0.95
//! ```
//!
//! Unknown keys anywhere are errors. Relative data paths resolve against
//! the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::activations::Activation;
use crate::condensation::DEFAULT_COS_THRESHOLD;
use crate::data_io::{self, seeded_rng, Sampling, SyntheticSpec, INIT_STREAM};
use crate::error::{Error, Result};
use crate::network::{init_params_with, Batch, NetworkConfig, NetworkParams};
use crate::training::{OptimizerSpec, StopRule};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSection {
    SineSum {
        dim: usize,
        n: usize,
        amplitude: f64,
        frequency: f64,
        #[serde(default = "one")]
        phase: f64,
        domain: [f64; 2],
    },
    #[serde(rename = "custom_1d")]
    Custom1d {
        n: usize,
        domain: [f64; 2],
        #[serde(default)]
        sampling: Sampling,
    },
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    #[serde(default)]
    pub residual: bool,
    #[serde(default = "one")]
    pub alpha: f64,
    pub init_std: f64,
}

fn default_replicates() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub max_epochs: usize,
    #[serde(default)]
    pub initial_stage: bool,
    #[serde(default)]
    pub snapshot_epochs: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
}

fn default_threshold() -> f64 {
    DEFAULT_COS_THRESHOLD
}

fn default_layers() -> Vec<usize> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_layers")]
    pub layers: Vec<usize>,
    /// Snapshot epoch to analyze for each entry of `layers`.
    #[serde(default)]
    pub epochs: Vec<usize>,
    #[serde(default)]
    pub min_norm: f64,
    #[serde(default = "default_threshold")]
    pub cos_threshold: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            layers: default_layers(),
            epochs: Vec::new(),
            min_norm: 0.0,
            cos_threshold: DEFAULT_COS_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub meta: Meta,
    pub data: DataSection,
    pub network: NetworkSection,
    pub optimizer: OptimizerSpec,
    pub run: RunSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    /// Directory that relative data paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let net = &self.network;
        if net.hidden_widths.is_empty() {
            return Err(Error::Config("network.hidden_widths is empty".into()));
        }
        if net.activations.len() != 1 && net.activations.len() != net.hidden_widths.len() {
            return Err(Error::Config(format!(
                "{} activations for {} hidden layers",
                net.activations.len(),
                net.hidden_widths.len()
            )));
        }
        if !(net.init_std >= 0.0 && net.init_std.is_finite()) {
            return Err(Error::Config(format!("init_std {} must be finite and >= 0", net.init_std)));
        }
        self.optimizer
            .validate()
            .map_err(|e| Error::Config(format!("optimizer: {e}")))?;
        if self.run.replicates == 0 {
            return Err(Error::Config("run.replicates must be >= 1".into()));
        }
        if let Some(&e) = self.run.snapshot_epochs.iter().find(|&&e| e > self.run.max_epochs) {
            return Err(Error::Config(format!("snapshot epoch {e} beyond max_epochs")));
        }
        let a = &self.analysis;
        if let Some(&l) = a.layers.iter().find(|&&l| l == 0 || l > net.hidden_widths.len()) {
            return Err(Error::Config(format!("analysis layer {l} out of range")));
        }
        if !a.epochs.is_empty() && a.epochs.len() != a.layers.len() {
            return Err(Error::Config("analysis.epochs must match analysis.layers".into()));
        }
        if !(a.cos_threshold > 0.0 && a.cos_threshold < 1.0) {
            return Err(Error::Config(format!("cos_threshold {} outside (0, 1)", a.cos_threshold)));
        }
        if !(a.min_norm >= 0.0) {
            return Err(Error::Config(format!("min_norm {} is negative", a.min_norm)));
        }
        if let Some(spec) = self.synthetic_spec() {
            spec.validate()?;
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        match &self.data {
            DataSection::SineSum { dim, n, amplitude, frequency, phase, domain } => Some(SyntheticSpec {
                phase: *phase,
                ..SyntheticSpec::sine_sum(*dim, *n, *amplitude, *frequency, *domain, self.seed)
            }),
            DataSection::Custom1d { n, domain, sampling } => {
                Some(SyntheticSpec::custom_1d(*n, *domain, *sampling, self.seed))
            }
            _ => None,
        }
    }

    /// Generates or loads the training set. Missing files are config errors.
    pub fn batch(&self) -> Result<Batch> {
        if let Some(spec) = self.synthetic_spec() {
            return spec.sample();
        }
        let missing = |p: &Path| Error::Config(format!("data file {} does not exist", p.display()));
        match &self.data {
            DataSection::Mnist { images, labels, limit } => {
                let (i, l) = (self.resolve(images), self.resolve(labels));
                for p in [&i, &l] {
                    if !p.is_file() {
                        return Err(missing(p));
                    }
                }
                data_io::load_mnist_idx_limited(&i, &l, *limit)
            }
            DataSection::Csv { path } => {
                let p = self.resolve(path);
                if !p.is_file() {
                    return Err(missing(&p));
                }
                data_io::read_dataset_csv(&p)
            }
            _ => unreachable!("synthetic data handled above"),
        }
    }

    pub fn network_config(&self, batch: &Batch) -> Result<NetworkConfig> {
        let net = &self.network;
        let acts = if net.activations.len() == 1 {
            vec![net.activations[0]; net.hidden_widths.len()]
        } else {
            net.activations.clone()
        };
        NetworkConfig::new(batch.input_dim(), net.hidden_widths.clone(), batch.output_dim(), acts)?
            .with_residual(net.residual)?
            .with_alpha(net.alpha)
    }

    pub fn init_params(&self, config: &NetworkConfig) -> Result<NetworkParams> {
        init_params_with(config, &mut seeded_rng(self.seed, INIT_STREAM), self.network.init_std)
    }

    pub fn stop_rule(&self) -> StopRule {
        StopRule {
            max_epochs: self.run.max_epochs,
            initial_stage: self.run.initial_stage,
            snapshot_epochs: self.run.snapshot_epochs.clone(),
        }
    }

    /// Copy with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        ExperimentConfig { seed, ..self.clone() }
    }

    /// Epoch at which `layers[i]` should be analyzed, if configured.
    pub fn analysis_epoch_for(&self, i: usize) -> Option<usize> {
        self.analysis.epochs.get(i).copied()
    }
}
