use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use cyclelife::baseline::{FeatureCycles, TargetTransform};
use cyclelife::dataset::SynthRanges;
use cyclelife::eval::ExperimentConfig;
use cyclelife::nn::{Architecture, DropoutConfig, DropoutReading};
use cyclelife::optim::{AdamHyper, TrainConfig};

/// Dropout as written in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DropoutSettings {
    pub value: f64,
    pub reading: DropoutReading,
    pub after_lstm1: bool,
    pub after_lstm2: bool,
    pub after_dense1: bool,
}

impl Default for DropoutSettings {
    fn default() -> Self {
        let d = DropoutConfig::default();
        Self {
            value: d.rate,
            reading: DropoutReading::DropRate,
            after_lstm1: d.after_lstm1,
            after_lstm2: d.after_lstm2,
            after_dense1: d.after_dense1,
        }
    }
}

impl DropoutSettings {
    pub fn resolve(&self) -> DropoutConfig {
        DropoutConfig {
            after_lstm1: self.after_lstm1,
            after_lstm2: self.after_lstm2,
            after_dense1: self.after_dense1,
            ..DropoutConfig::from_reading(self.value, self.reading)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSettings {
    pub from: u32,
    pub to: u32,
    pub step: u32,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self { from: 40, to: 100, step: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSettings {
    pub count: usize,
    pub ranges: SynthRanges,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self { count: 124, ranges: SynthRanges::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct BaselineSettings {
    pub transform: TargetTransform,
    pub cycles: FeatureCycles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckSettings {
    pub input_size: usize,
    pub lstm1: usize,
    pub lstm2: usize,
    pub dense: usize,
    pub steps: usize,
    pub eps: f64,
    pub tolerance: f64,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self { input_size: 5, lstm1: 4, lstm2: 6, dense: 32, steps: 3, eps: 1e-5, tolerance: 1e-4 }
    }
}

/// Everything a command can be configured with. Loaded from a JSON file;
/// command-line flags override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub model: Option<PathBuf>,
    pub architecture: Architecture,
    pub dropout: DropoutSettings,
    pub train: TrainConfig,
    pub adam: AdamHyper,
    pub k: usize,
    pub sweep: SweepSettings,
    pub synth: SynthSettings,
    pub baseline: BaselineSettings,
    pub gradcheck: GradcheckSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: None,
            out: PathBuf::from("out"),
            model: None,
            architecture: Architecture::default(),
            dropout: DropoutSettings::default(),
            train: TrainConfig::default(),
            adam: AdamHyper::default(),
            k: 10,
            sweep: SweepSettings::default(),
            synth: SynthSettings::default(),
            baseline: BaselineSettings::default(),
            gradcheck: GradcheckSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            architecture: self.architecture,
            dropout: self.dropout.resolve(),
            train: TrainConfig { seed: self.seed, ..self.train.clone() },
            adam: self.adam,
            k: self.k,
            base_seed: self.seed,
        }
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data.as_deref().context("no dataset manifest given (use --data or set `data` in the config)")
    }

    /// One-line JSON echo written as the first comment line of every CSV.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
